#include "promolab/evoprompt.h"

#include <algorithm>
#include <fstream>
#include <set>

#include "promolab/common.h"

namespace promolab {

nlohmann::json PromptCandidate::to_json() const {
  nlohmann::json j{{"id", id}, {"gen", generation}, {"text", text}, {"parents", parents}, {"op", op},
                   {"seed", seed}};
  j["score"] = score ? nlohmann::json(*score) : nlohmann::json(nullptr);
  return j;
}

bool ranks_before(const PromptCandidate& a, const PromptCandidate& b) {
  if (a.score.has_value() != b.score.has_value()) return a.score.has_value();
  if (a.score && *a.score != *b.score) return *a.score > *b.score;
  if (a.generation != b.generation) return a.generation < b.generation;
  return a.text < b.text;
}

std::size_t Population::elite_index() const {
  if (members.empty()) throw ConfigError("empty population has no elite");
  std::size_t best = 0;
  for (std::size_t i = 0; i < members.size(); ++i) {
    if (!members[i].score) throw ConfigError("population has unscored members");
    if (ranks_before(members[i], members[best])) best = i;
  }
  return best;
}

void EvolutionConfig::validate() const {
  if (population_size < 3) throw ConfigError("population size K must be >= 3");
  if (n_mutations < 1 || n_mutations > population_size - 1) throw ConfigError("kappa must be in [1, K-1]");
  if (max_generations < 1) throw ConfigError("T must be >= 1");
  if (metric_k < 1) throw ConfigError("metric K must be >= 1");
}

PromptEvaluator::PromptEvaluator(std::shared_ptr<const FittedStats> stats, std::vector<LabeledExample> demos,
                                 const TextEmbedder& embedder, RecommenderParams params, std::size_t k)
    : stats_(std::move(stats)), demos_(std::move(demos)), embedder_(embedder), params_(params), k_(k) {
  if (demos_.empty()) throw ConfigError("prompt scoring requires demos");
  if (k_ == 0) throw ConfigError("metric K must be >= 1");
  features_.reserve(demos_.size());
  labels_.reserve(demos_.size());
  for (const auto& d : demos_) {
    features_.push_back(compute_features(*stats_, d.input, params_));
    auto idx = stats_->catalog().find(d.label);
    labels_.push_back(idx ? static_cast<std::uint32_t>(*idx) : UINT32_MAX);
  }
}

double PromptEvaluator::score_weights(const FeatureWeights& weights) const {
  PromptConditionedScorer scorer(stats_, weights, params_);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < features_.size(); ++i) {
    if (labels_[i] == UINT32_MAX) continue;
    const auto top = scorer.rank_indices(features_[i], k_);
    if (std::find(top.begin(), top.end(), labels_[i]) != top.end()) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(features_.size());
}

double PromptEvaluator::score(const std::string& prompt) const {
  return score_weights(prompt_weights(prompt, embedder_, params_));
}

std::vector<std::string> render_demos(const std::vector<LabeledExample>& demos, const Catalog& catalog,
                                      std::size_t limit) {
  std::vector<std::string> out;
  for (const auto& d : demos) {
    if (out.size() >= limit) break;
    std::string text = "History: ";
    for (std::size_t i = 0; i < d.input.size(); ++i) {
      if (i) text += "; ";
      text += catalog.title_of(d.input[i]);
    }
    text += ". Next: " + catalog.title_of(d.label) + ".";
    out.push_back(std::move(text));
  }
  return out;
}

Population lamarckian_init(Gateway& gateway, const std::vector<std::string>& demo_texts, std::size_t k,
                           std::uint64_t seed, double temperature) {
  if (k < 3) throw ConfigError("population size K must be >= 3");
  if (demo_texts.empty()) throw ConfigError("lamarckian initialization requires demos");
  std::vector<std::string> texts;
  std::set<std::string> seen;
  for (std::size_t attempt = 0; attempt <= 3 && texts.size() < k; ++attempt) {
    TextOperatorRequest req;
    req.kind = OperatorKind::lamarckian;
    req.inputs = demo_texts;
    req.seed = seed + attempt;
    req.temperature = temperature;
    req.count = k;
    for (auto& t : gateway.invoke(req)) {
      if (texts.size() < k && seen.insert(t).second) texts.push_back(std::move(t));
    }
  }
  for (std::size_t n = 2; texts.size() < k; ++n) {
    std::string t = texts.front() + " (" + std::to_string(n) + ")";
    if (seen.insert(t).second) texts.push_back(std::move(t));
  }
  Population pop;
  for (std::size_t i = 0; i < k; ++i) {
    PromptCandidate c;
    c.id = i;
    c.text = std::move(texts[i]);
    c.op = "lamarckian";
    c.seed = seed;
    pop.members.push_back(std::move(c));
  }
  return pop;
}

void score_population(Population& population, const PromptEvaluator& evaluator) {
  for (auto& m : population.members) {
    if (!m.score) m.score = evaluator.score(m.text);
  }
}

std::vector<PromptCandidate> crossover(Gateway& gateway, const PromptCandidate& a, const PromptCandidate& b,
                                       std::uint64_t seed, double temperature) {
  auto run = [&](std::uint64_t s) {
    TextOperatorRequest req;
    req.kind = OperatorKind::crossover;
    req.inputs = {a.text, b.text};
    req.seed = s;
    req.temperature = temperature;
    req.count = 2;
    return gateway.invoke(req);
  };
  std::uint64_t used = seed;
  auto texts = run(used);
  auto repeats_parent = [&](const std::vector<std::string>& ts) {
    return std::any_of(ts.begin(), ts.end(), [&](const auto& t) { return t == a.text || t == b.text; });
  };
  if (a.text != b.text && repeats_parent(texts)) {
    used = splitmix64(seed);
    texts = run(used);
  }
  std::vector<PromptCandidate> out;
  for (auto& t : texts) {
    PromptCandidate c;
    c.text = std::move(t);
    c.parents = {a.id, b.id};
    c.op = "crossover";
    c.seed = used;
    out.push_back(std::move(c));
  }
  return out;
}

std::vector<PromptCandidate> mutate(Gateway& gateway, const std::vector<PromptCandidate>& top, std::size_t kappa,
                                    std::uint64_t seed, double temperature) {
  if (kappa > top.size()) {
    throw ConfigError("kappa (" + std::to_string(kappa) + ") exceeds top set size " + std::to_string(top.size()));
  }
  std::vector<PromptCandidate> out;
  for (std::size_t i = 0; i < kappa; ++i) {
    TextOperatorRequest req;
    req.kind = OperatorKind::mutation;
    req.inputs = {top[i].text};
    req.seed = derive_seed(seed, i);
    req.temperature = temperature;
    auto texts = gateway.invoke(req);
    PromptCandidate c;
    c.text = std::move(texts.front());
    c.parents = {top[i].id};
    c.op = "mutation";
    c.seed = req.seed;
    out.push_back(std::move(c));
  }
  return out;
}

Population assemble_generation(const PromptCandidate& elite, std::vector<PromptCandidate> children,
                               std::vector<PromptCandidate> mutants, std::size_t generation) {
  if (!elite.score) throw ConfigError("elite must be scored");
  Population pop;
  pop.generation = generation;
  pop.members.push_back(elite);
  for (auto* group : {&children, &mutants}) {
    for (auto& c : *group) {
      c.score.reset();
      c.generation = generation;
      pop.members.push_back(std::move(c));
    }
  }
  return pop;
}

std::vector<PromptCandidate> top_set(const Population& population, std::size_t kappa) {
  std::vector<PromptCandidate> sorted = population.members;
  std::sort(sorted.begin(), sorted.end(), ranks_before);
  const std::size_t half = (sorted.size() + 1) / 2;
  sorted.resize(std::min(sorted.size(), std::max(half, kappa)));
  return sorted;
}

EvolutionResult evolve(Gateway& gateway, const PromptEvaluator& evaluator,
                       const std::vector<std::string>& demo_texts, const EvolutionConfig& config) {
  config.validate();
  EvolutionResult result;
  Population pop = lamarckian_init(gateway, demo_texts, config.population_size, derive_seed(config.seed, 0, 0),
                                   config.temperature);
  std::size_t next_id = pop.members.size();
  score_population(pop, evaluator);
  result.trace.insert(result.trace.end(), pop.members.begin(), pop.members.end());
  PromptCandidate elite = pop.elite();
  result.elite_scores.push_back(*elite.score);

  std::size_t t = 1;
  for (; t < config.max_generations; ++t) {
    const auto top = top_set(pop, config.n_mutations);
    auto children = crossover(gateway, top[0], top[1], derive_seed(config.seed, t, 1), config.temperature);
    auto mutants = mutate(gateway, top, config.n_mutations, derive_seed(config.seed, t, 2), config.temperature);
    pop = assemble_generation(elite, std::move(children), std::move(mutants), t);
    for (std::size_t i = 1; i < pop.members.size(); ++i) pop.members[i].id = next_id++;
    score_population(pop, evaluator);
    result.trace.insert(result.trace.end(), pop.members.begin() + 1, pop.members.end());

    const double previous = *elite.score;
    for (const auto& m : pop.members) {
      if (*m.score > *elite.score) elite = m;
    }
    result.elite_scores.push_back(*elite.score);
    if (*elite.score <= previous) {
      ++t;
      break;
    }
  }
  result.generations = t;
  result.best = elite;
  return result;
}

void write_trace(const std::filesystem::path& path, const std::vector<PromptCandidate>& trace) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot open " + path.string());
  for (const auto& c : trace) out << c.to_json().dump() << '\n';
}

}  // namespace promolab
