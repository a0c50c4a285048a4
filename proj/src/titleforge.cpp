#include "promolab/titleforge.h"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>

namespace promolab {

RecommendationFrequency recommendation_frequency(const PromptConditionedScorer& scorer,
                                                 const std::vector<std::vector<std::string>>& probes,
                                                 std::size_t k_probe) {
  if (probes.empty()) throw ConfigError("easy-set construction requires probe sequences");
  RecommendationFrequency freq;
  const auto& stats = scorer.stats();
  std::vector<std::size_t> counts(stats.size(), 0);
  for (const auto& probe : probes) {
    for (auto j : scorer.rank_indices(compute_features(stats, probe, scorer.params()), k_probe)) ++counts[j];
  }
  for (std::size_t j = 0; j < counts.size(); ++j) {
    if (counts[j]) freq[stats.catalog().at(j).item_id] = counts[j];
  }
  return freq;
}

std::vector<std::string> build_easy_set(const RecommendationFrequency& frequency, std::size_t gamma,
                                        const std::vector<std::string>& popular) {
  if (gamma < 1) throw ConfigError("gamma must be >= 1");
  const std::set<std::string> pop(popular.begin(), popular.end());
  std::vector<std::string> out;
  for (const auto& [id, count] : frequency) {
    if (count >= gamma && !pop.count(id)) out.push_back(id);
  }
  return out;
}

std::size_t frequency_threshold(const RecommendationFrequency& frequency, double percentile) {
  std::vector<std::size_t> values;
  for (const auto& [id, count] : frequency) {
    if (count) values.push_back(count);
  }
  if (values.empty()) return 1;
  std::sort(values.begin(), values.end());
  const std::size_t rank = std::max<std::size_t>(1, ceil_fraction(percentile, values.size()));
  return std::max<std::size_t>(1, values[rank - 1]);
}

std::vector<std::string> AnchorSets::titles(const Catalog& catalog) const {
  std::vector<std::string> out;
  for (const auto* group : {&popular, &easy}) {
    for (const auto& id : *group) out.push_back(catalog.title_of(id));
  }
  return out;
}

AnchorSets build_anchor_sets(const PromptConditionedScorer& surrogate,
                             const std::vector<std::vector<std::string>>& probes, const PopularityTable& popularity,
                             const AnchorConfig& config) {
  AnchorSets sets;
  sets.popular = top_fraction(popularity, config.popular_fraction);
  sets.frequency = recommendation_frequency(surrogate, probes, config.k_probe);
  sets.gamma = config.gamma ? *config.gamma : frequency_threshold(sets.frequency, config.gamma_percentile);
  sets.easy = build_easy_set(sets.frequency, sets.gamma, sets.popular);
  return sets;
}

std::vector<std::string> extract_patterns(Gateway& gateway, const std::vector<std::string>& anchor_titles,
                                          std::size_t top_p, const std::vector<std::string>& excluded) {
  if (anchor_titles.empty()) throw ConfigError("pattern extraction requires at least one anchor title");
  TextOperatorRequest req;
  req.kind = OperatorKind::extract_patterns;
  req.inputs = anchor_titles;
  req.count = top_p;
  req.core_tokens = excluded;
  return gateway.invoke(req);
}

GateResult gate(const std::string& original, const std::string& candidate, const TextEmbedder& embedder,
                double theta_sem, double theta_lex) {
  GateResult g;
  g.sem = cosine(embedder.embed(original), embedder.embed(candidate));
  g.lex = lexical_sim(original, candidate);
  g.accepted = g.sem >= theta_sem && g.lex >= theta_lex;
  return g;
}

std::vector<std::string> core_tokens(const std::string& title) {
  const auto toks = token_list(title);
  if (toks.empty()) return {};
  std::vector<std::string> out{toks.front()};
  for (auto it = toks.rbegin(); it != toks.rend(); ++it) {
    const bool alpha = std::all_of(it->begin(), it->end(), [](unsigned char c) { return std::isalpha(c); });
    if (alpha && it->size() >= 3) {
      if (*it != out.front()) out.push_back(*it);
      break;
    }
  }
  return out;
}

void RefinementConfig::validate() const {
  auto in_unit = [](double x) { return x >= 0.0 && x <= 1.0; };
  if (!in_unit(theta_sem) || !in_unit(theta_lex)) throw ConfigError("similarity thresholds must be in [0, 1]");
  if (max_iters < 1) throw ConfigError("max_iters must be >= 1");
  if (n_candidates < 1) throw ConfigError("candidates per iteration must be >= 1");
}

nlohmann::json RefinementResult::to_json() const {
  nlohmann::json audit_json = nlohmann::json::array();
  for (const auto& a : audit) {
    audit_json.push_back(
        {{"text", a.text}, {"sim_sem", a.sem}, {"sim_lex", a.lex}, {"iteration", a.iteration}, {"accepted", a.accepted}});
  }
  return {{"item_id", item_id},       {"original", original},     {"title", title},
          {"fallback", fallback},     {"iterations", iterations}, {"core_tokens", core_tokens},
          {"audit", audit_json}};
}

RefinementResult refine(Gateway& gateway, const std::string& item_id, const std::string& title,
                        const std::vector<std::string>& patterns, const TextEmbedder& embedder,
                        const RefinementConfig& config, std::uint64_t seed,
                        const std::optional<std::vector<std::string>>& core_override) {
  config.validate();
  RefinementResult r;
  r.item_id = item_id;
  r.original = title;
  r.core_tokens = core_override ? *core_override : core_tokens(title);
  for (std::size_t it = 1; it <= config.max_iters; ++it) {
    TextOperatorRequest req;
    req.kind = OperatorKind::rewrite_title;
    req.inputs = {title};
    req.seed = derive_seed(seed, it);
    req.temperature = config.temperature;
    req.count = config.n_candidates;
    req.core_tokens = r.core_tokens;
    req.patterns = patterns;
    std::vector<std::string> candidates;
    try {
      candidates = gateway.invoke(req);
    } catch (const Error& e) {
      throw RefinementError("title refinement for '" + item_id + "' failed: " + e.what(), r);
    }
    r.iterations = it;
    for (const auto& c : candidates) {
      const GateResult g = gate(title, c, embedder, config.theta_sem, config.theta_lex);
      r.audit.push_back({c, g.sem, g.lex, it, g.accepted});
      if (g.accepted) {
        r.title = c;
        return r;
      }
    }
  }
  // Fallback: best mean similarity, earliest on ties.
  const AuditEntry* best = nullptr;
  for (const auto& a : r.audit) {
    if (!best || (a.sem + a.lex) / 2.0 > (best->sem + best->lex) / 2.0) best = &a;
  }
  r.title = best ? best->text : title;
  r.fallback = true;
  return r;
}

std::map<std::string, std::string> TitleForgeOutput::overlay() const {
  std::map<std::string, std::string> out;
  for (const auto& r : results) {
    if (r.title != r.original) out[r.item_id] = r.title;
  }
  return out;
}

TitleForgeOutput forge_titles(Gateway& gateway, const PromptConditionedScorer& surrogate,
                              const std::vector<std::vector<std::string>>& probes,
                              const PopularityTable& popularity, const std::vector<std::string>& targets,
                              const TextEmbedder& embedder, const AnchorConfig& anchor_config,
                              const RefinementConfig& refinement, std::uint64_t seed) {
  TitleForgeOutput out;
  const Catalog& catalog = surrogate.stats().catalog();
  out.anchors = build_anchor_sets(surrogate, probes, popularity, anchor_config);
  const auto anchor_titles = out.anchors.titles(catalog);
  if (anchor_titles.empty()) throw ConfigError("anchor sets are empty");
  out.patterns = extract_patterns(gateway, anchor_titles, refinement.top_p);
  for (std::size_t i = 0; i < targets.size(); ++i) {
    out.results.push_back(refine(gateway, targets[i], catalog.title_of(targets[i]), out.patterns, embedder,
                                 refinement, derive_seed(seed, i)));
  }
  return out;
}

void write_title_outputs(const std::filesystem::path& dir, const TitleForgeOutput& output) {
  std::filesystem::create_directories(dir / "audit");
  std::vector<Item> changed;
  for (const auto& [id, title] : output.overlay()) changed.push_back({id, title});
  write_catalog_items(dir / "catalog.overlay.jsonl", changed);
  for (const auto& r : output.results) {
    std::ofstream f(dir / "audit" / (r.item_id + ".json"));
    if (!f) throw ConfigError("cannot write audit for " + r.item_id);
    f << r.to_json().dump(2) << '\n';
  }
  std::ofstream a(dir / "anchors.json");
  a << nlohmann::json{{"popular", output.anchors.popular},
                      {"easy", output.anchors.easy},
                      {"gamma", output.anchors.gamma},
                      {"patterns", output.patterns}}
           .dump(2)
    << '\n';
}

}  // namespace promolab
