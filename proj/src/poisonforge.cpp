#include "promolab/poisonforge.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include "promolab/common.h"

namespace promolab {

void PoisonConfig::validate() const {
  if (!(budget >= 0.0 && budget <= 0.1)) throw ConfigError("poison budget must be in [0, 0.1]");
  if (top_j < 1) throw ConfigError("J must be >= 1");
  if (targets.empty()) throw ConfigError("poisoning requires at least one target");
}

std::size_t default_poison_length(const Dataset& dataset) {
  return std::max<std::size_t>(2, static_cast<std::size_t>(std::lround(dataset.mean_length())));
}

std::size_t fake_user_count(double budget, std::size_t n_users) { return ceil_fraction(budget, n_users); }

std::vector<std::string> candidate_pool(std::span<const std::string> prefix, const PromptConditionedScorer& surrogate,
                                        std::size_t top_j, const std::vector<std::string>& targets,
                                        const std::vector<std::string>& popular) {
  if (top_j == 0) throw ConfigError("J must be >= 1");
  if (prefix.empty()) throw ConfigError("candidate pool requires a non-empty prefix");
  if (surrogate.stats().size() == 0) throw ConfigError("candidate pool requires a non-empty catalog");
  const std::set<std::string, std::less<>> in_prefix(prefix.begin(), prefix.end());
  const std::set<std::string, std::less<>> target_set(targets.begin(), targets.end());
  std::vector<std::string> pool;
  std::set<std::string, std::less<>> added;
  auto add = [&](const std::string& id, bool keep_seen) {
    if (!keep_seen && in_prefix.count(id)) return;
    if (added.insert(id).second) pool.push_back(id);
  };
  for (const auto& id : surrogate.recommend(prefix, top_j).items) add(id, target_set.count(id) > 0);
  for (const auto& id : targets) add(id, true);
  for (const auto& id : popular) add(id, target_set.count(id) > 0);
  return pool;
}

double beh_sim(std::span<const std::string> prefix, const std::string& candidate, const Embedding& e_avg,
               const Catalog& catalog, const TitleEmbeddings& titles) {
  if (!catalog.contains(candidate)) throw ConfigError("unknown candidate item '" + candidate + "'");
  std::vector<std::string> seq(prefix.begin(), prefix.end());
  seq.push_back(candidate);
  return cosine(sequence_embedding(seq, catalog, titles), e_avg);
}

std::string next_item(std::span<const std::string> prefix, const std::vector<std::string>& pool,
                      const Embedding& e_avg, const Catalog& catalog, const TitleEmbeddings& titles,
                      const std::vector<std::string>& targets, PoisonStep* step) {
  if (pool.empty()) throw ConfigError("next_item requires a non-empty pool");
  const std::set<std::string> target_set(targets.begin(), targets.end());
  std::vector<double> scores;
  scores.reserve(pool.size());
  std::size_t best = 0;
  for (std::size_t i = 0; i < pool.size(); ++i) {
    scores.push_back(beh_sim(prefix, pool[i], e_avg, catalog, titles));
    if (i == 0) continue;
    const bool ti = target_set.count(pool[i]) > 0, tb = target_set.count(pool[best]) > 0;
    if (scores[i] > scores[best] || (scores[i] == scores[best] && (ti != tb ? ti : pool[i] < pool[best]))) best = i;
  }
  if (step) {
    step->pool = pool;
    step->scores = scores;
    step->chosen = pool[best];
  }
  return pool[best];
}

nlohmann::json PoisonSequence::log_json() const {
  nlohmann::json steps_json = nlohmann::json::array();
  for (const auto& s : steps) steps_json.push_back({{"pool", s.pool}, {"scores", s.scores}, {"chosen", s.chosen}});
  return {{"user_id", user_id}, {"items", items}, {"forced", forced}, {"steps", steps_json}};
}

PoisonSequence generate_sequence(const PoisonConfig& config, const PoisonContext& ctx, std::size_t length,
                                 std::uint64_t seed, std::size_t round_robin) {
  config.validate();
  if (length < 2) throw ConfigError("poison sequence length must be >= 2");
  if (config.popular.empty()) throw ConfigError("poisoning requires a non-empty popular set");
  const std::set<std::string> target_set(config.targets.begin(), config.targets.end());
  Rng rng(seed);
  PoisonSequence seq;
  seq.items.push_back(config.popular[rng.index(config.popular.size())]);
  bool has_target = target_set.count(seq.items.front()) > 0;
  while (seq.items.size() < length) {
    PoisonStep step;
    const auto pool = candidate_pool(seq.items, ctx.surrogate, config.top_j, config.targets, config.popular);
    std::string chosen = next_item(seq.items, pool, ctx.e_avg, ctx.catalog, ctx.titles, config.targets, &step);
    if (config.guarantee_target && !has_target && seq.items.size() == length - 1 && !target_set.count(chosen)) {
      chosen = config.targets[round_robin % config.targets.size()];
      step.chosen = chosen;
      seq.forced = true;
    }
    has_target = has_target || target_set.count(chosen) > 0;
    seq.items.push_back(chosen);
    seq.steps.push_back(std::move(step));
  }
  return seq;
}

Dataset PoisonDataset::to_dataset(std::shared_ptr<const Catalog> catalog) const {
  std::vector<InteractionSequence> seqs;
  for (const auto& s : sequences) seqs.push_back({s.user_id, s.items});
  return Dataset(std::move(catalog), std::move(seqs), DatasetRole::poison);
}

namespace {

std::string fake_id(std::size_t i) { return std::string(kFakeUserPrefix) + std::to_string(i); }

}  // namespace

PoisonDataset generate_dataset(const PoisonConfig& config, const PoisonContext& ctx, std::size_t n_real_users,
                               std::size_t length) {
  config.validate();
  PoisonDataset out;
  const std::size_t n = fake_user_count(config.budget, n_real_users);
  for (std::size_t i = 0; i < n; ++i) {
    auto seq = generate_sequence(config, ctx, length, derive_seed(config.seed, i), i);
    seq.user_id = fake_id(i);
    out.sequences.push_back(std::move(seq));
  }
  return out;
}

namespace {

PoisonDataset baseline_attack(const PoisonConfig& config, std::size_t n_real_users, std::size_t length,
                              const std::vector<std::string>& fillers, const char* name) {
  config.validate();
  if (length < 1) throw ConfigError("poison sequence length must be >= 1");
  PoisonDataset out;
  const std::size_t n = fake_user_count(config.budget, n_real_users);
  for (std::size_t i = 0; i < n; ++i) {
    const std::string& target = config.targets[i % config.targets.size()];
    std::vector<std::string> pool;
    for (const auto& f : fillers) {
      if (f != target) pool.push_back(f);
    }
    if (length - 1 > pool.size()) {
      throw ConfigError(std::string(name) + " attack needs " + std::to_string(length - 1) + " fillers, only " +
                        std::to_string(pool.size()) + " available");
    }
    Rng rng(derive_seed(config.seed, i));
    // Partial Fisher-Yates: first length-1 entries become the fillers.
    for (std::size_t k = 0; k + 1 < length; ++k) std::swap(pool[k], pool[k + rng.index(pool.size() - k)]);
    PoisonSequence seq;
    seq.user_id = fake_id(i);
    seq.items.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(length - 1));
    seq.items.insert(seq.items.begin() + static_cast<std::ptrdiff_t>(rng.index(length)), target);
    out.sequences.push_back(std::move(seq));
  }
  return out;
}

}  // namespace

PoisonDataset random_attack(const PoisonConfig& config, const Catalog& catalog, std::size_t n_real_users,
                            std::size_t length) {
  std::vector<std::string> all;
  for (const auto& item : catalog.items()) all.push_back(item.item_id);
  return baseline_attack(config, n_real_users, length, all, "random");
}

PoisonDataset bandwagon_attack(const PoisonConfig& config, const Catalog& /*catalog*/, std::size_t n_real_users,
                               std::size_t length) {
  if (config.popular.empty()) throw ConfigError("bandwagon attack requires a non-empty popular set");
  return baseline_attack(config, n_real_users, length, config.popular, "bandwagon");
}

void write_poison(const std::filesystem::path& dir, const PoisonDataset& poison) {
  std::filesystem::create_directories(dir);
  std::vector<InteractionSequence> seqs;
  nlohmann::json logs = nlohmann::json::array();
  for (const auto& s : poison.sequences) {
    seqs.push_back({s.user_id, s.items});
    logs.push_back(s.log_json());
  }
  write_sequences(dir / "interactions.jsonl", seqs);
  std::ofstream f(dir / "steps.json");
  if (!f) throw ConfigError("cannot write " + (dir / "steps.json").string());
  f << logs.dump(1) << '\n';
}

}  // namespace promolab
