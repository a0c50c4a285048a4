#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "promolab/corpus.h"
#include "promolab/recommender.h"
#include "promolab/textops.h"

namespace promolab {

inline constexpr const char* kFakeUserPrefix = "fake::";

struct PoisonConfig {
  double budget = 0.02;         // b: fake users as a fraction of N
  std::size_t length = 0;       // L; 0 means the rounded mean real length
  std::size_t top_j = 10;       // J
  std::vector<std::string> targets;
  std::vector<std::string> popular;  // I_pop (top 10%)
  bool guarantee_target = true;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Rounded mean sequence length of the dataset (at least 2).
std::size_t default_poison_length(const Dataset& dataset);

/// Number of fake users for N real users: ceil(b * N).
std::size_t fake_user_count(double budget, std::size_t n_users);

/// top-J recommendations, then targets, then popular items not in the prefix;
/// deduplicated in that order. Targets are always kept.
std::vector<std::string> candidate_pool(std::span<const std::string> prefix, const PromptConditionedScorer& surrogate,
                                        std::size_t top_j, const std::vector<std::string>& targets,
                                        const std::vector<std::string>& popular);

/// cosine(sequence_embedding(prefix ++ candidate), e_avg).
double beh_sim(std::span<const std::string> prefix, const std::string& candidate, const Embedding& e_avg,
               const Catalog& catalog, const TitleEmbeddings& titles);

struct PoisonStep {
  std::vector<std::string> pool;
  std::vector<double> scores;
  std::string chosen;
};

/// Argmax of beh_sim over the pool; ties target-first, then ascending id.
std::string next_item(std::span<const std::string> prefix, const std::vector<std::string>& pool,
                      const Embedding& e_avg, const Catalog& catalog, const TitleEmbeddings& titles,
                      const std::vector<std::string>& targets, PoisonStep* step = nullptr);

struct PoisonSequence {
  std::string user_id;
  std::vector<std::string> items;
  std::vector<PoisonStep> steps;
  bool forced = false;

  nlohmann::json log_json() const;
};

struct PoisonContext {
  const PromptConditionedScorer& surrogate;
  const Catalog& catalog;
  const TitleEmbeddings& titles;
  const Embedding& e_avg;
};

PoisonSequence generate_sequence(const PoisonConfig& config, const PoisonContext& ctx, std::size_t length,
                                 std::uint64_t seed, std::size_t round_robin = 0);

struct PoisonDataset {
  std::vector<PoisonSequence> sequences;

  Dataset to_dataset(std::shared_ptr<const Catalog> catalog) const;
};

/// ceil(b * n_real_users) sequences with "fake::" user ids.
PoisonDataset generate_dataset(const PoisonConfig& config, const PoisonContext& ctx, std::size_t n_real_users,
                               std::size_t length);

/// Target at a seeded position, other items uniform without replacement.
PoisonDataset random_attack(const PoisonConfig& config, const Catalog& catalog, std::size_t n_real_users,
                            std::size_t length);

/// Target at a seeded position, fillers drawn from the popular set.
PoisonDataset bandwagon_attack(const PoisonConfig& config, const Catalog& catalog, std::size_t n_real_users,
                               std::size_t length);

/// interactions.jsonl plus a step-log JSON per sequence.
void write_poison(const std::filesystem::path& dir, const PoisonDataset& poison);

}  // namespace promolab
