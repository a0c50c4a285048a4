#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "promolab/distill.h"
#include "promolab/gateway.h"
#include "promolab/recommender.h"

namespace promolab {

struct PromptCandidate {
  std::size_t id = 0;  // unique within a run
  std::string text;
  std::optional<double> score;
  std::size_t generation = 0;
  std::vector<std::size_t> parents;
  std::string op;  // lamarckian, elite, crossover, mutation
  std::uint64_t seed = 0;

  nlohmann::json to_json() const;
};

/// Ordering used for the elite and for top-set selection: higher score, then
/// earlier generation, then lexicographic text. Unscored candidates sort last.
bool ranks_before(const PromptCandidate& a, const PromptCandidate& b);

struct Population {
  std::vector<PromptCandidate> members;
  std::size_t generation = 0;

  /// Index of the best member; throws if any member is unscored.
  std::size_t elite_index() const;
  const PromptCandidate& elite() const { return members[elite_index()]; }
};

struct EvolutionConfig {
  std::size_t population_size = 8;  // K
  std::size_t n_mutations = 5;      // kappa
  std::size_t max_generations = 10; // T
  std::size_t metric_k = 10;        // HR@K_f
  std::size_t max_demo_texts = 8;   // demos rendered into the lamarckian request
  double temperature = 0.7;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Scores prompts by HR@K over fixed demos; stats stay fixed and only the
/// prompt-derived weights change, so demo features are computed once.
class PromptEvaluator {
 public:
  PromptEvaluator(std::shared_ptr<const FittedStats> stats, std::vector<LabeledExample> demos,
                  const TextEmbedder& embedder, RecommenderParams params = {}, std::size_t k = 10);

  double score(const std::string& prompt) const;
  double score_weights(const FeatureWeights& weights) const;

  const std::vector<LabeledExample>& demos() const { return demos_; }
  std::size_t k() const { return k_; }

 private:
  std::shared_ptr<const FittedStats> stats_;
  std::vector<LabeledExample> demos_;
  const TextEmbedder& embedder_;
  RecommenderParams params_;
  std::size_t k_;
  std::vector<FeatureMatrix> features_;
  std::vector<std::uint32_t> labels_;  // SIZE_MAX marks a label outside the catalog
};

/// Plain-text rendering of demos for the text operators.
std::vector<std::string> render_demos(const std::vector<LabeledExample>& demos, const Catalog& catalog,
                                      std::size_t limit);

Population lamarckian_init(Gateway& gateway, const std::vector<std::string>& demo_texts, std::size_t k,
                           std::uint64_t seed, double temperature = 0.7);

void score_population(Population& population, const PromptEvaluator& evaluator);

/// Two children from the two parents, lineage attached. When the parents
/// differ and a child repeats a parent, the pair is regenerated once.
std::vector<PromptCandidate> crossover(Gateway& gateway, const PromptCandidate& a, const PromptCandidate& b,
                                       std::uint64_t seed, double temperature = 0.7);

/// One mutation of each of the first kappa candidates.
std::vector<PromptCandidate> mutate(Gateway& gateway, const std::vector<PromptCandidate>& top, std::size_t kappa,
                                    std::uint64_t seed, double temperature = 0.7);

/// {elite} + children + mutants as generation `generation`; non-elite unscored.
Population assemble_generation(const PromptCandidate& elite, std::vector<PromptCandidate> children,
                               std::vector<PromptCandidate> mutants, std::size_t generation);

/// Top max(ceil(size/2), kappa) members in rank order.
std::vector<PromptCandidate> top_set(const Population& population, std::size_t kappa);

struct EvolutionResult {
  PromptCandidate best;
  std::vector<double> elite_scores;  // per generation
  std::vector<PromptCandidate> trace;
  std::size_t generations = 0;
};

EvolutionResult evolve(Gateway& gateway, const PromptEvaluator& evaluator,
                       const std::vector<std::string>& demo_texts, const EvolutionConfig& config);

/// One JSON line per candidate per generation.
void write_trace(const std::filesystem::path& path, const std::vector<PromptCandidate>& trace);

}  // namespace promolab
