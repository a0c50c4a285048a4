#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "promolab/corpus.h"
#include "promolab/recommender.h"

namespace promolab {

enum class PerturbationKind { swap, remove, subsample };

std::string_view to_string(PerturbationKind kind);

struct PerturbationOp {
  PerturbationKind kind = PerturbationKind::swap;
  std::uint64_t seed = 0;
};

struct PerturbationParams {
  double subsample_min_fraction = 0.5;  // kept length >= ceil(fraction * n), and >= 1
  bool contiguous = false;              // contiguous window instead of a scattered subsequence
};

/// swap: exchange two seeded positions; remove: drop one seeded position;
/// subsample: keep a seeded order-preserving subsequence. swap and remove
/// need length >= 2 and throw ConfigError otherwise.
std::vector<std::string> perturb(std::span<const std::string> sequence, const PerturbationOp& op,
                                 const PerturbationParams& params = {});

/// One (input, next-item) training pair for the surrogate.
struct LabeledExample {
  enum class Source { observed, synthetic };

  std::string user_id;
  std::vector<std::string> input;
  std::string label;
  Source source = Source::observed;
  // Provenance of synthetic examples.
  std::optional<PerturbationKind> op;
  std::uint64_t seed = 0;

  bool operator==(const LabeledExample&) const = default;
};

/// (training view minus its last item, that item) for every user with at least
/// two training items. The label is the validation item for evaluable users.
std::vector<LabeledExample> labeled_examples(const Dataset& observable);

/// Perturb every observed input n_per_seq times (swap -> remove -> subsample,
/// cycled) and label each result with the victim's top-1. Checks the budget
/// before issuing any query; charges exactly one query per example.
std::vector<LabeledExample> build_synthetic(const std::vector<LabeledExample>& observed, const VictimHandle& victim,
                                            std::size_t n_per_seq, std::uint64_t seed,
                                            const PerturbationParams& params = {});

/// D_st: observed examples followed by synthetic ones. Duplicates are kept.
struct SurrogateCorpus {
  std::vector<LabeledExample> examples;
  std::size_t n_observed = 0;
  std::size_t n_synthetic = 0;

  bool empty() const { return examples.empty(); }
};

SurrogateCorpus assemble_corpus(const std::vector<LabeledExample>& observed,
                                const std::vector<LabeledExample>& synthetic);

enum class DemoSource { synthetic, observed, corpus };

DemoSource demo_source_from_string(std::string_view name);

struct DemoSplit {
  std::vector<LabeledExample> fit;    // examples of users that were not held out
  std::vector<LabeledExample> demos;  // held-out users' examples of the requested source
};

/// Holds out ceil(fraction * users) seeded source users. All their examples
/// leave the fitting set so demo labels are never counted into the stats
/// they are scored against.
DemoSplit split_demos(const SurrogateCorpus& corpus, double holdout_fraction, DemoSource source, std::uint64_t seed);

/// input ++ label per example, with unique derived user ids.
std::vector<InteractionSequence> counting_sequences(const std::vector<LabeledExample>& examples);

struct CalibrationConfig {
  bool enabled = false;
  double holdout_fraction = 0.1;
  std::vector<double> grid = {0.5, 0.6299605249474366, 0.7937005259840998, 1.0,
                              1.2599210498948732, 1.5874010519682994, 2.0};
  std::uint64_t seed = 0;
};

struct CalibrationResult {
  FeatureWeights base{};
  FeatureWeights calibrated{};
  std::array<double, kNumFeatures> multipliers{1.0, 1.0, 1.0, 1.0};
  double base_accuracy = 0.0;
  double accuracy = 0.0;
  std::size_t holdout_size = 0;
};

/// Fit statistics on every example of D_st (input ++ label) and condition the
/// weights on `prompt`; optionally calibrate the weights on a held-out slice.
PromptConditionedScorer fit_surrogate(const SurrogateCorpus& corpus, const std::string& prompt,
                                      std::shared_ptr<const Catalog> catalog, const TextEmbedder& embedder,
                                      const RecommenderParams& params = {}, const CalibrationConfig& calibration = {},
                                      CalibrationResult* calibration_out = nullptr);

/// Same, starting from explicit base weights instead of a prompt.
PromptConditionedScorer fit_surrogate(const SurrogateCorpus& corpus, const FeatureWeights& base_weights,
                                      std::shared_ptr<const Catalog> catalog, const TextEmbedder& embedder,
                                      const RecommenderParams& params = {}, const CalibrationConfig& calibration = {},
                                      CalibrationResult* calibration_out = nullptr);

/// Refit on the observed examples plus whole poison sequences.
PromptConditionedScorer retrain_with_poison(const std::vector<LabeledExample>& observed, const Dataset& poison,
                                            const std::string& prompt, std::shared_ptr<const Catalog> catalog,
                                            const TextEmbedder& embedder, const RecommenderParams& params = {},
                                            const CalibrationConfig& calibration = {});

/// interactions.jsonl rows plus a provenance sidecar for synthetic examples.
void write_corpus(const std::filesystem::path& interactions_path, const std::filesystem::path& provenance_path,
                  const std::vector<LabeledExample>& examples);

}  // namespace promolab
