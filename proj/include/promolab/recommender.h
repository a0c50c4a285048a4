#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "promolab/corpus.h"
#include "promolab/gateway.h"
#include "promolab/textops.h"

namespace promolab {

struct RecommenderParams {
  double alpha = 0.1;               // additive co-occurrence smoothing
  double tau_w = 0.5;               // prompt weight temperature
  std::size_t recent_window = 3;    // items used by the semantic and recency features
  bool exclude_seen = true;
  std::uint64_t projection_seed = 0x70c0ffee;  // global seed of the prompt projection
};

inline constexpr std::size_t kNumFeatures = 4;

/// Simplex weights over (popularity, last-item co-occurrence, semantic match,
/// recency-weighted co-occurrence).
using FeatureWeights = std::array<double, kNumFeatures>;

/// Statistics a scorer is fitted on: popularity, first-order transition counts
/// and title embeddings, tagged with the fingerprint of the source data.
class FittedStats {
 public:
  FittedStats(std::shared_ptr<const Catalog> catalog, const TextEmbedder& embedder,
              const std::vector<InteractionSequence>& sequences);

  const Catalog& catalog() const { return *catalog_; }
  const std::shared_ptr<const Catalog>& catalog_ptr() const { return catalog_; }
  const std::string& fingerprint() const { return fingerprint_; }
  std::size_t size() const { return popularity_.size(); }

  double popularity(std::size_t item) const { return popularity_[item]; }
  /// Raw transition count from -> to (no smoothing).
  double cooccurrence(std::size_t from, std::size_t to) const;
  const std::unordered_map<std::uint32_t, double>& transitions(std::size_t from) const { return rows_[from]; }
  std::size_t num_transitions() const;

  const TitleEmbeddings& titles() const { return titles_; }
  /// Min-max normalized popularity, shared by every query.
  const std::vector<double>& popularity_feature() const { return pop_feature_; }
  /// Position of each item in ascending item-id order.
  std::size_t id_rank(std::size_t item) const { return id_rank_[item]; }

  /// Versioned JSON snapshot (counts and fingerprint; embeddings are rebuilt).
  nlohmann::json to_json() const;
  static std::shared_ptr<const FittedStats> from_json(const nlohmann::json& snapshot,
                                                      std::shared_ptr<const Catalog> catalog,
                                                      const TextEmbedder& embedder);

 private:
  FittedStats(std::shared_ptr<const Catalog> catalog, const TextEmbedder& embedder);
  void finish();

  std::shared_ptr<const Catalog> catalog_;
  TitleEmbeddings titles_;
  std::vector<double> popularity_;
  std::vector<std::unordered_map<std::uint32_t, double>> rows_;
  std::vector<double> pop_feature_;
  std::vector<std::size_t> id_rank_;
  std::string fingerprint_;
};

/// Counts from adjacent pairs in every sequence of the dataset.
std::shared_ptr<const FittedStats> fit_stats(const Dataset& dataset, const TextEmbedder& embedder);
std::shared_ptr<const FittedStats> fit_stats(const std::vector<InteractionSequence>& sequences,
                                             std::shared_ptr<const Catalog> catalog, const TextEmbedder& embedder);

/// Per-item feature values for one input sequence, each min-max normalized
/// over the catalog (a constant feature is all zeros).
struct FeatureMatrix {
  std::array<std::vector<double>, kNumFeatures> values;
  std::vector<std::uint32_t> seen;  // catalog indices present in the input
};

FeatureMatrix compute_features(const FittedStats& stats, std::span<const std::string> sequence,
                               const RecommenderParams& params);

/// In-place min-max normalization; constant inputs become all zeros.
void normalize_minmax(std::vector<double>& values);

/// softmax(R e(prompt) / tau_w) with R a fixed seeded 4 x d Gaussian projection.
FeatureWeights prompt_weights(std::string_view prompt, const TextEmbedder& embedder, const RecommenderParams& params);

struct RankedList {
  std::vector<std::string> items;
  std::vector<double> scores;  // empty when returned through a VictimHandle
};

class PromptConditionedScorer {
 public:
  PromptConditionedScorer(std::shared_ptr<const FittedStats> stats, std::string prompt, const TextEmbedder& embedder,
                          RecommenderParams params = {});
  /// Explicit weights (normalized onto the simplex); used for calibration and tests.
  PromptConditionedScorer(std::shared_ptr<const FittedStats> stats, FeatureWeights weights,
                          RecommenderParams params = {});

  const FeatureWeights& weights() const { return weights_; }
  const FittedStats& stats() const { return *stats_; }
  const std::shared_ptr<const FittedStats>& stats_ptr() const { return stats_; }
  const RecommenderParams& params() const { return params_; }

  /// Weighted feature score of one item. Throws for unknown items.
  double score(std::span<const std::string> sequence, std::string_view item) const;

  /// Top-K by score, ties by ascending item id, seen items excluded when configured.
  RankedList recommend(std::span<const std::string> sequence, std::size_t k) const;
  /// Same ranking from precomputed features.
  RankedList rank(const FeatureMatrix& features, std::size_t k) const;
  /// Ranking restricted to catalog indices; cheaper form used by hot loops.
  std::vector<std::uint32_t> rank_indices(const FeatureMatrix& features, std::size_t k) const;

 private:
  std::shared_ptr<const FittedStats> stats_;
  FeatureWeights weights_{};
  RecommenderParams params_;
};

FeatureWeights normalize_weights(FeatureWeights weights);

/// Budgeted black-box access to a scorer whose prompt is not exposed.
class VictimHandle {
 public:
  static constexpr const char* kAttackEndpoint = "victim";
  static constexpr const char* kEvalEndpoint = "victim_eval";

  VictimHandle(PromptConditionedScorer hidden, std::shared_ptr<QueryLedger> ledger);

  /// One ledger charge on `endpoint`, then the hidden scorer's top-K ids.
  RankedList query(std::span<const std::string> sequence, std::size_t k,
                   const std::string& endpoint = kAttackEndpoint) const;
  /// Charges sequences.size() up front (all or nothing), then answers each.
  std::vector<RankedList> query_batch(const std::vector<std::vector<std::string>>& sequences, std::size_t k,
                                      const std::string& endpoint = kAttackEndpoint) const;

  const Catalog& catalog() const { return hidden_.stats().catalog(); }
  QueryLedger& ledger() const { return *ledger_; }
  const std::shared_ptr<QueryLedger>& ledger_ptr() const { return ledger_; }

 private:
  PromptConditionedScorer hidden_;
  std::shared_ptr<QueryLedger> ledger_;
};

}  // namespace promolab
