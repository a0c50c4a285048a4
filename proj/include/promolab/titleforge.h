#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "promolab/common.h"
#include "promolab/corpus.h"
#include "promolab/gateway.h"
#include "promolab/recommender.h"
#include "promolab/textops.h"

namespace promolab {

/// Appearance counts of items across top-K lists, keyed by item id.
using RecommendationFrequency = std::map<std::string, std::size_t>;

RecommendationFrequency recommendation_frequency(const PromptConditionedScorer& scorer,
                                                 const std::vector<std::vector<std::string>>& probes,
                                                 std::size_t k_probe);

/// Items with frequency >= gamma that are not in `popular`, ascending by id.
std::vector<std::string> build_easy_set(const RecommendationFrequency& frequency, std::size_t gamma,
                                        const std::vector<std::string>& popular);

/// Nearest-rank percentile of the nonzero frequencies (at least 1).
std::size_t frequency_threshold(const RecommendationFrequency& frequency, double percentile = 0.9);

struct AnchorConfig {
  double popular_fraction = 0.1;
  std::size_t k_probe = 50;
  std::optional<std::size_t> gamma;  // default: 90th percentile of nonzero frequencies
  double gamma_percentile = 0.9;
};

struct AnchorSets {
  std::vector<std::string> popular;  // I_pop
  std::vector<std::string> easy;     // I_easy
  std::size_t gamma = 1;
  RecommendationFrequency frequency;

  /// Titles of I_pop followed by I_easy.
  std::vector<std::string> titles(const Catalog& catalog) const;
};

AnchorSets build_anchor_sets(const PromptConditionedScorer& surrogate,
                             const std::vector<std::vector<std::string>>& probes, const PopularityTable& popularity,
                             const AnchorConfig& config = {});

/// Ranked pattern list through the gateway (tokens, then a "length:N" template).
std::vector<std::string> extract_patterns(Gateway& gateway, const std::vector<std::string>& anchor_titles,
                                          std::size_t top_p = 10, const std::vector<std::string>& excluded = {});

struct GateResult {
  double sem = 0.0;
  double lex = 0.0;
  bool accepted = false;
};

GateResult gate(const std::string& original, const std::string& candidate, const TextEmbedder& embedder,
                double theta_sem, double theta_lex);

/// First token plus the last alphabetic token of at least three letters.
std::vector<std::string> core_tokens(const std::string& title);

struct RefinementConfig {
  double theta_sem = 0.9;
  double theta_lex = 0.7;
  std::size_t max_iters = 5;
  std::size_t n_candidates = 3;
  std::size_t top_p = 10;
  double temperature = 0.7;

  void validate() const;
};

struct AuditEntry {
  std::string text;
  double sem = 0.0;
  double lex = 0.0;
  std::size_t iteration = 0;
  bool accepted = false;
};

struct RefinementResult {
  std::string item_id;
  std::string original;
  std::string title;
  bool fallback = false;
  std::size_t iterations = 0;
  std::vector<std::string> core_tokens;
  std::vector<AuditEntry> audit;

  nlohmann::json to_json() const;
};

/// Gateway failure during refinement; keeps the audit gathered so far.
class RefinementError : public Error {
 public:
  RefinementError(const std::string& what, RefinementResult partial)
      : Error(what), partial_(std::move(partial)) {}
  const RefinementResult& partial() const { return partial_; }

 private:
  RefinementResult partial_;
};

RefinementResult refine(Gateway& gateway, const std::string& item_id, const std::string& title,
                        const std::vector<std::string>& patterns, const TextEmbedder& embedder,
                        const RefinementConfig& config, std::uint64_t seed,
                        const std::optional<std::vector<std::string>>& core_override = std::nullopt);

struct TitleForgeOutput {
  AnchorSets anchors;
  std::vector<std::string> patterns;
  std::vector<RefinementResult> results;

  /// item id -> refined title, only for titles that changed.
  std::map<std::string, std::string> overlay() const;
};

TitleForgeOutput forge_titles(Gateway& gateway, const PromptConditionedScorer& surrogate,
                              const std::vector<std::vector<std::string>>& probes,
                              const PopularityTable& popularity, const std::vector<std::string>& targets,
                              const TextEmbedder& embedder, const AnchorConfig& anchor_config,
                              const RefinementConfig& refinement, std::uint64_t seed);

/// catalog.jsonl overlay with changed items plus one audit JSON per target.
void write_title_outputs(const std::filesystem::path& dir, const TitleForgeOutput& output);

}  // namespace promolab
