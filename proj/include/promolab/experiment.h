#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "promolab/corpus.h"
#include "promolab/distill.h"
#include "promolab/evoprompt.h"
#include "promolab/gateway.h"
#include "promolab/http.h"
#include "promolab/poisonforge.h"
#include "promolab/recommender.h"
#include "promolab/textops.h"
#include "promolab/titleforge.h"

namespace promolab {

enum class Variant { clean, random, bandwagon, puda, puda_titles_only, puda_poison_only };

std::string_view to_string(Variant v);
Variant variant_from_string(std::string_view name);
bool uses_titles(Variant v);
bool uses_poison(Variant v);

struct WorldConfig {
  std::string source = "synthetic";  // or "files"
  SynthConfig synth;
  std::filesystem::path catalog_path;
  std::filesystem::path interactions_path;
  std::size_t k_core = 5;
  std::size_t max_len = 50;
  std::size_t n_targets = 5;
};

struct VictimConfig {
  RecommenderParams params;
  std::string hidden_prompt;  // sealed: never exported
};

struct DistillConfig {
  double observable_ratio = 0.2;
  std::size_t n_per_seq = 2;
  std::uint64_t query_budget = 1000;
  std::string demo_source = "synthetic";  // synthetic, observed or corpus
  double demo_holdout = 0.25;             // share of observed users whose examples become demos
  PerturbationParams perturbation;
  CalibrationConfig calibration;
};

struct PoisonSettings {
  double budget = 0.02;
  std::size_t length = 0;  // 0: rounded mean observed length
  std::size_t top_j = 10;
  bool guarantee_target = true;
};

struct OperatorConfig {
  std::string backend = "mock";  // or "remote"
  HttpEndpoint endpoint;
  std::string model;
  std::filesystem::path template_dir;  // empty: bundled templates
  int template_version = 1;
};

struct EmbedderConfig {
  std::string backend = "hashing";  // or "remote"
  std::size_t dim = 256;
  HttpEndpoint endpoint;
  std::string model;
};

struct ExperimentConfig {
  WorldConfig world;
  VictimConfig victim;
  DistillConfig distill;
  EvolutionConfig evolution;
  AnchorConfig anchors;
  RefinementConfig refinement;
  PoisonSettings poison;
  OperatorConfig operators;
  EmbedderConfig embedder;
  std::vector<Variant> variants = {Variant::clean, Variant::random, Variant::bandwagon, Variant::puda};
  std::size_t repeats = 3;
  std::uint64_t seed = 7;
  std::vector<std::size_t> eval_ks = {10, 50};
  std::vector<std::size_t> agreement_ks = {5, 10, 50, 100};

  static ExperimentConfig from_json(const nlohmann::json& j);
  static ExperimentConfig load(const std::filesystem::path& path);
  /// Sealed fields are only included when asked for.
  nlohmann::json to_json(bool include_sealed = false) const;
  /// Hash of the exported (unsealed) config.
  std::string hash() const;
  void validate() const;
};

/// The hidden prompt used when the config leaves it empty.
const std::string& default_hidden_prompt();

std::unique_ptr<TextEmbedder> make_embedder(const EmbedderConfig& config);
std::shared_ptr<TextOperator> make_operator(const OperatorConfig& config);

/// Full interaction data D after 5-core filtering and truncation, its split and targets.
struct World {
  std::shared_ptr<const Catalog> catalog;
  std::shared_ptr<const Dataset> data;
  Split split;
  std::vector<std::string> targets;
};

World build_world(const WorldConfig& config, std::uint64_t seed);

/// Train prefix plus validation item for every evaluable user.
std::vector<std::vector<std::string>> evaluation_inputs(const Split& split);

/// Victim statistics: every user sequence minus its held-out test item.
std::vector<InteractionSequence> victim_training_sequences(const Dataset& data);

struct Stage1Result {
  std::shared_ptr<const Dataset> observable;
  std::vector<LabeledExample> observed;
  std::vector<LabeledExample> synthetic;
  SurrogateCorpus corpus;
  EvolutionResult evolution;
  CalibrationResult calibration;
  std::shared_ptr<const PromptConditionedScorer> surrogate;
};

struct RunContext {
  const ExperimentConfig& config;
  const TextEmbedder& embedder;
  Gateway& gateway;
  std::optional<std::filesystem::path> artifacts;  // stage outputs written here when set
};

Stage1Result run_stage1(const RunContext& ctx, const World& world, const VictimHandle& victim, std::uint64_t seed);

struct Stage2Result {
  std::shared_ptr<const Catalog> catalog;  // with the title overlay applied
  std::optional<TitleForgeOutput> titles;
  PoisonDataset poison;
};

Stage2Result run_stage2(const RunContext& ctx, Variant variant, const World& world, const Stage1Result& stage1,
                        std::uint64_t seed);

/// JSON-backed report; the layout is documented in the README.
struct ExperimentReport {
  nlohmann::json data;

  /// Seed-mean of a metric for a variant (e.g. "hr@50").
  double mean(Variant variant, const std::string& metric) const;
  bool operator==(const ExperimentReport&) const = default;
};

ExperimentReport run_experiment(const ExperimentConfig& config,
                                const std::optional<std::filesystem::path>& artifacts = std::nullopt);

enum class SweepAxis { budget, ratio };

SweepAxis sweep_axis_from_string(std::string_view name);
std::vector<double> default_sweep_values(SweepAxis axis);

struct SweepCell {
  double value = 0.0;
  std::optional<ExperimentReport> report;
  std::string error;
};

struct SweepResult {
  SweepAxis axis = SweepAxis::budget;
  std::vector<SweepCell> cells;

  nlohmann::json to_json() const;
  /// axis,value,metric,mean rows.
  std::string to_csv() const;
};

/// One experiment per axis value with everything else shared. Failed cells
/// record their error and the sweep continues.
SweepResult sweep(const ExperimentConfig& config, SweepAxis axis, const std::vector<double>& values);

enum class ReportFormat { json, csv };

void export_report(const ExperimentReport& report, const std::filesystem::path& path, ReportFormat format);
ExperimentReport load_report(const std::filesystem::path& path);
/// variant,metric,k,value rows of the summary.
std::string report_csv(const ExperimentReport& report);

}  // namespace promolab
