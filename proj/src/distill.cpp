#include "promolab/distill.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>

#include "promolab/common.h"

namespace promolab {

std::string_view to_string(PerturbationKind kind) {
  switch (kind) {
    case PerturbationKind::swap: return "swap";
    case PerturbationKind::remove: return "delete";
    case PerturbationKind::subsample: return "subsample";
  }
  return "unknown";
}

std::vector<std::string> perturb(std::span<const std::string> sequence, const PerturbationOp& op,
                                 const PerturbationParams& params) {
  const std::size_t n = sequence.size();
  if (n == 0) throw ConfigError("cannot perturb an empty sequence");
  std::vector<std::string> out(sequence.begin(), sequence.end());
  Rng rng(op.seed);
  switch (op.kind) {
    case PerturbationKind::swap: {
      if (n < 2) throw ConfigError("swap requires length >= 2, got " + std::to_string(n));
      const std::size_t i = rng.index(n);
      std::size_t j = rng.index(n - 1);
      if (j >= i) ++j;
      std::swap(out[i], out[j]);
      return out;
    }
    case PerturbationKind::remove: {
      if (n < 2) throw ConfigError("delete requires length >= 2, got " + std::to_string(n));
      out.erase(out.begin() + static_cast<std::ptrdiff_t>(rng.index(n)));
      return out;
    }
    case PerturbationKind::subsample: {
      if (!(params.subsample_min_fraction > 0.0 && params.subsample_min_fraction <= 1.0)) {
        throw ConfigError("subsample fraction must be in (0, 1]");
      }
      const std::size_t min_keep = std::max<std::size_t>(1, ceil_fraction(params.subsample_min_fraction, n));
      const std::size_t keep = min_keep + rng.index(n - min_keep + 1);
      if (params.contiguous) {
        const std::size_t start = rng.index(n - keep + 1);
        return {out.begin() + static_cast<std::ptrdiff_t>(start),
                out.begin() + static_cast<std::ptrdiff_t>(start + keep)};
      }
      std::vector<std::size_t> idx(n);
      std::iota(idx.begin(), idx.end(), 0);
      rng.shuffle(idx);
      idx.resize(keep);
      std::sort(idx.begin(), idx.end());
      std::vector<std::string> kept;
      kept.reserve(keep);
      for (auto i : idx) kept.push_back(out[i]);
      return kept;
    }
  }
  throw ConfigError("unknown perturbation kind");
}

std::vector<LabeledExample> labeled_examples(const Dataset& observable) {
  const Dataset view = training_view(observable);
  std::vector<LabeledExample> out;
  out.reserve(view.num_users());
  for (const auto& seq : view.sequences()) {
    if (seq.items.size() < 2) continue;
    LabeledExample ex;
    ex.user_id = seq.user_id;
    ex.input.assign(seq.items.begin(), seq.items.end() - 1);
    ex.label = seq.items.back();
    out.push_back(std::move(ex));
  }
  return out;
}

std::vector<LabeledExample> build_synthetic(const std::vector<LabeledExample>& observed, const VictimHandle& victim,
                                            std::size_t n_per_seq, std::uint64_t seed,
                                            const PerturbationParams& params) {
  const std::size_t total = observed.size() * n_per_seq;
  if (total == 0) return {};
  if (auto left = victim.ledger().remaining(VictimHandle::kAttackEndpoint); left && *left < total) {
    throw BudgetError(VictimHandle::kAttackEndpoint, *victim.ledger().cap(VictimHandle::kAttackEndpoint),
                      victim.ledger().count(VictimHandle::kAttackEndpoint) + total);
  }

  static constexpr PerturbationKind kCycle[] = {PerturbationKind::swap, PerturbationKind::remove,
                                                PerturbationKind::subsample};
  std::vector<LabeledExample> out;
  out.reserve(total);
  std::vector<std::vector<std::string>> inputs;
  inputs.reserve(total);
  std::size_t counter = 0;
  for (std::size_t u = 0; u < observed.size(); ++u) {
    const auto& src = observed[u];
    for (std::size_t r = 0; r < n_per_seq; ++r, ++counter) {
      PerturbationOp op{kCycle[counter % 3], derive_seed(seed, u, r)};
      if (op.kind != PerturbationKind::subsample && src.input.size() < 2) op.kind = PerturbationKind::subsample;
      LabeledExample ex;
      ex.user_id = src.user_id;
      ex.input = perturb(src.input, op, params);
      ex.source = LabeledExample::Source::synthetic;
      ex.op = op.kind;
      ex.seed = op.seed;
      inputs.push_back(ex.input);
      out.push_back(std::move(ex));
    }
  }
  const auto answers = victim.query_batch(inputs, 1);
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (answers[i].items.empty()) throw ConfigError("victim returned no recommendation for " + out[i].user_id);
    out[i].label = answers[i].items.front();
  }
  return out;
}

SurrogateCorpus assemble_corpus(const std::vector<LabeledExample>& observed,
                                const std::vector<LabeledExample>& synthetic) {
  SurrogateCorpus c;
  c.examples.reserve(observed.size() + synthetic.size());
  c.examples.insert(c.examples.end(), observed.begin(), observed.end());
  c.examples.insert(c.examples.end(), synthetic.begin(), synthetic.end());
  c.n_observed = observed.size();
  c.n_synthetic = synthetic.size();
  return c;
}

DemoSource demo_source_from_string(std::string_view name) {
  if (name == "synthetic") return DemoSource::synthetic;
  if (name == "observed") return DemoSource::observed;
  if (name == "corpus") return DemoSource::corpus;
  throw ConfigError("unknown demo source '" + std::string(name) + "'");
}

DemoSplit split_demos(const SurrogateCorpus& corpus, double holdout_fraction, DemoSource source, std::uint64_t seed) {
  if (!(holdout_fraction > 0.0 && holdout_fraction < 1.0)) throw ConfigError("demo holdout must be in (0, 1)");
  std::vector<std::string> users;
  std::set<std::string> seen;
  for (const auto& ex : corpus.examples) {
    if (seen.insert(ex.user_id).second) users.push_back(ex.user_id);
  }
  if (users.size() < 2) throw ConfigError("demo split needs at least two source users");
  Rng rng(derive_seed(seed, 0xde70));
  rng.shuffle(users);
  const std::size_t n_hold = std::min(users.size() - 1, ceil_fraction(holdout_fraction, users.size()));
  const std::set<std::string> held(users.begin(), users.begin() + static_cast<std::ptrdiff_t>(n_hold));
  DemoSplit split;
  for (const auto& ex : corpus.examples) {
    if (!held.count(ex.user_id)) {
      split.fit.push_back(ex);
      continue;
    }
    const bool synthetic = ex.source == LabeledExample::Source::synthetic;
    if (source == DemoSource::corpus || (source == DemoSource::synthetic) == synthetic) split.demos.push_back(ex);
  }
  // No synthetic examples (n_per_seq = 0): fall back to the observed ones.
  if (split.demos.empty() && source == DemoSource::synthetic) {
    for (const auto& ex : corpus.examples) {
      if (held.count(ex.user_id)) split.demos.push_back(ex);
    }
  }
  return split;
}

std::vector<InteractionSequence> counting_sequences(const std::vector<LabeledExample>& examples) {
  std::vector<InteractionSequence> out;
  out.reserve(examples.size());
  for (std::size_t i = 0; i < examples.size(); ++i) {
    const auto& ex = examples[i];
    InteractionSequence seq{ex.user_id + "#" + std::to_string(i), ex.input};
    seq.items.push_back(ex.label);
    out.push_back(std::move(seq));
  }
  return out;
}

namespace {

double top1_accuracy(const PromptConditionedScorer& scorer, const std::vector<FeatureMatrix>& features,
                     const std::vector<std::uint32_t>& labels) {
  if (features.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < features.size(); ++i) {
    auto top = scorer.rank_indices(features[i], 1);
    if (!top.empty() && top.front() == labels[i]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(features.size());
}

FeatureWeights apply_multipliers(const FeatureWeights& base, const std::array<double, kNumFeatures>& m) {
  FeatureWeights w{};
  for (std::size_t f = 0; f < kNumFeatures; ++f) w[f] = base[f] * m[f];
  return normalize_weights(w);
}

void calibrate(const SurrogateCorpus& corpus, const FeatureWeights& base, std::shared_ptr<const Catalog> catalog,
               const TextEmbedder& embedder, const RecommenderParams& params, const CalibrationConfig& config,
               CalibrationResult& result) {
  if (config.grid.empty()) throw ConfigError("calibration grid is empty");
  if (!(config.holdout_fraction > 0.0 && config.holdout_fraction < 1.0)) {
    throw ConfigError("calibration holdout fraction must be in (0, 1)");
  }
  const std::size_t n = corpus.examples.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(config.seed, 0xca1));
  rng.shuffle(order);
  const std::size_t n_hold = std::min(n - 1, ceil_fraction(config.holdout_fraction, n));
  result.holdout_size = n_hold;
  if (n_hold == 0) return;

  std::vector<LabeledExample> fit_part, hold_part;
  for (std::size_t i = 0; i < n; ++i) (i < n_hold ? hold_part : fit_part).push_back(corpus.examples[order[i]]);
  auto stats = fit_stats(counting_sequences(fit_part), catalog, embedder);

  std::vector<FeatureMatrix> features;
  std::vector<std::uint32_t> labels;
  features.reserve(hold_part.size());
  for (const auto& ex : hold_part) {
    features.push_back(compute_features(*stats, ex.input, params));
    labels.push_back(static_cast<std::uint32_t>(catalog->index_of(ex.label)));
  }

  auto accuracy_of = [&](const std::array<double, kNumFeatures>& m) {
    return top1_accuracy(PromptConditionedScorer(stats, apply_multipliers(base, m), params), features, labels);
  };
  std::array<double, kNumFeatures> mult{1.0, 1.0, 1.0, 1.0};
  result.base_accuracy = accuracy_of(mult);
  double best = result.base_accuracy;
  for (std::size_t f = 0; f < kNumFeatures; ++f) {
    double best_m = mult[f];
    for (double g : config.grid) {
      if (!(g > 0.0)) throw ConfigError("calibration multipliers must be positive");
      auto trial = mult;
      trial[f] = g;
      const double acc = accuracy_of(trial);
      const bool closer = std::abs(std::log(g)) < std::abs(std::log(best_m));
      if (acc > best || (acc == best && closer)) {
        best = acc;
        best_m = g;
      }
    }
    mult[f] = best_m;
  }
  result.multipliers = mult;
  result.accuracy = best;
  result.calibrated = apply_multipliers(base, mult);
}

}  // namespace

PromptConditionedScorer fit_surrogate(const SurrogateCorpus& corpus, const FeatureWeights& base_weights,
                                      std::shared_ptr<const Catalog> catalog, const TextEmbedder& embedder,
                                      const RecommenderParams& params, const CalibrationConfig& calibration,
                                      CalibrationResult* calibration_out) {
  if (corpus.empty()) throw ConfigError("fit_surrogate requires a non-empty corpus");
  auto stats = fit_stats(counting_sequences(corpus.examples), catalog, embedder);
  CalibrationResult result;
  result.base = normalize_weights(base_weights);
  result.calibrated = result.base;
  if (calibration.enabled) calibrate(corpus, result.base, catalog, embedder, params, calibration, result);
  if (calibration_out) *calibration_out = result;
  return PromptConditionedScorer(std::move(stats), result.calibrated, params);
}

PromptConditionedScorer fit_surrogate(const SurrogateCorpus& corpus, const std::string& prompt,
                                      std::shared_ptr<const Catalog> catalog, const TextEmbedder& embedder,
                                      const RecommenderParams& params, const CalibrationConfig& calibration,
                                      CalibrationResult* calibration_out) {
  return fit_surrogate(corpus, prompt_weights(prompt, embedder, params), std::move(catalog), embedder, params,
                       calibration, calibration_out);
}

PromptConditionedScorer retrain_with_poison(const std::vector<LabeledExample>& observed, const Dataset& poison,
                                            const std::string& prompt, std::shared_ptr<const Catalog> catalog,
                                            const TextEmbedder& embedder, const RecommenderParams& params,
                                            const CalibrationConfig& calibration) {
  if (poison.role() != DatasetRole::poison) throw ConfigError("retrain_with_poison expects a poison-role dataset");
  std::vector<InteractionSequence> seqs = counting_sequences(observed);
  for (const auto& p : poison.sequences()) seqs.push_back(p);
  if (seqs.empty()) throw ConfigError("fit_surrogate requires a non-empty corpus");
  FeatureWeights w = prompt_weights(prompt, embedder, params);
  if (calibration.enabled) {
    CalibrationResult r;
    r.calibrated = w;
    calibrate(assemble_corpus(observed, {}), w, catalog, embedder, params, calibration, r);
    w = r.calibrated;
  }
  return PromptConditionedScorer(fit_stats(seqs, std::move(catalog), embedder), w, params);
}

void write_corpus(const std::filesystem::path& interactions_path, const std::filesystem::path& provenance_path,
                  const std::vector<LabeledExample>& examples) {
  const auto seqs = counting_sequences(examples);
  write_sequences(interactions_path, seqs);
  if (provenance_path.has_parent_path()) std::filesystem::create_directories(provenance_path.parent_path());
  std::ofstream out(provenance_path);
  if (!out) throw ConfigError("cannot open " + provenance_path.string());
  for (std::size_t i = 0; i < examples.size(); ++i) {
    const auto& ex = examples[i];
    if (ex.source != LabeledExample::Source::synthetic) continue;
    nlohmann::json row{{"user_id", seqs[i].user_id},
                       {"source_user", ex.user_id},
                       {"op", ex.op ? std::string(to_string(*ex.op)) : std::string()},
                       {"seed", ex.seed},
                       {"label", ex.label}};
    out << row.dump() << '\n';
  }
}

}  // namespace promolab
