#include "promolab/recommender.h"

#include <algorithm>
#include <cmath>
#include <map>
#include <mutex>
#include <numeric>
#include <tuple>

#include "promolab/common.h"

namespace promolab {

FittedStats::FittedStats(std::shared_ptr<const Catalog> catalog, const TextEmbedder& embedder)
    : catalog_(std::move(catalog)), titles_(*catalog_, embedder) {
  popularity_.assign(catalog_->size(), 0.0);
  rows_.assign(catalog_->size(), {});
}

FittedStats::FittedStats(std::shared_ptr<const Catalog> catalog, const TextEmbedder& embedder,
                         const std::vector<InteractionSequence>& sequences)
    : FittedStats(std::move(catalog), embedder) {
  for (const auto& seq : sequences) {
    std::size_t prev = SIZE_MAX;
    for (const auto& id : seq.items) {
      const std::size_t idx = catalog_->index_of(id);
      popularity_[idx] += 1.0;
      if (prev != SIZE_MAX) rows_[prev][static_cast<std::uint32_t>(idx)] += 1.0;
      prev = idx;
    }
  }
  fingerprint_ = promolab::fingerprint(*catalog_, sequences);
  finish();
}

void FittedStats::finish() {
  pop_feature_ = popularity_;
  normalize_minmax(pop_feature_);
  std::vector<std::size_t> order(catalog_->size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return catalog_->at(a).item_id < catalog_->at(b).item_id; });
  id_rank_.assign(order.size(), 0);
  for (std::size_t r = 0; r < order.size(); ++r) id_rank_[order[r]] = r;
}

double FittedStats::cooccurrence(std::size_t from, std::size_t to) const {
  const auto& row = rows_.at(from);
  auto it = row.find(static_cast<std::uint32_t>(to));
  return it == row.end() ? 0.0 : it->second;
}

std::size_t FittedStats::num_transitions() const {
  std::size_t n = 0;
  for (const auto& row : rows_) n += row.size();
  return n;
}

nlohmann::json FittedStats::to_json() const {
  nlohmann::json pop = nlohmann::json::object();
  for (std::size_t i = 0; i < popularity_.size(); ++i) {
    if (popularity_[i] > 0) pop[catalog_->at(i).item_id] = popularity_[i];
  }
  std::vector<std::tuple<std::string, std::string, double>> pairs;
  for (std::size_t from = 0; from < rows_.size(); ++from) {
    for (const auto& [to, count] : rows_[from]) {
      pairs.emplace_back(catalog_->at(from).item_id, catalog_->at(to).item_id, count);
    }
  }
  std::sort(pairs.begin(), pairs.end());
  nlohmann::json co = nlohmann::json::array();
  for (const auto& [a, b, c] : pairs) co.push_back({a, b, c});
  return {{"format", "promolab.stats"}, {"version", 1}, {"fingerprint", fingerprint_},
          {"popularity", pop},          {"cooccurrence", co}};
}

std::shared_ptr<const FittedStats> FittedStats::from_json(const nlohmann::json& snapshot,
                                                          std::shared_ptr<const Catalog> catalog,
                                                          const TextEmbedder& embedder) {
  if (snapshot.value("format", "") != "promolab.stats" || snapshot.value("version", 0) != 1) {
    throw FormatError("not a version-1 stats snapshot");
  }
  std::shared_ptr<FittedStats> stats(new FittedStats(std::move(catalog), embedder));
  try {
    for (const auto& [id, count] : snapshot.at("popularity").items()) {
      stats->popularity_[stats->catalog_->index_of(id)] = count.get<double>();
    }
    for (const auto& triple : snapshot.at("cooccurrence")) {
      auto from = stats->catalog_->index_of(triple.at(0).get<std::string>());
      auto to = stats->catalog_->index_of(triple.at(1).get<std::string>());
      stats->rows_[from][static_cast<std::uint32_t>(to)] = triple.at(2).get<double>();
    }
    stats->fingerprint_ = snapshot.at("fingerprint").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("stats snapshot malformed: ") + e.what());
  }
  stats->finish();
  return stats;
}

std::shared_ptr<const FittedStats> fit_stats(const std::vector<InteractionSequence>& sequences,
                                             std::shared_ptr<const Catalog> catalog, const TextEmbedder& embedder) {
  if (sequences.empty()) throw ConfigError("fit_stats requires a non-empty dataset");
  return std::make_shared<const FittedStats>(std::move(catalog), embedder, sequences);
}

std::shared_ptr<const FittedStats> fit_stats(const Dataset& dataset, const TextEmbedder& embedder) {
  return fit_stats(dataset.sequences(), dataset.catalog_ptr(), embedder);
}

void normalize_minmax(std::vector<double>& values) {
  if (values.empty()) return;
  auto [lo, hi] = std::minmax_element(values.begin(), values.end());
  const double min = *lo, max = *hi;
  if (!(max > min)) {
    std::fill(values.begin(), values.end(), 0.0);
    return;
  }
  const double span = max - min;
  for (double& v : values) v = (v - min) / span;
}

FeatureMatrix compute_features(const FittedStats& stats, std::span<const std::string> sequence,
                               const RecommenderParams& params) {
  const std::size_t n = stats.size();
  FeatureMatrix fm;
  fm.seen.reserve(sequence.size());
  std::vector<std::size_t> idx;
  idx.reserve(sequence.size());
  for (const auto& id : sequence) {
    idx.push_back(stats.catalog().index_of(id));
    fm.seen.push_back(static_cast<std::uint32_t>(idx.back()));
  }

  fm.values[0] = stats.popularity_feature();

  auto& co = fm.values[1];
  co.assign(n, params.alpha);
  if (!idx.empty()) {
    for (const auto& [to, count] : stats.transitions(idx.back())) co[to] += count;
  }
  normalize_minmax(co);

  auto& sem = fm.values[2];
  sem.assign(n, 0.0);
  const std::size_t window = std::min(params.recent_window, idx.size());
  if (window > 0) {
    std::vector<double> acc(stats.titles().dim(), 0.0);
    for (std::size_t k = idx.size() - window; k < idx.size(); ++k) {
      const auto& e = stats.titles().at(idx[k]).values();
      for (std::size_t d = 0; d < acc.size(); ++d) acc[d] += e[d];
    }
    for (double& x : acc) x /= static_cast<double>(window);
    const Embedding recent = Embedding(std::move(acc)).normalized();
    for (std::size_t j = 0; j < n; ++j) sem[j] = cosine(stats.titles().at(j), recent);
  }
  normalize_minmax(sem);

  auto& rec = fm.values[3];
  rec.assign(n, 0.0);
  for (std::size_t k = 1; k <= window; ++k) {
    const double decay = 1.0 / static_cast<double>(k);
    for (const auto& [to, count] : stats.transitions(idx[idx.size() - k])) rec[to] += decay * count;
  }
  normalize_minmax(rec);
  return fm;
}

namespace {

const std::vector<double>& projection(std::uint64_t seed, std::size_t dim) {
  static std::mutex mutex;
  static std::map<std::pair<std::uint64_t, std::size_t>, std::vector<double>> cache;
  std::lock_guard lock(mutex);
  auto key = std::make_pair(seed, dim);
  auto it = cache.find(key);
  if (it != cache.end()) return it->second;
  Rng rng(derive_seed(seed, 0x9e0));
  std::vector<double> r(kNumFeatures * dim);
  for (double& x : r) x = rng.normal();
  return cache.emplace(key, std::move(r)).first->second;
}

}  // namespace

FeatureWeights prompt_weights(std::string_view prompt, const TextEmbedder& embedder, const RecommenderParams& params) {
  if (!(params.tau_w > 0.0)) throw ConfigError("tau_w must be positive");
  const Embedding e = embedder.embed(prompt);
  const auto& r = projection(params.projection_seed, e.dim());
  std::array<double, kNumFeatures> logits{};
  for (std::size_t f = 0; f < kNumFeatures; ++f) {
    double dot = 0.0;
    for (std::size_t d = 0; d < e.dim(); ++d) dot += r[f * e.dim() + d] * e[d];
    logits[f] = dot / params.tau_w;
  }
  const double max = *std::max_element(logits.begin(), logits.end());
  FeatureWeights w{};
  double sum = 0.0;
  for (std::size_t f = 0; f < kNumFeatures; ++f) {
    w[f] = std::exp(logits[f] - max);
    sum += w[f];
  }
  for (double& x : w) x /= sum;
  return w;
}

FeatureWeights normalize_weights(FeatureWeights weights) {
  double sum = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw ConfigError("feature weights must be finite and non-negative");
    sum += w;
  }
  if (!(sum > 0.0)) throw ConfigError("feature weights must not all be zero");
  for (double& w : weights) w /= sum;
  return weights;
}

PromptConditionedScorer::PromptConditionedScorer(std::shared_ptr<const FittedStats> stats, std::string prompt,
                                                 const TextEmbedder& embedder, RecommenderParams params)
    : stats_(std::move(stats)), weights_(prompt_weights(prompt, embedder, params)), params_(params) {
  if (!stats_) throw ConfigError("scorer requires fitted stats");
}

PromptConditionedScorer::PromptConditionedScorer(std::shared_ptr<const FittedStats> stats, FeatureWeights weights,
                                                 RecommenderParams params)
    : stats_(std::move(stats)), weights_(normalize_weights(weights)), params_(params) {
  if (!stats_) throw ConfigError("scorer requires fitted stats");
}

double PromptConditionedScorer::score(std::span<const std::string> sequence, std::string_view item) const {
  const std::size_t j = stats_->catalog().index_of(item);
  const FeatureMatrix fm = compute_features(*stats_, sequence, params_);
  double s = 0.0;
  for (std::size_t f = 0; f < kNumFeatures; ++f) s += weights_[f] * fm.values[f][j];
  return s;
}

std::vector<std::uint32_t> PromptConditionedScorer::rank_indices(const FeatureMatrix& features, std::size_t k) const {
  const std::size_t n = stats_->size();
  if (n == 0) throw ConfigError("cannot recommend from an empty catalog");
  if (k == 0) throw ConfigError("recommend requires K >= 1");
  std::vector<char> excluded(n, 0);
  if (params_.exclude_seen) {
    for (auto s : features.seen) excluded[s] = 1;
  }
  std::vector<double> scores(n, 0.0);
  for (std::size_t f = 0; f < kNumFeatures; ++f) {
    const double w = weights_[f];
    if (w == 0.0) continue;
    const auto& col = features.values[f];
    for (std::size_t j = 0; j < n; ++j) scores[j] += w * col[j];
  }
  // Scores that differ only by rounding noise count as ties.
  for (double& s : scores) s = std::nearbyint(s * 1e12);
  std::vector<std::uint32_t> cand;
  cand.reserve(n);
  for (std::size_t j = 0; j < n; ++j) {
    if (!excluded[j]) cand.push_back(static_cast<std::uint32_t>(j));
  }
  const std::size_t take = std::min(k, cand.size());
  auto better = [&](std::uint32_t a, std::uint32_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return stats_->id_rank(a) < stats_->id_rank(b);
  };
  std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(take), cand.end(), better);
  cand.resize(take);
  return cand;
}

RankedList PromptConditionedScorer::rank(const FeatureMatrix& features, std::size_t k) const {
  auto idx = rank_indices(features, k);
  RankedList out;
  out.items.reserve(idx.size());
  out.scores.reserve(idx.size());
  for (auto j : idx) {
    out.items.push_back(stats_->catalog().at(j).item_id);
    double s = 0.0;
    for (std::size_t f = 0; f < kNumFeatures; ++f) s += weights_[f] * features.values[f][j];
    out.scores.push_back(s);
  }
  return out;
}

RankedList PromptConditionedScorer::recommend(std::span<const std::string> sequence, std::size_t k) const {
  if (stats_->size() == 0) throw ConfigError("cannot recommend from an empty catalog");
  return rank(compute_features(*stats_, sequence, params_), k);
}

VictimHandle::VictimHandle(PromptConditionedScorer hidden, std::shared_ptr<QueryLedger> ledger)
    : hidden_(std::move(hidden)), ledger_(std::move(ledger)) {
  if (!ledger_) throw ConfigError("victim handle requires a ledger");
}

RankedList VictimHandle::query(std::span<const std::string> sequence, std::size_t k,
                               const std::string& endpoint) const {
  ledger_->charge(endpoint, 1);
  RankedList out = hidden_.recommend(sequence, k);
  out.scores.clear();
  return out;
}

std::vector<RankedList> VictimHandle::query_batch(const std::vector<std::vector<std::string>>& sequences,
                                                  std::size_t k, const std::string& endpoint) const {
  std::vector<RankedList> out;
  if (sequences.empty()) return out;
  ledger_->charge(endpoint, sequences.size());
  out.reserve(sequences.size());
  for (const auto& seq : sequences) {
    out.push_back(hidden_.recommend(seq, k));
    out.back().scores.clear();
  }
  return out;
}

}  // namespace promolab
