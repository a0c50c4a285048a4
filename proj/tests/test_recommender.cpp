#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "promolab/common.h"
#include "promolab/gateway.h"
#include "promolab/recommender.h"
#include "testing.h"

using namespace promolab;
using promolab::testing::make_dataset;

namespace {

using Seq = std::vector<std::string>;

std::shared_ptr<const Catalog> ten_items() {
  std::vector<Item> items;
  const char* titles[] = {"red matte lipstick",  "matte liquid lipstick", "waterproof mascara black",
                          "eyebrow pencil gray", "cordless drill kit",    "drill bit set steel",
                          "garden hose green",   "lipstick gloss pink",   "mascara volume brush",
                          "hose nozzle spray"};
  // Ids deliberately not in catalog order so id ordering differs from index ordering.
  const char* ids[] = {"i07", "i03", "i09", "i01", "i05", "i00", "i08", "i02", "i06", "i04"};
  for (int i = 0; i < 10; ++i) items.push_back({ids[i], titles[i]});
  return std::make_shared<const Catalog>(std::move(items));
}

std::vector<Seq> ten_item_sequences() {
  return {{"i07", "i03", "i02", "i07"}, {"i09", "i06", "i01"}, {"i05", "i00", "i05", "i00", "i04"},
          {"i07", "i02", "i03"},        {"i08", "i04", "i08"}, {"i01", "i09", "i06", "i07", "i03"},
          {"i05", "i00"},               {"i02", "i07", "i03", "i09"}};
}

void minmax(std::vector<double>& v) {
  auto [lo, hi] = std::minmax_element(v.begin(), v.end());
  double a = *lo, b = *hi;
  for (double& x : v) x = b > a ? (x - a) / (b - a) : 0.0;
}

// Independent scorer working directly from raw sequences.
struct Oracle {
  const Catalog& catalog;
  const TextEmbedder& embedder;
  std::vector<Seq> train;
  RecommenderParams params;

  std::map<std::pair<std::string, std::string>, double> pairs() const {
    std::map<std::pair<std::string, std::string>, double> out;
    for (const auto& s : train)
      for (std::size_t i = 1; i < s.size(); ++i) out[{s[i - 1], s[i]}] += 1;
    return out;
  }

  std::vector<double> scores(const Seq& input, const FeatureWeights& w) const {
    const auto co = pairs();
    const std::size_t n = catalog.size();
    std::vector<double> pop(n, 0), cooc(n, params.alpha), sem(n, 0), rec(n, 0);
    for (const auto& s : train)
      for (const auto& i : s) pop[catalog.index_of(i)] += 1;
    const std::size_t m = std::min(params.recent_window, input.size());
    std::vector<double> mean(embedder.dim(), 0);
    for (std::size_t k = input.size() - m; k < input.size(); ++k) {
      auto e = embedder.embed(catalog.title_of(input[k]));
      for (std::size_t d = 0; d < mean.size(); ++d) mean[d] += e[d] / m;
    }
    Embedding recent(mean);
    for (std::size_t j = 0; j < n; ++j) {
      const auto& id = catalog.at(j).item_id;
      if (!input.empty()) {
        auto it = co.find({input.back(), id});
        if (it != co.end()) cooc[j] += it->second;
      }
      if (m > 0) sem[j] = cosine(embedder.embed(catalog.at(j).title), recent);
      for (std::size_t k = 1; k <= m; ++k) {
        auto it = co.find({input[input.size() - k], id});
        if (it != co.end()) rec[j] += it->second / static_cast<double>(k);
      }
    }
    minmax(pop);
    minmax(cooc);
    minmax(sem);
    minmax(rec);
    std::vector<double> out(n);
    for (std::size_t j = 0; j < n; ++j) out[j] = w[0] * pop[j] + w[1] * cooc[j] + w[2] * sem[j] + w[3] * rec[j];
    return out;
  }

  Seq recommend(const Seq& input, const FeatureWeights& w, std::size_t k) const {
    auto sc = scores(input, w);
    std::vector<std::size_t> order;
    for (std::size_t j = 0; j < catalog.size(); ++j)
      if (!params.exclude_seen || std::find(input.begin(), input.end(), catalog.at(j).item_id) == input.end())
        order.push_back(j);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      if (sc[a] != sc[b]) return sc[a] > sc[b];
      return catalog.at(a).item_id < catalog.at(b).item_id;
    });
    Seq out;
    for (std::size_t i = 0; i < std::min(k, order.size()); ++i) out.push_back(catalog.at(order[i]).item_id);
    return out;
  }
};

std::vector<InteractionSequence> as_sequences(const std::vector<Seq>& seqs) {
  std::vector<InteractionSequence> out;
  for (std::size_t i = 0; i < seqs.size(); ++i) out.push_back({"u" + std::to_string(i), seqs[i]});
  return out;
}

}  // namespace

TEST(FitStats, CountsAdjacentPairs) {
  HashingEmbedder e(64);
  auto cat = promolab::testing::make_catalog({"a", "b", "c"});
  auto s = fit_stats(make_dataset(cat, {{"a", "b"}, {"a", "b"}}), e);
  EXPECT_EQ(s->cooccurrence(0, 1), 2.0);
  EXPECT_EQ(s->cooccurrence(1, 0), 0.0);
  auto single = fit_stats(make_dataset(cat, {{"a"}, {"b"}}), e);
  EXPECT_EQ(single->num_transitions(), 0u);
  Dataset empty(cat, {});
  EXPECT_THROW(fit_stats(empty, e), Error);
}

TEST(FitStats, MatchesPairEnumerationAndFingerprint) {
  HashingEmbedder e(64);
  auto cat = ten_items();
  auto seqs = as_sequences(ten_item_sequences());
  auto stats = fit_stats(seqs, cat, e);
  std::map<std::pair<std::size_t, std::size_t>, double> oracle;
  for (const auto& s : seqs)
    for (std::size_t i = 1; i < s.items.size(); ++i) oracle[{cat->index_of(s.items[i - 1]), cat->index_of(s.items[i])}] += 1;
  for (std::size_t a = 0; a < 10; ++a)
    for (std::size_t b = 0; b < 10; ++b) {
      auto it = oracle.find({a, b});
      EXPECT_EQ(stats->cooccurrence(a, b), it == oracle.end() ? 0.0 : it->second);
    }
  EXPECT_EQ(stats->fingerprint(), fingerprint(*cat, seqs));
}

TEST(FitStats, JsonSnapshotRoundTrip) {
  HashingEmbedder e(64);
  auto cat = ten_items();
  auto stats = fit_stats(as_sequences(ten_item_sequences()), cat, e);
  auto back = FittedStats::from_json(stats->to_json(), cat, e);
  EXPECT_EQ(back->fingerprint(), stats->fingerprint());
  PromptConditionedScorer a(stats, FeatureWeights{0.1, 0.4, 0.3, 0.2}), b(back, FeatureWeights{0.1, 0.4, 0.3, 0.2});
  Seq in = {"i07", "i03"};
  EXPECT_EQ(a.recommend(in, 10).items, b.recommend(in, 10).items);
}

TEST(PromptWeights, SimplexAndDeterminism) {
  HashingEmbedder e(256);
  for (const char* p : {"Recommend the next item.", "", "popular products first", "x y z"}) {
    auto w = prompt_weights(p, e, {});
    double sum = 0;
    for (double x : w) {
      EXPECT_GE(x, 0.0);
      sum += x;
    }
    EXPECT_NEAR(sum, 1.0, 1e-9);
    EXPECT_EQ(w, prompt_weights(p, e, {}));
  }
  RecommenderParams bad;
  bad.tau_w = 0;
  EXPECT_THROW(prompt_weights("x", e, bad), ConfigError);
}

TEST(PromptWeights, EqualEmbeddingsGiveEqualWeights) {
  HashingEmbedder e(256);
  // Case and punctuation do not change the token stream, so embeddings coincide.
  EXPECT_EQ(cosine(e.embed("Recommend the NEXT item!"), e.embed("recommend the next item")), 1.0);
  EXPECT_EQ(prompt_weights("Recommend the NEXT item!", e, {}), prompt_weights("recommend the next item", e, {}));
}

TEST(Scorer, DegenerateWeights) {
  HashingEmbedder e(64);
  auto cat = ten_items();
  auto stats = fit_stats(as_sequences(ten_item_sequences()), cat, e);
  PromptConditionedScorer pop(stats, FeatureWeights{1, 0, 0, 0});
  Seq in = {"i05"};
  auto table = PopularityTable(*cat, as_sequences(ten_item_sequences()));
  Seq expected;
  for (const auto& id : table.ranking())
    if (id != "i05") expected.push_back(id);
  EXPECT_EQ(pop.recommend(in, 9).items, expected);
  EXPECT_EQ(pop.recommend(in, 1).items, Seq{expected.front()});

  PromptConditionedScorer co(stats, FeatureWeights{0, 1, 0, 0});
  // i05 -> i00 twice, nothing else follows i05.
  EXPECT_EQ(co.recommend(in, 1).items, Seq{"i00"});
}

TEST(Scorer, ExhaustiveOracleOnTenItems) {
  HashingEmbedder e(64);
  auto cat = ten_items();
  auto seqs = ten_item_sequences();
  auto stats = fit_stats(as_sequences(seqs), cat, e);
  Oracle oracle{*cat, e, seqs, {}};
  Rng rng(3);
  for (int trial = 0; trial < 2000; ++trial) {
    FeatureWeights w{};
    for (double& x : w) x = rng.uniform() + 1e-3;
    w = normalize_weights(w);
    Seq in;
    const std::size_t len = 1 + rng.index(5);
    for (std::size_t i = 0; i < len; ++i) in.push_back(cat->at(rng.index(10)).item_id);
    PromptConditionedScorer s(stats, w);
    const std::size_t k = 1 + rng.index(12);
    auto sc = oracle.scores(in, w);
    EXPECT_EQ(s.recommend(in, k).items, oracle.recommend(in, w, k)) << "trial " << trial;
    for (std::size_t j = 0; j < 10; ++j) EXPECT_NEAR(s.score(in, cat->at(j).item_id), sc[j], 1e-12);
  }
}

TEST(Scorer, SeenExclusionFlagAndLengths) {
  HashingEmbedder e(64);
  auto cat = ten_items();
  auto stats = fit_stats(as_sequences(ten_item_sequences()), cat, e);
  RecommenderParams keep;
  keep.exclude_seen = false;
  PromptConditionedScorer excl(stats, FeatureWeights{0.25, 0.25, 0.25, 0.25});
  PromptConditionedScorer incl(stats, FeatureWeights{0.25, 0.25, 0.25, 0.25}, keep);
  Seq in = {"i07", "i03", "i07"};
  EXPECT_EQ(excl.recommend(in, 100).items.size(), 8u);
  EXPECT_EQ(incl.recommend(in, 100).items.size(), 10u);
  Oracle o{*cat, e, ten_item_sequences(), keep};
  EXPECT_EQ(incl.recommend(in, 10).items, o.recommend(in, {0.25, 0.25, 0.25, 0.25}, 10));
  EXPECT_THROW(excl.score(in, "nope"), ConfigError);
  auto list = excl.recommend(in, 5);
  std::set<std::string> uniq(list.items.begin(), list.items.end());
  EXPECT_EQ(uniq.size(), list.items.size());
}

TEST(Scorer, RankingInvariantUnderFeatureShift) {
  // min-max normalization absorbs a constant shift: adding the same offset to every
  // popularity count leaves rankings unchanged.
  HashingEmbedder e(64);
  auto cat = ten_items();
  auto seqs = ten_item_sequences();
  std::vector<Seq> shifted = seqs;
  for (std::size_t j = 0; j < 10; ++j) shifted.push_back({cat->at(j).item_id});
  auto a = fit_stats(as_sequences(seqs), cat, e);
  auto b = fit_stats(as_sequences(shifted), cat, e);
  PromptConditionedScorer sa(a, FeatureWeights{0.4, 0.3, 0.2, 0.1}), sb(b, FeatureWeights{0.4, 0.3, 0.2, 0.1});
  for (const auto& in : seqs) EXPECT_EQ(sa.recommend(in, 10).items, sb.recommend(in, 10).items);
}

TEST(Scorer, NormalizeMinmaxConstantIsZero) {
  std::vector<double> v = {3, 3, 3};
  normalize_minmax(v);
  EXPECT_EQ(v, (std::vector<double>{0, 0, 0}));
  std::vector<double> w = {1, 3, 2};
  normalize_minmax(w);
  EXPECT_EQ(w, (std::vector<double>{0, 1, 0.5}));
  EXPECT_THROW(normalize_weights({0, 0, 0, 0}), ConfigError);
  EXPECT_THROW(normalize_weights({-1, 1, 0, 0}), ConfigError);
}

TEST(Victim, BudgetBoundaryAndAccounting) {
  HashingEmbedder e(64);
  auto cat = ten_items();
  auto stats = fit_stats(as_sequences(ten_item_sequences()), cat, e);
  auto ledger = std::make_shared<QueryLedger>();
  ledger->set_cap(VictimHandle::kAttackEndpoint, 10);
  const std::string hidden = "secret instruction about lipstick";
  VictimHandle v(PromptConditionedScorer(stats, hidden, e), ledger);
  Seq in = {"i07"};
  auto first = v.query(in, 5);
  EXPECT_TRUE(first.scores.empty());
  EXPECT_EQ(v.query(in, 5).items, first.items);
  EXPECT_EQ(ledger->count("victim"), 2u);
  for (int i = 0; i < 8; ++i) v.query(in, 5);
  try {
    v.query(in, 5);
    FAIL();
  } catch (const BudgetError& err) {
    EXPECT_EQ(std::string(err.what()).find(hidden), std::string::npos);
  }
  // Uncapped evaluation endpoint is metered separately.
  v.query(in, 5, VictimHandle::kEvalEndpoint);
  EXPECT_EQ(ledger->count("victim_eval"), 1u);
}

TEST(Victim, BatchChargesAllOrNothingAndMatchesTwin) {
  HashingEmbedder e(64);
  auto cat = ten_items();
  auto stats = fit_stats(as_sequences(ten_item_sequences()), cat, e);
  auto ledger = std::make_shared<QueryLedger>();
  ledger->set_cap("victim", 5);
  const std::string hidden = "recommend similar products the customer will buy next";
  VictimHandle v(PromptConditionedScorer(stats, hidden, e), ledger);
  PromptConditionedScorer twin(stats, hidden, e);
  std::vector<Seq> batch = {{"i07"}, {"i05", "i00"}, {"i09", "i06"}};
  auto out = v.query_batch(batch, 4);
  for (std::size_t i = 0; i < batch.size(); ++i) EXPECT_EQ(out[i].items, twin.recommend(batch[i], 4).items);
  EXPECT_THROW(v.query_batch(batch, 4), BudgetError);
  EXPECT_EQ(ledger->count("victim"), 3u);
}
