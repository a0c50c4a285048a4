#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "promolab/common.h"
#include "promolab/poisonforge.h"
#include "testing.h"

using namespace promolab;
using promolab::testing::make_catalog;
using promolab::testing::make_dataset;
using promolab::testing::read_text;
using promolab::testing::TempDir;

namespace {

using Seq = std::vector<std::string>;

Dataset small_world() {
  SynthConfig sc;
  sc.n_users = 200;
  sc.n_items = 80;
  sc.seed = 21;
  return truncate(k_core_filter(synth_generate(sc), 5), 50);
}

Embedding mean_norm(const std::vector<Embedding>& vs) {
  std::vector<double> acc(vs.at(0).dim(), 0.0);
  for (const auto& v : vs)
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += v[i];
  double n = 0;
  for (double x : acc) n += x * x;
  n = std::sqrt(n);
  for (double& x : acc) x /= n;
  return Embedding(acc);
}

double dot(const Embedding& a, const Embedding& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.dim(); ++i) s += a[i] * b[i];
  return s;
}

// Shared world for the generator tests.
struct PoisonWorld {
  HashingEmbedder embedder{64};
  Dataset data = small_world();
  PromptConditionedScorer surrogate{fit_stats(data, embedder), "recommend items similar to recent purchases",
                                    embedder};
  TitleEmbeddings titles{data.catalog(), embedder};
  Embedding e_avg = avg_real_embedding(data, titles);
  PoisonConfig config;

  PoisonWorld() {
    config.targets = select_targets(data, 3);
    config.popular = top_fraction(popularity(data), 0.1);
    config.seed = 77;
  }
  PoisonContext ctx() const { return {surrogate, data.catalog(), titles, e_avg}; }
};

}  // namespace

TEST(PoisonConfig, Validation) {
  PoisonConfig c;
  c.targets = {"t"};
  EXPECT_NO_THROW(c.validate());
  c.budget = 0.11;
  EXPECT_THROW(c.validate(), ConfigError);
  c.budget = 0.02;
  c.top_j = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c.top_j = 10;
  c.targets.clear();
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(PoisonBudget, CeilOfFraction) {
  EXPECT_EQ(fake_user_count(0.02, 1000), 20u);
  EXPECT_EQ(fake_user_count(0.02, 1001), 21u);
  EXPECT_EQ(fake_user_count(0.0, 1000), 0u);
  EXPECT_EQ(fake_user_count(0.1, 7), 1u);
  auto cat = make_catalog({"a", "b", "c"});
  EXPECT_EQ(default_poison_length(make_dataset(cat, {{"a", "b", "c"}, {"a", "b"}})), 3u);
  EXPECT_EQ(default_poison_length(make_dataset(cat, {{"a"}})), 2u);
}

TEST(CandidatePool, UnionInOrderWithTargetsKept) {
  PoisonWorld w;
  Seq prefix = w.data.sequences().front().items;
  prefix.resize(3);
  const auto recs = w.surrogate.recommend(prefix, 3).items;
  ASSERT_EQ(recs.size(), 3u);

  // Fresh target and popular items outside recs and prefix.
  std::vector<std::string> others;
  for (const auto& item : w.data.catalog().items()) {
    const auto& id = item.item_id;
    if (std::find(recs.begin(), recs.end(), id) == recs.end() &&
        std::find(prefix.begin(), prefix.end(), id) == prefix.end())
      others.push_back(id);
  }
  const std::string t = others[0], p = others[1], q = others[2];
  auto pool = candidate_pool(prefix, w.surrogate, 3, {t}, {p, q});
  EXPECT_EQ(pool, (Seq{recs[0], recs[1], recs[2], t, p, q}));

  auto overlap = candidate_pool(prefix, w.surrogate, 3, {t}, {recs[0], q});
  EXPECT_EQ(overlap.size(), 5u);
  EXPECT_EQ(std::set<std::string>(overlap.begin(), overlap.end()),
            (std::set<std::string>{recs[0], recs[1], recs[2], t, q}));

  // A target already in the prefix stays in the pool.
  auto seen_target = candidate_pool(prefix, w.surrogate, 3, {prefix[0]}, {});
  EXPECT_NE(std::find(seen_target.begin(), seen_target.end(), prefix[0]), seen_target.end());

  EXPECT_THROW(candidate_pool(prefix, w.surrogate, 0, {t}, {}), ConfigError);
  EXPECT_THROW(candidate_pool(Seq{}, w.surrogate, 3, {t}, {}), ConfigError);
}

TEST(BehSim, CompletedSequenceAndDegenerateCases) {
  HashingEmbedder e(64);
  auto cat = std::make_shared<const Catalog>(std::vector<Item>{
      {"a", "waterproof eyebrow pencil"}, {"b", "matte red lipstick"}, {"c", "gel eye liner"}, {"d", "lip balm"}});
  TitleEmbeddings titles(*cat, e);
  auto one = make_dataset(cat, {{"a", "b", "c"}});
  auto e_avg = avg_real_embedding(one, titles);
  EXPECT_NEAR(beh_sim(Seq{"a", "b"}, "c", e_avg, *cat, titles), 1.0, 1e-12);

  auto zero = Embedding::zeros(64);
  for (const auto& id : {"a", "b", "c", "d"}) EXPECT_EQ(beh_sim(Seq{"a"}, id, zero, *cat, titles), 0.0);

  auto two = make_dataset(cat, {{"a", "b"}, {"c", "d"}});
  auto avg2 = avg_real_embedding(two, titles);
  const auto expected = dot(mean_norm({e.embed("matte red lipstick"), e.embed("lip balm")}),
                            mean_norm({mean_norm({e.embed("waterproof eyebrow pencil"), e.embed("matte red lipstick")}),
                                       mean_norm({e.embed("gel eye liner"), e.embed("lip balm")})}));
  EXPECT_NEAR(beh_sim(Seq{"b"}, "d", avg2, *cat, titles), expected, 1e-12);
  EXPECT_THROW(beh_sim(Seq{"a"}, "zz", e_avg, *cat, titles), ConfigError);
}

TEST(NextItem, ArgmaxWithTargetFirstTies) {
  HashingEmbedder e(64);
  // "x" and "t" share a title, so their scores tie exactly.
  auto cat = std::make_shared<const Catalog>(std::vector<Item>{
      {"a", "waterproof eyebrow pencil"}, {"t", "gel eye liner"}, {"x", "gel eye liner"}, {"y", "lip balm"}});
  TitleEmbeddings titles(*cat, e);
  auto e_avg = avg_real_embedding(make_dataset(cat, {{"a", "x"}}), titles);
  EXPECT_EQ(next_item(Seq{"a"}, {"y"}, e_avg, *cat, titles, {}), "y");
  EXPECT_EQ(next_item(Seq{"a"}, {"x", "t", "y"}, e_avg, *cat, titles, {"t"}), "t");
  EXPECT_EQ(next_item(Seq{"a"}, {"y", "x", "t"}, e_avg, *cat, titles, {}), "t");  // then ascending id
  EXPECT_THROW(next_item(Seq{"a"}, {}, e_avg, *cat, titles, {}), ConfigError);

  PoisonWorld w;
  Seq prefix = w.data.sequences()[3].items;
  prefix.resize(2);
  std::vector<std::string> pool;
  for (std::size_t i = 0; i < w.data.catalog().size(); i += 3) pool.push_back(w.data.catalog().at(i).item_id);
  PoisonStep step;
  auto got = next_item(prefix, pool, w.e_avg, w.data.catalog(), w.titles, {}, &step);
  std::string best;
  double best_score = -2;
  for (const auto& id : pool) {
    double s = beh_sim(prefix, id, w.e_avg, w.data.catalog(), w.titles);
    if (s > best_score || (s == best_score && id < best)) {
      best_score = s;
      best = id;
    }
  }
  EXPECT_EQ(got, best);
  EXPECT_EQ(step.chosen, got);
  EXPECT_EQ(step.pool, pool);
  ASSERT_EQ(step.scores.size(), pool.size());
}

TEST(GenerateSequence, SingleStepDeterministicAndLogged) {
  PoisonWorld w;
  auto s2 = generate_sequence(w.config, w.ctx(), 2, 5);
  ASSERT_EQ(s2.items.size(), 2u);
  ASSERT_EQ(s2.steps.size(), 1u);
  EXPECT_NE(std::find(w.config.popular.begin(), w.config.popular.end(), s2.items[0]), w.config.popular.end());
  EXPECT_EQ(s2.items[0], w.config.popular[Rng(5).index(w.config.popular.size())]);
  auto pool = candidate_pool(Seq{s2.items[0]}, w.surrogate, w.config.top_j, w.config.targets, w.config.popular);
  EXPECT_EQ(s2.steps[0].pool, pool);

  auto a = generate_sequence(w.config, w.ctx(), 8, 9);
  auto b = generate_sequence(w.config, w.ctx(), 8, 9);
  EXPECT_EQ(a.items, b.items);
  EXPECT_EQ(a.log_json(), b.log_json());
  for (std::size_t i = 0; i < a.steps.size(); ++i) {
    EXPECT_EQ(a.steps[i].chosen, a.items[i + 1]);
    for (const auto& t : w.config.targets) {
      EXPECT_NE(std::find(a.steps[i].pool.begin(), a.steps[i].pool.end(), t), a.steps[i].pool.end());
    }
  }
  EXPECT_THROW(generate_sequence(w.config, w.ctx(), 1, 9), ConfigError);
}

TEST(GenerateSequence, TargetGuaranteeForcesLastItem) {
  PoisonWorld w;
  // A target whose title never wins the argmax gets forced in at the end.
  w.config.targets = {w.config.targets.front()};
  bool saw_forced = false;
  for (std::uint64_t seed = 0; seed < 40 && !saw_forced; ++seed) {
    auto s = generate_sequence(w.config, w.ctx(), 4, seed, 0);
    const auto n = std::count(s.items.begin(), s.items.end(), w.config.targets[0]);
    EXPECT_GE(n, 1);
    if (s.forced) {
      saw_forced = true;
      EXPECT_EQ(s.items.back(), w.config.targets[0]);
      EXPECT_EQ(std::count(s.items.begin(), s.items.end() - 1, w.config.targets[0]), 0);
      EXPECT_NE(s.steps.back().chosen, "");
      EXPECT_TRUE(s.log_json()["forced"].get<bool>());
    }
  }
  w.config.guarantee_target = false;
  std::size_t without = 0;
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    auto s = generate_sequence(w.config, w.ctx(), 4, seed, 0);
    EXPECT_FALSE(s.forced);
    without += std::count(s.items.begin(), s.items.end(), w.config.targets[0]) == 0;
  }
  EXPECT_TRUE(saw_forced);
  EXPECT_GT(without, 0u);
}

TEST(GenerateDataset, BudgetNamespaceAndInvariants) {
  PoisonWorld w;
  w.config.budget = 0.02;
  auto d = generate_dataset(w.config, w.ctx(), 1000, 6);
  ASSERT_EQ(d.sequences.size(), 20u);
  std::set<std::string> ids;
  const std::set<std::string> pop(w.config.popular.begin(), w.config.popular.end());
  const std::set<std::string> tar(w.config.targets.begin(), w.config.targets.end());
  for (const auto& s : d.sequences) {
    ids.insert(s.user_id);
    EXPECT_EQ(s.user_id.rfind(kFakeUserPrefix, 0), 0u);
    EXPECT_EQ(s.items.size(), 6u);
    EXPECT_TRUE(pop.count(s.items.front()));
    EXPECT_TRUE(std::any_of(s.items.begin(), s.items.end(), [&](const auto& i) { return tar.count(i) > 0; }));
    for (const auto& i : s.items) EXPECT_TRUE(w.data.catalog().contains(i));
  }
  EXPECT_EQ(ids.size(), 20u);
  auto ds = d.to_dataset(w.data.catalog_ptr());
  EXPECT_EQ(ds.role(), DatasetRole::poison);
  w.config.budget = 0.0;
  EXPECT_TRUE(generate_dataset(w.config, w.ctx(), 1000, 6).sequences.empty());
}

TEST(RandomAttack, ForcedShapesAndDeterminism) {
  auto cat = make_catalog({"a", "b", "c", "t"});
  PoisonConfig c;
  c.targets = {"t"};
  c.budget = 0.1;
  auto one = random_attack(c, *cat, 10, 1);
  ASSERT_EQ(one.sequences.size(), 1u);
  EXPECT_EQ(one.sequences[0].items, Seq{"t"});
  auto a = random_attack(c, *cat, 100, 3);
  auto b = random_attack(c, *cat, 100, 3);
  ASSERT_EQ(a.sequences.size(), 10u);
  for (std::size_t i = 0; i < a.sequences.size(); ++i) {
    EXPECT_EQ(a.sequences[i].items, b.sequences[i].items);
    EXPECT_EQ(std::count(a.sequences[i].items.begin(), a.sequences[i].items.end(), "t"), 1);
    EXPECT_EQ(std::set<std::string>(a.sequences[i].items.begin(), a.sequences[i].items.end()).size(), 3u);
  }
  EXPECT_THROW(random_attack(c, *cat, 100, 5), ConfigError);
}

TEST(RandomAttack, FillerMarginalIsUniform) {
  std::vector<std::string> ids;
  for (int i = 0; i < 20; ++i) ids.push_back("i" + std::string(i < 10 ? "0" : "") + std::to_string(i));
  auto cat = make_catalog(ids);
  PoisonConfig c;
  c.targets = {"i00"};
  c.budget = 0.1;
  c.seed = 3;
  auto d = random_attack(c, *cat, 10000, 5);
  ASSERT_EQ(d.sequences.size(), 1000u);
  std::map<std::string, double> counts;
  for (const auto& s : d.sequences)
    for (const auto& i : s.items)
      if (i != "i00") counts[i] += 1;
  ASSERT_EQ(counts.size(), 19u);
  const double expected = 4000.0 / 19.0;
  double chi2 = 0;
  for (const auto& [id, n] : counts) chi2 += (n - expected) * (n - expected) / expected;
  EXPECT_LT(chi2, 34.805);  // chi-square 0.99 quantile, 18 degrees of freedom
}

TEST(BandwagonAttack, PopularFillersAndCooccurrenceGain) {
  PoisonWorld w;
  w.config.targets = {w.config.targets.front()};
  w.config.budget = 0.05;
  const std::size_t len = 4;
  auto d = bandwagon_attack(w.config, w.data.catalog(), w.data.num_users(), len);
  const std::set<std::string> pop(w.config.popular.begin(), w.config.popular.end());
  const auto& t = w.config.targets[0];
  ASSERT_EQ(d.sequences.size(), fake_user_count(0.05, w.data.num_users()));
  for (const auto& s : d.sequences) {
    EXPECT_EQ(s.items.size(), len);
    EXPECT_EQ(std::count(s.items.begin(), s.items.end(), t), 1);
    for (const auto& i : s.items)
      if (i != t) EXPECT_TRUE(pop.count(i));
  }
  auto pop_to_target = [&](const std::vector<InteractionSequence>& seqs) {
    std::size_t n = 0;
    for (const auto& s : seqs)
      for (std::size_t i = 0; i + 1 < s.items.size(); ++i) n += pop.count(s.items[i]) && s.items[i + 1] == t;
    return n;
  };
  auto before = w.data.sequences();
  auto after = before;
  for (const auto& s : d.sequences) after.push_back({s.user_id, s.items});
  EXPECT_GT(pop_to_target(after), pop_to_target(before));

  PoisonConfig empty = w.config;
  empty.popular.clear();
  EXPECT_THROW(bandwagon_attack(empty, w.data.catalog(), 100, 3), ConfigError);
}

TEST(WritePoison, InteractionsAndStepLog) {
  PoisonWorld w;
  auto d = generate_dataset(w.config, w.ctx(), 100, 4);
  TempDir dir("poison");
  write_poison(dir.path(), d);
  auto loaded = load_interactions(dir / "interactions.jsonl", w.data.catalog_ptr());
  ASSERT_EQ(loaded.num_users(), d.sequences.size());
  for (std::size_t i = 0; i < d.sequences.size(); ++i) EXPECT_EQ(loaded.sequences()[i].items, d.sequences[i].items);
  auto logs = nlohmann::json::parse(read_text(dir / "steps.json"));
  ASSERT_EQ(logs.size(), d.sequences.size());
  EXPECT_EQ(logs[0]["steps"].size(), 3u);
}
