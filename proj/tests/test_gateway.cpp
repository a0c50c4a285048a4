#include <gtest/gtest.h>

#include <atomic>
#include <set>
#include <sstream>
#include <thread>

#include "fake_server.h"
#include "promolab/common.h"
#include "promolab/gateway.h"
#include "promolab/http.h"
#include "promolab/textops.h"

using namespace promolab;

namespace {

std::vector<std::string> words(const std::string& s) {
  std::istringstream in(s);
  std::vector<std::string> out;
  for (std::string w; in >> w;) out.push_back(w);
  return out;
}

std::string joined(const std::vector<std::string>& w, std::size_t from, std::size_t to) {
  std::string out;
  for (std::size_t i = from; i < to; ++i) out += (out.empty() ? "" : " ") + w[i];
  return out;
}

TextOperatorRequest request(OperatorKind kind, std::vector<std::string> inputs, std::uint64_t seed = 1) {
  TextOperatorRequest r;
  r.kind = kind;
  r.inputs = std::move(inputs);
  r.seed = seed;
  return r;
}

}  // namespace

TEST(Ledger, CapBoundary) {
  QueryLedger l;
  l.set_cap("victim", 100);
  EXPECT_EQ(l.charge("victim", 100), 100u);
  EXPECT_THROW(l.charge("victim", 1), BudgetError);
  EXPECT_EQ(l.count("victim"), 100u);
  EXPECT_EQ(*l.remaining("victim"), 0u);
}

TEST(Ledger, RejectsZeroAndDoesNotPartiallyCharge) {
  QueryLedger l;
  l.set_cap("v", 100);
  EXPECT_THROW(l.charge("v", 0), ConfigError);
  l.charge("v", 40);
  try {
    l.charge("v", 61);
    FAIL();
  } catch (const BudgetError& e) {
    EXPECT_EQ(e.endpoint(), "v");
    EXPECT_EQ(e.cap(), 100u);
    EXPECT_EQ(e.attempted(), 101u);
  }
  EXPECT_EQ(l.count("v"), 40u);
  l.charge("v", 60);
  EXPECT_EQ(l.count("v"), 100u);
}

TEST(Ledger, UncappedAndSummary) {
  QueryLedger l;
  l.charge("llm/mutation", 3);
  EXPECT_FALSE(l.remaining("llm/mutation").has_value());
  auto s = l.summary();
  EXPECT_EQ(s["llm/mutation"]["count"], 3);
  EXPECT_TRUE(s["llm/mutation"]["cap"].is_null());
}

TEST(Ledger, ConcurrentChargesNeverExceedCap) {
  QueryLedger l;
  l.set_cap("v", 1000);
  std::atomic<int> ok{0}, rejected{0};
  std::vector<std::thread> threads;
  for (int t = 0; t < 8; ++t) {
    threads.emplace_back([&] {
      for (int i = 0; i < 200; ++i) {
        try {
          l.charge("v", 1);
          ++ok;
        } catch (const BudgetError&) {
          ++rejected;
        }
      }
    });
  }
  for (auto& t : threads) t.join();
  EXPECT_EQ(ok.load(), 1000);
  EXPECT_EQ(rejected.load(), 600);
  EXPECT_EQ(l.count("v"), 1000u);
}

TEST(Requests, ArityContracts) {
  EXPECT_THROW(validate_request(request(OperatorKind::crossover, {"only one"})), ConfigError);
  EXPECT_THROW(validate_request(request(OperatorKind::mutation, {})), ConfigError);
  EXPECT_NO_THROW(validate_request(request(OperatorKind::crossover, {"a", "b"})));
  auto lam = request(OperatorKind::lamarckian, {"demo"});
  lam.count = 8;
  EXPECT_EQ(expected_response_count(lam), 8u);
  EXPECT_EQ(expected_response_count(request(OperatorKind::crossover, {"a", "b"})), 2u);
  EXPECT_EQ(expected_response_count(request(OperatorKind::mutation, {"a", "b", "c"})), 3u);
  EXPECT_EQ(operator_kind_from_string("rewrite_title"), OperatorKind::rewrite_title);
  EXPECT_THROW(operator_kind_from_string("nope"), ConfigError);
}

TEST(MockCrossover, SpliceAtShiftedMidpoint) {
  const std::string a = "Predict the next item.";
  const std::string b = "Recommend one item from the list.";
  const std::uint64_t seed = 7;
  auto wa = words(a), wb = words(b);
  // Oracle: single sentences splice at the word midpoint moved by a seeded shift in {-1,0,1}.
  const long shift = static_cast<long>(splitmix64(seed) % 3) - 1;
  auto pivot = [&](std::size_t n) { return static_cast<std::size_t>(std::clamp<long>(n / 2 + shift, 1, n - 1)); };
  const std::size_t pa = pivot(wa.size()), pb = pivot(wb.size());
  const std::string c1 = joined(wa, 0, pa) + " " + joined(wb, pb, wb.size());
  const std::string c2 = joined(wb, 0, pb) + " " + joined(wa, pa, wa.size());
  EXPECT_EQ(mock_crossover(a, b, seed), (std::vector<std::string>{c1, c2}));
}

TEST(MockCrossover, SentenceLevelForMultiSentenceParents) {
  const std::string a = "First A. Second A. Third A. Fourth A.";
  const std::string b = "First B. Second B.";
  auto out = mock_crossover(a, b, 3);
  ASSERT_EQ(out.size(), 2u);
  const int shift = crossover_shift(3);
  const std::size_t pa = static_cast<std::size_t>(std::clamp(2 + shift, 1, 3));
  std::vector<std::string> sa = {"First A.", "Second A.", "Third A.", "Fourth A."};
  std::string c1;
  for (std::size_t i = 0; i < pa; ++i) c1 += sa[i] + " ";
  c1 += "Second B.";
  EXPECT_EQ(out[0], c1);
}

TEST(MockMutation, DeterministicAndChangesAToken) {
  for (std::uint64_t s = 0; s < 50; ++s) {
    const std::string p = "Recommend the next item the user will likely buy.";
    auto m = mock_mutation(p, s);
    EXPECT_EQ(m, mock_mutation(p, s));
    EXPECT_NE(tokenize(m), tokenize(p)) << "seed " << s;
  }
  auto m = mock_mutation("zzz qqq", 5);
  EXPECT_NE(m, "zzz qqq");
}

TEST(MockLamarckian, DistinctAndDeterministic) {
  std::vector<std::string> demos = {"History: red lipstick; matte lipstick. Next: gloss.",
                                    "History: drill; saw. Next: drill bits."};
  auto a = mock_lamarckian(demos, 8, 3);
  EXPECT_EQ(a.size(), 8u);
  EXPECT_EQ(std::set<std::string>(a.begin(), a.end()).size(), 8u);
  EXPECT_EQ(a, mock_lamarckian(demos, 8, 3));
  bool mentions_demo_token = false;
  for (const auto& t : a) mentions_demo_token |= t.find("lipstick") != std::string::npos;
  EXPECT_TRUE(mentions_demo_token);
}

TEST(MockExtractPatterns, MostFrequentTokenFirst) {
  std::vector<std::string> titles = {"Brand Waterproof Mascara", "Waterproof Eyeliner Black",
                                     "Liner Waterproof Long Wear"};
  auto p = mock_extract_patterns(titles, 3);
  ASSERT_FALSE(p.empty());
  EXPECT_EQ(p[0], "waterproof");
  auto skipped = mock_extract_patterns(titles, 3, {"waterproof"});
  EXPECT_NE(skipped[0], "waterproof");
  EXPECT_THROW(mock_extract_patterns({}, 3), ConfigError);
}

TEST(MockRewrite, KeepsCoreTokensAndInjectsAtMostTwo) {
  const std::string title = "Sorme Eyebrow Pencil Soft Gray";
  std::vector<std::string> core = {"sorme", "gray"};
  std::vector<std::string> patterns = {"waterproof", "long", "wearing", "pencil"};
  auto out = mock_rewrite_title(title, core, patterns, 6, 11);
  ASSERT_EQ(out.size(), 6u);
  for (const auto& c : out) {
    auto toks = tokenize(c);
    for (const auto& t : core) EXPECT_TRUE(toks.count(t)) << c;
    std::size_t added = 0;
    for (const auto& t : toks) added += !tokenize(title).count(t);
    EXPECT_GE(added, 1u);
    EXPECT_LE(added, 2u);
  }
  EXPECT_EQ(out, mock_rewrite_title(title, core, patterns, 6, 11));
}

TEST(ParseCandidates, StripsListMarkup) {
  EXPECT_EQ(parse_candidate_lines("1. first\n2) \"second\"\n- third\n\n* fourth  \n"),
            (std::vector<std::string>{"first", "second", "third", "fourth"}));
}

TEST(Templates, BundledRenderPlaceholders) {
  auto set = TemplateSet::load(std::filesystem::path(PROMOLAB_ASSET_DIR) / "templates", 1);
  auto r = request(OperatorKind::rewrite_title, {"Old Title"});
  r.core_tokens = {"old"};
  r.patterns = {"waterproof"};
  r.count = 3;
  auto text = set.render(r);
  EXPECT_NE(text.find("Old Title"), std::string::npos);
  EXPECT_NE(text.find("waterproof"), std::string::npos);
  EXPECT_EQ(text.find("{{"), std::string::npos);
  EXPECT_THROW(TemplateSet::load("/nonexistent", 1), ConfigError);
}

TEST(Gateway, ChargesPerInvokeAndMocksArePure) {
  auto ledger = std::make_shared<QueryLedger>();
  Gateway g(std::make_shared<MockTextOperator>(), ledger);
  auto r = request(OperatorKind::mutation, {"Predict the next item.", "Recommend one item."}, 9);
  auto a = g.invoke(r);
  auto b = g.invoke(r);
  EXPECT_EQ(a, b);
  EXPECT_EQ(a.size(), 2u);
  EXPECT_EQ(ledger->count("llm/mutation"), 2u);
  EXPECT_THROW(g.invoke(request(OperatorKind::crossover, {"x"})), ConfigError);
  EXPECT_EQ(ledger->count("llm/crossover"), 0u);
}

TEST(Gateway, CappedOperatorEndpoint) {
  auto ledger = std::make_shared<QueryLedger>();
  ledger->set_cap("llm/mutation", 1);
  Gateway g(std::make_shared<MockTextOperator>(), ledger);
  g.invoke(request(OperatorKind::mutation, {"a b"}));
  EXPECT_THROW(g.invoke(request(OperatorKind::mutation, {"a b"})), BudgetError);
}

TEST(RemoteOperator, ChatCompletionRoundTripWithStricterRetry) {
  promolab::testing::FakeServer fake;
  std::atomic<int> calls{0};
  std::string last_body;
  fake.server().Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
    last_body = req.body;
    const int n = ++calls;
    // First answer is short so the operator retries with a stricter instruction.
    std::string content = n == 1 ? "1. only one" : "1. alpha prompt\n2. beta prompt";
    nlohmann::json j = {{"choices", {{{"message", {{"role", "assistant"}, {"content", content}}}}}}};
    res.set_content(j.dump(), "application/json");
  });
  fake.start();
  HttpEndpoint ep;
  ep.base_url = fake.url("/v1");
  ep.backoff = std::chrono::milliseconds(1);
  auto client = std::make_shared<HttpJsonClient>(ep);
  RemoteTextOperator op(client, "test-model",
                        TemplateSet::load(std::filesystem::path(PROMOLAB_ASSET_DIR) / "templates", 1));
  auto out = op.invoke(request(OperatorKind::crossover, {"a", "b"}));
  EXPECT_EQ(out, (std::vector<std::string>{"alpha prompt", "beta prompt"}));
  EXPECT_EQ(calls.load(), 2);
  auto body = nlohmann::json::parse(last_body);
  EXPECT_EQ(body["model"], "test-model");
  EXPECT_EQ(body["messages"][0]["role"], "user");
  EXPECT_NE(body["messages"][0]["content"].get<std::string>().find("exactly 2"), std::string::npos);
}

TEST(RemoteOperator, MalformedResponseIsFormatError) {
  promolab::testing::FakeServer fake;
  fake.server().Post("/chat/completions", [&](const httplib::Request&, httplib::Response& res) {
    res.set_content(R"({"unexpected": true})", "application/json");
  });
  fake.start();
  HttpEndpoint ep;
  ep.base_url = fake.url();
  RemoteTextOperator op(std::make_shared<HttpJsonClient>(ep), "m",
                        TemplateSet::load(std::filesystem::path(PROMOLAB_ASSET_DIR) / "templates", 1));
  EXPECT_THROW(op.invoke(request(OperatorKind::mutation, {"x"})), FormatError);
}
