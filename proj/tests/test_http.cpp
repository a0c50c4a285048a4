#include <gtest/gtest.h>

#include <atomic>
#include <chrono>
#include <cmath>

#include "fake_server.h"
#include "promolab/common.h"
#include "promolab/http.h"
#include "promolab/textops.h"

using namespace promolab;
using promolab::testing::FakeServer;

namespace {

HttpEndpoint endpoint(const std::string& url, int retries = 3) {
  HttpEndpoint ep;
  ep.base_url = url;
  ep.max_retries = retries;
  ep.backoff = std::chrono::milliseconds(5);
  ep.timeout = std::chrono::milliseconds(2000);
  return ep;
}

}  // namespace

TEST(HttpClient, PostsJsonWithBearerTokenAndPrefix) {
  FakeServer fake;
  std::string auth, content_type;
  fake.server().Post("/api/echo", [&](const httplib::Request& req, httplib::Response& res) {
    auth = req.get_header_value("Authorization");
    content_type = req.get_header_value("Content-Type");
    auto j = nlohmann::json::parse(req.body);
    res.set_content(nlohmann::json{{"got", j["x"]}}.dump(), "application/json");
  });
  fake.start();
  auto ep = endpoint(fake.url("/api/"));
  ep.api_key = "secret";
  HttpJsonClient c(ep);
  EXPECT_EQ(c.post("/echo", {{"x", 41}})["got"], 41);
  EXPECT_EQ(auth, "Bearer secret");
  EXPECT_EQ(content_type, "application/json");
}

TEST(HttpClient, RetriesTransientFailuresWithBackoff) {
  FakeServer fake;
  std::atomic<int> calls{0};
  fake.server().Post("/flaky", [&](const httplib::Request&, httplib::Response& res) {
    const int n = ++calls;
    if (n == 1) {
      res.status = 503;
    } else if (n == 2) {
      res.status = 429;
    } else {
      res.set_content(R"({"ok":true})", "application/json");
    }
  });
  fake.start();
  HttpJsonClient c(endpoint(fake.url()));
  auto t0 = std::chrono::steady_clock::now();
  EXPECT_TRUE(c.post("/flaky", nlohmann::json::object())["ok"].get<bool>());
  EXPECT_EQ(calls.load(), 3);
  // 5 ms then 10 ms of backoff.
  EXPECT_GE(std::chrono::steady_clock::now() - t0, std::chrono::milliseconds(15));
}

TEST(HttpClient, GivesUpAfterMaxRetries) {
  FakeServer fake;
  std::atomic<int> calls{0};
  fake.server().Post("/down", [&](const httplib::Request&, httplib::Response& res) {
    ++calls;
    res.status = 500;
  });
  fake.start();
  HttpJsonClient c(endpoint(fake.url(), 3));
  try {
    c.post("/down", nlohmann::json::object());
    FAIL();
  } catch (const TransportError& e) {
    EXPECT_TRUE(e.retriable());
  }
  EXPECT_EQ(calls.load(), 4);
}

TEST(HttpClient, ClientErrorsAreNotRetried) {
  FakeServer fake;
  std::atomic<int> calls{0};
  fake.server().Post("/bad", [&](const httplib::Request&, httplib::Response& res) {
    ++calls;
    res.status = 400;
  });
  fake.start();
  HttpJsonClient c(endpoint(fake.url()));
  try {
    c.post("/bad", nlohmann::json::object());
    FAIL();
  } catch (const TransportError& e) {
    EXPECT_FALSE(e.retriable());
  }
  EXPECT_EQ(calls.load(), 1);
}

TEST(HttpClient, NonJsonBodyIsFormatError) {
  FakeServer fake;
  fake.server().Post("/text", [&](const httplib::Request&, httplib::Response& res) {
    res.set_content("hello", "text/plain");
  });
  fake.start();
  HttpJsonClient c(endpoint(fake.url()));
  EXPECT_THROW(c.post("/text", nlohmann::json::object()), FormatError);
}

TEST(HttpClient, UnreachableHostIsRetriableTransportError) {
  int port;
  {
    FakeServer probe;
    port = std::stoi(probe.url().substr(probe.url().rfind(':') + 1));
  }
  HttpJsonClient c(endpoint("http://127.0.0.1:" + std::to_string(port), 1));
  try {
    c.post("/x", nlohmann::json::object());
    FAIL();
  } catch (const TransportError& e) {
    EXPECT_TRUE(e.retriable());
  }
  EXPECT_THROW(HttpJsonClient(endpoint("no-scheme")), ConfigError);
}

TEST(RemoteEmbedder, BatchRequestAndDimensionCheck) {
  FakeServer fake;
  fake.server().Post("/embeddings", [&](const httplib::Request& req, httplib::Response& res) {
    auto j = nlohmann::json::parse(req.body);
    nlohmann::json vectors = nlohmann::json::array();
    for (std::size_t i = 0; i < j["input"].size(); ++i) vectors.push_back({static_cast<double>(i + 1), 0.0, 1.0});
    res.set_content(nlohmann::json{{"vectors", vectors}}.dump(), "application/json");
  });
  fake.start();
  auto client = std::make_shared<HttpJsonClient>(endpoint(fake.url()));
  RemoteEmbedder e(client, "enc", 3);
  std::vector<std::string> texts = {"a", "b"};
  auto v = e.embed_batch(texts);
  ASSERT_EQ(v.size(), 2u);
  // Vectors come back L2-normalized: [2,0,1] / sqrt(5).
  EXPECT_NEAR(v[1][0], 2.0 / std::sqrt(5.0), 1e-12);
  RemoteEmbedder wrong(client, "enc", 4);
  EXPECT_THROW(wrong.embed("a"), FormatError);
}
