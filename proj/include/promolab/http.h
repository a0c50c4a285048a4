#pragma once

#include <chrono>
#include <string>

#include <json.hpp>

namespace promolab {

struct HttpEndpoint {
  std::string base_url;  // scheme://host[:port][/prefix]
  std::string api_key;   // sent as a bearer token when non-empty
  std::chrono::milliseconds timeout{30000};
  int max_retries = 3;
  std::chrono::milliseconds backoff{200};  // doubled after each failed attempt
};

/// Minimal JSON-over-HTTP client with exponential backoff.
///
/// Connection failures, 429 and 5xx responses are retried up to
/// `max_retries` times; other non-2xx codes fail immediately. Each call opens
/// its own connection so concurrent calls are safe.
class HttpJsonClient {
 public:
  explicit HttpJsonClient(HttpEndpoint endpoint);

  nlohmann::json post(const std::string& path, const nlohmann::json& body) const;

  const HttpEndpoint& endpoint() const { return endpoint_; }

 private:
  HttpEndpoint endpoint_;
  std::string origin_;  // scheme://host:port
  std::string prefix_;  // path prefix from base_url
};

}  // namespace promolab
