#include "promolab/http.h"

#include <thread>

#include <httplib.h>

#include "promolab/common.h"

namespace promolab {

HttpJsonClient::HttpJsonClient(HttpEndpoint endpoint) : endpoint_(std::move(endpoint)) {
  const std::string& url = endpoint_.base_url;
  auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw ConfigError("base URL needs a scheme: '" + url + "'");
  auto path_start = url.find('/', scheme_end + 3);
  if (path_start == std::string::npos) {
    origin_ = url;
  } else {
    origin_ = url.substr(0, path_start);
    prefix_ = url.substr(path_start);
    while (!prefix_.empty() && prefix_.back() == '/') prefix_.pop_back();
  }
}

nlohmann::json HttpJsonClient::post(const std::string& path, const nlohmann::json& body) const {
  const std::string full_path = prefix_ + path;
  const std::string payload = body.dump();
  httplib::Headers headers;
  if (!endpoint_.api_key.empty()) headers.emplace("Authorization", "Bearer " + endpoint_.api_key);

  auto delay = endpoint_.backoff;
  std::string last_error;
  for (int attempt = 0; attempt <= endpoint_.max_retries; ++attempt) {
    if (attempt > 0) {
      std::this_thread::sleep_for(delay);
      delay *= 2;
    }
    httplib::Client client(origin_);
    const auto secs = std::chrono::duration_cast<std::chrono::seconds>(endpoint_.timeout).count();
    client.set_connection_timeout(secs == 0 ? 1 : secs);
    client.set_read_timeout(secs == 0 ? 1 : secs);
    auto result = client.Post(full_path, headers, payload, "application/json");
    if (!result) {
      last_error = "connection to " + origin_ + " failed: " + httplib::to_string(result.error());
      continue;
    }
    const int status = result->status;
    if (status == 429 || status >= 500) {
      last_error = "HTTP " + std::to_string(status) + " from " + origin_ + full_path;
      continue;
    }
    if (status < 200 || status >= 300) {
      throw TransportError("HTTP " + std::to_string(status) + " from " + origin_ + full_path, false);
    }
    try {
      return nlohmann::json::parse(result->body);
    } catch (const nlohmann::json::exception& e) {
      throw FormatError("response from " + origin_ + full_path + " is not JSON: " + e.what());
    }
  }
  throw TransportError(last_error + " (after " + std::to_string(endpoint_.max_retries) + " retries)", true);
}

}  // namespace promolab
