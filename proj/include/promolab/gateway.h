#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace promolab {

class HttpJsonClient;

enum class OperatorKind { lamarckian, crossover, mutation, extract_patterns, rewrite_title };

std::string_view to_string(OperatorKind kind);
OperatorKind operator_kind_from_string(std::string_view name);

struct TextOperatorRequest {
  OperatorKind kind = OperatorKind::mutation;
  std::vector<std::string> inputs;
  std::uint64_t seed = 0;
  double temperature = 0.7;
  std::size_t max_length = 400;  // characters per generated text
  /// lamarckian: population size; rewrite_title: candidates; extract_patterns: top-p tokens.
  std::size_t count = 1;
  /// rewrite_title: tokens every candidate must keep. extract_patterns: tokens to skip.
  std::vector<std::string> core_tokens;
  /// rewrite_title: ranked anchor-pattern tokens to draw from.
  std::vector<std::string> patterns;
};

/// Throws ConfigError when the request violates its kind's arity contract.
void validate_request(const TextOperatorRequest& request);

/// Number of texts a conforming backend must return for `request`
/// (extract_patterns returns at least one and is checked separately).
std::size_t expected_response_count(const TextOperatorRequest& request);

/// Per-endpoint query counters with optional hard caps. All methods are
/// thread-safe; a charge either applies in full or not at all.
class QueryLedger {
 public:
  void set_cap(const std::string& endpoint, std::optional<std::uint64_t> cap);

  /// Adds n to the endpoint's counter and returns the new total. Throws
  /// ConfigError for n == 0 and BudgetError when the cap would be exceeded.
  std::uint64_t charge(const std::string& endpoint, std::uint64_t n = 1);

  std::uint64_t count(const std::string& endpoint) const;
  std::optional<std::uint64_t> cap(const std::string& endpoint) const;
  /// Remaining capacity, or nullopt for uncapped endpoints.
  std::optional<std::uint64_t> remaining(const std::string& endpoint) const;

  /// {endpoint: {count, cap}} in endpoint order.
  nlohmann::json summary() const;

 private:
  struct Counter {
    std::uint64_t count = 0;
    std::optional<std::uint64_t> cap;
    std::chrono::steady_clock::time_point last_charge{};
  };
  mutable std::mutex mutex_;
  std::map<std::string, Counter> counters_;
};

class TextOperator {
 public:
  virtual ~TextOperator() = default;
  virtual std::vector<std::string> invoke(const TextOperatorRequest& request) = 0;
};

/// Deterministic offline operators. Every output is a pure function of the
/// request.
class MockTextOperator final : public TextOperator {
 public:
  std::vector<std::string> invoke(const TextOperatorRequest& request) override;
};

// Individual mock transformations, exposed for direct testing.
std::vector<std::string> mock_lamarckian(const std::vector<std::string>& demos, std::size_t k, std::uint64_t seed);
std::vector<std::string> mock_crossover(const std::string& a, const std::string& b, std::uint64_t seed);
std::string mock_mutation(const std::string& text, std::uint64_t seed, std::size_t max_length = 400);
std::vector<std::string> mock_extract_patterns(const std::vector<std::string>& titles, std::size_t top_p,
                                               const std::vector<std::string>& excluded = {});
std::vector<std::string> mock_rewrite_title(const std::string& title, const std::vector<std::string>& core_tokens,
                                            const std::vector<std::string>& patterns, std::size_t n,
                                            std::uint64_t seed);

/// Pivot shift in {-1, 0, +1} applied to the midpoint of both parents.
int crossover_shift(std::uint64_t seed);

/// Operator prompt templates: one plain-text file per kind named
/// `<kind>.v<version>.txt` with {{placeholders}}.
class TemplateSet {
 public:
  static TemplateSet load(const std::filesystem::path& dir, int version = 1);

  void set(OperatorKind kind, std::string text) { templates_[kind] = std::move(text); }
  std::string render(const TextOperatorRequest& request) const;

 private:
  std::map<OperatorKind, std::string> templates_;
};

/// Chat-completion backed operators (OpenAI-compatible wire format).
class RemoteTextOperator final : public TextOperator {
 public:
  RemoteTextOperator(std::shared_ptr<HttpJsonClient> client, std::string model, TemplateSet templates,
                     std::string path = "/chat/completions");

  std::vector<std::string> invoke(const TextOperatorRequest& request) override;

 private:
  std::vector<std::string> complete(const std::string& prompt, const TextOperatorRequest& request);

  std::shared_ptr<HttpJsonClient> client_;
  std::string model_;
  TemplateSet templates_;
  std::string path_;
};

/// Split a completion into candidate lines, stripping bullets, numbering and quotes.
std::vector<std::string> parse_candidate_lines(const std::string& content);

/// Validating, metering front door to a TextOperator. Each invoke charges the
/// "llm/<kind>" endpoint of the ledger once.
class Gateway {
 public:
  Gateway(std::shared_ptr<TextOperator> backend, std::shared_ptr<QueryLedger> ledger);

  std::vector<std::string> invoke(const TextOperatorRequest& request);
  const std::shared_ptr<QueryLedger>& ledger() const { return ledger_; }

 private:
  std::shared_ptr<TextOperator> backend_;
  std::shared_ptr<QueryLedger> ledger_;
};

}  // namespace promolab
