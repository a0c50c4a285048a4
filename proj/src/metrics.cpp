#include "promolab/metrics.h"

#include <algorithm>
#include <cmath>
#include <set>

#include "promolab/common.h"

namespace promolab {

namespace {

void check_cases(const std::vector<EvalCase>& cases, std::size_t k) {
  if (k == 0) throw ConfigError("metric cutoff K must be >= 1");
  if (cases.empty()) throw ConfigError("empty evaluation set");
}

// 1-based rank of the target within the top K, 0 when absent.
std::size_t rank_within(const EvalCase& c, std::size_t k) {
  const std::size_t n = std::min(k, c.ranked.size());
  for (std::size_t i = 0; i < n; ++i) {
    if (c.ranked[i] == c.target) return i + 1;
  }
  return 0;
}

std::size_t matched_chars(std::string_view a, std::string_view b) {
  if (a.empty() || b.empty()) return 0;
  // Longest common substring; earliest in a, then earliest in b.
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  std::size_t best = 0, best_i = 0, best_j = 0;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : 0;
      if (cur[j] > best) {
        best = cur[j];
        best_i = i - best;
        best_j = j - best;
      }
    }
    std::swap(prev, cur);
  }
  if (best == 0) return 0;
  return best + matched_chars(a.substr(0, best_i), b.substr(0, best_j)) +
         matched_chars(a.substr(best_i + best), b.substr(best_j + best));
}

}  // namespace

double hit_ratio(const std::vector<EvalCase>& cases, std::size_t k) {
  check_cases(cases, k);
  std::size_t hits = 0;
  for (const auto& c : cases) hits += rank_within(c, k) > 0;
  return static_cast<double>(hits) / static_cast<double>(cases.size());
}

double ndcg(const std::vector<EvalCase>& cases, std::size_t k) {
  check_cases(cases, k);
  double sum = 0.0;
  for (const auto& c : cases) {
    if (const std::size_t r = rank_within(c, k)) sum += 1.0 / std::log2(static_cast<double>(r) + 1.0);
  }
  return sum / static_cast<double>(cases.size());
}

double agreement(const std::vector<std::vector<std::string>>& lists_a,
                 const std::vector<std::vector<std::string>>& lists_b, std::size_t k) {
  if (k == 0) throw ConfigError("metric cutoff K must be >= 1");
  if (lists_a.size() != lists_b.size()) {
    throw ConfigError("agreement needs paired lists, got " + std::to_string(lists_a.size()) + " and " +
                      std::to_string(lists_b.size()));
  }
  if (lists_a.empty()) throw ConfigError("empty evaluation set");
  double sum = 0.0;
  for (std::size_t u = 0; u < lists_a.size(); ++u) {
    const auto& a = lists_a[u];
    const auto& b = lists_b[u];
    const std::size_t ka = std::min(k, a.size()), kb = std::min(k, b.size());
    if (ka <= 16) {
      std::size_t shared = 0;
      const auto a_end = a.begin() + static_cast<std::ptrdiff_t>(ka);
      const auto b_end = b.begin() + static_cast<std::ptrdiff_t>(kb);
      for (auto it = a.begin(); it != a_end; ++it) {
        if (std::find(a.begin(), it, *it) != it) continue;
        shared += std::find(b.begin(), b_end, *it) != b_end;
      }
      sum += static_cast<double>(shared) / static_cast<double>(k);
      continue;
    }
    std::vector<std::string_view> top_a(a.begin(), a.begin() + static_cast<std::ptrdiff_t>(std::min(k, a.size())));
    std::sort(top_a.begin(), top_a.end());
    top_a.erase(std::unique(top_a.begin(), top_a.end()), top_a.end());
    std::vector<bool> taken(top_a.size(), false);
    std::size_t shared = 0;
    for (std::size_t i = 0; i < std::min(k, b.size()); ++i) {
      auto it = std::lower_bound(top_a.begin(), top_a.end(), std::string_view(b[i]));
      if (it == top_a.end() || *it != b[i]) continue;
      const auto pos = static_cast<std::size_t>(it - top_a.begin());
      if (!taken[pos]) {
        taken[pos] = true;
        ++shared;
      }
    }
    sum += static_cast<double>(shared) / static_cast<double>(k);
  }
  return sum / static_cast<double>(lists_a.size());
}

double title_similarity(std::string_view a, std::string_view b) {
  if (a.empty() && b.empty()) return 1.0;
  return 2.0 * static_cast<double>(matched_chars(a, b)) / static_cast<double>(a.size() + b.size());
}

}  // namespace promolab
