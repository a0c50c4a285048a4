#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <string_view>
#include <vector>

// Brute-force reference implementations used by unit and acceptance tests.
namespace promolab::oracle {

/// Every ordered list without repeats of length <= max_len over items "a", "b", ...
inline std::vector<std::vector<std::string>> all_lists(std::size_t n_items, std::size_t max_len) {
  std::vector<std::vector<std::string>> out{{}};
  std::vector<std::vector<std::string>> frontier{{}};
  for (std::size_t len = 1; len <= max_len; ++len) {
    std::vector<std::vector<std::string>> next;
    for (const auto& l : frontier) {
      for (std::size_t i = 0; i < n_items; ++i) {
        std::string id(1, static_cast<char>('a' + i));
        bool used = false;
        for (const auto& x : l) used = used || x == id;
        if (used) continue;
        auto e = l;
        e.push_back(id);
        next.push_back(e);
      }
    }
    out.insert(out.end(), next.begin(), next.end());
    frontier = std::move(next);
  }
  return out;
}

inline double hit(const std::vector<std::string>& list, const std::string& target, std::size_t k) {
  for (std::size_t i = 0; i < list.size() && i < k; ++i)
    if (list[i] == target) return 1.0;
  return 0.0;
}

inline double ndcg(const std::vector<std::string>& list, const std::string& target, std::size_t k) {
  for (std::size_t i = 0; i < list.size() && i < k; ++i)
    if (list[i] == target) return 1.0 / std::log2(static_cast<double>(i + 2));
  return 0.0;
}

inline double overlap(const std::vector<std::string>& a, const std::vector<std::string>& b, std::size_t k) {
  std::size_t shared = 0;
  for (std::size_t i = 0; i < a.size() && i < k; ++i)
    for (std::size_t j = 0; j < b.size() && j < k; ++j) shared += a[i] == b[j];
  return static_cast<double>(shared) / static_cast<double>(k);
}

/// overlap(a, b, k) for k = 1..max_k in one pass: an item at rank i in a
/// and rank j in b is shared for every k > max(i, j).
inline std::vector<double> overlap_curve(const std::vector<std::string>& a, const std::vector<std::string>& b,
                                         std::size_t max_k) {
  std::vector<std::size_t> shared(max_k + 1, 0);
  for (std::size_t i = 0; i < a.size() && i < max_k; ++i)
    for (std::size_t j = 0; j < b.size() && j < max_k; ++j)
      if (a[i] == b[j]) ++shared[std::max(i, j) + 1];
  std::vector<double> out(max_k);
  std::size_t run = 0;
  for (std::size_t k = 1; k <= max_k; ++k) {
    run += shared[k];
    out[k - 1] = static_cast<double>(run) / static_cast<double>(k);
  }
  return out;
}

/// Matched characters of the recursive longest-common-substring decomposition.
/// Ties go to the earliest start in a, then in b.
inline std::size_t gestalt_matches(std::string_view a, std::string_view b) {
  std::size_t best = 0, bi = 0, bj = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t j = 0; j < b.size(); ++j) {
      std::size_t n = 0;
      while (i + n < a.size() && j + n < b.size() && a[i + n] == b[j + n]) ++n;
      if (n > best) {
        best = n;
        bi = i;
        bj = j;
      }
    }
  }
  if (best == 0) return 0;
  return best + gestalt_matches(a.substr(0, bi), b.substr(0, bj)) +
         gestalt_matches(a.substr(bi + best), b.substr(bj + best));
}

inline double gestalt(const std::string& a, const std::string& b) {
  if (a.empty() && b.empty()) return 1.0;
  return 2.0 * static_cast<double>(gestalt_matches(a, b)) / static_cast<double>(a.size() + b.size());
}

/// Whitespace-separated words of s, duplicates included.
inline void split_words(std::string_view s, std::vector<std::string_view>& out) {
  out.clear();
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && s[i] == ' ') ++i;
    std::size_t j = i;
    while (j < s.size() && s[j] != ' ') ++j;
    if (j > i) out.push_back(s.substr(i, j - i));
    i = j;
  }
}

/// Jaccard over whitespace-separated words.
inline double jaccard_words(const std::string& a, const std::string& b) {
  thread_local std::vector<std::string_view> wa, wb;
  split_words(a, wa);
  split_words(b, wb);
  auto first = [](const std::vector<std::string_view>& w, std::size_t i) {
    for (std::size_t j = 0; j < i; ++j)
      if (w[j] == w[i]) return false;
    return true;
  };
  std::size_t na = 0, nb = 0, inter = 0;
  for (std::size_t i = 0; i < wa.size(); ++i) {
    if (!first(wa, i)) continue;
    ++na;
    for (const auto& y : wb)
      if (y == wa[i]) {
        ++inter;
        break;
      }
  }
  for (std::size_t i = 0; i < wb.size(); ++i) nb += first(wb, i);
  if (na == 0 && nb == 0) return 1.0;
  return static_cast<double>(inter) / static_cast<double>(na + nb - inter);
}

inline std::string join(const std::vector<std::string>& list, const std::string& sep) {
  std::string out;
  for (std::size_t i = 0; i < list.size(); ++i) {
    if (i) out += sep;
    out += list[i];
  }
  return out;
}

}  // namespace promolab::oracle
