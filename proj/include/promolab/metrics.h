#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace promolab {

/// One (user, target) evaluation: the user's ranked list and the target.
struct EvalCase {
  std::vector<std::string> ranked;
  std::string target;
};

/// Mean over cases of 1[target in top-K].
double hit_ratio(const std::vector<EvalCase>& cases, std::size_t k);

/// Mean over cases of 1/log2(rank+1) for targets ranked within K, else 0.
double ndcg(const std::vector<EvalCase>& cases, std::size_t k);

/// Mean over paired inputs of |top-K(a) & top-K(b)| / K.
double agreement(const std::vector<std::vector<std::string>>& lists_a,
                 const std::vector<std::vector<std::string>>& lists_b, std::size_t k);

/// Gestalt pattern matching ratio 2M / (|a| + |b|); 1 for two empty strings.
double title_similarity(std::string_view a, std::string_view b);

}  // namespace promolab
