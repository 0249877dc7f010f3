#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

#include "progress/evalstats/survival.hpp"

namespace progress::evalstats {

struct WilcoxonResult {
    double statistic = 0;  // W+, sum of ranks of positive differences
    int n = 0;             // nonzero differences used
    double p = 1;          // two-sided
    bool exact = false;
};

/// Paired signed-rank test on a - b. Zero differences are dropped and tied
/// |d| receive average ranks. Exact null distribution for n <= 20, normal
/// approximation with continuity and tie correction above. All-zero input gives
/// p = 1; fewer than 5 nonzero differences otherwise raise DataError.
WilcoxonResult wilcoxon_signed_rank(ConstVec a, ConstVec b, int exact_cutoff = 20);

struct BootstrapResult {
    double mean = 0;
    double lo = 0;
    double hi = 0;
    double p = 1;  // 2 min(P*(mean <= 0), P*(mean >= 0)), capped at 1
};

/// BCa interval for the mean of `diffs`; replicate b draws from the stream
/// derived from (seed, b).
BootstrapResult bootstrap_bca(ConstVec diffs, int replicates = 10000, double level = 0.95, std::uint64_t seed = 0);

/// Sign-flip test on paired differences. When 2^n <= permutations every sign
/// pattern is enumerated and p is the exact fraction with |mean| >= observed;
/// otherwise p = (1 + count) / (permutations + 1) over random flips.
double permutation_test(ConstVec a, ConstVec b, int permutations = 1000, std::uint64_t seed = 0);

enum class AdjustMethod { Holm, BenjaminiHochberg };

AdjustMethod adjust_method_from_string(std::string_view name);

/// Holm step-down or BH step-up adjustment with monotonicity, clipped at 1.
std::vector<double> p_adjust(const std::vector<double>& raw, AdjustMethod method);

}  // namespace progress::evalstats
