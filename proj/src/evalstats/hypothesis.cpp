#include "progress/evalstats/hypothesis.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <string>

#include "progress/core/errors.hpp"
#include "progress/core/random.hpp"
#include "progress/core/special.hpp"

namespace progress::evalstats {

namespace {

// Average ranks (1-based) of the values.
std::vector<double> average_ranks(const std::vector<double>& v) {
    std::vector<std::size_t> order(v.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return v[a] < v[b]; });
    std::vector<double> ranks(v.size());
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        while (j < order.size() && v[order[j]] == v[order[i]]) ++j;
        const double avg = 0.5 * double(i + 1 + j);
        for (std::size_t k = i; k < j; ++k) ranks[order[k]] = avg;
        i = j;
    }
    return ranks;
}

}  // namespace

WilcoxonResult wilcoxon_signed_rank(ConstVec a, ConstVec b, int exact_cutoff) {
    if (a.size() != b.size()) throw ShapeError("wilcoxon: paired inputs differ in length");
    std::vector<double> mags;
    std::vector<bool> positive;
    for (Eigen::Index i = 0; i < a.size(); ++i) {
        const double d = a(i) - b(i);
        if (d == 0) continue;
        mags.push_back(std::abs(d));
        positive.push_back(d > 0);
    }
    WilcoxonResult r;
    r.n = int(mags.size());
    if (r.n == 0) return r;
    if (r.n < 5) throw DataError("wilcoxon: fewer than 5 nonzero differences");
    const auto ranks = average_ranks(mags);
    for (std::size_t i = 0; i < ranks.size(); ++i)
        if (positive[i]) r.statistic += ranks[i];
    const double n = r.n;
    const double mean = n * (n + 1) / 4;

    if (r.n <= exact_cutoff) {
        // Average ranks are multiples of 1/2, so doubled ranks are integers and the
        // null distribution of 2W+ follows from a subset-sum count over sign choices.
        std::vector<int> doubled;
        int total = 0;
        for (double rk : ranks) {
            doubled.push_back(int(std::lround(2 * rk)));
            total += doubled.back();
        }
        std::vector<double> ways(std::size_t(total) + 1, 0.0);
        ways[0] = 1;
        for (int d : doubled)
            for (int s = total; s >= d; --s) ways[std::size_t(s)] += ways[std::size_t(s - d)];
        const double count = std::ldexp(1.0, r.n);
        const int obs = int(std::lround(2 * r.statistic));
        double lower = 0, upper = 0;
        for (int s = 0; s <= total; ++s) {
            if (s <= obs) lower += ways[std::size_t(s)];
            if (s >= obs) upper += ways[std::size_t(s)];
        }
        r.p = std::min(1.0, 2 * std::min(lower, upper) / count);
        r.exact = true;
        return r;
    }

    std::vector<double> sorted = mags;
    std::sort(sorted.begin(), sorted.end());
    double tie_term = 0;
    for (std::size_t i = 0; i < sorted.size();) {
        std::size_t j = i;
        while (j < sorted.size() && sorted[j] == sorted[i]) ++j;
        const double t = double(j - i);
        tie_term += t * t * t - t;
        i = j;
    }
    const double var = n * (n + 1) * (2 * n + 1) / 24 - tie_term / 48;
    const double z = std::max(0.0, std::abs(r.statistic - mean) - 0.5) / std::sqrt(var);
    r.p = std::min(1.0, 2 * (1 - special::normal_cdf(z)));
    return r;
}

BootstrapResult bootstrap_bca(ConstVec diffs, int replicates, double level, std::uint64_t seed) {
    const Eigen::Index n = diffs.size();
    if (n < 5) throw DataError("bootstrap: need at least 5 differences");
    if (replicates < 1 || !(level > 0 && level < 1)) throw ConfigError("bootstrap: bad replicate count or level");
    BootstrapResult r;
    r.mean = diffs.mean();
    if ((diffs.array() == diffs(0)).all()) {
        r.lo = r.hi = r.mean;
        r.p = r.mean == 0 ? 1.0 : 0.0;
        return r;
    }
    std::vector<double> boot(static_cast<std::size_t>(replicates));
    for (int b = 0; b < replicates; ++b) {
        Rng rng = make_rng(seed, std::uint64_t(b));
        std::uniform_int_distribution<Eigen::Index> pick(0, n - 1);
        double s = 0;
        for (Eigen::Index i = 0; i < n; ++i) s += diffs(pick(rng));
        boot[std::size_t(b)] = s / double(n);
    }
    double below = 0, le0 = 0, ge0 = 0;
    for (double v : boot) {
        below += v < r.mean ? 1.0 : v == r.mean ? 0.5 : 0.0;
        le0 += v <= 0;
        ge0 += v >= 0;
    }
    const double frac = std::clamp(below / replicates, 0.5 / replicates, 1 - 0.5 / replicates);
    const double z0 = special::normal_quantile(frac);

    // Jackknife acceleration for the mean.
    const double sum = diffs.sum();
    Eigen::VectorXd jack(n);
    for (Eigen::Index i = 0; i < n; ++i) jack(i) = (sum - diffs(i)) / double(n - 1);
    const Eigen::ArrayXd dev = jack.mean() - jack.array();
    const double denom = std::pow(dev.square().sum(), 1.5);
    const double accel = denom > 0 ? dev.cube().sum() / (6 * denom) : 0.0;

    std::sort(boot.begin(), boot.end());
    const auto quantile = [&](double q) {
        const double pos = std::clamp(q, 0.0, 1.0) * double(replicates - 1);
        const auto lo = std::size_t(std::floor(pos));
        const auto hi = std::min(lo + 1, boot.size() - 1);
        return boot[lo] + (pos - double(lo)) * (boot[hi] - boot[lo]);
    };
    const auto adjusted = [&](double alpha) {
        const double za = special::normal_quantile(alpha);
        return special::normal_cdf(z0 + (z0 + za) / (1 - accel * (z0 + za)));
    };
    const double tail = (1 - level) / 2;
    r.lo = std::min(r.mean, quantile(adjusted(tail)));
    r.hi = std::max(r.mean, quantile(adjusted(1 - tail)));
    r.p = std::min(1.0, 2 * std::min(le0, ge0) / replicates);
    return r;
}

double permutation_test(ConstVec a, ConstVec b, int permutations, std::uint64_t seed) {
    if (a.size() != b.size()) throw ShapeError("permutation test: paired inputs differ in length");
    const Eigen::Index n = a.size();
    if (n < 5) throw DataError("permutation test: need at least 5 pairs");
    if (permutations < 1) throw ConfigError("permutation test: need at least one permutation");
    const Eigen::VectorXd d = a - b;
    const double observed = std::abs(d.sum());
    const double tol = 1e-12 * std::max(1.0, d.cwiseAbs().sum());
    if (n < 62 && (std::uint64_t{1} << n) <= std::uint64_t(permutations)) {
        const std::uint64_t patterns = std::uint64_t{1} << n;
        std::uint64_t count = 0;
        for (std::uint64_t mask = 0; mask < patterns; ++mask) {
            double s = 0;
            for (Eigen::Index i = 0; i < n; ++i) s += (mask >> i & 1) ? -d(i) : d(i);
            count += std::abs(s) >= observed - tol;
        }
        return double(count) / double(patterns);
    }
    long count = 0;
    for (int p = 0; p < permutations; ++p) {
        Rng rng = make_rng(seed, std::uint64_t(p));
        std::bernoulli_distribution flip(0.5);
        double s = 0;
        for (Eigen::Index i = 0; i < n; ++i) s += flip(rng) ? -d(i) : d(i);
        count += std::abs(s) >= observed - tol;
    }
    return double(1 + count) / double(permutations + 1);
}

AdjustMethod adjust_method_from_string(std::string_view name) {
    if (name == "holm") return AdjustMethod::Holm;
    if (name == "bh" || name == "fdr") return AdjustMethod::BenjaminiHochberg;
    throw ConfigError("unknown p-value adjustment '" + std::string(name) + "'");
}

std::vector<double> p_adjust(const std::vector<double>& raw, AdjustMethod method) {
    const std::size_t m = raw.size();
    for (double p : raw)
        if (!(p >= 0 && p <= 1)) throw DataError("p_adjust: p-values must lie in [0, 1]");
    std::vector<std::size_t> order(m);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](auto x, auto y) { return raw[x] < raw[y]; });
    std::vector<double> adj(m);
    if (method == AdjustMethod::Holm) {
        double running = 0;
        for (std::size_t i = 0; i < m; ++i) {
            running = std::max(running, std::min(1.0, double(m - i) * raw[order[i]]));
            adj[order[i]] = running;
        }
    } else {
        double running = 1;
        for (std::size_t i = m; i-- > 0;) {
            running = std::min(running, std::min(1.0, double(m) / double(i + 1) * raw[order[i]]));
            adj[order[i]] = running;
        }
    }
    return adj;
}

}  // namespace progress::evalstats
