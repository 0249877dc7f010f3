#include <algorithm>
#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "progress/core/errors.hpp"
#include "progress/core/random.hpp"
#include "progress/evalstats/harness.hpp"
#include "progress/evalstats/hypothesis.hpp"
#include "progress/evalstats/metrics.hpp"
#include "progress/evalstats/survival.hpp"

using namespace progress;
using namespace progress::evalstats;

namespace {

struct Instance {
    Eigen::VectorXd scores, times;
    Eigen::VectorXi events;
};

// Integer-valued times and scores so ties in both occur often.
Instance random_instance(int n, std::uint64_t seed) {
    Rng rng(seed);
    std::uniform_int_distribution<int> t(1, 8), s(0, 5);
    std::bernoulli_distribution e(0.6);
    Instance x{Eigen::VectorXd(n), Eigen::VectorXd(n), Eigen::VectorXi(n)};
    for (int i = 0; i < n; ++i) {
        x.scores(i) = s(rng);
        x.times(i) = t(rng);
        x.events(i) = e(rng);
    }
    return x;
}

// Unordered-pair enumeration, written independently of the library loop.
double brute_c_index(const Instance& x) {
    double num = 0, den = 0;
    for (Eigen::Index i = 0; i < x.times.size(); ++i)
        for (Eigen::Index j = i + 1; j < x.times.size(); ++j) {
            Eigen::Index first = -1, second = -1;
            if (x.times(i) < x.times(j) && x.events(i)) first = i, second = j;
            else if (x.times(j) < x.times(i) && x.events(j)) first = j, second = i;
            else if (x.times(i) == x.times(j) && x.events(i) != x.events(j))
                first = x.events(i) ? i : j, second = x.events(i) ? j : i;
            if (first < 0) continue;
            den += 1;
            num += x.scores(first) > x.scores(second) ? 1.0 : x.scores(first) == x.scores(second) ? 0.5 : 0.0;
        }
    return num / den;
}

EvalDataset synthetic_eval(int n, std::uint64_t seed, int centers = 4) {
    Rng rng(seed);
    std::normal_distribution<double> z;
    std::exponential_distribution<double> ex(1.0);
    EvalDataset d;
    d.features.resize(2, n);
    d.times.resize(n);
    d.events.resize(n);
    d.traj_targets.resize(3, n);
    d.age.resize(n);
    d.sex.resize(n);
    d.education.resize(n);
    for (int i = 0; i < n; ++i) {
        d.subject_ids.push_back("S" + std::to_string(i));
        d.centers.push_back("C" + std::to_string(i % centers));
        d.features(0, i) = z(rng);
        d.features(1, i) = z(rng);
        const double event = ex(rng) / std::exp(1.5 * d.features(0, i));
        const double censor = ex(rng) * 3;
        d.times(i) = std::min(event, censor);
        d.events(i) = event <= censor;
        d.traj_targets.col(i) << d.features(1, i) + 0.3 * z(rng), 0, 0;
        d.age(i) = 60 + 20 * std::abs(z(rng)) / 2;
        d.sex(i) = i % 2;
        d.education(i) = 10 + i % 9;
    }
    return d;
}

Predictions oracle_predictions(const EvalDataset& d) {
    Predictions p;
    p.risk = d.features.row(0).transpose();
    p.traj_mean = Eigen::MatrixXd::Zero(3, d.size());
    p.traj_mean.row(0) = d.features.row(1);
    p.traj_lo = p.traj_mean.array() - 0.6;
    p.traj_hi = p.traj_mean.array() + 0.6;
    return p;
}

}  // namespace

TEST(CIndex, PerfectAndReversed) {
    const Eigen::Vector3d t(1, 2, 3);
    const Eigen::Vector3i e(1, 1, 1);
    EXPECT_DOUBLE_EQ(c_index(Eigen::Vector3d(3, 2, 1), t, e), 1.0);
    EXPECT_DOUBLE_EQ(c_index(Eigen::Vector3d(1, 2, 3), t, e), 0.0);
}

TEST(CIndex, MatchesPairEnumerationWithTiesAndCensoring) {
    for (std::uint64_t seed = 0; seed < 200; ++seed) {
        const auto x = random_instance(12 + int(seed % 19), seed);
        if (x.events.sum() == 0) continue;
        double expected;
        try {
            expected = brute_c_index(x);
        } catch (...) {
            continue;
        }
        if (!std::isfinite(expected)) continue;
        EXPECT_EQ(c_index(x.scores, x.times, x.events), expected) << seed;
    }
}

TEST(CIndex, RankInvariant) {
    const auto x = random_instance(25, 3);
    const Eigen::VectorXd transformed = x.scores.array().exp() * 3 + 1;
    EXPECT_EQ(c_index(x.scores, x.times, x.events), c_index(transformed, x.times, x.events));
}

TEST(CIndex, NoComparablePairsIsUndefined) {
    EXPECT_THROW(c_index(Eigen::Vector2d(1, 2), Eigen::Vector2d(1, 2), Eigen::Vector2i(0, 0)), UndefinedMetricError);
}

TEST(KaplanMeier, HandProductLimit) {
    const auto km = km_fit(Eigen::Vector3d(1, 2, 3), Eigen::Vector3i(1, 1, 0));
    EXPECT_NEAR(km.at(1), 2.0 / 3, 1e-15);
    EXPECT_NEAR(km.at(2), 1.0 / 3, 1e-15);
    EXPECT_NEAR(km.at(3), 1.0 / 3, 1e-15);
    EXPECT_EQ(km.at(0.5), 1.0);
    EXPECT_NEAR(km.before(2), 2.0 / 3, 1e-15);
}

TEST(KaplanMeier, AllCensoredAndSingleEvent) {
    const auto flat = km_fit(Eigen::Vector3d(1, 2, 3), Eigen::Vector3i::Zero());
    EXPECT_EQ(flat.at(10), 1.0);
    const auto one = km_fit(Eigen::VectorXd::Constant(1, 4.0), Eigen::VectorXi::Ones(1));
    EXPECT_EQ(one.at(3.9), 1.0);
    EXPECT_EQ(one.at(4.0), 0.0);
}

TEST(KaplanMeier, UncensoredEqualsEmpiricalSurvival) {
    const auto x = random_instance(40, 5);
    const auto km = km_fit(x.times, Eigen::VectorXi::Ones(40));
    for (double t = 0; t <= 9; t += 0.5)
        EXPECT_NEAR(km.at(t), (x.times.array() > t).cast<double>().mean(), 1e-12) << t;
}

TEST(LogRank, MatchesStatsmodelsReference) {
    // Reference values from statsmodels.duration.survfunc.survdiff.
    SurvivalGroup a{Eigen::VectorXd(6), Eigen::VectorXi(6)}, b{Eigen::VectorXd(7), Eigen::VectorXi(7)};
    a.times << 1, 2, 3, 4, 5, 6;
    a.events << 1, 1, 0, 1, 1, 0;
    b.times << 2, 3, 5, 7, 8, 9, 10;
    b.events << 0, 1, 0, 1, 1, 0, 1;
    const auto two = logrank_test({a, b});
    EXPECT_NEAR(two.chi2, 3.630712596720533, 1e-10);
    EXPECT_NEAR(two.p, 0.0567225248172869, 1e-10);
    EXPECT_EQ(two.df, 1);
    SurvivalGroup c{Eigen::VectorXd::Constant(1, 4.0), Eigen::VectorXi::Ones(1)};
    const auto three = logrank_test({a, b, c});
    EXPECT_NEAR(three.chi2, 4.245836073700998, 1e-10);
    EXPECT_NEAR(three.p, 0.11968188233052934, 1e-10);
    EXPECT_EQ(three.df, 2);
}

TEST(LogRank, IdenticalGroupsGiveZero) {
    const auto x = random_instance(30, 6);
    const auto r = logrank_test({{x.times, x.events}, {x.times, x.events}});
    EXPECT_NEAR(r.chi2, 0, 1e-12);
    EXPECT_NEAR(r.p, 1, 1e-9);
}

TEST(LogRank, HazardRatioFiveIsHighlySignificant) {
    Rng rng(7);
    std::exponential_distribution<double> slow(0.2), fast(1.0), cens(0.1);
    SurvivalGroup a{Eigen::VectorXd(200), Eigen::VectorXi(200)}, b = a;
    for (int i = 0; i < 200; ++i) {
        const double ca = cens(rng), cb = cens(rng), ta = slow(rng), tb = fast(rng);
        a.times(i) = std::min(ta, ca);
        a.events(i) = ta <= ca;
        b.times(i) = std::min(tb, cb);
        b.events(i) = tb <= cb;
    }
    EXPECT_LT(logrank_test({a, b}).p, 1e-4);
}

TEST(LogRank, PermutedLabelsGiveUniformPValues) {
    const auto x = random_instance(60, 8);
    Rng rng(9);
    std::vector<double> ps;
    std::vector<int> labels(60);
    for (int i = 0; i < 60; ++i) labels[std::size_t(i)] = i % 2;
    Eigen::VectorXd times(60);
    Eigen::VectorXi events(60);
    Rng trng(10);
    std::exponential_distribution<double> ex(1.0);
    for (int i = 0; i < 60; ++i) {
        times(i) = ex(trng);
        events(i) = x.events(i);
    }
    for (int rep = 0; rep < 500; ++rep) {
        std::shuffle(labels.begin(), labels.end(), rng);
        std::vector<Eigen::Index> g0, g1;
        for (int i = 0; i < 60; ++i) (labels[std::size_t(i)] ? g1 : g0).push_back(i);
        ps.push_back(logrank_test({{times(g0), events(g0)}, {times(g1), events(g1)}}).p);
    }
    // Kolmogorov-Smirnov distance to Uniform(0,1); 1.63/sqrt(n) is the 1% critical value.
    std::sort(ps.begin(), ps.end());
    double dmax = 0;
    for (std::size_t i = 0; i < ps.size(); ++i)
        dmax = std::max({dmax, std::abs(ps[i] - double(i) / 500), std::abs(double(i + 1) / 500 - ps[i])});
    EXPECT_LT(dmax, 1.63 / std::sqrt(500.0));
}

TEST(TdAuc, NoCensoringEqualsBinaryAuc) {
    const auto x = random_instance(30, 11);
    const Eigen::VectorXi all = Eigen::VectorXi::Ones(30);
    const double h = 4;
    double num = 0, den = 0;
    for (int i = 0; i < 30; ++i)
        for (int j = 0; j < 30; ++j)
            if (x.times(i) <= h && x.times(j) > h) {
                den += 1;
                num += x.scores(i) > x.scores(j) ? 1 : x.scores(i) == x.scores(j) ? 0.5 : 0;
            }
    EXPECT_NEAR(td_auc(x.scores, x.times, all, h), num / den, 1e-12);
}

TEST(TdAuc, PerfectSeparationAndNullScores) {
    Eigen::VectorXd t = Eigen::VectorXd::LinSpaced(20, 0.5, 10);
    EXPECT_DOUBLE_EQ(td_auc(-t, t, Eigen::VectorXi::Ones(20), 3), 1.0);
    Rng rng(12);
    std::uniform_real_distribution<double> u;
    std::exponential_distribution<double> ex(0.3), c(0.1);
    const int n = 4000;
    Eigen::VectorXd s(n), tt(n);
    Eigen::VectorXi e(n);
    for (int i = 0; i < n; ++i) {
        s(i) = u(rng);
        const double a = ex(rng), b = c(rng);
        tt(i) = std::min(a, b);
        e(i) = a <= b;
    }
    EXPECT_NEAR(td_auc(s, tt, e, 3), 0.5, 0.05);
}

TEST(TdAuc, NoControlsIsUndefined) {
    EXPECT_THROW(td_auc(Eigen::Vector2d(1, 2), Eigen::Vector2d(1, 2), Eigen::Vector2i(1, 1), 5), UndefinedMetricError);
}

TEST(Tertiles, TiedScoresSplitEvenly) {
    Eigen::VectorXd s(9);
    s << 2, 1, 3, 1, 2, 3, 1, 2, 3;
    const auto r = tertile_stratify(s, Eigen::VectorXd::LinSpaced(9, 1, 9), Eigen::VectorXi::Ones(9));
    EXPECT_EQ(r.sizes, (std::array<int, 3>{3, 3, 3}));
    for (int i = 0; i < 9; ++i) EXPECT_EQ(r.assignment(i), int(s(i)) - 1);
}

TEST(Tertiles, MonotoneRiskGivesIncreasingRates) {
    const int n = 300;
    Eigen::VectorXd s = Eigen::VectorXd::LinSpaced(n, 0, 1);
    Eigen::VectorXi e(n);
    for (int i = 0; i < n; ++i) e(i) = (i % 10) < (i * 10 / n);
    const auto r = tertile_stratify(s, Eigen::VectorXd::Constant(n, 5.0), e);
    EXPECT_LT(r.event_rates[0], r.event_rates[1]);
    EXPECT_LT(r.event_rates[1], r.event_rates[2]);
    EXPECT_EQ(r.overall.df, 2);
}

TEST(Metrics, PicpMpiw) {
    Eigen::VectorXd lo(7), hi(7), truth(7);
    lo << 0, 0, 1, 2, -1, 5, 0;
    hi << 1, 2, 1, 3, 1, 6, 0.5;
    truth << 0.5, 2, 1, 3.5, -2, 5.5, 0.5;
    // inside: 0.5 yes, 2 yes (edge), 1 yes (zero width), 3.5 no, -2 no, 5.5 yes, 0.5 yes (edge)
    const auto s = picp_mpiw(lo, hi, truth);
    EXPECT_DOUBLE_EQ(s.picp, 5.0 / 7);
    EXPECT_DOUBLE_EQ(s.mpiw, (1 + 2 + 0 + 1 + 2 + 1 + 0.5) / 7);
}

TEST(Metrics, RegressionIdentitiesAndNegativeR2) {
    const Eigen::VectorXd t = Eigen::VectorXd::LinSpaced(10, 0, 9);
    const auto same = regression_metrics(t, t);
    EXPECT_DOUBLE_EQ(same.r2, 1.0);
    EXPECT_DOUBLE_EQ(same.rmse, 0.0);
    EXPECT_NEAR(same.pearson, 1.0, 1e-15);
    EXPECT_NEAR(regression_metrics(Eigen::VectorXd::Constant(10, t.mean()), t).r2, 0.0, 1e-15);
    EXPECT_LT(regression_metrics(-t, t).r2, 0.0);
    EXPECT_THROW(regression_metrics(t, Eigen::VectorXd::Ones(10)), UndefinedMetricError);
}

TEST(Wilcoxon, AllPositiveTenPairsExact) {
    const Eigen::VectorXd b = Eigen::VectorXd::LinSpaced(10, 0, 1);
    const auto r = wilcoxon_signed_rank(b.array() + 1, b);
    EXPECT_TRUE(r.exact);
    EXPECT_DOUBLE_EQ(r.p, 2.0 / 1024);
    EXPECT_DOUBLE_EQ(r.statistic, 55);
}

TEST(Wilcoxon, IdenticalSamplesGivePOne) {
    const Eigen::VectorXd a = Eigen::VectorXd::LinSpaced(8, 0, 1);
    EXPECT_EQ(wilcoxon_signed_rank(a, a).p, 1.0);
}

TEST(Wilcoxon, TextbookPairsMatchPublishedExactValue) {
    // Nine paired depression scores; exact two-sided p = 20/512.
    Eigen::VectorXd a(9), b(9);
    a << 1.83, 0.50, 1.62, 2.48, 1.68, 1.88, 1.55, 3.06, 1.30;
    b << 0.878, 0.647, 0.598, 2.05, 1.06, 1.29, 1.06, 3.14, 1.29;
    const auto r = wilcoxon_signed_rank(a, b);
    EXPECT_DOUBLE_EQ(r.statistic, 40);
    EXPECT_NEAR(r.p, 0.0390625, 1e-15);
}

TEST(Wilcoxon, EightPairsAtCriticalValue) {
    // n = 8: lower-tail count of W <= 3 is 5 of 256 subsets.
    Eigen::VectorXd d(8);
    d << 1, -2, 3, 4, 5, 6, 7, 8;  // W- = 2
    EXPECT_NEAR(wilcoxon_signed_rank(d, Eigen::VectorXd::Zero(8)).p, 2 * 3.0 / 256, 1e-15);
    d << -1, 2, -3, 4, 5, 6, 7, 8;  // W- = 4
    EXPECT_NEAR(wilcoxon_signed_rank(d, Eigen::VectorXd::Zero(8)).p, 2 * 7.0 / 256, 1e-15);
}

TEST(Wilcoxon, NormalApproximationMatchesScipy) {
    Eigen::VectorXd d(30);
    d << 0.6, 1.1, 0.6, -1.0, 1.2, 0.7, -0.2, 0.9, 0.7, 0.6, 0.3, 0.8, -0.4, 0.1, -0.2, 0.9, 0.3, 0.0, -0.5, 0.0, 0.3,
        0.0, 1.6, 1.3, -2.4, -1.6, 0.1, -0.1, 0.5, 0.5;
    const auto r = wilcoxon_signed_rank(d, Eigen::VectorXd::Zero(30));
    EXPECT_FALSE(r.exact);
    EXPECT_EQ(r.n, 27);
    EXPECT_DOUBLE_EQ(27.0 * 28 / 2 - r.statistic, 104.5);
    EXPECT_NEAR(r.p, 0.043429301639412075, 1e-9);
}

TEST(Bootstrap, ConstantDiffsArePointMass) {
    const auto r = bootstrap_bca(Eigen::VectorXd::Constant(10, 0.03), 1000, 0.95, 1);
    EXPECT_EQ(r.lo, 0.03);
    EXPECT_EQ(r.hi, 0.03);
}

TEST(Bootstrap, SymmetricDiffsCoverZeroAndAreReproducible) {
    Eigen::VectorXd d(25);
    for (int i = 0; i < 25; ++i) d(i) = (i - 12) * 0.01;
    const auto r = bootstrap_bca(d, 10000, 0.95, 42);
    EXPECT_LE(r.lo, 0.0);
    EXPECT_GE(r.hi, 0.0);
    EXPECT_LE(r.lo, r.mean);
    EXPECT_GE(r.hi, r.mean);
    const auto again = bootstrap_bca(d, 10000, 0.95, 42);
    EXPECT_EQ(r.lo, again.lo);
    EXPECT_EQ(r.hi, again.hi);
    EXPECT_EQ(r.p, again.p);
}

TEST(Bootstrap, ShiftedDiffsExcludeZero) {
    Rng rng(3);
    std::normal_distribution<double> z(1.0, 0.5);
    Eigen::VectorXd d(25);
    for (auto& v : d) v = z(rng);
    const auto r = bootstrap_bca(d, 5000, 0.95, 4);
    EXPECT_GT(r.lo, 0.0);
    EXPECT_LT(r.p, 0.01);
}

TEST(Permutation, ExactEnumerationForFiveUnitDiffs) {
    const Eigen::VectorXd b = Eigen::VectorXd::Zero(5);
    // Brute-force oracle over all 32 sign patterns.
    int hits = 0;
    for (int mask = 0; mask < 32; ++mask) {
        int s = 0;
        for (int i = 0; i < 5; ++i) s += (mask >> i & 1) ? -1 : 1;
        hits += std::abs(s) >= 5;
    }
    EXPECT_DOUBLE_EQ(permutation_test(Eigen::VectorXd::Ones(5), b, 1000, 1), hits / 32.0);
    EXPECT_DOUBLE_EQ(hits / 32.0, 2.0 / 32);
}

TEST(Permutation, IdenticalIsOneAndSeparatedHitsFloor) {
    const Eigen::VectorXd a = Eigen::VectorXd::LinSpaced(12, 0, 1);
    EXPECT_EQ(permutation_test(a, a, 1000, 2), 1.0);
    EXPECT_DOUBLE_EQ(permutation_test(a.array() + 5, a, 1000, 2), 1.0 / 1001);
}

TEST(PAdjust, ReferenceValues) {
    const std::vector<double> raw{0.0001, 0.287, 0.059};
    const auto holm = p_adjust(raw, AdjustMethod::Holm);
    const auto bh = p_adjust(raw, AdjustMethod::BenjaminiHochberg);
    EXPECT_NEAR(holm[0], 0.0003, 1e-12);
    EXPECT_NEAR(holm[1], 0.287, 1e-12);
    EXPECT_NEAR(holm[2], 0.118, 1e-12);
    EXPECT_NEAR(bh[0], 0.0003, 1e-12);
    EXPECT_NEAR(bh[1], 0.287, 1e-12);
    EXPECT_NEAR(bh[2], 0.0885, 1e-12);
}

TEST(PAdjust, EdgeCasesAndOrdering) {
    EXPECT_EQ(p_adjust({0.3}, AdjustMethod::Holm), std::vector<double>{0.3});
    EXPECT_EQ(p_adjust({1, 1, 1}, AdjustMethod::BenjaminiHochberg), (std::vector<double>{1, 1, 1}));
    Rng rng(5);
    std::uniform_real_distribution<double> u;
    for (int rep = 0; rep < 100; ++rep) {
        std::vector<double> raw(8);
        for (auto& p : raw) p = u(rng) * u(rng);
        const auto holm = p_adjust(raw, AdjustMethod::Holm);
        const auto bh = p_adjust(raw, AdjustMethod::BenjaminiHochberg);
        for (std::size_t i = 0; i < raw.size(); ++i) {
            EXPECT_GE(holm[i], bh[i] - 1e-15);
            EXPECT_GE(bh[i], raw[i] - 1e-15);
            for (std::size_t j = 0; j < raw.size(); ++j)
                if (raw[i] < raw[j]) {
                    EXPECT_LE(holm[i], holm[j]);
                    EXPECT_LE(bh[i], bh[j]);
                }
        }
    }
}

TEST(Folds, StratifiedPartitionTracksEventRate) {
    const auto d = synthetic_eval(403, 13);
    const double global = d.events.cast<double>().mean();
    const auto label = stratified_folds(d.events, 5, 14);
    for (int f = 0; f < 5; ++f) {
        int n = 0, e = 0;
        for (Eigen::Index i = 0; i < d.size(); ++i)
            if (label(i) == f) ++n, e += d.events(i);
        EXPECT_NEAR(double(e) / n, global, 0.05) << f;
        EXPECT_NEAR(n, 403 / 5.0, 1.0);
    }
}

TEST(RepeatedCv, PairedRowsForIdenticalFactories) {
    const auto d = synthetic_eval(200, 15);
    const ModelFactory oracle = [](const EvalDataset&, const EvalDataset& te, std::uint64_t) {
        return oracle_predictions(te);
    };
    const auto rows = repeated_cv(d, {5, 5, 16}, {{"a", oracle}, {"b", oracle}});
    ASSERT_EQ(rows.size(), 50u);
    std::vector<double> a, b;
    for (const auto& r : rows) (r.method == "a" ? a : b).push_back(r.c_index);
    ASSERT_EQ(a.size(), 25u);
    EXPECT_EQ(a, b);
    const auto parallel_rows = repeated_cv(d, {5, 5, 16}, {{"a", oracle}, {"b", oracle}}, 3);
    for (std::size_t i = 0; i < rows.size(); ++i) EXPECT_EQ(rows[i].c_index, parallel_rows[i].c_index);
}

TEST(Loco, ThresholdAndReports) {
    auto d = synthetic_eval(150, 17, 3);
    for (int i = 0; i < 10; ++i) d.centers[std::size_t(i)] = "tiny";
    std::vector<std::size_t> train_sizes;
    const ModelFactory f = [&](const EvalDataset& tr, const EvalDataset& te, std::uint64_t) {
        train_sizes.push_back(std::size_t(tr.size()));
        return oracle_predictions(te);
    };
    const auto r = loco_harness(d, f, 20, 18);
    EXPECT_EQ(r.centers.size(), 3u);
    EXPECT_EQ(r.excluded_centers, std::vector<std::string>{"tiny"});
    for (std::size_t k = 0; k < 3; ++k) {
        EXPECT_EQ(r.per_center[k].size(), 4u);
        EXPECT_GT(r.per_center[k][0].value, 0.6);
    }
    // The small center is always part of training.
    std::size_t held_out_total = 0;
    for (auto s : train_sizes) held_out_total += 150 - s;
    EXPECT_EQ(held_out_total, 140u);
}

TEST(Loco, HoldoutWithoutEventsIsUndefined) {
    auto d = synthetic_eval(80, 19, 2);
    for (Eigen::Index i = 0; i < d.size(); ++i)
        if (d.centers[std::size_t(i)] == "C1") d.events(i) = 0;
    const ModelFactory f = [](const EvalDataset&, const EvalDataset& te, std::uint64_t) { return oracle_predictions(te); };
    const auto r = loco_harness(d, f, 20, 1);
    EXPECT_FALSE(r.per_center[1][0].defined);
    EXPECT_TRUE(r.per_center[0][0].defined);
}

TEST(Fairness, AgeBoundaryAndDeltas) {
    auto d = synthetic_eval(300, 20);
    d.age(0) = 70.0;
    const auto p = oracle_predictions(d);
    const auto r = fairness_strata(d, p);
    const auto young = std::find_if(r.strata.begin(), r.strata.end(), [](const auto& s) { return s.stratum == "age<=70"; });
    ASSERT_NE(young, r.strata.end());
    EXPECT_EQ(young->n, (d.age.array() <= 70).count());
    for (const auto& row : r.strata) {
        EXPECT_NEAR(row.delta_c_index, row.metrics[0].value - r.overall[0].value, 1e-15);
        EXPECT_EQ(row.disparity_flag, std::abs(row.delta_c_index) > 0.05);
    }
}

TEST(Fairness, SingleStratumHasZeroDelta) {
    auto d = synthetic_eval(100, 21);
    d.sex.setOnes();
    const auto r = fairness_strata(d, oracle_predictions(d));
    EXPECT_EQ(r.strata.front().stratum, "sex=male");
    EXPECT_EQ(r.strata.front().delta_c_index, 0.0);
}

TEST(Fairness, NoisierOlderStratumIsFlagged) {
    auto d = synthetic_eval(2000, 22);
    auto p = oracle_predictions(d);
    Rng rng(23);
    std::normal_distribution<double> z(0.0, 3.0);
    for (Eigen::Index i = 0; i < d.size(); ++i)
        if (d.age(i) > 70) p.risk(i) += z(rng);
    const auto r = fairness_strata(d, p);
    const auto old = std::find_if(r.strata.begin(), r.strata.end(), [](const auto& s) { return s.stratum == "age>70"; });
    const auto young = std::find_if(r.strata.begin(), r.strata.end(), [](const auto& s) { return s.stratum == "age<=70"; });
    EXPECT_LT(old->metrics[0].value, young->metrics[0].value);
    EXPECT_TRUE(old->disparity_flag);
    EXPECT_FALSE(old->small_sample);
}
