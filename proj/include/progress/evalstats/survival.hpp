#pragma once

#include <array>
#include <vector>

#include <Eigen/Dense>

namespace progress::evalstats {

using ConstVec = const Eigen::Ref<const Eigen::VectorXd>&;
using ConstEvents = const Eigen::Ref<const Eigen::VectorXi>&;  // 1 = event, 0 = censored

/// Product-limit estimate; steps only at distinct event times.
struct KmCurve {
    std::vector<double> times;     // ascending event times
    std::vector<double> survival;  // S just after each time
    std::vector<int> at_risk;
    std::vector<int> events;

    /// Right-continuous S(t).
    double at(double t) const;
    /// Left limit S(t-).
    double before(double t) const;
};

KmCurve km_fit(ConstVec times, ConstEvents events);

/// Kaplan-Meier of the censoring distribution (censoring treated as the event;
/// subjects with an event at the same time stay in the risk set).
KmCurve censoring_km(ConstVec times, ConstEvents events);

struct LogRankResult {
    double chi2 = 0;
    int df = 0;
    double p = 1;
};

struct SurvivalGroup {
    Eigen::VectorXd times;
    Eigen::VectorXi events;
};

/// K-sample log-rank test, df = K - 1. Throws UndefinedMetricError without events.
LogRankResult logrank_test(const std::vector<SurvivalGroup>& groups);

/// Harrell's concordance. Pairs with T_i < T_j and an event at T_i are
/// comparable, as are equal times where only one subject had the event (that
/// subject counts as earlier). Tied scores count one half.
double c_index(ConstVec scores, ConstVec times, ConstEvents events);

/// Cumulative/dynamic AUC at `horizon` with inverse probability of censoring
/// weights: cases T <= h with an event weighted 1/G(T-), controls T > h.
double td_auc(ConstVec scores, ConstVec times, ConstEvents events, double horizon);

struct TertileReport {
    std::array<double, 2> cuts{};         // score cut values; ties go to the lower tertile
    std::array<int, 3> sizes{};
    std::array<int, 3> event_counts{};
    std::array<double, 3> event_rates{};  // low, middle, high risk
    double high_low_ratio = 0;            // inf when the low tertile has no events
    LogRankResult overall;
    std::array<double, 3> pairwise_p{};   // (low, mid), (low, high), (mid, high)
    Eigen::VectorXi assignment;           // 0, 1, 2 per subject
};

TertileReport tertile_stratify(ConstVec scores, ConstVec times, ConstEvents events);

}  // namespace progress::evalstats
