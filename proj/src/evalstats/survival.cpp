#include "progress/evalstats/survival.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "progress/core/errors.hpp"
#include "progress/core/special.hpp"

namespace progress::evalstats {

namespace {

void check_lengths(Eigen::Index a, Eigen::Index b, const char* what) {
    if (a != b) throw ShapeError(std::string(what) + ": input lengths differ");
}

std::vector<Eigen::Index> order_by_time(ConstVec times) {
    std::vector<Eigen::Index> order(static_cast<std::size_t>(times.size()));
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return times(a) < times(b); });
    return order;
}

}  // namespace

double KmCurve::at(double t) const {
    const auto it = std::upper_bound(times.begin(), times.end(), t);
    return it == times.begin() ? 1.0 : survival[std::size_t(it - times.begin()) - 1];
}

double KmCurve::before(double t) const {
    const auto it = std::lower_bound(times.begin(), times.end(), t);
    return it == times.begin() ? 1.0 : survival[std::size_t(it - times.begin()) - 1];
}

KmCurve km_fit(ConstVec times, ConstEvents events) {
    check_lengths(times.size(), events.size(), "km_fit");
    KmCurve curve;
    const auto order = order_by_time(times);
    const std::size_t n = order.size();
    double s = 1.0;
    std::size_t i = 0;
    while (i < n) {
        const double t = times(order[i]);
        int d = 0;
        std::size_t j = i;
        for (; j < n && times(order[j]) == t; ++j) d += events(order[j]) != 0;
        if (d > 0) {
            const int at_risk = int(n - i);
            s *= 1.0 - double(d) / double(at_risk);
            curve.times.push_back(t);
            curve.survival.push_back(s);
            curve.at_risk.push_back(at_risk);
            curve.events.push_back(d);
        }
        i = j;
    }
    return curve;
}

KmCurve censoring_km(ConstVec times, ConstEvents events) {
    const Eigen::VectorXi flipped = (events.array() == 0).cast<int>();
    return km_fit(times, flipped);
}

LogRankResult logrank_test(const std::vector<SurvivalGroup>& groups) {
    const int k = int(groups.size());
    if (k < 2) throw DataError("log-rank: need at least two groups");
    std::vector<std::pair<double, int>> pooled;  // time, event
    std::vector<int> label;
    for (int g = 0; g < k; ++g) {
        check_lengths(groups[std::size_t(g)].times.size(), groups[std::size_t(g)].events.size(), "logrank_test");
        for (Eigen::Index i = 0; i < groups[std::size_t(g)].times.size(); ++i) {
            pooled.emplace_back(groups[std::size_t(g)].times(i), groups[std::size_t(g)].events(i) != 0);
            label.push_back(g);
        }
    }
    std::vector<std::size_t> order(pooled.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return pooled[a].first < pooled[b].first; });

    Eigen::VectorXd at_risk = Eigen::VectorXd::Zero(k);
    for (int l : label) at_risk(l) += 1;
    Eigen::VectorXd observed = Eigen::VectorXd::Zero(k), expected = Eigen::VectorXd::Zero(k);
    Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(k, k);
    int total_events = 0;
    std::size_t i = 0;
    while (i < order.size()) {
        const double t = pooled[order[i]].first;
        Eigen::VectorXd d = Eigen::VectorXd::Zero(k), leaving = Eigen::VectorXd::Zero(k);
        std::size_t j = i;
        for (; j < order.size() && pooled[order[j]].first == t; ++j) {
            const int g = label[order[j]];
            d(g) += pooled[order[j]].second;
            leaving(g) += 1;
        }
        const double n = at_risk.sum();
        const double dt = d.sum();
        if (dt > 0) {
            total_events += int(dt);
            observed += d;
            const Eigen::VectorXd share = at_risk / n;
            expected += dt * share;
            if (n > 1) {
                const double f = dt * (n - dt) / (n - 1);
                cov += f * (Eigen::MatrixXd(share.asDiagonal()) - share * share.transpose());
            }
        }
        at_risk -= leaving;
        i = j;
    }
    if (total_events == 0) throw UndefinedMetricError("log-rank: no events");
    const Eigen::VectorXd diff = (observed - expected).head(k - 1);
    const Eigen::MatrixXd v = cov.topLeftCorner(k - 1, k - 1);
    const Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(v);
    LogRankResult r;
    r.df = k - 1;
    r.chi2 = std::max(0.0, diff.dot(cod.solve(diff)));
    r.p = special::chi_square_sf(r.chi2, r.df);
    return r;
}

double c_index(ConstVec scores, ConstVec times, ConstEvents events) {
    check_lengths(scores.size(), times.size(), "c_index");
    check_lengths(scores.size(), events.size(), "c_index");
    const Eigen::Index n = scores.size();
    double concordant = 0;
    long comparable = 0;
    for (Eigen::Index i = 0; i < n; ++i) {
        if (!events(i)) continue;
        for (Eigen::Index j = 0; j < n; ++j) {
            if (i == j) continue;
            const bool later = times(j) > times(i) || (times(j) == times(i) && !events(j));
            if (!later) continue;
            ++comparable;
            if (scores(i) > scores(j))
                concordant += 1;
            else if (scores(i) == scores(j))
                concordant += 0.5;
        }
    }
    if (comparable == 0) throw UndefinedMetricError("c-index: no comparable pairs");
    return concordant / double(comparable);
}

double td_auc(ConstVec scores, ConstVec times, ConstEvents events, double horizon) {
    check_lengths(scores.size(), times.size(), "td_auc");
    check_lengths(scores.size(), events.size(), "td_auc");
    const KmCurve g = censoring_km(times, events);
    std::vector<std::pair<double, double>> cases;  // score, weight
    std::vector<double> controls;
    for (Eigen::Index i = 0; i < scores.size(); ++i) {
        if (times(i) <= horizon && events(i)) {
            const double gi = g.before(times(i));
            if (gi > 0) cases.emplace_back(scores(i), 1.0 / gi);
        } else if (times(i) > horizon) {
            controls.push_back(scores(i));
        }
    }
    if (cases.empty() || controls.empty()) throw UndefinedMetricError("td-AUC: no cases or no controls at horizon");
    // Control weights 1/G(h) are constant and cancel.
    std::sort(controls.begin(), controls.end());
    double num = 0, den = 0;
    for (const auto& [s, w] : cases) {
        const auto lo = std::lower_bound(controls.begin(), controls.end(), s);
        const auto hi = std::upper_bound(controls.begin(), controls.end(), s);
        const double below = double(lo - controls.begin());
        const double ties = double(hi - lo);
        num += w * (below + 0.5 * ties);
        den += w * double(controls.size());
    }
    return num / den;
}

TertileReport tertile_stratify(ConstVec scores, ConstVec times, ConstEvents events) {
    check_lengths(scores.size(), times.size(), "tertile_stratify");
    check_lengths(scores.size(), events.size(), "tertile_stratify");
    const Eigen::Index n = scores.size();
    if (n < 9) throw DataError("tertile stratification needs at least 9 subjects");
    std::vector<double> sorted(scores.data(), scores.data() + n);
    std::sort(sorted.begin(), sorted.end());
    TertileReport r;
    r.cuts[0] = sorted[std::size_t((n + 2) / 3 - 1)];
    r.cuts[1] = sorted[std::size_t((2 * n + 2) / 3 - 1)];
    r.assignment.resize(n);
    std::array<std::vector<Eigen::Index>, 3> members;
    for (Eigen::Index i = 0; i < n; ++i) {
        const int t = scores(i) <= r.cuts[0] ? 0 : scores(i) <= r.cuts[1] ? 1 : 2;
        r.assignment(i) = t;
        members[std::size_t(t)].push_back(i);
    }
    std::array<SurvivalGroup, 3> groups;
    for (std::size_t t = 0; t < 3; ++t) {
        r.sizes[t] = int(members[t].size());
        groups[t].times = times(members[t]);
        groups[t].events = events(members[t]);
        r.event_counts[t] = groups[t].events.sum();
        r.event_rates[t] = r.sizes[t] > 0 ? double(r.event_counts[t]) / r.sizes[t] : 0.0;
    }
    r.high_low_ratio = r.event_rates[0] > 0 ? r.event_rates[2] / r.event_rates[0]
                                            : std::numeric_limits<double>::infinity();
    std::vector<SurvivalGroup> nonempty;
    for (const auto& g : groups)
        if (g.times.size() > 0) nonempty.push_back(g);
    r.overall = nonempty.size() >= 2 ? logrank_test(nonempty) : LogRankResult{};
    const std::array<std::pair<int, int>, 3> pairs{{{0, 1}, {0, 2}, {1, 2}}};
    for (std::size_t p = 0; p < 3; ++p) {
        const auto& a = groups[std::size_t(pairs[p].first)];
        const auto& b = groups[std::size_t(pairs[p].second)];
        if (a.times.size() == 0 || b.times.size() == 0 || a.events.sum() + b.events.sum() == 0)
            r.pairwise_p[p] = 1.0;
        else
            r.pairwise_p[p] = logrank_test({a, b}).p;
    }
    return r;
}

}  // namespace progress::evalstats
