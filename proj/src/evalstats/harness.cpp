#include "progress/evalstats/harness.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <random>

#include "progress/core/errors.hpp"
#include "progress/core/log.hpp"
#include "progress/core/parallel.hpp"
#include "progress/core/random.hpp"

namespace progress::evalstats {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

Eigen::MatrixXd take_columns(const Eigen::MatrixXd& m, const std::vector<Eigen::Index>& idx) {
    if (m.size() == 0) return Eigen::MatrixXd(m.rows(), 0);
    return m(Eigen::all, idx);
}

Predictions subset(const Predictions& p, const std::vector<Eigen::Index>& idx) {
    Predictions out;
    out.risk = p.risk(idx);
    out.traj_mean = take_columns(p.traj_mean, idx);
    out.traj_lo = take_columns(p.traj_lo, idx);
    out.traj_hi = take_columns(p.traj_hi, idx);
    return out;
}

template <typename F>
MetricReport guarded(const std::string& name, long n, const std::string& stratum, F&& compute) {
    try {
        MetricReport r;
        r.metric = name;
        r.value = compute();
        r.n = n;
        r.stratum = stratum;
        return r;
    } catch (const UndefinedMetricError&) {
        return MetricReport::undefined(name, n, stratum);
    } catch (const DataError&) {
        return MetricReport::undefined(name, n, stratum);
    }
}

double sample_sd(const std::vector<double>& v) {
    if (v.size() < 2) return kNaN;
    const double m = std::accumulate(v.begin(), v.end(), 0.0) / double(v.size());
    double ss = 0;
    for (double x : v) ss += (x - m) * (x - m);
    return std::sqrt(ss / double(v.size() - 1));
}

}  // namespace

EvalDataset EvalDataset::subset(const std::vector<Eigen::Index>& idx) const {
    EvalDataset out;
    for (auto i : idx) {
        if (!subject_ids.empty()) out.subject_ids.push_back(subject_ids[std::size_t(i)]);
        if (!centers.empty()) out.centers.push_back(centers[std::size_t(i)]);
    }
    out.features = take_columns(features, idx);
    out.times = times(idx);
    out.events = events(idx);
    out.traj_targets = take_columns(traj_targets, idx);
    if (age.size()) out.age = age(idx);
    if (sex.size()) out.sex = sex(idx);
    if (education.size()) out.education = education(idx);
    return out;
}

Eigen::VectorXi stratified_folds(ConstEvents events, int folds, std::uint64_t seed) {
    if (folds < 2) throw ConfigError("stratified folds: need at least 2 folds");
    const Eigen::Index n = events.size();
    if (n < folds) throw DataError("stratified folds: fewer subjects than folds");
    std::vector<Eigen::Index> pos, neg;
    for (Eigen::Index i = 0; i < n; ++i) (events(i) ? pos : neg).push_back(i);
    if (Eigen::Index(pos.size()) < folds) throw DataError("stratified folds: fewer events than folds");
    for (std::uint64_t attempt = 0; attempt < 100; ++attempt) {
        Rng rng = make_rng(seed, attempt);
        std::shuffle(pos.begin(), pos.end(), rng);
        std::shuffle(neg.begin(), neg.end(), rng);
        Eigen::VectorXi label(n);
        int next = 0;
        for (auto i : pos) label(i) = next++ % folds;
        for (auto i : neg) label(i) = next++ % folds;
        std::vector<int> fold_events(std::size_t(folds), 0);
        for (auto i : pos) ++fold_events[std::size_t(label(i))];
        if (std::all_of(fold_events.begin(), fold_events.end(), [](int e) { return e > 0; })) return label;
        log_warning("stratified folds: a fold had no events; redealing with a new seed");
    }
    throw DataError("stratified folds: could not place an event in every fold");
}

std::vector<CvRow> repeated_cv(const EvalDataset& data, const CvProtocol& protocol,
                               const std::vector<NamedFactory>& methods, int jobs) {
    if (protocol.repeats < 1) throw ConfigError("repeated CV: need at least one repeat");
    const std::size_t per_repeat = std::size_t(protocol.folds);
    std::vector<Eigen::VectorXi> labels;
    for (int r = 0; r < protocol.repeats; ++r)
        labels.push_back(stratified_folds(data.events, protocol.folds, derive_seed(protocol.seed, std::uint64_t(r))));
    const std::size_t tasks = std::size_t(protocol.repeats) * per_repeat * methods.size();
    std::vector<CvRow> rows(tasks);
    parallel_for(tasks, jobs, [&](std::size_t t) {
        const std::size_t m = t % methods.size();
        const std::size_t rf = t / methods.size();
        const int r = int(rf / per_repeat);
        const int f = int(rf % per_repeat);
        std::vector<Eigen::Index> train, test;
        for (Eigen::Index i = 0; i < data.size(); ++i) (labels[std::size_t(r)](i) == f ? test : train).push_back(i);
        const EvalDataset tr = data.subset(train), te = data.subset(test);
        const std::uint64_t fold_seed = derive_seed(derive_seed(protocol.seed, std::uint64_t(r)), 1000 + std::uint64_t(f));
        const Predictions p = methods[m].fit_predict(tr, te, fold_seed);
        CvRow& row = rows[t];
        row.method = methods[m].name;
        row.repeat = r;
        row.fold = f;
        row.n_test = long(te.size());
        row.events_test = te.events.sum();
        try {
            row.c_index = c_index(p.risk, te.times, te.events);
        } catch (const UndefinedMetricError&) {
            row.c_index = kNaN;
        }
    });
    return rows;
}

std::vector<MetricReport> standard_metrics(const EvalDataset& data, const Predictions& p, double auc_horizon,
                                           const std::string& stratum) {
    const long n = long(data.size());
    std::vector<MetricReport> out;
    out.push_back(guarded("c_index", n, stratum, [&] { return c_index(p.risk, data.times, data.events); }));
    out.push_back(guarded("auc_3yr", n, stratum, [&] { return td_auc(p.risk, data.times, data.events, auc_horizon); }));

    std::vector<Eigen::Index> usable;
    if (data.traj_targets.rows() == 3 && p.traj_mean.rows() == 3)
        for (Eigen::Index i = 0; i < data.size(); ++i)
            if (std::isfinite(data.traj_targets(0, i))) usable.push_back(i);
    const Eigen::VectorXd truth = usable.empty() ? Eigen::VectorXd() : Eigen::VectorXd(data.traj_targets(0, usable));
    const long nu = long(usable.size());
    out.push_back(guarded("intercept_r2", nu, stratum, [&] {
        if (usable.empty()) throw UndefinedMetricError("no trajectory targets");
        return regression_metrics(p.traj_mean(0, usable).transpose(), truth).r2;
    }));
    out.push_back(guarded("intercept_picp", nu, stratum, [&] {
        if (usable.empty() || p.traj_lo.rows() != 3) throw UndefinedMetricError("no trajectory intervals");
        return picp_mpiw(p.traj_lo(0, usable).transpose(), p.traj_hi(0, usable).transpose(), truth).picp;
    }));
    return out;
}

LocoReport loco_harness(const EvalDataset& data, const ModelFactory& factory, int min_center_n, std::uint64_t seed,
                        double auc_horizon, int jobs) {
    if (data.centers.size() != std::size_t(data.size())) throw ShapeError("LOCO: every subject needs a center");
    std::map<std::string, std::vector<Eigen::Index>> by_center;
    for (Eigen::Index i = 0; i < data.size(); ++i) by_center[data.centers[std::size_t(i)]].push_back(i);
    LocoReport report;
    for (const auto& [c, idx] : by_center)
        (long(idx.size()) >= min_center_n ? report.centers : report.excluded_centers).push_back(c);
    if (report.centers.size() < 2) throw DataError("LOCO: fewer than two centers meet the size threshold");

    report.per_center.resize(report.centers.size());
    parallel_for(report.centers.size(), jobs, [&](std::size_t k) {
        const std::string& center = report.centers[k];
        std::vector<Eigen::Index> train;
        for (Eigen::Index i = 0; i < data.size(); ++i)
            if (data.centers[std::size_t(i)] != center) train.push_back(i);
        const EvalDataset te = data.subset(by_center.at(center));
        const Predictions p = factory(data.subset(train), te, derive_seed(seed, k));
        report.per_center[k] = standard_metrics(te, p, auc_horizon, center);
    });

    const std::size_t metrics = report.per_center.front().size();
    for (std::size_t m = 0; m < metrics; ++m) {
        std::vector<double> values;
        for (const auto& reports : report.per_center)
            if (reports[m].defined) values.push_back(reports[m].value);
        const std::string& name = report.per_center.front()[m].metric;
        const long n = long(values.size());
        if (values.empty()) {
            for (const char* suffix : {"_mean", "_sd", "_cv"})
                report.summary.push_back(MetricReport::undefined(name + suffix, 0, "loco"));
            continue;
        }
        const double mean = std::accumulate(values.begin(), values.end(), 0.0) / double(n);
        const double sd = sample_sd(values);
        for (auto [suffix, v] : {std::pair<const char*, double>{"_mean", mean}, {"_sd", sd}, {"_cv", sd / mean}}) {
            if (std::isfinite(v)) {
                MetricReport r;
                r.metric = name + suffix;
                r.value = v;
                r.n = n;
                r.stratum = "loco";
                report.summary.push_back(r);
            } else {
                report.summary.push_back(MetricReport::undefined(name + suffix, n, "loco"));
            }
        }
    }
    return report;
}

FairnessReport fairness_strata(const EvalDataset& data, const Predictions& predictions, double auc_horizon,
                               double threshold) {
    const Eigen::Index n = data.size();
    if (predictions.risk.size() != n) throw ShapeError("fairness: predictions do not match the dataset");
    FairnessReport report;
    report.overall = standard_metrics(data, predictions, auc_horizon, "overall");
    const MetricReport& overall_c = report.overall.front();

    std::vector<std::pair<std::string, std::vector<Eigen::Index>>> strata;
    const auto split = [&](const std::string& a, const std::string& b, auto&& in_a) {
        std::vector<Eigen::Index> ia, ib;
        for (Eigen::Index i = 0; i < n; ++i) (in_a(i) ? ia : ib).push_back(i);
        strata.emplace_back(a, ia);
        strata.emplace_back(b, ib);
    };
    if (data.sex.size() == n) split("sex=male", "sex=female", [&](Eigen::Index i) { return data.sex(i) == 1; });
    if (data.age.size() == n) split("age<=70", "age>70", [&](Eigen::Index i) { return data.age(i) <= 70.0; });
    if (data.education.size() == n && n > 0) {
        std::vector<double> ed(data.education.data(), data.education.data() + n);
        std::sort(ed.begin(), ed.end());
        const double median = n % 2 ? ed[std::size_t(n / 2)] : 0.5 * (ed[std::size_t(n / 2 - 1)] + ed[std::size_t(n / 2)]);
        split("education<median", "education>=median", [&](Eigen::Index i) { return data.education(i) < median; });
    }
    for (const auto& [label, idx] : strata) {
        if (idx.empty()) continue;
        FairnessRow row;
        row.stratum = label;
        row.n = long(idx.size());
        row.metrics = standard_metrics(data.subset(idx), subset(predictions, idx), auc_horizon, label);
        const MetricReport& c = row.metrics.front();
        row.delta_c_index = c.defined && overall_c.defined ? c.value - overall_c.value : kNaN;
        row.disparity_flag = std::isfinite(row.delta_c_index) && std::abs(row.delta_c_index) > threshold;
        row.small_sample = row.n < 30;
        report.strata.push_back(std::move(row));
    }
    return report;
}

void to_json(nlohmann::json& j, const CvRow& r) {
    j = {{"method", r.method}, {"repeat", r.repeat}, {"fold", r.fold}, {"n_test", r.n_test},
         {"events_test", r.events_test}};
    j["c_index"] = std::isfinite(r.c_index) ? nlohmann::json(r.c_index) : nlohmann::json(nullptr);
}

void to_json(nlohmann::json& j, const LocoReport& r) {
    j["centers"] = nlohmann::json::array();
    for (std::size_t k = 0; k < r.centers.size(); ++k)
        j["centers"].push_back({{"center", r.centers[k]}, {"metrics", r.per_center[k]}});
    j["excluded_centers"] = r.excluded_centers;
    j["summary"] = r.summary;
}

void to_json(nlohmann::json& j, const FairnessRow& r) {
    j = {{"stratum", r.stratum}, {"n", r.n}, {"metrics", r.metrics},
         {"disparity_flag", r.disparity_flag}, {"small_sample", r.small_sample}};
    j["delta_c_index"] = std::isfinite(r.delta_c_index) ? nlohmann::json(r.delta_c_index) : nlohmann::json(nullptr);
}

void to_json(nlohmann::json& j, const FairnessReport& r) { j = {{"overall", r.overall}, {"strata", r.strata}}; }

}  // namespace progress::evalstats
