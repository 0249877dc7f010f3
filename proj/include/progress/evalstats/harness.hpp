#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "progress/evalstats/metrics.hpp"

namespace progress::evalstats {

/// Subject-aligned evaluation data. Feature columns are subjects; trajectory
/// targets are 3 x n with NaN columns for subjects without a reliable target.
struct EvalDataset {
    std::vector<std::string> subject_ids;
    std::vector<std::string> centers;
    Eigen::MatrixXd features;       // p x n
    Eigen::VectorXd times;
    Eigen::VectorXi events;
    Eigen::MatrixXd traj_targets;   // 3 x n, may have zero rows when unused
    Eigen::VectorXd age;
    Eigen::VectorXi sex;            // 1 = male, 0 = female
    Eigen::VectorXd education;

    Eigen::Index size() const { return times.size(); }
    EvalDataset subset(const std::vector<Eigen::Index>& idx) const;
};

/// Test-set output of a fitted model: risk scores and optional trajectory
/// means and 95% bounds (3 x n each, empty when the model does not predict them).
struct Predictions {
    Eigen::VectorXd risk;
    Eigen::MatrixXd traj_mean;
    Eigen::MatrixXd traj_lo;
    Eigen::MatrixXd traj_hi;
};

using ModelFactory = std::function<Predictions(const EvalDataset& train, const EvalDataset& test, std::uint64_t seed)>;

struct NamedFactory {
    std::string name;
    ModelFactory fit_predict;
};

struct CvProtocol {
    int folds = 5;
    int repeats = 5;
    std::uint64_t seed = 0;
};

/// Fold label per subject: events and non-events are shuffled separately and
/// dealt round-robin so every fold's event rate tracks the global one. A fold
/// left without events is redealt with the next derived seed (logged).
Eigen::VectorXi stratified_folds(ConstEvents events, int folds, std::uint64_t seed);

struct CvRow {
    std::string method;
    int repeat = 0;
    int fold = 0;
    long n_test = 0;
    long events_test = 0;
    double c_index = 0;  // NaN when the fold has no comparable pairs
};

/// Every method sees identical folds and identical per-fold seeds, giving
/// repeats x folds paired rows per method.
std::vector<CvRow> repeated_cv(const EvalDataset& data, const CvProtocol& protocol,
                               const std::vector<NamedFactory>& methods, int jobs = 1);

struct LocoReport {
    std::vector<std::string> centers;                     // held-out centers in order
    std::vector<std::vector<MetricReport>> per_center;    // c_index, auc_3yr, intercept_r2, intercept_picp
    std::vector<std::string> excluded_centers;            // below the size threshold
    std::vector<MetricReport> summary;                    // <metric>_mean / _sd / _cv over defined centers
};

/// Leave-one-center-out: each center with at least `min_center_n` subjects is
/// held out in turn; smaller centers always stay in training.
LocoReport loco_harness(const EvalDataset& data, const ModelFactory& factory, int min_center_n = 20,
                        std::uint64_t seed = 0, double auc_horizon = 3.0, int jobs = 1);

struct FairnessRow {
    std::string stratum;
    long n = 0;
    std::vector<MetricReport> metrics;  // c_index, auc_3yr, intercept_r2, intercept_picp
    double delta_c_index = 0;           // stratum minus overall, NaN if undefined
    bool disparity_flag = false;        // |delta C| > threshold
    bool small_sample = false;          // n < 30
};

struct FairnessReport {
    std::vector<MetricReport> overall;
    std::vector<FairnessRow> strata;
};

/// Strata: sex, age <= 70 vs > 70, education below vs at-or-above the median.
FairnessReport fairness_strata(const EvalDataset& data, const Predictions& predictions, double auc_horizon = 3.0,
                               double threshold = 0.05);

/// C-index, td-AUC, intercept R^2 and intercept PICP of `predictions` on `data`;
/// each metric is marked undefined instead of raising when it has no value.
std::vector<MetricReport> standard_metrics(const EvalDataset& data, const Predictions& predictions,
                                           double auc_horizon = 3.0, const std::string& stratum = {});

void to_json(nlohmann::json& j, const CvRow& r);
void to_json(nlohmann::json& j, const LocoReport& r);
void to_json(nlohmann::json& j, const FairnessRow& r);
void to_json(nlohmann::json& j, const FairnessReport& r);

}  // namespace progress::evalstats
