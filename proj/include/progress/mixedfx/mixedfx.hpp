#pragma once

#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "progress/dataio/records.hpp"

namespace progress::mixedfx {

/// Observed CDR-SB series of one subject; visits without a score are dropped.
struct SubjectSeries {
    std::string subject_id;
    Eigen::VectorXd times;  // years from baseline
    Eigen::VectorXd y;
};

SubjectSeries series_from_record(const dataio::ParticipantRecord& record);

/// Rows [1, t, t^2] for each time.
Eigen::MatrixXd quadratic_design(const Eigen::VectorXd& times);

/// Population quadratic with correlated random intercept, slope and acceleration.
struct MixedModel {
    Eigen::Vector3d fixed = Eigen::Vector3d::Zero();        // (alpha0, beta0, gamma0)
    Eigen::Matrix3d sigma_u = Eigen::Matrix3d::Zero();      // random-effect covariance
    double sigma2 = 1;                                      // residual variance
    Eigen::Matrix3d fixed_cov = Eigen::Matrix3d::Zero();    // sampling covariance of the fixed effects
    double criterion = 0;                                   // REML log-likelihood, constants dropped
    int iterations = 0;
    std::vector<double> history;                            // criterion after each accepted step

    Eigen::Vector3d fixed_se() const { return fixed_cov.diagonal().cwiseSqrt(); }
};

struct RemlOptions {
    int max_iterations = 500;
    double tolerance = 1e-8;        // stop when an iteration improves the criterion by less
    std::size_t min_subjects = 30;  // with at least `min_visits` scored visits
    std::size_t min_visits = 3;
};

/// Parameter vector layout: log diag of the Cholesky factor (3), its strict lower
/// triangle (3: (1,0), (2,0), (2,1)), log sigma^2.
Eigen::Matrix3d covariance_from_parameters(const Eigen::VectorXd& params);

/// Restricted log-likelihood with the fixed effects profiled out by GLS.
double reml_criterion(std::span<const SubjectSeries> data, const Eigen::Matrix3d& sigma_u, double sigma2);

/// Quasi-Newton REML over the Cholesky/log-variance parameters with numerical
/// gradients and a backtracking line search. Throws DataError when too few
/// subjects qualify and ConvergenceError after `max_iterations`.
MixedModel reml_fit(std::span<const SubjectSeries> data, const RemlOptions& options = {});
MixedModel reml_fit(std::span<const dataio::ParticipantRecord> records, const RemlOptions& options = {});

struct TrajectoryParams {
    std::string subject_id;
    Eigen::Vector3d theta = Eigen::Vector3d::Zero();  // subject totals: fixed + random
    Eigen::Matrix3d cond_cov = Eigen::Matrix3d::Zero();
    std::size_t visit_count = 0;
    bool reliable = false;

    double trace() const { return cond_cov.trace(); }
};

/// Posterior mean and covariance of the subject's coefficients given its series.
TrajectoryParams eb_estimates(const MixedModel& model, const SubjectSeries& series);
TrajectoryParams eb_estimates(const MixedModel& model, const dataio::ParticipantRecord& record);

/// trace(Var) <= tau_var and at least n_min visits.
bool reliability_filter(const TrajectoryParams& params, double tau_var, std::size_t n_min = 3);

/// 75th percentile (linear interpolation) of the conditional-variance traces.
double default_tau_var(std::span<const TrajectoryParams> params, double quantile = 0.75);

/// Sets `reliable` on every entry and returns the threshold used.
double mark_reliable(std::span<TrajectoryParams> params, double tau_var, std::size_t n_min = 3);

void to_json(nlohmann::json& j, const MixedModel& m);
void from_json(const nlohmann::json& j, MixedModel& m);
void to_json(nlohmann::json& j, const TrajectoryParams& p);
void from_json(const nlohmann::json& j, TrajectoryParams& p);

/// One JSON object per line: subject_id, alpha, beta, gamma, cond_var_trace, reliable
/// (plus the full conditional covariance for round trips).
void write_trajectories_jsonl(std::ostream& out, std::span<const TrajectoryParams> params);
std::vector<TrajectoryParams> read_trajectories_jsonl(std::istream& in);

}  // namespace progress::mixedfx
