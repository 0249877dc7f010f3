#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "progress/core/random.hpp"
#include "progress/evalstats/survival.hpp"
#include "progress/numcore/dense_net.hpp"
#include "progress/numcore/standardizer.hpp"

namespace progress::survnet {

using Mat = numcore::Matrix<double>;
using Vec = numcore::Vector<double>;
using evalstats::ConstEvents;
using evalstats::ConstVec;

struct SurvNetConfig {
    int input_dim = 10;
    int width = 128;          // hidden widths [w, w/2]
    double margin = 0.1;      // ranking hinge margin xi
    double lambda3 = 0.1;     // ranking weight
    double lambda4 = 1e-2;    // weight decay
    double learning_rate = 1e-3;
    int max_epochs = 1000;
    int patience = 15;
    int min_events = 10;
    std::uint64_t seed = 0;
};

void to_json(nlohmann::json& j, const SurvNetConfig& c);
void from_json(const nlohmann::json& j, SurvNetConfig& c);

/// Step function of the cumulative baseline hazard at ascending event times.
struct BaselineHazard {
    std::vector<double> times;
    std::vector<double> cumulative;

    /// Right-continuous H0(t); 0 before the first event time.
    double at(double t) const;
};

void to_json(nlohmann::json& j, const BaselineHazard& h);
void from_json(const nlohmann::json& j, BaselineHazard& h);

/// S(t | x) = exp(-H0(t) exp(psi)).
struct SurvivalCurve {
    BaselineHazard hazard;
    double psi = 0;

    double at(double t) const;
    /// First event time with S <= 0.5, if the curve gets there.
    std::optional<double> median() const;
};

SurvivalCurve survival_curve(const BaselineHazard& hazard, double psi);

/// ReLU risk network [w, w/2] with a scalar log-risk output. Inputs are
/// standardized internally using statistics from the training split.
struct SurvNetModel {
    SurvNetConfig config;
    numcore::DenseNet<double> risk;
    numcore::Standardizer<double> input = numcore::Standardizer<double>::identity(10);
    BaselineHazard baseline;  // fitted on the training split after training

    SurvNetModel() = default;
    explicit SurvNetModel(const SurvNetConfig& config);

    Eigen::Index parameter_count() const { return risk.parameter_count(); }
};

/// Log-risk psi for each column of `x` (raw feature units).
Vec risk_scores(const SurvNetModel& model, const Mat& x);

struct ScoreLoss {
    double loss = 0;
    Vec gradient;  // d loss / d score
};

/// Negative Breslow partial log-likelihood (a sum over events). Risk sets are
/// {j : T_j >= T_i}; risk-set sums are accumulated in log space. Throws
/// UndefinedMetricError without events.
double cox_partial_likelihood(ConstVec scores, ConstVec times, ConstEvents events);
ScoreLoss cox_loss_gradient(ConstVec scores, ConstVec times, ConstEvents events);

/// Mean hinge max(0, psi_j - psi_i + margin) over pairs T_i < T_j with an event at T_i.
double ranking_loss(ConstVec scores, ConstVec times, ConstEvents events, double margin);
ScoreLoss ranking_loss_gradient(ConstVec scores, ConstVec times, ConstEvents events, double margin);

struct SurvObjective {
    double loss = 0;
    double cox = 0;   // per-event partial likelihood
    double rank = 0;
    Vec gradient;     // same order as risk.pack()
};

/// Cox / events + lambda3 ranking + lambda4 ||phi||^2 with analytic gradient.
SurvObjective surv_objective(const SurvNetModel& model, const Mat& x, ConstVec times, ConstEvents events);

struct SurvHistory {
    std::vector<double> train_loss;
    std::vector<double> val_loss;
    int best_epoch = -1;
    bool stopped_early = false;
};

/// Full-batch Adam with early stopping on the validation objective; restores the
/// best weights and fits the Breslow baseline on the training split. Throws
/// DataError with fewer than `min_events` training events. A validation set
/// without events falls back to the training objective.
SurvHistory surv_train(SurvNetModel& model, const Mat& x_train, ConstVec t_train, ConstEvents e_train,
                       const Mat& x_val, ConstVec t_val, ConstEvents e_val);

/// H0(t) = sum over event times t_k <= t of d_k / sum_{T_j >= t_k} exp(psi_j).
BaselineHazard breslow_fit(ConstVec scores, ConstVec times, ConstEvents events);

struct LinearCoxModel {
    Vec beta;                  // raw feature scale
    Mat covariance;            // inverse observed information, raw scale
    BaselineHazard baseline;
    int iterations = 0;
    bool converged = false;
    bool ridge = false;        // diagonal 1e-6 was added to the information

    Vec scores(const Mat& x) const { return (beta.transpose() * x).transpose(); }
    Vec standard_errors() const { return covariance.diagonal().cwiseSqrt(); }
};

/// Newton-Raphson on the partial likelihood with step halving; converged when
/// the score norm falls below 1e-8. A singular information matrix gets a 1e-6
/// ridge (logged). Constant covariates raise DataError.
LinearCoxModel linear_coxph_fit(const Mat& x, ConstVec times, ConstEvents events, int max_iterations = 100);

void to_json(nlohmann::json& j, const LinearCoxModel& m);
LinearCoxModel linear_cox_from_json(const nlohmann::json& j);

/// Integrated calibration index at `horizon`: subjects are grouped into deciles
/// of predicted event probability, each decile's observed probability is
/// 1 - KM(horizon), the observed values are smoothed against the decile mean
/// predictions by tricube local-linear regression, and the result is the
/// decile-size weighted mean |smoothed - predicted|. Throws DataError below 10 subjects.
double ici(ConstVec predicted, ConstVec times, ConstEvents events, double horizon);

nlohmann::json to_json(const SurvNetModel& model);
SurvNetModel surv_model_from_json(const nlohmann::json& j);

}  // namespace progress::survnet
