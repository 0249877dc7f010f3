#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "progress/core/random.hpp"
#include "progress/numcore/attention.hpp"
#include "progress/numcore/dense_net.hpp"
#include "progress/numcore/standardizer.hpp"

namespace progress::trajnet {

using Mat = numcore::Matrix<double>;
using Vec = numcore::Vector<double>;

struct TrajNetConfig {
    int input_dim = 10;
    int width = 128;  // encoder widths [w, w/2, w/4]
    double dropout = 0.1;
    double lambda1 = 1e-4;  // weight decay
    double lambda2 = 0.1;   // calibration weight
    double temperature = 50;  // sigmoid surrogate steepness for the coverage indicator
    double learning_rate = 1e-3;
    int batch_size = 64;
    int max_epochs = 300;
    int patience = 15;
    std::uint64_t seed = 0;
};

void to_json(nlohmann::json& j, const TrajNetConfig& c);
void from_json(const nlohmann::json& j, TrajNetConfig& c);

using Standardizer = numcore::Standardizer<double>;

/// Attention on the standardized input, GELU encoder with dropout, and one
/// linear layer whose six rows are the heads (mu_a, mu_b, mu_g, logvar_a, logvar_b, logvar_g).
struct TrajNetModel {
    TrajNetConfig config;
    numcore::AttentionBlock<double> attention;
    numcore::DenseNet<double> encoder;
    numcore::DenseNet<double> heads;
    Standardizer input = Standardizer::identity(10);
    Standardizer target = Standardizer::identity(3);

    TrajNetModel() = default;
    explicit TrajNetModel(const TrajNetConfig& config);

    Eigen::Index parameter_count() const;
    Vec pack() const;
    void unpack(const Vec& flat);
};

struct TrajForward {
    Mat mu;      // 3 x batch, standardized target units
    Mat logvar;  // 3 x batch
    numcore::AttentionCache<double> attention;
    numcore::ForwardCache<double> encoder;
    numcore::ForwardCache<double> heads;
};

/// `x` is input_dim x batch in raw feature units.
TrajForward traj_forward(const TrajNetModel& model, const Mat& x, bool dropout_active, Rng& rng);

/// Mean over the batch of sum_k (theta - mu)^2 / (2 sigma^2) + log(sigma^2) / 2.
double nll_loss(const Mat& mu, const Mat& logvar, const Mat& targets);

/// Sum over parameters of |coverage of mu +- z sigma - 0.95|. With `temperature`
/// > 0 the inside-band indicator is replaced by sigmoid(T (z sigma - |r|)).
double calibration_loss(const Mat& mu, const Mat& sigma, const Mat& targets, double temperature = 0,
                        double z = 1.959963984540054, double nominal = 0.95);

struct LossGradient {
    double loss = 0;
    double nll = 0;
    double calibration = 0;
    Vec gradient;  // same order as TrajNetModel::pack
};

/// Full training objective NLL + lambda1 ||Theta||^2 + lambda2 Lcal (surrogate)
/// on a batch of standardized targets (3 x batch), with analytic gradient.
LossGradient traj_objective(const TrajNetModel& model, const Mat& x, const Mat& targets_std, bool dropout_active,
                            Rng& rng);

struct TrainingHistory {
    std::vector<double> train_loss;
    std::vector<double> val_loss;
    int best_epoch = -1;
    bool stopped_early = false;
};

/// Mini-batch Adam on the combined loss with early stopping on validation loss.
/// Samples are columns; targets are 3 x n in original units. Input and target
/// standardization is fitted on the training columns. An empty validation set
/// falls back to the training set.
TrainingHistory traj_train(TrajNetModel& model, const Mat& x_train, const Mat& y_train, const Mat& x_val,
                           const Mat& y_val);

/// Objective used for early stopping: dropout off, exact indicator.
double traj_validation_loss(const TrajNetModel& model, const Mat& x, const Mat& targets_std);

struct TrajPrediction {
    Eigen::Vector3d mean = Eigen::Vector3d::Zero();
    Eigen::Vector3d aleatoric = Eigen::Vector3d::Zero();
    Eigen::Vector3d epistemic = Eigen::Vector3d::Zero();
    Eigen::Vector3d total = Eigen::Vector3d::Zero();
    Eigen::Vector3d lo = Eigen::Vector3d::Zero();
    Eigen::Vector3d hi = Eigen::Vector3d::Zero();
};

/// M dropout-active passes; each pass m uses the stream derived from (seed, m).
/// Results are in original target units. Throws ConfigError when M < 2.
std::vector<TrajPrediction> mc_predict(const TrajNetModel& model, const Mat& x, int passes = 50,
                                       std::uint64_t seed = 0);

nlohmann::json to_json(const TrajNetModel& model);
TrajNetModel traj_model_from_json(const nlohmann::json& j);

}  // namespace progress::trajnet
