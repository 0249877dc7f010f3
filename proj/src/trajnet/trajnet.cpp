#include "progress/trajnet/trajnet.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "progress/core/errors.hpp"
#include "progress/core/special.hpp"
#include "progress/numcore/adam.hpp"
#include "progress/numcore/checkpoint.hpp"

namespace progress::trajnet {

using numcore::Activation;

void to_json(nlohmann::json& j, const TrajNetConfig& c) {
    j = {{"input_dim", c.input_dim},     {"width", c.width},
         {"dropout", c.dropout},         {"lambda1", c.lambda1},
         {"lambda2", c.lambda2},         {"temperature", c.temperature},
         {"learning_rate", c.learning_rate}, {"batch_size", c.batch_size},
         {"max_epochs", c.max_epochs},   {"patience", c.patience},
         {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, TrajNetConfig& c) {
    const TrajNetConfig d;
    c.input_dim = j.value("input_dim", d.input_dim);
    c.width = j.value("width", d.width);
    c.dropout = j.value("dropout", d.dropout);
    c.lambda1 = j.value("lambda1", d.lambda1);
    c.lambda2 = j.value("lambda2", d.lambda2);
    c.temperature = j.value("temperature", d.temperature);
    c.learning_rate = j.value("learning_rate", d.learning_rate);
    c.batch_size = j.value("batch_size", d.batch_size);
    c.max_epochs = j.value("max_epochs", d.max_epochs);
    c.patience = j.value("patience", d.patience);
    c.seed = j.value("seed", d.seed);
}

TrajNetModel::TrajNetModel(const TrajNetConfig& c)
    : config(c),
      attention(c.input_dim, derive_seed(c.seed, 0)),
      input(Standardizer::identity(c.input_dim)) {
    if (c.input_dim <= 0 || c.width < 4) throw ConfigError("trajectory network: width must be at least 4");
    if (c.batch_size <= 0 || c.max_epochs <= 0 || c.patience <= 0)
        throw ConfigError("trajectory network: batch size, epochs and patience must be positive");
    const Eigen::Index w = c.width;
    encoder = numcore::DenseNet<double>({c.input_dim, w, w / 2, w / 4},
                                        {Activation::Gelu, Activation::Gelu, Activation::Gelu},
                                        {c.dropout, c.dropout, c.dropout}, derive_seed(c.seed, 1));
    heads = numcore::DenseNet<double>({w / 4, 6}, {Activation::Identity}, {0.0}, derive_seed(c.seed, 2));
}

Eigen::Index TrajNetModel::parameter_count() const {
    return attention.parameter_count() + encoder.parameter_count() + heads.parameter_count();
}

Vec TrajNetModel::pack() const {
    Vec flat(parameter_count());
    flat << attention.pack(), encoder.pack(), heads.pack();
    return flat;
}

void TrajNetModel::unpack(const Vec& flat) {
    if (flat.size() != parameter_count()) throw ShapeError("trajectory network: wrong parameter vector length");
    const Eigen::Index a = attention.parameter_count();
    const Eigen::Index e = encoder.parameter_count();
    attention.unpack(flat.segment(0, a));
    encoder.unpack(flat.segment(a, e));
    heads.unpack(flat.segment(a + e, heads.parameter_count()));
}

TrajForward traj_forward(const TrajNetModel& model, const Mat& x, bool dropout_active, Rng& rng) {
    TrajForward f;
    f.attention = numcore::attention_forward(model.attention, model.input.apply(x));
    f.encoder = numcore::forward(model.encoder, f.attention.output, dropout_active, rng);
    f.heads = numcore::forward(model.heads, f.encoder.result(), dropout_active, rng);
    f.mu = f.heads.result().topRows(3);
    f.logvar = f.heads.result().bottomRows(3);
    return f;
}

double nll_loss(const Mat& mu, const Mat& logvar, const Mat& targets) {
    if (mu.cols() == 0) throw DataError("nll: empty batch");
    const auto r2 = (targets - mu).array().square();
    return (0.5 * r2 * (-logvar.array()).exp() + 0.5 * logvar.array()).sum() / double(mu.cols());
}

namespace {

double sigmoid(double u) { return u >= 0 ? 1.0 / (1.0 + std::exp(-u)) : std::exp(u) / (1.0 + std::exp(u)); }

double sign(double v) { return double((v > 0) - (v < 0)); }

}  // namespace

double calibration_loss(const Mat& mu, const Mat& sigma, const Mat& targets, double temperature, double z,
                        double nominal) {
    if (mu.cols() == 0) throw DataError("calibration: empty batch");
    double total = 0;
    for (Eigen::Index k = 0; k < mu.rows(); ++k) {
        double covered = 0;
        for (Eigen::Index i = 0; i < mu.cols(); ++i) {
            const double band = z * sigma(k, i) - std::abs(mu(k, i) - targets(k, i));
            covered += temperature > 0 ? sigmoid(temperature * band) : (band >= 0 ? 1.0 : 0.0);
        }
        total += std::abs(covered / double(mu.cols()) - nominal);
    }
    return total;
}

LossGradient traj_objective(const TrajNetModel& model, const Mat& x, const Mat& targets_std, bool dropout_active,
                            Rng& rng) {
    const auto& cfg = model.config;
    if (targets_std.rows() != 3 || targets_std.cols() != x.cols()) throw ShapeError("trajectory objective: target shape");
    const TrajForward f = traj_forward(model, x, dropout_active, rng);
    const double b = double(x.cols());
    const Mat sigma = (0.5 * f.logvar.array()).exp();
    const Mat resid = f.mu - targets_std;

    LossGradient out;
    out.nll = nll_loss(f.mu, f.logvar, targets_std);
    out.calibration = calibration_loss(f.mu, sigma, targets_std, cfg.temperature);
    const Vec params = model.pack();
    out.loss = out.nll + cfg.lambda1 * params.squaredNorm() + cfg.lambda2 * out.calibration;

    Mat head_grad(6, x.cols());
    const auto inv_var = (-f.logvar.array()).exp();
    head_grad.topRows(3) = (resid.array() * inv_var / b).matrix();
    head_grad.bottomRows(3) = (0.5 * (1.0 - resid.array().square() * inv_var) / b).matrix();

    if (cfg.lambda2 != 0) {
        const double z = special::kZ975;
        const double t = cfg.temperature;
        for (Eigen::Index k = 0; k < 3; ++k) {
            double covered = 0;
            Vec ds(x.cols());
            for (Eigen::Index i = 0; i < x.cols(); ++i) {
                const double s = sigmoid(t * (z * sigma(k, i) - std::abs(resid(k, i))));
                covered += s;
                ds(i) = s * (1 - s) * t;
            }
            const double outer = cfg.lambda2 * sign(covered / b - 0.95) / b;
            for (Eigen::Index i = 0; i < x.cols(); ++i) {
                head_grad(k, i) += outer * ds(i) * -sign(resid(k, i));
                head_grad(k + 3, i) += outer * ds(i) * z * sigma(k, i) * 0.5;
            }
        }
    }

    const auto g_heads = numcore::backward(model.heads, f.heads, head_grad);
    const auto g_enc = numcore::backward(model.encoder, f.encoder, g_heads.input);
    const auto g_att = numcore::attention_backward(model.attention, f.attention, g_enc.input);
    out.gradient.resize(params.size());
    out.gradient << g_att.pack(), numcore::pack(g_enc), numcore::pack(g_heads);
    out.gradient += 2 * cfg.lambda1 * params;
    return out;
}

double traj_validation_loss(const TrajNetModel& model, const Mat& x, const Mat& targets_std) {
    Rng unused(0);
    const TrajForward f = traj_forward(model, x, false, unused);
    const Mat sigma = (0.5 * f.logvar.array()).exp();
    return nll_loss(f.mu, f.logvar, targets_std) + model.config.lambda1 * model.pack().squaredNorm() +
           model.config.lambda2 * calibration_loss(f.mu, sigma, targets_std, 0);
}

TrainingHistory traj_train(TrajNetModel& model, const Mat& x_train, const Mat& y_train, const Mat& x_val,
                           const Mat& y_val) {
    const auto& cfg = model.config;
    if (x_train.rows() != cfg.input_dim || y_train.rows() != 3 || x_train.cols() != y_train.cols())
        throw ShapeError("trajectory training: inputs must be input_dim x n and targets 3 x n");
    if (x_val.cols() != y_val.cols()) throw ShapeError("trajectory training: validation shapes differ");
    model.input = Standardizer::fit(x_train);
    model.target = Standardizer::fit(y_train);
    const Mat yt = model.target.apply(y_train);
    const bool has_val = x_val.cols() > 0;
    const Mat& xv = has_val ? x_val : x_train;
    const Mat yv = has_val ? model.target.apply(y_val) : yt;

    Rng rng = make_rng(cfg.seed, 100);
    numcore::AdamState<double> adam(model.parameter_count(), cfg.learning_rate);
    Vec params = model.pack();
    Vec best = params;
    double best_val = std::numeric_limits<double>::infinity();
    int since_best = 0;
    TrainingHistory history;
    std::vector<Eigen::Index> order(static_cast<std::size_t>(x_train.cols()));
    std::iota(order.begin(), order.end(), Eigen::Index{0});

    for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double epoch_loss = 0;
        for (std::size_t start = 0; start < order.size(); start += std::size_t(cfg.batch_size)) {
            const std::size_t end = std::min(order.size(), start + std::size_t(cfg.batch_size));
            const std::vector<Eigen::Index> idx(order.begin() + std::ptrdiff_t(start), order.begin() + std::ptrdiff_t(end));
            const Mat xb = x_train(Eigen::all, idx);
            const Mat yb = yt(Eigen::all, idx);
            const LossGradient lg = traj_objective(model, xb, yb, true, rng);
            if (!std::isfinite(lg.loss) || !lg.gradient.allFinite())
                throw TrainingError("trajectory network loss became non-finite", epoch);
            epoch_loss += lg.loss * double(end - start);
            numcore::optimizer_step<double>(params, lg.gradient, adam);
            model.unpack(params);
        }
        history.train_loss.push_back(epoch_loss / double(order.size()));
        const double val = traj_validation_loss(model, xv, yv);
        if (!std::isfinite(val)) throw TrainingError("trajectory network validation loss became non-finite", epoch);
        history.val_loss.push_back(val);
        if (val < best_val) {
            best_val = val;
            best = params;
            history.best_epoch = epoch;
            since_best = 0;
        } else if (++since_best >= cfg.patience) {
            history.stopped_early = true;
            break;
        }
    }
    model.unpack(best);
    return history;
}

std::vector<TrajPrediction> mc_predict(const TrajNetModel& model, const Mat& x, int passes, std::uint64_t seed) {
    if (passes < 2) throw ConfigError("MC prediction needs at least 2 passes");
    const Eigen::Index n = x.cols();
    Mat mean = Mat::Zero(3, n), m2 = Mat::Zero(3, n), alea = Mat::Zero(3, n);
    for (int m = 0; m < passes; ++m) {
        Rng rng = make_rng(seed, std::uint64_t(m));
        const TrajForward f = traj_forward(model, x, true, rng);
        // Welford update of the mean and spread of the predicted means
        const Mat delta = f.mu - mean;
        mean += delta / double(m + 1);
        m2 += (delta.array() * (f.mu - mean).array()).matrix();
        alea += f.logvar.array().exp().matrix();
    }
    alea /= double(passes);
    const Mat epi = m2 / double(passes);
    std::vector<TrajPrediction> out(static_cast<std::size_t>(n));
    const Vec& sd = model.target.sd;
    for (Eigen::Index i = 0; i < n; ++i) {
        auto& p = out[std::size_t(i)];
        for (int k = 0; k < 3; ++k) {
            const double s2 = sd(k) * sd(k);
            p.mean(k) = mean(k, i) * sd(k) + model.target.mean(k);
            p.aleatoric(k) = alea(k, i) * s2;
            p.epistemic(k) = epi(k, i) * s2;
            p.total(k) = p.aleatoric(k) + p.epistemic(k);
            const double half = special::kZ975 * std::sqrt(p.total(k));
            p.lo(k) = p.mean(k) - half;
            p.hi(k) = p.mean(k) + half;
        }
    }
    return out;
}

namespace {

nlohmann::json standardizer_json(const Standardizer& s) {
    return {{"mean", std::vector<double>(s.mean.data(), s.mean.data() + s.mean.size())},
            {"sd", std::vector<double>(s.sd.data(), s.sd.data() + s.sd.size())}};
}

Standardizer standardizer_from(const nlohmann::json& j) {
    const auto m = j.at("mean").get<std::vector<double>>();
    const auto s = j.at("sd").get<std::vector<double>>();
    if (m.size() != s.size()) throw ShapeError("checkpoint: standardizer lengths differ");
    return {Eigen::Map<const Vec>(m.data(), Eigen::Index(m.size())),
            Eigen::Map<const Vec>(s.data(), Eigen::Index(s.size()))};
}

}  // namespace

nlohmann::json to_json(const TrajNetModel& model) {
    nlohmann::json cfg = model.config;
    return {{"kind", "trajectory_network"},
            {"config", cfg},
            {"attention", numcore::to_json(model.attention)},
            {"encoder", numcore::to_json(model.encoder)},
            {"heads", numcore::to_json(model.heads)},
            {"input_standardizer", standardizer_json(model.input)},
            {"target_standardizer", standardizer_json(model.target)}};
}

TrajNetModel traj_model_from_json(const nlohmann::json& j) {
    TrajNetModel m;
    m.config = j.at("config").get<TrajNetConfig>();
    m.attention = numcore::attention_from_json<double>(j.at("attention"));
    m.encoder = numcore::dense_net_from_json<double>(j.at("encoder"));
    m.heads = numcore::dense_net_from_json<double>(j.at("heads"));
    m.input = standardizer_from(j.at("input_standardizer"));
    m.target = standardizer_from(j.at("target_standardizer"));
    if (m.heads.output_dim() != 6 || m.encoder.output_dim() != m.heads.input_dim() ||
        m.attention.dim() != m.encoder.input_dim() || m.input.mean.size() != m.attention.dim() ||
        m.target.mean.size() != 3)
        throw ShapeError("checkpoint: trajectory network components do not chain");
    return m;
}

}  // namespace progress::trajnet
