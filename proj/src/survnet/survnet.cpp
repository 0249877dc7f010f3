#include "progress/survnet/survnet.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "progress/core/errors.hpp"
#include "progress/core/log.hpp"
#include "progress/numcore/adam.hpp"
#include "progress/numcore/checkpoint.hpp"

namespace progress::survnet {

using numcore::Activation;

void to_json(nlohmann::json& j, const SurvNetConfig& c) {
    j = {{"input_dim", c.input_dim}, {"width", c.width},       {"margin", c.margin},
         {"lambda3", c.lambda3},     {"lambda4", c.lambda4},   {"learning_rate", c.learning_rate},
         {"max_epochs", c.max_epochs}, {"patience", c.patience}, {"min_events", c.min_events},
         {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, SurvNetConfig& c) {
    const SurvNetConfig d;
    c.input_dim = j.value("input_dim", d.input_dim);
    c.width = j.value("width", d.width);
    c.margin = j.value("margin", d.margin);
    c.lambda3 = j.value("lambda3", d.lambda3);
    c.lambda4 = j.value("lambda4", d.lambda4);
    c.learning_rate = j.value("learning_rate", d.learning_rate);
    c.max_epochs = j.value("max_epochs", d.max_epochs);
    c.patience = j.value("patience", d.patience);
    c.min_events = j.value("min_events", d.min_events);
    c.seed = j.value("seed", d.seed);
}

double BaselineHazard::at(double t) const {
    const auto it = std::upper_bound(times.begin(), times.end(), t);
    return it == times.begin() ? 0.0 : cumulative[std::size_t(it - times.begin()) - 1];
}

void to_json(nlohmann::json& j, const BaselineHazard& h) { j = {{"times", h.times}, {"H0", h.cumulative}}; }

void from_json(const nlohmann::json& j, BaselineHazard& h) {
    h.times = j.at("times").get<std::vector<double>>();
    h.cumulative = j.at("H0").get<std::vector<double>>();
    if (h.times.size() != h.cumulative.size()) throw ShapeError("baseline hazard: time and H0 lengths differ");
}

double SurvivalCurve::at(double t) const { return std::exp(-hazard.at(t) * std::exp(psi)); }

std::optional<double> SurvivalCurve::median() const {
    for (std::size_t k = 0; k < hazard.times.size(); ++k)
        if (std::exp(-hazard.cumulative[k] * std::exp(psi)) <= 0.5) return hazard.times[k];
    return std::nullopt;
}

SurvivalCurve survival_curve(const BaselineHazard& hazard, double psi) { return {hazard, psi}; }

SurvNetModel::SurvNetModel(const SurvNetConfig& c)
    : config(c), input(numcore::Standardizer<double>::identity(c.input_dim)) {
    if (c.input_dim <= 0 || c.width < 2) throw ConfigError("survival network: width must be at least 2");
    if (c.max_epochs <= 0 || c.patience <= 0) throw ConfigError("survival network: epochs and patience must be positive");
    if (!(c.margin > 0)) throw ConfigError("survival network: ranking margin must be positive");
    const Eigen::Index w = c.width;
    risk = numcore::DenseNet<double>({c.input_dim, w, w / 2, 1},
                                     {Activation::Relu, Activation::Relu, Activation::Identity}, {0.0, 0.0, 0.0},
                                     derive_seed(c.seed, 0));
}

Vec risk_scores(const SurvNetModel& model, const Mat& x) {
    Rng unused(0);
    return numcore::forward(model.risk, model.input.apply(x), false, unused).result().row(0).transpose();
}

namespace {

void check_survival_inputs(ConstVec scores, ConstVec times, ConstEvents events) {
    if (scores.size() != times.size() || scores.size() != events.size())
        throw ShapeError("survival loss: scores, times and events differ in length");
}

std::vector<Eigen::Index> ascending(ConstVec times) {
    std::vector<Eigen::Index> order(static_cast<std::size_t>(times.size()));
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return times(a) < times(b); });
    return order;
}

// Groups of equal times in ascending order: [begin, end) into `order`.
template <typename F>
void for_each_time_group(const std::vector<Eigen::Index>& order, ConstVec times, F&& f) {
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        while (j < order.size() && times(order[j]) == times(order[i])) ++j;
        f(i, j);
        i = j;
    }
}

}  // namespace

ScoreLoss cox_loss_gradient(ConstVec scores, ConstVec times, ConstEvents events) {
    check_survival_inputs(scores, times, events);
    if (events.sum() == 0) throw UndefinedMetricError("partial likelihood: no events");
    const auto order = ascending(times);
    const std::size_t n = order.size();
    constexpr double kNegInf = -std::numeric_limits<double>::infinity();
    const auto log_add = [](double a, double b) {
        if (a < b) std::swap(a, b);
        return b == -std::numeric_limits<double>::infinity() ? a : a + std::log1p(std::exp(b - a));
    };
    // log_suffix[i] = log sum of exp(psi) over order[i..n)
    std::vector<double> log_suffix(n + 1, kNegInf);
    for (std::size_t i = n; i-- > 0;) log_suffix[i] = log_add(log_suffix[i + 1], scores(order[i]));

    ScoreLoss out;
    out.gradient = Vec::Zero(scores.size());
    double log_acc = kNegInf;  // log of sum over event times so far of d_k / risk-set sum
    for_each_time_group(order, times, [&](std::size_t i, std::size_t j) {
        int d = 0;
        for (std::size_t k = i; k < j; ++k)
            if (events(order[k])) {
                ++d;
                out.loss -= scores(order[k]);
                out.gradient(order[k]) -= 1.0;
            }
        if (d > 0) {
            out.loss += d * log_suffix[i];
            log_acc = log_add(log_acc, std::log(double(d)) - log_suffix[i]);
        }
        if (log_acc > kNegInf)
            for (std::size_t k = i; k < j; ++k) out.gradient(order[k]) += std::exp(scores(order[k]) + log_acc);
    });
    return out;
}

double cox_partial_likelihood(ConstVec scores, ConstVec times, ConstEvents events) {
    return cox_loss_gradient(scores, times, events).loss;
}

ScoreLoss ranking_loss_gradient(ConstVec scores, ConstVec times, ConstEvents events, double margin) {
    check_survival_inputs(scores, times, events);
    const Eigen::Index n = scores.size();
    ScoreLoss out;
    out.gradient = Vec::Zero(n);
    long pairs = 0;
    double total = 0;
    for (Eigen::Index i = 0; i < n; ++i) {
        if (!events(i)) continue;
        for (Eigen::Index j = 0; j < n; ++j) {
            if (!(times(i) < times(j))) continue;
            ++pairs;
            const double h = scores(j) - scores(i) + margin;
            if (h > 0) {
                total += h;
                out.gradient(j) += 1;
                out.gradient(i) -= 1;
            }
        }
    }
    if (pairs > 0) {
        out.loss = total / double(pairs);
        out.gradient /= double(pairs);
    }
    return out;
}

double ranking_loss(ConstVec scores, ConstVec times, ConstEvents events, double margin) {
    return ranking_loss_gradient(scores, times, events, margin).loss;
}

SurvObjective surv_objective(const SurvNetModel& model, const Mat& x, ConstVec times, ConstEvents events) {
    const auto& cfg = model.config;
    Rng unused(0);
    const auto cache = numcore::forward(model.risk, model.input.apply(x), false, unused);
    const Vec psi = cache.result().row(0).transpose();
    const double n_events = double(events.sum());
    const ScoreLoss cox = cox_loss_gradient(psi, times, events);
    const ScoreLoss rank = ranking_loss_gradient(psi, times, events, cfg.margin);
    const Vec params = model.risk.pack();

    SurvObjective out;
    out.cox = cox.loss / n_events;
    out.rank = rank.loss;
    out.loss = out.cox + cfg.lambda3 * out.rank + cfg.lambda4 * params.squaredNorm();
    const Mat score_grad = (cox.gradient / n_events + cfg.lambda3 * rank.gradient).transpose();
    out.gradient = numcore::pack(numcore::backward(model.risk, cache, score_grad)) + 2 * cfg.lambda4 * params;
    return out;
}

SurvHistory surv_train(SurvNetModel& model, const Mat& x_train, ConstVec t_train, ConstEvents e_train,
                       const Mat& x_val, ConstVec t_val, ConstEvents e_val) {
    const auto& cfg = model.config;
    if (x_train.rows() != cfg.input_dim || x_train.cols() != t_train.size())
        throw ShapeError("survival training: features must be input_dim x n");
    if (e_train.sum() < cfg.min_events)
        throw DataError("survival training: fewer than " + std::to_string(cfg.min_events) + " training events");
    model.input = numcore::Standardizer<double>::fit(x_train);
    const bool use_val = x_val.cols() > 0 && e_val.sum() > 0;

    numcore::AdamState<double> adam(model.parameter_count(), cfg.learning_rate);
    Vec params = model.risk.pack();
    Vec best = params;
    double best_val = std::numeric_limits<double>::infinity();
    int since_best = 0;
    SurvHistory history;
    for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
        const SurvObjective obj = surv_objective(model, x_train, t_train, e_train);
        if (!std::isfinite(obj.loss) || !obj.gradient.allFinite())
            throw TrainingError("survival network loss became non-finite", epoch);
        history.train_loss.push_back(obj.loss);
        numcore::optimizer_step<double>(params, obj.gradient, adam);
        model.risk.unpack(params);
        const double val = use_val ? surv_objective(model, x_val, t_val, e_val).loss
                                   : surv_objective(model, x_train, t_train, e_train).loss;
        if (!std::isfinite(val)) throw TrainingError("survival network validation loss became non-finite", epoch);
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
    model.risk.unpack(best);
    model.baseline = breslow_fit(risk_scores(model, x_train), t_train, e_train);
    return history;
}

BaselineHazard breslow_fit(ConstVec scores, ConstVec times, ConstEvents events) {
    check_survival_inputs(scores, times, events);
    if (events.sum() == 0) throw UndefinedMetricError("Breslow: no events");
    const auto order = ascending(times);
    const std::size_t n = order.size();
    std::vector<double> suffix(n + 1, 0.0);
    for (std::size_t i = n; i-- > 0;) suffix[i] = suffix[i + 1] + std::exp(scores(order[i]));
    BaselineHazard h;
    double running = 0;
    for_each_time_group(order, times, [&](std::size_t i, std::size_t j) {
        int d = 0;
        for (std::size_t k = i; k < j; ++k) d += events(order[k]) != 0;
        if (d == 0) return;
        running += d / suffix[i];
        h.times.push_back(times(order[i]));
        h.cumulative.push_back(running);
    });
    return h;
}

namespace {

struct CoxDerivatives {
    double loglik = 0;
    Vec score;
    Mat information;
};

CoxDerivatives cox_derivatives(const Mat& x, const Vec& beta, ConstVec times, ConstEvents events,
                               const std::vector<Eigen::Index>& order) {
    const Eigen::Index p = x.rows();
    const Vec eta = (beta.transpose() * x).transpose();
    const double shift = eta.maxCoeff();
    CoxDerivatives d{0, Vec::Zero(p), Mat::Zero(p, p)};
    double s0 = 0;
    Vec s1 = Vec::Zero(p);
    Mat s2 = Mat::Zero(p, p);
    // Walk groups from the latest time so the sums cover each risk set.
    std::vector<std::pair<std::size_t, std::size_t>> groups;
    for_each_time_group(order, times, [&](std::size_t i, std::size_t j) { groups.emplace_back(i, j); });
    for (auto g = groups.rbegin(); g != groups.rend(); ++g) {
        int dcount = 0;
        Vec xsum = Vec::Zero(p);
        for (std::size_t k = g->first; k < g->second; ++k) {
            const Eigen::Index s = order[k];
            const double w = std::exp(eta(s) - shift);
            s0 += w;
            s1 += w * x.col(s);
            s2.noalias() += w * x.col(s) * x.col(s).transpose();
            if (events(s)) {
                ++dcount;
                xsum += x.col(s);
                d.loglik += eta(s);
            }
        }
        if (dcount == 0) continue;
        const Vec mean = s1 / s0;
        d.loglik -= dcount * (shift + std::log(s0));
        d.score += xsum - dcount * mean;
        d.information += dcount * (s2 / s0 - mean * mean.transpose());
    }
    return d;
}

}  // namespace

LinearCoxModel linear_coxph_fit(const Mat& x, ConstVec times, ConstEvents events, int max_iterations) {
    const Eigen::Index p = x.rows(), n = x.cols();
    if (times.size() != n || events.size() != n) throw ShapeError("linear Cox: features, times and events differ");
    if (n <= p) throw DataError("linear Cox: need more subjects than covariates");
    if (events.sum() == 0) throw DataError("linear Cox: no events");
    const auto scaler = numcore::Standardizer<double>::fit(x);
    for (Eigen::Index r = 0; r < p; ++r)
        if (!((x.row(r).array() - scaler.mean(r)).abs().maxCoeff() > 0))
            throw DataError("linear Cox: covariate " + std::to_string(r) + " has no variance");
    const Mat z = scaler.apply(x);
    const auto order = ascending(times);

    LinearCoxModel m;
    Vec beta = Vec::Zero(p);
    CoxDerivatives d = cox_derivatives(z, beta, times, events, order);
    const auto solve = [&](const Mat& info, const Vec& rhs) {
        Eigen::LDLT<Mat> ldlt(info);
        if (ldlt.info() != Eigen::Success || !ldlt.isPositive() || ldlt.vectorD().minCoeff() <= 1e-12) {
            if (!m.ridge) log_warning("linear Cox: singular information matrix, adding ridge 1e-6");
            m.ridge = true;
            return Vec(Mat(info + 1e-6 * Mat::Identity(p, p)).ldlt().solve(rhs));
        }
        return Vec(ldlt.solve(rhs));
    };
    for (m.iterations = 0; m.iterations < max_iterations; ++m.iterations) {
        if (d.score.norm() < 1e-8) {
            m.converged = true;
            break;
        }
        const Vec step = solve(d.information, d.score);
        double scale = 1;
        CoxDerivatives next = cox_derivatives(z, beta + step, times, events, order);
        for (int halving = 0; halving < 30 && !(next.loglik >= d.loglik - 1e-12); ++halving) {
            scale /= 2;
            next = cox_derivatives(z, beta + scale * step, times, events, order);
        }
        beta += scale * step;
        d = std::move(next);
    }
    if (!m.converged) log_warning("linear Cox: Newton-Raphson stopped before the score norm reached 1e-8");

    const Vec inv_sd = scaler.sd.cwiseInverse();
    m.beta = beta.cwiseProduct(inv_sd);
    Mat info = d.information;
    if (m.ridge) info += 1e-6 * Mat::Identity(p, p);
    m.covariance = inv_sd.asDiagonal() * Mat(info.completeOrthogonalDecomposition().pseudoInverse()) * inv_sd.asDiagonal();
    m.baseline = breslow_fit(m.scores(x), times, events);
    return m;
}

void to_json(nlohmann::json& j, const LinearCoxModel& m) {
    j = {{"kind", "linear_cox"},
         {"beta", std::vector<double>(m.beta.data(), m.beta.data() + m.beta.size())},
         {"se", [&] {
              const Vec se = m.standard_errors();
              return std::vector<double>(se.data(), se.data() + se.size());
          }()},
         {"baseline", m.baseline},
         {"iterations", m.iterations},
         {"converged", m.converged},
         {"ridge", m.ridge}};
}

LinearCoxModel linear_cox_from_json(const nlohmann::json& j) {
    LinearCoxModel m;
    const auto beta = j.at("beta").get<std::vector<double>>();
    m.beta = Eigen::Map<const Vec>(beta.data(), Eigen::Index(beta.size()));
    const auto se = j.value("se", std::vector<double>(beta.size(), 0.0));
    m.covariance = Eigen::Map<const Vec>(se.data(), Eigen::Index(se.size())).cwiseAbs2().asDiagonal();
    m.baseline = j.at("baseline").get<BaselineHazard>();
    m.iterations = j.value("iterations", 0);
    m.converged = j.value("converged", false);
    m.ridge = j.value("ridge", false);
    return m;
}

double ici(ConstVec predicted, ConstVec times, ConstEvents events, double horizon) {
    const Eigen::Index n = predicted.size();
    if (times.size() != n || events.size() != n) throw ShapeError("ICI: input lengths differ");
    if (n < 10) throw DataError("ICI: need at least 10 subjects");
    if ((predicted.array() < 0).any() || (predicted.array() > 1).any())
        throw DataError("ICI: predicted probabilities must lie in [0, 1]");
    std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return predicted(a) < predicted(b); });

    constexpr int kGroups = 10;
    Eigen::VectorXd x(kGroups), y(kGroups), w(kGroups);
    for (int g = 0; g < kGroups; ++g) {
        const auto lo = std::size_t(g * n / kGroups), hi = std::size_t((g + 1) * n / kGroups);
        const std::vector<Eigen::Index> idx(order.begin() + std::ptrdiff_t(lo), order.begin() + std::ptrdiff_t(hi));
        x(g) = predicted(idx).mean();
        y(g) = 1.0 - evalstats::km_fit(times(idx), events(idx)).at(horizon);
        w(g) = double(idx.size());
    }

    double total = 0;
    for (int g = 0; g < kGroups; ++g) {
        const double reach = (x.array() - x(g)).abs().maxCoeff();
        Eigen::VectorXd k(kGroups);
        for (int e = 0; e < kGroups; ++e) {
            const double u = reach > 0 ? std::abs(x(e) - x(g)) / (reach * (1 + 1e-9)) : 0.0;
            k(e) = w(e) * std::pow(1 - u * u * u, 3);
        }
        const double sw = k.sum();
        const double mx = k.dot(x) / sw, my = k.dot(y) / sw;
        const double sxx = k.dot((x.array() - mx).square().matrix());
        double smooth = my;
        if (sxx > 1e-14 * sw) {
            const double slope = k.dot(((x.array() - mx) * (y.array() - my)).matrix()) / sxx;
            smooth = my + slope * (x(g) - mx);
        }
        total += w(g) * std::abs(smooth - x(g));
    }
    return total / double(n);
}

nlohmann::json to_json(const SurvNetModel& model) {
    nlohmann::json cfg = model.config;
    const auto& s = model.input;
    return {{"kind", "survival_network"},
            {"config", cfg},
            {"risk", numcore::to_json(model.risk)},
            {"input_standardizer",
             {{"mean", std::vector<double>(s.mean.data(), s.mean.data() + s.mean.size())},
              {"sd", std::vector<double>(s.sd.data(), s.sd.data() + s.sd.size())}}},
            {"baseline", model.baseline}};
}

SurvNetModel surv_model_from_json(const nlohmann::json& j) {
    SurvNetModel m;
    m.config = j.at("config").get<SurvNetConfig>();
    m.risk = numcore::dense_net_from_json<double>(j.at("risk"));
    const auto mean = j.at("input_standardizer").at("mean").get<std::vector<double>>();
    const auto sd = j.at("input_standardizer").at("sd").get<std::vector<double>>();
    m.input.mean = Eigen::Map<const Vec>(mean.data(), Eigen::Index(mean.size()));
    m.input.sd = Eigen::Map<const Vec>(sd.data(), Eigen::Index(sd.size()));
    m.baseline = j.at("baseline").get<BaselineHazard>();
    if (m.risk.output_dim() != 1 || m.input.mean.size() != m.risk.input_dim() || m.input.sd.size() != m.input.mean.size())
        throw ShapeError("checkpoint: survival network components do not chain");
    return m;
}

}  // namespace progress::survnet
