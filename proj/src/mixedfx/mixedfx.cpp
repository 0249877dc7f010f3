#include "progress/mixedfx/mixedfx.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <ostream>
#include <string>

#include "progress/core/errors.hpp"

namespace progress::mixedfx {

namespace {

constexpr int kParams = 7;
constexpr double kLogDiagMin = -15, kLogDiagMax = 10;
constexpr double kOffDiagBound = 1e3;
constexpr double kLogSigma2Min = -25, kLogSigma2Max = 15;

double lower_bound_of(int k) { return k < 3 ? kLogDiagMin : k < 6 ? -kOffDiagBound : kLogSigma2Min; }
double upper_bound_of(int k) { return k < 3 ? kLogDiagMax : k < 6 ? kOffDiagBound : kLogSigma2Max; }

Eigen::VectorXd clamp_to_box(Eigen::VectorXd x) {
    for (int k = 0; k < kParams; ++k) x(k) = std::clamp(x(k), lower_bound_of(k), upper_bound_of(k));
    return x;
}

}  // namespace

SubjectSeries series_from_record(const dataio::ParticipantRecord& record) {
    SubjectSeries s;
    s.subject_id = record.subject_id;
    std::vector<double> t, y;
    for (const auto& v : record.visits)
        if (v.cdrsb) {
            t.push_back(v.years);
            y.push_back(*v.cdrsb);
        }
    s.times = Eigen::Map<Eigen::VectorXd>(t.data(), Eigen::Index(t.size()));
    s.y = Eigen::Map<Eigen::VectorXd>(y.data(), Eigen::Index(y.size()));
    return s;
}

Eigen::MatrixXd quadratic_design(const Eigen::VectorXd& times) {
    Eigen::MatrixXd z(times.size(), 3);
    z.col(0).setOnes();
    z.col(1) = times;
    z.col(2) = times.array().square();
    return z;
}

Eigen::Matrix3d covariance_from_parameters(const Eigen::VectorXd& params) {
    Eigen::Matrix3d l = Eigen::Matrix3d::Zero();
    for (int k = 0; k < 3; ++k) l(k, k) = std::exp(params(k));
    l(1, 0) = params(3);
    l(2, 0) = params(4);
    l(2, 1) = params(5);
    return l * l.transpose();
}

namespace {

struct GlsPieces {
    double log_det_v = 0;
    Eigen::Matrix3d a = Eigen::Matrix3d::Zero();  // sum X' V^-1 X
    Eigen::Vector3d b = Eigen::Vector3d::Zero();  // sum X' V^-1 y
    std::vector<Eigen::LLT<Eigen::MatrixXd>> factors;
    bool ok = true;
};

GlsPieces gls_pieces(std::span<const SubjectSeries> data, const Eigen::Matrix3d& sigma_u, double sigma2) {
    GlsPieces g;
    g.factors.reserve(data.size());
    for (const auto& s : data) {
        if (s.y.size() == 0) {
            g.factors.emplace_back();
            continue;
        }
        const Eigen::MatrixXd z = quadratic_design(s.times);
        Eigen::MatrixXd v = z * sigma_u * z.transpose();
        v.diagonal().array() += sigma2;
        Eigen::LLT<Eigen::MatrixXd> llt(v);
        if (llt.info() != Eigen::Success) {
            g.ok = false;
            return g;
        }
        g.log_det_v += 2.0 * llt.matrixLLT().diagonal().array().log().sum();
        const Eigen::MatrixXd vinv_z = llt.solve(z);
        g.a += z.transpose() * vinv_z;
        g.b += vinv_z.transpose() * s.y;
        g.factors.push_back(std::move(llt));
    }
    return g;
}

}  // namespace

double reml_criterion(std::span<const SubjectSeries> data, const Eigen::Matrix3d& sigma_u, double sigma2) {
    const auto g = gls_pieces(data, sigma_u, sigma2);
    if (!g.ok) return -std::numeric_limits<double>::infinity();
    const Eigen::LLT<Eigen::Matrix3d> a_llt(g.a);
    if (a_llt.info() != Eigen::Success) return -std::numeric_limits<double>::infinity();
    const Eigen::Vector3d beta = a_llt.solve(g.b);
    double quad = 0;
    for (std::size_t i = 0; i < data.size(); ++i) {
        const auto& s = data[i];
        if (s.y.size() == 0) continue;
        const Eigen::VectorXd r = s.y - quadratic_design(s.times) * beta;
        quad += r.dot(g.factors[i].solve(r));
    }
    const double log_det_a = 2.0 * a_llt.matrixLLT().diagonal().array().log().sum();
    const double value = -0.5 * (g.log_det_v + log_det_a + quad);
    return std::isfinite(value) ? value : -std::numeric_limits<double>::infinity();
}

namespace {

// GLS by QR on the whitened stacked design; avoids squaring the condition
// number when V is close to singular (near-noiseless data).
Eigen::Vector3d whitened_gls(std::span<const SubjectSeries> data, const GlsPieces& g) {
    Eigen::Index rows = 0;
    for (const auto& s : data) rows += s.y.size();
    Eigen::MatrixXd x(rows, 3);
    Eigen::VectorXd y(rows);
    Eigen::Index pos = 0;
    for (std::size_t i = 0; i < data.size(); ++i) {
        const auto& s = data[i];
        if (s.y.size() == 0) continue;
        const auto& l = g.factors[i].matrixL();
        x.middleRows(pos, s.y.size()) = l.solve(quadratic_design(s.times));
        y.segment(pos, s.y.size()) = l.solve(s.y);
        pos += s.y.size();
    }
    return x.colPivHouseholderQr().solve(y);
}

double objective(std::span<const SubjectSeries> data, const Eigen::VectorXd& x) {
    return -reml_criterion(data, covariance_from_parameters(x), std::exp(x(6)));
}

Eigen::VectorXd numeric_gradient(std::span<const SubjectSeries> data, const Eigen::VectorXd& x, double fx) {
    constexpr double h = 1e-5;
    Eigen::VectorXd g(kParams);
    for (int k = 0; k < kParams; ++k) {
        Eigen::VectorXd up = x, down = x;
        const bool can_up = x(k) + h <= upper_bound_of(k);
        const bool can_down = x(k) - h >= lower_bound_of(k);
        if (can_up) up(k) += h;
        if (can_down) down(k) -= h;
        const double f_up = can_up ? objective(data, up) : fx;
        const double f_down = can_down ? objective(data, down) : fx;
        g(k) = (f_up - f_down) / (up(k) - down(k));
    }
    return g;
}

// Components pinned at a bound with the gradient pushing outward are frozen.
Eigen::VectorXd free_mask(const Eigen::VectorXd& x, const Eigen::VectorXd& g) {
    Eigen::VectorXd m = Eigen::VectorXd::Ones(kParams);
    for (int k = 0; k < kParams; ++k) {
        if (x(k) <= lower_bound_of(k) && g(k) > 0) m(k) = 0;
        if (x(k) >= upper_bound_of(k) && g(k) < 0) m(k) = 0;
    }
    return m;
}

Eigen::VectorXd initial_parameters(std::span<const SubjectSeries> data) {
    // Pooled OLS for the residual scale, per-subject OLS for the random-effect spread.
    Eigen::Matrix3d xtx = Eigen::Matrix3d::Zero();
    Eigen::Vector3d xty = Eigen::Vector3d::Zero();
    for (const auto& s : data) {
        if (s.y.size() == 0) continue;
        const auto z = quadratic_design(s.times);
        xtx += z.transpose() * z;
        xty += z.transpose() * s.y;
    }
    const Eigen::Vector3d beta = xtx.ldlt().solve(xty);
    double rss = 0, count = 0;
    for (const auto& s : data) {
        if (s.y.size() == 0) continue;
        rss += (s.y - quadratic_design(s.times) * beta).squaredNorm();
        count += double(s.y.size());
    }
    const double total_var = std::max(rss / std::max(count - 3, 1.0), 1e-8);

    std::vector<Eigen::Vector3d> coefs;
    double within_rss = 0, within_df = 0;
    for (const auto& s : data) {
        if (s.y.size() < 3) continue;
        const auto z = quadratic_design(s.times);
        const Eigen::Vector3d c = z.colPivHouseholderQr().solve(s.y);
        coefs.push_back(c);
        if (s.y.size() > 3) {
            within_rss += (s.y - z * c).squaredNorm();
            within_df += double(s.y.size() - 3);
        }
    }
    const double sigma2 = within_df > 0 ? std::max(within_rss / within_df, 1e-8) : 0.5 * total_var;
    Eigen::VectorXd x = Eigen::VectorXd::Zero(kParams);
    Eigen::Vector3d mean = Eigen::Vector3d::Zero();
    for (const auto& c : coefs) mean += c;
    if (!coefs.empty()) mean /= double(coefs.size());
    for (int k = 0; k < 3; ++k) {
        double v = 0;
        for (const auto& c : coefs) v += (c(k) - mean(k)) * (c(k) - mean(k));
        v = coefs.size() > 1 ? v / double(coefs.size() - 1) : total_var;
        x(k) = 0.5 * std::log(std::max(0.5 * v, 1e-6));
    }
    x(6) = std::log(sigma2);
    return clamp_to_box(x);
}

}  // namespace

MixedModel reml_fit(std::span<const SubjectSeries> data, const RemlOptions& options) {
    std::size_t qualifying = 0;
    for (const auto& s : data)
        if (std::size_t(s.y.size()) >= options.min_visits) ++qualifying;
    if (qualifying < options.min_subjects)
        throw DataError("REML needs at least " + std::to_string(options.min_subjects) + " subjects with " +
                        std::to_string(options.min_visits) + "+ visits, got " + std::to_string(qualifying));

    Eigen::VectorXd x = initial_parameters(data);
    double fx = objective(data, x);
    if (!std::isfinite(fx)) throw ConvergenceError("REML: non-finite criterion at the starting point", -fx);
    Eigen::VectorXd g = numeric_gradient(data, x, fx);
    Eigen::MatrixXd h_inv = Eigen::MatrixXd::Identity(kParams, kParams) / std::max(1.0, g.norm());
    bool fresh = true;

    MixedModel model;
    model.history.push_back(-fx);
    bool converged = false;
    int it = 0;
    for (; it < options.max_iterations; ++it) {
        const Eigen::VectorXd mask = free_mask(x, g);
        Eigen::VectorXd d = -(h_inv * g.cwiseProduct(mask)).cwiseProduct(mask);
        if (g.cwiseProduct(mask).dot(d) >= 0) {
            h_inv = Eigen::MatrixXd::Identity(kParams, kParams) / std::max(1.0, g.norm());
            d = -(h_inv * g.cwiseProduct(mask)).cwiseProduct(mask);
            fresh = true;
        }
        if (d.norm() < 1e-14) {
            converged = true;
            break;
        }
        double step = 1.0, f_new = fx;
        Eigen::VectorXd x_new = x;
        bool accepted = false;
        for (int ls = 0; ls < 50; ++ls) {
            x_new = clamp_to_box(x + step * d);
            f_new = objective(data, x_new);
            if (std::isfinite(f_new) && f_new <= fx + 1e-4 * g.dot(x_new - x)) {
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if (!accepted || f_new > fx) {
            if (!fresh) {
                h_inv = Eigen::MatrixXd::Identity(kParams, kParams) / std::max(1.0, g.norm());
                fresh = true;
                continue;
            }
            converged = true;  // no descent available from a steepest-descent step
            break;
        }
        const Eigen::VectorXd g_new = numeric_gradient(data, x_new, f_new);
        const Eigen::VectorXd s = x_new - x, yv = g_new - g;
        const double sy = s.dot(yv);
        if (sy > 1e-12 * s.norm() * yv.norm()) {
            if (fresh) h_inv = Eigen::MatrixXd::Identity(kParams, kParams) * (sy / yv.squaredNorm());
            const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(kParams, kParams);
            const double rho = 1.0 / sy;
            h_inv = (eye - rho * s * yv.transpose()) * h_inv * (eye - rho * yv * s.transpose()) +
                    rho * s * s.transpose();
            fresh = false;
        }
        const double improvement = fx - f_new;
        x = x_new;
        fx = f_new;
        g = g_new;
        model.history.push_back(-fx);
        if (improvement < options.tolerance) {
            converged = true;
            ++it;
            break;
        }
    }
    if (!converged) throw ConvergenceError("REML did not converge in " + std::to_string(options.max_iterations) + " iterations", -fx);

    model.sigma_u = covariance_from_parameters(x);
    model.sigma2 = std::exp(x(6));
    model.criterion = -fx;
    model.iterations = it;
    const auto pieces = gls_pieces(data, model.sigma_u, model.sigma2);
    model.fixed_cov = pieces.a.ldlt().solve(Eigen::Matrix3d::Identity());
    model.fixed = whitened_gls(data, pieces);
    return model;
}

MixedModel reml_fit(std::span<const dataio::ParticipantRecord> records, const RemlOptions& options) {
    std::vector<SubjectSeries> data;
    data.reserve(records.size());
    for (const auto& r : records) data.push_back(series_from_record(r));
    return reml_fit(std::span<const SubjectSeries>(data), options);
}

TrajectoryParams eb_estimates(const MixedModel& model, const SubjectSeries& series) {
    TrajectoryParams p;
    p.subject_id = series.subject_id;
    p.visit_count = std::size_t(series.y.size());
    if (series.y.size() == 0) {
        p.theta = model.fixed;
        p.cond_cov = model.sigma_u;
        return p;
    }
    const Eigen::MatrixXd z = quadratic_design(series.times);
    Eigen::MatrixXd v = z * model.sigma_u * z.transpose();
    v.diagonal().array() += model.sigma2;
    const Eigen::LDLT<Eigen::MatrixXd> ldlt(v);
    const Eigen::VectorXd r = series.y - z * model.fixed;
    const Eigen::Matrix3d s = model.sigma_u;
    p.theta = model.fixed + s * z.transpose() * ldlt.solve(r);
    const Eigen::MatrixXd vinv_z = ldlt.solve(z);
    Eigen::Matrix3d c = s - s * z.transpose() * vinv_z * s;
    p.cond_cov = 0.5 * (c + c.transpose());
    return p;
}

TrajectoryParams eb_estimates(const MixedModel& model, const dataio::ParticipantRecord& record) {
    return eb_estimates(model, series_from_record(record));
}

bool reliability_filter(const TrajectoryParams& params, double tau_var, std::size_t n_min) {
    return params.visit_count >= n_min && params.trace() <= tau_var;
}

double default_tau_var(std::span<const TrajectoryParams> params, double quantile) {
    if (params.empty()) throw DataError("tau_var: no trajectory estimates");
    std::vector<double> traces;
    for (const auto& p : params) traces.push_back(p.trace());
    std::sort(traces.begin(), traces.end());
    const double pos = quantile * double(traces.size() - 1);
    const auto lo = std::size_t(std::floor(pos));
    const auto hi = std::min(lo + 1, traces.size() - 1);
    return traces[lo] + (pos - double(lo)) * (traces[hi] - traces[lo]);
}

double mark_reliable(std::span<TrajectoryParams> params, double tau_var, std::size_t n_min) {
    for (auto& p : params) p.reliable = reliability_filter(p, tau_var, n_min);
    return tau_var;
}

namespace {
std::vector<double> flat(const Eigen::Matrix3d& m) { return {m.data(), m.data() + 9}; }
Eigen::Matrix3d mat3(const std::vector<double>& v) {
    if (v.size() != 9) throw SchemaError("expected a 3x3 matrix");
    return Eigen::Map<const Eigen::Matrix3d>(v.data());
}
}  // namespace

void to_json(nlohmann::json& j, const MixedModel& m) {
    j = {{"fixed", {m.fixed(0), m.fixed(1), m.fixed(2)}},
         {"sigma_u", flat(m.sigma_u)},
         {"sigma2", m.sigma2},
         {"fixed_cov", flat(m.fixed_cov)},
         {"criterion", m.criterion},
         {"iterations", m.iterations}};
}

void from_json(const nlohmann::json& j, MixedModel& m) {
    const auto f = j.at("fixed").get<std::vector<double>>();
    m.fixed = Eigen::Vector3d(f.at(0), f.at(1), f.at(2));
    m.sigma_u = mat3(j.at("sigma_u").get<std::vector<double>>());
    m.sigma2 = j.at("sigma2").get<double>();
    m.fixed_cov = mat3(j.at("fixed_cov").get<std::vector<double>>());
    m.criterion = j.value("criterion", 0.0);
    m.iterations = j.value("iterations", 0);
}

void to_json(nlohmann::json& j, const TrajectoryParams& p) {
    j = {{"subject_id", p.subject_id},
         {"alpha", p.theta(0)},
         {"beta", p.theta(1)},
         {"gamma", p.theta(2)},
         {"cond_var_trace", p.trace()},
         {"reliable", p.reliable},
         {"visits", p.visit_count},
         {"cond_cov", flat(p.cond_cov)}};
}

void from_json(const nlohmann::json& j, TrajectoryParams& p) {
    p.subject_id = j.at("subject_id").get<std::string>();
    p.theta = Eigen::Vector3d(j.at("alpha").get<double>(), j.at("beta").get<double>(), j.at("gamma").get<double>());
    p.reliable = j.at("reliable").get<bool>();
    p.visit_count = j.value("visits", std::size_t(0));
    if (j.contains("cond_cov")) {
        p.cond_cov = mat3(j.at("cond_cov").get<std::vector<double>>());
    } else {
        p.cond_cov = Eigen::Matrix3d::Identity() * (j.at("cond_var_trace").get<double>() / 3.0);
    }
}

void write_trajectories_jsonl(std::ostream& out, std::span<const TrajectoryParams> params) {
    for (const auto& p : params) out << nlohmann::json(p).dump() << '\n';
}

std::vector<TrajectoryParams> read_trajectories_jsonl(std::istream& in) {
    std::vector<TrajectoryParams> out;
    std::string line;
    while (std::getline(in, line))
        if (!line.empty()) out.push_back(nlohmann::json::parse(line).get<TrajectoryParams>());
    return out;
}

}  // namespace progress::mixedfx
