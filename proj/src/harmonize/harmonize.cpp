#include "progress/harmonize/harmonize.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "progress/core/errors.hpp"
#include "progress/core/log.hpp"

namespace progress::harmonize {

std::string to_string(Biomarker b) {
    switch (b) {
        case Biomarker::Abeta42: return "abeta42";
        case Biomarker::Ptau: return "ptau";
        case Biomarker::Ttau: return "ttau";
        case Biomarker::Abeta40: return "abeta40";
    }
    return "abeta42";
}

Biomarker biomarker_from_string(const std::string& s) {
    for (auto b : {Biomarker::Abeta42, Biomarker::Ptau, Biomarker::Ttau, Biomarker::Abeta40})
        if (to_string(b) == s) return b;
    throw ConfigError("unknown biomarker '" + s + "'");
}

HarmonizationFactors HarmonizationFactors::defaults() {
    HarmonizationFactors f;
    for (auto b : {Biomarker::Abeta42, Biomarker::Ptau, Biomarker::Ttau, Biomarker::Abeta40})
        for (auto m : {AssayMethod::Elisa, AssayMethod::Luminex, AssayMethod::Other}) f.table[{b, m}] = 1.0;
    f.table[{Biomarker::Abeta42, AssayMethod::Luminex}] = 1.15;
    return f;
}

double HarmonizationFactors::factor(Biomarker b, AssayMethod m) const {
    const auto it = table.find({b, m});
    if (it == table.end())
        throw ConfigError("no harmonization factor for " + to_string(b) + " measured by " + dataio::to_string(m));
    return it->second;
}

double apply_assay_factor(double value, Biomarker b, AssayMethod m, const HarmonizationFactors& factors) {
    if (!(value > 0)) throw DataError("biomarker value must be positive");
    return factors.factor(b, m) * value;
}

void to_json(nlohmann::json& j, const HarmonizationFactors& f) {
    j = nlohmann::json::array();
    for (const auto& [key, h] : f.table)
        j.push_back({{"biomarker", to_string(key.first)}, {"method", dataio::to_string(key.second)}, {"factor", h}});
}

void from_json(const nlohmann::json& j, HarmonizationFactors& f) {
    f.table.clear();
    for (const auto& e : j) {
        const double h = e.at("factor").get<double>();
        if (!(h > 0)) throw ConfigError("harmonization factors must be positive");
        f.table[{biomarker_from_string(e.at("biomarker").get<std::string>()),
                 dataio::assay_from_string(e.at("method").get<std::string>())}] = h;
    }
}

// ---------------------------------------------------------------- ComBat

std::optional<std::size_t> CombatModel::site_index(const std::string& site) const {
    const auto it = std::lower_bound(sites.begin(), sites.end(), site);
    if (it == sites.end() || *it != site) return std::nullopt;
    return std::size_t(it - sites.begin());
}

namespace {

double sample_variance(const std::vector<double>& v) {
    if (v.size() < 2) return 0;
    const double m = std::accumulate(v.begin(), v.end(), 0.0) / double(v.size());
    double ss = 0;
    for (double x : v) ss += (x - m) * (x - m);
    return ss / double(v.size() - 1);
}

}  // namespace

CombatModel combat_fit(const Eigen::VectorXd& values, const std::vector<std::string>& site,
                       const Eigen::MatrixXd& covariates) {
    const Eigen::Index n = values.size();
    if (Eigen::Index(site.size()) != n) throw ShapeError("combat_fit: site labels and values differ in length");
    const Eigen::Index p = covariates.size() == 0 ? 0 : covariates.cols();
    if (p > 0 && covariates.rows() != n) throw ShapeError("combat_fit: covariate rows differ from value count");

    CombatModel model;
    model.sites = site;
    std::sort(model.sites.begin(), model.sites.end());
    model.sites.erase(std::unique(model.sites.begin(), model.sites.end()), model.sites.end());
    const Eigen::Index J = Eigen::Index(model.sites.size());
    if (J == 0) throw DataError("combat_fit: no observations");

    std::vector<Eigen::Index> site_of(static_cast<std::size_t>(n));
    std::vector<std::vector<Eigen::Index>> members(static_cast<std::size_t>(J));
    for (Eigen::Index i = 0; i < n; ++i) {
        site_of[std::size_t(i)] = Eigen::Index(*model.site_index(site[std::size_t(i)]));
        members[std::size_t(site_of[std::size_t(i)])].push_back(i);
    }
    for (Eigen::Index j = 0; j < J; ++j)
        if (members[std::size_t(j)].size() < 2)
            throw DataError("combat_fit: site '" + model.sites[std::size_t(j)] + "' has fewer than 2 observations");
    if (n <= J + p) throw DataError("combat_fit: more parameters than observations");

    Eigen::MatrixXd design = Eigen::MatrixXd::Zero(n, J + p);
    for (Eigen::Index i = 0; i < n; ++i) design(i, site_of[std::size_t(i)]) = 1.0;
    if (p > 0) design.rightCols(p) = covariates;
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(design);
    if (qr.rank() < J + p) throw DataError("combat_fit: covariate matrix is rank deficient");
    const Eigen::VectorXd coef = qr.solve(values);
    const Eigen::VectorXd site_location = coef.head(J);
    model.beta = coef.tail(p);

    model.mu_pool = 0;
    for (Eigen::Index j = 0; j < J; ++j) model.mu_pool += double(members[std::size_t(j)].size()) * site_location(j);
    model.mu_pool /= double(n);
    const Eigen::VectorXd resid = values - design * coef;
    model.sigma_pool = std::sqrt(resid.squaredNorm() / double(n - J - p));
    if (!(model.sigma_pool > 0)) throw DataError("combat_fit: zero residual variance");

    // Standardized data and per-site moments.
    Eigen::VectorXd z = values.array() - model.mu_pool;
    if (p > 0) z -= covariates * model.beta;
    z /= model.sigma_pool;
    std::vector<double> gamma_hat(static_cast<std::size_t>(J)), delta2_hat(static_cast<std::size_t>(J));
    for (Eigen::Index j = 0; j < J; ++j) {
        std::vector<double> zj;
        for (Eigen::Index i : members[std::size_t(j)]) zj.push_back(z(i));
        gamma_hat[std::size_t(j)] = std::accumulate(zj.begin(), zj.end(), 0.0) / double(zj.size());
        delta2_hat[std::size_t(j)] = sample_variance(zj);
    }

    std::vector<double> gamma_star = gamma_hat, delta2_star = delta2_hat;
    if (J > 1) {
        const double gamma_bar = std::accumulate(gamma_hat.begin(), gamma_hat.end(), 0.0) / double(J);
        const double tau2 = sample_variance(gamma_hat);
        const double m = std::accumulate(delta2_hat.begin(), delta2_hat.end(), 0.0) / double(J);
        const double s2 = sample_variance(delta2_hat);
        const bool scale_prior = s2 > 1e-14 * m * m;
        const double a = scale_prior ? (2 * s2 + m * m) / s2 : 0;
        const double b = scale_prior ? (m * s2 + m * m * m) / s2 : 0;
        for (Eigen::Index j = 0; j < J; ++j) {
            const auto& idx = members[std::size_t(j)];
            const double nj = double(idx.size());
            double g = gamma_hat[std::size_t(j)];
            double d2 = scale_prior ? delta2_hat[std::size_t(j)] : m;
            for (int iter = 0; iter < 1000; ++iter) {
                const double g_new = (nj * tau2 * gamma_hat[std::size_t(j)] + d2 * gamma_bar) / (nj * tau2 + d2);
                double d2_new = m;
                if (scale_prior) {
                    double ss = 0;
                    for (Eigen::Index i : idx) ss += (z(i) - g_new) * (z(i) - g_new);
                    d2_new = (b + 0.5 * ss) / (nj / 2 + a - 1);
                }
                const bool done = std::abs(g_new - g) <= 1e-12 * (1 + std::abs(g)) &&
                                  std::abs(d2_new - d2) <= 1e-12 * d2;
                g = g_new;
                d2 = d2_new;
                if (done) break;
            }
            gamma_star[std::size_t(j)] = g;
            delta2_star[std::size_t(j)] = d2;
        }
    }

    model.alpha.resize(J);
    model.sigma.resize(J);
    for (Eigen::Index j = 0; j < J; ++j) {
        model.alpha(j) = model.mu_pool + model.sigma_pool * gamma_star[std::size_t(j)];
        model.sigma(j) = model.sigma_pool * std::sqrt(delta2_star[std::size_t(j)]);
        if (!(model.sigma(j) > 0))
            throw DataError("combat_fit: site '" + model.sites[std::size_t(j)] + "' has zero spread");
    }
    return model;
}

double combat_apply(const CombatModel& model, double value, const std::string& site,
                    const Eigen::VectorXd& covariates) {
    if (covariates.size() != model.beta.size()) throw ShapeError("combat_apply: covariate length mismatch");
    double location = model.mu_pool, scale = model.sigma_pool;
    if (const auto j = model.site_index(site)) {
        location = model.alpha(Eigen::Index(*j));
        scale = model.sigma(Eigen::Index(*j));
    } else {
        log_warning("combat: unknown site '" + site + "', using pooled parameters");
    }
    const double xb = model.beta.size() ? covariates.dot(model.beta) : 0.0;
    return (value - location - xb) / scale * model.sigma_pool + model.mu_pool;
}

double combat_apply(const CombatModel& model, double value, const std::string& site) {
    return combat_apply(model, value, site, Eigen::VectorXd::Zero(model.beta.size()));
}

namespace {
std::vector<double> to_std(const Eigen::VectorXd& v) { return {v.data(), v.data() + v.size()}; }
Eigen::VectorXd to_eigen(const std::vector<double>& v) {
    return Eigen::Map<const Eigen::VectorXd>(v.data(), Eigen::Index(v.size()));
}
}  // namespace

void to_json(nlohmann::json& j, const CombatModel& m) {
    j = {{"sites", m.sites},         {"alpha", to_std(m.alpha)},   {"sigma", to_std(m.sigma)},
         {"beta", to_std(m.beta)},   {"mu_pool", m.mu_pool},       {"sigma_pool", m.sigma_pool}};
}

void from_json(const nlohmann::json& j, CombatModel& m) {
    m.sites = j.at("sites").get<std::vector<std::string>>();
    m.alpha = to_eigen(j.at("alpha").get<std::vector<double>>());
    m.sigma = to_eigen(j.at("sigma").get<std::vector<double>>());
    m.beta = to_eigen(j.at("beta").get<std::vector<double>>());
    m.mu_pool = j.at("mu_pool").get<double>();
    m.sigma_pool = j.at("sigma_pool").get<double>();
}

// ---------------------------------------------------------------- ATN

std::string AtnProfile::label() const {
    std::string s;
    s += a ? "A+" : "A-";
    s += t ? "T+" : "T-";
    s += n ? "N+" : "N-";
    return s;
}

AtnProfile classify_atn(double abeta42, double ptau, double ttau, const AtnThresholds& th) {
    return {abeta42 < th.abeta42, ptau > th.ptau, ttau > th.ttau};
}

// ---------------------------------------------------------------- imputation

PartialAtnGroup partial_atn_group(const BiomarkerTriple& v, const AtnThresholds& th) {
    PartialAtnGroup g;
    if (v.abeta42) g.a = *v.abeta42 < th.abeta42;
    if (v.ptau) g.t = *v.ptau > th.ptau;
    if (v.ttau) g.n = *v.ttau > th.ttau;
    return g;
}

namespace {

// Regressor form of each marker: amyloid as its reciprocal, tau linear.
double regressor(int marker, double value) { return marker == 0 ? 1.0 / value : value; }

std::optional<double> get(const BiomarkerTriple& v, int marker) {
    return marker == 0 ? v.abeta42 : marker == 1 ? v.ptau : v.ttau;
}

bool same_group(const PartialAtnGroup& g, const BiomarkerTriple& c, const AtnThresholds& th) {
    const auto full = partial_atn_group(c, th);
    return (!g.a || g.a == full.a) && (!g.t || g.t == full.t) && (!g.n || g.n == full.n);
}

}  // namespace

BiomarkerTriple impute_biomarker(const BiomarkerTriple& partial, std::span<const BiomarkerTriple> complete_cases,
                                 const ImputationOptions& options, Rng* rng) {
    if (partial.empty()) throw DataError("cannot impute: all biomarkers missing");
    if (partial.complete()) return partial;
    if (options.stochastic && rng == nullptr) throw UsageError("stochastic imputation needs a random stream");

    std::vector<int> observed, missing;
    for (int k = 0; k < 3; ++k) (get(partial, k) ? observed : missing).push_back(k);

    const auto group = partial_atn_group(partial, options.thresholds);
    std::vector<const BiomarkerTriple*> cases;
    for (const auto& c : complete_cases)
        if (c.complete() && same_group(group, c, options.thresholds)) cases.push_back(&c);
    const std::size_t needed = std::max(options.min_group_size, observed.size() + 2);
    if (cases.size() < needed) {
        cases.clear();
        for (const auto& c : complete_cases)
            if (c.complete()) cases.push_back(&c);
    }
    if (cases.size() < observed.size() + 2) throw DataError("cannot impute: too few complete cases");

    const Eigen::Index m = Eigen::Index(cases.size());
    const Eigen::Index q = Eigen::Index(observed.size()) + 1;
    Eigen::MatrixXd design(m, q);
    for (Eigen::Index i = 0; i < m; ++i) {
        design(i, 0) = 1.0;
        for (Eigen::Index k = 1; k < q; ++k) {
            const int marker = observed[std::size_t(k - 1)];
            design(i, k) = regressor(marker, *get(*cases[std::size_t(i)], marker));
        }
    }
    Eigen::RowVectorXd x(q);
    x(0) = 1.0;
    for (Eigen::Index k = 1; k < q; ++k) {
        const int marker = observed[std::size_t(k - 1)];
        x(k) = regressor(marker, *get(partial, marker));
    }
    const Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(design);

    BiomarkerTriple out = partial;
    for (int target : missing) {
        Eigen::VectorXd y(m);
        double floor = std::numeric_limits<double>::infinity();
        for (Eigen::Index i = 0; i < m; ++i) {
            y(i) = *get(*cases[std::size_t(i)], target);
            floor = std::min(floor, y(i));
        }
        const Eigen::VectorXd coef = qr.solve(y);
        double value = x.dot(coef);
        if (options.stochastic) {
            const Eigen::VectorXd resid = y - design * coef;
            std::uniform_int_distribution<Eigen::Index> pick(0, m - 1);
            value += resid(pick(*rng));
        }
        value = std::max(value, 0.5 * floor);
        (target == 0 ? out.abeta42 : target == 1 ? out.ptau : out.ttau) = value;
    }
    return out;
}

// ---------------------------------------------------------------- Yeo-Johnson

double yeo_johnson(double y, double lambda) {
    constexpr double eps = 1e-12;
    if (y >= 0) {
        if (std::abs(lambda) < eps) return std::log1p(y);
        return (std::pow(y + 1, lambda) - 1) / lambda;
    }
    if (std::abs(lambda - 2) < eps) return -std::log1p(-y);
    return -(std::pow(1 - y, 2 - lambda) - 1) / (2 - lambda);
}

double yeo_johnson_loglik(const Eigen::VectorXd& values, double lambda) {
    const Eigen::Index n = values.size();
    Eigen::VectorXd t(n);
    double jacobian = 0;
    for (Eigen::Index i = 0; i < n; ++i) {
        t(i) = yeo_johnson(values(i), lambda);
        jacobian += std::copysign(std::log1p(std::abs(values(i))), values(i));
    }
    const double var = (t.array() - t.mean()).square().mean();
    if (!(var > 0) || !std::isfinite(var)) return -std::numeric_limits<double>::infinity();
    return -0.5 * double(n) * std::log(var) + (lambda - 1) * jacobian;
}

YeoJohnsonFit fit_yeo_johnson(const Eigen::VectorXd& values) {
    if (values.size() < 10) throw DataError("Yeo-Johnson fit needs at least 10 values");
    if (!values.allFinite()) throw DataError("Yeo-Johnson fit: non-finite input");
    if ((values.array() - values.mean()).abs().maxCoeff() == 0)
        throw DataError("Yeo-Johnson fit: zero-variance input");

    double best = 1, best_ll = -std::numeric_limits<double>::infinity();
    for (int k = -300; k <= 300; ++k) {
        const double lambda = k / 100.0;
        const double ll = yeo_johnson_loglik(values, lambda);
        if (ll > best_ll) {
            best_ll = ll;
            best = lambda;
        }
    }
    // Golden-section polish inside the neighbouring grid cells.
    double lo = std::max(-3.0, best - 0.01), hi = std::min(3.0, best + 0.01);
    const double r = (std::sqrt(5.0) - 1) / 2;
    double c = hi - r * (hi - lo), d = lo + r * (hi - lo);
    double fc = yeo_johnson_loglik(values, c), fd = yeo_johnson_loglik(values, d);
    for (int it = 0; it < 60; ++it) {
        if (fc > fd) {
            hi = d;
            d = c;
            fd = fc;
            c = hi - r * (hi - lo);
            fc = yeo_johnson_loglik(values, c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + r * (hi - lo);
            fd = yeo_johnson_loglik(values, d);
        }
    }
    const double polished = 0.5 * (lo + hi);
    if (yeo_johnson_loglik(values, polished) > best_ll) best = polished;

    YeoJohnsonFit fit;
    fit.lambda = best;
    Eigen::VectorXd t = values.unaryExpr([&](double y) { return yeo_johnson(y, best); });
    fit.mean = t.mean();
    fit.sd = std::sqrt((t.array() - fit.mean).square().sum() / double(t.size() - 1));
    if (!(fit.sd > 0)) throw DataError("Yeo-Johnson fit: transformed values have zero variance");
    return fit;
}

// ---------------------------------------------------------------- features

std::vector<std::string> feature_names(SecondRatio second_ratio) {
    return {"abeta42_z", "ptau_z", "ttau_z", "ptau_abeta42_z",
            second_ratio == SecondRatio::TtauOverPtau ? "ttau_ptau_z" : "abeta42_40_z",
            "age", "sex", "education", "baseline_mmse", "baseline_cdrsb"};
}

BiomarkerTriple scaled_markers(const dataio::ParticipantRecord& r, const HarmonizationFactors& factors) {
    BiomarkerTriple t;
    const auto& c = r.csf;
    if (c.abeta42) t.abeta42 = apply_assay_factor(*c.abeta42, Biomarker::Abeta42, c.abeta42_method, factors);
    if (c.ptau) t.ptau = apply_assay_factor(*c.ptau, Biomarker::Ptau, c.ptau_method, factors);
    if (c.ttau) t.ttau = apply_assay_factor(*c.ttau, Biomarker::Ttau, c.ttau_method, factors);
    return t;
}

namespace {

std::optional<double> scaled_abeta40(const dataio::ParticipantRecord& r, const HarmonizationFactors& factors) {
    if (!r.csf.abeta40) return std::nullopt;
    return apply_assay_factor(*r.csf.abeta40, Biomarker::Abeta40, r.csf.abeta42_method, factors);
}

double median(std::vector<double> v) {
    if (v.empty()) return 0;
    std::sort(v.begin(), v.end());
    const std::size_t h = v.size() / 2;
    return v.size() % 2 ? v[h] : 0.5 * (v[h - 1] + v[h]);
}

// Fits ComBat on log values using only sites with at least two members.
CombatModel fit_site_model(const std::vector<double>& log_values, const std::vector<std::string>& centers) {
    std::map<std::string, int> counts;
    for (const auto& c : centers) ++counts[c];
    std::vector<double> v;
    std::vector<std::string> s;
    for (std::size_t i = 0; i < centers.size(); ++i)
        if (counts[centers[i]] >= 2) {
            v.push_back(log_values[i]);
            s.push_back(centers[i]);
        }
    for (const auto& [center, count] : counts)
        if (count < 2) log_warning("combat: site '" + center + "' has a single subject and uses pooled parameters");
    return combat_fit(to_eigen(v), s, Eigen::MatrixXd());
}

struct Harmonized {
    BiomarkerTriple markers;
    std::optional<double> abeta40;
    bool imputed = false;
};

Harmonized harmonize_markers(const HarmonizationModel& model, const dataio::ParticipantRecord& r, Rng* rng) {
    const auto& cfg = model.config;
    Harmonized h;
    const auto scaled = scaled_markers(r, cfg.factors);
    if (scaled.empty()) throw DataError("subject " + r.subject_id + " has no biomarker values");
    h.imputed = !scaled.complete();
    h.markers = impute_biomarker(scaled, model.complete_cases, cfg.imputation, rng);
    if (cfg.combat) {
        auto correct = [&](const CombatModel& m, double v) {
            return std::exp(combat_apply(m, std::log(v), r.center));
        };
        h.markers.abeta42 = correct(model.combat[0], *h.markers.abeta42);
        h.markers.ptau = correct(model.combat[1], *h.markers.ptau);
        h.markers.ttau = correct(model.combat[2], *h.markers.ttau);
    }
    if (cfg.second_ratio == SecondRatio::Abeta42Over40) {
        h.abeta40 = scaled_abeta40(r, cfg.factors);
        if (h.abeta40 && cfg.combat && model.combat_abeta40)
            h.abeta40 = std::exp(combat_apply(*model.combat_abeta40, std::log(*h.abeta40), r.center));
    }
    return h;
}

std::array<double, 5> marker_fields(const Harmonized& h, SecondRatio second, double abeta40_fallback_ratio) {
    const double ab = *h.markers.abeta42, pt = *h.markers.ptau, tt = *h.markers.ttau;
    double second_value = tt / pt;
    if (second == SecondRatio::Abeta42Over40) second_value = h.abeta40 ? ab / *h.abeta40 : abeta40_fallback_ratio;
    return {ab, pt, tt, pt / ab, second_value};
}

}  // namespace

HarmonizationModel fit_harmonization(std::span<const dataio::ParticipantRecord> records,
                                     const HarmonizeConfig& config, std::uint64_t seed) {
    if (records.size() < 10) throw DataError("harmonization needs at least 10 subjects");
    HarmonizationModel model;
    model.config = config;
    std::vector<BiomarkerTriple> scaled;
    for (const auto& r : records) {
        scaled.push_back(scaled_markers(r, config.factors));
        if (scaled.back().empty()) throw DataError("subject " + r.subject_id + " has no biomarker values");
        if (scaled.back().complete()) model.complete_cases.push_back(scaled.back());
    }
    if (model.complete_cases.empty()) throw DataError("harmonization needs complete biomarker cases");

    std::vector<std::string> centers;
    std::array<std::vector<double>, 3> logs;
    std::vector<double> log40;
    std::vector<std::string> centers40;
    for (std::size_t i = 0; i < records.size(); ++i) {
        Rng rng = make_rng(seed, i);
        const auto full = impute_biomarker(scaled[i], model.complete_cases, config.imputation, &rng);
        logs[0].push_back(std::log(*full.abeta42));
        logs[1].push_back(std::log(*full.ptau));
        logs[2].push_back(std::log(*full.ttau));
        centers.push_back(records[i].center);
        if (const auto a40 = scaled_abeta40(records[i], config.factors)) {
            log40.push_back(std::log(*a40));
            centers40.push_back(records[i].center);
        }
    }
    if (config.combat)
        for (int k = 0; k < 3; ++k) model.combat[std::size_t(k)] = fit_site_model(logs[std::size_t(k)], centers);
    if (config.second_ratio == SecondRatio::Abeta42Over40) {
        if (log40.empty()) throw ConfigError("Abeta42/40 ratio selected but no Abeta40 values were supplied");
        if (config.combat && log40.size() > 2) model.combat_abeta40 = fit_site_model(log40, centers40);
    }

    // Median observed Aβ42/40 stands in for subjects without Aβ40.
    std::vector<std::array<double, 5>> fields;
    std::vector<Harmonized> harmonized;
    std::vector<double> ratios40;
    for (std::size_t i = 0; i < records.size(); ++i) {
        Rng rng = make_rng(seed, i);
        harmonized.push_back(harmonize_markers(model, records[i], &rng));
        if (harmonized.back().abeta40) ratios40.push_back(*harmonized.back().markers.abeta42 / *harmonized.back().abeta40);
    }
    const double fallback40 = median(ratios40);
    for (const auto& h : harmonized) fields.push_back(marker_fields(h, config.second_ratio, fallback40));
    for (std::size_t k = 0; k < 5; ++k) {
        Eigen::VectorXd col(Eigen::Index(fields.size()));
        for (std::size_t i = 0; i < fields.size(); ++i) col(Eigen::Index(i)) = fields[i][k];
        model.transforms[k] = fit_yeo_johnson(col);
    }

    std::vector<double> mmse, cdrsb;
    for (const auto& r : records) {
        if (auto m = r.baseline_mmse()) mmse.push_back(*m);
        if (auto c = r.baseline_cdrsb()) cdrsb.push_back(*c);
    }
    model.median_mmse = median(mmse);
    model.median_cdrsb = median(cdrsb);
    model.fallback_abeta42_40 = fallback40;
    return model;
}

BaselineFeatures build_features(const HarmonizationModel& model, const dataio::ParticipantRecord& record, Rng* rng) {
    const auto h = harmonize_markers(model, record, rng);
    const auto fields = marker_fields(h, model.config.second_ratio, model.fallback_abeta42_40);
    BaselineFeatures f;
    f.subject_id = record.subject_id;
    f.values.resize(Eigen::Index(kFeatureCount));
    for (std::size_t k = 0; k < 5; ++k) {
        const double z = model.transforms[k].standardize(fields[k]);
        f.values(Eigen::Index(k)) = std::clamp(z, -model.config.z_clip, model.config.z_clip);
    }
    f.values(5) = record.age;
    f.values(6) = record.sex == dataio::Sex::Male ? 1.0 : 0.0;
    f.values(7) = record.education;
    f.values(8) = record.baseline_mmse() ? double(*record.baseline_mmse()) : model.median_mmse;
    f.values(9) = record.baseline_cdrsb() ? *record.baseline_cdrsb() : model.median_cdrsb;
    f.abeta42 = fields[0];
    f.ptau = fields[1];
    f.ttau = fields[2];
    f.abeta40 = h.abeta40;
    f.imputed = h.imputed;
    f.atn = classify_atn(f.abeta42, f.ptau, f.ttau, model.config.thresholds);
    return f;
}

std::vector<BaselineFeatures> build_all_features(const HarmonizationModel& model,
                                                 std::span<const dataio::ParticipantRecord> records,
                                                 std::uint64_t seed) {
    std::vector<BaselineFeatures> out;
    out.reserve(records.size());
    for (std::size_t i = 0; i < records.size(); ++i) {
        Rng rng = make_rng(seed, i);
        out.push_back(build_features(model, records[i], &rng));
    }
    return out;
}

Eigen::MatrixXd feature_matrix(std::span<const BaselineFeatures> features) {
    Eigen::MatrixXd x(Eigen::Index(features.size()), Eigen::Index(kFeatureCount));
    for (std::size_t i = 0; i < features.size(); ++i) x.row(Eigen::Index(i)) = features[i].values.transpose();
    return x;
}

// ---------------------------------------------------------------- serialization

void to_json(nlohmann::json& j, const HarmonizeConfig& c) {
    j = {{"factors", c.factors},
         {"atn_thresholds", {{"abeta42", c.thresholds.abeta42}, {"ptau", c.thresholds.ptau}, {"ttau", c.thresholds.ttau}}},
         {"second_ratio", c.second_ratio == SecondRatio::TtauOverPtau ? "ttau_ptau" : "abeta42_40"},
         {"combat", c.combat},
         {"imputation", {{"stochastic", c.imputation.stochastic}, {"min_group_size", c.imputation.min_group_size}}},
         {"z_clip", c.z_clip}};
}

void from_json(const nlohmann::json& j, HarmonizeConfig& c) {
    c = HarmonizeConfig{};
    if (j.contains("factors")) {
        // Partial tables override the defaults pair by pair.
        HarmonizationFactors custom = j.at("factors").get<HarmonizationFactors>();
        for (const auto& [key, h] : custom.table) c.factors.table[key] = h;
    }
    if (j.contains("atn_thresholds")) {
        const auto& t = j.at("atn_thresholds");
        c.thresholds.abeta42 = t.value("abeta42", c.thresholds.abeta42);
        c.thresholds.ptau = t.value("ptau", c.thresholds.ptau);
        c.thresholds.ttau = t.value("ttau", c.thresholds.ttau);
    }
    if (j.contains("second_ratio")) {
        const auto s = j.at("second_ratio").get<std::string>();
        if (s == "ttau_ptau") c.second_ratio = SecondRatio::TtauOverPtau;
        else if (s == "abeta42_40") c.second_ratio = SecondRatio::Abeta42Over40;
        else throw ConfigError("unknown second_ratio '" + s + "'");
    }
    c.combat = j.value("combat", c.combat);
    if (j.contains("imputation")) {
        const auto& im = j.at("imputation");
        c.imputation.stochastic = im.value("stochastic", false);
        c.imputation.min_group_size = im.value("min_group_size", c.imputation.min_group_size);
    }
    c.imputation.thresholds = c.thresholds;
    c.z_clip = j.value("z_clip", c.z_clip);
}

void to_json(nlohmann::json& j, const HarmonizationModel& m) {
    nlohmann::json cases = nlohmann::json::array();
    for (const auto& c : m.complete_cases) cases.push_back({*c.abeta42, *c.ptau, *c.ttau});
    nlohmann::json transforms = nlohmann::json::array();
    for (const auto& t : m.transforms) transforms.push_back({{"lambda", t.lambda}, {"mean", t.mean}, {"sd", t.sd}});
    j = {{"config", m.config},
         {"complete_cases", cases},
         {"combat", {m.combat[0], m.combat[1], m.combat[2]}},
         {"transforms", transforms},
         {"median_mmse", m.median_mmse},
         {"median_cdrsb", m.median_cdrsb},
         {"fallback_abeta42_40", m.fallback_abeta42_40}};
    if (m.combat_abeta40) j["combat_abeta40"] = *m.combat_abeta40;
}

void from_json(const nlohmann::json& j, HarmonizationModel& m) {
    m.config = j.at("config").get<HarmonizeConfig>();
    m.complete_cases.clear();
    for (const auto& c : j.at("complete_cases"))
        m.complete_cases.push_back({c.at(0).get<double>(), c.at(1).get<double>(), c.at(2).get<double>()});
    for (std::size_t k = 0; k < 3; ++k) m.combat[k] = j.at("combat").at(k).get<CombatModel>();
    for (std::size_t k = 0; k < 5; ++k) {
        const auto& t = j.at("transforms").at(k);
        m.transforms[k] = {t.at("lambda").get<double>(), t.at("mean").get<double>(), t.at("sd").get<double>()};
    }
    m.median_mmse = j.at("median_mmse").get<double>();
    m.median_cdrsb = j.at("median_cdrsb").get<double>();
    m.fallback_abeta42_40 = j.value("fallback_abeta42_40", 0.0);
    if (j.contains("combat_abeta40")) m.combat_abeta40 = j.at("combat_abeta40").get<CombatModel>();
}

}  // namespace progress::harmonize
