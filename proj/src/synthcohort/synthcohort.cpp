#include "progress/synthcohort/synthcohort.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <ostream>

#include "progress/core/errors.hpp"
#include "progress/core/parallel.hpp"
#include "progress/evalstats/survival.hpp"
#include "progress/harmonize/harmonize.hpp"

namespace progress::synthcohort {

using dataio::AssayMethod;
using dataio::Diagnosis;

std::string to_string(HazardLink link) { return link == HazardLink::Linear ? "linear" : "nonlinear"; }

HazardLink hazard_link_from_string(const std::string& s) {
    if (s == "linear") return HazardLink::Linear;
    if (s == "nonlinear") return HazardLink::Nonlinear;
    throw ConfigError("unknown hazard link '" + s + "'");
}

void GeneratorConfig::validate() const {
    if (n_subjects <= 0 || n_centers <= 0) throw ConfigError("generator: subject and center counts must be positive");
    const auto nonneg = [](double v, const char* what) {
        if (!(v >= 0)) throw ConfigError(std::string("generator: ") + what + " must be non-negative");
    };
    for (double s : site_shift_sd) nonneg(s, "site shift SD");
    for (double m : missing_rate)
        if (!(m >= 0 && m <= 1)) throw ConfigError("generator: missingness rates must lie in [0, 1]");
    for (double p : assay_mix) nonneg(p, "assay proportion");
    if (std::fabs(assay_mix[0] + assay_mix[1] + assay_mix[2] - 1) > 1e-9)
        throw ConfigError("generator: assay proportions must sum to 1");
    nonneg(sigma2, "residual variance");
    nonneg(baseline_hazard, "baseline hazard");
    nonneg(censoring_rate, "censoring rate");
    nonneg(visit_interval_sd, "visit interval SD");
    nonneg(age_sd, "age SD");
    if (!(visit_interval_mean > 0)) throw ConfigError("generator: visit interval must be positive");
    if (!(max_follow_up > 0)) throw ConfigError("generator: follow-up must be positive");
    for (double p : {amyloid_positive_fraction, misaligned_csf_rate, male_fraction})
        if (!(p >= 0 && p <= 1)) throw ConfigError("generator: fractions must lie in [0, 1]");
    if ((risk_correlation.array().abs() > 1).any()) throw ConfigError("generator: correlations must lie in [-1, 1]");
    if (Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d>(sigma_u).eigenvalues().minCoeff() < -1e-12)
        throw ConfigError("generator: random-effect covariance must be positive semi-definite");
}

namespace {

nlohmann::json json_number(double v) {
    return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(v > 0 ? "inf" : "-inf");
}

double number_from_json(const nlohmann::json& j) {
    if (j.is_string()) return j.get<std::string>() == "-inf" ? -HUGE_VAL : HUGE_VAL;
    return j.get<double>();
}

}  // namespace

void to_json(nlohmann::json& j, const GeneratorConfig& c) {
    std::vector<double> sigma_u(c.sigma_u.data(), c.sigma_u.data() + 9);
    j = {{"n_subjects", c.n_subjects},
         {"n_centers", c.n_centers},
         {"site_shift_sd", c.site_shift_sd},
         {"fixed", {c.fixed(0), c.fixed(1), c.fixed(2)}},
         {"sigma_u", sigma_u},
         {"sigma2", c.sigma2},
         {"risk_correlation", {c.risk_correlation(0), c.risk_correlation(1), c.risk_correlation(2)}},
         {"hazard_link", to_string(c.link)},
         {"hazard_coefficients", {c.hazard_coefficients(0), c.hazard_coefficients(1), c.hazard_coefficients(2)}},
         {"threshold_coefficient", c.threshold_coefficient},
         {"abeta42_cutoff", c.abeta42_cutoff},
         {"ptau_cutoff", c.ptau_cutoff},
         {"amyloid_positive_fraction", c.amyloid_positive_fraction},
         {"baseline_hazard", c.baseline_hazard},
         {"censoring_rate", c.censoring_rate},
         {"visit_interval_mean", c.visit_interval_mean},
         {"visit_interval_sd", c.visit_interval_sd},
         {"max_follow_up", json_number(c.max_follow_up)},
         {"missing_rate", c.missing_rate},
         {"assay_mix", c.assay_mix},
         {"misaligned_csf_rate", c.misaligned_csf_rate},
         {"age_mean", c.age_mean},
         {"age_sd", c.age_sd},
         {"male_fraction", c.male_fraction},
         {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, GeneratorConfig& c) {
    c = GeneratorConfig{};
    const auto vec3 = [&](const char* key, Eigen::Vector3d& v) {
        if (!j.contains(key)) return;
        const auto a = j.at(key).get<std::array<double, 3>>();
        v = Eigen::Vector3d(a[0], a[1], a[2]);
    };
    const auto get = [&](const char* key, auto& v) {
        if (j.contains(key)) j.at(key).get_to(v);
    };
    get("n_subjects", c.n_subjects);
    get("n_centers", c.n_centers);
    get("site_shift_sd", c.site_shift_sd);
    vec3("fixed", c.fixed);
    if (j.contains("sigma_u")) {
        const auto a = j.at("sigma_u").get<std::vector<double>>();
        if (a.size() == 3) {
            c.sigma_u = Eigen::Vector3d(a[0], a[1], a[2]).asDiagonal();
        } else if (a.size() == 9) {
            c.sigma_u = Eigen::Map<const Eigen::Matrix3d>(a.data());
        } else {
            throw ConfigError("generator: sigma_u needs 3 diagonal or 9 entries");
        }
    }
    get("sigma2", c.sigma2);
    vec3("risk_correlation", c.risk_correlation);
    if (j.contains("hazard_link")) c.link = hazard_link_from_string(j.at("hazard_link").get<std::string>());
    vec3("hazard_coefficients", c.hazard_coefficients);
    get("threshold_coefficient", c.threshold_coefficient);
    get("abeta42_cutoff", c.abeta42_cutoff);
    get("ptau_cutoff", c.ptau_cutoff);
    get("amyloid_positive_fraction", c.amyloid_positive_fraction);
    get("baseline_hazard", c.baseline_hazard);
    get("censoring_rate", c.censoring_rate);
    get("visit_interval_mean", c.visit_interval_mean);
    get("visit_interval_sd", c.visit_interval_sd);
    if (j.contains("max_follow_up")) c.max_follow_up = number_from_json(j.at("max_follow_up"));
    get("missing_rate", c.missing_rate);
    get("assay_mix", c.assay_mix);
    get("misaligned_csf_rate", c.misaligned_csf_rate);
    get("age_mean", c.age_mean);
    get("age_sd", c.age_sd);
    get("male_fraction", c.male_fraction);
    get("seed", c.seed);
}

void to_json(nlohmann::json& j, const SubjectTruth& t) {
    j = {{"subject_id", t.subject_id},
         {"center", t.center},
         {"alpha", t.theta(0)},
         {"beta", t.theta(1)},
         {"gamma", t.theta(2)},
         {"log_risk", t.log_risk},
         {"event_time", json_number(t.event_time)},
         {"censoring_time", json_number(t.censoring_time)},
         {"abeta42", t.biomarkers[0]},
         {"ptau", t.biomarkers[1]},
         {"ttau", t.biomarkers[2]},
         {"age", t.age}};
}

void from_json(const nlohmann::json& j, SubjectTruth& t) {
    t.subject_id = j.at("subject_id").get<std::string>();
    t.center = j.at("center").get<std::string>();
    t.theta = Eigen::Vector3d(j.at("alpha").get<double>(), j.at("beta").get<double>(), j.at("gamma").get<double>());
    t.log_risk = j.at("log_risk").get<double>();
    t.event_time = number_from_json(j.at("event_time"));
    t.censoring_time = number_from_json(j.at("censoring_time"));
    t.biomarkers = {j.at("abeta42").get<double>(), j.at("ptau").get<double>(), j.at("ttau").get<double>()};
    t.age = j.at("age").get<double>();
}

double sample_event_time(double rate, double log_risk, Rng& rng) {
    const double hazard = rate * std::exp(log_risk);
    if (!(hazard > 0)) return HUGE_VAL;
    // 1 - U keeps the argument of the log away from zero.
    const double u = 1.0 - std::uniform_real_distribution<double>(0.0, 1.0)(rng);
    return -std::log(u) / hazard;
}

namespace {

// Only binds when neither an event nor censoring can end follow-up.
constexpr int kMaxOpenEndedVisits = 200;

struct Draft {
    Rng rng{0};
    SubjectTruth truth;
    bool amyloid_positive = false;
    int center = 0;
    double male = 0;
    double education = 0;
    dataio::Date baseline{};
};

std::string padded(const char* prefix, int value, int width) {
    std::string digits = std::to_string(value);
    if (int(digits.size()) < width) digits.insert(0, std::size_t(width) - digits.size(), '0');
    return prefix + digits;
}

evalstats::MetricReport report(std::string name, double value, long n) {
    evalstats::MetricReport r;
    r.metric = std::move(name);
    r.value = value;
    r.n = n;
    return r;
}

double round_to(double v, double step) { return std::round(v / step) * step; }

AssayMethod draw_method(const std::array<double, 3>& mix, Rng& rng) {
    const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
    if (u < mix[0]) return AssayMethod::Elisa;
    if (u < mix[0] + mix[1]) return AssayMethod::Luminex;
    return AssayMethod::Other;
}

std::pair<double, double> moments(const std::vector<double>& v) {
    double mean = 0;
    for (double x : v) mean += x;
    mean /= double(v.size());
    double ss = 0;
    for (double x : v) ss += (x - mean) * (x - mean);
    const double sd = v.size() > 1 ? std::sqrt(ss / double(v.size() - 1)) : 0.0;
    return {mean, sd > 0 ? sd : 1.0};
}

}  // namespace

SyntheticCohort generate(const GeneratorConfig& config, int jobs) {
    config.validate();
    const std::size_t n = std::size_t(config.n_subjects);
    const int id_width = std::max(5, int(std::to_string(n).size()));
    const int center_width = std::max(2, int(std::to_string(config.n_centers).size()));
    const auto factors = harmonize::HarmonizationFactors::defaults();
    const harmonize::Biomarker markers[3] = {harmonize::Biomarker::Abeta42, harmonize::Biomarker::Ptau,
                                             harmonize::Biomarker::Ttau};

    // Multiplicative site shifts on the log scale, one stream per center.
    std::vector<std::array<double, 3>> shifts(std::size_t(config.n_centers));
    for (int c = 0; c < config.n_centers; ++c) {
        Rng rng = make_rng(derive_seed(config.seed, 1), std::uint64_t(c));
        std::normal_distribution<double> z;
        for (int b = 0; b < 3; ++b) shifts[std::size_t(c)][std::size_t(b)] = config.site_shift_sd[std::size_t(b)] * z(rng);
    }

    // Pass 1: demographics and true biomarkers.
    std::vector<Draft> drafts(n);
    const dataio::Date first_day = dataio::make_date(2005, 1, 1);
    const long enrolment_days = dataio::days_between(first_day, dataio::make_date(2015, 12, 31));
    parallel_for(n, jobs, [&](std::size_t i) {
        Draft& d = drafts[i];
        d.rng = make_rng(derive_seed(config.seed, 0), i);
        Rng& rng = d.rng;
        std::normal_distribution<double> z;
        std::uniform_real_distribution<double> u(0.0, 1.0);
        d.truth.subject_id = padded("SYN", int(i) + 1, id_width);
        d.center = int(std::uniform_int_distribution<int>(0, config.n_centers - 1)(rng));
        d.truth.center = padded("ADC", d.center + 1, center_width);
        d.amyloid_positive = u(rng) < config.amyloid_positive_fraction;
        const double ab = std::exp(std::log(d.amyloid_positive ? 400.0 : 700.0) + 0.2 * z(rng));
        const double pt = std::exp(std::log(55.0) + (d.amyloid_positive ? 0.15 : 0.0) + 0.45 * z(rng));
        const double tt = pt * std::exp(std::log(6.5) + 0.2 * z(rng));
        d.truth.biomarkers = {ab, pt, tt};
        d.truth.age = std::clamp(config.age_mean + config.age_sd * z(rng), 50.0, 95.0);
        d.male = u(rng) < config.male_fraction;
        d.education = std::clamp(std::round(15.5 + 3.0 * z(rng)), 6.0, 24.0);
        d.baseline = first_day + std::chrono::days(std::uniform_int_distribution<long>(0, enrolment_days)(rng));
    });

    GroundTruth truth;
    {
        std::vector<double> pt(n), inv_ab(n);
        for (std::size_t i = 0; i < n; ++i) {
            pt[i] = drafts[i].truth.biomarkers[1];
            inv_ab[i] = 1.0 / drafts[i].truth.biomarkers[0];
        }
        std::tie(truth.ptau_mean, truth.ptau_sd) = moments(pt);
        std::tie(truth.inv_abeta_mean, truth.inv_abeta_sd) = moments(inv_ab);
    }
    const auto& c = config.hazard_coefficients;
    std::vector<double> risks(n);
    for (std::size_t i = 0; i < n; ++i) {
        const auto& bm = drafts[i].truth.biomarkers;
        const double zp = (bm[1] - truth.ptau_mean) / truth.ptau_sd;
        const double zi = (1.0 / bm[0] - truth.inv_abeta_mean) / truth.inv_abeta_sd;
        double r = c(0) * zp + c(1) * zi;
        if (config.link == HazardLink::Nonlinear) {
            const bool amyloid = bm[0] < config.abeta42_cutoff;
            if (amyloid) r += c(2) * zp;
            if (amyloid != (bm[1] > config.ptau_cutoff)) r += config.threshold_coefficient;
        }
        risks[i] = drafts[i].truth.log_risk = r;
    }
    const auto [risk_mean, risk_sd] = moments(risks);
    const Eigen::Matrix3d root = Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d>(config.sigma_u).operatorSqrt();
    const double sigma = std::sqrt(config.sigma2);

    // Pass 2: trajectories, event times and the emitted rows.
    struct Rows {
        dataio::RawCsfRow csf;
        std::vector<dataio::VisitRow> visits;
        dataio::DemographicsRow demo;
    };
    std::vector<Rows> rows(n);
    parallel_for(n, jobs, [&](std::size_t i) {
        Draft& d = drafts[i];
        Rng& rng = d.rng;
        std::normal_distribution<double> z;
        std::uniform_real_distribution<double> u(0.0, 1.0);
        SubjectTruth& t = d.truth;

        const double r_std = (t.log_risk - risk_mean) / risk_sd;
        Eigen::Vector3d v;
        for (int k = 0; k < 3; ++k) {
            const double rho = config.risk_correlation(k);
            v(k) = rho * r_std + std::sqrt(1 - rho * rho) * z(rng);
        }
        t.theta = config.fixed + root * v;
        t.event_time = sample_event_time(config.baseline_hazard, t.log_risk, rng);
        const double censor_draw =
            config.censoring_rate > 0 ? -std::log(1.0 - u(rng)) / config.censoring_rate : HUGE_VAL;
        t.censoring_time = std::min(censor_draw, config.max_follow_up);

        Rows& out = rows[i];
        out.demo.subject_id = t.subject_id;
        out.demo.sex = d.male ? dataio::Sex::Male : dataio::Sex::Female;
        out.demo.education = d.education;
        out.demo.center = t.center;
        const auto birth = d.baseline - std::chrono::days(long(std::lround(t.age * dataio::kDaysPerYear)));
        out.demo.birth_year = int(std::chrono::year_month_day(birth).year());

        double first_cdr = 0;
        int first_mmse = 0;
        long day = 0;
        const bool open_ended = !std::isfinite(t.event_time) && !std::isfinite(t.censoring_time);
        for (int k = 0; !open_ended || k < kMaxOpenEndedVisits; ++k) {
            if (k > 0) {
                const double gap = std::max(0.25, config.visit_interval_mean + config.visit_interval_sd * z(rng));
                day += std::max(1L, long(std::lround(gap * dataio::kDaysPerYear)));
            }
            const double years = double(day) / dataio::kDaysPerYear;
            if (k > 0 && years > t.censoring_time) break;
            dataio::VisitRow visit;
            visit.subject_id = t.subject_id;
            visit.visit_number = k + 1;
            visit.date = d.baseline + std::chrono::days(day);
            const double mean = t.theta(0) + t.theta(1) * years + t.theta(2) * years * years;
            const double cdr = std::clamp(round_to(mean + sigma * z(rng), 0.5), 0.0, 18.0);
            visit.cdrsb = cdr;
            if (k == 0) {
                first_cdr = cdr;
                first_mmse = int(std::clamp(std::lround(28.5 - cdr + 1.2 * z(rng)), 0L, 30L));
                visit.mmse = first_mmse;
            } else {
                const long mmse = std::lround(first_mmse - 1.5 * (cdr - first_cdr) + z(rng));
                if (u(rng) >= 0.02) visit.mmse = int(std::clamp(mmse, 0L, 30L));
            }
            const bool demented = years >= t.event_time;
            visit.diagnosis = demented ? Diagnosis::Dementia : Diagnosis::Mci;
            out.visits.push_back(visit);
            if (demented) break;
        }

        dataio::RawCsfRow& csf = out.csf;
        csf.subject_id = t.subject_id;
        long offset = std::uniform_int_distribution<long>(-60, 60)(rng);
        if (u(rng) < config.misaligned_csf_rate) {
            offset = std::uniform_int_distribution<long>(120, 200)(rng);
            if (u(rng) < 0.5) offset = -offset;
        }
        csf.collection_date = d.baseline + std::chrono::days(offset);
        const AssayMethod method = draw_method(config.assay_mix, rng);
        csf.abeta42_method = csf.ptau_method = csf.ttau_method = method;
        std::optional<double>* slots[3] = {&csf.abeta42, &csf.ptau, &csf.ttau};
        for (std::size_t b = 0; b < 3; ++b) {
            const bool missing = u(rng) < config.missing_rate[b];
            // Shift then divide by the assay factor, so harmonization's multiply undoes it.
            const double observed =
                t.biomarkers[b] * std::exp(shifts[std::size_t(d.center)][b]) / factors.factor(markers[b], method);
            if (!missing) *slots[b] = std::max(0.01, round_to(observed, 0.01));
        }
    });

    SyntheticCohort cohort;
    truth.subjects.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        truth.subjects.push_back(std::move(drafts[i].truth));
        cohort.data.csf.push_back(std::move(rows[i].csf));
        for (auto& v : rows[i].visits) cohort.data.visits.push_back(std::move(v));
        cohort.data.demographics.push_back(std::move(rows[i].demo));
    }
    cohort.truth = std::move(truth);
    return cohort;
}

namespace {

std::string cell(double v) {
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

std::string cell(const std::optional<double>& v) { return v ? cell(*v) : std::string(); }

std::string method_code(AssayMethod m) {
    switch (m) {
        case AssayMethod::Elisa: return "1";
        case AssayMethod::Luminex: return "2";
        case AssayMethod::Other: return "8";
    }
    return "8";
}

struct DateParts {
    int year;
    unsigned month, day;
};

DateParts parts(dataio::Date d) {
    const std::chrono::year_month_day ymd(d);
    return {int(ymd.year()), unsigned(ymd.month()), unsigned(ymd.day())};
}

}  // namespace

void write_csf_csv(std::ostream& out, std::span<const dataio::RawCsfRow> rows) {
    out << "NACCID,CSFABETA,CSFPTAU,CSFTTAU,CSFABMD,CSFPTMD,CSFTTMD,CSFLPMO,CSFLPDY,CSFLPYR\n";
    for (const auto& r : rows) {
        const auto p = parts(r.collection_date);
        out << r.subject_id << ',' << cell(r.abeta42) << ',' << cell(r.ptau) << ',' << cell(r.ttau) << ','
            << method_code(r.abeta42_method) << ',' << method_code(r.ptau_method) << ',' << method_code(r.ttau_method)
            << ',' << p.month << ',' << p.day << ',' << p.year << '\n';
    }
}

void write_visits_csv(std::ostream& out, std::span<const dataio::VisitRow> rows) {
    out << "NACCID,NACCVNUM,VISITMO,VISITDAY,VISITYR,NACCMMSE,CDRSUM,NACCUDSD\n";
    for (const auto& v : rows) {
        const auto p = parts(v.date);
        out << v.subject_id << ',' << v.visit_number << ',' << p.month << ',' << p.day << ',' << p.year << ','
            << (v.mmse ? std::to_string(*v.mmse) : std::string()) << ',' << cell(v.cdrsb) << ','
            << (v.diagnosis ? dataio::to_string(*v.diagnosis) : std::string()) << '\n';
    }
}

void write_demographics_csv(std::ostream& out, std::span<const dataio::DemographicsRow> rows) {
    out << "NACCID,SEX,BIRTHYR,EDUC,NACCADC\n";
    for (const auto& d : rows) {
        out << d.subject_id << ',' << (d.sex ? (*d.sex == dataio::Sex::Male ? "1" : "2") : "") << ','
            << (d.birth_year ? std::to_string(*d.birth_year) : std::string()) << ',' << cell(d.education) << ','
            << d.center.value_or("") << '\n';
    }
}

void write_ground_truth_jsonl(std::ostream& out, const GroundTruth& truth) {
    out << nlohmann::json{{"standardization",
                           {{"ptau_mean", truth.ptau_mean},
                            {"ptau_sd", truth.ptau_sd},
                            {"inv_abeta42_mean", truth.inv_abeta_mean},
                            {"inv_abeta42_sd", truth.inv_abeta_sd}}}}
               .dump()
        << '\n';
    for (const auto& s : truth.subjects) out << nlohmann::json(s).dump() << '\n';
}

GroundTruth read_ground_truth_jsonl(std::istream& in) {
    GroundTruth truth;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto j = nlohmann::json::parse(line);
        if (j.contains("standardization")) {
            const auto& s = j.at("standardization");
            truth.ptau_mean = s.at("ptau_mean").get<double>();
            truth.ptau_sd = s.at("ptau_sd").get<double>();
            truth.inv_abeta_mean = s.at("inv_abeta42_mean").get<double>();
            truth.inv_abeta_sd = s.at("inv_abeta42_sd").get<double>();
        } else {
            truth.subjects.push_back(j.get<SubjectTruth>());
        }
    }
    return truth;
}

void write_cohort(const SyntheticCohort& cohort, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    const auto open = [&](const char* name) {
        std::ofstream f(dir / name, std::ios::binary);
        if (!f) throw DataError("cannot write " + (dir / name).string());
        return f;
    };
    auto csf = open("csf.csv");
    write_csf_csv(csf, cohort.data.csf);
    auto visits = open("visits.csv");
    write_visits_csv(visits, cohort.data.visits);
    auto demo = open("demographics.csv");
    write_demographics_csv(demo, cohort.data.demographics);
    auto truth = open("ground_truth.jsonl");
    write_ground_truth_jsonl(truth, cohort.truth);
}

double theoretical_c_index(std::span<const double> log_risks) {
    const std::size_t n = log_risks.size();
    if (n < 2) throw DataError("theoretical C-index needs at least two subjects");
    double total = 0;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            const double d = std::fabs(log_risks[i] - log_risks[j]);
            total += 1.0 / (1.0 + std::exp(-d));
        }
    return total / (0.5 * double(n) * double(n - 1));
}

std::vector<evalstats::MetricReport> oracle_metrics(const GroundTruth& truth,
                                                    std::span<const OraclePrediction> predictions) {
    std::map<std::string, const SubjectTruth*> by_id;
    for (const auto& s : truth.subjects) by_id.emplace(s.subject_id, &s);
    std::vector<std::pair<const SubjectTruth*, const OraclePrediction*>> joined;
    for (const auto& p : predictions) {
        const auto it = by_id.find(p.subject_id);
        if (it == by_id.end()) throw DataError("oracle join: unknown subject '" + p.subject_id + "'");
        joined.emplace_back(it->second, &p);
    }

    std::vector<evalstats::MetricReport> reports;
    const char* names[3] = {"r2_alpha", "r2_beta", "r2_gamma"};
    for (int k = 0; k < 3; ++k) {
        std::vector<double> pred, actual;
        for (const auto& [t, p] : joined)
            if (std::isfinite(p->theta(k))) {
                pred.push_back(p->theta(k));
                actual.push_back(t->theta(k));
            }
        const long m = long(pred.size());
        try {
            if (m < 2) throw UndefinedMetricError("too few predictions");
            const auto score = evalstats::regression_metrics(Eigen::Map<const Eigen::VectorXd>(pred.data(), m),
                                                             Eigen::Map<const Eigen::VectorXd>(actual.data(), m));
            reports.push_back(report(names[k], score.r2, m));
        } catch (const UndefinedMetricError&) {
            reports.push_back(evalstats::MetricReport::undefined(names[k], m));
        }
    }

    std::vector<double> score, log_risk, event_time;
    for (const auto& [t, p] : joined)
        if (std::isfinite(p->risk)) {
            score.push_back(p->risk);
            log_risk.push_back(t->log_risk);
            event_time.push_back(t->event_time);
        }
    const long m = long(score.size());
    double concordant = 0;
    long pairs = 0;
    for (long i = 0; i < m; ++i)
        for (long j = i + 1; j < m; ++j) {
            if (log_risk[std::size_t(i)] == log_risk[std::size_t(j)]) continue;
            ++pairs;
            const double a = (log_risk[std::size_t(i)] - log_risk[std::size_t(j)]) * (score[std::size_t(i)] - score[std::size_t(j)]);
            concordant += a > 0 ? 1.0 : a == 0 ? 0.5 : 0.0;
        }
    if (pairs > 0) {
        reports.push_back(report("c_index_true_risk", concordant / double(pairs), m));
    } else {
        reports.push_back(evalstats::MetricReport::undefined("c_index_true_risk", m));
    }

    // Pre-censoring event times are all observed; infinite ones (zero hazard) act as censored at the end.
    Eigen::VectorXd times(m);
    Eigen::VectorXi events(m);
    double horizon = 0;
    for (long i = 0; i < m; ++i)
        if (std::isfinite(event_time[std::size_t(i)])) horizon = std::max(horizon, event_time[std::size_t(i)]);
    for (long i = 0; i < m; ++i) {
        const bool finite = std::isfinite(event_time[std::size_t(i)]);
        times(i) = finite ? event_time[std::size_t(i)] : horizon + 1;
        events(i) = finite ? 1 : 0;
    }
    try {
        reports.push_back(report(
            "c_index_event_time", evalstats::c_index(Eigen::Map<const Eigen::VectorXd>(score.data(), m), times, events), m));
    } catch (const UndefinedMetricError&) {
        reports.push_back(evalstats::MetricReport::undefined("c_index_event_time", m));
    }
    return reports;
}

}  // namespace progress::synthcohort
