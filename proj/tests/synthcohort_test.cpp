#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <sstream>

#include "progress/core/errors.hpp"
#include "progress/dataio/dataio.hpp"
#include "progress/harmonize/harmonize.hpp"
#include "progress/survnet/survnet.hpp"
#include "progress/synthcohort/synthcohort.hpp"

using namespace progress;
using namespace progress::synthcohort;

namespace {

GeneratorConfig small_config(int n, std::uint64_t seed) {
    GeneratorConfig c;
    c.n_subjects = n;
    c.seed = seed;
    return c;
}

std::string csv_text(const SyntheticCohort& c) {
    std::ostringstream s;
    write_csf_csv(s, c.data.csf);
    write_visits_csv(s, c.data.visits);
    write_demographics_csv(s, c.data.demographics);
    write_ground_truth_jsonl(s, c.truth);
    return s.str();
}

double variance_of(const std::vector<double>& v) {
    double m = 0;
    for (double x : v) m += x;
    m /= double(v.size());
    double s = 0;
    for (double x : v) s += (x - m) * (x - m);
    return s / double(v.size());
}

}  // namespace

TEST(Generator, NoCensoringAndUnboundedFollowUpGivesAllEvents) {
    auto c = small_config(200, 3);
    c.censoring_rate = 0;
    c.max_follow_up = HUGE_VAL;
    c.baseline_hazard = 0.2;
    c.misaligned_csf_rate = 0;
    const auto cohort = generate(c);
    for (const auto& s : cohort.truth.subjects) EXPECT_TRUE(std::isfinite(s.event_time));
    const auto result = dataio::integrate(cohort.data);
    ASSERT_FALSE(result.records.empty());
    for (const auto& r : result.records) EXPECT_TRUE(r.event) << r.subject_id;
}

TEST(Generator, ZeroVarianceVisitsLieOnPopulationQuadratic) {
    auto c = small_config(150, 4);
    c.sigma_u.setZero();
    c.sigma2 = 0;
    const auto cohort = generate(c);
    for (const auto& s : cohort.truth.subjects) EXPECT_EQ(s.theta, c.fixed);
    std::map<std::string, dataio::Date> baseline;
    for (const auto& v : cohort.data.visits)
        if (v.visit_number == 1) baseline[v.subject_id] = v.date;
    for (const auto& v : cohort.data.visits) {
        const double t = double(dataio::days_between(baseline.at(v.subject_id), v.date)) / dataio::kDaysPerYear;
        const double q = c.fixed(0) + c.fixed(1) * t + c.fixed(2) * t * t;
        // Scores are recorded on the 0.5 grid of [0, 18].
        EXPECT_EQ(*v.cdrsb, std::clamp(std::round(q * 2) / 2, 0.0, 18.0));
    }
}

TEST(Generator, DefaultCohortMatchesTargetMoments) {
    const auto cohort = generate(small_config(2000, 11), 4);
    const auto result = dataio::integrate(cohort.data);
    double events = 0, age = 0;
    for (const auto& r : result.records) {
        events += r.event;
        age += r.age;
    }
    const double n = double(result.records.size());
    EXPECT_GE(events / n, 0.15);
    EXPECT_LE(events / n, 0.30);
    EXPECT_NEAR(age / n, 71.4, 2.0);
}

TEST(Generator, DeterministicAndIndependentOfThreadCount) {
    const auto c = small_config(300, 5);
    const std::string a = csv_text(generate(c, 1));
    EXPECT_EQ(a, csv_text(generate(c, 1)));
    EXPECT_EQ(a, csv_text(generate(c, 4)));
    EXPECT_NE(a, csv_text(generate(small_config(300, 6), 1)));
}

TEST(Generator, CsvRoundTripIsFieldExact) {
    const auto cohort = generate(small_config(120, 8));
    std::stringstream csf, visits, demo;
    write_csf_csv(csf, cohort.data.csf);
    write_visits_csv(visits, cohort.data.visits);
    write_demographics_csv(demo, cohort.data.demographics);
    const auto parsed = dataio::parse_tables(dataio::read_csv(csf), dataio::read_csv(visits), dataio::read_csv(demo));
    EXPECT_TRUE(parsed.rejects.empty());
    ASSERT_EQ(parsed.csf.size(), cohort.data.csf.size());
    ASSERT_EQ(parsed.visits.size(), cohort.data.visits.size());
    ASSERT_EQ(parsed.demographics.size(), cohort.data.demographics.size());
    for (std::size_t i = 0; i < parsed.csf.size(); ++i) {
        const auto& a = parsed.csf[i];
        const auto& b = cohort.data.csf[i];
        EXPECT_EQ(a.subject_id, b.subject_id);
        EXPECT_EQ(a.abeta42, b.abeta42);
        EXPECT_EQ(a.ptau, b.ptau);
        EXPECT_EQ(a.ttau, b.ttau);
        EXPECT_EQ(a.abeta42_method, b.abeta42_method);
        EXPECT_EQ(a.collection_date, b.collection_date);
    }
    for (std::size_t i = 0; i < parsed.visits.size(); ++i) {
        const auto& a = parsed.visits[i];
        const auto& b = cohort.data.visits[i];
        EXPECT_EQ(a.subject_id, b.subject_id);
        EXPECT_EQ(a.visit_number, b.visit_number);
        EXPECT_EQ(a.date, b.date);
        EXPECT_EQ(a.mmse, b.mmse);
        EXPECT_EQ(a.cdrsb, b.cdrsb);
        EXPECT_EQ(a.diagnosis, b.diagnosis);
    }
    for (std::size_t i = 0; i < parsed.demographics.size(); ++i) {
        const auto& a = parsed.demographics[i];
        const auto& b = cohort.data.demographics[i];
        EXPECT_EQ(a.subject_id, b.subject_id);
        EXPECT_EQ(a.sex, b.sex);
        EXPECT_EQ(a.birth_year, b.birth_year);
        EXPECT_EQ(a.education, b.education);
        EXPECT_EQ(a.center, b.center);
    }
}

TEST(Generator, GroundTruthRoundTrips) {
    const auto cohort = generate(small_config(40, 2));
    std::stringstream s;
    write_ground_truth_jsonl(s, cohort.truth);
    const auto back = read_ground_truth_jsonl(s);
    ASSERT_EQ(back.subjects.size(), cohort.truth.subjects.size());
    EXPECT_EQ(back.ptau_sd, cohort.truth.ptau_sd);
    for (std::size_t i = 0; i < back.subjects.size(); ++i) {
        EXPECT_EQ(back.subjects[i].subject_id, cohort.truth.subjects[i].subject_id);
        EXPECT_EQ(back.subjects[i].theta, cohort.truth.subjects[i].theta);
        EXPECT_EQ(back.subjects[i].event_time, cohort.truth.subjects[i].event_time);
        EXPECT_EQ(back.subjects[i].biomarkers, cohort.truth.subjects[i].biomarkers);
    }
}

TEST(Generator, EverySubjectIntegratedOrExcludedOnce) {
    const auto cohort = generate(small_config(600, 9));
    const auto result = dataio::integrate(cohort.data);
    std::multiset<std::string> seen;
    for (const auto& r : result.records) seen.insert(r.subject_id);
    for (const auto& e : result.exclusions) seen.insert(e.subject_id);
    ASSERT_EQ(seen.size(), cohort.truth.subjects.size());
    for (const auto& s : cohort.truth.subjects) EXPECT_EQ(seen.count(s.subject_id), 1u);
    EXPECT_FALSE(result.exclusions.empty());
}

TEST(Generator, HarmonizationUndoesSiteShifts) {
    auto c = small_config(1500, 12);
    c.site_shift_sd = {0.3, 0.3, 0.3};
    const auto cohort = generate(c, 4);
    const auto records = dataio::integrate(cohort.data).records;
    const auto model = harmonize::fit_harmonization(records);
    const auto features = harmonize::build_all_features(model, records);
    std::map<std::string, const SubjectTruth*> truth;
    for (const auto& s : cohort.truth.subjects) truth[s.subject_id] = &s;

    for (int b = 0; b < 3; ++b) {
        std::map<std::string, std::vector<double>> raw_by_site, harmonized_by_site;
        std::vector<double> h, t;
        for (std::size_t i = 0; i < records.size(); ++i) {
            const auto& r = records[i];
            const std::optional<double> raw = b == 0 ? r.csf.abeta42 : b == 1 ? r.csf.ptau : r.csf.ttau;
            const double harmonized = b == 0 ? features[i].abeta42 : b == 1 ? features[i].ptau : features[i].ttau;
            if (!raw) continue;
            raw_by_site[r.center].push_back(std::log(*raw));
            harmonized_by_site[r.center].push_back(std::log(harmonized));
            h.push_back(std::log(harmonized));
            t.push_back(std::log(truth.at(r.subject_id)->biomarkers[std::size_t(b)]));
        }
        const auto site_means = [](const std::map<std::string, std::vector<double>>& m) {
            std::vector<double> means;
            for (const auto& [site, v] : m) {
                double s = 0;
                for (double x : v) s += x;
                means.push_back(s / double(v.size()));
            }
            return means;
        };
        const double before = variance_of(site_means(raw_by_site));
        const double after = variance_of(site_means(harmonized_by_site));
        EXPECT_LE(after, 0.1 * before) << "marker " << b;

        Eigen::Map<const Eigen::VectorXd> hv(h.data(), long(h.size())), tv(t.data(), long(t.size()));
        const double corr = ((hv.array() - hv.mean()) * (tv.array() - tv.mean())).sum() /
                            std::sqrt((hv.array() - hv.mean()).square().sum() * (tv.array() - tv.mean()).square().sum());
        EXPECT_GT(corr, 0.95) << "marker " << b;
    }
}

TEST(Generator, LinearLinkCoefficientsRecoveredByCox) {
    auto c = small_config(2000, 21);
    c.link = HazardLink::Linear;
    c.hazard_coefficients = {0.7, 0.5, 0.0};
    const auto cohort = generate(c, 4);
    const auto& g = cohort.truth;
    const long n = long(g.subjects.size());
    Eigen::MatrixXd x(2, n);
    Eigen::VectorXd t(n);
    Eigen::VectorXi e(n);
    for (long i = 0; i < n; ++i) {
        const auto& s = g.subjects[std::size_t(i)];
        x(0, i) = (s.biomarkers[1] - g.ptau_mean) / g.ptau_sd;
        x(1, i) = (1.0 / s.biomarkers[0] - g.inv_abeta_mean) / g.inv_abeta_sd;
        t(i) = std::min(s.event_time, s.censoring_time);
        e(i) = s.event_time <= s.censoring_time ? 1 : 0;
    }
    const auto fit = survnet::linear_coxph_fit(x, t, e);
    const Eigen::Vector2d se = fit.standard_errors();
    EXPECT_LT(std::abs(fit.beta(0) - 0.7), 3 * se(0));
    EXPECT_LT(std::abs(fit.beta(1) - 0.5), 3 * se(1));
}

TEST(Generator, DoublingHazardHalvesMedianEventTime) {
    constexpr int n = 10000;
    Rng rng(31);
    std::vector<double> base(n), doubled(n);
    for (int i = 0; i < n; ++i) base[std::size_t(i)] = sample_event_time(0.1, 0.0, rng);
    for (int i = 0; i < n; ++i) doubled[std::size_t(i)] = sample_event_time(0.1, std::log(2.0), rng);
    const auto median = [](std::vector<double> v) {
        std::nth_element(v.begin(), v.begin() + long(v.size() / 2), v.end());
        return v[v.size() / 2];
    };
    // The sample median of 10,000 exponentials has about 2% relative error.
    EXPECT_NEAR(median(doubled) / median(base), 0.5, 0.04);
    EXPECT_NEAR(median(base), std::log(2.0) / 0.1, 0.06 * std::log(2.0) / 0.1);
}

TEST(Generator, NonlinearLinkMatchesClosedForm) {
    const auto c = small_config(400, 12);
    const auto cohort = generate(c);
    const auto& t = cohort.truth;
    int bumped = 0;
    for (const auto& s : t.subjects) {
        const double ab = s.biomarkers[0], pt = s.biomarkers[1];
        const double zp = (pt - t.ptau_mean) / t.ptau_sd;
        const double zi = (1 / ab - t.inv_abeta_mean) / t.inv_abeta_sd;
        const bool amyloid = ab < 500, tau = pt > 60;
        double r = 0.8 * zp + 0.8 * zi + (amyloid ? 1.2 * zp : 0.0);
        if (amyloid != tau) {
            r += 6;
            ++bumped;
        }
        EXPECT_NEAR(s.log_risk, r, 1e-12) << s.subject_id;
    }
    EXPECT_GT(bumped, 100);
    EXPECT_LT(bumped, 300);
}

TEST(Generator, ConfigValidationAndJsonRoundTrip) {
    auto c = small_config(10, 1);
    c.censoring_rate = -1;
    EXPECT_THROW(generate(c), ConfigError);
    c = small_config(10, 1);
    c.assay_mix = {0.5, 0.2, 0.2};
    EXPECT_THROW(generate(c), ConfigError);
    c = small_config(0, 1);
    EXPECT_THROW(generate(c), ConfigError);

    auto d = small_config(77, 9);
    d.link = HazardLink::Linear;
    d.max_follow_up = HUGE_VAL;
    d.sigma_u(0, 1) = d.sigma_u(1, 0) = 0.05;
    const auto back = nlohmann::json(d).get<GeneratorConfig>();
    EXPECT_EQ(nlohmann::json(back), nlohmann::json(d));
    EXPECT_EQ(back.link, HazardLink::Linear);
    EXPECT_TRUE(std::isinf(back.max_follow_up));
}

namespace {

double metric(const std::vector<evalstats::MetricReport>& reports, const std::string& name) {
    for (const auto& r : reports)
        if (r.metric == name) return r.value;
    ADD_FAILURE() << "missing metric " << name;
    return NAN;
}

}  // namespace

TEST(OracleMetrics, PerfectPredictionsScoreOne) {
    const auto cohort = generate(small_config(300, 14));
    std::vector<OraclePrediction> preds;
    for (const auto& s : cohort.truth.subjects) preds.push_back({s.subject_id, s.theta, s.log_risk});
    const auto reports = oracle_metrics(cohort.truth, preds);
    EXPECT_DOUBLE_EQ(metric(reports, "r2_alpha"), 1.0);
    EXPECT_DOUBLE_EQ(metric(reports, "r2_beta"), 1.0);
    EXPECT_DOUBLE_EQ(metric(reports, "r2_gamma"), 1.0);
    EXPECT_DOUBLE_EQ(metric(reports, "c_index_true_risk"), 1.0);
}

TEST(OracleMetrics, PopulationMeanScoresZero) {
    const auto cohort = generate(small_config(300, 15));
    Eigen::Vector3d mean = Eigen::Vector3d::Zero();
    for (const auto& s : cohort.truth.subjects) mean += s.theta;
    mean /= double(cohort.truth.subjects.size());
    std::vector<OraclePrediction> preds;
    for (const auto& s : cohort.truth.subjects) preds.push_back({s.subject_id, mean, 0.0});
    const auto reports = oracle_metrics(cohort.truth, preds);
    EXPECT_NEAR(metric(reports, "r2_alpha"), 0.0, 1e-12);
    EXPECT_NEAR(metric(reports, "r2_beta"), 0.0, 1e-12);
    EXPECT_NEAR(metric(reports, "r2_gamma"), 0.0, 1e-12);
    EXPECT_DOUBLE_EQ(metric(reports, "c_index_true_risk"), 0.5);
}

TEST(OracleMetrics, TrueRiskReachesTheoreticalCeiling) {
    const auto cohort = generate(small_config(4000, 16), 4);
    std::vector<OraclePrediction> preds;
    std::vector<double> risks;
    for (const auto& s : cohort.truth.subjects) {
        preds.push_back({s.subject_id, Eigen::Vector3d::Constant(NAN), s.log_risk});
        risks.push_back(s.log_risk);
    }
    const double ceiling = theoretical_c_index(risks);
    EXPECT_GT(ceiling, 0.75);
    // Pairwise concordance over 8 million pairs; the sampling SD is well below 0.005.
    EXPECT_NEAR(metric(oracle_metrics(cohort.truth, preds), "c_index_event_time"), ceiling, 0.01);
}

TEST(OracleMetrics, UnknownSubjectIsAJoinError) {
    const auto cohort = generate(small_config(20, 17));
    const std::vector<OraclePrediction> preds{{"NOPE", Eigen::Vector3d::Zero(), 0.0}};
    EXPECT_THROW(oracle_metrics(cohort.truth, preds), DataError);
}

TEST(OracleMetrics, TheoreticalCeilingHandCase) {
    // Two subjects with log-risk gap log 3: P(higher risk fails first) = 3 / 4.
    const std::vector<double> r{0.0, std::log(3.0)};
    EXPECT_NEAR(theoretical_c_index(r), 0.75, 1e-15);
    const std::vector<double> same{1.0, 1.0, 1.0};
    EXPECT_DOUBLE_EQ(theoretical_c_index(same), 0.5);
}
