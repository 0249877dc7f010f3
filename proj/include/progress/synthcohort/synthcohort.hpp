#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "progress/core/random.hpp"
#include "progress/dataio/records.hpp"
#include "progress/evalstats/metrics.hpp"

namespace progress::synthcohort {

enum class HazardLink { Linear, Nonlinear };

std::string to_string(HazardLink link);
HazardLink hazard_link_from_string(const std::string& s);

/// Knobs of the synthetic cohort. Marker arrays are ordered Aβ42, p-tau, t-tau;
/// the assay mix is ordered ELISA, Luminex, Other.
struct GeneratorConfig {
    int n_subjects = 2000;
    int n_centers = 8;
    std::array<double, 3> site_shift_sd{0.15, 0.15, 0.15};  // log scale
    Eigen::Vector3d fixed{1.5, 0.8, 0.1};                    // alpha0, beta0, gamma0
    Eigen::Matrix3d sigma_u = Eigen::Vector3d(1.0, 0.16, 0.0025).asDiagonal();
    double sigma2 = 0.25;
    // Correlation of each standardized random effect with the standardized true log-risk.
    Eigen::Vector3d risk_correlation{0.5, 0.6, 0.4};
    HazardLink link = HazardLink::Nonlinear;
    // Weights on z(p-tau), z(1/Aβ42) and, for the nonlinear link, z(p-tau) * 1[Aβ42 < cutoff].
    Eigen::Vector3d hazard_coefficients{0.8, 0.8, 1.2};
    // Nonlinear link only: added when exactly one of Aβ42 < abeta42_cutoff and
    // p-tau > ptau_cutoff holds. Smooth transforms of the features cannot rank this.
    double threshold_coefficient = 6.0;
    double abeta42_cutoff = 500;
    double ptau_cutoff = 60;
    double amyloid_positive_fraction = 0.5;
    double baseline_hazard = 0.00055;  // per year
    double censoring_rate = 0.08;    // per year
    double visit_interval_mean = 1.0;
    double visit_interval_sd = 0.1;
    double max_follow_up = 8;  // years; infinity disables the administrative cutoff
    std::array<double, 3> missing_rate{0.05, 0.05, 0.05};
    std::array<double, 3> assay_mix{0.7, 0.2, 0.1};
    double misaligned_csf_rate = 0.02;  // draws placed 120-200 days from every visit
    double age_mean = 71.4;
    double age_sd = 8.9;
    double male_fraction = 0.45;
    std::uint64_t seed = 0;

    /// ConfigError on negative rates, bad proportions or empty cohorts.
    void validate() const;
};

void to_json(nlohmann::json& j, const GeneratorConfig& c);
void from_json(const nlohmann::json& j, GeneratorConfig& c);

/// Everything the generator knows about one subject. Never shown to models.
struct SubjectTruth {
    std::string subject_id;
    std::string center;
    Eigen::Vector3d theta = Eigen::Vector3d::Zero();  // alpha, beta, gamma (fixed + random)
    double log_risk = 0;
    double event_time = 0;      // pre-censoring
    double censoring_time = 0;  // min(exponential draw, max follow-up)
    std::array<double, 3> biomarkers{};  // pre-shift, pre-assay pg/mL
    double age = 0;
};

void to_json(nlohmann::json& j, const SubjectTruth& t);
void from_json(const nlohmann::json& j, SubjectTruth& t);

struct GroundTruth {
    std::vector<SubjectTruth> subjects;  // in subject id order
    // Cohort moments used to standardize the risk inputs.
    double ptau_mean = 0, ptau_sd = 1, inv_abeta_mean = 0, inv_abeta_sd = 1;
};

struct SyntheticCohort {
    dataio::ParsedDataset data;  // rows exactly as written to the CSV files
    GroundTruth truth;
};

/// Pure function of the config; subjects are drawn on up to `jobs` threads from
/// per-subject derived seeds, so the output does not depend on `jobs`.
SyntheticCohort generate(const GeneratorConfig& config, int jobs = 1);

/// Inverse-transform draw from an exponential hazard `rate * exp(log_risk)`.
double sample_event_time(double rate, double log_risk, Rng& rng);

/// Writes csf.csv, visits.csv, demographics.csv and ground_truth.jsonl into `dir`.
void write_cohort(const SyntheticCohort& cohort, const std::filesystem::path& dir);
void write_csf_csv(std::ostream& out, std::span<const dataio::RawCsfRow> rows);
void write_visits_csv(std::ostream& out, std::span<const dataio::VisitRow> rows);
void write_demographics_csv(std::ostream& out, std::span<const dataio::DemographicsRow> rows);
void write_ground_truth_jsonl(std::ostream& out, const GroundTruth& truth);
GroundTruth read_ground_truth_jsonl(std::istream& in);

/// Model output for one subject, keyed by id for the join with the truth.
struct OraclePrediction {
    std::string subject_id;
    Eigen::Vector3d theta = Eigen::Vector3d::Constant(std::numeric_limits<double>::quiet_NaN());
    double risk = std::numeric_limits<double>::quiet_NaN();
};

/// Metrics against the generating values: r2_alpha/beta/gamma against true
/// coefficients, c_index_true_risk (ordering agreement with the true log-risk)
/// and c_index_event_time (against pre-censoring event times). Subjects with a
/// NaN prediction are skipped for that metric. Unknown ids raise DataError.
std::vector<evalstats::MetricReport> oracle_metrics(const GroundTruth& truth,
                                                    std::span<const OraclePrediction> predictions);

/// Expected C-index of the true log-risk against uncensored exponential
/// proportional-hazards event times: the mean over pairs of
/// exp(max) / (exp(r_i) + exp(r_j)).
double theoretical_c_index(std::span<const double> log_risks);

}  // namespace progress::synthcohort
