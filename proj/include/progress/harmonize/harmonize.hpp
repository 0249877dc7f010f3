#pragma once

#include <array>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "progress/core/random.hpp"
#include "progress/dataio/records.hpp"

namespace progress::harmonize {

using dataio::AssayMethod;

enum class Biomarker { Abeta42, Ptau, Ttau, Abeta40 };

std::string to_string(Biomarker b);
Biomarker biomarker_from_string(const std::string& s);

/// Multiplicative cross-assay factors h_{b,m}. ELISA is the reference (1.0).
struct HarmonizationFactors {
    std::map<std::pair<Biomarker, AssayMethod>, double> table;

    /// ELISA 1.0 everywhere, Luminex Abeta42 1.15, every other pair 1.0.
    static HarmonizationFactors defaults();
    double factor(Biomarker b, AssayMethod m) const;  // ConfigError when the pair is absent
};

/// Throws DataError for non-positive input, ConfigError for an unknown pair.
double apply_assay_factor(double value, Biomarker b, AssayMethod m, const HarmonizationFactors& factors);

void to_json(nlohmann::json& j, const HarmonizationFactors& f);
void from_json(const nlohmann::json& j, HarmonizationFactors& f);

// ---------------------------------------------------------------- ComBat

struct CombatModel {
    std::vector<std::string> sites;
    Eigen::VectorXd alpha;  // per-site location, shrunk
    Eigen::VectorXd sigma;  // per-site scale, shrunk
    Eigen::VectorXd beta;   // covariate coefficients
    double mu_pool = 0;
    double sigma_pool = 1;

    std::optional<std::size_t> site_index(const std::string& site) const;
};

/// Location/scale batch model with parametric empirical-Bayes shrinkage of
/// the per-site moments. `covariates` is n x p (p may be 0).
CombatModel combat_fit(const Eigen::VectorXd& values, const std::vector<std::string>& site,
                       const Eigen::MatrixXd& covariates);

/// ((y - alpha_j - x'beta) / sigma_j) * sigma_pool + mu_pool. Unknown sites use
/// the pooled moments and emit a warning.
double combat_apply(const CombatModel& model, double value, const std::string& site,
                    const Eigen::VectorXd& covariates);
double combat_apply(const CombatModel& model, double value, const std::string& site);

void to_json(nlohmann::json& j, const CombatModel& m);
void from_json(const nlohmann::json& j, CombatModel& m);

// ---------------------------------------------------------------- ATN

struct AtnThresholds {
    double abeta42 = 500;  // A+ strictly below
    double ptau = 60;      // T+ strictly above
    double ttau = 400;     // N+ strictly above
};

struct AtnProfile {
    bool a = false;
    bool t = false;
    bool n = false;

    std::string label() const;  // e.g. "A+T+N-"
    int code() const { return (a ? 4 : 0) + (t ? 2 : 0) + (n ? 1 : 0); }
    friend bool operator==(const AtnProfile&, const AtnProfile&) = default;
};

AtnProfile classify_atn(double abeta42, double ptau, double ttau, const AtnThresholds& thresholds = {});

// ---------------------------------------------------------------- imputation

/// Aβ42, p-tau, t-tau in pg/mL; any may be missing.
struct BiomarkerTriple {
    std::optional<double> abeta42;
    std::optional<double> ptau;
    std::optional<double> ttau;

    bool complete() const { return abeta42 && ptau && ttau; }
    bool empty() const { return !abeta42 && !ptau && !ttau; }
};

/// Flags computable from the observed markers only; a missing marker's flag is unset.
struct PartialAtnGroup {
    std::optional<bool> a, t, n;
    friend bool operator==(const PartialAtnGroup&, const PartialAtnGroup&) = default;
};

PartialAtnGroup partial_atn_group(const BiomarkerTriple& v, const AtnThresholds& thresholds = {});

struct ImputationOptions {
    bool stochastic = false;       // add a resampled residual to each imputed value
    std::size_t min_group_size = 10;  // smaller groups fall back to all complete cases
    AtnThresholds thresholds;
};

/// Fills each missing marker by least squares on the observed ones, fit on the
/// complete cases sharing the subject's partial ATN group. Amyloid enters as
/// 1/Aβ42, tau markers linearly, plus an intercept. `rng` is only used in
/// stochastic mode. Throws DataError when all three are missing.
BiomarkerTriple impute_biomarker(const BiomarkerTriple& partial, std::span<const BiomarkerTriple> complete_cases,
                                 const ImputationOptions& options = {}, Rng* rng = nullptr);

// ---------------------------------------------------------------- Yeo-Johnson

double yeo_johnson(double y, double lambda);

struct YeoJohnsonFit {
    double lambda = 1;
    double mean = 0;  // of the transformed training values
    double sd = 1;

    double transform(double y) const { return yeo_johnson(y, lambda); }
    double standardize(double y) const { return (transform(y) - mean) / sd; }
};

/// Profile log-likelihood of the Yeo-Johnson family for a normal model.
double yeo_johnson_loglik(const Eigen::VectorXd& values, double lambda);

/// Maximizes the profile likelihood on a 0.01 grid over [-3, 3], then refines
/// by golden section inside the best cell. Needs n >= 10 and nonzero variance.
YeoJohnsonFit fit_yeo_johnson(const Eigen::VectorXd& values);

// ---------------------------------------------------------------- features

enum class SecondRatio { TtauOverPtau, Abeta42Over40 };

struct HarmonizeConfig {
    HarmonizationFactors factors = HarmonizationFactors::defaults();
    AtnThresholds thresholds;
    SecondRatio second_ratio = SecondRatio::TtauOverPtau;
    bool combat = true;
    ImputationOptions imputation;
    double z_clip = 10;
};

void to_json(nlohmann::json& j, const HarmonizeConfig& c);
void from_json(const nlohmann::json& j, HarmonizeConfig& c);

inline constexpr std::size_t kFeatureCount = 10;

/// Names of the feature vector entries in order.
std::vector<std::string> feature_names(SecondRatio second_ratio = SecondRatio::TtauOverPtau);

struct BaselineFeatures {
    std::string subject_id;
    Eigen::VectorXd values;  // kFeatureCount entries
    AtnProfile atn;
    // Harmonized, imputed, site-corrected markers in pg/mL.
    double abeta42 = 0, ptau = 0, ttau = 0;
    std::optional<double> abeta40;
    bool imputed = false;
};

/// Fitted harmonization: ComBat per marker on the log scale, Yeo-Johnson and
/// z-scoring per biomarker-derived field, medians for missing clinical scores.
struct HarmonizationModel {
    HarmonizeConfig config;
    std::vector<BiomarkerTriple> complete_cases;  // assay-scaled, pre-ComBat
    std::array<CombatModel, 3> combat;             // Aβ42, p-tau, t-tau (log scale)
    std::optional<CombatModel> combat_abeta40;
    std::array<YeoJohnsonFit, 5> transforms;       // 3 markers + 2 ratios
    double median_mmse = 0;
    double median_cdrsb = 0;
    double fallback_abeta42_40 = 0;  // median ratio, used when Aβ40 is missing
};

/// Assay-scaled markers of one record, before site correction.
BiomarkerTriple scaled_markers(const dataio::ParticipantRecord& r, const HarmonizationFactors& factors);

HarmonizationModel fit_harmonization(std::span<const dataio::ParticipantRecord> records,
                                     const HarmonizeConfig& config = {}, std::uint64_t seed = 0);

/// Feature vector for one record. `rng` feeds stochastic imputation only.
BaselineFeatures build_features(const HarmonizationModel& model, const dataio::ParticipantRecord& record,
                                Rng* rng = nullptr);

std::vector<BaselineFeatures> build_all_features(const HarmonizationModel& model,
                                                 std::span<const dataio::ParticipantRecord> records,
                                                 std::uint64_t seed = 0);

/// Stack feature vectors as rows (n x kFeatureCount).
Eigen::MatrixXd feature_matrix(std::span<const BaselineFeatures> features);

void to_json(nlohmann::json& j, const HarmonizationModel& m);
void from_json(const nlohmann::json& j, HarmonizationModel& m);

}  // namespace progress::harmonize
