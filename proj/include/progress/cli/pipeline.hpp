#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "progress/dataio/records.hpp"
#include "progress/evalstats/harness.hpp"
#include "progress/harmonize/harmonize.hpp"
#include "progress/mixedfx/mixedfx.hpp"
#include "progress/survnet/survnet.hpp"
#include "progress/synthcohort/synthcohort.hpp"
#include "progress/trajnet/trajnet.hpp"

namespace progress::cli {

namespace fs = std::filesystem;

enum class CohortFilter { All, MciOnly };

std::string to_string(CohortFilter f);
CohortFilter cohort_filter_from_string(const std::string& s);

/// Fully resolved settings of one invocation; written to config.json.
struct RunConfig {
    std::string subcommand;
    fs::path run_dir = "run";
    fs::path csf_path, visits_path, demographics_path;  // empty: <run>/data/*.csv
    std::uint64_t seed = 0;
    int jobs = 1;
    CohortFilter cohort_filter = CohortFilter::MciOnly;
    synthcohort::GeneratorConfig generator;
    harmonize::HarmonizeConfig harmonize;
    trajnet::TrajNetConfig traj;
    survnet::SurvNetConfig surv;
    int mc_passes = 50;
    std::array<double, 3> split{0.722, 0.128, 0.150};  // train, validation, test
    std::vector<double> horizons{2, 3, 5};
    int folds = 5;
    int repeats = 5;
    int min_center_n = 20;
    int permutations = 1000;
    int bootstrap = 10000;
};

void to_json(nlohmann::json& j, const RunConfig& c);
/// Overrides the fields present in `j`; unknown keys raise ConfigError.
void apply_json(const nlohmann::json& j, RunConfig& c);

// ---------------------------------------------------------------- run layout

struct RunPaths {
    fs::path root;

    fs::path data() const { return root / "data"; }
    fs::path integrated() const { return root / "integrated.jsonl"; }
    fs::path features() const { return root / "features.csv"; }
    fs::path trajectories() const { return root / "trajectories.jsonl"; }
    fs::path predictions() const { return root / "predictions.csv"; }
    fs::path metrics() const { return root / "metrics.json"; }
    fs::path config() const { return root / "config.json"; }
    fs::path tables() const { return root / "tables"; }
    fs::path models() const { return root / "models"; }
};

// ---------------------------------------------------------------- splitting

enum class SplitPart { Train = 0, Validation = 1, Test = 2 };

std::string to_string(SplitPart p);
SplitPart split_part_from_string(const std::string& s);

/// Stratified by event flag: each class is shuffled with its own derived stream
/// and cut at round(fraction * class size). Fractions must sum to 1.
std::vector<SplitPart> stratified_split(const Eigen::VectorXi& events, const std::array<double, 3>& fractions,
                                        std::uint64_t seed);

// ---------------------------------------------------------------- assembled data

struct FeatureTable {
    std::vector<std::string> subject_ids;
    std::vector<std::string> centers;
    std::vector<std::string> names;
    Eigen::MatrixXd values;  // p x n
};

void write_feature_table(std::ostream& out, const FeatureTable& t);
FeatureTable read_feature_table(std::istream& in);

/// Joins integrated records, features and reliable trajectory targets by id.
/// Subjects without a reliable target get NaN target columns.
evalstats::EvalDataset make_eval_dataset(std::span<const dataio::ParticipantRecord> records,
                                         const FeatureTable& features,
                                         std::span<const mixedfx::TrajectoryParams> trajectories);

// ---------------------------------------------------------------- models

struct DeepModels {
    trajnet::TrajNetModel traj;
    survnet::SurvNetModel surv;
    bool has_traj = false;
};

/// Trains the trajectory network on columns with finite targets and the
/// survival network on all columns; validation columns drive early stopping.
DeepModels train_deep(const RunConfig& config, const evalstats::EvalDataset& train,
                      const evalstats::EvalDataset& validation, bool with_trajectories, std::uint64_t seed);

evalstats::Predictions predict_deep(const RunConfig& config, const DeepModels& models, const Eigen::MatrixXd& x,
                                    std::uint64_t seed);

/// Fit on `train` (an internal stratified validation cut drives early stopping),
/// predict `test`.
evalstats::ModelFactory deep_factory(const RunConfig& config, bool with_trajectories);
evalstats::ModelFactory linear_cox_factory(std::vector<Eigen::Index> rows = {});

/// Feature rows of the clinical-only baseline (age, sex, education, MMSE, CDR-SB).
std::vector<Eigen::Index> clinical_feature_rows(const std::vector<std::string>& names);

// ---------------------------------------------------------------- subcommands

/// Entry point shared by the executable and the tests. Returns 0 on success,
/// 2 on usage or configuration errors, 1 on data or training errors.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run(int argc, const char* const* argv);

void cmd_generate(const RunConfig& c);
void cmd_integrate(const RunConfig& c);
void cmd_harmonize(const RunConfig& c);
void cmd_fit_trajectories(const RunConfig& c);
void cmd_train_traj(const RunConfig& c);
void cmd_train_surv(const RunConfig& c);
void cmd_predict(const RunConfig& c);
void cmd_evaluate(const RunConfig& c);
void cmd_cv_compare(const RunConfig& c);
void cmd_loco(const RunConfig& c);
void cmd_fairness(const RunConfig& c);

}  // namespace progress::cli
