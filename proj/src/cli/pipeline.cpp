#include "progress/cli/pipeline.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include "progress/core/errors.hpp"
#include "progress/core/log.hpp"
#include "progress/dataio/dataio.hpp"
#include "progress/evalstats/hypothesis.hpp"
#include "progress/evalstats/survival.hpp"

namespace progress::cli {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;
using Eigen::VectorXi;

std::string to_string(CohortFilter f) { return f == CohortFilter::All ? "all" : "mci-only"; }

CohortFilter cohort_filter_from_string(const std::string& s) {
    if (s == "all") return CohortFilter::All;
    if (s == "mci-only") return CohortFilter::MciOnly;
    throw ConfigError("unknown cohort filter '" + s + "' (expected all or mci-only)");
}

std::string to_string(SplitPart p) {
    switch (p) {
        case SplitPart::Train: return "train";
        case SplitPart::Validation: return "validation";
        case SplitPart::Test: return "test";
    }
    return "test";
}

SplitPart split_part_from_string(const std::string& s) {
    if (s == "train") return SplitPart::Train;
    if (s == "validation") return SplitPart::Validation;
    if (s == "test") return SplitPart::Test;
    throw DataError("unknown split label '" + s + "'");
}

void to_json(nlohmann::json& j, const RunConfig& c) {
    j = {{"subcommand", c.subcommand},
         {"run_dir", c.run_dir.generic_string()},
         {"csf", c.csf_path.generic_string()},
         {"visits", c.visits_path.generic_string()},
         {"demographics", c.demographics_path.generic_string()},
         {"seed", c.seed},
         {"jobs", c.jobs},
         {"cohort_filter", to_string(c.cohort_filter)},
         {"generator", c.generator},
         {"harmonize", c.harmonize},
         {"traj", c.traj},
         {"surv", c.surv},
         {"mc_passes", c.mc_passes},
         {"split", c.split},
         {"horizons", c.horizons},
         {"folds", c.folds},
         {"repeats", c.repeats},
         {"min_center_n", c.min_center_n},
         {"permutations", c.permutations},
         {"bootstrap", c.bootstrap}};
}

void apply_json(const nlohmann::json& j, RunConfig& c) {
    if (!j.is_object()) throw ConfigError("config file must hold a JSON object");
    try {
        for (const auto& [key, v] : j.items()) {
            if (key == "subcommand") continue;
            if (key == "run_dir") c.run_dir = v.get<std::string>();
            else if (key == "csf") c.csf_path = v.get<std::string>();
            else if (key == "visits") c.visits_path = v.get<std::string>();
            else if (key == "demographics") c.demographics_path = v.get<std::string>();
            else if (key == "seed") c.seed = v.get<std::uint64_t>();
            else if (key == "jobs") c.jobs = v.get<int>();
            else if (key == "cohort_filter") c.cohort_filter = cohort_filter_from_string(v.get<std::string>());
            else if (key == "generator") c.generator = v.get<synthcohort::GeneratorConfig>();
            else if (key == "harmonize") c.harmonize = v.get<harmonize::HarmonizeConfig>();
            else if (key == "traj") c.traj = v.get<trajnet::TrajNetConfig>();
            else if (key == "surv") c.surv = v.get<survnet::SurvNetConfig>();
            else if (key == "mc_passes") c.mc_passes = v.get<int>();
            else if (key == "split") c.split = v.get<std::array<double, 3>>();
            else if (key == "horizons") c.horizons = v.get<std::vector<double>>();
            else if (key == "folds") c.folds = v.get<int>();
            else if (key == "repeats") c.repeats = v.get<int>();
            else if (key == "min_center_n") c.min_center_n = v.get<int>();
            else if (key == "permutations") c.permutations = v.get<int>();
            else if (key == "bootstrap") c.bootstrap = v.get<int>();
            else throw ConfigError("unknown config key '" + key + "'");
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("malformed config: ") + e.what());
    }
}

// ---------------------------------------------------------------- splitting

std::vector<SplitPart> stratified_split(const VectorXi& events, const std::array<double, 3>& fractions,
                                        std::uint64_t seed) {
    if (std::any_of(fractions.begin(), fractions.end(), [](double f) { return !(f >= 0); }) ||
        std::fabs(fractions[0] + fractions[1] + fractions[2] - 1) > 1e-9)
        throw ConfigError("split fractions must be non-negative and sum to 1");
    std::vector<SplitPart> out(std::size_t(events.size()), SplitPart::Test);
    for (int cls = 0; cls < 2; ++cls) {
        std::vector<Index> idx;
        for (Index i = 0; i < events.size(); ++i)
            if ((events(i) != 0) == (cls == 1)) idx.push_back(i);
        Rng rng = make_rng(seed, std::uint64_t(cls));
        std::shuffle(idx.begin(), idx.end(), rng);
        const auto n_train = std::size_t(std::lround(fractions[0] * double(idx.size())));
        const auto n_val = std::min(idx.size() - n_train, std::size_t(std::lround(fractions[1] * double(idx.size()))));
        for (std::size_t k = 0; k < idx.size(); ++k)
            out[std::size_t(idx[k])] = k < n_train ? SplitPart::Train
                                       : k < n_train + n_val ? SplitPart::Validation
                                                             : SplitPart::Test;
    }
    return out;
}

// ---------------------------------------------------------------- files

namespace {

std::string num(double v) {
    if (std::isnan(v)) return "NA";
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

double parse_num(const std::string& s) {
    if (s == "NA" || s.empty()) return std::numeric_limits<double>::quiet_NaN();
    double v = 0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc{} || res.ptr != s.data() + s.size()) throw DataError("malformed number '" + s + "'");
    return v;
}

std::ifstream open_in(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    if (!f) throw DataError("cannot read " + p.string() + " (run the earlier pipeline stage first)");
    return f;
}

std::ofstream open_out(const fs::path& p) {
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    std::ofstream f(p, std::ios::binary);
    if (!f) throw DataError("cannot write " + p.string());
    return f;
}

nlohmann::json read_json(const fs::path& p) {
    auto f = open_in(p);
    try {
        return nlohmann::json::parse(f);
    } catch (const nlohmann::json::exception& e) {
        throw DataError("malformed JSON in " + p.string() + ": " + e.what());
    }
}

void write_json(const fs::path& p, const nlohmann::json& j) { open_out(p) << j.dump(2) << '\n'; }

std::vector<dataio::ParticipantRecord> load_records(const RunPaths& paths) {
    auto f = open_in(paths.integrated());
    auto records = dataio::read_records_jsonl(f);
    if (records.empty()) throw DataError("no integrated subjects");
    return records;
}

FeatureTable load_features(const RunPaths& paths) {
    auto f = open_in(paths.features());
    return read_feature_table(f);
}

std::vector<mixedfx::TrajectoryParams> load_trajectories(const RunPaths& paths) {
    auto f = open_in(paths.trajectories());
    return mixedfx::read_trajectories_jsonl(f);
}

std::map<std::string, SplitPart> load_split(const RunPaths& paths) {
    const auto table = dataio::read_csv(paths.tables() / "split.csv");
    const auto id = table.require("subject_id");
    const auto part = table.require("split");
    std::map<std::string, SplitPart> out;
    for (const auto& row : table.rows) out[row.at(id)] = split_part_from_string(row.at(part));
    return out;
}

struct Assembled {
    evalstats::EvalDataset all;
    std::vector<std::string> feature_names;
    std::vector<SplitPart> split;

    std::vector<Index> part(SplitPart p) const {
        std::vector<Index> idx;
        for (std::size_t i = 0; i < split.size(); ++i)
            if (split[i] == p) idx.push_back(Index(i));
        return idx;
    }
};

Assembled assemble(const RunPaths& paths, bool need_trajectories = true) {
    const auto records = load_records(paths);
    const auto features = load_features(paths);
    std::vector<mixedfx::TrajectoryParams> traj;
    if (need_trajectories) traj = load_trajectories(paths);
    Assembled a;
    a.all = make_eval_dataset(records, features, traj);
    a.feature_names = features.names;
    if (fs::exists(paths.tables() / "split.csv")) {
        const auto split = load_split(paths);
        for (const auto& id : a.all.subject_ids) {
            const auto it = split.find(id);
            if (it == split.end()) throw DataError("subject " + id + " is missing from split.csv");
            a.split.push_back(it->second);
        }
    }
    return a;
}

void require_split(const Assembled& a) {
    if (a.split.empty()) throw DataError("split.csv is missing (run integrate first)");
}

}  // namespace

void write_feature_table(std::ostream& out, const FeatureTable& t) {
    out << "subject_id,center";
    for (const auto& n : t.names) out << ',' << n;
    out << '\n';
    for (std::size_t i = 0; i < t.subject_ids.size(); ++i) {
        out << t.subject_ids[i] << ',' << t.centers[i];
        for (Index r = 0; r < t.values.rows(); ++r) out << ',' << num(t.values(r, Index(i)));
        out << '\n';
    }
}

FeatureTable read_feature_table(std::istream& in) {
    const auto csv = dataio::read_csv(in);
    if (csv.header.size() < 3 || csv.header[0] != "subject_id" || csv.header[1] != "center")
        throw SchemaError("feature table must start with subject_id,center");
    FeatureTable t;
    t.names.assign(csv.header.begin() + 2, csv.header.end());
    t.values.resize(Index(t.names.size()), Index(csv.rows.size()));
    for (std::size_t i = 0; i < csv.rows.size(); ++i) {
        const auto& row = csv.rows[i];
        if (row.size() != csv.header.size()) throw DataError("feature table row has the wrong width");
        t.subject_ids.push_back(row[0]);
        t.centers.push_back(row[1]);
        for (std::size_t k = 0; k < t.names.size(); ++k) t.values(Index(k), Index(i)) = parse_num(row[k + 2]);
    }
    return t;
}

evalstats::EvalDataset make_eval_dataset(std::span<const dataio::ParticipantRecord> records,
                                         const FeatureTable& features,
                                         std::span<const mixedfx::TrajectoryParams> trajectories) {
    std::map<std::string, const dataio::ParticipantRecord*> rec;
    for (const auto& r : records) rec[r.subject_id] = &r;
    std::map<std::string, const mixedfx::TrajectoryParams*> traj;
    for (const auto& t : trajectories) traj[t.subject_id] = &t;

    const Index n = Index(features.subject_ids.size());
    evalstats::EvalDataset d;
    d.subject_ids = features.subject_ids;
    d.centers = features.centers;
    d.features = features.values;
    d.times.resize(n);
    d.events.resize(n);
    d.age.resize(n);
    d.sex.resize(n);
    d.education.resize(n);
    d.traj_targets = MatrixXd::Constant(3, n, std::numeric_limits<double>::quiet_NaN());
    for (Index i = 0; i < n; ++i) {
        const auto& id = d.subject_ids[std::size_t(i)];
        const auto it = rec.find(id);
        if (it == rec.end()) throw DataError("features list subject " + id + " that was not integrated");
        const auto& r = *it->second;
        d.times(i) = r.event_time;
        d.events(i) = r.event ? 1 : 0;
        d.age(i) = r.age;
        d.sex(i) = r.sex == dataio::Sex::Male ? 1 : 0;
        d.education(i) = r.education;
        if (const auto t = traj.find(id); t != traj.end() && t->second->reliable) d.traj_targets.col(i) = t->second->theta;
    }
    return d;
}

// ---------------------------------------------------------------- models

namespace {

std::vector<Index> finite_target_columns(const evalstats::EvalDataset& d) {
    std::vector<Index> idx;
    for (Index i = 0; i < d.size(); ++i)
        if (d.traj_targets.rows() == 3 && d.traj_targets.col(i).allFinite()) idx.push_back(i);
    return idx;
}

}  // namespace

DeepModels train_deep(const RunConfig& config, const evalstats::EvalDataset& train,
                      const evalstats::EvalDataset& validation, bool with_trajectories, std::uint64_t seed) {
    DeepModels m;
    const int p = int(train.features.rows());
    if (with_trajectories) {
        const auto tr = finite_target_columns(train);
        const auto va = finite_target_columns(validation);
        if (tr.size() >= 10) {
            auto cfg = config.traj;
            cfg.input_dim = p;
            cfg.seed = derive_seed(seed, 2);
            m.traj = trajnet::TrajNetModel(cfg);
            trajnet::traj_train(m.traj, train.features(Eigen::all, tr), train.traj_targets(Eigen::all, tr),
                                validation.features(Eigen::all, va), validation.traj_targets(Eigen::all, va));
            m.has_traj = true;
        } else {
            log_warning("too few reliable trajectory targets to train the trajectory network");
        }
    }
    auto cfg = config.surv;
    cfg.input_dim = p;
    cfg.seed = derive_seed(seed, 3);
    m.surv = survnet::SurvNetModel(cfg);
    survnet::surv_train(m.surv, train.features, train.times, train.events, validation.features, validation.times,
                        validation.events);
    return m;
}

evalstats::Predictions predict_deep(const RunConfig& config, const DeepModels& models, const MatrixXd& x,
                                    std::uint64_t seed) {
    evalstats::Predictions p;
    p.risk = survnet::risk_scores(models.surv, x);
    if (models.has_traj) {
        const auto mc = trajnet::mc_predict(models.traj, x, config.mc_passes, derive_seed(seed, 4));
        const Index n = x.cols();
        p.traj_mean.resize(3, n);
        p.traj_lo.resize(3, n);
        p.traj_hi.resize(3, n);
        for (Index i = 0; i < n; ++i) {
            p.traj_mean.col(i) = mc[std::size_t(i)].mean;
            p.traj_lo.col(i) = mc[std::size_t(i)].lo;
            p.traj_hi.col(i) = mc[std::size_t(i)].hi;
        }
    }
    return p;
}

evalstats::ModelFactory deep_factory(const RunConfig& config, bool with_trajectories) {
    return [config, with_trajectories](const evalstats::EvalDataset& train, const evalstats::EvalDataset& test,
                                       std::uint64_t seed) {
        // Early stopping uses a stratified 15% cut of the training rows.
        const auto parts = stratified_split(train.events, {0.85, 0.15, 0.0}, derive_seed(seed, 1));
        std::vector<Index> tr, va;
        for (std::size_t i = 0; i < parts.size(); ++i) (parts[i] == SplitPart::Train ? tr : va).push_back(Index(i));
        const auto models = train_deep(config, train.subset(tr), train.subset(va), with_trajectories, seed);
        return predict_deep(config, models, test.features, seed);
    };
}

evalstats::ModelFactory linear_cox_factory(std::vector<Index> rows) {
    return [rows](const evalstats::EvalDataset& train, const evalstats::EvalDataset& test, std::uint64_t) {
        const MatrixXd xtr = rows.empty() ? train.features : MatrixXd(train.features(rows, Eigen::all));
        const MatrixXd xte = rows.empty() ? test.features : MatrixXd(test.features(rows, Eigen::all));
        const auto fit = survnet::linear_coxph_fit(xtr, train.times, train.events);
        evalstats::Predictions p;
        p.risk = fit.scores(xte);
        return p;
    };
}

std::vector<Index> clinical_feature_rows(const std::vector<std::string>& names) {
    std::vector<Index> rows;
    for (const char* want : {"age", "sex", "education", "baseline_mmse", "baseline_cdrsb"}) {
        const auto it = std::find(names.begin(), names.end(), want);
        if (it == names.end()) throw SchemaError(std::string("feature table lacks column ") + want);
        rows.push_back(Index(it - names.begin()));
    }
    return rows;
}

// ---------------------------------------------------------------- subcommands

namespace {

RunPaths paths_of(const RunConfig& c) { return RunPaths{c.run_dir}; }

fs::path input_path(const fs::path& given, const RunPaths& paths, const char* name) {
    return given.empty() ? paths.data() / name : given;
}

nlohmann::json metric_json(const evalstats::MetricReport& r) { return r.defined ? nlohmann::json(r.value) : nlohmann::json(nullptr); }

template <typename F>
nlohmann::json guarded(F&& f) {
    try {
        return nlohmann::json(f());
    } catch (const UndefinedMetricError&) {
        return nlohmann::json(nullptr);
    }
}

std::string horizon_key(double h) { return num(h); }

}  // namespace

void cmd_generate(const RunConfig& c) {
    auto g = c.generator;
    g.seed = c.seed;
    const auto cohort = synthcohort::generate(g, c.jobs);
    synthcohort::write_cohort(cohort, paths_of(c).data());
}

void cmd_integrate(const RunConfig& c) {
    const RunPaths paths = paths_of(c);
    const auto parsed = dataio::parse_dataset(input_path(c.csf_path, paths, "csf.csv"),
                                              input_path(c.visits_path, paths, "visits.csv"),
                                              input_path(c.demographics_path, paths, "demographics.csv"));
    auto result = dataio::integrate(parsed);
    if (c.cohort_filter == CohortFilter::MciOnly) {
        std::vector<dataio::ParticipantRecord> kept;
        for (auto& r : result.records) {
            if (r.baseline_diagnosis == dataio::Diagnosis::Mci) {
                kept.push_back(std::move(r));
            } else {
                result.exclusions.push_back({r.subject_id, "cohort filter"});
            }
        }
        result.records = std::move(kept);
        std::sort(result.exclusions.begin(), result.exclusions.end(),
                  [](const auto& a, const auto& b) { return a.subject_id < b.subject_id; });
    }
    if (result.records.empty()) throw DataError("integration left no subjects");

    {
        auto f = open_out(paths.integrated());
        dataio::write_records_jsonl(f, result.records);
    }
    {
        auto f = open_out(paths.tables() / "exclusions.csv");
        dataio::write_exclusions_csv(f, result.exclusions);
    }
    {
        auto f = open_out(paths.tables() / "rejects.csv");
        dataio::write_rejects_csv(f, parsed.rejects);
    }

    VectorXi events(Index(result.records.size()));
    for (std::size_t i = 0; i < result.records.size(); ++i) events(Index(i)) = result.records[i].event ? 1 : 0;
    const auto split = stratified_split(events, c.split, derive_seed(c.seed, 10));
    auto f = open_out(paths.tables() / "split.csv");
    f << "subject_id,split\n";
    for (std::size_t i = 0; i < split.size(); ++i) f << result.records[i].subject_id << ',' << to_string(split[i]) << '\n';
}

void cmd_harmonize(const RunConfig& c) {
    const RunPaths paths = paths_of(c);
    const auto records = load_records(paths);
    const auto model = harmonize::fit_harmonization(records, c.harmonize, derive_seed(c.seed, 20));
    const auto features = harmonize::build_all_features(model, records, derive_seed(c.seed, 21));
    FeatureTable t;
    t.names = harmonize::feature_names(c.harmonize.second_ratio);
    t.values = harmonize::feature_matrix(features).transpose();
    for (const auto& r : records) {
        t.subject_ids.push_back(r.subject_id);
        t.centers.push_back(r.center);
    }
    write_json(paths.models() / "harmonization.json", model);
    auto f = open_out(paths.features());
    write_feature_table(f, t);
}

void cmd_fit_trajectories(const RunConfig& c) {
    const RunPaths paths = paths_of(c);
    const auto records = load_records(paths);
    const auto model = mixedfx::reml_fit(records);
    std::vector<mixedfx::TrajectoryParams> params;
    for (const auto& r : records)
        if (mixedfx::series_from_record(r).times.size() > 0) params.push_back(mixedfx::eb_estimates(model, r));
    const double tau = mixedfx::mark_reliable(params, mixedfx::default_tau_var(params));
    nlohmann::json j = model;
    j["tau_var"] = tau;
    write_json(paths.models() / "mixed_model.json", j);
    auto f = open_out(paths.trajectories());
    mixedfx::write_trajectories_jsonl(f, params);
}

void cmd_train_traj(const RunConfig& c) {
    const RunPaths paths = paths_of(c);
    const auto a = assemble(paths);
    require_split(a);
    const auto train = a.all.subset(a.part(SplitPart::Train));
    const auto val = a.all.subset(a.part(SplitPart::Validation));
    const auto tr = finite_target_columns(train);
    const auto va = finite_target_columns(val);
    if (tr.size() < 10) throw DataError("too few reliable trajectory targets in the training split");
    auto cfg = c.traj;
    cfg.input_dim = int(a.all.features.rows());
    cfg.seed = derive_seed(c.seed, 30);
    trajnet::TrajNetModel model(cfg);
    const auto history = trajnet::traj_train(model, train.features(Eigen::all, tr), train.traj_targets(Eigen::all, tr),
                                             val.features(Eigen::all, va), val.traj_targets(Eigen::all, va));
    nlohmann::json j = trajnet::to_json(model);
    j["best_epoch"] = history.best_epoch;
    write_json(paths.models() / "trajnet.json", j);
}

void cmd_train_surv(const RunConfig& c) {
    const RunPaths paths = paths_of(c);
    const auto a = assemble(paths, false);
    require_split(a);
    const auto train = a.all.subset(a.part(SplitPart::Train));
    const auto val = a.all.subset(a.part(SplitPart::Validation));
    auto cfg = c.surv;
    cfg.input_dim = int(a.all.features.rows());
    cfg.seed = derive_seed(c.seed, 31);
    survnet::SurvNetModel model(cfg);
    const auto history = survnet::surv_train(model, train.features, train.times, train.events, val.features, val.times,
                                             val.events);
    nlohmann::json j = survnet::to_json(model);
    j["best_epoch"] = history.best_epoch;
    write_json(paths.models() / "survnet.json", j);

    write_json(paths.models() / "linear_cox.json",
               survnet::linear_coxph_fit(train.features, train.times, train.events));
    const auto rows = clinical_feature_rows(a.feature_names);
    write_json(paths.models() / "clinical_cox.json",
               survnet::linear_coxph_fit(train.features(rows, Eigen::all), train.times, train.events));
}

namespace {

const char* kTrajNames[3] = {"alpha", "beta", "gamma"};

struct PredictionTable {
    std::vector<std::string> subject_ids;
    VectorXd risk_deep, risk_linear, risk_clinical;
    MatrixXd mean, lo, hi;  // 3 x n
};

PredictionTable read_predictions(const RunPaths& paths) {
    const auto csv = dataio::read_csv(paths.predictions());
    PredictionTable t;
    const Index n = Index(csv.rows.size());
    t.risk_deep.resize(n);
    t.risk_linear.resize(n);
    t.risk_clinical.resize(n);
    t.mean.resize(3, n);
    t.lo.resize(3, n);
    t.hi.resize(3, n);
    const auto col = [&](const std::string& name) { return csv.require(name); };
    for (Index i = 0; i < n; ++i) {
        const auto& row = csv.rows[std::size_t(i)];
        t.subject_ids.push_back(row.at(col("subject_id")));
        t.risk_deep(i) = parse_num(row.at(col("risk_deep")));
        t.risk_linear(i) = parse_num(row.at(col("risk_linear")));
        t.risk_clinical(i) = parse_num(row.at(col("risk_clinical")));
        for (int k = 0; k < 3; ++k) {
            const std::string b = kTrajNames[k];
            t.mean(k, i) = parse_num(row.at(col(b + "_mean")));
            t.lo(k, i) = parse_num(row.at(col(b + "_lo")));
            t.hi(k, i) = parse_num(row.at(col(b + "_hi")));
        }
    }
    return t;
}

void check_alignment(const PredictionTable& p, const evalstats::EvalDataset& d) {
    if (p.subject_ids != d.subject_ids) throw DataError("predictions.csv does not match the integrated subjects");
}

}  // namespace

void cmd_predict(const RunConfig& c) {
    const RunPaths paths = paths_of(c);
    const auto a = assemble(paths, false);
    const auto& x = a.all.features;
    const auto surv = survnet::surv_model_from_json(read_json(paths.models() / "survnet.json"));
    const auto linear = survnet::linear_cox_from_json(read_json(paths.models() / "linear_cox.json"));
    const auto clinical = survnet::linear_cox_from_json(read_json(paths.models() / "clinical_cox.json"));
    const VectorXd deep = survnet::risk_scores(surv, x);
    const VectorXd lin = linear.scores(x);
    const VectorXd clin = clinical.scores(x(clinical_feature_rows(a.feature_names), Eigen::all));

    MatrixXd mean = MatrixXd::Constant(3, x.cols(), std::numeric_limits<double>::quiet_NaN());
    MatrixXd lo = mean, hi = mean;
    if (fs::exists(paths.models() / "trajnet.json")) {
        const auto traj = trajnet::traj_model_from_json(read_json(paths.models() / "trajnet.json"));
        const auto mc = trajnet::mc_predict(traj, x, c.mc_passes, derive_seed(c.seed, 40));
        for (Index i = 0; i < x.cols(); ++i) {
            mean.col(i) = mc[std::size_t(i)].mean;
            lo.col(i) = mc[std::size_t(i)].lo;
            hi.col(i) = mc[std::size_t(i)].hi;
        }
    } else {
        log_warning("models/trajnet.json not found; trajectory columns left empty");
    }

    auto f = open_out(paths.predictions());
    f << "subject_id,split,risk_deep,risk_linear,risk_clinical";
    for (const char* b : kTrajNames) f << ',' << b << "_mean," << b << "_lo," << b << "_hi";
    f << '\n';
    for (Index i = 0; i < x.cols(); ++i) {
        f << a.all.subject_ids[std::size_t(i)] << ','
          << (a.split.empty() ? std::string("NA") : to_string(a.split[std::size_t(i)])) << ',' << num(deep(i)) << ','
          << num(lin(i)) << ',' << num(clin(i));
        for (int k = 0; k < 3; ++k) f << ',' << num(mean(k, i)) << ',' << num(lo(k, i)) << ',' << num(hi(k, i));
        f << '\n';
    }
}

void cmd_evaluate(const RunConfig& c) {
    const RunPaths paths = paths_of(c);
    const auto a = assemble(paths);
    require_split(a);
    const auto pred = read_predictions(paths);
    check_alignment(pred, a.all);
    const auto test_idx = a.part(SplitPart::Test);
    const auto test = a.all.subset(test_idx);
    if (test.size() == 0) throw DataError("the test split is empty");

    nlohmann::json m;
    m["cohort"] = {{"n_integrated", a.all.size()},
                   {"n_train", a.part(SplitPart::Train).size()},
                   {"n_validation", a.part(SplitPart::Validation).size()},
                   {"n_test", test.size()},
                   {"event_rate", double(a.all.events.sum()) / double(a.all.size())},
                   {"test_events", test.events.sum()}};

    // Trajectory calibration and accuracy on reliable test targets.
    auto tables_traj = open_out(paths.tables() / "trajectory.csv");
    tables_traj << "parameter,n,picp,mpiw,r2,rmse,pearson\n";
    nlohmann::json traj = nlohmann::json::object();
    for (int k = 0; k < 3; ++k) {
        std::vector<Index> usable;
        for (Index i = 0; i < test.size(); ++i) {
            const Index g = test_idx[std::size_t(i)];
            if (std::isfinite(test.traj_targets(k, i)) && std::isfinite(pred.mean(k, g))) usable.push_back(i);
        }
        nlohmann::json row = {{"n", usable.size()}, {"picp", nullptr}, {"mpiw", nullptr},
                              {"r2", nullptr},      {"rmse", nullptr}, {"pearson", nullptr}};
        if (usable.size() >= 2) {
            std::vector<Index> global;
            for (Index i : usable) global.push_back(test_idx[std::size_t(i)]);
            const VectorXd truth = test.traj_targets(k, usable).transpose();
            const VectorXd mu = pred.mean(k, global).transpose();
            const auto iv = evalstats::picp_mpiw(pred.lo(k, global).transpose(), pred.hi(k, global).transpose(), truth);
            row["picp"] = iv.picp;
            row["mpiw"] = iv.mpiw;
            try {
                const auto rs = evalstats::regression_metrics(mu, truth);
                row["r2"] = rs.r2;
                row["rmse"] = rs.rmse;
                row["pearson"] = std::isfinite(rs.pearson) ? nlohmann::json(rs.pearson) : nlohmann::json(nullptr);
            } catch (const UndefinedMetricError&) {
            }
        }
        traj[kTrajNames[k]] = row;
        const auto cell = [](const nlohmann::json& v) { return v.is_null() ? std::string("NA") : num(v.get<double>()); };
        tables_traj << kTrajNames[k] << ',' << usable.size() << ',' << cell(row["picp"]) << ',' << cell(row["mpiw"])
                    << ',' << cell(row["r2"]) << ',' << cell(row["rmse"]) << ',' << cell(row["pearson"]) << '\n';
    }
    m["trajectory"] = traj;

    // Discrimination, calibration and risk groups for each survival model.
    const auto surv = survnet::surv_model_from_json(read_json(paths.models() / "survnet.json"));
    const auto linear = survnet::linear_cox_from_json(read_json(paths.models() / "linear_cox.json"));
    const auto clinical = survnet::linear_cox_from_json(read_json(paths.models() / "clinical_cox.json"));
    struct Model {
        const char* name;
        VectorXd risk;
        const survnet::BaselineHazard* baseline;
    };
    const std::vector<Model> models{{"deep", pred.risk_deep(test_idx), &surv.baseline},
                                    {"linear_cox", pred.risk_linear(test_idx), &linear.baseline},
                                    {"clinical_cox", pred.risk_clinical(test_idx), &clinical.baseline}};
    auto tables_surv = open_out(paths.tables() / "survival.csv");
    tables_surv << "model,metric,horizon,value\n";
    auto tables_tert = open_out(paths.tables() / "tertiles.csv");
    tables_tert << "model,tertile,n,events,event_rate\n";
    nlohmann::json survival = nlohmann::json::object(), strat = nlohmann::json::object();
    for (const auto& model : models) {
        nlohmann::json s;
        s["c_index"] = guarded([&] { return evalstats::c_index(model.risk, test.times, test.events); });
        tables_surv << model.name << ",c_index,NA," << (s["c_index"].is_null() ? "NA" : num(s["c_index"].get<double>()))
                    << '\n';
        nlohmann::json auc = nlohmann::json::object(), ici = nlohmann::json::object();
        for (double h : c.horizons) {
            auc[horizon_key(h)] = guarded([&] { return evalstats::td_auc(model.risk, test.times, test.events, h); });
            VectorXd prob(test.size());
            for (Index i = 0; i < test.size(); ++i)
                prob(i) = 1.0 - survnet::survival_curve(*model.baseline, model.risk(i)).at(h);
            ici[horizon_key(h)] = guarded([&] { return survnet::ici(prob, test.times, test.events, h); });
            for (const auto& [metric, j] : {std::pair<const char*, const nlohmann::json*>{"td_auc", &auc}, {"ici", &ici}}) {
                const auto& v = (*j)[horizon_key(h)];
                tables_surv << model.name << ',' << metric << ',' << num(h) << ','
                            << (v.is_null() ? "NA" : num(v.get<double>())) << '\n';
            }
        }
        s["td_auc"] = auc;
        s["ici"] = ici;
        survival[model.name] = s;

        nlohmann::json t = nullptr;
        try {
            const auto tr = evalstats::tertile_stratify(model.risk, test.times, test.events);
            t = {{"cuts", tr.cuts},
                 {"sizes", tr.sizes},
                 {"events", tr.event_counts},
                 {"event_rates", tr.event_rates},
                 {"high_low_ratio", std::isfinite(tr.high_low_ratio) ? nlohmann::json(tr.high_low_ratio) : nlohmann::json(nullptr)},
                 {"logrank_chi2", tr.overall.chi2},
                 {"logrank_df", tr.overall.df},
                 {"logrank_p", tr.overall.p},
                 {"pairwise_p", tr.pairwise_p}};
            const char* names[3] = {"low", "middle", "high"};
            for (int k = 0; k < 3; ++k)
                tables_tert << model.name << ',' << names[k] << ',' << tr.sizes[std::size_t(k)] << ','
                            << tr.event_counts[std::size_t(k)] << ',' << num(tr.event_rates[std::size_t(k)]) << '\n';
        } catch (const DataError& e) {
            log_warning(std::string("tertile stratification skipped: ") + e.what());
        }
        strat[model.name] = t;
    }
    m["survival"] = survival;
    m["risk_stratification"] = strat;

    // Ground truth is available for generated cohorts only.
    const fs::path truth_path = paths.data() / "ground_truth.jsonl";
    if (fs::exists(truth_path)) {
        auto f = open_in(truth_path);
        const auto truth = synthcohort::read_ground_truth_jsonl(f);
        nlohmann::json oracle = nlohmann::json::object();
        for (const auto& [name, risk] : {std::pair<const char*, const VectorXd*>{"deep", &pred.risk_deep},
                                         {"linear_cox", &pred.risk_linear}}) {
            std::vector<synthcohort::OraclePrediction> preds;
            for (Index g : test_idx) {
                synthcohort::OraclePrediction p;
                p.subject_id = a.all.subject_ids[std::size_t(g)];
                if (std::string(name) == "deep") p.theta = pred.mean.col(g);
                p.risk = (*risk)(g);
                preds.push_back(p);
            }
            nlohmann::json o = nlohmann::json::object();
            for (const auto& r : synthcohort::oracle_metrics(truth, preds)) o[r.metric] = metric_json(r);
            oracle[name] = o;
        }
        m["oracle"] = oracle;
    }
    write_json(paths.metrics(), m);
}

void cmd_cv_compare(const RunConfig& c) {
    const RunPaths paths = paths_of(c);
    const auto a = assemble(paths, false);
    const std::vector<evalstats::NamedFactory> methods{
        {"deep", deep_factory(c, false)},
        {"linear_cox", linear_cox_factory()},
        {"clinical_cox", linear_cox_factory(clinical_feature_rows(a.feature_names))}};
    const auto rows = evalstats::repeated_cv(a.all, {c.folds, c.repeats, derive_seed(c.seed, 50)}, methods, c.jobs);

    auto f = open_out(paths.tables() / "cv_folds.csv");
    f << "method,repeat,fold,n_test,events_test,c_index\n";
    std::map<std::string, std::vector<double>> by_method;
    for (const auto& r : rows) {
        f << r.method << ',' << r.repeat << ',' << r.fold << ',' << r.n_test << ',' << r.events_test << ','
          << num(r.c_index) << '\n';
        by_method[r.method].push_back(r.c_index);
    }

    nlohmann::json out;
    nlohmann::json summary = nlohmann::json::object();
    for (const auto& [name, v] : by_method) {
        std::vector<double> ok;
        std::copy_if(v.begin(), v.end(), std::back_inserter(ok), [](double x) { return std::isfinite(x); });
        const double mean = ok.empty() ? NAN : std::accumulate(ok.begin(), ok.end(), 0.0) / double(ok.size());
        double ss = 0;
        for (double x : ok) ss += (x - mean) * (x - mean);
        summary[name] = {{"mean_c_index", ok.empty() ? nlohmann::json(nullptr) : nlohmann::json(mean)},
                         {"sd_c_index", ok.size() > 1 ? nlohmann::json(std::sqrt(ss / double(ok.size() - 1))) : nlohmann::json(nullptr)},
                         {"folds", ok.size()}};
    }
    out["methods"] = summary;

    nlohmann::json comparisons = nlohmann::json::array();
    std::vector<double> raw;
    for (const char* other : {"linear_cox", "clinical_cox"}) {
        const auto& d = by_method.at("deep");
        const auto& o = by_method.at(other);
        std::vector<double> da, ob;
        for (std::size_t i = 0; i < d.size(); ++i)
            if (std::isfinite(d[i]) && std::isfinite(o[i])) {
                da.push_back(d[i]);
                ob.push_back(o[i]);
            }
        const Eigen::Map<const VectorXd> x(da.data(), Index(da.size())), y(ob.data(), Index(ob.size()));
        const VectorXd diff = x - y;
        const auto w = evalstats::wilcoxon_signed_rank(x, y);
        const auto boot = evalstats::bootstrap_bca(diff, c.bootstrap, 0.95, derive_seed(c.seed, 51));
        const double perm = evalstats::permutation_test(x, y, c.permutations, derive_seed(c.seed, 52));
        raw.push_back(w.p);
        comparisons.push_back({{"comparison", std::string("deep_vs_") + other},
                               {"n_pairs", da.size()},
                               {"mean_difference", diff.mean()},
                               {"bootstrap_ci", {boot.lo, boot.hi}},
                               {"wilcoxon_statistic", w.statistic},
                               {"wilcoxon_p", w.p},
                               {"wilcoxon_exact", w.exact},
                               {"permutation_p", perm}});
    }
    const auto holm = evalstats::p_adjust(raw, evalstats::AdjustMethod::Holm);
    const auto bh = evalstats::p_adjust(raw, evalstats::AdjustMethod::BenjaminiHochberg);
    for (std::size_t k = 0; k < comparisons.size(); ++k) {
        comparisons[k]["wilcoxon_p_holm"] = holm[k];
        comparisons[k]["wilcoxon_p_bh"] = bh[k];
    }
    out["comparisons"] = comparisons;
    out["folds"] = c.folds;
    out["repeats"] = c.repeats;
    write_json(paths.root / "cv_compare.json", out);
}

void cmd_loco(const RunConfig& c) {
    const RunPaths paths = paths_of(c);
    const auto a = assemble(paths);
    const auto report = evalstats::loco_harness(a.all, deep_factory(c, true), c.min_center_n, derive_seed(c.seed, 60),
                                                3.0, c.jobs);
    auto f = open_out(paths.tables() / "loco.csv");
    f << "center,metric,n,value\n";
    for (std::size_t k = 0; k < report.centers.size(); ++k)
        for (const auto& r : report.per_center[k])
            f << report.centers[k] << ',' << r.metric << ',' << r.n << ',' << (r.defined ? num(r.value) : "NA") << '\n';
    write_json(paths.root / "loco.json", report);
}

void cmd_fairness(const RunConfig& c) {
    const RunPaths paths = paths_of(c);
    const auto a = assemble(paths);
    require_split(a);
    const auto pred = read_predictions(paths);
    check_alignment(pred, a.all);
    const auto idx = a.part(SplitPart::Test);
    const auto test = a.all.subset(idx);
    evalstats::Predictions p;
    p.risk = pred.risk_deep(idx);
    p.traj_mean = pred.mean(Eigen::all, idx);
    p.traj_lo = pred.lo(Eigen::all, idx);
    p.traj_hi = pred.hi(Eigen::all, idx);
    const auto report = evalstats::fairness_strata(test, p, 3.0);
    auto f = open_out(paths.tables() / "fairness.csv");
    f << "stratum,n,metric,value,delta_c_index,disparity_flag,small_sample\n";
    for (const auto& row : report.strata)
        for (const auto& r : row.metrics)
            f << row.stratum << ',' << row.n << ',' << r.metric << ',' << (r.defined ? num(r.value) : "NA") << ','
              << num(row.delta_c_index) << ',' << (row.disparity_flag ? 1 : 0) << ',' << (row.small_sample ? 1 : 0)
              << '\n';
    write_json(paths.root / "fairness.json", report);
}

}  // namespace progress::cli
