#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "progress/cli/pipeline.hpp"
#include "progress/core/errors.hpp"

namespace progress::cli {

namespace {

struct Command {
    const char* name;
    const char* help;
    void (*fn)(const RunConfig&);
};

constexpr Command kCommands[] = {
    {"generate", "Write a synthetic cohort (CSV inputs plus ground truth) under <run>/data", cmd_generate},
    {"integrate", "Parse, align and integrate the CSV inputs; writes the split", cmd_integrate},
    {"harmonize", "Assay factors, ComBat, imputation and feature standardization", cmd_harmonize},
    {"fit-trajectories", "REML mixed model and empirical-Bayes trajectory targets", cmd_fit_trajectories},
    {"train-traj", "Train the trajectory network", cmd_train_traj},
    {"train-surv", "Train the survival network and the Cox baselines", cmd_train_surv},
    {"predict", "Score every integrated subject with the trained models", cmd_predict},
    {"evaluate", "Test-split metrics; writes metrics.json", cmd_evaluate},
    {"cv-compare", "Repeated stratified cross-validation with paired tests", cmd_cv_compare},
    {"loco", "Leave-one-center-out validation", cmd_loco},
    {"fairness", "Subgroup metrics on the test split", cmd_fairness},
};

std::vector<double> parse_horizons(const std::string& s) {
    std::vector<double> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            std::size_t used = 0;
            const double h = std::stod(item, &used);
            if (used != item.size() || !(h > 0)) throw std::invalid_argument(item);
            out.push_back(h);
        } catch (const std::exception&) {
            throw UsageError("--horizons expects positive numbers separated by commas, got '" + s + "'");
        }
    }
    if (out.empty()) throw UsageError("--horizons needs at least one value");
    return out;
}

void write_resolved_config(const RunConfig& c) {
    const fs::path path = RunPaths{c.run_dir}.config();
    nlohmann::json all = nlohmann::json::object();
    if (std::ifstream in(path); in) {
        try {
            all = nlohmann::json::parse(in);
        } catch (const nlohmann::json::exception&) {
            all = nlohmann::json::object();
        }
        if (!all.is_object()) all = nlohmann::json::object();
    }
    all[c.subcommand] = c;
    fs::create_directories(c.run_dir);
    std::ofstream(path, std::ios::binary) << all.dump(2) << '\n';
}

void report_error(std::ostream& err, const char* kind, const std::string& message) {
    err << nlohmann::json{{"error", kind}, {"message", message}}.dump() << '\n';
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Biomarker-driven progression modelling pipeline", "progress"};
    app.require_subcommand(1, 1);

    std::string run_dir = "run", config_file, cohort_filter, horizons, link;
    std::uint64_t seed = 0;
    int jobs = 1, width = 0, min_center_n = 0, folds = 0, repeats = 0, mc_passes = 0, n = 0, centers = 0;
    int permutations = 0, bootstrap = 0, traj_epochs = 0, surv_epochs = 0, patience = 0;
    double dropout = 0, lambda1 = 0, lambda2 = 0, lambda3 = 0, lambda4 = 0, margin = 0;
    std::string csf, visits, demographics;

    app.add_option("--run", run_dir, "Run directory holding all inputs and outputs")->capture_default_str();
    auto* o_seed = app.add_option("--seed", seed, "Root seed for every random stream");
    app.add_option("--config", config_file, "JSON file with configuration overrides");
    auto* o_jobs = app.add_option("--jobs", jobs, "Worker threads for cohort generation and evaluation pools")
                       ->check(CLI::PositiveNumber);
    auto* o_filter = app.add_option("--cohort-filter", cohort_filter, "all or mci-only (default)")
                         ->check(CLI::IsMember({"all", "mci-only"}));
    auto* o_width = app.add_option("--width", width, "First hidden width of both networks")->check(CLI::Range(4, 4096));
    auto* o_horizons = app.add_option("--horizons", horizons, "Evaluation horizons in years, e.g. 2,3,5");
    auto* o_min_center = app.add_option("--min-center-n", min_center_n, "Smallest center held out in LOCO")
                             ->check(CLI::PositiveNumber);
    auto* o_folds = app.add_option("--folds", folds, "Cross-validation folds")->check(CLI::Range(2, 100));
    auto* o_repeats = app.add_option("--repeats", repeats, "Cross-validation repeats")->check(CLI::Range(1, 1000));
    auto* o_mc = app.add_option("--mc-passes", mc_passes, "Monte Carlo dropout passes")->check(CLI::Range(2, 100000));
    auto* o_dropout = app.add_option("--dropout", dropout, "Trajectory network dropout rate")->check(CLI::Range(0.0, 0.95));
    auto* o_l1 = app.add_option("--lambda1", lambda1, "Trajectory weight decay")->check(CLI::NonNegativeNumber);
    auto* o_l2 = app.add_option("--lambda2", lambda2, "Trajectory calibration weight")->check(CLI::NonNegativeNumber);
    auto* o_l3 = app.add_option("--lambda3", lambda3, "Survival ranking weight")->check(CLI::NonNegativeNumber);
    auto* o_l4 = app.add_option("--lambda4", lambda4, "Survival weight decay")->check(CLI::NonNegativeNumber);
    auto* o_margin = app.add_option("--margin", margin, "Ranking hinge margin")->check(CLI::PositiveNumber);
    auto* o_patience = app.add_option("--patience", patience, "Early-stopping patience (both networks)")
                           ->check(CLI::PositiveNumber);
    auto* o_traj_epochs = app.add_option("--traj-epochs", traj_epochs, "Trajectory network epoch cap")
                              ->check(CLI::PositiveNumber);
    auto* o_surv_epochs = app.add_option("--surv-epochs", surv_epochs, "Survival network epoch cap")
                              ->check(CLI::PositiveNumber);
    auto* o_perm = app.add_option("--permutations", permutations, "Permutation test draws")->check(CLI::PositiveNumber);
    auto* o_boot = app.add_option("--bootstrap", bootstrap, "Bootstrap replicates")->check(CLI::PositiveNumber);

    std::map<std::string, CLI::App*> subs;
    for (const auto& cmd : kCommands) {
        auto* sub = app.add_subcommand(cmd.name, cmd.help);
        sub->fallthrough();
        subs[cmd.name] = sub;
    }
    auto* o_n = subs["generate"]->add_option("--n", n, "Number of subjects")->check(CLI::PositiveNumber);
    auto* o_centers = subs["generate"]->add_option("--centers", centers, "Number of centers")->check(CLI::PositiveNumber);
    auto* o_link = subs["generate"]->add_option("--link", link, "Hazard link")->check(CLI::IsMember({"linear", "nonlinear"}));
    subs["integrate"]->add_option("--csf", csf, "CSF biomarker CSV (default <run>/data/csf.csv)");
    subs["integrate"]->add_option("--visits", visits, "Visits CSV (default <run>/data/visits.csv)");
    subs["integrate"]->add_option("--demographics", demographics, "Demographics CSV (default <run>/data/demographics.csv)");

    if (args.empty()) {
        err << app.help();
        return 2;
    }
    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return 0;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return 0;
    } catch (const CLI::ParseError& e) {
        report_error(err, "usage", e.what());
        err << app.help();
        return 2;
    }

    RunConfig c;
    try {
        for (const auto& cmd : kCommands)
            if (subs[cmd.name]->parsed()) c.subcommand = cmd.name;
        if (!config_file.empty()) {
            std::ifstream in(config_file);
            if (!in) throw ConfigError("cannot read config file " + config_file);
            nlohmann::json j;
            try {
                j = nlohmann::json::parse(in);
            } catch (const nlohmann::json::exception& e) {
                throw ConfigError(std::string("config file is not valid JSON: ") + e.what());
            }
            apply_json(j, c);
        }
        c.run_dir = run_dir;
        if (o_seed->count()) c.seed = seed;
        if (o_jobs->count()) c.jobs = jobs;
        if (o_filter->count()) c.cohort_filter = cohort_filter_from_string(cohort_filter);
        if (o_width->count()) c.traj.width = c.surv.width = width;
        if (o_horizons->count()) c.horizons = parse_horizons(horizons);
        if (o_min_center->count()) c.min_center_n = min_center_n;
        if (o_folds->count()) c.folds = folds;
        if (o_repeats->count()) c.repeats = repeats;
        if (o_mc->count()) c.mc_passes = mc_passes;
        if (o_dropout->count()) c.traj.dropout = dropout;
        if (o_l1->count()) c.traj.lambda1 = lambda1;
        if (o_l2->count()) c.traj.lambda2 = lambda2;
        if (o_l3->count()) c.surv.lambda3 = lambda3;
        if (o_l4->count()) c.surv.lambda4 = lambda4;
        if (o_margin->count()) c.surv.margin = margin;
        if (o_patience->count()) c.traj.patience = c.surv.patience = patience;
        if (o_traj_epochs->count()) c.traj.max_epochs = traj_epochs;
        if (o_surv_epochs->count()) c.surv.max_epochs = surv_epochs;
        if (o_perm->count()) c.permutations = permutations;
        if (o_boot->count()) c.bootstrap = bootstrap;
        if (o_n->count()) c.generator.n_subjects = n;
        if (o_centers->count()) c.generator.n_centers = centers;
        if (o_link->count()) c.generator.link = synthcohort::hazard_link_from_string(link);
        if (!csf.empty()) c.csf_path = csf;
        if (!visits.empty()) c.visits_path = visits;
        if (!demographics.empty()) c.demographics_path = demographics;
        c.generator.seed = c.seed;

        for (const auto& cmd : kCommands)
            if (c.subcommand == cmd.name) cmd.fn(c);
        write_resolved_config(c);
        out << c.subcommand << ": ok\n";
        return 0;
    } catch (const UsageError& e) {
        report_error(err, "usage", e.what());
        return 2;
    } catch (const ConfigError& e) {
        report_error(err, "config", e.what());
        return 2;
    } catch (const SchemaError& e) {
        report_error(err, "schema", e.what());
        return 1;
    } catch (const DataError& e) {
        report_error(err, "data", e.what());
        return 1;
    } catch (const ShapeError& e) {
        report_error(err, "data", e.what());
        return 1;
    } catch (const TrainingError& e) {
        report_error(err, "training", e.what());
        return 1;
    } catch (const ConvergenceError& e) {
        report_error(err, "convergence", e.what());
        return 1;
    } catch (const std::exception& e) {
        report_error(err, "io", e.what());
        return 1;
    }
}

int run(int argc, const char* const* argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return run(args, std::cout, std::cerr);
}

}  // namespace progress::cli
