// Command-line front end for the simulate/split/train/ensemble/evaluate/
// importance pipeline. All the heavy lifting lives in jpinn/pipeline.hpp.

#include <CLI11.hpp>

#include <cstdlib>
#include <iostream>
#include <string>

#include "jpinn/pipeline.hpp"

using namespace jpinn;

namespace {

bool verbose() {
    const char* v = std::getenv("JPINN_LOG");
    return v != nullptr && std::string(v) != "quiet";
}

void log_line(const std::string& msg) {
    if (verbose()) std::cerr << "[jpinn] " << msg << "\n";
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"joint physics-informed NO2/NOx regression pipeline"};
    app.require_subcommand(1);

    std::string config_path, data_path, out_path, model_dir, mode_flag, scenario_arg;
    std::uint64_t seed = 0;
    bool seed_set = false;
    int jobs = 0;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "run configuration JSON");
        sub->add_option("--seed", seed, "override the config seed")
            ->each([&](const std::string&) { seed_set = true; });
    };

    auto* sim_cmd = app.add_subcommand("simulate", "generate a synthetic dataset");
    sim_cmd->add_option("--scenario", scenario_arg,
                        "scenario JSON path or the bundled name 'plume-small'")
        ->default_val("plume-small");
    sim_cmd->add_option("--out", out_path, "output dataset CSV")->required();

    auto* split_cmd = app.add_subcommand("split", "stratified train/test tagging");
    add_common(split_cmd);
    split_cmd->add_option("--data", data_path, "input dataset CSV")->required();
    split_cmd->add_option("--out", out_path, "output dataset CSV")->required();

    auto* train_cmd = app.add_subcommand("train", "train one model");
    add_common(train_cmd);
    train_cmd->add_option("--data", data_path, "split dataset CSV")->required();
    train_cmd->add_option("--out", out_path, "output directory")->required();
    train_cmd->add_option(
        "--mode", mode_flag,
        "joint | separate | baseline-no-physics | no-elevation-pde");

    auto* ens_cmd = app.add_subcommand("ensemble", "bootstrap ensemble with intervals");
    add_common(ens_cmd);
    ens_cmd->add_option("--data", data_path, "dataset CSV (split tags are redrawn)")
        ->required();
    ens_cmd->add_option("--out", out_path, "output directory")->required();
    ens_cmd->add_option("--jobs", jobs, "worker threads for bootstrap members");

    auto* eval_cmd = app.add_subcommand("evaluate", "metrics for a saved model");
    eval_cmd->add_option("--data", data_path, "split dataset CSV")->required();
    eval_cmd->add_option("--model", model_dir, "model directory")->required();
    eval_cmd->add_option("--out", out_path, "output directory")->required();

    auto* imp_cmd = app.add_subcommand("importance", "permutation feature importance");
    add_common(imp_cmd);
    imp_cmd->add_option("--data", data_path, "split dataset CSV")->required();
    imp_cmd->add_option("--model", model_dir, "model directory")->required();
    imp_cmd->add_option("--out", out_path, "output directory")->required();

    auto* rep_cmd = app.add_subcommand("reproduce", "full desk-scale pipeline");
    add_common(rep_cmd);
    rep_cmd->add_option("--out", out_path, "output directory")->required();
    rep_cmd->add_option("--jobs", jobs, "worker threads for bootstrap members");

    CLI11_PARSE(app, argc, argv);

    try {
        pipeline::RunConfig cfg = pipeline::load_run_config(config_path);
        if (seed_set) {
            cfg.seed = seed;
            cfg.train.seed = seed;
        }
        if (jobs > 0) cfg.jobs = jobs;
        if (!mode_flag.empty()) cfg.train.mode = train::mode_from_string(mode_flag);

        if (sim_cmd->parsed()) pipeline::run_simulate(scenario_arg, out_path, log_line);
        else if (split_cmd->parsed())
            pipeline::run_split(cfg, data_path, out_path, log_line);
        else if (train_cmd->parsed())
            pipeline::run_train(cfg, data_path, out_path, log_line);
        else if (ens_cmd->parsed())
            pipeline::run_ensemble_cmd(cfg, data_path, out_path, log_line);
        else if (eval_cmd->parsed()) pipeline::run_evaluate(data_path, model_dir, out_path);
        else if (imp_cmd->parsed())
            pipeline::run_importance(cfg, data_path, model_dir, out_path);
        else if (rep_cmd->parsed()) pipeline::run_reproduce(cfg, out_path, log_line);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return static_cast<int>(ExitCode::config_error);
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return static_cast<int>(ExitCode::data_error);
    } catch (const NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return static_cast<int>(ExitCode::numeric_error);
    } catch (const std::domain_error& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return static_cast<int>(ExitCode::numeric_error);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return static_cast<int>(ExitCode::config_error);
    }
    return static_cast<int>(ExitCode::ok);
}
