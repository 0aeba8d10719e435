#pragma once

// End-to-end pipeline steps shared by the command-line tool and the test
// harness: configuration parsing, the simulate/split/train/ensemble/evaluate/
// importance commands, and the self-contained reproduce chain.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <set>
#include <string>

#include <json.hpp>

#include "jpinn/data.hpp"
#include "jpinn/ensemble.hpp"
#include "jpinn/scenario.hpp"
#include "jpinn/train.hpp"

namespace jpinn::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

using LogFn = std::function<void(const std::string&)>;
inline void no_log(const std::string&) {}

// Flat run configuration covering every module's knobs. Unknown keys are
// rejected; the resolved form is written next to each command's outputs.
struct RunConfig {
    train::TrainConfig train;
    int runs = 25;
    double alpha = 0.05;
    int levels = 8;
    bool renormalize_weights = false;
    int jobs = 1;
    double train_fraction = 0.78;
    double oversample_tails = 0.2;
    int importance_repeats = 5;
    std::string scenario = "plume-small";
    std::uint64_t seed = 0;
};

inline const char* policy_name(train::PhysicsPolicy p) {
    return p == train::PhysicsPolicy::all_samples ? "all-samples" : "train-regular-only";
}

inline RunConfig parse_run_config(const json& j) {
    static const std::set<std::string> allowed = {
        "mode",          "batch_size",     "epochs",
        "learning_rate", "beta1",          "beta2",
        "epsilon",       "clip_norm",      "lambda",
        "policy",        "est_widths",     "param_widths",
        "attention",     "weight_norm",    "threshold_factor",
        "runs",          "alpha",          "levels",
        "renormalize_weights",             "jobs",
        "train_fraction",                  "oversample_tails",
        "importance_repeats",              "scenario",
        "seed",          "full_scale"};
    for (const auto& [key, value] : j.items())
        if (!allowed.count(key))
            throw ConfigError("config: unknown key '" + key + "'");

    RunConfig c;
    if (j.value("full_scale", false)) c.train = train::TrainConfig::full_scale();
    auto& t = c.train;
    if (j.contains("mode")) t.mode = train::mode_from_string(j["mode"].get<std::string>());
    t.batch_size = j.value("batch_size", t.batch_size);
    t.epochs = j.value("epochs", t.epochs);
    t.learning_rate = j.value("learning_rate", t.learning_rate);
    t.beta1 = j.value("beta1", t.beta1);
    t.beta2 = j.value("beta2", t.beta2);
    t.epsilon = j.value("epsilon", t.epsilon);
    t.clip_norm = j.value("clip_norm", t.clip_norm);
    if (j.contains("lambda")) {
        const auto& l = j["lambda"];
        if (!l.is_array() || l.size() != 7)
            throw ConfigError("config: lambda must be an array of 7 weights");
        for (int i = 0; i < 7; ++i) t.lambda[i] = l[i].get<double>();
    }
    if (j.contains("policy")) {
        const std::string p = j["policy"].get<std::string>();
        if (p == "all-samples") t.policy = train::PhysicsPolicy::all_samples;
        else if (p == "train-regular-only")
            t.policy = train::PhysicsPolicy::train_regular_only;
        else throw ConfigError("config: unknown policy '" + p + "'");
    }
    if (j.contains("est_widths")) t.est_widths = j["est_widths"].get<std::vector<int>>();
    if (j.contains("param_widths"))
        t.param_widths = j["param_widths"].get<std::vector<int>>();
    t.attention = j.value("attention", t.attention);
    t.weight_norm = j.value("weight_norm", t.weight_norm);
    t.threshold_factor = j.value("threshold_factor", t.threshold_factor);

    c.runs = j.value("runs", c.runs);
    c.alpha = j.value("alpha", c.alpha);
    c.levels = j.value("levels", c.levels);
    c.renormalize_weights = j.value("renormalize_weights", c.renormalize_weights);
    c.jobs = j.value("jobs", c.jobs);
    c.train_fraction = j.value("train_fraction", c.train_fraction);
    c.oversample_tails = j.value("oversample_tails", c.oversample_tails);
    c.importance_repeats = j.value("importance_repeats", c.importance_repeats);
    c.scenario = j.value("scenario", c.scenario);
    c.seed = j.value("seed", c.seed);
    t.seed = c.seed;
    return c;
}

inline RunConfig load_run_config(const std::string& path) {
    if (path.empty()) return RunConfig{};
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file: " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ConfigError("config parse error in " + path + ": " + e.what());
    }
    return parse_run_config(j);
}

inline json resolved_config(const RunConfig& c) {
    const auto& t = c.train;
    json j;
    j["mode"] = train::mode_name(t.mode);
    j["batch_size"] = t.batch_size;
    j["epochs"] = t.epochs;
    j["learning_rate"] = t.learning_rate;
    j["beta1"] = t.beta1;
    j["beta2"] = t.beta2;
    j["epsilon"] = t.epsilon;
    j["clip_norm"] = t.clip_norm;
    j["lambda"] = t.lambda;
    j["policy"] = policy_name(t.policy);
    j["est_widths"] = t.est_widths;
    j["param_widths"] = t.param_widths;
    j["attention"] = t.attention;
    j["weight_norm"] = t.weight_norm;
    j["threshold_factor"] = t.threshold_factor;
    j["runs"] = c.runs;
    j["alpha"] = c.alpha;
    j["levels"] = c.levels;
    j["renormalize_weights"] = c.renormalize_weights;
    j["jobs"] = c.jobs;
    j["train_fraction"] = c.train_fraction;
    j["oversample_tails"] = c.oversample_tails;
    j["importance_repeats"] = c.importance_repeats;
    j["scenario"] = c.scenario;
    j["seed"] = c.seed;
    return j;
}

inline void write_resolved(const RunConfig& c, const fs::path& dir) {
    fs::create_directories(dir);
    std::ofstream out(dir / "resolved-config.json");
    out << resolved_config(c).dump(2) << "\n";
}

inline scenario::Scenario load_scenario(const std::string& name_or_path) {
    if (name_or_path == "plume-small")
        return scenario::parse(scenario::plume_small());
    return scenario::load(name_or_path);
}

inline ensemble::EnsembleConfig ensemble_config(const RunConfig& c) {
    ensemble::EnsembleConfig ec;
    ec.runs = c.runs;
    ec.seed = c.seed;
    ec.alpha = c.alpha;
    ec.levels = c.levels;
    ec.renormalize_weights = c.renormalize_weights;
    ec.jobs = c.jobs;
    ec.train = c.train;
    return ec;
}

// metrics table: one row per (split, species)
inline void write_metrics_csv(const data::Dataset& ds, const train::Model& model,
                              const std::string& path) {
    auto pred = model.predict(ds);
    std::ofstream out(path);
    if (!out) throw DataError("cannot write metrics: " + path);
    out << std::setprecision(17);
    out << "split,species,n,r2,rmse\n";
    for (data::Split split : {data::Split::train, data::Split::regular_test,
                              data::Split::site_test}) {
        std::vector<double> o1, p1, o2, p2;
        for (std::size_t i = 0; i < ds.records.size(); ++i) {
            const auto& r = ds.records[i];
            if (r.split != split || !r.observed()) continue;
            o1.push_back(*r.no2_ppb);
            o2.push_back(*r.nox_ppb);
            p1.push_back(pred[i].first);
            p2.push_back(pred[i].second);
        }
        if (o1.size() < 2) continue;
        const auto m1 = data::compute_metrics(o1, p1);
        const auto m2 = data::compute_metrics(o2, p2);
        out << data::split_name(split) << ",no2," << o1.size() << ","
            << (m1.r2_defined ? m1.r2 : std::nan("")) << "," << m1.rmse << "\n";
        out << data::split_name(split) << ",nox," << o2.size() << ","
            << (m2.r2_defined ? m2.r2 : std::nan("")) << "," << m2.rmse << "\n";
    }
}

inline void write_decomposition_csv(const ensemble::EnsembleResult& res,
                                    const std::string& path) {
    const auto rep = ensemble::decomposition_report(res);
    std::ofstream out(path);
    if (!out) throw DataError("cannot write decomposition report: " + path);
    out << std::setprecision(17);
    out << "species,variance_share,bias_noise_share,w_te,w_site,r_te,r_site,gamma,"
           "combined_error\n";
    const char* names[2] = {"no2", "nox"};
    for (int sp = 0; sp < 2; ++sp) {
        const auto& w = res.species[sp].weights;
        out << names[sp] << "," << rep.variance_share[sp] << "," << rep.bias_share[sp]
            << "," << w.w_te << "," << w.w_site << "," << w.r_te << "," << w.r_site
            << "," << w.gamma << "," << w.combined << "\n";
    }
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

inline void run_simulate(const std::string& scenario_arg, const std::string& out_path,
                         const LogFn& log = no_log) {
    auto sc = load_scenario(scenario_arg);
    log("simulating scenario '" + sc.name + "'");
    auto ds = scenario::generate(sc);
    ds.save_csv(out_path);
    log("wrote " + std::to_string(ds.records.size()) + " records to " + out_path);
}

inline void run_split(const RunConfig& cfg, const std::string& data_path,
                      const std::string& out_path, const LogFn& log = no_log) {
    auto ds = data::Dataset::load_csv(data_path);

    // hold out site-test sites first; the stratified splitter only hands out
    // train/regular-test tags within the remaining sites
    std::vector<std::string> sites;
    for (const auto& r : ds.records)
        if (r.observed() && std::find(sites.begin(), sites.end(), r.site_id) ==
                                sites.end())
            sites.push_back(r.site_id);
    const auto plan = ensemble::make_bootstrap_splits(sites, 2, cfg.seed).front();
    for (auto& r : ds.records)
        if (r.observed() &&
            std::find(plan.site_test_sites.begin(), plan.site_test_sites.end(),
                      r.site_id) != plan.site_test_sites.end())
            r.split = data::Split::site_test;
    log("held out " + std::to_string(plan.site_test_sites.size()) +
        " site-test sites");

    std::vector<std::string> notes;
    data::stratified_split(ds, cfg.train_fraction, cfg.oversample_tails, cfg.seed,
                           &notes);
    for (const auto& n : notes) log(n);
    ds.save_csv(out_path);
}

inline void run_train(const RunConfig& cfg, const std::string& data_path,
                      const std::string& out_dir, const LogFn& log = no_log) {
    auto ds = data::Dataset::load_csv(data_path);
    if (cfg.train.mode == train::Mode::baseline_no_physics)
        log("mode baseline-no-physics: physics weights lambda1..5 forced to 0");
    auto [model, history] = train::train_model(ds, cfg.train);
    fs::create_directories(out_dir);
    write_resolved(cfg, out_dir);
    model.save((fs::path(out_dir) / "model").string());
    train::save_history_csv(history, (fs::path(out_dir) / "history.csv").string());
    write_metrics_csv(ds, model, (fs::path(out_dir) / "metrics.csv").string());
    log("trained " + std::string(train::mode_name(cfg.train.mode)) + " model, " +
        std::to_string(history.size()) + " epochs");
}

inline void run_ensemble_cmd(const RunConfig& cfg, const std::string& data_path,
                             const std::string& out_dir, const LogFn& log = no_log) {
    auto ds = data::Dataset::load_csv(data_path);
    auto res = ensemble::run_ensemble(ds, ensemble_config(cfg));
    fs::create_directories(out_dir);
    write_resolved(cfg, out_dir);
    ensemble::save_run_predictions_csv(ds, res, (fs::path(out_dir) / "runs").string());
    ensemble::save_summary_csv(ds, res, (fs::path(out_dir) / "summary.csv").string());
    write_decomposition_csv(res, (fs::path(out_dir) / "decomposition.csv").string());
    log("ensemble of " + std::to_string(cfg.runs) + " members aggregated");
}

inline void run_evaluate(const std::string& data_path, const std::string& model_dir,
                         const std::string& out_dir) {
    auto ds = data::Dataset::load_csv(data_path);
    auto model = train::Model::load(model_dir);
    fs::create_directories(out_dir);
    write_metrics_csv(ds, model, (fs::path(out_dir) / "metrics.csv").string());
}

inline void run_importance(const RunConfig& cfg, const std::string& data_path,
                           const std::string& model_dir, const std::string& out_dir) {
    auto ds = data::Dataset::load_csv(data_path);
    auto model = train::Model::load(model_dir);
    data::PredictFn predict = [&model](const data::Dataset& d) {
        return model.predict(d);
    };
    std::vector<std::pair<std::string, double>> scores;
    for (std::size_t c = 0; c < ds.covariate_names.size(); ++c)
        scores.push_back({ds.covariate_names[c],
                          data::permutation_importance(predict, ds, static_cast<int>(c),
                                                       cfg.importance_repeats, cfg.seed)});
    std::stable_sort(scores.begin(), scores.end(),
                     [](const auto& a, const auto& b) { return a.second > b.second; });
    fs::create_directories(out_dir);
    std::ofstream out(fs::path(out_dir) / "importance.csv");
    if (!out) throw DataError("cannot write importance table in " + out_dir);
    out << std::setprecision(17);
    out << "rank,covariate,rmse_increase\n";
    for (std::size_t i = 0; i < scores.size(); ++i)
        out << i + 1 << "," << scores[i].first << "," << scores[i].second << "\n";
}

// Full desk-scale chain into one output directory, reproducible from seed.
inline void run_reproduce(RunConfig cfg, const std::string& out_dir,
                          const LogFn& log = no_log) {
    fs::create_directories(out_dir);
    write_resolved(cfg, out_dir);
    const fs::path base(out_dir);

    run_simulate(cfg.scenario, (base / "dataset.csv").string(), log);
    run_split(cfg, (base / "dataset.csv").string(), (base / "split.csv").string(), log);

    RunConfig joint = cfg;
    joint.train.mode = train::Mode::joint;
    run_train(joint, (base / "split.csv").string(), (base / "train-joint").string(),
              log);

    RunConfig baseline = cfg;
    baseline.train.mode = train::Mode::baseline_no_physics;
    run_train(baseline, (base / "split.csv").string(),
              (base / "train-baseline").string(), log);

    run_ensemble_cmd(cfg, (base / "dataset.csv").string(),
                     (base / "ensemble").string(), log);
    run_importance(cfg, (base / "split.csv").string(),
                   (base / "train-joint" / "model").string(),
                   (base / "importance").string());
    log("reproduce chain complete in " + out_dir);
}

}  // namespace jpinn::pipeline
