#pragma once

#include <array>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <string>
#include <vector>

#include "jpinn/data.hpp"
#include "jpinn/net.hpp"
#include "jpinn/physics.hpp"
#include "jpinn/tape.hpp"

namespace jpinn::train {

using ad::Mat;
using ad::Tape;
using ad::Var;

enum class Mode { joint, separate, baseline_no_physics, no_elevation_pde };

inline Mode mode_from_string(const std::string& s) {
    if (s == "joint") return Mode::joint;
    if (s == "separate") return Mode::separate;
    if (s == "baseline-no-physics") return Mode::baseline_no_physics;
    if (s == "no-elevation-pde") return Mode::no_elevation_pde;
    throw ConfigError("unknown mode: " + s);
}

inline const char* mode_name(Mode m) {
    switch (m) {
        case Mode::joint: return "joint";
        case Mode::separate: return "separate";
        case Mode::baseline_no_physics: return "baseline-no-physics";
        case Mode::no_elevation_pde: return "no-elevation-pde";
    }
    return "?";
}

// Which partitions feed the physics residuals e1..e5. Supervised terms always
// see the training partition only.
enum class PhysicsPolicy { all_samples, train_regular_only };

struct TrainConfig {
    int batch_size = 256;
    int epochs = 200;
    double learning_rate = 0.01;
    double beta1 = 0.9;   // the reported 0.09 stays selectable for reproduction
    double beta2 = 0.999;
    double epsilon = 1e-3;
    double clip_norm = 1.0;
    std::array<double, 7> lambda{1, 1, 1, 1, 1, 1, 1};
    std::uint64_t seed = 0;
    PhysicsPolicy policy = PhysicsPolicy::all_samples;
    Mode mode = Mode::joint;
    std::vector<int> est_widths{64, 32, 16};
    std::vector<int> param_widths{128, 64, 32, 16};
    bool attention = true;
    bool weight_norm = true;
    double threshold_factor = 1.2;  // max_log = log(factor * max training ppb)
    double log_floor = physics::kLogFloorPpb;

    static TrainConfig full_scale() {
        TrainConfig c;
        c.batch_size = 1666;
        c.epochs = 160;
        c.est_widths = net::full_scale_estimation_widths();
        c.param_widths = net::full_scale_parameter_widths();
        return c;
    }

    void validate() const {
        if (batch_size < 1) throw ConfigError("train: batch size must be >= 1");
        if (epochs < 1) throw ConfigError("train: epochs must be >= 1");
        if (clip_norm <= 0) throw ConfigError("train: clip norm must be > 0");
        if (learning_rate <= 0) throw ConfigError("train: learning rate must be > 0");
        for (double l : lambda)
            if (l < 0) throw ConfigError("train: loss weights must be >= 0");
    }
};

struct SplitMetrics {
    data::Metrics no2, nox;
};

struct EpochRecord {
    double loss = 0;
    std::array<double, 7> mean_sq{};  // e1^2 .. e7^2, batch averages
    SplitMetrics train, regular, site;
};

using TrainHistory = std::vector<EpochRecord>;

// ---------------------------------------------------------------------------
// Adam with global gradient-norm clipping
// ---------------------------------------------------------------------------

inline void clip_gradients(std::vector<Mat>& grads, double clip_norm) {
    double sq = 0;
    for (const Mat& g : grads) sq += g.squaredNorm();
    const double norm = std::sqrt(sq);
    if (norm > clip_norm) {
        const double s = clip_norm / norm;
        for (Mat& g : grads) g *= s;
    }
}

struct AdamState {
    std::vector<Mat> m, v;
    long step = 0;
};

inline void adam_step(std::vector<Mat*>& params, std::vector<Mat>& grads,
                      AdamState& st, const TrainConfig& cfg) {
    if (params.size() != grads.size())
        throw ConfigError("adam: parameter/gradient count mismatch");
    if (st.m.empty()) {
        for (Mat* p : params) {
            st.m.push_back(Mat::Zero(p->rows(), p->cols()));
            st.v.push_back(Mat::Zero(p->rows(), p->cols()));
        }
    }
    clip_gradients(grads, cfg.clip_norm);
    ++st.step;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(st.step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(st.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        st.m[i] = cfg.beta1 * st.m[i] + (1 - cfg.beta1) * grads[i];
        st.v[i] = cfg.beta2 * st.v[i] + (1 - cfg.beta2) * grads[i].cwiseProduct(grads[i]);
        const Mat mhat = st.m[i] / bc1;
        const Mat vhat = st.v[i] / bc2;
        params[i]->array() -=
            cfg.learning_rate * mhat.array() / (vhat.array().sqrt() + cfg.epsilon);
    }
}

// ---------------------------------------------------------------------------
// Matrix-form partitions
// ---------------------------------------------------------------------------

struct Partition {
    Mat features;   // [dim x n], rows: t, x, y, z, covariates (standardized)
    Mat targets;    // [2 x n] log concentrations, observed rows only
    std::vector<double> obs_no2, obs_nox;  // ppb
    int n() const { return static_cast<int>(features.cols()); }
};

struct MatrixData {
    Partition train, regular, site, predict;
    int dim = 0;
};

inline Mat features_of(const data::Dataset& ds, const data::Standardizer& std_,
                       const std::vector<std::size_t>& idx) {
    const int d = std_.dim();
    Mat f(d, static_cast<int>(idx.size()));
    for (std::size_t k = 0; k < idx.size(); ++k) {
        auto v = std_.transform(ds.records[idx[k]]);
        for (int i = 0; i < d; ++i) f(i, static_cast<int>(k)) = v[i];
    }
    return f;
}

inline MatrixData build_matrix_data(const data::Dataset& ds,
                                    const data::Standardizer& std_,
                                    double log_floor) {
    MatrixData md;
    md.dim = std_.dim();
    auto build = [&](data::Split tag) {
        std::vector<std::size_t> idx;
        for (std::size_t i = 0; i < ds.records.size(); ++i)
            if (ds.records[i].split == tag) idx.push_back(i);
        Partition p;
        p.features = features_of(ds, std_, idx);
        p.targets = Mat::Zero(2, static_cast<int>(idx.size()));
        for (std::size_t k = 0; k < idx.size(); ++k) {
            const auto& r = ds.records[idx[k]];
            if (!r.observed()) continue;
            p.targets(0, static_cast<int>(k)) = physics::to_log(*r.no2_ppb, log_floor);
            p.targets(1, static_cast<int>(k)) = physics::to_log(*r.nox_ppb, log_floor);
            p.obs_no2.push_back(*r.no2_ppb);
            p.obs_nox.push_back(*r.nox_ppb);
        }
        if (tag != data::Split::predict && p.obs_no2.size() != idx.size())
            throw DataError("partition '" + std::string(data::split_name(tag)) +
                            "' contains unobserved records");
        return p;
    };
    md.train = build(data::Split::train);
    md.regular = build(data::Split::regular_test);
    md.site = build(data::Split::site_test);
    md.predict = build(data::Split::predict);
    return md;
}

// ---------------------------------------------------------------------------
// Trained model
// ---------------------------------------------------------------------------

// One estimation/parameter net pair per head: a single joint head for both
// species, or one head per species in separate mode.
struct Model {
    Mode mode = Mode::joint;
    std::vector<net::Frnn> est_nets, param_nets;
    data::Standardizer standardizer;
    double log_floor = physics::kLogFloorPpb;
    double max_no2_log = 0, max_nox_log = 0;

    // [2 x n] log-space predictions for standardized features
    Mat predict_log(const Mat& features) const {
        if (mode == Mode::separate) {
            Mat out(2, features.cols());
            out.row(0) = est_nets[0].forward_values(features).row(0);
            out.row(1) = est_nets[1].forward_values(features).row(0);
            return out;
        }
        return est_nets[0].forward_values(features);
    }

    std::vector<std::pair<double, double>> predict(const data::Dataset& ds) const {
        std::vector<std::size_t> idx(ds.records.size());
        std::iota(idx.begin(), idx.end(), std::size_t{0});
        Mat log_pred = predict_log(features_of(ds, standardizer, idx));
        std::vector<std::pair<double, double>> out;
        out.reserve(ds.records.size());
        for (int i = 0; i < log_pred.cols(); ++i)
            out.push_back({physics::from_log(log_pred(0, i), log_floor),
                           physics::from_log(log_pred(1, i), log_floor)});
        return out;
    }

    // [14 x n] transport coefficients (both species stacked)
    Mat theta_values(const Mat& features) const {
        if (mode == Mode::separate) {
            Mat out(14, features.cols());
            out.topRows(7) = param_nets[0].forward_values(features);
            out.bottomRows(7) = param_nets[1].forward_values(features);
            return out;
        }
        return param_nets[0].forward_values(features);
    }

    void save(const std::string& dir) const {
        namespace fs = std::filesystem;
        fs::create_directories(dir);
        std::ofstream meta(fs::path(dir) / "model.txt");
        if (!meta) throw DataError("cannot write model metadata in " + dir);
        meta << std::setprecision(17);
        meta << "jpinn-model 1\n";
        meta << "mode " << mode_name(mode) << "\n";
        meta << "heads " << est_nets.size() << "\n";
        meta << "log_floor " << log_floor << "\n";
        meta << "max_no2_log " << max_no2_log << "\n";
        meta << "max_nox_log " << max_nox_log << "\n";
        standardizer.write(meta);
        for (std::size_t h = 0; h < est_nets.size(); ++h) {
            est_nets[h].save((fs::path(dir) / ("est" + std::to_string(h) + ".txt")).string());
            param_nets[h].save(
                (fs::path(dir) / ("param" + std::to_string(h) + ".txt")).string());
        }
    }

    static Model load(const std::string& dir) {
        namespace fs = std::filesystem;
        std::ifstream meta(fs::path(dir) / "model.txt");
        if (!meta) throw DataError("cannot read model metadata in " + dir);
        std::string magic, key, modestr;
        int version = 0;
        std::size_t heads = 0;
        Model m;
        meta >> magic >> version;
        if (magic != "jpinn-model" || version != 1)
            throw DataError("bad model header in " + dir);
        meta >> key >> modestr;
        m.mode = mode_from_string(modestr);
        meta >> key >> heads;
        meta >> key >> m.log_floor;
        meta >> key >> m.max_no2_log;
        meta >> key >> m.max_nox_log;
        m.standardizer = data::Standardizer::read(meta);
        for (std::size_t h = 0; h < heads; ++h) {
            m.est_nets.push_back(net::Frnn::load(
                (fs::path(dir) / ("est" + std::to_string(h) + ".txt")).string()));
            m.param_nets.push_back(net::Frnn::load(
                (fs::path(dir) / ("param" + std::to_string(h) + ".txt")).string()));
        }
        return m;
    }
};

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<int> shuffled(int n, Rng& rng) {
    std::vector<int> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::shuffle(idx.begin(), idx.end(), rng);
    return idx;
}

// Batch k of a partition: `count` columns starting at an offset, cycling
// modulo the shuffled order so smaller partitions are reused across batches.
inline Mat gather_cols(const Mat& src, const std::vector<int>& order, int start,
                       int count) {
    Mat out(src.rows(), count);
    const int n = static_cast<int>(order.size());
    for (int k = 0; k < count; ++k) out.col(k) = src.col(order[(start + k) % n]);
    return out;
}

struct BatchPlan {
    std::vector<int> train, regular, site, predict;
};

struct StepResult {
    double loss = 0;
    std::array<double, 7> mean_sq{};
};

}  // namespace detail

// Semi-supervised minibatch trainer. Each step builds one tape holding the
// estimation and parameter forward passes over the concatenated physics batch
// (train + regular [+ site + predict] depending on policy), the log-space
// transport residuals via double reverse passes, and the supervised residuals
// over the training sub-batch; a single reverse pass then yields all
// parameter gradients for one Adam update.
class Trainer {
public:
    Trainer(const data::Dataset& ds, TrainConfig cfg) : cfg_(std::move(cfg)) {
        cfg_.validate();
        standardizer_ = data::Standardizer::fit(ds);
        md_ = build_matrix_data(ds, standardizer_, cfg_.log_floor);
        if (md_.train.n() == 0) throw ConfigError("training partition is empty");

        double max_no2 = 0, max_nox = 0;
        for (double v : md_.train.obs_no2) max_no2 = std::max(max_no2, v);
        for (double v : md_.train.obs_nox) max_nox = std::max(max_nox, v);
        max_no2_log_ = physics::to_log(cfg_.threshold_factor * max_no2, cfg_.log_floor);
        max_nox_log_ = physics::to_log(cfg_.threshold_factor * max_nox, cfg_.log_floor);
    }

    std::pair<Model, TrainHistory> run() {
        Model model;
        model.mode = cfg_.mode;
        model.standardizer = standardizer_;
        model.log_floor = cfg_.log_floor;
        model.max_no2_log = max_no2_log_;
        model.max_nox_log = max_nox_log_;

        if (cfg_.mode == Mode::separate) {
            TrainHistory h0 = train_head(model, 0);
            TrainHistory h1 = train_head(model, 1);
            // merge per-species histories into the canonical 7-slot layout
            TrainHistory merged(h0.size());
            for (std::size_t e = 0; e < h0.size(); ++e) {
                merged[e].loss = h0[e].loss + h1[e].loss;
                merged[e].mean_sq = h0[e].mean_sq;
                merged[e].mean_sq[1] = h1[e].mean_sq[0];
                merged[e].mean_sq[3] = h1[e].mean_sq[2];
                merged[e].mean_sq[6] = h1[e].mean_sq[5];
                merged[e].train = {h0[e].train.no2, h1[e].train.nox};
                merged[e].regular = {h0[e].regular.no2, h1[e].regular.nox};
                merged[e].site = {h0[e].site.no2, h1[e].site.nox};
            }
            return {std::move(model), std::move(merged)};
        }
        TrainHistory history = train_head(model, -1);
        return {std::move(model), std::move(history)};
    }

private:
    TrainConfig cfg_;
    data::Standardizer standardizer_;
    MatrixData md_;
    double max_no2_log_ = 0, max_nox_log_ = 0;

    bool physics_enabled(int species) const {
        if (cfg_.mode == Mode::baseline_no_physics) return false;
        if (species < 0) return cfg_.lambda[0] != 0.0 || cfg_.lambda[1] != 0.0;
        return cfg_.lambda[species] != 0.0;
    }
    bool include_z() const { return cfg_.mode != Mode::no_elevation_pde; }

    // species = -1 trains the joint two-species head; 0/1 one species each.
    // Per-species heads use residual slots 0/2/5 (pde/threshold/supervised);
    // run() maps the second head back to slots 1/3/6.
    TrainHistory train_head(Model& model, int species) {
        net::Topology est_topo = net::estimation_topology(md_.dim, cfg_.est_widths);
        net::Topology param_topo = net::parameter_topology(md_.dim, cfg_.param_widths);
        if (species >= 0) {
            est_topo.output_width = 1;
            param_topo.output_width = physics::ThetaLayout::per_species;
        }
        est_topo.attention = param_topo.attention = cfg_.attention;
        est_topo.weight_norm = param_topo.weight_norm = cfg_.weight_norm;

        const std::uint64_t hs = species < 0 ? 0 : static_cast<std::uint64_t>(species);
        net::Frnn est = net::Frnn::build(est_topo, derive_seed(cfg_.seed, 10 + hs));
        net::Frnn param = net::Frnn::build(param_topo, derive_seed(cfg_.seed, 20 + hs));

        AdamState adam;
        Rng shuffle_rng = make_rng(derive_seed(cfg_.seed, 30 + hs));
        TrainHistory history;
        history.reserve(cfg_.epochs);

        const int n_train = md_.train.n();
        const int batch = std::min(cfg_.batch_size, n_train);
        const int l_mini = (n_train + batch - 1) / batch;

        for (int epoch = 0; epoch < cfg_.epochs; ++epoch) {
            detail::BatchPlan plan;
            plan.train = detail::shuffled(n_train, shuffle_rng);
            plan.regular = detail::shuffled(md_.regular.n(), shuffle_rng);
            plan.site = detail::shuffled(md_.site.n(), shuffle_rng);
            plan.predict = detail::shuffled(md_.predict.n(), shuffle_rng);

            EpochRecord rec;
            double loss_sum = 0;
            std::array<double, 7> msq_sum{};
            for (int j = 0; j < l_mini; ++j) {
                detail::StepResult step;
                try {
                    step = optimize_step(est, param, species, plan, j, l_mini, batch, adam);
                } catch (const NumericError& e) {
                    throw NumericError("epoch " + std::to_string(epoch) + ", batch " +
                                       std::to_string(j) + ": " + e.what());
                }
                loss_sum += step.loss;
                for (int i = 0; i < 7; ++i) msq_sum[i] += step.mean_sq[i];
            }
            rec.loss = loss_sum / l_mini;
            for (int i = 0; i < 7; ++i) rec.mean_sq[i] = msq_sum[i] / l_mini;
            if (!std::isfinite(rec.loss))
                throw NumericError("epoch " + std::to_string(epoch) +
                                   ": loss became non-finite");
            rec.train = metrics_on(est, md_.train);
            rec.regular = metrics_on(est, md_.regular);
            rec.site = metrics_on(est, md_.site);
            history.push_back(rec);
        }

        model.est_nets.push_back(std::move(est));
        model.param_nets.push_back(std::move(param));
        return history;
    }

    detail::StepResult optimize_step(net::Frnn& est, net::Frnn& param, int species,
                                     const detail::BatchPlan& plan, int j, int l_mini,
                                     int batch, AdamState& adam) {
        auto cycle_batch = [&](int n) { return n == 0 ? 0 : (n + l_mini - 1) / l_mini; };
        const int b_tr = batch;
        const int b_re = cycle_batch(md_.regular.n());
        const bool extend = cfg_.policy == PhysicsPolicy::all_samples;
        const int b_si = extend ? cycle_batch(md_.site.n()) : 0;
        const int b_pr = extend ? cycle_batch(md_.predict.n()) : 0;

        std::vector<Mat> blocks;
        blocks.push_back(detail::gather_cols(md_.train.features, plan.train, j * b_tr, b_tr));
        if (b_re > 0)
            blocks.push_back(
                detail::gather_cols(md_.regular.features, plan.regular, j * b_re, b_re));
        if (b_si > 0)
            blocks.push_back(detail::gather_cols(md_.site.features, plan.site, j * b_si, b_si));
        if (b_pr > 0)
            blocks.push_back(
                detail::gather_cols(md_.predict.features, plan.predict, j * b_pr, b_pr));
        int nb = 0;
        for (const Mat& b : blocks) nb += static_cast<int>(b.cols());
        Mat xb(md_.dim, nb);
        int at = 0;
        for (const Mat& b : blocks) {
            xb.middleCols(at, b.cols()) = b;
            at += static_cast<int>(b.cols());
        }
        const Mat y_tr = detail::gather_cols(md_.train.targets, plan.train, j * b_tr, b_tr);

        Tape t;
        auto est_leaves = est.make_parameter_leaves(t);
        auto param_leaves = param.make_parameter_leaves(t);

        // coordinates as separate leaves so the reverse passes can target them
        Var tt = t.leaf(xb.row(0)), xx = t.leaf(xb.row(1)), yy = t.leaf(xb.row(2)),
            zz = t.leaf(xb.row(3));
        Var cov = t.leaf(xb.bottomRows(md_.dim - 4));
        Var input = t.concat_rows({tt, xx, yy, zz, cov});

        Var est_out = est.forward(t, est_leaves, input);

        // slot layout: the joint head uses the canonical e1..e7; a species
        // head puts its pde/threshold/supervised residuals in slots 0/2/5
        physics::ResidualBundle bundle;
        if (species < 0) {
            bundle.lambda = cfg_.lambda;
        } else {
            bundle.lambda = {cfg_.lambda[species], 0, cfg_.lambda[2 + species], 0, 0,
                             cfg_.lambda[5 + species], 0};
        }
        if (cfg_.mode == Mode::baseline_no_physics)
            for (int i = 0; i < 5; ++i) bundle.lambda[i] = 0.0;

        const bool want_pde = physics_enabled(species);
        Var theta_out;
        if (want_pde) theta_out = param.forward(t, param_leaves, input);

        auto build_pde = [&](Var yk, int theta_species) {
            physics::PdeDerivatives d;
            auto g = t.grad(yk, {tt, xx, yy, zz});
            d.dt = g[0];
            d.dx = g[1];
            d.dy = g[2];
            d.dz = g[3];
            d.dxx = t.grad1(d.dx, xx);
            d.dyy = t.grad1(d.dy, yy);
            d.dzz = include_z() ? t.grad1(d.dz, zz) : d.dz;
            auto th = physics::slice_theta(t, theta_out, theta_species);
            return physics::pde_residual(t, th, d, include_z());
        };

        const double max_log[2] = {max_no2_log_, max_nox_log_};
        Var y_row[2];
        for (int sp : {0, 1}) {
            if (species >= 0 && species != sp) continue;
            const int slot_pde = species < 0 ? sp : 0;
            const int slot_thr = species < 0 ? 2 + sp : 2;
            const int slot_sup = species < 0 ? 5 + sp : 5;
            Var y = species < 0 ? t.slice_rows(est_out, sp, 1) : est_out;
            y_row[sp] = y;
            if (want_pde && bundle.lambda[slot_pde] != 0.0)
                bundle.residuals[slot_pde] = build_pde(y, species < 0 ? sp : 0);
            if (bundle.lambda[slot_thr] != 0.0)
                bundle.residuals[slot_thr] = physics::threshold_residual(t, y, max_log[sp]);
            if (bundle.lambda[slot_sup] != 0.0)
                bundle.residuals[slot_sup] = physics::mse_residual(
                    t, t.constant(y_tr.row(sp)), t.slice_cols(y, 0, b_tr));
        }
        if (species < 0 && cfg_.mode != Mode::baseline_no_physics &&
            cfg_.lambda[4] != 0.0)
            bundle.residuals[4] = physics::ordering_residual(t, y_row[0], y_row[1]);

        Var loss = physics::total_loss(t, bundle);

        std::vector<Var> all_leaves = est_leaves;
        if (want_pde)
            all_leaves.insert(all_leaves.end(), param_leaves.begin(), param_leaves.end());
        auto grad_vars = t.grad(loss, all_leaves);
        std::vector<Mat> grads;
        grads.reserve(grad_vars.size());
        for (Var g : grad_vars) grads.push_back(t.value(g));

        std::vector<Mat*> params;
        for (Mat& p : est.parameters()) params.push_back(&p);
        if (want_pde)
            for (Mat& p : param.parameters()) params.push_back(&p);
        adam_step(params, grads, adam, cfg_);

        detail::StepResult res;
        res.loss = t.value(loss)(0, 0);
        res.mean_sq = bundle.mean_sq;
        return res;
    }

    // Back-transformed metrics on a partition; for a single-species head the
    // caller keeps only the matching species entry.
    SplitMetrics metrics_on(const net::Frnn& est, const Partition& p) const {
        SplitMetrics out;
        if (static_cast<int>(p.obs_no2.size()) < 2) {
            out.no2.r2_defined = out.nox.r2_defined = false;
            return out;
        }
        const Mat pred = est.forward_values(p.features);
        const bool two = pred.rows() == 2;
        std::vector<double> pred_no2, pred_nox;
        for (int i = 0; i < pred.cols(); ++i) {
            pred_no2.push_back(physics::from_log(pred(0, i), cfg_.log_floor));
            pred_nox.push_back(physics::from_log(pred(two ? 1 : 0, i), cfg_.log_floor));
        }
        out.no2 = data::compute_metrics(p.obs_no2, pred_no2);
        out.nox = data::compute_metrics(p.obs_nox, pred_nox);
        return out;
    }
};

inline std::pair<Model, TrainHistory> train_model(const data::Dataset& ds,
                                                  const TrainConfig& cfg) {
    Trainer tr(ds, cfg);
    return tr.run();
}

// Training-log CSV: epoch, loss, mean squared residuals, then R2/RMSE per
// split per species.
inline void save_history_csv(const TrainHistory& h, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write training log: " + path);
    out << std::setprecision(12);
    out << "epoch,loss";
    for (int i = 1; i <= 7; ++i) out << ",mean_e" << i << "_sq";
    for (const char* split : {"train", "regular", "site"})
        for (const char* species : {"no2", "nox"})
            out << ",r2_" << split << "_" << species << ",rmse_" << split << "_"
                << species;
    out << "\n";
    for (std::size_t e = 0; e < h.size(); ++e) {
        out << e << "," << h[e].loss;
        for (double m : h[e].mean_sq) out << "," << m;
        for (const SplitMetrics* sm : {&h[e].train, &h[e].regular, &h[e].site}) {
            out << "," << sm->no2.r2 << "," << sm->no2.rmse;
            out << "," << sm->nox.r2 << "," << sm->nox.rmse;
        }
        out << "\n";
    }
}

}  // namespace jpinn::train
