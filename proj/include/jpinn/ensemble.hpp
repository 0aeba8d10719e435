#pragma once

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "jpinn/data.hpp"
#include "jpinn/train.hpp"

namespace jpinn::ensemble {

// ---------------------------------------------------------------------------
// Site-level bootstrap splits
// ---------------------------------------------------------------------------

struct SplitPlan {
    int run_id = 0;
    std::uint64_t seed = 0;
    std::vector<std::string> train_sites, regular_sites, site_test_sites;
};

// Each run draws a fresh split of the site list: floor(0.632 * S) training
// sites, the remainder halved into regular-test and site-test sites.
inline std::vector<SplitPlan> make_bootstrap_splits(std::vector<std::string> sites,
                                                    int runs, std::uint64_t seed) {
    const int s = static_cast<int>(sites.size());
    if (s < 10) throw ConfigError("bootstrap: need at least 10 sites, have " +
                                  std::to_string(s));
    if (runs < 2) throw ConfigError("bootstrap: need at least 2 runs");
    std::sort(sites.begin(), sites.end());  // input-order independence
    const int n_train = static_cast<int>(std::floor(0.632 * s));
    const int rest = s - n_train;
    const int n_regular = rest / 2;
    if (n_train == 0 || n_regular == 0 || rest - n_regular == 0)
        throw ConfigError("bootstrap: too few sites to form nonempty partitions");

    std::vector<SplitPlan> plans;
    plans.reserve(runs);
    for (int b = 0; b < runs; ++b) {
        SplitPlan p;
        p.run_id = b;
        p.seed = derive_seed(seed, 0xb007 + static_cast<std::uint64_t>(b));
        std::vector<std::string> order = sites;
        Rng rng = make_rng(p.seed);
        std::shuffle(order.begin(), order.end(), rng);
        p.train_sites.assign(order.begin(), order.begin() + n_train);
        p.regular_sites.assign(order.begin() + n_train, order.begin() + n_train + n_regular);
        p.site_test_sites.assign(order.begin() + n_train + n_regular, order.end());
        plans.push_back(std::move(p));
    }
    return plans;
}

// Tags every record of a dataset by its site's role in the plan. Records
// without observations keep the predict tag.
inline void apply_split(data::Dataset& ds, const SplitPlan& plan) {
    auto contains = [](const std::vector<std::string>& v, const std::string& s) {
        return std::find(v.begin(), v.end(), s) != v.end();
    };
    for (auto& r : ds.records) {
        if (!r.observed()) {
            r.split = data::Split::predict;
            continue;
        }
        if (contains(plan.train_sites, r.site_id))
            r.split = data::Split::train;
        else if (contains(plan.regular_sites, r.site_id))
            r.split = data::Split::regular_test;
        else if (contains(plan.site_test_sites, r.site_id))
            r.split = data::Split::site_test;
        else
            throw DataError("apply_split: site " + r.site_id + " missing from plan");
    }
}

// ---------------------------------------------------------------------------
// 0.632+ arithmetic
// ---------------------------------------------------------------------------

// mu[i] = mean over runs of predictions[b][i]
inline std::vector<double> ensemble_mean(const std::vector<std::vector<double>>& predictions) {
    if (predictions.empty()) throw DataError("ensemble_mean: no runs");
    const std::size_t n = predictions.front().size();
    std::vector<double> mu(n, 0.0);
    for (const auto& run : predictions) {
        if (run.size() != n) throw DataError("ensemble_mean: misaligned targets");
        for (std::size_t i = 0; i < n; ++i) mu[i] += run[i];
    }
    for (double& m : mu) m /= static_cast<double>(predictions.size());
    return mu;
}

// deviation samples mu - yhat^b, per target: out[i] holds B values
inline std::vector<std::vector<double>> variance_samples(
    const std::vector<double>& mu, const std::vector<std::vector<double>>& predictions) {
    std::vector<std::vector<double>> out(mu.size());
    for (std::size_t i = 0; i < mu.size(); ++i) out[i].reserve(predictions.size());
    for (const auto& run : predictions) {
        if (run.size() != mu.size()) throw DataError("variance_samples: misaligned targets");
        for (std::size_t i = 0; i < mu.size(); ++i) out[i].push_back(mu[i] - run[i]);
    }
    return out;
}

// no-information rate: every observation scored against every prediction
inline double no_information_rate(const std::vector<double>& observed,
                                  const std::vector<double>& predicted) {
    if (observed.empty() || predicted.empty())
        throw DataError("no_information_rate: empty inputs");
    double total = 0;
    for (double y : observed)
        for (double p : predicted) total += (y - p) * (y - p);
    return total / (static_cast<double>(observed.size()) *
                    static_cast<double>(predicted.size()));
}

inline double mean_sq(const std::vector<double>& v) {
    if (v.empty()) throw DataError("mean_sq: empty pool");
    double s = 0;
    for (double x : v) s += x * x;
    return s / static_cast<double>(v.size());
}

struct ErrorWeights {
    double eps_train = 0, eps_te = 0, eps_site = 0;
    double gamma = 0;
    double r_te = 0, r_site = 0;
    double w_te = 0, w_site = 0;
    double combined = 0;  // the weighted generalization-error estimate
    bool renormalized = false;
};

// Weighted 0.632+ combination of training, regular-test and site-test errors.
// The literal combination can give the training term a negative coefficient
// when w_te + w_site > 1; `renormalize` rescales the two test weights to sum
// to at most 1 (off by default, the literal form is the reference).
inline ErrorWeights bias_noise_weights(double eps_train, double eps_te,
                                       double eps_site, double gamma,
                                       bool renormalize = false) {
    ErrorWeights w;
    w.eps_train = eps_train;
    w.eps_te = eps_te;
    w.eps_site = eps_site;
    w.gamma = gamma;
    if (gamma == eps_train)
        throw NumericError("bias_noise_weights: no-information rate equals training "
                           "error (gamma = " + std::to_string(gamma) +
                           "); relative overfitting rate undefined");
    auto rate = [&](double eps) {
        return std::clamp((eps - eps_train) / (gamma - eps_train), 0.0, 1.0);
    };
    w.r_te = rate(eps_te);
    w.r_site = rate(eps_site);
    w.w_te = 0.632 / (1.0 - 0.184 * w.r_te);
    w.w_site = 0.632 / (1.0 - 0.184 * w.r_site);
    if (renormalize && w.w_te + w.w_site > 1.0) {
        const double s = 1.0 / (w.w_te + w.w_site);
        w.w_te *= s;
        w.w_site *= s;
        w.renormalized = true;
    }
    w.combined = (1.0 - w.w_te - w.w_site) * eps_train + w.w_te * eps_te +
                 w.w_site * eps_site;
    return w;
}

// Weighted bias/noise sample pool: aligned draws from the three signed error
// pools, combined with the 0.632+ weights. Shorter pools cycle modulo their
// length.
inline std::vector<double> bias_noise_pool(const ErrorWeights& w,
                                           const std::vector<double>& train_err,
                                           const std::vector<double>& regular_err,
                                           const std::vector<double>& site_err) {
    if (train_err.empty() || regular_err.empty() || site_err.empty())
        throw DataError("bias_noise_pool: empty error pool");
    const std::size_t n =
        std::max({train_err.size(), regular_err.size(), site_err.size()});
    std::vector<double> pool(n);
    for (std::size_t i = 0; i < n; ++i)
        pool[i] = (1.0 - w.w_te - w.w_site) * train_err[i % train_err.size()] +
                  w.w_te * regular_err[i % regular_err.size()] +
                  w.w_site * site_err[i % site_err.size()];
    return pool;
}

// ---------------------------------------------------------------------------
// Level-stratified percentile intervals
// ---------------------------------------------------------------------------

// linear-interpolation percentile over a copy of the pool, q in [0,1]
inline double percentile(std::vector<double> pool, double q) {
    if (pool.empty()) throw DataError("percentile: empty pool");
    std::sort(pool.begin(), pool.end());
    const double pos = q * static_cast<double>(pool.size() - 1);
    const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, pool.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return pool[lo] * (1.0 - frac) + pool[hi] * frac;
}

// Octile (equal-count quantile) level of each prediction: 0..levels-1.
inline std::vector<int> level_bins(const std::vector<double>& mu, int levels = 8) {
    std::vector<std::size_t> order(mu.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return mu[a] < mu[b]; });
    std::vector<int> level(mu.size(), 0);
    for (std::size_t rank = 0; rank < order.size(); ++rank)
        level[order[rank]] = static_cast<int>(
            std::min<std::size_t>(levels - 1, rank * levels / order.size()));
    return level;
}

struct IntervalResult {
    std::vector<double> lower, upper;
    std::vector<int> level;
    std::vector<int> fallback_level;  // -1 where the own level had samples
};

// Deterministic even-stride subsample used to bound the cross-set size.
inline std::vector<double> strided_cap(const std::vector<double>& v, std::size_t cap) {
    if (v.size() <= cap) return v;
    std::vector<double> out;
    out.reserve(cap);
    for (std::size_t k = 0; k < cap; ++k) out.push_back(v[k * v.size() / cap]);
    return out;
}

// Per-target percentile intervals around mu. Variance samples are grouped by
// the level of their target; the bias/noise pool is grouped by the level
// attached to each draw (bias_levels, aligned with bias_pool). E_l is the
// cross set {v + e} over the two level-restricted pools; the interval offsets
// mu by the alpha/2 and 1-alpha/2 percentiles of E_l.
inline IntervalResult interval_estimate(const std::vector<double>& mu,
                                        const std::vector<std::vector<double>>& var_samples,
                                        const std::vector<double>& bias_pool,
                                        const std::vector<int>& bias_levels,
                                        int levels = 8, double alpha = 0.05,
                                        std::size_t pool_cap = 1024) {
    if (alpha <= 0.0 || alpha >= 1.0)
        throw ConfigError("interval_estimate: alpha must be in (0,1)");
    if (bias_pool.size() != bias_levels.size())
        throw DataError("interval_estimate: bias pool/levels misaligned");
    if (var_samples.size() != mu.size())
        throw DataError("interval_estimate: variance samples misaligned");

    IntervalResult res;
    res.level = level_bins(mu, levels);
    res.lower.resize(mu.size());
    res.upper.resize(mu.size());
    res.fallback_level.assign(mu.size(), -1);

    std::vector<std::vector<double>> var_by_level(levels), bias_by_level(levels);
    for (std::size_t i = 0; i < mu.size(); ++i)
        for (double v : var_samples[i]) var_by_level[res.level[i]].push_back(v);
    for (std::size_t i = 0; i < bias_pool.size(); ++i) {
        const int l = std::clamp(bias_levels[i], 0, levels - 1);
        bias_by_level[l].push_back(bias_pool[i]);
    }

    // per level: nearest populated fallback, then the cross-set percentiles
    std::vector<double> lo_of(levels), hi_of(levels);
    std::vector<int> used_level(levels);
    for (int l = 0; l < levels; ++l) {
        int use = -1;
        for (int d = 0; d < levels && use < 0; ++d) {
            for (int cand : {l - d, l + d}) {
                if (cand < 0 || cand >= levels) continue;
                if (!var_by_level[cand].empty() && !bias_by_level[cand].empty()) {
                    use = cand;
                    break;
                }
            }
        }
        if (use < 0) throw DataError("interval_estimate: all level pools empty");
        used_level[l] = use;
        const auto vs = strided_cap(var_by_level[use], pool_cap);
        const auto bs = strided_cap(bias_by_level[use], pool_cap);
        std::vector<double> cross;
        cross.reserve(vs.size() * bs.size());
        for (double v : vs)
            for (double e : bs) cross.push_back(v + e);
        lo_of[l] = percentile(cross, alpha / 2.0);
        hi_of[l] = percentile(cross, 1.0 - alpha / 2.0);
    }

    for (std::size_t i = 0; i < mu.size(); ++i) {
        const int l = res.level[i];
        res.lower[i] = mu[i] + lo_of[l];
        res.upper[i] = mu[i] + hi_of[l];
        if (used_level[l] != l) res.fallback_level[i] = used_level[l];
    }
    return res;
}

// ---------------------------------------------------------------------------
// Full ensemble run
// ---------------------------------------------------------------------------

struct EnsembleConfig {
    int runs = 25;
    std::uint64_t seed = 0;
    double alpha = 0.05;
    int levels = 8;
    bool renormalize_weights = false;
    int jobs = 1;  // worker threads for the independent bootstrap members
    train::TrainConfig train;
};

struct SpeciesEnsemble {
    std::vector<double> mu;                        // per record, ppb
    std::vector<std::vector<double>> var_samples;  // per record, B deviations
    ErrorWeights weights;
    IntervalResult intervals;
};

struct EnsembleResult {
    std::vector<SplitPlan> plans;
    // per-run per-record ppb predictions, [runs][record]
    std::vector<std::vector<std::pair<double, double>>> run_predictions;
    std::array<SpeciesEnsemble, 2> species;  // 0 = no2, 1 = nox
};

// Trains `runs` bootstrap members, each on its own site-level split, and
// aggregates means, 0.632+ weights and level-stratified intervals per
// species. Fully deterministic for a fixed config.
inline EnsembleResult run_ensemble(const data::Dataset& ds, const EnsembleConfig& cfg) {
    EnsembleResult res;
    res.plans = make_bootstrap_splits(ds.site_ids(), cfg.runs, cfg.seed);

    const std::size_t n = ds.records.size();
    std::array<std::vector<std::vector<double>>, 2> preds;  // [species][run][record]
    // signed ppb errors y - yhat, pooled across runs, with the level of the
    // record's ensemble mean attached afterwards
    std::array<std::array<std::vector<double>, 3>, 2> err_pools;   // [species][split]
    std::array<std::array<std::vector<std::size_t>, 3>, 2> err_idx;

    // members are independent: fan out across workers, aggregate in run order
    std::vector<std::vector<std::pair<double, double>>> member_preds(cfg.runs);
    {
        auto run_member = [&](int b) {
            data::Dataset run_ds = ds;
            apply_split(run_ds, res.plans[b]);
            train::TrainConfig tc = cfg.train;
            tc.seed = derive_seed(cfg.seed, 0x7a1e + static_cast<std::uint64_t>(b));
            auto [model, history] = train::train_model(run_ds, tc);
            member_preds[b] = model.predict(run_ds);
        };
        const int jobs = std::max(1, cfg.jobs);
        if (jobs == 1) {
            for (int b = 0; b < cfg.runs; ++b) run_member(b);
        } else {
            std::atomic<int> next{0};
            std::vector<std::thread> workers;
            std::mutex err_mu;
            std::exception_ptr first_error;
            for (int w = 0; w < jobs; ++w)
                workers.emplace_back([&] {
                    for (int b = next.fetch_add(1); b < cfg.runs; b = next.fetch_add(1)) {
                        try {
                            run_member(b);
                        } catch (...) {
                            std::lock_guard<std::mutex> lock(err_mu);
                            if (!first_error) first_error = std::current_exception();
                        }
                    }
                });
            for (auto& t : workers) t.join();
            if (first_error) std::rethrow_exception(first_error);
        }
    }

    for (int b = 0; b < cfg.runs; ++b) {
        data::Dataset run_ds = ds;
        apply_split(run_ds, res.plans[b]);
        const auto& p = member_preds[b];
        res.run_predictions.push_back(p);
        for (int sp = 0; sp < 2; ++sp) {
            std::vector<double> run_pred(n);
            for (std::size_t i = 0; i < n; ++i)
                run_pred[i] = sp == 0 ? p[i].first : p[i].second;
            preds[sp].push_back(std::move(run_pred));
        }
        for (std::size_t i = 0; i < n; ++i) {
            const auto& r = run_ds.records[i];
            if (!r.observed()) continue;
            int slot;
            switch (r.split) {
                case data::Split::train: slot = 0; break;
                case data::Split::regular_test: slot = 1; break;
                case data::Split::site_test: slot = 2; break;
                default: continue;
            }
            err_pools[0][slot].push_back(*r.no2_ppb - p[i].first);
            err_idx[0][slot].push_back(i);
            err_pools[1][slot].push_back(*r.nox_ppb - p[i].second);
            err_idx[1][slot].push_back(i);
        }
    }

    for (int sp = 0; sp < 2; ++sp) {
        SpeciesEnsemble& se = res.species[sp];
        se.mu = ensemble_mean(preds[sp]);
        se.var_samples = variance_samples(se.mu, preds[sp]);

        std::vector<double> obs, mu_obs;
        for (std::size_t i = 0; i < n; ++i) {
            const auto& r = ds.records[i];
            if (!r.observed()) continue;
            obs.push_back(sp == 0 ? *r.no2_ppb : *r.nox_ppb);
            mu_obs.push_back(se.mu[i]);
        }
        const double gamma = no_information_rate(obs, mu_obs);
        se.weights = bias_noise_weights(mean_sq(err_pools[sp][0]),
                                        mean_sq(err_pools[sp][1]),
                                        mean_sq(err_pools[sp][2]), gamma,
                                        cfg.renormalize_weights);

        // level of each bias draw = level of its record's ensemble mean; the
        // three pools are combined per aligned draw, so we tag the pool entry
        // with the level of the longest pool's record
        const auto level = level_bins(se.mu, cfg.levels);
        const auto pool = bias_noise_pool(se.weights, err_pools[sp][0],
                                          err_pools[sp][1], err_pools[sp][2]);
        const auto& longest =
            err_idx[sp][0].size() >= err_idx[sp][1].size()
                ? (err_idx[sp][0].size() >= err_idx[sp][2].size() ? err_idx[sp][0]
                                                                  : err_idx[sp][2])
                : (err_idx[sp][1].size() >= err_idx[sp][2].size() ? err_idx[sp][1]
                                                                  : err_idx[sp][2]);
        std::vector<int> pool_levels(pool.size());
        for (std::size_t i = 0; i < pool.size(); ++i)
            pool_levels[i] = level[longest[i % longest.size()]];
        se.intervals = interval_estimate(se.mu, se.var_samples, pool, pool_levels,
                                         cfg.levels, cfg.alpha);
    }
    return res;
}

// Fraction of variance vs bias+noise in the combined generalization-error
// estimate, per species; the two shares sum to 1.
struct DecompositionReport {
    std::array<double, 2> variance_share{}, bias_share{};
};

inline DecompositionReport decomposition_report(const EnsembleResult& res) {
    DecompositionReport rep;
    for (int sp = 0; sp < 2; ++sp) {
        const auto& se = res.species[sp];
        double var_ms = 0;
        std::size_t cnt = 0;
        for (const auto& samples : se.var_samples)
            for (double v : samples) {
                var_ms += v * v;
                ++cnt;
            }
        var_ms = cnt ? var_ms / static_cast<double>(cnt) : 0.0;
        const double total = se.weights.combined;
        const double rest = std::max(0.0, total - var_ms);
        if (var_ms + rest <= 0.0) {
            rep.variance_share[sp] = 0.0;
            rep.bias_share[sp] = 1.0;
        } else {
            rep.variance_share[sp] = var_ms / (var_ms + rest);
            rep.bias_share[sp] = rest / (var_ms + rest);
        }
    }
    return rep;
}

// ---------------------------------------------------------------------------
// CSV output
// ---------------------------------------------------------------------------

inline void save_run_predictions_csv(const data::Dataset& ds,
                                     const EnsembleResult& res,
                                     const std::string& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    for (std::size_t b = 0; b < res.run_predictions.size(); ++b) {
        std::ofstream out(fs::path(dir) / ("run" + std::to_string(b) + ".csv"));
        if (!out) throw DataError("cannot write run predictions in " + dir);
        out << std::setprecision(17);
        out << "site_id,week,pred_no2_ppb,pred_nox_ppb\n";
        for (std::size_t i = 0; i < ds.records.size(); ++i)
            out << ds.records[i].site_id << "," << ds.records[i].week << ","
                << res.run_predictions[b][i].first << ","
                << res.run_predictions[b][i].second << "\n";
    }
}

inline void save_summary_csv(const data::Dataset& ds, const EnsembleResult& res,
                             const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write ensemble summary: " + path);
    const auto rep = decomposition_report(res);
    out << std::setprecision(17);
    out << "site_id,week";
    for (const char* sp : {"no2", "nox"})
        out << ",mu_" << sp << ",lower_" << sp << ",upper_" << sp << ",level_" << sp
            << ",fallback_" << sp;
    out << ",variance_share_no2,variance_share_nox\n";
    for (std::size_t i = 0; i < ds.records.size(); ++i) {
        out << ds.records[i].site_id << "," << ds.records[i].week;
        for (int sp = 0; sp < 2; ++sp) {
            const auto& se = res.species[sp];
            out << "," << se.mu[i] << "," << se.intervals.lower[i] << ","
                << se.intervals.upper[i] << "," << se.intervals.level[i] << ","
                << se.intervals.fallback_level[i];
        }
        out << "," << rep.variance_share[0] << "," << rep.variance_share[1] << "\n";
    }
}

}  // namespace jpinn::ensemble
