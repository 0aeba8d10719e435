#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "jpinn/ensemble.hpp"

using namespace jpinn;
using ensemble::bias_noise_weights;
using ensemble::EnsembleConfig;
using ensemble::make_bootstrap_splits;

namespace {

std::vector<std::string> site_names(int n) {
    std::vector<std::string> s;
    for (int i = 0; i < n; ++i) s.push_back("S" + std::to_string(100 + i));
    return s;
}

data::Dataset smooth_dataset(int n_sites, int n_weeks, std::uint64_t seed) {
    Rng rng = make_rng(seed);
    std::uniform_real_distribution<double> coord(0.0, 20.0);
    std::normal_distribution<double> noise(0.0, 0.2);
    data::Dataset ds;
    ds.covariate_names = {"c0", "c1"};
    for (int s = 0; s < n_sites; ++s) {
        const double x = coord(rng), y = coord(rng), z = 0.1 * coord(rng);
        for (int w = 0; w < n_weeks; ++w) {
            data::SampleRecord r;
            r.site_id = "S" + std::to_string(100 + s);
            r.week = w;
            r.x = x;
            r.y = y;
            r.z = z;
            const double base = 5.0 + 2.0 * std::sin(x / 5.0) + std::cos(y / 4.0) +
                                0.4 * std::sin(w / 6.0) + noise(rng);
            r.no2_ppb = std::max(0.2, base);
            r.nox_ppb = 1.8 * *r.no2_ppb + 0.5;
            r.covariates = {std::sin(x / 5.0), std::cos(y / 4.0)};
            ds.records.push_back(std::move(r));
        }
    }
    return ds;
}

}  // namespace

TEST_CASE("bootstrap splits: 100 sites give 63 train and a halved remainder") {
    auto plans = make_bootstrap_splits(site_names(100), 3, 5);
    REQUIRE(plans.size() == 3);
    for (const auto& p : plans) {
        CHECK(p.train_sites.size() == 63);
        const auto r = p.regular_sites.size(), s = p.site_test_sites.size();
        CHECK(r + s == 37);
        CHECK(std::max(r, s) - std::min(r, s) <= 1);
    }
}

TEST_CASE("bootstrap splits: partition property and determinism") {
    auto sites = site_names(17);
    auto a = make_bootstrap_splits(sites, 4, 9);
    auto b = make_bootstrap_splits(sites, 4, 9);
    for (std::size_t k = 0; k < a.size(); ++k) {
        CHECK(a[k].train_sites == b[k].train_sites);
        CHECK(a[k].regular_sites == b[k].regular_sites);
        CHECK(a[k].site_test_sites == b[k].site_test_sites);
        std::set<std::string> all;
        for (const auto& s : a[k].train_sites) all.insert(s);
        for (const auto& s : a[k].regular_sites) all.insert(s);
        for (const auto& s : a[k].site_test_sites) all.insert(s);
        CHECK(all.size() == sites.size());  // disjoint and complete
    }
    // different runs draw different splits (with overwhelming probability)
    CHECK(a[0].train_sites != a[1].train_sites);
}

TEST_CASE("bootstrap splits: too few sites or runs are rejected") {
    CHECK_THROWS_AS((void)make_bootstrap_splits(site_names(9), 3, 1), ConfigError);
    CHECK_THROWS_AS((void)make_bootstrap_splits(site_names(20), 1, 1), ConfigError);
}

TEST_CASE("ensemble mean basics") {
    CHECK(ensemble::ensemble_mean({{7, 7}, {7, 7}, {7, 7}}) ==
          std::vector<double>{7, 7});
    CHECK(ensemble::ensemble_mean({{4}, {8}}) == std::vector<double>{6});
    CHECK(ensemble::ensemble_mean({{3.5, 2.0}}) == std::vector<double>{3.5, 2.0});
    CHECK_THROWS_AS((void)ensemble::ensemble_mean({{1, 2}, {1}}), DataError);
}

TEST_CASE("variance samples are deviations from the mean") {
    auto mu = ensemble::ensemble_mean({{4.0}, {8.0}});
    auto vs = ensemble::variance_samples(mu, {{4.0}, {8.0}});
    REQUIRE(vs.size() == 1);
    CHECK(vs[0] == std::vector<double>{2.0, -2.0});

    // identical runs -> all zero; per-target pool mean is exactly zero
    auto vs2 = ensemble::variance_samples({5.0, 1.0}, {{5.0, 1.0}, {5.0, 1.0}});
    for (const auto& pool : vs2) {
        double sum = 0;
        for (double v : pool) {
            CHECK(v == 0.0);
            sum += v;
        }
        CHECK(sum == 0.0);
    }
}

TEST_CASE("0.632+ weights at the rate endpoints, exact to 1e-9") {
    // eps_te = eps_train -> rate 0 -> weight exactly 0.632
    auto w0 = bias_noise_weights(1.0, 1.0, 1.0, 5.0);
    CHECK(std::abs(w0.w_te - 0.632) < 1e-9);
    CHECK(std::abs(w0.w_site - 0.632) < 1e-9);
    CHECK(w0.r_te == 0.0);

    // eps_te = gamma -> rate 1 -> weight 0.632/0.816
    auto w1 = bias_noise_weights(1.0, 5.0, 5.0, 5.0);
    CHECK(w1.r_te == 1.0);
    CHECK(std::abs(w1.w_te - 0.632 / 0.816) < 1e-9);
    CHECK(std::abs(w1.w_te - 0.7745098039215687) < 1e-9);
}

TEST_CASE("0.632+ weights are nondecreasing in the overfitting rate") {
    double prev = 0;
    for (int k = 0; k <= 10; ++k) {
        const double eps_te = 1.0 + 0.4 * k;  // rate k/10
        auto w = bias_noise_weights(1.0, eps_te, 1.0, 5.0);
        CHECK(w.w_te >= prev);
        prev = w.w_te;
    }
    // beyond gamma the rate clamps to 1
    auto w = bias_noise_weights(1.0, 50.0, 1.0, 5.0);
    CHECK(w.r_te == 1.0);
}

TEST_CASE("0.632+ combination is applied literally; renormalization caps it") {
    auto w = bias_noise_weights(1.0, 3.0, 3.0, 5.0);
    CHECK(w.w_te + w.w_site > 1.0);  // literal weights may exceed 1 in sum
    const double expect = (1.0 - w.w_te - w.w_site) * 1.0 + w.w_te * 3.0 + w.w_site * 3.0;
    CHECK(w.combined == doctest::Approx(expect).epsilon(1e-12));

    auto wr = bias_noise_weights(1.0, 3.0, 3.0, 5.0, true);
    CHECK(wr.renormalized);
    CHECK(wr.w_te + wr.w_site == doctest::Approx(1.0));
}

TEST_CASE("degenerate no-information rate is rejected with diagnostics") {
    CHECK_THROWS_AS((void)bias_noise_weights(2.0, 3.0, 3.0, 2.0), NumericError);
}

TEST_CASE("no-information rate matches a brute-force double loop") {
    // hand instance: y = {1,2,3}, p = {2,2,5}
    // pairs: (1-2)^2*2 + (1-5)^2 + (2-2)^2*2 + (2-5)^2 + (3-2)^2*2 + (3-5)^2
    const double hand = (1 + 1 + 16 + 0 + 0 + 9 + 1 + 1 + 4) / 9.0;
    CHECK(ensemble::no_information_rate({1, 2, 3}, {2, 2, 5}) ==
          doctest::Approx(hand).epsilon(1e-12));

    Rng rng = make_rng(31);
    std::uniform_real_distribution<double> u(-5.0, 5.0);
    for (int rep = 0; rep < 20; ++rep) {
        std::uniform_int_distribution<int> sz(1, 10);
        std::vector<double> y(sz(rng)), p(sz(rng));
        for (double& v : y) v = u(rng);
        for (double& v : p) v = u(rng);
        double brute = 0;
        for (double yi : y)
            for (double pj : p) brute += (yi - pj) * (yi - pj);
        brute /= static_cast<double>(y.size() * p.size());
        CHECK(ensemble::no_information_rate(y, p) ==
              doctest::Approx(brute).epsilon(1e-12));
    }
}

TEST_CASE("bias/noise pool cycles shorter pools and applies the weights") {
    auto w = bias_noise_weights(1.0, 1.0, 1.0, 5.0);  // weights 0.632 each
    auto pool = ensemble::bias_noise_pool(w, {1.0}, {2.0, 4.0}, {3.0, 3.0, 3.0});
    REQUIRE(pool.size() == 3);
    const double wtr = 1.0 - w.w_te - w.w_site;
    CHECK(pool[0] == doctest::Approx(wtr * 1 + w.w_te * 2 + w.w_site * 3));
    CHECK(pool[1] == doctest::Approx(wtr * 1 + w.w_te * 4 + w.w_site * 3));
    CHECK(pool[2] == doctest::Approx(wtr * 1 + w.w_te * 2 + w.w_site * 3));
}

TEST_CASE("intervals: degenerate pools collapse onto the mean") {
    std::vector<double> mu = {1.0, 2.0, 3.0, 4.0};
    std::vector<std::vector<double>> vs(4, std::vector<double>{0.0, 0.0});
    std::vector<double> bias(8, 0.0);
    std::vector<int> bias_levels = {0, 1, 2, 3, 4, 5, 6, 7};
    auto res = ensemble::interval_estimate(mu, vs, bias, bias_levels);
    for (std::size_t i = 0; i < mu.size(); ++i) {
        CHECK(res.lower[i] == mu[i]);
        CHECK(res.upper[i] == mu[i]);
    }
}

TEST_CASE("intervals: symmetric pools bracket the mean symmetrically") {
    std::vector<double> mu(16);
    for (std::size_t i = 0; i < mu.size(); ++i) mu[i] = static_cast<double>(i);
    std::vector<std::vector<double>> vs(16, std::vector<double>{-1.0, 1.0});
    std::vector<double> bias;
    std::vector<int> bias_levels;
    for (int l = 0; l < 8; ++l)
        for (double e : {-2.0, -1.0, 0.0, 1.0, 2.0}) {
            bias.push_back(e);
            bias_levels.push_back(l);
        }
    auto res = ensemble::interval_estimate(mu, vs, bias, bias_levels, 8, 0.1);
    for (std::size_t i = 0; i < mu.size(); ++i) {
        CHECK(res.lower[i] <= mu[i]);
        CHECK(res.upper[i] >= mu[i]);
        CHECK(std::abs((mu[i] - res.lower[i]) - (res.upper[i] - mu[i])) < 1e-9);
        CHECK(res.fallback_level[i] == -1);
    }
}

TEST_CASE("intervals: empty level falls back to an adjacent one and is flagged") {
    std::vector<double> mu = {1.0, 2.0, 3.0, 4.0};
    std::vector<std::vector<double>> vs(4, std::vector<double>{-0.5, 0.5});
    // bias samples only in level 0
    std::vector<double> bias = {-1.0, 1.0};
    std::vector<int> bias_levels = {0, 0};
    auto res = ensemble::interval_estimate(mu, vs, bias, bias_levels, 8);
    bool any_fallback = false;
    for (std::size_t i = 0; i < mu.size(); ++i) {
        CHECK(res.lower[i] < res.upper[i]);
        if (res.fallback_level[i] >= 0) any_fallback = true;
    }
    CHECK(any_fallback);
}

TEST_CASE("level bins are octiles covering every prediction exactly once") {
    Rng rng = make_rng(7);
    std::uniform_real_distribution<double> u(0.0, 100.0);
    std::vector<double> mu(160);
    for (double& v : mu) v = u(rng);
    auto level = ensemble::level_bins(mu, 8);
    std::array<int, 8> count{};
    for (int l : level) {
        REQUIRE(l >= 0);
        REQUIRE(l < 8);
        ++count[l];
    }
    for (int c : count) CHECK(c == 20);  // equal-count bins at n divisible by 8
}

TEST_CASE("end-to-end ensemble: deterministic summary and valid intervals") {
    data::Dataset ds = smooth_dataset(12, 6, 41);
    EnsembleConfig cfg;
    cfg.runs = 2;
    cfg.seed = 43;
    cfg.train.est_widths = {8, 4};
    cfg.train.param_widths = {8, 4};
    cfg.train.epochs = 2;
    cfg.train.batch_size = 32;

    auto render = [&] {
        auto res = ensemble::run_ensemble(ds, cfg);
        const std::string path = "ensemble_summary_test.csv";
        ensemble::save_summary_csv(ds, res, path);
        std::ifstream in(path);
        std::stringstream buf;
        buf << in.rdbuf();
        std::remove(path.c_str());
        return std::pair{res, buf.str()};
    };
    auto [r1, csv1] = render();
    auto [r2, csv2] = render();
    CHECK(csv1 == csv2);

    for (int sp = 0; sp < 2; ++sp) {
        const auto& se = r1.species[sp];
        REQUIRE(se.mu.size() == ds.records.size());
        for (std::size_t i = 0; i < se.mu.size(); ++i) {
            CHECK(std::isfinite(se.mu[i]));
            CHECK(se.intervals.lower[i] <= se.intervals.upper[i]);
        }
        CHECK(se.weights.w_te >= 0.632 - 1e-12);
        CHECK(se.weights.w_site >= 0.632 - 1e-12);
    }

    auto rep = ensemble::decomposition_report(r1);
    for (int sp = 0; sp < 2; ++sp)
        CHECK(rep.variance_share[sp] + rep.bias_share[sp] ==
              doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("decomposition: identical runs give zero variance share") {
    ensemble::EnsembleResult res;
    for (int sp = 0; sp < 2; ++sp) {
        res.species[sp].mu = {2.0, 3.0};
        res.species[sp].var_samples = {{0.0, 0.0}, {0.0, 0.0}};
        res.species[sp].weights.combined = 1.0;
    }
    auto rep = ensemble::decomposition_report(res);
    for (int sp = 0; sp < 2; ++sp) {
        CHECK(rep.variance_share[sp] == 0.0);
        CHECK(rep.bias_share[sp] == 1.0);
    }
}
