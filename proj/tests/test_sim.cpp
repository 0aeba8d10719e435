#include <doctest.h>

#include <cmath>
#include <sstream>

#include "jpinn/sim.hpp"

using namespace jpinn;
using sim::Boundary;
using sim::FieldSet;
using sim::Grid;
using sim::GridSpec;
using sim::Simulator;
using sim::SpeciesState;

namespace {

GridSpec small_grid(Boundary b = Boundary::zero_flux) {
    GridSpec g;
    g.nx = 32;
    g.ny = 32;
    g.dx = 1.0;
    g.dy = 1.0;
    g.dt = 0.1;
    g.boundary = b;
    return g;
}

Grid gaussian_bump(const GridSpec& g, double cx, double cy, double sigma,
                   double amp = 10.0, double background = 1.0) {
    Grid c(g.nx, g.ny);
    for (int i = 0; i < g.nx; ++i)
        for (int j = 0; j < g.ny; ++j) {
            const double dx = g.cell_x(i) - cx, dy = g.cell_y(j) - cy;
            c(i, j) = background + amp * std::exp(-(dx * dx + dy * dy) / (2 * sigma * sigma));
        }
    return c;
}

double x_variance(const GridSpec& g, const Grid& c) {
    double mass = 0, mean = 0;
    for (int i = 0; i < g.nx; ++i)
        for (int j = 0; j < g.ny; ++j) {
            mass += c(i, j);
            mean += g.cell_x(i) * c(i, j);
        }
    mean /= mass;
    double var = 0;
    for (int i = 0; i < g.nx; ++i)
        for (int j = 0; j < g.ny; ++j)
            var += (g.cell_x(i) - mean) * (g.cell_x(i) - mean) * c(i, j);
    return var / mass;
}

}  // namespace

TEST_CASE("no transport, no source: field unchanged") {
    FieldSet f;
    Simulator s(small_grid(), f);
    SpeciesState st{gaussian_bump(s.grid(), 16, 16, 3), gaussian_bump(s.grid(), 16, 16, 3) * 2};
    Grid before = st.no2;
    s.run(st, 100);
    CHECK((st.no2 - before).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("closed boundaries conserve mass to roundoff over 1000 steps") {
    FieldSet f;
    f.vx = [](double, double y) { return 0.4 * std::sin(y / 5.0); };
    f.vy = [](double x, double) { return -0.3 * std::cos(x / 4.0); };
    f.p = [](double, double) { return 0.3; };
    Simulator s(small_grid(Boundary::zero_flux), f);
    SpeciesState st{gaussian_bump(s.grid(), 12, 20, 4), gaussian_bump(s.grid(), 12, 20, 4) * 2};
    const double m0 = s.total_mass(st.no2);
    s.run(st, 1000);
    CHECK(std::abs(s.total_mass(st.no2) - m0) / m0 < 1e-10);
}

TEST_CASE("periodic boundaries also conserve mass") {
    FieldSet f;
    f.vx = [](double, double) { return 0.7; };
    f.vy = [](double, double) { return -0.5; };
    f.p = [](double, double) { return 0.2; };
    Simulator s(small_grid(Boundary::periodic), f);
    SpeciesState st{gaussian_bump(s.grid(), 16, 16, 3), gaussian_bump(s.grid(), 16, 16, 3) * 2};
    const double m0 = s.total_mass(st.nox);
    s.run(st, 500);
    CHECK(std::abs(s.total_mass(st.nox) - m0) / m0 < 1e-10);
}

TEST_CASE("pure diffusion spreads a Gaussian as 2pt within 5%") {
    const double p = 0.3;
    GridSpec g = small_grid(Boundary::periodic);
    g.nx = 64;
    g.ny = 64;
    FieldSet f;
    f.p = [=](double, double) { return p; };
    Simulator s(g, f);
    SpeciesState st{gaussian_bump(g, 32, 32, 2.0, 10.0, 0.0),
                    gaussian_bump(g, 32, 32, 2.0, 10.0, 0.0)};
    const double v0 = x_variance(g, st.no2);
    const int steps = 100;
    s.run(st, steps);
    const double t = steps * g.dt;
    const double growth = x_variance(g, st.no2) - v0;
    CHECK(growth == doctest::Approx(2 * p * t).epsilon(0.05));
}

TEST_CASE("nonnegativity preserved under the CFL constraint") {
    FieldSet f;
    f.vx = [](double, double) { return 0.9; };
    f.vy = [](double, double) { return 0.9; };
    f.p = [](double, double) { return 0.4; };
    Simulator s(small_grid(Boundary::periodic), f);
    SpeciesState st{gaussian_bump(s.grid(), 8, 8, 2, 50.0, 0.0),
                    gaussian_bump(s.grid(), 8, 8, 2, 50.0, 0.0)};
    s.run(st, 400);
    CHECK(st.no2.minCoeff() >= 0.0);
}

TEST_CASE("species ordering preserved pointwise with ordered sources") {
    FieldSet f;
    f.vx = [](double, double y) { return 0.5 * std::sin(y / 3.0); };
    f.p = [](double, double) { return 0.25; };
    f.rho_no2 = [](double x, double y, double) {
        return (x > 10 && x < 14 && y > 10 && y < 14) ? 1.0 : 0.0;
    };
    f.rho_nox = [](double x, double y, double) {
        return (x > 10 && x < 14 && y > 10 && y < 14) ? 2.5 : 0.1;
    };
    Simulator s(small_grid(Boundary::periodic), f);
    SpeciesState st{gaussian_bump(s.grid(), 16, 16, 4, 5.0), gaussian_bump(s.grid(), 16, 16, 4, 8.0)};
    for (int k = 0; k < 20; ++k) {
        s.run(st, 50, k * 5.0);
        CHECK((st.nox - st.no2).minCoeff() >= -1e-12);
    }
}

TEST_CASE("grid refinement reduces the error against the analytic Gaussian") {
    const double p = 0.25, t_end = 4.0, sigma0 = 3.0;
    auto error_at = [&](int n, double h, double dt) {
        GridSpec g;
        g.nx = n; g.ny = n; g.dx = h; g.dy = h; g.dt = dt;
        g.boundary = Boundary::periodic;
        FieldSet f;
        f.p = [=](double, double) { return p; };
        Simulator s(g, f);
        const double c = n * h / 2.0;
        SpeciesState st{gaussian_bump(g, c, c, sigma0, 10.0, 0.0),
                        gaussian_bump(g, c, c, sigma0, 10.0, 0.0)};
        s.run(st, static_cast<int>(t_end / dt));
        // analytic spreading: same mass, sigma^2 -> sigma0^2 + 2 p t
        const double s2 = sigma0 * sigma0 + 2 * p * t_end;
        const double amp = 10.0 * sigma0 * sigma0 / s2;
        double err = 0;
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j) {
                const double dx = g.cell_x(i) - c, dy = g.cell_y(j) - c;
                const double exact = amp * std::exp(-(dx * dx + dy * dy) / (2 * s2));
                err = std::max(err, std::abs(st.no2(i, j) - exact));
            }
        return err;
    };
    const double coarse = error_at(32, 2.0, 0.2);
    const double fine = error_at(64, 1.0, 0.1);
    CHECK(fine < coarse);
}

TEST_CASE("CFL violations are rejected with the offending ratio") {
    GridSpec g = small_grid();
    g.dt = 3.0;
    FieldSet f;
    f.vx = [](double, double) { return 1.0; };
    try {
        Simulator s(g, f);
        FAIL("expected CFL rejection");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("CFL") != std::string::npos);
        CHECK(std::string(e.what()).find("3.0") != std::string::npos);
    }
}

TEST_CASE("derived wind features") {
    {
        auto [stag, mix] = sim::derived_wind(0, 0, 0, 0, 3, 4);
        CHECK(stag == doctest::Approx(5.0));
        CHECK(mix == doctest::Approx(0.0));
    }
    {
        auto [stag, mix] = sim::derived_wind(3, 4, 6, 8, 6, 8);
        CHECK(mix == doctest::Approx(5.0));
        CHECK(stag == doctest::Approx(0.0));
    }
    {
        auto [stag, mix] = sim::derived_wind(1, 2, 1, 2, 1, 2);
        CHECK(stag == 0.0);
        CHECK(mix == 0.0);
    }
}

TEST_CASE("sampling: zero noise reproduces grid values; ordering always holds") {
    FieldSet f;
    f.p = [](double, double) { return 0.2; };
    f.elevation = [](double x, double y) { return 0.01 * x + 0.02 * y; };
    Simulator s(small_grid(Boundary::periodic), f);
    SpeciesState st{gaussian_bump(s.grid(), 16, 16, 5, 6.0), gaussian_bump(s.grid(), 16, 16, 5, 14.0)};

    sim::SamplePlan plan;
    plan.n_sites = 20;
    plan.n_weeks = 3;
    plan.steps_per_week = 10;
    plan.noise_sd = 0.0;
    plan.covariate_noise = 0.0;
    plan.seed = 5;
    auto ds = sim::sample_sites(s, st, f, plan);
    CHECK(ds.records.size() == 60);

    // week-0 records must equal the initial grid exactly
    int checked = 0;
    for (const auto& r : ds.records) {
        REQUIRE(*r.no2_ppb <= *r.nox_ppb);
        if (r.week != 0) continue;
        const int i = static_cast<int>(r.x / s.grid().dx);
        const int j = static_cast<int>(r.y / s.grid().dy);
        CHECK(*r.no2_ppb == st.no2(i, j));
        ++checked;
    }
    CHECK(checked == 20);
}

TEST_CASE("sampling is byte-identical for the same seed") {
    FieldSet f;
    f.vx = [](double, double) { return 0.3; };
    f.p = [](double, double) { return 0.15; };
    Simulator s(small_grid(Boundary::periodic), f);
    SpeciesState st{gaussian_bump(s.grid(), 10, 10, 4, 5.0), gaussian_bump(s.grid(), 10, 10, 4, 9.0)};
    sim::SamplePlan plan;
    plan.n_sites = 15;
    plan.n_weeks = 4;
    plan.seed = 77;

    auto render = [&] {
        auto ds = sim::sample_sites(s, st, f, plan);
        ds.save_csv("sim_det_test.csv");
        std::ifstream in("sim_det_test.csv");
        std::stringstream buf;
        buf << in.rdbuf();
        return buf.str();
    };
    const std::string a = render(), b = render();
    CHECK(a == b);
    std::remove("sim_det_test.csv");
}
