#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <numbers>
#include <string>
#include <vector>

#include "jpinn/common.hpp"
#include "jpinn/data.hpp"

namespace jpinn::sim {

using Grid = Eigen::MatrixXd;  // indexed (ix, iy)

enum class Boundary { periodic, zero_flux };

struct GridSpec {
    int nx = 0, ny = 0;
    double dx = 1.0, dy = 1.0;
    double dt = 0.1;  // weeks
    Boundary boundary = Boundary::periodic;

    double cell_x(int i) const { return (i + 0.5) * dx; }
    double cell_y(int j) const { return (j + 0.5) * dy; }

    void validate() const {
        if (nx < 3 || ny < 3) throw ConfigError("grid: nx and ny must be >= 3");
        if (dx <= 0 || dy <= 0 || dt <= 0)
            throw ConfigError("grid: dx, dy, dt must be positive");
    }

    // CFL stability: max|v| dt / min(dx,dy) <= 1 and max p dt / min(dx,dy)^2
    // <= 0.5. Violations are rejected before stepping.
    void check_cfl(double vmax, double pmax) const {
        const double h = std::min(dx, dy);
        const double adv = vmax * dt / h;
        const double dif = pmax * dt / (h * h);
        if (adv > 1.0)
            throw ConfigError("CFL violation: advection ratio " + std::to_string(adv) +
                              " > 1");
        if (dif > 0.5)
            throw ConfigError("CFL violation: diffusion ratio " + std::to_string(dif) +
                              " > 0.5");
    }
};

using Field = std::function<double(double x, double y)>;
using TimeField = std::function<double(double x, double y, double t)>;

// Shared transport fields; sources are per species with rho_nox >= rho_no2
// pointwise so the species ordering is preserved by construction.
struct FieldSet {
    Field vx = [](double, double) { return 0.0; };
    Field vy = [](double, double) { return 0.0; };
    Field p = [](double, double) { return 0.0; };
    Field elevation = [](double, double) { return 0.0; };
    TimeField rho_no2 = [](double, double, double) { return 0.0; };
    TimeField rho_nox = [](double, double, double) { return 0.0; };
};

struct SpeciesState {
    Grid no2, nox;  // ppb
};

namespace detail {

inline int wrap(int i, int n) { return (i % n + n) % n; }

// One explicit flux-form step of advection-diffusion for a single species.
// Upwind advective flux + central diffusive flux at faces; zero-flux
// boundaries zero the boundary faces, making the scheme exactly conservative.
inline void step_species(const GridSpec& g, const Grid& vxf, const Grid& vyf,
                         const Grid& pf, Grid& c) {
    const int nx = g.nx, ny = g.ny;
    Grid next = c;
    // x faces: face i sits between cells i-1 and i
    for (int j = 0; j < ny; ++j) {
        for (int i = 0; i <= nx; ++i) {
            // under periodic wrap the i == nx face duplicates face 0
            if (g.boundary == Boundary::periodic && i == nx) continue;
            double flux;
            const bool boundary_face = (i == 0 || i == nx);
            if (boundary_face && g.boundary == Boundary::zero_flux) {
                flux = 0.0;
            } else {
                const int il = wrap(i - 1, nx), ir = wrap(i, nx);
                const double v = 0.5 * (vxf(il, j) + vxf(ir, j));
                const double up = v >= 0 ? c(il, j) : c(ir, j);
                const double pface = 0.5 * (pf(il, j) + pf(ir, j));
                flux = v * up - pface * (c(ir, j) - c(il, j)) / g.dx;
            }
            const double d = g.dt / g.dx * flux;
            if (i > 0) next(i - 1, j) -= d;
            if (i < nx) next(i, j) += d;
            if (g.boundary == Boundary::periodic && i == 0) next(nx - 1, j) -= d;
        }
    }
    c = next;
    next = c;
    for (int i = 0; i < nx; ++i) {
        for (int j = 0; j <= ny; ++j) {
            if (g.boundary == Boundary::periodic && j == ny) continue;
            double flux;
            const bool boundary_face = (j == 0 || j == ny);
            if (boundary_face && g.boundary == Boundary::zero_flux) {
                flux = 0.0;
            } else {
                const int jl = wrap(j - 1, ny), jr = wrap(j, ny);
                const double v = 0.5 * (vyf(i, jl) + vyf(i, jr));
                const double up = v >= 0 ? c(i, jl) : c(i, jr);
                const double pface = 0.5 * (pf(i, jl) + pf(i, jr));
                flux = v * up - pface * (c(i, jr) - c(i, jl)) / g.dy;
            }
            const double d = g.dt / g.dy * flux;
            if (j > 0) next(i, j - 1) -= d;
            if (j < ny) next(i, j) += d;
            if (g.boundary == Boundary::periodic && j == 0) next(i, ny - 1) -= d;
        }
    }
    c = next;
}

}  // namespace detail

class Simulator {
public:
    Simulator(GridSpec grid, FieldSet fields) : grid_(grid), fields_(std::move(fields)) {
        grid_.validate();
        vxf_ = sample(fields_.vx);
        vyf_ = sample(fields_.vy);
        pf_ = sample(fields_.p);
        double vmax = std::max(vxf_.cwiseAbs().maxCoeff(), vyf_.cwiseAbs().maxCoeff());
        grid_.check_cfl(vmax, pf_.maxCoeff());
    }

    const GridSpec& grid() const { return grid_; }
    const Grid& vx() const { return vxf_; }
    const Grid& vy() const { return vyf_; }
    const Grid& p() const { return pf_; }

    // Advances `state` by `steps` explicit steps starting at time t0 (weeks).
    void run(SpeciesState& state, int steps, double t0 = 0.0) const {
        double t = t0;
        for (int s = 0; s < steps; ++s) {
            detail::step_species(grid_, vxf_, vyf_, pf_, state.no2);
            detail::step_species(grid_, vxf_, vyf_, pf_, state.nox);
            for (int i = 0; i < grid_.nx; ++i)
                for (int j = 0; j < grid_.ny; ++j) {
                    const double x = grid_.cell_x(i), y = grid_.cell_y(j);
                    state.no2(i, j) += grid_.dt * fields_.rho_no2(x, y, t);
                    state.nox(i, j) += grid_.dt * fields_.rho_nox(x, y, t);
                }
            t += grid_.dt;
        }
        if (!state.no2.allFinite() || !state.nox.allFinite())
            throw NumericError("simulator: state became non-finite");
    }

    double total_mass(const Grid& c) const { return c.sum() * grid_.dx * grid_.dy; }

    Grid sample(const Field& f) const {
        Grid g(grid_.nx, grid_.ny);
        for (int i = 0; i < grid_.nx; ++i)
            for (int j = 0; j < grid_.ny; ++j) g(i, j) = f(grid_.cell_x(i), grid_.cell_y(j));
        return g;
    }

private:
    GridSpec grid_;
    FieldSet fields_;
    Grid vxf_, vyf_, pf_;
};

// Derived wind covariates: vertical stagnation (speed shear between
// 50m and 10m) and mixing (between 10m and 2m).
inline std::pair<double, double> derived_wind(double u2, double v2, double u10,
                                              double v10, double u50, double v50) {
    const double s2 = std::hypot(u2, v2);
    const double s10 = std::hypot(u10, v10);
    const double s50 = std::hypot(u50, v50);
    return {s50 - s10, s10 - s2};
}

struct SamplePlan {
    int n_sites = 60;
    int n_weeks = 80;
    int steps_per_week = 10;
    double noise_sd = 0.05;   // sd of the shared multiplicative lognormal factor
    int distractors = 3;      // pure-noise covariate columns
    double covariate_noise = 0.05;  // relative noise on physical covariate proxies
    std::uint64_t seed = 1;
};

// Runs the simulation weekly and samples fixed random site cells, emitting a
// dataset with physical covariate proxies, seasonal terms, derived wind
// features and distractor noise columns. One multiplicative noise factor per
// record keeps the NO2 <= NOx invariant intact.
inline data::Dataset sample_sites(const Simulator& simr, SpeciesState state,
                                  const FieldSet& fields, const SamplePlan& plan) {
    const GridSpec& g = simr.grid();
    if (plan.n_sites > g.nx * g.ny)
        throw ConfigError("sample_sites: more sites than grid cells");
    Rng rng = make_rng(derive_seed(plan.seed, 0x517e5));

    // distinct site cells
    std::vector<int> cells(static_cast<std::size_t>(g.nx) * g.ny);
    for (std::size_t i = 0; i < cells.size(); ++i) cells[i] = static_cast<int>(i);
    std::shuffle(cells.begin(), cells.end(), rng);
    cells.resize(plan.n_sites);

    data::Dataset ds;
    ds.covariate_names = {"vx_proxy", "vy_proxy", "p_proxy", "source_no2",
                          "source_nox", "season_sin", "season_cos", "wind_stag",
                          "wind_mix"};
    for (int d = 0; d < plan.distractors; ++d)
        ds.covariate_names.push_back("distractor" + std::to_string(d));

    std::normal_distribution<double> gauss(0.0, 1.0);
    auto noisy = [&](double v) { return v * (1.0 + plan.covariate_noise * gauss(rng)); };

    for (int week = 0; week < plan.n_weeks; ++week) {
        for (int s = 0; s < plan.n_sites; ++s) {
            const int i = cells[s] % g.nx, j = cells[s] / g.nx;
            const double x = g.cell_x(i), y = g.cell_y(j);
            data::SampleRecord r;
            r.site_id = "S" + std::to_string(1000 + s);
            r.week = week;
            r.x = x;
            r.y = y;
            r.z = fields.elevation(x, y);

            const double factor = std::exp(plan.noise_sd * gauss(rng));
            r.no2_ppb = std::max(0.0, state.no2(i, j)) * factor;
            r.nox_ppb = std::max(*r.no2_ppb / factor, state.nox(i, j)) * factor;

            const double vx = simr.vx()(i, j), vy = simr.vy()(i, j);
            // synthetic wind profile: 10m wind tracks the transport field,
            // damped at 2m and amplified at 50m
            const double u10 = noisy(vx), v10 = noisy(vy);
            const double u2 = 0.6 * u10, v2 = 0.6 * v10;
            const double u50 = noisy(1.4 * vx), v50 = noisy(1.4 * vy);
            auto [wstag, wmix] = derived_wind(u2, v2, u10, v10, u50, v50);

            const double t_week = static_cast<double>(week);
            r.covariates = {noisy(vx),
                            noisy(vy),
                            noisy(simr.p()(i, j)),
                            noisy(fields.rho_no2(x, y, t_week)),
                            noisy(fields.rho_nox(x, y, t_week)),
                            std::sin(2.0 * std::numbers::pi * week / 52.0),
                            std::cos(2.0 * std::numbers::pi * week / 52.0),
                            wstag,
                            wmix};
            for (int d = 0; d < plan.distractors; ++d) r.covariates.push_back(gauss(rng));
            ds.records.push_back(std::move(r));
        }
        simr.run(state, plan.steps_per_week, static_cast<double>(week));
    }
    ds.validate();
    return ds;
}

}  // namespace jpinn::sim
