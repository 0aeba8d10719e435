#pragma once

#include <array>
#include <cmath>
#include <optional>

#include "jpinn/common.hpp"
#include "jpinn/tape.hpp"

namespace jpinn::physics {

using ad::Mat;
using ad::Tape;
using ad::Var;

// The 14 transport coefficients, as row indices into the parameter-net
// output: for each species, velocities, diffusion coefficients and the net
// source term, all in log-concentration/standardized-coordinate units.
struct ThetaLayout {
    static constexpr int per_species = 7;
    static constexpr int count = 14;
    static constexpr int vx = 0, vy = 1, vz = 2, px = 3, py = 4, pz = 5, rho = 6;
    static int row(int species, int field) { return species * per_species + field; }
};

// Plain-value Theta for oracle work and reporting.
struct Theta {
    // [species][field], fields ordered as in ThetaLayout
    std::array<std::array<double, 7>, 2> v{};
    double get(int species, int field) const { return v[species][field]; }
    void set(int species, int field, double x) { v[species][field] = x; }
};

// Tape values of the log-space concentration derivatives for one species.
struct PdeDerivatives {
    Var dt, dx, dy, dz;
    Var dxx, dyy, dzz;
};

// Per-species transport coefficients as tape values ([1 x batch] rows).
struct ThetaRows {
    Var vx, vy, vz, px, py, pz, rho;
};

inline ThetaRows slice_theta(Tape& t, Var theta_out, int species) {
    auto row = [&](int f) {
        return t.slice_rows(theta_out, ThetaLayout::row(species, f), 1);
    };
    return {row(ThetaLayout::vx), row(ThetaLayout::vy), row(ThetaLayout::vz),
            row(ThetaLayout::px), row(ThetaLayout::py), row(ThetaLayout::pz),
            row(ThetaLayout::rho)};
}

// Log-space advection-diffusion residual:
//   e = dC'/dt + v.grad(C') - p_x(C'_xx + C'_x^2) - p_y(...) - p_z(...) - rho
// The squared first-derivative terms come from writing the equation for C and
// substituting C = exp(C'). With include_z false the vertical terms are
// dropped entirely.
inline Var pde_residual(Tape& t, const ThetaRows& th, const PdeDerivatives& d,
                        bool include_z = true) {
    Var e = t.add(d.dt, t.add(t.mul(th.vx, d.dx), t.mul(th.vy, d.dy)));
    if (include_z) e = t.add(e, t.mul(th.vz, d.dz));
    e = t.sub(e, t.mul(th.px, t.add(d.dxx, t.square(d.dx))));
    e = t.sub(e, t.mul(th.py, t.add(d.dyy, t.square(d.dy))));
    if (include_z) e = t.sub(e, t.mul(th.pz, t.add(d.dzz, t.square(d.dz))));
    return t.sub(e, th.rho);
}

// Plain-value variant for oracle/manufactured-solution tests.
inline double pde_residual_value(const std::array<double, 7>& theta, double dt,
                                 double dx, double dy, double dz, double dxx,
                                 double dyy, double dzz, bool include_z = true) {
    double e = dt + theta[ThetaLayout::vx] * dx + theta[ThetaLayout::vy] * dy;
    if (include_z) e += theta[ThetaLayout::vz] * dz;
    e -= theta[ThetaLayout::px] * (dxx + dx * dx);
    e -= theta[ThetaLayout::py] * (dyy + dy * dy);
    if (include_z) e -= theta[ThetaLayout::pz] * (dzz + dz * dz);
    return e - theta[ThetaLayout::rho];
}

// e3/e4: amount by which a log-space prediction exceeds its allowed maximum.
inline Var threshold_residual(Tape& t, Var yhat, double max_log) {
    return t.relu_(t.add_scalar(yhat, -max_log));
}

// e5: violation of C(NO2) <= C(NOx), in log space.
inline Var ordering_residual(Tape& t, Var yhat_no2, Var yhat_nox) {
    return t.relu_(t.sub(yhat_no2, yhat_nox));
}

// e6/e7: signed supervised residuals against observed log concentrations.
inline Var mse_residual(Tape& t, Var observed_log, Var predicted_log) {
    return t.sub(observed_log, predicted_log);
}

// Weighted total loss over per-sample residual rows. Physics terms (e1..e5)
// average over all N batch samples, supervised terms (e6, e7) over the M
// training samples; a term with zero weight may be absent (unset Var).
struct ResidualBundle {
    std::array<Var, 7> residuals{};       // e1..e7, [1 x n] rows
    std::array<double, 7> lambda{1, 1, 1, 1, 1, 1, 1};
    std::array<double, 7> mean_sq{};      // filled by total_loss
};

inline Var total_loss(Tape& t, ResidualBundle& b) {
    std::optional<Var> loss;
    for (int i = 0; i < 7; ++i) {
        if (!b.residuals[i].valid()) {
            if (b.lambda[i] != 0.0)
                throw ConfigError("total_loss: residual e" + std::to_string(i + 1) +
                                  " missing but has nonzero weight");
            b.mean_sq[i] = 0.0;
            continue;
        }
        Var msq = t.mean_all(t.square(b.residuals[i]));
        b.mean_sq[i] = t.value(msq)(0, 0);
        if (b.lambda[i] == 0.0) continue;
        Var term = t.scale(msq, b.lambda[i]);
        loss = loss ? t.add(*loss, term) : term;
    }
    if (!loss) return t.constant(0.0);
    return *loss;
}

// Concentrations are floored before the log transform; measured values can be
// (near) zero.
constexpr double kLogFloorPpb = 0.01;

inline double to_log(double ppb, double floor = kLogFloorPpb) {
    return std::log(ppb + floor);
}
inline double from_log(double log_conc, double floor = kLogFloorPpb) {
    return std::max(0.0, std::exp(log_conc) - floor);
}

}  // namespace jpinn::physics
