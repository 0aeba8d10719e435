#pragma once

#include <cmath>
#include <fstream>
#include <numbers>
#include <set>
#include <string>

#include <json.hpp>

#include "jpinn/sim.hpp"

namespace jpinn::scenario {

using nlohmann::json;

// Scenario files describe transport fields with a small analytic catalog:
//   constant:  value
//   linear:    offset + ax*x + ay*y
//   gaussian:  offset + amp * exp(-((x-cx)^2+(y-cy)^2) / (2 sigma^2))
//   sinusoid:  offset + amp * sin(kx*x + ky*y + phase)
// Source fields additionally accept seasonal_amp/seasonal_phase, which
// modulate the value by 1 + seasonal_amp * sin(2 pi t / 52 + seasonal_phase).

namespace detail {

inline void check_keys(const json& obj, const std::set<std::string>& allowed,
                       const std::string& where) {
    for (const auto& [key, value] : obj.items())
        if (!allowed.count(key))
            throw ConfigError("scenario: unknown key '" + key + "' in " + where);
}

inline double num(const json& obj, const std::string& key, double fallback) {
    if (!obj.contains(key)) return fallback;
    if (!obj[key].is_number())
        throw ConfigError("scenario: '" + key + "' must be a number");
    return obj[key].get<double>();
}

inline sim::Field parse_field(const json& spec, const std::string& where) {
    if (!spec.is_object() || !spec.contains("type"))
        throw ConfigError("scenario: field " + where + " needs a 'type'");
    const std::string type = spec["type"].get<std::string>();
    if (type == "constant") {
        check_keys(spec, {"type", "value"}, where);
        const double v = num(spec, "value", 0.0);
        return [v](double, double) { return v; };
    }
    if (type == "linear") {
        check_keys(spec, {"type", "ax", "ay", "offset"}, where);
        const double ax = num(spec, "ax", 0.0), ay = num(spec, "ay", 0.0);
        const double off = num(spec, "offset", 0.0);
        return [=](double x, double y) { return off + ax * x + ay * y; };
    }
    if (type == "gaussian") {
        check_keys(spec, {"type", "amp", "cx", "cy", "sigma", "offset"}, where);
        const double amp = num(spec, "amp", 1.0), cx = num(spec, "cx", 0.0);
        const double cy = num(spec, "cy", 0.0), off = num(spec, "offset", 0.0);
        const double sigma = num(spec, "sigma", 1.0);
        if (sigma <= 0) throw ConfigError("scenario: sigma must be > 0 in " + where);
        return [=](double x, double y) {
            const double dx = x - cx, dy = y - cy;
            return off + amp * std::exp(-(dx * dx + dy * dy) / (2 * sigma * sigma));
        };
    }
    if (type == "sinusoid") {
        check_keys(spec, {"type", "amp", "kx", "ky", "phase", "offset"}, where);
        const double amp = num(spec, "amp", 1.0), kx = num(spec, "kx", 0.0);
        const double ky = num(spec, "ky", 0.0), phase = num(spec, "phase", 0.0);
        const double off = num(spec, "offset", 0.0);
        return [=](double x, double y) {
            return off + amp * std::sin(kx * x + ky * y + phase);
        };
    }
    throw ConfigError("scenario: unknown field type '" + type + "' in " + where);
}

inline sim::TimeField parse_source(const json& spec, const std::string& where) {
    json base = spec;
    double samp = 0.0, sphase = 0.0;
    if (base.is_object()) {
        samp = num(base, "seasonal_amp", 0.0);
        sphase = num(base, "seasonal_phase", 0.0);
        base.erase("seasonal_amp");
        base.erase("seasonal_phase");
    }
    sim::Field f = parse_field(base, where);
    return [f, samp, sphase](double x, double y, double t) {
        const double season =
            1.0 + samp * std::sin(2.0 * std::numbers::pi * t / 52.0 + sphase);
        return f(x, y) * season;
    };
}

}  // namespace detail

struct Scenario {
    std::string name;
    sim::GridSpec grid;
    sim::FieldSet fields;
    sim::Field initial_no2, initial_nox;
    sim::SamplePlan plan;
};

inline Scenario parse(const json& j) {
    detail::check_keys(j, {"name", "grid", "fields", "initial", "sampling"}, "scenario");
    Scenario sc;
    sc.name = j.value("name", "unnamed");

    const json& g = j.at("grid");
    detail::check_keys(g, {"nx", "ny", "dx", "dy", "dt", "boundary"}, "grid");
    sc.grid.nx = static_cast<int>(detail::num(g, "nx", 32));
    sc.grid.ny = static_cast<int>(detail::num(g, "ny", 32));
    sc.grid.dx = detail::num(g, "dx", 1.0);
    sc.grid.dy = detail::num(g, "dy", 1.0);
    sc.grid.dt = detail::num(g, "dt", 0.1);
    const std::string b = g.value("boundary", "periodic");
    if (b == "periodic") sc.grid.boundary = sim::Boundary::periodic;
    else if (b == "zero-flux") sc.grid.boundary = sim::Boundary::zero_flux;
    else throw ConfigError("scenario: unknown boundary '" + b + "'");
    sc.grid.validate();

    const json& f = j.at("fields");
    detail::check_keys(f, {"vx", "vy", "p", "elevation", "rho_no2", "rho_nox"},
                       "fields");
    if (f.contains("vx")) sc.fields.vx = detail::parse_field(f["vx"], "vx");
    if (f.contains("vy")) sc.fields.vy = detail::parse_field(f["vy"], "vy");
    if (f.contains("p")) sc.fields.p = detail::parse_field(f["p"], "p");
    if (f.contains("elevation"))
        sc.fields.elevation = detail::parse_field(f["elevation"], "elevation");
    if (f.contains("rho_no2"))
        sc.fields.rho_no2 = detail::parse_source(f["rho_no2"], "rho_no2");
    if (f.contains("rho_nox"))
        sc.fields.rho_nox = detail::parse_source(f["rho_nox"], "rho_nox");

    const json& ini = j.at("initial");
    detail::check_keys(ini, {"no2", "nox"}, "initial");
    sc.initial_no2 = detail::parse_field(ini.at("no2"), "initial.no2");
    sc.initial_nox = detail::parse_field(ini.at("nox"), "initial.nox");

    const json& s = j.at("sampling");
    detail::check_keys(s,
                       {"n_sites", "n_weeks", "steps_per_week", "noise_sd",
                        "distractors", "covariate_noise", "seed"},
                       "sampling");
    sc.plan.n_sites = static_cast<int>(detail::num(s, "n_sites", sc.plan.n_sites));
    sc.plan.n_weeks = static_cast<int>(detail::num(s, "n_weeks", sc.plan.n_weeks));
    sc.plan.steps_per_week =
        static_cast<int>(detail::num(s, "steps_per_week", sc.plan.steps_per_week));
    sc.plan.noise_sd = detail::num(s, "noise_sd", sc.plan.noise_sd);
    sc.plan.distractors =
        static_cast<int>(detail::num(s, "distractors", sc.plan.distractors));
    sc.plan.covariate_noise =
        detail::num(s, "covariate_noise", sc.plan.covariate_noise);
    sc.plan.seed = static_cast<std::uint64_t>(detail::num(s, "seed", 1));
    return sc;
}

inline Scenario load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot read scenario file: " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ConfigError("scenario parse error in " + path + ": " + e.what());
    }
    return parse(j);
}

// Ordering sanity: initial states and sources must keep NOx >= NO2 pointwise.
inline void validate_ordering(const Scenario& sc) {
    for (int i = 0; i < sc.grid.nx; ++i)
        for (int j = 0; j < sc.grid.ny; ++j) {
            const double x = sc.grid.cell_x(i), y = sc.grid.cell_y(j);
            if (sc.initial_nox(x, y) < sc.initial_no2(x, y))
                throw ConfigError("scenario: initial nox < no2 at cell (" +
                                  std::to_string(i) + "," + std::to_string(j) + ")");
            for (double t : {0.0, 13.0, 26.0, 39.0})
                if (sc.fields.rho_nox(x, y, t) < sc.fields.rho_no2(x, y, t))
                    throw ConfigError("scenario: rho_nox < rho_no2 at cell (" +
                                      std::to_string(i) + "," + std::to_string(j) +
                                      "), t=" + std::to_string(t));
            if (sc.initial_no2(x, y) < 0.0)
                throw ConfigError("scenario: negative initial concentration");
        }
}

// Runs the scenario end to end and returns the sampled dataset.
inline data::Dataset generate(const Scenario& sc) {
    validate_ordering(sc);
    sim::Simulator simr(sc.grid, sc.fields);
    sim::SpeciesState st;
    st.no2 = simr.sample(sc.initial_no2);
    st.nox = simr.sample(sc.initial_nox);
    return sim::sample_sites(simr, st, sc.fields, sc.plan);
}

// The bundled desk-scale scenario: a drifting plume with two source regions,
// mild seasonality and gentle terrain.
inline json plume_small() {
    return json::parse(R"({
  "name": "plume-small",
  "grid": {"nx": 40, "ny": 40, "dx": 1.0, "dy": 1.0, "dt": 0.1, "boundary": "periodic"},
  "fields": {
    "vx": {"type": "sinusoid", "amp": 0.5, "ky": 0.15, "offset": 0.2},
    "vy": {"type": "sinusoid", "amp": 0.4, "kx": 0.12, "phase": 1.0, "offset": -0.1},
    "p":  {"type": "gaussian", "amp": 0.25, "cx": 20, "cy": 20, "sigma": 14, "offset": 0.15},
    "elevation": {"type": "linear", "ax": 0.015, "ay": 0.025},
    "rho_no2": {"type": "gaussian", "amp": 0.8, "cx": 12, "cy": 14, "sigma": 4,
                "seasonal_amp": 0.3},
    "rho_nox": {"type": "gaussian", "amp": 2.2, "cx": 12, "cy": 14, "sigma": 5,
                "offset": 0.05, "seasonal_amp": 0.3}
  },
  "initial": {
    "no2": {"type": "gaussian", "amp": 8.0, "cx": 24, "cy": 22, "sigma": 7, "offset": 2.0},
    "nox": {"type": "gaussian", "amp": 18.0, "cx": 24, "cy": 22, "sigma": 8, "offset": 4.5}
  },
  "sampling": {"n_sites": 60, "n_weeks": 80, "steps_per_week": 10,
               "noise_sd": 0.35, "distractors": 6, "covariate_noise": 3.0, "seed": 1}
})");
}

}  // namespace jpinn::scenario
