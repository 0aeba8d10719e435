#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <iomanip>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "jpinn/common.hpp"

namespace jpinn::data {

enum class Split { train, regular_test, site_test, predict };

inline const char* split_name(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::regular_test: return "regular-test";
        case Split::site_test: return "site-test";
        case Split::predict: return "predict";
    }
    return "?";
}

inline Split split_from_string(const std::string& s) {
    if (s == "train") return Split::train;
    if (s == "regular-test") return Split::regular_test;
    if (s == "site-test") return Split::site_test;
    if (s == "predict") return Split::predict;
    throw DataError("unknown split tag: '" + s + "'");
}

struct SampleRecord {
    std::string site_id;
    int week = 0;
    double x = 0, y = 0, z = 0;
    std::optional<double> no2_ppb;
    std::optional<double> nox_ppb;
    Split split = Split::predict;
    std::vector<double> covariates;

    bool observed() const { return no2_ppb.has_value() && nox_ppb.has_value(); }
};

// CSV schema: site_id,week,x,y,z,no2_ppb,nox_ppb,split,<covariate columns...>
// UTF-8, dot decimal, empty cells for missing concentrations.
struct Dataset {
    std::vector<std::string> covariate_names;
    std::vector<SampleRecord> records;

    std::vector<std::string> site_ids() const {
        std::set<std::string> s;
        for (const auto& r : records) s.insert(r.site_id);
        return {s.begin(), s.end()};
    }

    int covariate_index(const std::string& name) const {
        auto it = std::find(covariate_names.begin(), covariate_names.end(), name);
        if (it == covariate_names.end())
            throw DataError("unknown covariate: " + name);
        return static_cast<int>(it - covariate_names.begin());
    }

    void validate() const {
        std::map<std::pair<std::string, int>, std::size_t> keys;
        for (std::size_t i = 0; i < records.size(); ++i) {
            const auto& r = records[i];
            const std::string where = "row " + std::to_string(i + 1) + " (site " +
                                      r.site_id + ", week " + std::to_string(r.week) + ")";
            auto [it, fresh] = keys.insert({{r.site_id, r.week}, i});
            if (!fresh) {
                // identical train-tagged copies are oversampled duplicates and
                // legal; anything else is a conflicting key
                const auto& o = records[it->second];
                const bool identical_copy =
                    r.split == Split::train && o.split == Split::train &&
                    r.x == o.x && r.y == o.y && r.z == o.z && r.no2_ppb == o.no2_ppb &&
                    r.nox_ppb == o.nox_ppb && r.covariates == o.covariates;
                if (!identical_copy)
                    throw DataError(where + ": duplicate (site, week) key");
            }
            if (r.no2_ppb && (!std::isfinite(*r.no2_ppb) || *r.no2_ppb < 0))
                throw DataError(where + ": invalid no2_ppb");
            if (r.nox_ppb && (!std::isfinite(*r.nox_ppb) || *r.nox_ppb < 0))
                throw DataError(where + ": invalid nox_ppb");
            if (r.no2_ppb.has_value() != r.nox_ppb.has_value())
                throw DataError(where + ": concentrations must be present as a pair");
            if (r.no2_ppb && *r.no2_ppb > *r.nox_ppb)
                throw DataError(where + ": ordering violation, no2 > nox");
            if (r.covariates.size() != covariate_names.size())
                throw DataError(where + ": covariate count mismatch");
            for (double c : r.covariates)
                if (!std::isfinite(c)) throw DataError(where + ": non-finite covariate");
            if (!std::isfinite(r.x) || !std::isfinite(r.y) || !std::isfinite(r.z))
                throw DataError(where + ": non-finite coordinates");
        }
    }

    void save_csv(const std::string& path) const {
        std::ofstream out(path);
        if (!out) throw DataError("cannot write dataset: " + path);
        out << std::setprecision(17);
        out << "site_id,week,x,y,z,no2_ppb,nox_ppb,split";
        for (const auto& n : covariate_names) out << "," << n;
        out << "\n";
        for (const auto& r : records) {
            out << r.site_id << "," << r.week << "," << r.x << "," << r.y << "," << r.z
                << ",";
            if (r.no2_ppb) out << *r.no2_ppb;
            out << ",";
            if (r.nox_ppb) out << *r.nox_ppb;
            out << "," << split_name(r.split);
            for (double c : r.covariates) out << "," << c;
            out << "\n";
        }
    }

    static Dataset load_csv(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw DataError("cannot read dataset: " + path);
        std::string line;
        if (!std::getline(in, line)) throw DataError("empty dataset file: " + path);
        auto header = split_line(line);
        const std::vector<std::string> fixed = {"site_id", "week", "x",       "y",
                                                "z",       "no2_ppb", "nox_ppb", "split"};
        if (header.size() < fixed.size())
            throw DataError("dataset header too short in " + path);
        for (std::size_t i = 0; i < fixed.size(); ++i)
            if (header[i] != fixed[i])
                throw DataError("dataset header mismatch at column " +
                                std::to_string(i + 1) + ": expected '" + fixed[i] +
                                "', got '" + header[i] + "'");
        Dataset ds;
        ds.covariate_names.assign(header.begin() + fixed.size(), header.end());
        int row = 1;
        while (std::getline(in, line)) {
            ++row;
            if (line.empty()) continue;
            auto cells = split_line(line);
            if (cells.size() != header.size())
                throw DataError("row " + std::to_string(row) + ": expected " +
                                std::to_string(header.size()) + " cells, got " +
                                std::to_string(cells.size()));
            SampleRecord r;
            try {
                r.site_id = cells[0];
                r.week = std::stoi(cells[1]);
                r.x = std::stod(cells[2]);
                r.y = std::stod(cells[3]);
                r.z = std::stod(cells[4]);
                if (!cells[5].empty()) r.no2_ppb = std::stod(cells[5]);
                if (!cells[6].empty()) r.nox_ppb = std::stod(cells[6]);
                r.split = split_from_string(cells[7]);
                for (std::size_t c = 8; c < cells.size(); ++c)
                    r.covariates.push_back(std::stod(cells[c]));
            } catch (const DataError&) {
                throw;
            } catch (const std::exception& e) {
                throw DataError("row " + std::to_string(row) + ": parse error: " +
                                e.what());
            }
            ds.records.push_back(std::move(r));
        }
        ds.validate();
        return ds;
    }

private:
    static std::vector<std::string> split_line(const std::string& line) {
        std::vector<std::string> out;
        std::string cell;
        std::istringstream ss(line);
        while (std::getline(ss, cell, ',')) out.push_back(cell);
        if (!line.empty() && line.back() == ',') out.emplace_back();
        return out;
    }
};

// Per-feature affine standardization, fitted on training records only. The
// feature layout everywhere is [t, x, y, z, covariates...]; z is clamped to
// the training elevation range before standardizing.
class Standardizer {
public:
    static Standardizer fit(const Dataset& ds) {
        Standardizer s;
        s.ncov_ = static_cast<int>(ds.covariate_names.size());
        const int d = 4 + s.ncov_;
        s.mean_.assign(d, 0.0);
        s.scale_.assign(d, 1.0);
        s.z_min_ = std::numeric_limits<double>::infinity();
        s.z_max_ = -s.z_min_;
        std::vector<double> sq(d, 0.0);
        std::size_t n = 0;
        for (const auto& r : ds.records) {
            if (r.split != Split::train) continue;
            auto f = raw_features(r);
            for (int i = 0; i < d; ++i) {
                s.mean_[i] += f[i];
                sq[i] += f[i] * f[i];
            }
            s.z_min_ = std::min(s.z_min_, r.z);
            s.z_max_ = std::max(s.z_max_, r.z);
            ++n;
        }
        if (n < 2) throw DataError("standardizer: need at least 2 training records");
        for (int i = 0; i < d; ++i) {
            s.mean_[i] /= static_cast<double>(n);
            const double var = sq[i] / static_cast<double>(n) - s.mean_[i] * s.mean_[i];
            s.scale_[i] = var > 1e-24 ? std::sqrt(var) : 1.0;
        }
        return s;
    }

    int dim() const { return static_cast<int>(mean_.size()); }
    double z_min() const { return z_min_; }
    double z_max() const { return z_max_; }

    std::vector<double> transform(const SampleRecord& r) const {
        auto f = raw_features(r);
        if (static_cast<int>(f.size()) != dim())
            throw DataError("standardizer: feature dimension mismatch");
        f[3] = std::clamp(f[3], z_min_, z_max_);
        for (int i = 0; i < dim(); ++i) f[i] = (f[i] - mean_[i]) / scale_[i];
        return f;
    }

    double inverse_one(int index, double standardized) const {
        return standardized * scale_.at(index) + mean_.at(index);
    }
    double transform_one(int index, double raw) const {
        return (raw - mean_.at(index)) / scale_.at(index);
    }

    void write(std::ostream& out) const {
        out << "standardizer " << ncov_ << " " << z_min_ << " " << z_max_ << "\n";
        for (double m : mean_) out << m << " ";
        out << "\n";
        for (double s : scale_) out << s << " ";
        out << "\n";
    }

    static Standardizer read(std::istream& in) {
        std::string tag;
        Standardizer s;
        in >> tag >> s.ncov_ >> s.z_min_ >> s.z_max_;
        if (tag != "standardizer") throw DataError("bad standardizer header");
        const int d = 4 + s.ncov_;
        s.mean_.resize(d);
        s.scale_.resize(d);
        for (double& m : s.mean_) in >> m;
        for (double& sc : s.scale_) in >> sc;
        if (!in) throw DataError("truncated standardizer");
        return s;
    }

private:
    static std::vector<double> raw_features(const SampleRecord& r) {
        std::vector<double> f;
        f.reserve(4 + r.covariates.size());
        f.push_back(static_cast<double>(r.week));
        f.push_back(r.x);
        f.push_back(r.y);
        f.push_back(r.z);
        f.insert(f.end(), r.covariates.begin(), r.covariates.end());
        return f;
    }

    int ncov_ = 0;
    std::vector<double> mean_, scale_;
    double z_min_ = 0, z_max_ = 0;
};

// Region x season strata: 4x4 tiling of the coordinate bounding box crossed
// with quarters of the 52-week year. Within each stratum the train fraction
// is tagged train and the rest regular-test; tail-decile training rows are
// duplicated with ~`oversample_tails` probability. Site-test records keep
// their tag and never participate.
inline void stratified_split(Dataset& ds, double train_fraction = 0.78,
                             double oversample_tails = 0.2, std::uint64_t seed = 0,
                             std::vector<std::string>* log = nullptr) {
    if (train_fraction <= 0.0 || train_fraction >= 1.0)
        throw ConfigError("stratified_split: train fraction must be in (0,1)");

    std::vector<std::size_t> eligible;
    double x0 = 1e300, x1 = -1e300, y0 = 1e300, y1 = -1e300;
    for (std::size_t i = 0; i < ds.records.size(); ++i) {
        const auto& r = ds.records[i];
        if (r.split == Split::site_test) continue;
        if (!r.observed()) continue;
        eligible.push_back(i);
        x0 = std::min(x0, r.x); x1 = std::max(x1, r.x);
        y0 = std::min(y0, r.y); y1 = std::max(y1, r.y);
    }
    if (eligible.size() < 2)
        throw DataError("stratified_split: fewer than 2 eligible records");

    auto stratum_of = [&](const SampleRecord& r) {
        auto bucket = [](double v, double lo, double hi) {
            if (hi <= lo) return 0;
            int b = static_cast<int>((v - lo) / (hi - lo) * 4.0);
            return std::clamp(b, 0, 3);
        };
        const int season = ((r.week % 52) + 52) % 52 / 13;
        return bucket(r.x, x0, x1) * 16 + bucket(r.y, y0, y1) * 4 + season;
    };

    std::map<int, std::vector<std::size_t>> strata;
    for (std::size_t i : eligible) strata[stratum_of(ds.records[i])].push_back(i);

    // merge undersized strata into the previous one (first stratum merges
    // forward)
    std::vector<std::vector<std::size_t>> groups;
    for (auto& [key, idx] : strata) {
        if (!groups.empty() && idx.size() < 2) {
            if (log)
                log->push_back("stratum " + std::to_string(key) +
                               " has <2 samples; merged into neighbor");
            groups.back().insert(groups.back().end(), idx.begin(), idx.end());
        } else {
            groups.push_back(std::move(idx));
        }
    }
    if (groups.size() > 1 && groups.front().size() < 2) {
        auto first = groups.front();
        groups.erase(groups.begin());
        groups.front().insert(groups.front().end(), first.begin(), first.end());
        if (log) log->push_back("leading undersized stratum merged forward");
    }

    Rng rng = make_rng(derive_seed(seed, 0xda7a));
    for (auto& g : groups) {
        std::shuffle(g.begin(), g.end(), rng);
        const std::size_t ntrain = std::max<std::size_t>(
            1, static_cast<std::size_t>(std::llround(train_fraction *
                                                     static_cast<double>(g.size()))));
        for (std::size_t k = 0; k < g.size(); ++k)
            ds.records[g[k]].split = k < ntrain ? Split::train : Split::regular_test;
    }

    if (oversample_tails > 0.0) {
        // tail deciles of observed NOx over the eligible pool
        std::vector<double> nox;
        for (std::size_t i : eligible) nox.push_back(*ds.records[i].nox_ppb);
        std::sort(nox.begin(), nox.end());
        const double lo = nox[nox.size() / 10];
        const double hi = nox[nox.size() - 1 - nox.size() / 10];
        std::bernoulli_distribution dup(oversample_tails);
        std::vector<SampleRecord> extra;
        for (std::size_t i : eligible) {
            const auto& r = ds.records[i];
            if (r.split != Split::train) continue;
            if ((*r.nox_ppb <= lo || *r.nox_ppb >= hi) && dup(rng)) extra.push_back(r);
        }
        for (auto& r : extra) ds.records.push_back(std::move(r));
    }
}

struct Metrics {
    double r2 = 0, rmse = 0;
    bool r2_defined = true;  // false when the observations have zero variance
};

inline Metrics compute_metrics(const std::vector<double>& observed,
                               const std::vector<double>& predicted) {
    if (observed.size() != predicted.size())
        throw DataError("metrics: observed/predicted size mismatch");
    if (observed.size() < 2) throw DataError("metrics: need at least 2 observations");
    const double n = static_cast<double>(observed.size());
    double mean = 0;
    for (double o : observed) mean += o;
    mean /= n;
    double ss_res = 0, ss_tot = 0;
    for (std::size_t i = 0; i < observed.size(); ++i) {
        ss_res += (observed[i] - predicted[i]) * (observed[i] - predicted[i]);
        ss_tot += (observed[i] - mean) * (observed[i] - mean);
    }
    Metrics m;
    m.rmse = std::sqrt(ss_res / n);
    if (ss_tot <= 0.0) {
        m.r2_defined = false;
        m.r2 = std::numeric_limits<double>::quiet_NaN();
    } else {
        m.r2 = 1.0 - ss_res / ss_tot;
    }
    return m;
}

// Predictions for a set of records: ppb pairs aligned with the input order.
using PredictFn =
    std::function<std::vector<std::pair<double, double>>(const Dataset&)>;

// Mean increase in site-test RMSE (averaged over both species) when one
// covariate column is permuted.
inline double permutation_importance(const PredictFn& predict, const Dataset& ds,
                                     int covariate, int repeats, std::uint64_t seed,
                                     Split slice = Split::site_test) {
    Dataset sub;
    sub.covariate_names = ds.covariate_names;
    for (const auto& r : ds.records)
        if (r.split == slice && r.observed()) sub.records.push_back(r);
    if (sub.records.size() < 2)
        throw DataError("permutation_importance: slice has fewer than 2 observations");

    auto rmse_of = [&](const Dataset& d) {
        auto pred = predict(d);
        std::vector<double> o1, p1, o2, p2;
        for (std::size_t i = 0; i < d.records.size(); ++i) {
            o1.push_back(*d.records[i].no2_ppb);
            o2.push_back(*d.records[i].nox_ppb);
            p1.push_back(pred[i].first);
            p2.push_back(pred[i].second);
        }
        return 0.5 * (compute_metrics(o1, p1).rmse + compute_metrics(o2, p2).rmse);
    };

    const double base = rmse_of(sub);
    Rng rng = make_rng(derive_seed(seed, 0x1397 + static_cast<std::uint64_t>(covariate)));
    double total = 0;
    for (int rep = 0; rep < repeats; ++rep) {
        Dataset perm = sub;
        std::vector<std::size_t> order(perm.records.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t i = 0; i < order.size(); ++i)
            perm.records[i].covariates[covariate] =
                sub.records[order[i]].covariates[covariate];
        total += rmse_of(perm) - base;
    }
    return total / repeats;
}

}  // namespace jpinn::data
