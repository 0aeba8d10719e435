#pragma once

#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <span>
#include <string>
#include <vector>

#include "jpinn/common.hpp"
#include "jpinn/tape.hpp"

namespace jpinn::net {

using ad::Mat;
using ad::Tape;
using ad::Var;

enum class Activation { linear, swish, elu, tanh, sigmoid, relu };

inline Activation activation_from_string(const std::string& s) {
    if (s == "linear") return Activation::linear;
    if (s == "swish") return Activation::swish;
    if (s == "elu") return Activation::elu;
    if (s == "tanh") return Activation::tanh;
    if (s == "sigmoid") return Activation::sigmoid;
    if (s == "relu") return Activation::relu;
    throw ConfigError("unknown activation: " + s);
}

inline const char* activation_name(Activation a) {
    switch (a) {
        case Activation::linear: return "linear";
        case Activation::swish: return "swish";
        case Activation::elu: return "elu";
        case Activation::tanh: return "tanh";
        case Activation::sigmoid: return "sigmoid";
        case Activation::relu: return "relu";
    }
    return "?";
}

inline Var apply_activation(Tape& t, Activation a, Var x) {
    switch (a) {
        case Activation::linear: return x;
        case Activation::swish: return t.swish(x);
        case Activation::elu: return t.elu(x);
        case Activation::tanh: return t.tanh_(x);
        case Activation::sigmoid: return t.sigmoid_(x);
        case Activation::relu: return t.relu_(x);
    }
    throw ConfigError("unknown activation");
}

// Encoder-decoder residual MLP topology. Decoder widths are always the mirror
// of the encoder widths; each encoder activation is added into its
// width-matched decoder layer before the activation.
struct Topology {
    int input_width = 0;
    std::vector<int> encoder_widths;
    int output_width = 0;
    Activation hidden_activation = Activation::swish;
    Activation output_activation = Activation::linear;
    bool attention = true;
    bool weight_norm = true;

    std::vector<int> decoder_widths() const {
        return {encoder_widths.rbegin(), encoder_widths.rend()};
    }

    void validate() const {
        if (input_width < 1) throw ConfigError("topology: input width must be >= 1");
        if (output_width < 1) throw ConfigError("topology: output width must be >= 1");
        if (encoder_widths.empty()) throw ConfigError("topology: no encoder layers");
        for (int w : encoder_widths)
            if (w < 1) throw ConfigError("topology: encoder width must be >= 1");
    }
};

// Full-scale widths; the desk-scale defaults live in the run config.
inline std::vector<int> full_scale_parameter_widths() {
    return {1024, 512, 320, 256, 128, 96, 64, 32, 16, 8};
}
inline std::vector<int> full_scale_estimation_widths() {
    return {512, 320, 256, 128, 96, 64, 32, 16};
}

inline Topology parameter_topology(int input_width, std::vector<int> widths) {
    Topology t;
    t.input_width = input_width;
    t.encoder_widths = std::move(widths);
    t.output_width = 14;
    t.hidden_activation = Activation::swish;
    t.output_activation = Activation::linear;
    return t;
}

inline Topology estimation_topology(int input_width, std::vector<int> widths) {
    Topology t;
    t.input_width = input_width;
    t.encoder_widths = std::move(widths);
    t.output_width = 2;
    t.hidden_activation = Activation::swish;
    t.output_activation = Activation::elu;
    return t;
}

// Full residual network: named parameter tensors plus a tape-forward. The
// parameter values held here are the master copies that the trainer updates;
// a forward pass always goes through leaf vars on a caller-owned tape.
class Frnn {
public:
    Frnn() = default;

    static Frnn build(Topology topo, std::uint64_t seed) {
        topo.validate();
        Frnn net;
        net.topo_ = std::move(topo);
        Rng rng = make_rng(seed);
        const auto& enc = net.topo_.encoder_widths;
        int in = net.topo_.input_width;
        for (std::size_t i = 0; i < enc.size(); ++i) {
            net.add_layer("enc" + std::to_string(i), enc[i], in, rng);
            in = enc[i];
        }
        if (net.topo_.attention) {
            const int w = enc.back();
            net.add_param("attn_w1", init_weight(w, w, rng));
            net.add_param("attn_b1", Mat::Zero(w, 1));
            net.add_param("attn_w2", init_weight(w, w, rng));
            net.add_param("attn_b2", Mat::Zero(w, 1));
        }
        const auto dec = net.topo_.decoder_widths();
        for (std::size_t i = 0; i < dec.size(); ++i) {
            net.add_layer("dec" + std::to_string(i), dec[i], in, rng);
            in = dec[i];
        }
        net.add_layer("out", net.topo_.output_width, in, rng);
        return net;
    }

    const Topology& topology() const { return topo_; }
    std::size_t parameter_count() const { return values_.size(); }
    const std::vector<Mat>& parameters() const { return values_; }
    std::vector<Mat>& parameters() { return values_; }
    const std::vector<std::string>& parameter_names() const { return names_; }

    std::vector<Var> make_parameter_leaves(Tape& t) const {
        std::vector<Var> leaves;
        leaves.reserve(values_.size());
        for (const Mat& v : values_) leaves.push_back(t.leaf(v));
        return leaves;
    }

    // Forward pass over [input_width x batch]. `params` must come from
    // make_parameter_leaves (or be shape-compatible leaves).
    Var forward(Tape& t, std::span<const Var> params, Var input) const {
        if (t.value(input).rows() != topo_.input_width)
            throw ConfigError("forward: input has " +
                              std::to_string(t.value(input).rows()) + " rows, expected " +
                              std::to_string(topo_.input_width));
        if (params.size() != values_.size())
            throw ConfigError("forward: parameter leaf count mismatch");
        std::size_t cursor = 0;
        auto next = [&]() { return params[cursor++]; };

        Var h = input;
        std::vector<Var> enc_acts;
        for (std::size_t i = 0; i < topo_.encoder_widths.size(); ++i) {
            h = apply_activation(t, topo_.hidden_activation, affine(t, next, h));
            enc_acts.push_back(h);
        }
        if (topo_.attention) {
            // feature-wise gate with a residual connection around it
            Var w1 = next(), b1 = next(), w2 = next(), b2 = next();
            Var scores = t.add_bias(t.matmul(w2, t.tanh_(t.add_bias(t.matmul(w1, h), b1))), b2);
            Var gate = t.softmax_rows(scores);
            h = t.add(h, t.mul(gate, h));
        }
        const auto dec = topo_.decoder_widths();
        for (std::size_t i = 0; i < dec.size(); ++i) {
            Var pre = affine(t, next, h);
            // skip from the width-matched encoder layer, added before activation
            Var skip = enc_acts[enc_acts.size() - 1 - i];
            h = apply_activation(t, topo_.hidden_activation, t.add(pre, skip));
        }
        Var out = affine(t, next, h);
        return apply_activation(t, topo_.output_activation, out);
    }

    // Convenience: forward with the stored parameter values on a fresh tape.
    Mat forward_values(const Mat& input) const {
        Tape t;
        auto leaves = make_parameter_leaves(t);
        return t.value(forward(t, leaves, t.leaf(input)));
    }

    // Flat text snapshot: topology header followed by row-major matrices.
    void save(const std::string& path) const {
        std::ofstream out(path);
        if (!out) throw DataError("cannot write network snapshot: " + path);
        out << std::setprecision(17);
        out << "jpinn-frnn 1\n";
        out << "input " << topo_.input_width << "\n";
        out << "output " << topo_.output_width << "\n";
        out << "encoder";
        for (int w : topo_.encoder_widths) out << " " << w;
        out << "\n";
        out << "hidden_activation " << activation_name(topo_.hidden_activation) << "\n";
        out << "output_activation " << activation_name(topo_.output_activation) << "\n";
        out << "attention " << (topo_.attention ? 1 : 0) << "\n";
        out << "weight_norm " << (topo_.weight_norm ? 1 : 0) << "\n";
        out << "tensors " << values_.size() << "\n";
        for (std::size_t i = 0; i < values_.size(); ++i) {
            const Mat& m = values_[i];
            out << names_[i] << " " << m.rows() << " " << m.cols() << "\n";
            for (Eigen::Index r = 0; r < m.rows(); ++r) {
                for (Eigen::Index c = 0; c < m.cols(); ++c)
                    out << (c ? " " : "") << m(r, c);
                out << "\n";
            }
        }
    }

    static Frnn load(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw DataError("cannot read network snapshot: " + path);
        std::string magic;
        int version = 0;
        in >> magic >> version;
        if (magic != "jpinn-frnn" || version != 1)
            throw DataError("bad network snapshot header in " + path);
        Frnn net;
        std::string key;
        in >> key >> net.topo_.input_width;        // input
        in >> key >> net.topo_.output_width;       // output
        in >> key;                                 // encoder
        {
            std::string line;
            std::getline(in, line);
            std::istringstream ws(line);
            int w;
            while (ws >> w) net.topo_.encoder_widths.push_back(w);
        }
        std::string act;
        in >> key >> act;
        net.topo_.hidden_activation = activation_from_string(act);
        in >> key >> act;
        net.topo_.output_activation = activation_from_string(act);
        int flag;
        in >> key >> flag;
        net.topo_.attention = flag != 0;
        in >> key >> flag;
        net.topo_.weight_norm = flag != 0;
        std::size_t n;
        in >> key >> n;
        for (std::size_t i = 0; i < n; ++i) {
            std::string name;
            Eigen::Index rows, cols;
            in >> name >> rows >> cols;
            Mat m(rows, cols);
            for (Eigen::Index r = 0; r < rows; ++r)
                for (Eigen::Index c = 0; c < cols; ++c) in >> m(r, c);
            net.names_.push_back(name);
            net.values_.push_back(std::move(m));
        }
        if (!in) throw DataError("truncated network snapshot: " + path);
        return net;
    }

private:
    Topology topo_;
    std::vector<std::string> names_;
    std::vector<Mat> values_;

    static Mat init_weight(int rows, int cols, Rng& rng) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(cols));
        std::uniform_real_distribution<double> dist(-bound, bound);
        Mat m(rows, cols);
        for (Eigen::Index r = 0; r < rows; ++r)
            for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = dist(rng);
        return m;
    }

    void add_param(const std::string& name, Mat value) {
        names_.push_back(name);
        values_.push_back(std::move(value));
    }

    void add_layer(const std::string& name, int out, int in, Rng& rng) {
        Mat w = init_weight(out, in, rng);
        add_param(name + "_w", w);
        add_param(name + "_b", Mat::Zero(out, 1));
        if (topo_.weight_norm) {
            // gain starts at the actual row norm so the effective weights
            // equal the raw initialization
            Mat gain(out, 1);
            for (int r = 0; r < out; ++r) gain(r, 0) = w.row(r).norm();
            add_param(name + "_g", std::move(gain));
        }
    }

    // pre-activation affine map, with optional weight normalization:
    // W_eff = gain .* W / rownorm(W)
    template <typename Next>
    Var affine(Tape& t, Next&& next, Var h) const {
        Var w = next();
        Var b = next();
        if (topo_.weight_norm) {
            Var gain = next();
            const int in = static_cast<int>(t.value(w).cols());
            Var row_sq = t.matmul(t.mul(w, w), t.constant(Mat::Ones(in, 1)));
            Var inv = t.div(gain, t.sqrt_(t.add_scalar(row_sq, 1e-24)));
            Var factor = t.matmul(inv, t.constant(Mat::Ones(1, in)));
            w = t.mul(w, factor);
        }
        return t.add_bias(t.matmul(w, h), b);
    }
};

}  // namespace jpinn::net
