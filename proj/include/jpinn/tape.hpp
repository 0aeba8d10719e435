#pragma once

#include <Eigen/Dense>
#include <span>
#include <string>
#include <vector>

#include "jpinn/common.hpp"

namespace jpinn::ad {

using Mat = Eigen::MatrixXd;

// Matrices are [features x samples]: feature stacking along rows, batch along
// columns. A scalar is a 1x1 matrix.
enum class Op : std::uint8_t {
    leaf, constant,
    add, sub, mul, div, neg, scale, add_scalar,
    matmul,        // aux0/aux1: transpose flags for a/b
    add_bias,      // a [r x c] + b [r x 1] broadcast over columns
    concat_rows,   // n-ary, parents in extra
    slice_rows,    // aux0: start row, result rows = r
    slice_cols,    // aux0: start col, result cols = c
    pad_rows,      // scatter a into zeros of aux1 rows at row aux0
    pad_cols,      // scatter a into zeros of aux1 cols at col aux0
    sum_all,       // -> 1x1
    broadcast,     // 1x1 -> r x c (filled with the scalar)
    tanh_, sigmoid_, exp_, log_, sqrt_, relu_, sin_, cos_,
    posmask,       // 1 where a > 0, else 0; derivative treated as 0
};

inline const char* op_name(Op op) {
    switch (op) {
        case Op::leaf: return "leaf";
        case Op::constant: return "const";
        case Op::add: return "add";
        case Op::sub: return "sub";
        case Op::mul: return "mul";
        case Op::div: return "div";
        case Op::neg: return "neg";
        case Op::scale: return "scale";
        case Op::add_scalar: return "add_scalar";
        case Op::matmul: return "matmul";
        case Op::add_bias: return "add_bias";
        case Op::concat_rows: return "concat_rows";
        case Op::slice_rows: return "slice_rows";
        case Op::slice_cols: return "slice_cols";
        case Op::pad_rows: return "pad_rows";
        case Op::pad_cols: return "pad_cols";
        case Op::sum_all: return "sum_all";
        case Op::broadcast: return "broadcast";
        case Op::tanh_: return "tanh";
        case Op::sigmoid_: return "sigmoid";
        case Op::exp_: return "exp";
        case Op::log_: return "log";
        case Op::sqrt_: return "sqrt";
        case Op::relu_: return "relu";
        case Op::sin_: return "sin";
        case Op::cos_: return "cos";
        case Op::posmask: return "posmask";
    }
    return "?";
}

struct Var {
    int id = -1;
    bool valid() const { return id >= 0; }
};

// Reverse-mode tape. The backward pass of grad() records its own operations
// onto the same tape, so gradients are themselves differentiable
// (grad(grad(f, x), x) gives second derivatives).
//
// A tape is single-threaded; distinct tapes are independent.
class Tape {
public:
    Var leaf(Mat v) { return push(Op::leaf, -1, -1, std::move(v)); }
    Var leaf(double s) { return leaf(Mat::Constant(1, 1, s)); }

    Var constant(Mat v) { return push(Op::constant, -1, -1, std::move(v)); }
    Var constant(double s) { return constant(Mat::Constant(1, 1, s)); }

    Var add(Var a, Var b) { return push(Op::add, a.id, b.id, val(a) + val(b)); }
    Var sub(Var a, Var b) { return push(Op::sub, a.id, b.id, val(a) - val(b)); }
    Var mul(Var a, Var b) { return push(Op::mul, a.id, b.id, val(a).cwiseProduct(val(b))); }
    Var div(Var a, Var b) { return push(Op::div, a.id, b.id, val(a).cwiseQuotient(val(b))); }
    Var neg(Var a) { return push(Op::neg, a.id, -1, -val(a)); }

    Var scale(Var a, double s) {
        Var v = push(Op::scale, a.id, -1, val(a) * s);
        node(v).s = s;
        return v;
    }
    Var add_scalar(Var a, double s) {
        Var v = push(Op::add_scalar, a.id, -1, val(a).array() + s);
        node(v).s = s;
        return v;
    }

    Var matmul(Var a, Var b, bool ta = false, bool tb = false) {
        if (ta && tb) throw ConfigError("matmul: both-transposed form is not supported");
        Mat r;
        if (ta) r = val(a).transpose() * val(b);
        else if (tb) r = val(a) * val(b).transpose();
        else r = val(a) * val(b);
        Var v = push(Op::matmul, a.id, b.id, std::move(r));
        node(v).aux0 = ta ? 1 : 0;
        node(v).aux1 = tb ? 1 : 0;
        return v;
    }

    Var add_bias(Var a, Var bias) {
        if (val(bias).cols() != 1 || val(bias).rows() != val(a).rows())
            throw ConfigError("add_bias: bias must be a column vector matching rows");
        return push(Op::add_bias, a.id, bias.id, val(a).colwise() + val(bias).col(0));
    }

    Var concat_rows(std::span<const Var> parts) {
        if (parts.empty()) throw ConfigError("concat_rows: empty argument list");
        Eigen::Index cols = val(parts[0]).cols(), rows = 0;
        for (Var p : parts) {
            if (val(p).cols() != cols) throw ConfigError("concat_rows: column count mismatch");
            rows += val(p).rows();
        }
        Mat r(rows, cols);
        Eigen::Index at = 0;
        for (Var p : parts) {
            r.middleRows(at, val(p).rows()) = val(p);
            at += val(p).rows();
        }
        Var v = push(Op::concat_rows, -1, -1, std::move(r));
        node(v).extra.assign(parts.begin(), parts.end());
        return v;
    }
    Var concat_rows(std::initializer_list<Var> parts) {
        return concat_rows(std::span<const Var>(parts.begin(), parts.size()));
    }

    Var slice_rows(Var a, int start, int n) {
        check_range(start, n, static_cast<int>(val(a).rows()), "slice_rows");
        Var v = push(Op::slice_rows, a.id, -1, val(a).middleRows(start, n));
        node(v).aux0 = start;
        node(v).aux1 = static_cast<int>(val(a).rows());
        return v;
    }
    Var slice_cols(Var a, int start, int n) {
        check_range(start, n, static_cast<int>(val(a).cols()), "slice_cols");
        Var v = push(Op::slice_cols, a.id, -1, val(a).middleCols(start, n));
        node(v).aux0 = start;
        node(v).aux1 = static_cast<int>(val(a).cols());
        return v;
    }

    Var sum_all(Var a) { return push(Op::sum_all, a.id, -1, Mat::Constant(1, 1, val(a).sum())); }
    Var mean_all(Var a) {
        const double n = static_cast<double>(val(a).size());
        return scale(sum_all(a), 1.0 / n);
    }
    Var broadcast(Var a, int rows, int cols) {
        if (val(a).size() != 1) throw ConfigError("broadcast: source must be 1x1");
        Var v = push(Op::broadcast, a.id, -1, Mat::Constant(rows, cols, val(a)(0, 0)));
        return v;
    }

    Var tanh_(Var a) { return push(Op::tanh_, a.id, -1, val(a).array().tanh()); }
    Var sigmoid_(Var a) {
        return push(Op::sigmoid_, a.id, -1, 1.0 / (1.0 + (-val(a).array()).exp()));
    }
    Var exp_(Var a) { return push(Op::exp_, a.id, -1, val(a).array().exp()); }
    Var log_(Var a) {
        if (val(a).minCoeff() <= 0.0)
            throw std::domain_error("log: non-positive argument");
        return push(Op::log_, a.id, -1, val(a).array().log());
    }
    Var sqrt_(Var a) {
        if (val(a).minCoeff() < 0.0)
            throw std::domain_error("sqrt: negative argument");
        return push(Op::sqrt_, a.id, -1, val(a).array().sqrt());
    }
    Var relu_(Var a) { return push(Op::relu_, a.id, -1, val(a).cwiseMax(0.0)); }
    Var sin_(Var a) { return push(Op::sin_, a.id, -1, val(a).array().sin()); }
    Var cos_(Var a) { return push(Op::cos_, a.id, -1, val(a).array().cos()); }
    Var posmask(Var a) {
        return push(Op::posmask, a.id, -1,
                    (val(a).array() > 0.0).cast<double>().matrix());
    }

    // Composites.
    Var swish(Var a) { return mul(a, sigmoid_(a)); }
    Var elu(Var a) {
        // pos*x + (1-pos)*(exp(x)-1); the exp branch is evaluated everywhere
        // but masked, keeping the whole thing differentiable through the tape.
        Var pos = posmask(a);
        Var neg_branch = add_scalar(exp_(mul(a, sub(constant_like(a, 1.0), pos))), -1.0);
        return add(mul(pos, a), mul(sub(constant_like(a, 1.0), pos), neg_branch));
    }
    Var square(Var a) { return mul(a, a); }

    // Softmax over rows (features) independently per column (sample).
    Var softmax_rows(Var a) {
        const int rows = static_cast<int>(val(a).rows());
        const int cols = static_cast<int>(val(a).cols());
        Var e = exp_(a);
        Var denom = matmul(constant(Mat::Ones(1, rows)), e);      // 1 x cols
        Var denom_full = matmul(constant(Mat::Ones(rows, 1)), denom);
        (void)cols;
        return div(e, denom_full);
    }

    Var constant_like(Var a, double s) {
        return constant(Mat::Constant(val(a).rows(), val(a).cols(), s));
    }

    const Mat& value(Var v) const { return nodes_.at(v.id).val; }
    std::size_t size() const { return nodes_.size(); }

    // Reverse pass seeded with ones of f's shape: for a scalar f this is
    // d f / d wrt; for a [1 x batch] row over independent samples it yields the
    // per-sample derivative. Results are tape values, so they can be
    // differentiated again. A wrt that is not an ancestor of f gets an exact
    // zero gradient and is reported in `detached` when requested.
    std::vector<Var> grad(Var f, std::span<const Var> wrt,
                          std::vector<int>* detached = nullptr) {
        const int top = f.id;
        std::vector<Var> adj(static_cast<std::size_t>(top) + 1, Var{});
        adj[top] = constant(Mat::Ones(val(f).rows(), val(f).cols()));
        for (int i = top; i >= 0; --i) {
            if (!adj[i].valid()) continue;
            backward_one(i, adj[i], adj);
        }
        std::vector<Var> out;
        out.reserve(wrt.size());
        for (std::size_t k = 0; k < wrt.size(); ++k) {
            Var w = wrt[k];
            if (w.id <= top && adj[w.id].valid()) {
                out.push_back(adj[w.id]);
            } else {
                if (detached) detached->push_back(static_cast<int>(k));
                out.push_back(constant(Mat::Zero(val(w).rows(), val(w).cols())));
            }
        }
        return out;
    }
    std::vector<Var> grad(Var f, std::initializer_list<Var> wrt,
                          std::vector<int>* detached = nullptr) {
        return grad(f, std::span<const Var>(wrt.begin(), wrt.size()), detached);
    }
    Var grad1(Var f, Var wrt) { return grad(f, {wrt})[0]; }

private:
    struct Node {
        Op op;
        int a = -1, b = -1;
        int aux0 = 0, aux1 = 0;
        double s = 0.0;
        Mat val;
        std::vector<Var> extra;  // concat parents
    };

    std::vector<Node> nodes_;

    Node& node(Var v) { return nodes_[v.id]; }
    const Mat& val(Var v) const {
        if (!v.valid() || v.id >= static_cast<int>(nodes_.size()))
            throw ConfigError("tape: invalid value handle");
        return nodes_[v.id].val;
    }

    Var push(Op op, int a, int b, Mat v) {
        if (!v.allFinite())
            throw NumericError(std::string("tape: op '") + op_name(op) + "' at node " +
                               std::to_string(nodes_.size()) + " produced non-finite values");
        Node n;
        n.op = op; n.a = a; n.b = b; n.val = std::move(v);
        nodes_.push_back(std::move(n));
        return Var{static_cast<int>(nodes_.size()) - 1};
    }

    static void check_range(int start, int n, int total, const char* what) {
        if (start < 0 || n <= 0 || start + n > total)
            throw ConfigError(std::string(what) + ": range out of bounds");
    }

    void accum(std::vector<Var>& adj, int target, Var contrib) {
        if (target < 0 || nodes_[target].op == Op::constant) return;
        if (target >= static_cast<int>(adj.size())) return;
        adj[target] = adj[target].valid() ? add(adj[target], contrib) : contrib;
    }

    void backward_one(int i, Var g, std::vector<Var>& adj) {
        const Node& n = nodes_[i];  // note: push() may reallocate; copy fields first
        const Op op = n.op;
        const int a = n.a, b = n.b, aux0 = n.aux0, aux1 = n.aux1;
        const double s = n.s;
        Var self{i};
        switch (op) {
            case Op::leaf:
            case Op::constant:
            case Op::posmask:
                break;
            case Op::add:
                accum(adj, a, g);
                accum(adj, b, g);
                break;
            case Op::sub:
                accum(adj, a, g);
                accum(adj, b, neg(g));
                break;
            case Op::mul:
                accum(adj, a, mul(g, Var{b}));
                accum(adj, b, mul(g, Var{a}));
                break;
            case Op::div:
                accum(adj, a, div(g, Var{b}));
                accum(adj, b, neg(div(mul(g, self), Var{b})));
                break;
            case Op::neg:
                accum(adj, a, neg(g));
                break;
            case Op::scale:
                accum(adj, a, scale(g, s));
                break;
            case Op::add_scalar:
                accum(adj, a, g);
                break;
            case Op::matmul: {
                const bool ta = aux0 != 0, tb = aux1 != 0;
                if (!ta && !tb) {
                    accum(adj, a, matmul(g, Var{b}, false, true));
                    accum(adj, b, matmul(Var{a}, g, true, false));
                } else if (ta) {  // c = a^T b
                    accum(adj, a, matmul(Var{b}, g, false, true));
                    accum(adj, b, matmul(Var{a}, g, false, false));
                } else {  // c = a b^T
                    accum(adj, a, matmul(g, Var{b}, false, false));
                    accum(adj, b, matmul(g, Var{a}, true, false));
                }
                break;
            }
            case Op::add_bias: {
                accum(adj, a, g);
                const int cols = static_cast<int>(nodes_[i].val.cols());
                accum(adj, b, matmul(g, constant(Mat::Ones(cols, 1))));
                break;
            }
            case Op::concat_rows: {
                int at = 0;
                // copy the parent list: slice_rows pushes may invalidate n
                const std::vector<Var> parts = n.extra;
                for (Var p : parts) {
                    const int rows = static_cast<int>(nodes_[p.id].val.rows());
                    accum(adj, p.id, slice_rows(g, at, rows));
                    at += rows;
                }
                break;
            }
            case Op::slice_rows:
                accum(adj, a, pad_rows(g, aux0, aux1));
                break;
            case Op::slice_cols:
                accum(adj, a, pad_cols(g, aux0, aux1));
                break;
            case Op::pad_rows:
                accum(adj, a, slice_rows(g, aux0, static_cast<int>(nodes_[a].val.rows())));
                break;
            case Op::pad_cols:
                accum(adj, a, slice_cols(g, aux0, static_cast<int>(nodes_[a].val.cols())));
                break;
            case Op::sum_all: {
                const auto& av = nodes_[a].val;
                accum(adj, a, broadcast(g, static_cast<int>(av.rows()),
                                        static_cast<int>(av.cols())));
                break;
            }
            case Op::broadcast:
                accum(adj, a, sum_all(g));
                break;
            case Op::tanh_:
                accum(adj, a, mul(g, add_scalar(neg(square(self)), 1.0)));
                break;
            case Op::sigmoid_:
                accum(adj, a, mul(g, mul(self, add_scalar(neg(self), 1.0))));
                break;
            case Op::exp_:
                accum(adj, a, mul(g, self));
                break;
            case Op::log_:
                accum(adj, a, div(g, Var{a}));
                break;
            case Op::sqrt_:
                accum(adj, a, div(scale(g, 0.5), self));
                break;
            case Op::relu_:
                accum(adj, a, mul(g, posmask(Var{a})));
                break;
            case Op::sin_:
                accum(adj, a, mul(g, cos_(Var{a})));
                break;
            case Op::cos_:
                accum(adj, a, neg(mul(g, sin_(Var{a}))));
                break;
        }
    }

    Var pad_rows(Var a, int start, int total_rows) {
        Mat r = Mat::Zero(total_rows, val(a).cols());
        r.middleRows(start, val(a).rows()) = val(a);
        Var v = push(Op::pad_rows, a.id, -1, std::move(r));
        node(v).aux0 = start;
        node(v).aux1 = total_rows;
        return v;
    }
    Var pad_cols(Var a, int start, int total_cols) {
        Mat r = Mat::Zero(val(a).rows(), total_cols);
        r.middleCols(start, val(a).cols()) = val(a);
        Var v = push(Op::pad_cols, a.id, -1, std::move(r));
        node(v).aux0 = start;
        node(v).aux1 = total_cols;
        return v;
    }
};

}  // namespace jpinn::ad
