#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "lss/math.hpp"
#include "lss/tensor.hpp"

namespace lss {

// Reverse-mode differentiation over a dynamically recorded tape of coarse
// matrix primitives. Nodes are appended in execution order, which is a valid
// topological order by construction; backward() walks the tape strictly in
// reverse. A Graph is confined to one thread for its lifetime.

enum class OpKind : std::uint8_t {
    leaf,
    add,
    mul,
    scale,
    add_rows,
    matmul,
    transpose,
    slice_cols,
    concat_cols,
    concat_rows,
    gather_rows,
    softmax_rows,
    log_softmax_rows,
    layer_norm_rows,
    l2_normalize_rows,
    normalize_sum_rows,
    log_elem,
    gelu,
    sum_all,
    mean_rows,
};

struct Var {
    std::uint32_t idx = 0;
};

namespace detail {

// C += A(R x K) * B(K x C) with the k-loop in the middle for contiguous access.
inline void matmul_acc_nn(const Tensor& a, const Tensor& b, std::vector<double>& out) {
    const std::size_t R = a.rows(), K = a.cols(), C = b.cols();
    for (std::size_t i = 0; i < R; ++i) {
        const double* arow = &a.data[i * K];
        double* orow = &out[i * C];
        for (std::size_t k = 0; k < K; ++k) {
            const double av = arow[k];
            if (av == 0.0) continue;
            const double* brow = &b.data[k * C];
            for (std::size_t j = 0; j < C; ++j) orow[j] += av * brow[j];
        }
    }
}

// C += A(R x K) * B^T where B is (C x K).
inline void matmul_acc_nt(const Tensor& a, const Tensor& b, std::vector<double>& out) {
    const std::size_t R = a.rows(), K = a.cols(), C = b.rows();
    for (std::size_t i = 0; i < R; ++i) {
        const double* arow = &a.data[i * K];
        double* orow = &out[i * C];
        for (std::size_t j = 0; j < C; ++j) {
            const double* brow = &b.data[j * K];
            double s = 0.0;
            for (std::size_t k = 0; k < K; ++k) s += arow[k] * brow[k];
            orow[j] += s;
        }
    }
}

// C += A^T * B where A is (K x R), B is (K x C).
inline void matmul_acc_tn(const Tensor& a, const Tensor& b, std::vector<double>& out) {
    const std::size_t K = a.rows(), R = a.cols(), C = b.cols();
    for (std::size_t k = 0; k < K; ++k) {
        const double* arow = &a.data[k * R];
        const double* brow = &b.data[k * C];
        for (std::size_t i = 0; i < R; ++i) {
            const double av = arow[i];
            if (av == 0.0) continue;
            double* orow = &out[i * C];
            for (std::size_t j = 0; j < C; ++j) orow[j] += av * brow[j];
        }
    }
}

}  // namespace detail

class Graph {
  public:
    Var leaf(Tensor value, bool requires_grad) {
        require_matrix(value, "leaf");
        return push(OpKind::leaf, {}, std::move(value), requires_grad);
    }

    Var constant(Tensor value) { return leaf(std::move(value), false); }
    Var param(Tensor value) { return leaf(std::move(value), true); }

    Var add(Var a, Var b) {
        check_same_shape(val(a), val(b), "graph add");
        Tensor out = val(a);
        for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += val(b).data[i];
        return push(OpKind::add, {a.idx, b.idx}, std::move(out));
    }

    Var mul(Var a, Var b) {
        check_same_shape(val(a), val(b), "graph mul");
        Tensor out = val(a);
        for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] *= val(b).data[i];
        return push(OpKind::mul, {a.idx, b.idx}, std::move(out));
    }

    Var scale(Var a, double s) {
        Tensor out = val(a);
        for (double& x : out.data) x *= s;
        Var v = push(OpKind::scale, {a.idx}, std::move(out));
        node(v).aux0 = s;
        return v;
    }

    // a (R x C) + row-broadcast b (1 x C).
    Var add_rows(Var a, Var b) {
        const Tensor& bt = val(b);
        if (bt.rows() != 1 || bt.cols() != val(a).cols()) {
            throw invalid_argument_error("graph add_rows: bias must be 1 x cols");
        }
        Tensor out = val(a);
        const std::size_t R = out.rows(), C = out.cols();
        for (std::size_t i = 0; i < R; ++i) {
            for (std::size_t j = 0; j < C; ++j) out.data[i * C + j] += bt.data[j];
        }
        return push(OpKind::add_rows, {a.idx, b.idx}, std::move(out));
    }

    Var matmul(Var a, Var b) {
        const Tensor& at = val(a);
        const Tensor& bt = val(b);
        if (at.cols() != bt.rows()) {
            throw invalid_argument_error("graph matmul: inner dims " + at.shape_str() + " vs " +
                                         bt.shape_str());
        }
        Tensor out = Tensor::zeros({at.rows(), bt.cols()});
        detail::matmul_acc_nn(at, bt, out.data);
        return push(OpKind::matmul, {a.idx, b.idx}, std::move(out));
    }

    Var transpose(Var a) {
        const Tensor& at = val(a);
        Tensor out = Tensor::zeros({at.cols(), at.rows()});
        for (std::size_t i = 0; i < at.rows(); ++i) {
            for (std::size_t j = 0; j < at.cols(); ++j) out.at(j, i) = at.at(i, j);
        }
        return push(OpKind::transpose, {a.idx}, std::move(out));
    }

    Var slice_cols(Var a, std::size_t offset, std::size_t width) {
        const Tensor& at = val(a);
        if (offset + width > at.cols()) throw invalid_argument_error("graph slice_cols: out of range");
        Tensor out = Tensor::zeros({at.rows(), width});
        for (std::size_t i = 0; i < at.rows(); ++i) {
            for (std::size_t j = 0; j < width; ++j) out.at(i, j) = at.at(i, offset + j);
        }
        Var v = push(OpKind::slice_cols, {a.idx}, std::move(out));
        node(v).aux_idx = {offset, width};
        return v;
    }

    Var concat_cols(const std::vector<Var>& parts) {
        if (parts.empty()) throw invalid_argument_error("graph concat_cols: empty");
        std::size_t R = val(parts[0]).rows(), C = 0;
        for (Var p : parts) {
            if (val(p).rows() != R) throw invalid_argument_error("graph concat_cols: row mismatch");
            C += val(p).cols();
        }
        Tensor out = Tensor::zeros({R, C});
        std::size_t off = 0;
        for (Var p : parts) {
            const Tensor& pt = val(p);
            for (std::size_t i = 0; i < R; ++i) {
                for (std::size_t j = 0; j < pt.cols(); ++j) out.at(i, off + j) = pt.at(i, j);
            }
            off += pt.cols();
        }
        std::vector<std::uint32_t> in;
        for (Var p : parts) in.push_back(p.idx);
        return push(OpKind::concat_cols, std::move(in), std::move(out));
    }

    Var concat_rows(const std::vector<Var>& parts) {
        if (parts.empty()) throw invalid_argument_error("graph concat_rows: empty");
        std::size_t C = val(parts[0]).cols(), R = 0;
        for (Var p : parts) {
            if (val(p).cols() != C) throw invalid_argument_error("graph concat_rows: col mismatch");
            R += val(p).rows();
        }
        Tensor out = Tensor::zeros({R, C});
        std::size_t off = 0;
        for (Var p : parts) {
            const Tensor& pt = val(p);
            for (std::size_t i = 0; i < pt.rows(); ++i) {
                for (std::size_t j = 0; j < C; ++j) out.at(off + i, j) = pt.at(i, j);
            }
            off += pt.rows();
        }
        std::vector<std::uint32_t> in;
        for (Var p : parts) in.push_back(p.idx);
        return push(OpKind::concat_rows, std::move(in), std::move(out));
    }

    Var gather_rows(Var a, std::vector<std::size_t> idx) {
        const Tensor& at = val(a);
        for (std::size_t r : idx) {
            if (r >= at.rows()) throw invalid_argument_error("graph gather_rows: index out of range");
        }
        Tensor out = Tensor::zeros({idx.size(), at.cols()});
        for (std::size_t i = 0; i < idx.size(); ++i) {
            for (std::size_t j = 0; j < at.cols(); ++j) out.at(i, j) = at.at(idx[i], j);
        }
        Var v = push(OpKind::gather_rows, {a.idx}, std::move(out));
        node(v).aux_idx = std::move(idx);
        return v;
    }

    // Row-wise softmax of x / lambda with max-subtraction.
    Var softmax_rows(Var a, double lambda) {
        if (!(lambda > 0.0)) throw invalid_argument_error("graph softmax_rows: lambda must be positive");
        const Tensor& at = val(a);
        Tensor out = Tensor::zeros(at.shape);
        for (std::size_t i = 0; i < at.rows(); ++i) {
            std::vector<double> row(at.data.begin() + i * at.cols(),
                                    at.data.begin() + (i + 1) * at.cols());
            std::vector<double> sm = softmax_temp(row, lambda);
            for (std::size_t j = 0; j < at.cols(); ++j) out.at(i, j) = sm[j];
        }
        Var v = push(OpKind::softmax_rows, {a.idx}, std::move(out));
        node(v).aux0 = lambda;
        return v;
    }

    Var log_softmax_rows(Var a, double lambda) {
        if (!(lambda > 0.0)) {
            throw invalid_argument_error("graph log_softmax_rows: lambda must be positive");
        }
        const Tensor& at = val(a);
        Tensor out = Tensor::zeros(at.shape);
        for (std::size_t i = 0; i < at.rows(); ++i) {
            std::vector<double> row(at.data.begin() + i * at.cols(),
                                    at.data.begin() + (i + 1) * at.cols());
            std::vector<double> ls = log_softmax_temp(row, lambda);
            for (std::size_t j = 0; j < at.cols(); ++j) out.at(i, j) = ls[j];
        }
        Var v = push(OpKind::log_softmax_rows, {a.idx}, std::move(out));
        node(v).aux0 = lambda;
        return v;
    }

    Var layer_norm_rows(Var a, Var gamma, Var beta, double eps = 1e-6) {
        const Tensor& at = val(a);
        const std::size_t C = at.cols();
        if (val(gamma).rows() != 1 || val(gamma).cols() != C || val(beta).rows() != 1 ||
            val(beta).cols() != C) {
            throw invalid_argument_error("graph layer_norm_rows: gamma/beta must be 1 x cols");
        }
        Tensor out = Tensor::zeros(at.shape);
        for (std::size_t i = 0; i < at.rows(); ++i) {
            double mean = 0.0;
            for (std::size_t j = 0; j < C; ++j) mean += at.at(i, j);
            mean /= static_cast<double>(C);
            double var = 0.0;
            for (std::size_t j = 0; j < C; ++j) {
                double d = at.at(i, j) - mean;
                var += d * d;
            }
            var /= static_cast<double>(C);
            double inv = 1.0 / std::sqrt(var + eps);
            for (std::size_t j = 0; j < C; ++j) {
                double xhat = (at.at(i, j) - mean) * inv;
                out.at(i, j) = val(gamma).data[j] * xhat + val(beta).data[j];
            }
        }
        Var v = push(OpKind::layer_norm_rows, {a.idx, gamma.idx, beta.idx}, std::move(out));
        node(v).aux0 = eps;
        return v;
    }

    // Each row divided by its Euclidean norm. Zero rows are a hard error.
    Var l2_normalize_rows(Var a) {
        const Tensor& at = val(a);
        Tensor out = Tensor::zeros(at.shape);
        for (std::size_t i = 0; i < at.rows(); ++i) {
            double n = 0.0;
            for (std::size_t j = 0; j < at.cols(); ++j) n += at.at(i, j) * at.at(i, j);
            n = std::sqrt(n);
            if (!(n > 0.0)) throw degenerate_input_error("graph l2_normalize_rows: zero row");
            for (std::size_t j = 0; j < at.cols(); ++j) out.at(i, j) = at.at(i, j) / n;
        }
        return push(OpKind::l2_normalize_rows, {a.idx}, std::move(out));
    }

    // Each row divided by its element sum (probability renormalization).
    Var normalize_sum_rows(Var a) {
        const Tensor& at = val(a);
        Tensor out = Tensor::zeros(at.shape);
        for (std::size_t i = 0; i < at.rows(); ++i) {
            double s = 0.0;
            for (std::size_t j = 0; j < at.cols(); ++j) s += at.at(i, j);
            if (!(s > 0.0)) throw degenerate_input_error("graph normalize_sum_rows: non-positive row sum");
            for (std::size_t j = 0; j < at.cols(); ++j) out.at(i, j) = at.at(i, j) / s;
        }
        return push(OpKind::normalize_sum_rows, {a.idx}, std::move(out));
    }

    // Elementwise log with floor to keep gradients finite near zero.
    Var log_elem(Var a) {
        Tensor out = val(a);
        for (double& x : out.data) x = std::log(std::max(x, kLogFloor));
        return push(OpKind::log_elem, {a.idx}, std::move(out));
    }

    Var gelu(Var a) {
        Tensor out = val(a);
        for (double& x : out.data) x = x * 0.5 * (1.0 + std::erf(x * 0.7071067811865475244));
        return push(OpKind::gelu, {a.idx}, std::move(out));
    }

    Var sum_all(Var a) {
        double s = 0.0;
        for (double x : val(a).data) s += x;
        return push(OpKind::sum_all, {a.idx}, Tensor::row({s}));
    }

    // R x C -> 1 x C column means.
    Var mean_rows(Var a) {
        const Tensor& at = val(a);
        if (at.rows() == 0) throw invalid_argument_error("graph mean_rows: empty");
        Tensor out = Tensor::zeros({1, at.cols()});
        for (std::size_t i = 0; i < at.rows(); ++i) {
            for (std::size_t j = 0; j < at.cols(); ++j) out.data[j] += at.at(i, j);
        }
        for (double& x : out.data) x /= static_cast<double>(at.rows());
        return push(OpKind::mean_rows, {a.idx}, std::move(out));
    }

    const Tensor& value(Var v) const { return nodes_[v.idx].value; }

    // Adjoint of a node after backward(); zero tensor if none was propagated.
    const Tensor& grad(Var v) const {
        const NodeRec& n = nodes_[v.idx];
        if (n.grad.data.empty()) {
            static const Tensor empty;
            return empty;
        }
        return n.grad;
    }

    bool requires_grad(Var v) const { return nodes_[v.idx].needs_grad; }

    // Seeds the scalar output with adjoint 1 and sweeps the tape in reverse
    // creation order (exact reverse topological order).
    void backward(Var out) {
        NodeRec& top = nodes_[out.idx];
        if (top.value.numel() != 1) {
            throw invalid_argument_error("graph backward: output must be scalar");
        }
        if (!top.needs_grad) return;
        for (NodeRec& n : nodes_) n.grad.data.clear();
        ensure_grad(out.idx);
        nodes_[out.idx].grad.data[0] = 1.0;
        for (std::size_t i = nodes_.size(); i-- > 0;) {
            NodeRec& n = nodes_[i];
            if (!n.needs_grad || n.grad.data.empty()) continue;
            propagate(static_cast<std::uint32_t>(i));
        }
    }

    std::size_t size() const { return nodes_.size(); }
    OpKind op_kind(std::size_t i) const { return nodes_[i].op; }
    const Tensor& node_value(std::size_t i) const { return nodes_[i].value; }
    const std::vector<std::uint32_t>& node_inputs(std::size_t i) const { return nodes_[i].inputs; }

  private:
    struct NodeRec {
        OpKind op;
        std::vector<std::uint32_t> inputs;
        Tensor value;
        Tensor grad;  // same shape as value once allocated
        double aux0 = 0.0;
        std::vector<std::size_t> aux_idx;
        bool needs_grad = false;
    };

    static void require_matrix(const Tensor& t, const char* op) {
        if (!t.is_matrix() || t.numel() == 0) {
            throw invalid_argument_error(std::string(op) + ": expected nonempty 2-d tensor, got " +
                                         t.shape_str());
        }
    }

    Var push(OpKind op, std::vector<std::uint32_t> inputs, Tensor value, bool leaf_grad = false) {
        NodeRec n;
        n.op = op;
        n.needs_grad = leaf_grad;
        for (std::uint32_t i : inputs) n.needs_grad = n.needs_grad || nodes_[i].needs_grad;
        n.inputs = std::move(inputs);
        n.value = std::move(value);
        nodes_.push_back(std::move(n));
        return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
    }

    NodeRec& node(Var v) { return nodes_[v.idx]; }
    const Tensor& val(Var v) const { return nodes_[v.idx].value; }

    void ensure_grad(std::uint32_t i) {
        NodeRec& n = nodes_[i];
        if (n.grad.data.empty()) n.grad = Tensor::zeros(n.value.shape);
    }

    // Accumulates input adjoints for node i given its output adjoint.
    void propagate(std::uint32_t i) {
        NodeRec& n = nodes_[i];
        const Tensor& g = n.grad;
        const Tensor& y = n.value;
        auto in_needs = [&](std::size_t k) { return nodes_[n.inputs[k]].needs_grad; };
        auto in_grad = [&](std::size_t k) -> Tensor& {
            ensure_grad(n.inputs[k]);
            return nodes_[n.inputs[k]].grad;
        };
        auto in_val = [&](std::size_t k) -> const Tensor& { return nodes_[n.inputs[k]].value; };

        switch (n.op) {
            case OpKind::leaf:
                break;
            case OpKind::add: {
                for (std::size_t k = 0; k < 2; ++k) {
                    if (!in_needs(k)) continue;
                    Tensor& ig = in_grad(k);
                    for (std::size_t j = 0; j < g.data.size(); ++j) ig.data[j] += g.data[j];
                }
                break;
            }
            case OpKind::mul: {
                if (in_needs(0)) {
                    Tensor& ig = in_grad(0);
                    const Tensor& b = in_val(1);
                    for (std::size_t j = 0; j < g.data.size(); ++j) ig.data[j] += g.data[j] * b.data[j];
                }
                if (in_needs(1)) {
                    Tensor& ig = in_grad(1);
                    const Tensor& a = in_val(0);
                    for (std::size_t j = 0; j < g.data.size(); ++j) ig.data[j] += g.data[j] * a.data[j];
                }
                break;
            }
            case OpKind::scale: {
                if (!in_needs(0)) break;
                Tensor& ig = in_grad(0);
                for (std::size_t j = 0; j < g.data.size(); ++j) ig.data[j] += n.aux0 * g.data[j];
                break;
            }
            case OpKind::add_rows: {
                const std::size_t R = g.rows(), C = g.cols();
                if (in_needs(0)) {
                    Tensor& ig = in_grad(0);
                    for (std::size_t j = 0; j < g.data.size(); ++j) ig.data[j] += g.data[j];
                }
                if (in_needs(1)) {
                    Tensor& ig = in_grad(1);
                    for (std::size_t r = 0; r < R; ++r) {
                        for (std::size_t c = 0; c < C; ++c) ig.data[c] += g.data[r * C + c];
                    }
                }
                break;
            }
            case OpKind::matmul: {
                if (in_needs(0)) detail::matmul_acc_nt(g, in_val(1), in_grad(0).data);
                if (in_needs(1)) detail::matmul_acc_tn(in_val(0), g, in_grad(1).data);
                break;
            }
            case OpKind::transpose: {
                if (!in_needs(0)) break;
                Tensor& ig = in_grad(0);
                for (std::size_t r = 0; r < g.rows(); ++r) {
                    for (std::size_t c = 0; c < g.cols(); ++c) ig.at(c, r) += g.at(r, c);
                }
                break;
            }
            case OpKind::slice_cols: {
                if (!in_needs(0)) break;
                Tensor& ig = in_grad(0);
                const std::size_t off = n.aux_idx[0], w = n.aux_idx[1];
                for (std::size_t r = 0; r < g.rows(); ++r) {
                    for (std::size_t c = 0; c < w; ++c) ig.at(r, off + c) += g.at(r, c);
                }
                break;
            }
            case OpKind::concat_cols: {
                std::size_t off = 0;
                for (std::size_t k = 0; k < n.inputs.size(); ++k) {
                    const std::size_t w = in_val(k).cols();
                    if (in_needs(k)) {
                        Tensor& ig = in_grad(k);
                        for (std::size_t r = 0; r < g.rows(); ++r) {
                            for (std::size_t c = 0; c < w; ++c) ig.at(r, c) += g.at(r, off + c);
                        }
                    }
                    off += w;
                }
                break;
            }
            case OpKind::concat_rows: {
                std::size_t off = 0;
                for (std::size_t k = 0; k < n.inputs.size(); ++k) {
                    const std::size_t h = in_val(k).rows();
                    if (in_needs(k)) {
                        Tensor& ig = in_grad(k);
                        for (std::size_t r = 0; r < h; ++r) {
                            for (std::size_t c = 0; c < g.cols(); ++c) ig.at(r, c) += g.at(off + r, c);
                        }
                    }
                    off += h;
                }
                break;
            }
            case OpKind::gather_rows: {
                if (!in_needs(0)) break;
                Tensor& ig = in_grad(0);
                for (std::size_t r = 0; r < n.aux_idx.size(); ++r) {
                    for (std::size_t c = 0; c < g.cols(); ++c) ig.at(n.aux_idx[r], c) += g.at(r, c);
                }
                break;
            }
            case OpKind::softmax_rows: {
                if (!in_needs(0)) break;
                Tensor& ig = in_grad(0);
                const double inv_lambda = 1.0 / n.aux0;
                for (std::size_t r = 0; r < g.rows(); ++r) {
                    double dotp = 0.0;
                    for (std::size_t c = 0; c < g.cols(); ++c) dotp += g.at(r, c) * y.at(r, c);
                    for (std::size_t c = 0; c < g.cols(); ++c) {
                        ig.at(r, c) += inv_lambda * y.at(r, c) * (g.at(r, c) - dotp);
                    }
                }
                break;
            }
            case OpKind::log_softmax_rows: {
                if (!in_needs(0)) break;
                Tensor& ig = in_grad(0);
                const double inv_lambda = 1.0 / n.aux0;
                for (std::size_t r = 0; r < g.rows(); ++r) {
                    double gsum = 0.0;
                    for (std::size_t c = 0; c < g.cols(); ++c) gsum += g.at(r, c);
                    for (std::size_t c = 0; c < g.cols(); ++c) {
                        ig.at(r, c) += inv_lambda * (g.at(r, c) - std::exp(y.at(r, c)) * gsum);
                    }
                }
                break;
            }
            case OpKind::layer_norm_rows: {
                const Tensor& x = in_val(0);
                const Tensor& gamma = in_val(1);
                const std::size_t R = x.rows(), C = x.cols();
                for (std::size_t r = 0; r < R; ++r) {
                    double mean = 0.0;
                    for (std::size_t c = 0; c < C; ++c) mean += x.at(r, c);
                    mean /= static_cast<double>(C);
                    double var = 0.0;
                    for (std::size_t c = 0; c < C; ++c) {
                        double d = x.at(r, c) - mean;
                        var += d * d;
                    }
                    var /= static_cast<double>(C);
                    const double inv = 1.0 / std::sqrt(var + n.aux0);
                    if (in_needs(1) || in_needs(2)) {
                        for (std::size_t c = 0; c < C; ++c) {
                            const double xhat = (x.at(r, c) - mean) * inv;
                            if (in_needs(1)) in_grad(1).data[c] += g.at(r, c) * xhat;
                            if (in_needs(2)) in_grad(2).data[c] += g.at(r, c);
                        }
                    }
                    if (in_needs(0)) {
                        double h_mean = 0.0, hx_mean = 0.0;
                        for (std::size_t c = 0; c < C; ++c) {
                            const double h = g.at(r, c) * gamma.data[c];
                            const double xhat = (x.at(r, c) - mean) * inv;
                            h_mean += h;
                            hx_mean += h * xhat;
                        }
                        h_mean /= static_cast<double>(C);
                        hx_mean /= static_cast<double>(C);
                        Tensor& ig = in_grad(0);
                        for (std::size_t c = 0; c < C; ++c) {
                            const double h = g.at(r, c) * gamma.data[c];
                            const double xhat = (x.at(r, c) - mean) * inv;
                            ig.at(r, c) += inv * (h - h_mean - xhat * hx_mean);
                        }
                    }
                }
                break;
            }
            case OpKind::l2_normalize_rows: {
                if (!in_needs(0)) break;
                const Tensor& x = in_val(0);
                Tensor& ig = in_grad(0);
                for (std::size_t r = 0; r < x.rows(); ++r) {
                    double norm = 0.0;
                    for (std::size_t c = 0; c < x.cols(); ++c) norm += x.at(r, c) * x.at(r, c);
                    norm = std::sqrt(norm);
                    double dotp = 0.0;
                    for (std::size_t c = 0; c < x.cols(); ++c) dotp += g.at(r, c) * y.at(r, c);
                    for (std::size_t c = 0; c < x.cols(); ++c) {
                        ig.at(r, c) += (g.at(r, c) - y.at(r, c) * dotp) / norm;
                    }
                }
                break;
            }
            case OpKind::normalize_sum_rows: {
                if (!in_needs(0)) break;
                const Tensor& x = in_val(0);
                Tensor& ig = in_grad(0);
                for (std::size_t r = 0; r < x.rows(); ++r) {
                    double s = 0.0;
                    for (std::size_t c = 0; c < x.cols(); ++c) s += x.at(r, c);
                    double dotp = 0.0;
                    for (std::size_t c = 0; c < x.cols(); ++c) dotp += g.at(r, c) * y.at(r, c);
                    for (std::size_t c = 0; c < x.cols(); ++c) {
                        ig.at(r, c) += (g.at(r, c) - dotp) / s;
                    }
                }
                break;
            }
            case OpKind::log_elem: {
                if (!in_needs(0)) break;
                const Tensor& x = in_val(0);
                Tensor& ig = in_grad(0);
                for (std::size_t j = 0; j < g.data.size(); ++j) {
                    ig.data[j] += g.data[j] / std::max(x.data[j], kLogFloor);
                }
                break;
            }
            case OpKind::gelu: {
                if (!in_needs(0)) break;
                const Tensor& x = in_val(0);
                Tensor& ig = in_grad(0);
                for (std::size_t j = 0; j < g.data.size(); ++j) {
                    const double xv = x.data[j];
                    const double cdf = 0.5 * (1.0 + std::erf(xv * 0.7071067811865475244));
                    const double pdf = std::exp(-0.5 * xv * xv) * 0.3989422804014326779;
                    ig.data[j] += g.data[j] * (cdf + xv * pdf);
                }
                break;
            }
            case OpKind::sum_all: {
                if (!in_needs(0)) break;
                Tensor& ig = in_grad(0);
                for (double& v : ig.data) v += g.data[0];
                break;
            }
            case OpKind::mean_rows: {
                if (!in_needs(0)) break;
                Tensor& ig = in_grad(0);
                const std::size_t R = ig.rows(), C = ig.cols();
                const double inv = 1.0 / static_cast<double>(R);
                for (std::size_t r = 0; r < R; ++r) {
                    for (std::size_t c = 0; c < C; ++c) ig.at(r, c) += g.data[c] * inv;
                }
                break;
            }
        }
    }

    std::vector<NodeRec> nodes_;
};

}  // namespace lss
