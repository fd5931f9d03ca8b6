#pragma once

#include <algorithm>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "caqa/tensor.hpp"

namespace caqa {

/// Node kinds recordable on the tape. Everything is a composition of linear
/// maps, ReLU, concatenation, axis reductions and the squared-error scalar
/// reduction; all are exactly differentiable in closed form.
enum class Op : std::uint8_t {
    Leaf,       // input or parameter
    Add,        // a + b, equal shapes (also serves as bias add)
    Sub,        // a - b, equal shapes
    ScaleConst, // c * a
    ScaleAxis,  // a scaled by vector v along one axis
    Relu,       // max(a, 0); derivative at 0 is 0
    MatMul,     // (m x k)(k x n) -> (m x n), or (m x k)(k) -> (m)
    JointMix,   // A (J x J) applied to every time slice of X (T x J x D)
    TimeShift,  // out[t] = x[t-1] along axis 0, zero-padded at t = 0
    Concat,     // n-ary concatenation along an axis
    MeanAxis,   // mean over one axis (axis removed from the shape)
    Reshape,    // same data, new shape
    SqErr       // sum((a - b)^2) -> scalar
};

inline const char* op_name(Op op) {
    switch (op) {
        case Op::Leaf: return "leaf";
        case Op::Add: return "add";
        case Op::Sub: return "sub";
        case Op::ScaleConst: return "scale";
        case Op::ScaleAxis: return "scale_axis";
        case Op::Relu: return "relu";
        case Op::MatMul: return "matmul";
        case Op::JointMix: return "joint_mix";
        case Op::TimeShift: return "time_shift";
        case Op::Concat: return "concat";
        case Op::MeanAxis: return "mean_axis";
        case Op::Reshape: return "reshape";
        case Op::SqErr: return "squared_error";
    }
    return "?";
}

struct Var {
    int id = -1;
    bool valid() const { return id >= 0; }
};

/// Error raised when a tape op is built with inconsistent operands. The
/// message names the offending node and the shapes involved.
class TapeError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Reverse-mode tape. Nodes are appended in evaluation order (so the tape is
/// already topologically sorted); backward() walks it once in reverse.
/// Deterministic: identical build sequences produce bit-identical values and
/// gradients.
class Tape {
public:
    Var leaf(Tensor value) {
        return push(Op::Leaf, {}, std::move(value));
    }
    Var leaf_scalar(double v) { return leaf(Tensor::scalar(v)); }

    Var add(Var a, Var b) { return binary_same_shape(Op::Add, a, b); }
    Var sub(Var a, Var b) { return binary_same_shape(Op::Sub, a, b); }

    Var scale(Var a, double c) {
        Tensor out = val(a);
        for (double& x : out.values()) x *= c;
        Var r = push(Op::ScaleConst, {a.id}, std::move(out));
        node(r).c = c;
        return r;
    }

    /// out = a with slice index j along `axis` multiplied by v[j].
    Var scale_axis(Var a, Var v, std::size_t axis) {
        const Tensor& ta = val(a);
        const Tensor& tv = val(v);
        if (axis >= ta.rank() || tv.rank() != 1 || tv.dim(0) != ta.dim(axis))
            fail(Op::ScaleAxis, "vector " + shape_str(tv.shape()) + " along axis " +
                                    std::to_string(axis) + " of " + shape_str(ta.shape()));
        auto [outer, len, inner] = axis_span(ta.shape(), axis);
        Tensor out(ta.shape());
        std::size_t p = 0;
        for (std::size_t o = 0; o < outer; ++o)
            for (std::size_t l = 0; l < len; ++l) {
                const double s = tv[l];
                for (std::size_t i = 0; i < inner; ++i, ++p) out[p] = ta[p] * s;
            }
        Var r = push(Op::ScaleAxis, {a.id, v.id}, std::move(out));
        node(r).axis = axis;
        return r;
    }

    Var relu(Var a) {
        Tensor out = val(a);
        for (double& x : out.values()) x = x > 0.0 ? x : 0.0;
        return push(Op::Relu, {a.id}, std::move(out));
    }

    Var matmul(Var a, Var b) {
        const Tensor& ta = val(a);
        const Tensor& tb = val(b);
        if (ta.rank() != 2 || (tb.rank() != 2 && tb.rank() != 1) ||
            ta.dim(1) != tb.dim(0))
            fail(Op::MatMul, shape_str(ta.shape()) + " * " + shape_str(tb.shape()));
        const std::size_t m = ta.dim(0), k = ta.dim(1);
        const std::size_t n = tb.rank() == 2 ? tb.dim(1) : 1;
        Shape out_shape = tb.rank() == 2 ? Shape{m, n} : Shape{m};
        Tensor out(out_shape);
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t l = 0; l < k; ++l) {
                const double av = ta[i * k + l];
                if (av == 0.0) continue;
                for (std::size_t j = 0; j < n; ++j) out[i * n + j] += av * tb[l * n + j];
            }
        return push(Op::MatMul, {a.id, b.id}, std::move(out));
    }

    /// Applies the joint-mixing matrix A to each time slice: out[t] = A * x[t].
    Var joint_mix(Var a, Var x) {
        const Tensor& ta = val(a);
        const Tensor& tx = val(x);
        if (ta.rank() != 2 || ta.dim(0) != ta.dim(1) || tx.rank() != 3 ||
            tx.dim(1) != ta.dim(0))
            fail(Op::JointMix, shape_str(ta.shape()) + " over " + shape_str(tx.shape()));
        const std::size_t T = tx.dim(0), J = tx.dim(1), D = tx.dim(2);
        Tensor out(tx.shape());
        for (std::size_t t = 0; t < T; ++t) {
            const std::size_t base = t * J * D;
            for (std::size_t i = 0; i < J; ++i)
                for (std::size_t j = 0; j < J; ++j) {
                    const double av = ta[i * J + j];
                    if (av == 0.0) continue;
                    const std::size_t src = base + j * D, dst = base + i * D;
                    for (std::size_t d = 0; d < D; ++d) out[dst + d] += av * tx[src + d];
                }
        }
        return push(Op::JointMix, {a.id, x.id}, std::move(out));
    }

    Var time_shift(Var x) {
        const Tensor& tx = val(x);
        if (tx.rank() < 1) fail(Op::TimeShift, "rank-0 input");
        const std::size_t T = tx.dim(0), block = tx.size() / std::max<std::size_t>(T, 1);
        Tensor out(tx.shape());
        for (std::size_t t = 1; t < T; ++t)
            for (std::size_t i = 0; i < block; ++i)
                out[t * block + i] = tx[(t - 1) * block + i];
        return push(Op::TimeShift, {x.id}, std::move(out));
    }

    Var concat(const std::vector<Var>& parts, std::size_t axis) {
        if (parts.empty()) fail(Op::Concat, "no operands");
        const Tensor& first = val(parts[0]);
        if (axis >= first.rank()) fail(Op::Concat, "axis " + std::to_string(axis) +
                                                       " of " + shape_str(first.shape()));
        Shape out_shape = first.shape();
        for (std::size_t p = 1; p < parts.size(); ++p) {
            const Tensor& tp = val(parts[p]);
            Shape expect = tp.shape();
            if (expect.size() != out_shape.size()) fail(Op::Concat, "rank mismatch");
            for (std::size_t d = 0; d < expect.size(); ++d)
                if (d != axis && expect[d] != out_shape[d])
                    fail(Op::Concat, shape_str(first.shape()) + " vs " + shape_str(tp.shape()));
            out_shape[axis] += expect[axis];
        }
        auto [outer, len, inner] = axis_span(out_shape, axis);
        Tensor out(out_shape);
        std::size_t off = 0;  // running offset along the concat axis
        for (const Var& p : parts) {
            const Tensor& tp = val(p);
            const std::size_t plen = tp.dim(axis);
            for (std::size_t o = 0; o < outer; ++o)
                for (std::size_t l = 0; l < plen; ++l)
                    for (std::size_t i = 0; i < inner; ++i)
                        out[(o * len + off + l) * inner + i] = tp[(o * plen + l) * inner + i];
            off += plen;
        }
        std::vector<int> ids;
        ids.reserve(parts.size());
        for (const Var& p : parts) ids.push_back(p.id);
        Var r = push(Op::Concat, ids, std::move(out));
        node(r).axis = axis;
        return r;
    }

    Var mean_axis(Var a, std::size_t axis) {
        const Tensor& ta = val(a);
        if (axis >= ta.rank()) fail(Op::MeanAxis, "axis " + std::to_string(axis) +
                                                      " of " + shape_str(ta.shape()));
        auto [outer, len, inner] = axis_span(ta.shape(), axis);
        Shape out_shape = ta.shape();
        out_shape.erase(out_shape.begin() + axis);
        Tensor out(out_shape);
        const double inv = 1.0 / static_cast<double>(len);
        for (std::size_t o = 0; o < outer; ++o)
            for (std::size_t l = 0; l < len; ++l)
                for (std::size_t i = 0; i < inner; ++i)
                    out[o * inner + i] += ta[(o * len + l) * inner + i] * inv;
        Var r = push(Op::MeanAxis, {a.id}, std::move(out));
        node(r).axis = axis;
        return r;
    }

    Var reshape(Var a, Shape shape) {
        const Tensor& ta = val(a);
        if (shape_size(shape) != ta.size())
            fail(Op::Reshape, shape_str(ta.shape()) + " -> " + shape_str(shape));
        Tensor out(shape, ta.values());
        return push(Op::Reshape, {a.id}, std::move(out));
    }

    Var squared_error(Var a, Var b) {
        const Tensor& ta = val(a);
        const Tensor& tb = val(b);
        if (!ta.same_shape(tb))
            fail(Op::SqErr, shape_str(ta.shape()) + " vs " + shape_str(tb.shape()));
        double s = 0.0;
        for (std::size_t i = 0; i < ta.size(); ++i) {
            const double d = ta[i] - tb[i];
            s += d * d;
        }
        return push(Op::SqErr, {a.id, b.id}, Tensor::scalar(s));
    }

    // -- composites ---------------------------------------------------------

    Var linear(Var w, Var x, Var b) { return add(matmul(w, x), b); }

    /// Mean of a list of scalars (used for per-batch loss normalization).
    Var mean_scalars(const std::vector<Var>& xs) {
        if (xs.empty()) fail(Op::Add, "mean of no scalars");
        Var acc = xs[0];
        for (std::size_t i = 1; i < xs.size(); ++i) acc = add(acc, xs[i]);
        return scale(acc, 1.0 / static_cast<double>(xs.size()));
    }

    // -- evaluation ---------------------------------------------------------

    const Tensor& val(Var v) const { return nodes_.at(check(v)).value; }
    double scalar_val(Var v) const {
        const Tensor& t = val(v);
        if (t.size() != 1)
            throw TapeError("scalar_val: node " + std::to_string(v.id) + " has shape " +
                            shape_str(t.shape()));
        return t[0];
    }
    const Tensor& grad(Var v) const {
        const Node& n = nodes_.at(check(v));
        if (!grads_ready_) throw TapeError("grad: backward() has not run");
        return n.grad;
    }

    /// Reverse sweep from a scalar node. Gradients of every node at or below
    /// `loss` become available through grad().
    void backward(Var loss) {
        const Node& ln = nodes_.at(check(loss));
        if (shape_size(ln.shape) != 1)
            throw TapeError("backward: loss must be a scalar, node " +
                            std::to_string(loss.id) + " has shape " + shape_str(ln.shape));
        for (int i = 0; i <= loss.id; ++i) {
            nodes_[i].grad = Tensor(nodes_[i].shape);
        }
        grads_ready_ = true;
        nodes_[loss.id].grad[0] = 1.0;
        for (int id = loss.id; id >= 0; --id) accumulate_parents(id);
    }

    std::size_t size() const { return nodes_.size(); }

    void reset() {
        nodes_.clear();
        parents_.clear();
        grads_ready_ = false;
    }

private:
    struct Node {
        Op op;
        Shape shape;
        Tensor value;
        Tensor grad;
        std::uint32_t pfirst = 0, pcount = 0;
        double c = 0.0;
        std::size_t axis = 0;
    };

    struct Span {
        std::size_t outer, len, inner;
    };
    static Span axis_span(const Shape& s, std::size_t axis) {
        Span sp{1, s[axis], 1};
        for (std::size_t d = 0; d < axis; ++d) sp.outer *= s[d];
        for (std::size_t d = axis + 1; d < s.size(); ++d) sp.inner *= s[d];
        return sp;
    }

    int check(Var v) const {
        if (!v.valid() || v.id >= static_cast<int>(nodes_.size()))
            throw TapeError("invalid tape handle");
        return v.id;
    }

    Node& node(Var v) { return nodes_[check(v)]; }

    [[noreturn]] void fail(Op op, const std::string& detail) const {
        throw TapeError(std::string("tape node ") + std::to_string(nodes_.size()) + " (" +
                        op_name(op) + "): " + detail);
    }

    Var push(Op op, const std::vector<int>& parents, Tensor value) {
        Node n;
        n.op = op;
        n.shape = value.shape();
        n.value = std::move(value);
        n.pfirst = static_cast<std::uint32_t>(parents_.size());
        n.pcount = static_cast<std::uint32_t>(parents.size());
        parents_.insert(parents_.end(), parents.begin(), parents.end());
        nodes_.push_back(std::move(n));
        grads_ready_ = false;
        return Var{static_cast<int>(nodes_.size() - 1)};
    }

    Var binary_same_shape(Op op, Var a, Var b) {
        const Tensor& ta = val(a);
        const Tensor& tb = val(b);
        if (!ta.same_shape(tb))
            fail(op, shape_str(ta.shape()) + " vs " + shape_str(tb.shape()));
        Tensor out = ta;
        if (op == Op::Add)
            for (std::size_t i = 0; i < out.size(); ++i) out[i] += tb[i];
        else
            for (std::size_t i = 0; i < out.size(); ++i) out[i] -= tb[i];
        return push(op, {a.id, b.id}, std::move(out));
    }

    int parent(const Node& n, std::size_t i) const { return parents_[n.pfirst + i]; }

    void accumulate_parents(int id) {
        Node& n = nodes_[id];
        switch (n.op) {
            case Op::Leaf:
                break;
            case Op::Add: {
                Node& a = nodes_[parent(n, 0)];
                Node& b = nodes_[parent(n, 1)];
                for (std::size_t i = 0; i < n.grad.size(); ++i) {
                    a.grad[i] += n.grad[i];
                    b.grad[i] += n.grad[i];
                }
                break;
            }
            case Op::Sub: {
                Node& a = nodes_[parent(n, 0)];
                Node& b = nodes_[parent(n, 1)];
                for (std::size_t i = 0; i < n.grad.size(); ++i) {
                    a.grad[i] += n.grad[i];
                    b.grad[i] -= n.grad[i];
                }
                break;
            }
            case Op::ScaleConst: {
                Node& a = nodes_[parent(n, 0)];
                for (std::size_t i = 0; i < n.grad.size(); ++i) a.grad[i] += n.c * n.grad[i];
                break;
            }
            case Op::ScaleAxis: {
                Node& a = nodes_[parent(n, 0)];
                Node& v = nodes_[parent(n, 1)];
                auto [outer, len, inner] = axis_span(n.shape, n.axis);
                std::size_t p = 0;
                for (std::size_t o = 0; o < outer; ++o)
                    for (std::size_t l = 0; l < len; ++l) {
                        const double s = v.value[l];
                        double acc = 0.0;
                        for (std::size_t i = 0; i < inner; ++i, ++p) {
                            a.grad[p] += s * n.grad[p];
                            acc += a.value[p] * n.grad[p];
                        }
                        v.grad[l] += acc;
                    }
                break;
            }
            case Op::Relu: {
                Node& a = nodes_[parent(n, 0)];
                for (std::size_t i = 0; i < n.grad.size(); ++i)
                    if (a.value[i] > 0.0) a.grad[i] += n.grad[i];
                break;
            }
            case Op::MatMul: {
                Node& a = nodes_[parent(n, 0)];
                Node& b = nodes_[parent(n, 1)];
                const std::size_t m = a.shape[0], k = a.shape[1];
                const std::size_t cols = b.shape.size() == 2 ? b.shape[1] : 1;
                // dA += g * B^T ; dB += A^T * g
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t l = 0; l < k; ++l) {
                        double acc = 0.0;
                        for (std::size_t j = 0; j < cols; ++j)
                            acc += n.grad[i * cols + j] * b.value[l * cols + j];
                        a.grad[i * k + l] += acc;
                    }
                for (std::size_t l = 0; l < k; ++l)
                    for (std::size_t j = 0; j < cols; ++j) {
                        double acc = 0.0;
                        for (std::size_t i = 0; i < m; ++i)
                            acc += a.value[i * k + l] * n.grad[i * cols + j];
                        b.grad[l * cols + j] += acc;
                    }
                break;
            }
            case Op::JointMix: {
                Node& a = nodes_[parent(n, 0)];
                Node& x = nodes_[parent(n, 1)];
                const std::size_t T = x.shape[0], J = x.shape[1], D = x.shape[2];
                for (std::size_t t = 0; t < T; ++t) {
                    const std::size_t base = t * J * D;
                    for (std::size_t i = 0; i < J; ++i)
                        for (std::size_t j = 0; j < J; ++j) {
                            const std::size_t gi = base + i * D, xj = base + j * D;
                            double acc = 0.0;
                            const double av = a.value[i * J + j];
                            for (std::size_t d = 0; d < D; ++d) {
                                acc += n.grad[gi + d] * x.value[xj + d];
                                x.grad[xj + d] += av * n.grad[gi + d];
                            }
                            a.grad[i * J + j] += acc;
                        }
                }
                break;
            }
            case Op::TimeShift: {
                Node& x = nodes_[parent(n, 0)];
                const std::size_t T = n.shape[0], block = shape_size(n.shape) / T;
                for (std::size_t t = 1; t < T; ++t)
                    for (std::size_t i = 0; i < block; ++i)
                        x.grad[(t - 1) * block + i] += n.grad[t * block + i];
                break;
            }
            case Op::Concat: {
                auto [outer, len, inner] = axis_span(n.shape, n.axis);
                std::size_t off = 0;
                for (std::size_t pi = 0; pi < n.pcount; ++pi) {
                    Node& p = nodes_[parent(n, pi)];
                    const std::size_t plen = p.shape[n.axis];
                    for (std::size_t o = 0; o < outer; ++o)
                        for (std::size_t l = 0; l < plen; ++l)
                            for (std::size_t i = 0; i < inner; ++i)
                                p.grad[(o * plen + l) * inner + i] +=
                                    n.grad[(o * len + off + l) * inner + i];
                    off += plen;
                }
                break;
            }
            case Op::MeanAxis: {
                Node& a = nodes_[parent(n, 0)];
                auto [outer, len, inner] = axis_span(a.shape, n.axis);
                const double inv = 1.0 / static_cast<double>(len);
                for (std::size_t o = 0; o < outer; ++o)
                    for (std::size_t l = 0; l < len; ++l)
                        for (std::size_t i = 0; i < inner; ++i)
                            a.grad[(o * len + l) * inner + i] += n.grad[o * inner + i] * inv;
                break;
            }
            case Op::Reshape: {
                Node& a = nodes_[parent(n, 0)];
                for (std::size_t i = 0; i < n.grad.size(); ++i) a.grad[i] += n.grad[i];
                break;
            }
            case Op::SqErr: {
                Node& a = nodes_[parent(n, 0)];
                Node& b = nodes_[parent(n, 1)];
                const double g = 2.0 * n.grad[0];
                for (std::size_t i = 0; i < a.grad.size(); ++i) {
                    const double d = g * (a.value[i] - b.value[i]);
                    a.grad[i] += d;
                    b.grad[i] -= d;
                }
                break;
            }
        }
    }

    std::vector<Node> nodes_;
    std::vector<int> parents_;
    bool grads_ready_ = false;
};

}  // namespace caqa
