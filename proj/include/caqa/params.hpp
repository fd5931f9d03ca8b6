#pragma once

#include <functional>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "caqa/tape.hpp"
#include "caqa/tensor.hpp"

namespace caqa {

/// Learning-rate group of a parameter: joint graphs train at a higher rate
/// than the rest of the model.
enum class ParamGroup : std::uint8_t { Graph, Other };

inline const char* group_name(ParamGroup g) {
    return g == ParamGroup::Graph ? "graph" : "other";
}

/// Ordered collection of named parameters. Insertion order is stable and is
/// the canonical order for gradients, optimizer slots and serialization.
class ParamSet {
public:
    struct Entry {
        std::string name;
        Tensor value;
        ParamGroup group;
    };

    std::size_t add(std::string name, Tensor value, ParamGroup group) {
        if (index_.count(name))
            throw std::invalid_argument("ParamSet: duplicate parameter '" + name + "'");
        index_.emplace(name, entries_.size());
        entries_.push_back(Entry{std::move(name), std::move(value), group});
        return entries_.size() - 1;
    }

    bool contains(const std::string& name) const { return index_.count(name) != 0; }

    std::size_t index_of(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end())
            throw std::out_of_range("ParamSet: unknown parameter '" + name + "'");
        return it->second;
    }

    Tensor& at(const std::string& name) { return entries_[index_of(name)].value; }
    const Tensor& at(const std::string& name) const { return entries_[index_of(name)].value; }

    Entry& entry(std::size_t i) { return entries_[i]; }
    const Entry& entry(std::size_t i) const { return entries_[i]; }

    std::size_t size() const { return entries_.size(); }

    std::size_t scalar_count() const {
        std::size_t n = 0;
        for (const Entry& e : entries_) n += e.value.size();
        return n;
    }

    auto begin() const { return entries_.begin(); }
    auto end() const { return entries_.end(); }

private:
    std::vector<Entry> entries_;
    std::unordered_map<std::string, std::size_t> index_;
};

/// Gradient container parallel to a ParamSet (same order, same shapes).
struct Grads {
    std::vector<Tensor> by_param;

    static Grads zeros_like(const ParamSet& ps) {
        Grads g;
        g.by_param.reserve(ps.size());
        for (const auto& e : ps) g.by_param.emplace_back(e.value.shape());
        return g;
    }

    double max_abs() const {
        double m = 0.0;
        for (const Tensor& t : by_param)
            for (double v : t.values()) m = std::max(m, std::fabs(v));
        return m;
    }
};

/// Parameters bound onto a tape as leaf nodes, addressable by name.
class BoundParams {
public:
    BoundParams(Tape& tape, const ParamSet& ps) : set_(&ps) {
        vars_.reserve(ps.size());
        for (const auto& e : ps) vars_.push_back(tape.leaf(e.value));
    }

    Var operator[](const std::string& name) const { return vars_[set_->index_of(name)]; }
    Var by_index(std::size_t i) const { return vars_[i]; }
    std::size_t size() const { return vars_.size(); }

private:
    const ParamSet* set_;
    std::vector<Var> vars_;
};

/// A differentiable computation: builds the tape from bound parameters and
/// returns the scalar node to differentiate.
using Program = std::function<Var(Tape&, const BoundParams&)>;

struct EvalResult {
    double loss = 0.0;
    Grads grads;
};

inline double eval_loss(const Program& program, const ParamSet& params) {
    Tape tape;
    BoundParams bound(tape, params);
    Var loss = program(tape, bound);
    return tape.scalar_val(loss);
}

/// Forward evaluation plus exact reverse-mode gradients of the scalar output
/// with respect to every parameter.
inline EvalResult forward_backward(const Program& program, const ParamSet& params) {
    Tape tape;
    BoundParams bound(tape, params);
    Var loss = program(tape, bound);
    tape.backward(loss);
    EvalResult r;
    r.loss = tape.scalar_val(loss);
    r.grads.by_param.reserve(params.size());
    for (std::size_t i = 0; i < params.size(); ++i)
        r.grads.by_param.push_back(tape.grad(bound.by_index(i)));
    return r;
}

/// Independent gradient oracle: central differences per coordinate,
/// (L(p+h) - L(p-h)) / 2h. Only uses forward evaluation.
inline Grads finite_diff_gradient(const Program& program, const ParamSet& params, double h) {
    if (h <= 0.0) throw std::invalid_argument("finite_diff_gradient: h must be positive");
    ParamSet work;
    for (const auto& e : params) work.add(e.name, e.value, e.group);
    Grads g = Grads::zeros_like(params);
    for (std::size_t p = 0; p < params.size(); ++p) {
        Tensor& t = work.entry(p).value;
        for (std::size_t i = 0; i < t.size(); ++i) {
            const double orig = t[i];
            t[i] = orig + h;
            const double up = eval_loss(program, work);
            t[i] = orig - h;
            const double dn = eval_loss(program, work);
            t[i] = orig;
            g.by_param[p][i] = (up - dn) / (2.0 * h);
        }
    }
    return g;
}

/// Worst-case relative disagreement between two gradient sets, with a small
/// absolute floor so near-zero coordinates are compared absolutely.
inline double max_relative_error(const Grads& a, const Grads& b, double floor = 1e-3) {
    if (a.by_param.size() != b.by_param.size())
        throw std::invalid_argument("max_relative_error: mismatched gradient sets");
    double worst = 0.0;
    for (std::size_t p = 0; p < a.by_param.size(); ++p) {
        const Tensor& ta = a.by_param[p];
        const Tensor& tb = b.by_param[p];
        for (std::size_t i = 0; i < ta.size(); ++i) {
            const double denom = std::max({std::fabs(ta[i]), std::fabs(tb[i]), floor});
            worst = std::max(worst, std::fabs(ta[i] - tb[i]) / denom);
        }
    }
    return worst;
}

}  // namespace caqa
