#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "caqa/params.hpp"

namespace caqa {

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 1e-5;  // decoupled, scaled by the group learning rate
};

struct LearningRates {
    double graph = 0.01;
    double other = 0.001;

    double for_group(ParamGroup g) const { return g == ParamGroup::Graph ? graph : other; }
};

/// Adam with bias correction and decoupled weight decay. Moment slots are kept
/// parallel to the ParamSet; parameters added after construction (task-specific
/// graphs appear one task at a time) get fresh slots via ensure().
class AdamState {
public:
    AdamState() = default;
    explicit AdamState(const ParamSet& ps) { ensure(ps); }

    void ensure(const ParamSet& ps) {
        while (slots_.size() < ps.size()) {
            const Shape& s = ps.entry(slots_.size()).value.shape();
            slots_.push_back(Slot{Tensor(s), Tensor(s), 0});
        }
    }

    void update(ParamSet& params, const Grads& grads, const LearningRates& lrs,
                const AdamConfig& cfg) {
        if (grads.by_param.size() != params.size())
            throw std::invalid_argument("AdamState::update: gradient for " +
                                        std::to_string(grads.by_param.size()) + " of " +
                                        std::to_string(params.size()) + " parameters");
        ensure(params);
        for (std::size_t p = 0; p < params.size(); ++p) {
            auto& e = params.entry(p);
            const Tensor& g = grads.by_param[p];
            if (!g.same_shape(e.value))
                throw std::invalid_argument("AdamState::update: gradient shape " +
                                            shape_str(g.shape()) + " for parameter '" +
                                            e.name + "' " + shape_str(e.value.shape()));
            Slot& s = slots_[p];
            s.step += 1;
            const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(s.step));
            const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(s.step));
            const double lr = lrs.for_group(e.group);
            for (std::size_t i = 0; i < g.size(); ++i) {
                s.m[i] = cfg.beta1 * s.m[i] + (1.0 - cfg.beta1) * g[i];
                s.v[i] = cfg.beta2 * s.v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
                const double mhat = s.m[i] / bc1;
                const double vhat = s.v[i] / bc2;
                e.value[i] -= lr * (mhat / (std::sqrt(vhat) + cfg.eps) +
                                    cfg.weight_decay * e.value[i]);
            }
        }
    }

    struct Slot {
        Tensor m, v;
        std::uint64_t step = 0;
    };

    std::size_t size() const { return slots_.size(); }
    const Slot& slot(std::size_t i) const { return slots_[i]; }
    Slot& slot(std::size_t i) { return slots_[i]; }

private:
    std::vector<Slot> slots_;
};

}  // namespace caqa
