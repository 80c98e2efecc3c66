#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "urbanverse/numerics/tensor.hpp"

namespace uv::num {

enum class OptKind { Adam, AdamW };

// Adam / AdamW moment accumulators, one slot per registered parameter.
// Slots are keyed by position, so the parameter list must keep a stable
// order across steps.
template <class R>
struct OptimizerStateT {
    OptKind kind = OptKind::Adam;
    double learningRate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weightDecay = 0.0;  // decoupled, AdamW only
    int64_t step = 0;
    std::vector<std::vector<R>> m;
    std::vector<std::vector<R>> v;

    static OptimizerStateT adam(double lr) {
        OptimizerStateT s;
        s.kind = OptKind::Adam;
        s.learningRate = lr;
        return s;
    }

    static OptimizerStateT adamW(double lr, double decay) {
        OptimizerStateT s;
        s.kind = OptKind::AdamW;
        s.learningRate = lr;
        s.weightDecay = decay;
        return s;
    }
};

using OptimizerState = OptimizerStateT<float>;

template <class R>
void optimizerStep(ParamList<R>& params, OptimizerStateT<R>& state) {
    if (state.m.empty()) {
        state.m.resize(params.size());
        state.v.resize(params.size());
        for (size_t i = 0; i < params.size(); ++i) {
            state.m[i].assign(params[i].tensor.value().size(), R(0));
            state.v[i].assign(params[i].tensor.value().size(), R(0));
        }
    }
    if (state.m.size() != params.size())
        throw ConfigError("optimizer state tracks " + std::to_string(state.m.size()) +
                          " parameters, got " + std::to_string(params.size()));

    state.step += 1;
    const double b1t = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
    const double b2t = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
    const R lr = static_cast<R>(state.learningRate);
    const R b1 = static_cast<R>(state.beta1), b2 = static_cast<R>(state.beta2);
    const R eps = static_cast<R>(state.eps);
    const R ic1 = static_cast<R>(1.0 / b1t), ic2 = static_cast<R>(1.0 / b2t);

    for (size_t i = 0; i < params.size(); ++i) {
        auto& t = params[i].tensor;
        auto& val = t.value();
        auto& g = t.grad();
        if (state.m[i].size() != val.size())
            throw ConfigError("optimizer slot size mismatch for " + params[i].name);
        auto& mi = state.m[i];
        auto& vi = state.v[i];
        for (size_t j = 0; j < val.size(); ++j) {
            mi[j] = b1 * mi[j] + (R(1) - b1) * g[j];
            vi[j] = b2 * vi[j] + (R(1) - b2) * g[j] * g[j];
            const R mhat = mi[j] * ic1;
            const R vhat = vi[j] * ic2;
            val[j] -= lr * mhat / (std::sqrt(vhat) + eps);
            if (state.kind == OptKind::AdamW && state.weightDecay != 0.0)
                val[j] -= lr * static_cast<R>(state.weightDecay) * val[j];
        }
    }
}

}  // namespace uv::num
