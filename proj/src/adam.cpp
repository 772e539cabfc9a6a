#include "fedmode/adam.hpp"

#include <cmath>

#include "fedmode/error.hpp"

namespace fedmode::nn {

AdamState::AdamState(const ParamSet& params, double learning_rate) : lr(learning_rate) {
    for (const auto& p : params) {
        m.emplace_back(p.value.size(), 0.0);
        v.emplace_back(p.value.size(), 0.0);
    }
}

void adam_step(ParamSet& params, std::span<const Tensor> grads, AdamState& state) {
    if (grads.size() != params.size() || state.m.size() != params.size() || state.v.size() != params.size()) {
        throw Error(ErrorCode::ShapeMismatch, "adam: parameter/gradient/state counts differ");
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (grads[i].shape() != params[i].value.shape() || state.m[i].size() != params[i].value.size()) {
            throw Error(ErrorCode::ShapeMismatch, "adam: gradient for '" + params[i].name + "' has shape " +
                                                      shape_string(grads[i].shape()));
        }
    }
    ++state.t;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
    for (std::size_t i = 0; i < params.size(); ++i) {
        double* w = params[i].value.ptr();
        const double* g = grads[i].ptr();
        double* m = state.m[i].data();
        double* v = state.v[i].data();
        const std::size_t n = params[i].value.size();
        for (std::size_t k = 0; k < n; ++k) {
            m[k] = state.beta1 * m[k] + (1.0 - state.beta1) * g[k];
            v[k] = state.beta2 * v[k] + (1.0 - state.beta2) * g[k] * g[k];
            const double m_hat = m[k] / bc1;
            const double v_hat = v[k] / bc2;
            w[k] -= state.lr * m_hat / (std::sqrt(v_hat) + state.eps);
        }
    }
}

}  // namespace fedmode::nn
