#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "fedmode/tensor.hpp"

namespace fedmode::nn {

struct AdamState {
    double lr = 0.001;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::uint64_t t = 0;
    std::vector<std::vector<double>> m;
    std::vector<std::vector<double>> v;

    AdamState() = default;
    AdamState(const ParamSet& params, double learning_rate);
};

/// One bias-corrected Adam update. `grads[i]` must match `params[i]` in shape.
void adam_step(ParamSet& params, std::span<const Tensor> grads, AdamState& state);

}  // namespace fedmode::nn
