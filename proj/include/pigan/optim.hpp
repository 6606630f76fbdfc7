#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "pigan/rng.hpp"
#include "pigan/tensor.hpp"

namespace pigan {

struct NamedTensor {
    std::string name;
    Tensor tensor;
};

/// Adam moments and hyper-parameters for one parameter group. `m` and `v`
/// are allocated on the first step and follow the order of the group.
struct AdamState {
    double learning_rate = 0.0002;
    double beta1 = 0.5;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    std::uint64_t step_count = 0;
    std::vector<Tensor> m;
    std::vector<Tensor> v;
};

/// One bias-corrected Adam update over `params`, then clears their grads.
/// Throws if a parameter carries no gradient.
void adam_step(std::span<const NamedTensor> params, AdamState& state);

void zero_grads(std::span<const NamedTensor> params);

/// Normal(mean, std^2) samples drawn from `rng`.
Tensor normal_init(const Shape& shape, double mean, double std, Rng& rng, bool requires_grad = false);
Tensor normal_init(const Shape& shape, double mean, double std, std::uint64_t seed, bool requires_grad = false);

}  // namespace pigan
