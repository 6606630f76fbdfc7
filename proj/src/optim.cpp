#include "pigan/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace pigan {

void adam_step(std::span<const NamedTensor> params, AdamState& state)
{
    for (const auto& p : params)
        if (!p.tensor.has_grad()) throw std::invalid_argument("adam_step: parameter '" + p.name + "' has no gradient");

    if (state.m.empty()) {
        for (const auto& p : params) {
            state.m.push_back(Tensor::zeros(p.tensor.shape()));
            state.v.push_back(Tensor::zeros(p.tensor.shape()));
        }
    }
    if (state.m.size() != params.size()) throw std::invalid_argument("adam_step: parameter group changed size");

    state.step_count += 1;
    const double t = static_cast<double>(state.step_count);
    const double bc1 = 1.0 - std::pow(state.beta1, t);
    const double bc2 = 1.0 - std::pow(state.beta2, t);
    for (std::size_t k = 0; k < params.size(); ++k) {
        Tensor w = params[k].tensor;
        if (state.m[k].shape() != w.shape())
            throw std::invalid_argument("adam_step: moment shape mismatch for '" + params[k].name + "'");
        auto data = w.mutable_data();
        auto grad = w.grad();
        auto m = state.m[k].mutable_data();
        auto v = state.v[k].mutable_data();
        for (std::size_t i = 0; i < data.size(); ++i) {
            const double g = grad[i];
            const double mi = state.beta1 * m[i] + (1.0 - state.beta1) * g;
            const double vi = state.beta2 * v[i] + (1.0 - state.beta2) * g * g;
            m[i] = static_cast<float>(mi);
            v[i] = static_cast<float>(vi);
            const double step = state.learning_rate * (mi / bc1) / (std::sqrt(vi / bc2) + state.epsilon);
            data[i] = static_cast<float>(data[i] - step);
        }
        w.zero_grad();
    }
}

void zero_grads(std::span<const NamedTensor> params)
{
    for (const auto& p : params) {
        Tensor t = p.tensor;
        t.zero_grad();
    }
}

Tensor normal_init(const Shape& shape, double mean, double std, Rng& rng, bool requires_grad)
{
    if (!(std > 0.0)) throw std::invalid_argument("normal_init: std must be positive, got " + std::to_string(std));
    std::vector<float> data(shape_numel(shape));
    for (auto& v : data) v = static_cast<float>(mean + std * rng.normal());
    return Tensor(shape, std::move(data), requires_grad);
}

Tensor normal_init(const Shape& shape, double mean, double std, std::uint64_t seed, bool requires_grad)
{
    Rng rng(seed);
    return normal_init(shape, mean, std, rng, requires_grad);
}

}  // namespace pigan
