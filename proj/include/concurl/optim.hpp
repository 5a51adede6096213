#pragma once

#include <cmath>
#include <vector>

#include <json.hpp>

#include "concurl/error.hpp"
#include "concurl/tape.hpp"
#include "concurl/tensor.hpp"

namespace concurl {

struct AdamConfig {
    double learning_rate = 5e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    void validate() const {
        if (!(learning_rate > 0)) {
            throw ConfigError("learning_rate must be positive");
        }
        if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1)) {
            throw ConfigError("adam betas must lie in [0, 1)");
        }
        if (!(eps > 0)) {
            throw ConfigError("adam eps must be positive");
        }
    }
};

struct AdamState {
    long long step = 0;
    std::vector<Tensor> m;
    std::vector<Tensor> v;
};

// One bias-corrected Adam update of `params` from their accumulated gradients.
inline void adam_step(const std::vector<Parameter*>& params, AdamState& state, const AdamConfig& cfg) {
    if (state.m.empty()) {
        for (auto* p : params) {
            state.m.emplace_back(p->value.shape());
            state.v.emplace_back(p->value.shape());
        }
    }
    if (state.m.size() != params.size()) {
        throw DimensionError("adam state tracks " + std::to_string(state.m.size()) + " tensors, got " +
                             std::to_string(params.size()));
    }
    ++state.step;
    const double c1 = 1 - std::pow(cfg.beta1, static_cast<double>(state.step));
    const double c2 = 1 - std::pow(cfg.beta2, static_cast<double>(state.step));
    for (std::size_t k = 0; k < params.size(); ++k) {
        auto& p = *params[k];
        if (p.grad.empty()) {
            p.grad = Tensor(p.value.shape());
        }
        if (p.grad.shape() != p.value.shape() || state.m[k].shape() != p.value.shape()) {
            throw DimensionError("adam: gradient or state shape differs for " + p.name);
        }
        auto& m = state.m[k];
        auto& v = state.v[k];
        for (std::size_t i = 0; i < p.value.size(); ++i) {
            const double g = p.grad[i];
            m[i] = static_cast<Real>(cfg.beta1 * m[i] + (1 - cfg.beta1) * g);
            v[i] = static_cast<Real>(cfg.beta2 * v[i] + (1 - cfg.beta2) * g * g);
            const double mhat = m[i] / c1;
            const double vhat = v[i] / c2;
            p.value[i] -= static_cast<Real>(cfg.learning_rate * mhat / (std::sqrt(vhat) + cfg.eps));
        }
    }
}

}  // namespace concurl
