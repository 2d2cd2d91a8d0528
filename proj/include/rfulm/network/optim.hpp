#pragma once

#include <cmath>
#include <numbers>
#include <vector>

#include "rfulm/network/model.hpp"

namespace rfulm {

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

template <typename T>
struct AdamState {
    Gradients<T> m, v;
    long step = 0;
    long skipped = 0;
};

template <typename T>
AdamState<T> adam_init(const SgSpcn<T>& net) {
    return {net.zero_gradients(), net.zero_gradients(), 0, 0};
}

/// lr0 * 0.5 * (1 + cos(pi t / T)).
inline double cosine_lr(double lr0, double t, double T) {
    if (!(T > 0.0)) return lr0;
    return lr0 * 0.5 * (1.0 + std::cos(std::numbers::pi * t / T));
}

/// One Adam update with decoupled weight decay. Returns false and leaves
/// parameters untouched when a gradient is non-finite.
template <typename T>
bool adam_step(std::vector<Tensor<T>*> params, const std::vector<const Tensor<T>*>& grads,
               std::vector<Tensor<T>*> m, std::vector<Tensor<T>*> v, long& step, double lr, double weight_decay,
               const AdamConfig& cfg = {}) {
    if (params.size() != grads.size() || params.size() != m.size() || params.size() != v.size()) {
        throw DimensionError("adam_step: parameter and gradient lists differ");
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        params[i]->require_same_shape(*grads[i]);
        if (!grads[i]->all_finite()) return false;
    }
    ++step;
    const double c1 = 1.0 - std::pow(cfg.beta1, double(step));
    const double c2 = 1.0 - std::pow(cfg.beta2, double(step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor<T>& p = *params[i];
        const Tensor<T>& g = *grads[i];
        Tensor<T>& mi = *m[i];
        Tensor<T>& vi = *v[i];
        for (std::size_t j = 0; j < p.size(); ++j) {
            const double gj = double(g[j]);
            const double mj = cfg.beta1 * double(mi[j]) + (1.0 - cfg.beta1) * gj;
            const double vj = cfg.beta2 * double(vi[j]) + (1.0 - cfg.beta2) * gj * gj;
            mi[j] = T(mj);
            vi[j] = T(vj);
            const double update = (mj / c1) / (std::sqrt(vj / c2) + cfg.eps) + weight_decay * double(p[j]);
            p[j] = T(double(p[j]) - lr * update);
        }
    }
    return true;
}

/// Adam over every layer of `net`.
template <typename T>
bool adam_step(SgSpcn<T>& net, const Gradients<T>& grads, AdamState<T>& state, double lr, double weight_decay,
               const AdamConfig& cfg = {}) {
    std::vector<Tensor<T>*> p, m, v;
    std::vector<const Tensor<T>*> g;
    auto& layers = net.layers();
    for (std::size_t i = 0; i < layers.size(); ++i) {
        p.push_back(&layers[i].weight);
        p.push_back(&layers[i].bias);
        g.push_back(&grads.weight[i]);
        g.push_back(&grads.bias[i]);
        m.push_back(&state.m.weight[i]);
        m.push_back(&state.m.bias[i]);
        v.push_back(&state.v.weight[i]);
        v.push_back(&state.v.bias[i]);
    }
    const bool ok = adam_step(p, g, m, v, state.step, lr, weight_decay, cfg);
    if (!ok) ++state.skipped;
    return ok;
}

}  // namespace rfulm
