#pragma once

#include <cmath>
#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

#include "convatt/encoder.hpp"

namespace convatt {

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-6;
    double weight_decay = 0.01;
};

/// Optimizer moments, step counter and RNG position; the mutable half of a checkpoint.
struct TrainState {
    uint64_t step = 0;
    std::vector<std::pair<std::string, Tensor>> m;  // first moments, parallel to params
    std::vector<std::pair<std::string, Tensor>> v;  // second moments
    std::string rng_state;                          // serialized mt19937_64 stream
    uint64_t warmup_steps = 0;
    uint64_t total_steps = 0;
    double peak_lr = 0.0;

    static TrainState init(const ParamStore& params, uint64_t warmup, uint64_t total,
                           double peak) {
        TrainState s;
        s.warmup_steps = warmup;
        s.total_steps = total;
        s.peak_lr = peak;
        for (auto& [name, t] : params.items) {
            s.m.emplace_back(name, Tensor(t.shape));
            s.v.emplace_back(name, Tensor(t.shape));
        }
        return s;
    }
};

/// Linear 0 -> peak over warmup steps, then linear peak -> 0 at total.
inline double lr_schedule(uint64_t step, uint64_t warmup, uint64_t total, double peak) {
    if (warmup > total) throw config_error("lr_schedule: warmup exceeds total steps");
    if (step > total) throw config_error("lr_schedule: step exceeds total steps");
    if (warmup > 0 && step <= warmup) return peak * static_cast<double>(step) / warmup;
    if (total == warmup) return peak;
    return peak * static_cast<double>(total - step) / static_cast<double>(total - warmup);
}

/// One bias-corrected Adam step with decoupled weight decay. One-dimensional
/// parameters (biases, layer-norm gains) are excluded from decay.
inline void adam_step(ParamStore& params, const std::vector<Tensor>& grads, TrainState& state,
                      const AdamConfig& cfg, double lr) {
    if (grads.size() != params.items.size())
        throw dimension_error("adam_step: gradient count does not match parameters");
    state.step += 1;
    double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
    double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
    for (size_t i = 0; i < params.items.size(); ++i) {
        Tensor& p = params.items[i].second;
        const Tensor& g = grads[i];
        if (!p.same_shape(g))
            throw dimension_error("adam_step: gradient shape mismatch for " +
                                  params.items[i].first);
        Tensor& m = state.m[i].second;
        Tensor& v = state.v[i].second;
        bool decay = cfg.weight_decay > 0.0 && p.shape.size() > 1;
        for (size_t j = 0; j < p.data.size(); ++j) {
            m.data[j] = cfg.beta1 * m.data[j] + (1.0 - cfg.beta1) * g.data[j];
            v.data[j] = cfg.beta2 * v.data[j] + (1.0 - cfg.beta2) * g.data[j] * g.data[j];
            double mhat = m.data[j] / bc1;
            double vhat = v.data[j] / bc2;
            p.data[j] -= lr * mhat / (std::sqrt(vhat) + cfg.eps);
            if (decay) p.data[j] -= lr * cfg.weight_decay * p.data[j];
        }
    }
}

}  // namespace convatt
