#pragma once

#include <cmath>
#include <cstdint>

#include "paretoq/matrix.hpp"

namespace paretoq {

struct AdamWConfig {
    float lr = 1e-3f;
    float beta1 = 0.9f;
    float beta2 = 0.999f;
    float eps = 1e-8f;
    float weight_decay = 0.0f; // decoupled; quantization-aware runs keep this at 0
};

/// Per-parameter optimizer state. Moments are allocated lazily on the first
/// step so a state object can be declared before the parameter shape is known.
struct AdamWState {
    Matrix m;
    Matrix v;
    std::int64_t t = 0;
};

/// One decoupled-weight-decay Adam step with bias correction.
inline void adamw_step(Matrix& param, const Matrix& grad, AdamWState& state, const AdamWConfig& cfg) {
    check_same_shape(param, grad, "adamw_step");
    if (state.t == 0) {
        state.m = Matrix(param.rows, param.cols);
        state.v = Matrix(param.rows, param.cols);
    }
    check_same_shape(param, state.m, "adamw_step state");
    state.t += 1;
    const float bc1 = 1.0f - std::pow(cfg.beta1, static_cast<float>(state.t));
    const float bc2 = 1.0f - std::pow(cfg.beta2, static_cast<float>(state.t));
    for (std::size_t i = 0; i < param.size(); ++i) {
        const float g = grad.data[i];
        state.m.data[i] = cfg.beta1 * state.m.data[i] + (1.0f - cfg.beta1) * g;
        state.v.data[i] = cfg.beta2 * state.v.data[i] + (1.0f - cfg.beta2) * g * g;
        const float mhat = state.m.data[i] / bc1;
        const float vhat = state.v.data[i] / bc2;
        param.data[i] -= cfg.lr * (mhat / (std::sqrt(vhat) + cfg.eps) + cfg.weight_decay * param.data[i]);
    }
}

/// Cosine decay from base_lr at step 0 to exactly 0 at total_steps.
/// Each training phase restarts the schedule from its own step 0.
inline float cosine_lr(float base_lr, std::int64_t step, std::int64_t total_steps) {
    if (total_steps <= 0) return base_lr;
    if (step <= 0) return base_lr;
    if (step >= total_steps) return 0.0f;
    const double frac = static_cast<double>(step) / static_cast<double>(total_steps);
    return static_cast<float>(0.5 * static_cast<double>(base_lr) * (1.0 + std::cos(frac * 3.14159265358979323846)));
}

/// Keep quantizer scales strictly positive after an optimizer step.
inline void clamp_min(Matrix& m, float floor) {
    for (float& x : m.data)
        if (x < floor) x = floor;
}

} // namespace paretoq
