#pragma once

#include <cmath>

#include "sbnn/error.hpp"
#include "sbnn/tensor.hpp"

namespace sbnn {

// Per-parameter Adam state with an exponentially decaying learning rate
// lr(e) = lr0 * decay^e.
struct AdamState {
    Tensor m;
    Tensor v;
    long step = 0;
    float lr0 = 1e-3f;
    float decay = 0.95f;
    float beta1 = 0.9f;
    float beta2 = 0.999f;
    float eps = 1e-8f;

    AdamState() = default;
    AdamState(const std::vector<int>& shape, float lr0_, float decay_)
        : m(shape, 0.0f), v(shape, 0.0f), lr0(lr0_), decay(decay_) {}
};

inline float adam_lr(const AdamState& s, int epoch) {
    return s.lr0 * static_cast<float>(std::pow(static_cast<double>(s.decay), epoch));
}

namespace detail {

inline void adam_update(AdamState& s, float* param, const float* grad, size_t n,
                        int epoch) {
    ++s.step;
    const float lr = adam_lr(s, epoch);
    const float c1 = 1.0f - static_cast<float>(
                                std::pow(static_cast<double>(s.beta1), s.step));
    const float c2 = 1.0f - static_cast<float>(
                                std::pow(static_cast<double>(s.beta2), s.step));
    for (size_t i = 0; i < n; ++i) {
        const float g = grad[i];
        s.m[i] = s.beta1 * s.m[i] + (1.0f - s.beta1) * g;
        s.v[i] = s.beta2 * s.v[i] + (1.0f - s.beta2) * g * g;
        const float mhat = s.m[i] / c1;
        const float vhat = s.v[i] / c2;
        param[i] -= lr * mhat / (std::sqrt(vhat) + s.eps);
    }
}

}  // namespace detail

inline void adam_step(AdamState& s, Tensor& param, const Tensor& grad,
                      int epoch) {
    if (!param.same_shape(grad) || !param.same_shape(s.m))
        throw ShapeMismatch("adam_step: param/grad/state shapes disagree");
    detail::adam_update(s, param.data(), grad.data(), param.size(), epoch);
}

inline void adam_step(AdamState& s, std::vector<float>& param,
                      const std::vector<float>& grad, int epoch) {
    if (param.size() != grad.size() || param.size() != s.m.size())
        throw ShapeMismatch("adam_step: param/grad/state sizes disagree");
    detail::adam_update(s, param.data(), grad.data(), param.size(), epoch);
}

}  // namespace sbnn
