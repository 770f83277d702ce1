#pragma once

#include <cmath>
#include <random>
#include <vector>

#include "sbnn/error.hpp"
#include "sbnn/layer_ops.hpp"
#include "sbnn/tensor.hpp"

namespace sbnn {

enum class BinMode {
    Soft,              // W = tanh(nu*P), fully differentiable
    HardSTE,           // W = sign(P), straight-through gradient
    HardSTEWithAlpha,  // W = alpha * sign(P), gradient through alpha*tanh(nu*P)
};

inline const char* to_string(BinMode m) {
    switch (m) {
        case BinMode::Soft: return "soft";
        case BinMode::HardSTE: return "hard_ste";
        case BinMode::HardSTEWithAlpha: return "hard_ste_alpha";
    }
    return "?";
}

// Per-output-channel least-squares scale. Channels where tanh(nu*W) is
// identically zero get alpha = 1 and are flagged.
struct AlphaScale {
    std::vector<float> alpha;
    std::vector<uint8_t> degenerate;

    int channels() const { return static_cast<int>(alpha.size()); }
};

// alpha_c = (W . tanh(nu W)) / (tanh(nu W) . tanh(nu W)) over each output
// channel (first axis) of the weight tensor.
inline AlphaScale alpha_optimal(const Tensor& w_eff, float nu) {
    const int channels = w_eff.dim(0);
    const size_t per = w_eff.size() / static_cast<size_t>(channels);
    if (per == 0) throw ShapeMismatch("alpha_optimal: empty channel");
    AlphaScale out;
    out.alpha.resize(channels);
    out.degenerate.assign(channels, 0);
    for (int c = 0; c < channels; ++c) {
        const float* p = w_eff.data() + static_cast<size_t>(c) * per;
        double s1 = 0.0, s2 = 0.0;
        for (size_t i = 0; i < per; ++i) {
            const double f = std::tanh(static_cast<double>(nu) * p[i]);
            s1 += p[i] * f;
            s2 += f * f;
        }
        if (s2 == 0.0) {
            out.alpha[c] = 1.0f;
            out.degenerate[c] = 1;
        } else {
            out.alpha[c] = static_cast<float>(s1 / s2);
        }
    }
    return out;
}


// Gradient of the cost through B = alpha(W) * tanh(nu*W), per channel:
//   dC/dW_i = dalpha/dW_i * sum_j(dC/dB_j * F_j) + alpha * dC/dB_i * F'_i
// with F = tanh(nu*W). Degenerate channels drop the dalpha term.
inline Tensor alpha_chain_backward(const Tensor& grad_b, const Tensor& w,
                                   const AlphaScale& alpha, float nu) {
    check_same_shape(grad_b, w, "alpha_chain_backward");
    const int channels = w.dim(0);
    if (alpha.channels() != channels)
        throw ChannelMismatch("alpha_chain_backward: channel count mismatch");
    const size_t per = w.size() / static_cast<size_t>(channels);

    Tensor out(w.shape(), 0.0f);
    std::vector<double> f(per), fprime(per);
    for (int c = 0; c < channels; ++c) {
        const float* pw = w.data() + static_cast<size_t>(c) * per;
        const float* pg = grad_b.data() + static_cast<size_t>(c) * per;
        float* po = out.data() + static_cast<size_t>(c) * per;

        double s1 = 0.0, s2 = 0.0, gdotf = 0.0;
        for (size_t i = 0; i < per; ++i) {
            f[i] = std::tanh(static_cast<double>(nu) * pw[i]);
            fprime[i] = nu * (1.0 - f[i] * f[i]);
            s1 += pw[i] * f[i];
            s2 += f[i] * f[i];
            gdotf += pg[i] * f[i];
        }
        const double a = alpha.alpha[c];
        const bool degenerate = alpha.degenerate[c] != 0;
        for (size_t i = 0; i < per; ++i) {
            double g = a * pg[i] * fprime[i];
            if (!degenerate) {
                const double dalpha =
                    ((f[i] + pw[i] * fprime[i]) * s2 - s1 * 2.0 * f[i] * fprime[i]) /
                    (s2 * s2);
                g += dalpha * gdotf;
            }
            po[i] = static_cast<float>(g);
        }
    }
    return out;
}

// Learnable latent parameters P plus the mode-dependent forward weights:
// soft self-binarization keeps W = tanh(nu*P); the hard baselines forward
// sign(P), optionally scaled per channel.
class ConstrainedWeights {
public:
    ConstrainedWeights() = default;
    ConstrainedWeights(std::vector<int> shape, BinMode mode)
        : mode_(mode), latent_(std::move(shape), 0.0f) {}

    BinMode mode() const { return mode_; }
    Tensor& latent() { return latent_; }
    const Tensor& latent() const { return latent_; }

    void init_uniform(std::mt19937& rng, float range = 0.1f) {
        std::uniform_real_distribution<float> dist(-range, range);
        for (auto& v : latent_.vec()) v = dist(rng);
    }

    // Recomputes the forward-weight cache for the given sharpness. Must be
    // called at epoch start and after every optimizer step.
    void refresh(float nu) {
        nu_ = nu;
        switch (mode_) {
            case BinMode::Soft:
                weights_ = scaled_tanh_forward(latent_, nu);
                break;
            case BinMode::HardSTE:
                weights_ = sign_forward(latent_);
                break;
            case BinMode::HardSTEWithAlpha: {
                alpha_ = alpha_optimal(latent_, nu);
                weights_ = sign_forward(latent_);
                const int channels = latent_.dim(0);
                const size_t per = weights_.size() / static_cast<size_t>(channels);
                for (int c = 0; c < channels; ++c) {
                    float* p = weights_.data() + static_cast<size_t>(c) * per;
                    for (size_t i = 0; i < per; ++i) p[i] *= alpha_.alpha[c];
                }
                break;
            }
        }
        fresh_ = true;
    }

    const Tensor& forward_weights() const {
        if (!fresh_) throw StaleCache("forward_weights before refresh");
        return weights_;
    }

    float current_nu() const { return nu_; }
    const AlphaScale& alpha() const { return alpha_; }

    // Chains a gradient w.r.t. the forward weights back to the latent P.
    // Soft mode applies dW/dP = nu * sech^2(nu*P), i.e. nu * (1 - W^2).
    Tensor grad_latent(const Tensor& grad_w) const {
        if (!fresh_) throw StaleCache("grad_latent before refresh");
        switch (mode_) {
            case BinMode::Soft:
                return scaled_tanh_backward(latent_, nu_, grad_w);
            case BinMode::HardSTE:
                return ste_backward(latent_, grad_w);
            case BinMode::HardSTEWithAlpha:
                return alpha_chain_backward(grad_w, latent_, alpha_, nu_);
        }
        throw WrongMode("unknown binarization mode");
    }

    // Hard baselines keep latent weights in [-1,1] so the STE pass-through
    // region stays meaningful; no-op in soft mode.
    void clip_latent() {
        if (mode_ == BinMode::Soft) return;
        for (auto& v : latent_.vec()) v = std::clamp(v, -1.0f, 1.0f);
    }

    // The floating-point weights the binary pattern approximates: tanh(nu*P)
    // in soft mode, the (clipped) latent weights in hard modes.
    Tensor effective_float_weights(float nu) const {
        if (mode_ == BinMode::Soft) return scaled_tanh_forward(latent_, nu);
        return latent_;
    }

    void invalidate() { fresh_ = false; }

private:
    BinMode mode_ = BinMode::Soft;
    Tensor latent_;
    Tensor weights_;
    AlphaScale alpha_;
    float nu_ = 1.0f;
    bool fresh_ = false;
};

// Spec-level soft-mode entry points; the class dispatches these internally.
inline void refresh_weights(ConstrainedWeights& cw, float nu) {
    if (cw.mode() != BinMode::Soft)
        throw WrongMode("refresh_weights requires soft mode");
    cw.refresh(nu);
}

inline Tensor grad_P_from_grad_W(const ConstrainedWeights& cw,
                                 const Tensor& grad_w, float nu) {
    if (cw.mode() != BinMode::Soft)
        throw WrongMode("grad_P_from_grad_W requires soft mode");
    cw.forward_weights();  // requires a fresh cache
    return scaled_tanh_backward(cw.latent(), nu, grad_w);
}

}  // namespace sbnn
