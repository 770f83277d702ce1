#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <vector>

#include "sbnn/error.hpp"
#include "sbnn/tensor.hpp"

namespace sbnn {

// ---------------------------------------------------------------------------
// Binarizing activations
// ---------------------------------------------------------------------------

// sign(x) with the tie broken to -1: sign(0) = -1.
inline float sign_scalar(float x) { return x > 0.0f ? 1.0f : -1.0f; }

inline Tensor sign_forward(const Tensor& x) {
    Tensor out = x;
    for (auto& v : out.vec()) v = sign_scalar(v);
    return out;
}

// Straight-through estimator: pass upstream where |x| <= 1, zero elsewhere.
inline Tensor ste_backward(const Tensor& x, const Tensor& upstream) {
    check_same_shape(x, upstream, "ste_backward");
    Tensor out = upstream;
    for (size_t i = 0; i < out.size(); ++i)
        if (std::fabs(x[i]) > 1.0f) out[i] = 0.0f;
    return out;
}

inline Tensor scaled_tanh_forward(const Tensor& x, float nu) {
    if (nu < 1.0f) throw OutOfRange("scaled tanh: nu must be >= 1");
    Tensor out = x;
    for (auto& v : out.vec()) v = std::tanh(nu * v);
    return out;
}

// d/dx tanh(nu*x) = nu * sech^2(nu*x), applied to upstream. sech avoids the
// catastrophic cancellation of 1 - tanh^2 near saturation.
inline Tensor scaled_tanh_backward(const Tensor& x, float nu,
                                   const Tensor& upstream) {
    check_same_shape(x, upstream, "scaled_tanh_backward");
    Tensor out = upstream;
    for (size_t i = 0; i < out.size(); ++i) {
        const double s = 1.0 / std::cosh(static_cast<double>(nu) * x[i]);
        out[i] = static_cast<float>(out[i] * nu * s * s);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Batch normalization
// ---------------------------------------------------------------------------

// Running statistics plus the affine parameters, per channel. The running
// std is derived as sqrt(running_var + epsilon) and is therefore always
// strictly positive.
struct BatchNormState {
    std::vector<float> running_mean;
    std::vector<float> running_var;
    std::vector<float> gamma;
    std::vector<float> beta;
    float momentum = 0.1f;
    float epsilon = 1e-5f;

    BatchNormState() = default;
    explicit BatchNormState(int channels)
        : running_mean(channels, 0.0f),
          running_var(channels, 1.0f),
          gamma(channels, 1.0f),
          beta(channels, 0.0f) {}

    int channels() const { return static_cast<int>(gamma.size()); }
    float sigma_r(int c) const {
        return std::sqrt(running_var[static_cast<size_t>(c)] + epsilon);
    }
};

struct BatchNormCache {
    Tensor xhat;
    std::vector<float> inv_std;
    bool valid = false;
};

namespace detail {

// BN treats rank-2 input as [N,C] and rank-4 as [N,C,H,W]; channel axis 1.
inline void bn_dims(const Tensor& x, int channels, size_t& rows, size_t& cols) {
    if (x.rank() != 2 && x.rank() != 4)
        throw ShapeMismatch("batchnorm expects rank-2 or rank-4 input");
    if (x.dim(1) != channels)
        throw ChannelMismatch("batchnorm: input has " + std::to_string(x.dim(1)) +
                              " channels, state has " + std::to_string(channels));
    rows = static_cast<size_t>(x.dim(0));
    cols = x.size() / (rows * static_cast<size_t>(channels));
}

}  // namespace detail

// Training-mode forward: normalize by batch statistics (population variance),
// update running statistics by exponential moving average.
inline Tensor batchnorm_forward_train(const Tensor& x, BatchNormState& state,
                                      BatchNormCache* cache = nullptr) {
    size_t rows, cols;
    detail::bn_dims(x, state.channels(), rows, cols);
    const int C = state.channels();
    const size_t m = rows * cols;
    if (m < 2) throw DegenerateBatch("batchnorm needs >= 2 values per channel");

    std::vector<double> mean(C, 0.0), var(C, 0.0);
    for (size_t n = 0; n < rows; ++n)
        for (int c = 0; c < C; ++c) {
            const float* p = x.data() + (n * C + c) * cols;
            for (size_t i = 0; i < cols; ++i) mean[c] += p[i];
        }
    for (int c = 0; c < C; ++c) mean[c] /= static_cast<double>(m);
    for (size_t n = 0; n < rows; ++n)
        for (int c = 0; c < C; ++c) {
            const float* p = x.data() + (n * C + c) * cols;
            for (size_t i = 0; i < cols; ++i) {
                const double d = p[i] - mean[c];
                var[c] += d * d;
            }
        }
    for (int c = 0; c < C; ++c) var[c] /= static_cast<double>(m);

    Tensor out = x;
    Tensor xhat = x;
    std::vector<float> inv_std(C);
    for (int c = 0; c < C; ++c)
        inv_std[c] = static_cast<float>(
            1.0 / std::sqrt(var[c] + static_cast<double>(state.epsilon)));
    for (size_t n = 0; n < rows; ++n)
        for (int c = 0; c < C; ++c) {
            float* po = out.data() + (n * C + c) * cols;
            float* ph = xhat.data() + (n * C + c) * cols;
            const float mu = static_cast<float>(mean[c]);
            for (size_t i = 0; i < cols; ++i) {
                const float h = (po[i] - mu) * inv_std[c];
                ph[i] = h;
                po[i] = state.gamma[c] * h + state.beta[c];
            }
        }

    for (int c = 0; c < C; ++c) {
        state.running_mean[c] = (1.0f - state.momentum) * state.running_mean[c] +
                                state.momentum * static_cast<float>(mean[c]);
        state.running_var[c] = (1.0f - state.momentum) * state.running_var[c] +
                               state.momentum * static_cast<float>(var[c]);
    }

    if (cache) {
        cache->xhat = std::move(xhat);
        cache->inv_std = std::move(inv_std);
        cache->valid = true;
    }
    return out;
}

// Inference-mode forward: O = (I - mu_r) / sigma_r * gamma + beta.
inline Tensor batchnorm_forward_infer(const Tensor& x,
                                      const BatchNormState& state) {
    size_t rows, cols;
    detail::bn_dims(x, state.channels(), rows, cols);
    const int C = state.channels();
    Tensor out = x;
    for (size_t n = 0; n < rows; ++n)
        for (int c = 0; c < C; ++c) {
            float* p = out.data() + (n * C + c) * cols;
            const float mu = state.running_mean[c];
            const float inv = 1.0f / state.sigma_r(c);
            for (size_t i = 0; i < cols; ++i)
                p[i] = (p[i] - mu) * inv * state.gamma[c] + state.beta[c];
        }
    return out;
}

inline Tensor batchnorm_backward(const Tensor& upstream,
                                 const BatchNormState& state,
                                 const BatchNormCache& cache,
                                 std::vector<float>& dgamma,
                                 std::vector<float>& dbeta) {
    if (!cache.valid)
        throw StaleCache("batchnorm backward without a matching forward");
    check_same_shape(upstream, cache.xhat, "batchnorm_backward");
    size_t rows, cols;
    detail::bn_dims(upstream, state.channels(), rows, cols);
    const int C = state.channels();
    const double m = static_cast<double>(rows * cols);

    dgamma.assign(C, 0.0f);
    dbeta.assign(C, 0.0f);
    std::vector<double> sum_dy(C, 0.0), sum_dy_xhat(C, 0.0);
    for (size_t n = 0; n < rows; ++n)
        for (int c = 0; c < C; ++c) {
            const float* pu = upstream.data() + (n * C + c) * cols;
            const float* ph = cache.xhat.data() + (n * C + c) * cols;
            for (size_t i = 0; i < cols; ++i) {
                sum_dy[c] += pu[i];
                sum_dy_xhat[c] += pu[i] * ph[i];
            }
        }
    for (int c = 0; c < C; ++c) {
        dgamma[c] = static_cast<float>(sum_dy_xhat[c]);
        dbeta[c] = static_cast<float>(sum_dy[c]);
    }

    Tensor dx = upstream;
    for (size_t n = 0; n < rows; ++n)
        for (int c = 0; c < C; ++c) {
            float* pd = dx.data() + (n * C + c) * cols;
            const float* ph = cache.xhat.data() + (n * C + c) * cols;
            const float k = state.gamma[c] * cache.inv_std[c];
            const float mean_dy = static_cast<float>(sum_dy[c] / m);
            const float mean_dy_xhat = static_cast<float>(sum_dy_xhat[c] / m);
            for (size_t i = 0; i < cols; ++i)
                pd[i] = k * (pd[i] - mean_dy - ph[i] * mean_dy_xhat);
        }
    return dx;
}

// ---------------------------------------------------------------------------
// Convolution / dense backward
// ---------------------------------------------------------------------------

inline void conv2d_backward(const Tensor& input, const Tensor& kernel,
                            int stride, int pad, const Tensor& upstream,
                            Tensor& dinput, Tensor& dkernel) {
    const int N = input.dim(0), Cin = input.dim(1), H = input.dim(2),
              W = input.dim(3);
    const int Cout = kernel.dim(0), Kh = kernel.dim(2), Kw = kernel.dim(3);
    const int Ho = upstream.dim(2), Wo = upstream.dim(3);
    if (upstream.dim(0) != N || upstream.dim(1) != Cout)
        throw ShapeMismatch("conv2d_backward: upstream shape mismatch");

    dinput = Tensor(input.shape(), 0.0f);
    dkernel = Tensor(kernel.shape(), 0.0f);
    for (int n = 0; n < N; ++n)
        for (int co = 0; co < Cout; ++co)
            for (int oh = 0; oh < Ho; ++oh)
                for (int ow = 0; ow < Wo; ++ow) {
                    const float g = upstream.at4(n, co, oh, ow);
                    if (g == 0.0f) continue;
                    for (int ci = 0; ci < Cin; ++ci)
                        for (int kh = 0; kh < Kh; ++kh) {
                            const int ih = oh * stride - pad + kh;
                            if (ih < 0 || ih >= H) continue;
                            for (int kw = 0; kw < Kw; ++kw) {
                                const int iw = ow * stride - pad + kw;
                                if (iw < 0 || iw >= W) continue;
                                dinput.at4(n, ci, ih, iw) +=
                                    g * kernel.at4(co, ci, kh, kw);
                                dkernel.at4(co, ci, kh, kw) +=
                                    g * input.at4(n, ci, ih, iw);
                            }
                        }
                }
}

// Dense layer convention: weights are [Out,In], y[n,o] = sum_i x[n,i]*w[o,i].
inline Tensor dense_forward(const Tensor& x, const Tensor& w) {
    if (x.rank() != 2 || w.rank() != 2)
        throw ShapeMismatch("dense expects rank-2 input and weights");
    if (x.dim(1) != w.dim(1))
        throw ShapeMismatch("dense: input features " + std::to_string(x.dim(1)) +
                            " vs weight fan-in " + std::to_string(w.dim(1)));
    const int N = x.dim(0), In = x.dim(1), Out = w.dim(0);
    Tensor y({N, Out}, 0.0f);
    for (int n = 0; n < N; ++n)
        for (int o = 0; o < Out; ++o) {
            float acc = 0.0f;
            for (int i = 0; i < In; ++i) acc += x.at2(n, i) * w.at2(o, i);
            y.at2(n, o) = acc;
        }
    return y;
}

inline void dense_backward(const Tensor& x, const Tensor& w,
                           const Tensor& upstream, Tensor& dx, Tensor& dw) {
    const int N = x.dim(0), In = x.dim(1), Out = w.dim(0);
    if (upstream.dim(0) != N || upstream.dim(1) != Out)
        throw ShapeMismatch("dense_backward: upstream shape mismatch");
    dx = Tensor(x.shape(), 0.0f);
    dw = Tensor(w.shape(), 0.0f);
    for (int n = 0; n < N; ++n)
        for (int o = 0; o < Out; ++o) {
            const float g = upstream.at2(n, o);
            if (g == 0.0f) continue;
            for (int i = 0; i < In; ++i) {
                dx.at2(n, i) += g * w.at2(o, i);
                dw.at2(o, i) += g * x.at2(n, i);
            }
        }
}

// ---------------------------------------------------------------------------
// 2x2 / stride-2 max pooling
// ---------------------------------------------------------------------------

struct MaxPoolCache {
    std::vector<size_t> argmax;  // flat input index per output element
    std::vector<int> in_shape;
    bool valid = false;
};

// Ties resolved to the first element in row-major window order.
inline Tensor maxpool2x2_forward(const Tensor& x, MaxPoolCache* cache = nullptr) {
    if (x.rank() != 4) throw ShapeMismatch("maxpool expects rank-4 input");
    const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int Ho = H / 2, Wo = W / 2;
    if (Ho == 0 || Wo == 0) throw ShapeMismatch("maxpool: input smaller than 2x2");
    Tensor out({N, C, Ho, Wo}, 0.0f);
    std::vector<size_t> argmax(out.size());
    size_t o = 0;
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c)
            for (int oh = 0; oh < Ho; ++oh)
                for (int ow = 0; ow < Wo; ++ow, ++o) {
                    float best = -std::numeric_limits<float>::infinity();
                    size_t best_idx = 0;
                    for (int dh = 0; dh < 2; ++dh)
                        for (int dw = 0; dw < 2; ++dw) {
                            const size_t idx =
                                ((static_cast<size_t>(n) * C + c) * H +
                                 (oh * 2 + dh)) * W + (ow * 2 + dw);
                            if (x[idx] > best) {
                                best = x[idx];
                                best_idx = idx;
                            }
                        }
                    out[o] = best;
                    argmax[o] = best_idx;
                }
    if (cache) {
        cache->argmax = std::move(argmax);
        cache->in_shape = x.shape();
        cache->valid = true;
    }
    return out;
}

inline Tensor maxpool2x2_backward(const Tensor& upstream,
                                  const MaxPoolCache& cache) {
    if (!cache.valid)
        throw StaleCache("maxpool backward without a matching forward");
    if (upstream.size() != cache.argmax.size())
        throw ShapeMismatch("maxpool_backward: upstream size mismatch");
    Tensor dx(cache.in_shape, 0.0f);
    for (size_t o = 0; o < upstream.size(); ++o) dx[cache.argmax[o]] += upstream[o];
    return dx;
}

// ---------------------------------------------------------------------------
// Softmax cross-entropy
// ---------------------------------------------------------------------------

struct SoftmaxCECache {
    Tensor probs;
    std::vector<int> labels;
    bool valid = false;
};

inline float softmax_ce_forward(const Tensor& logits,
                                const std::vector<int>& labels,
                                SoftmaxCECache* cache = nullptr) {
    if (logits.rank() != 2) throw ShapeMismatch("softmax expects rank-2 logits");
    const int N = logits.dim(0), K = logits.dim(1);
    if (static_cast<int>(labels.size()) != N)
        throw ShapeMismatch("softmax: label count mismatch");
    Tensor probs = logits;
    double loss = 0.0;
    for (int n = 0; n < N; ++n) {
        float* p = probs.data() + static_cast<size_t>(n) * K;
        float mx = p[0];
        for (int k = 1; k < K; ++k) mx = std::max(mx, p[k]);
        double z = 0.0;
        for (int k = 0; k < K; ++k) z += std::exp(static_cast<double>(p[k] - mx));
        const double logz = std::log(z);
        const int y = labels[static_cast<size_t>(n)];
        if (y < 0 || y >= K) throw OutOfRange("softmax: label out of range");
        loss -= static_cast<double>(p[y] - mx) - logz;
        for (int k = 0; k < K; ++k)
            p[k] = static_cast<float>(
                std::exp(static_cast<double>(p[k] - mx)) / z);
    }
    if (cache) {
        cache->probs = std::move(probs);
        cache->labels = labels;
        cache->valid = true;
    }
    return static_cast<float>(loss / N);
}

inline Tensor softmax_ce_backward(const SoftmaxCECache& cache) {
    if (!cache.valid)
        throw StaleCache("softmax backward without a matching forward");
    const int N = cache.probs.dim(0), K = cache.probs.dim(1);
    Tensor dlogits = cache.probs;
    for (int n = 0; n < N; ++n) {
        float* p = dlogits.data() + static_cast<size_t>(n) * K;
        p[cache.labels[static_cast<size_t>(n)]] -= 1.0f;
        for (int k = 0; k < K; ++k) p[k] /= static_cast<float>(N);
    }
    return dlogits;
}

}  // namespace sbnn
