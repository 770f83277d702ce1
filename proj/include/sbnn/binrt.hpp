#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include "sbnn/bittensor.hpp"
#include "sbnn/error.hpp"
#include "sbnn/freeze.hpp"
#include "sbnn/layer_ops.hpp"

namespace sbnn {

// ---------------------------------------------------------------------------
// XNOR+popcount kernels
// ---------------------------------------------------------------------------

// Binary convolution over a packed NCHW input with per-output-channel weight
// rows of in_ch*kh*kw bits. Padding contributes -1 (bit 0). The integer
// output equals float conv2d over the unpacked +-1 tensors exactly.
inline IntFeatureMap binconv2d(const BitTensor& input, const BitTensor& weights,
                               int kh, int kw, int stride, int pad) {
    if (input.rank() != 4) throw ShapeMismatch("binconv2d expects NCHW input");
    const int N = input.dim(0), C = input.dim(1), H = input.dim(2),
              W = input.dim(3);
    const int L = C * kh * kw;
    if (weights.rank() != 2 || weights.dim(1) != L)
        throw ShapeMismatch("binconv2d: weight rows must hold " +
                            std::to_string(L) + " bits");
    if ((H + 2 * pad - kh) % stride != 0 || (W + 2 * pad - kw) % stride != 0 ||
        kh > H + 2 * pad || kw > W + 2 * pad)
        throw ShapeMismatch("binconv2d: output extent not integral");
    const int Cout = weights.dim(0);
    const int Ho = (H + 2 * pad - kh) / stride + 1;
    const int Wo = (W + 2 * pad - kw) / stride + 1;

    IntFeatureMap out({N, Cout, Ho, Wo});
    std::vector<uint64_t> window(weights.words_per_row(), 0);
    for (int n = 0; n < N; ++n)
        for (int oh = 0; oh < Ho; ++oh)
            for (int ow = 0; ow < Wo; ++ow) {
                std::fill(window.begin(), window.end(), 0);
                int cursor = 0;
                for (int ci = 0; ci < C; ++ci)
                    for (int r = 0; r < kh; ++r) {
                        const int ih = oh * stride - pad + r;
                        if (ih < 0 || ih >= H) {
                            cursor += kw;  // padding row: all -1
                            continue;
                        }
                        const int iw0 = ow * stride - pad;
                        const int lead = std::clamp(-iw0, 0, kw);
                        const int valid =
                            std::min(iw0 + kw, W) - std::max(iw0, 0);
                        cursor += lead;
                        if (valid > 0) {
                            const size_t row =
                                (static_cast<size_t>(n) * C + ci) * H +
                                static_cast<size_t>(ih);
                            detail::append_bits(window.data(), cursor,
                                                input.row(row), std::max(iw0, 0),
                                                valid);
                        }
                        cursor += kw - lead - std::max(valid, 0);
                    }
                for (int co = 0; co < Cout; ++co)
                    out.at4(n, co, oh, ow) = xnor_dot(
                        weights.row_span(static_cast<size_t>(co)),
                        std::span<const uint64_t>(window.data(), window.size()),
                        L);
            }
    return out;
}

// Dense analogue: packed [N,K] rows against [M,K] weight rows.
inline IntFeatureMap bindense(const BitTensor& input, const BitTensor& weights) {
    if (input.rank() != 2 || weights.rank() != 2)
        throw ShapeMismatch("bindense expects rank-2 operands");
    if (input.dim(1) != weights.dim(1))
        throw ShapeMismatch("bindense: fan-in mismatch");
    const int N = input.dim(0), M = weights.dim(0), K = input.dim(1);
    IntFeatureMap out({N, M, 1, 1});
    for (int n = 0; n < N; ++n)
        for (int m = 0; m < M; ++m)
            out.at4(n, m, 0, 0) =
                xnor_dot(input.row_span(static_cast<size_t>(n)),
                         weights.row_span(static_cast<size_t>(m)), K);
    return out;
}

// ---------------------------------------------------------------------------
// 8-bit integer first-layer kernels (weights still binary)
// ---------------------------------------------------------------------------

struct I8FeatureMap {
    std::vector<int> shape;  // [N,C,H,W]
    std::vector<int8_t> data;
};

inline I8FeatureMap quantize_input_q7(const Tensor& x) {
    I8FeatureMap out;
    out.shape = x.shape();
    out.data.resize(x.size());
    for (size_t i = 0; i < x.size(); ++i) {
        const long q = std::lround(static_cast<double>(x[i]) * kInputQ7Scale);
        out.data[i] = static_cast<int8_t>(std::clamp(q, -128L, 127L));
    }
    return out;
}

inline IntFeatureMap i8conv2d(const I8FeatureMap& input, const BitTensor& weights,
                              int kh, int kw, int stride, int pad) {
    const int N = input.shape[0], C = input.shape[1], H = input.shape[2],
              W = input.shape[3];
    const int L = C * kh * kw;
    if (weights.dim(1) != L)
        throw ShapeMismatch("i8conv2d: weight rows must hold " +
                            std::to_string(L) + " bits");
    const int Cout = weights.dim(0);
    const int Ho = (H + 2 * pad - kh) / stride + 1;
    const int Wo = (W + 2 * pad - kw) / stride + 1;
    IntFeatureMap out({N, Cout, Ho, Wo});
    for (int n = 0; n < N; ++n)
        for (int co = 0; co < Cout; ++co)
            for (int oh = 0; oh < Ho; ++oh)
                for (int ow = 0; ow < Wo; ++ow) {
                    int32_t acc = 0;
                    int bit = 0;
                    for (int ci = 0; ci < C; ++ci)
                        for (int r = 0; r < kh; ++r)
                            for (int s = 0; s < kw; ++s, ++bit) {
                                const int ih = oh * stride - pad + r;
                                const int iw = ow * stride - pad + s;
                                if (ih < 0 || ih >= H || iw < 0 || iw >= W)
                                    continue;  // zero padding in the q7 domain
                                const int32_t v =
                                    input.data[((static_cast<size_t>(n) * C + ci) *
                                                    H + ih) * W + iw];
                                acc += weights.get(static_cast<size_t>(co), bit)
                                           ? v : -v;
                            }
                    out.at4(n, co, oh, ow) = acc;
                }
    return out;
}

inline IntFeatureMap i8dense(const I8FeatureMap& input, const BitTensor& weights) {
    const int N = input.shape[0];
    const int K = static_cast<int>(input.data.size()) / N;
    if (weights.dim(1) != K)
        throw ShapeMismatch("i8dense: fan-in mismatch");
    const int M = weights.dim(0);
    IntFeatureMap out({N, M, 1, 1});
    for (int n = 0; n < N; ++n)
        for (int m = 0; m < M; ++m) {
            int32_t acc = 0;
            const int8_t* row = input.data.data() + static_cast<size_t>(n) * K;
            for (int k = 0; k < K; ++k)
                acc += weights.get(static_cast<size_t>(m), k) ? row[k] : -row[k];
            out.at4(n, m, 0, 0) = acc;
        }
    return out;
}

// ---------------------------------------------------------------------------
// Comparison-based batch normalization (the folded BN + sign)
// ---------------------------------------------------------------------------

// bit = XNOR(I > t_q*2^s, gamma_sign); gamma==0 channels emit the constant
// beta_pos. Integer compares and boolean XNOR only.
inline BitTensor binary_bn_act(const IntFeatureMap& ints,
                               const QuantizedThresholds& th) {
    const int N = ints.dim(0), C = ints.dim(1), H = ints.dim(2), W = ints.dim(3);
    if (C != th.channels())
        throw ChannelMismatch("binary_bn_act: map has " + std::to_string(C) +
                              " channels, thresholds " +
                              std::to_string(th.channels()));
    BitTensor out({N, C, H, W});
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            const size_t row0 = (static_cast<size_t>(n) * C + c) * H;
            if (th.gamma_zero[static_cast<size_t>(c)]) {
                if (th.beta_pos[static_cast<size_t>(c)])
                    for (int h = 0; h < H; ++h)
                        for (int w = 0; w < W; ++w) out.set(row0 + h, w, true);
                continue;
            }
            const int64_t t = th.threshold(c);
            const bool gpos = th.gamma_sign[static_cast<size_t>(c)] != 0;
            for (int h = 0; h < H; ++h)
                for (int w = 0; w < W; ++w) {
                    const bool gt = ints.at4(n, c, h, w) > t;
                    out.set(row0 + h, w, gt == gpos);
                }
        }
    return out;
}

inline IntFeatureMap maxpool2x2_int(const IntFeatureMap& x) {
    const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    IntFeatureMap out({N, C, H / 2, W / 2});
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c)
            for (int oh = 0; oh < H / 2; ++oh)
                for (int ow = 0; ow < W / 2; ++ow) {
                    int32_t best = x.at4(n, c, oh * 2, ow * 2);
                    best = std::max(best, x.at4(n, c, oh * 2, ow * 2 + 1));
                    best = std::max(best, x.at4(n, c, oh * 2 + 1, ow * 2));
                    best = std::max(best, x.at4(n, c, oh * 2 + 1, ow * 2 + 1));
                    out.at4(n, c, oh, ow) = best;
                }
    return out;
}

// ---------------------------------------------------------------------------
// Frozen-model execution
// ---------------------------------------------------------------------------

struct FrozenOutput {
    IntFeatureMap scores;  // [N, num_classes, 1, 1]
    std::vector<int> predictions;
};

namespace detail {

// Repacks an NCHW bit map into per-image rows for a dense layer.
inline BitTensor flatten_bits(const BitTensor& x) {
    const int N = x.dim(0);
    const int F = x.dim(1) * x.dim(2) * x.dim(3);
    BitTensor out({N, F});
    const size_t rows_per_image =
        static_cast<size_t>(x.dim(1)) * static_cast<size_t>(x.dim(2));
    for (int n = 0; n < N; ++n) {
        int cursor = 0;
        for (size_t r = 0; r < rows_per_image; ++r)
            append_bits(out.row(static_cast<size_t>(n)), cursor,
                        x.row(static_cast<size_t>(n) * rows_per_image + r), 0,
                        x.dim(3));
    }
    return out;
}

}  // namespace detail

// Runs the integer layer pipeline on packed binary inputs (median mode) or
// on q7 inputs (int8 mode). All layer-loop arithmetic is integer/bitwise.
inline FrozenOutput run_frozen_packed(const FrozenModel& fm,
                                      const BitTensor* bits_in,
                                      const I8FeatureMap* q7_in) {
    static_assert(std::is_integral_v<int32_t> && std::is_integral_v<uint64_t>);
    BitTensor bits;
    IntFeatureMap ints;
    bool have_bits = false, have_ints = false;
    int n_images = 0;

    if (bits_in) {
        if (fm.input_mode != InputMode::MedianBinarize)
            throw FormatError("model expects int8 inputs, got binary");
        bits = *bits_in;
        have_bits = true;
        n_images = bits.dim(0);
        if (bits.dim(1) != static_cast<int>(fm.in_ch) ||
            bits.dim(2) != static_cast<int>(fm.in_h) ||
            bits.dim(3) != static_cast<int>(fm.in_w))
            throw FormatError("input shape does not match model metadata");
    } else {
        if (fm.input_mode != InputMode::Int8)
            throw FormatError("model expects binary inputs, got int8");
        n_images = q7_in->shape[0];
        if (q7_in->shape[1] != static_cast<int>(fm.in_ch) ||
            q7_in->shape[2] != static_cast<int>(fm.in_h) ||
            q7_in->shape[3] != static_cast<int>(fm.in_w))
            throw FormatError("input shape does not match model metadata");
    }

    bool first_param = true;
    for (const FrozenLayer& layer : fm.layers) {
        if (const auto* c = std::get_if<FrozenConv>(&layer)) {
            if (first_param && q7_in) {
                ints = i8conv2d(*q7_in, c->weights, static_cast<int>(c->kh),
                                static_cast<int>(c->kw), c->stride, c->pad);
            } else {
                if (!have_bits) throw FormatError("conv expects binary input");
                ints = binconv2d(bits, c->weights, static_cast<int>(c->kh),
                                 static_cast<int>(c->kw), c->stride, c->pad);
            }
            have_ints = true;
            have_bits = false;
            first_param = false;
        } else if (const auto* d = std::get_if<FrozenDense>(&layer)) {
            if (first_param && q7_in) {
                ints = i8dense(*q7_in, d->weights);
            } else {
                if (!have_bits) throw FormatError("dense expects binary input");
                BitTensor flat = bits.rank() == 2 ? bits : detail::flatten_bits(bits);
                if (flat.dim(1) != static_cast<int>(d->in_f))
                    throw FormatError("dense fan-in does not match model metadata");
                ints = bindense(flat, d->weights);
            }
            have_ints = true;
            have_bits = false;
            first_param = false;
        } else if (std::get_if<FrozenPool>(&layer)) {
            if (!have_ints) throw FormatError("pool expects integer input");
            ints = maxpool2x2_int(ints);
        } else if (const auto* t = std::get_if<FrozenThresholdAct>(&layer)) {
            if (!have_ints) throw FormatError("threshold expects integer input");
            bits = binary_bn_act(ints, t->th);
            have_bits = true;
            have_ints = false;
        }
    }
    if (!have_ints || ints.dim(1) != static_cast<int>(fm.num_classes))
        throw FormatError("model does not end in an integer score layer");

    FrozenOutput out;
    out.scores = std::move(ints);
    out.predictions.resize(static_cast<size_t>(n_images));
    for (int n = 0; n < n_images; ++n) {
        int best = 0;
        for (int k = 1; k < static_cast<int>(fm.num_classes); ++k)
            if (out.scores.at4(n, k, 0, 0) > out.scores.at4(n, best, 0, 0))
                best = k;
        out.predictions[static_cast<size_t>(n)] = best;
    }
    return out;
}

inline FrozenOutput run_frozen(const FrozenModel& fm, const BitTensor& input) {
    return run_frozen_packed(fm, &input, nullptr);
}

inline FrozenOutput run_frozen(const FrozenModel& fm, const I8FeatureMap& input) {
    return run_frozen_packed(fm, nullptr, &input);
}

// Binarizes raw [-1,1] features against the stored per-channel medians
// (integer compare in the q7 domain).
inline BitTensor binarize_input(const FrozenModel& fm, const Tensor& raw) {
    if (fm.input_mode != InputMode::MedianBinarize)
        throw FormatError("model does not use median-binarized inputs");
    const I8FeatureMap q7 = quantize_input_q7(raw);
    const int N = raw.dim(0), C = raw.dim(1), H = raw.dim(2), W = raw.dim(3);
    BitTensor out({N, C, H, W});
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            const int16_t thr = fm.input_thresholds[static_cast<size_t>(c)];
            for (int h = 0; h < H; ++h)
                for (int w = 0; w < W; ++w) {
                    const int8_t v =
                        q7.data[((static_cast<size_t>(n) * C + c) * H + h) * W + w];
                    if (v > thr)
                        out.set((static_cast<size_t>(n) * C + c) * H + h, w, true);
                }
        }
    return out;
}

// Convenience entry point: ingest raw [-1,1] features per the model's input
// mode and run the integer pipeline.
inline FrozenOutput run_frozen(const FrozenModel& fm, const Tensor& raw) {
    if (fm.input_mode == InputMode::MedianBinarize)
        return run_frozen(fm, binarize_input(fm, raw));
    return run_frozen(fm, quantize_input_q7(raw));
}

// ---------------------------------------------------------------------------
// Shift-based batch normalization (benchmark reference)
// ---------------------------------------------------------------------------

// Nearest power of two, ties to the larger magnitude; returns the exponent.
inline int nearest_pow2_exp(double x) {
    int k;
    const double m = std::frexp(std::fabs(x), &k);  // x = m * 2^k, m in [0.5,1)
    return m >= 0.75 ? k : k - 1;
}

// BN with sigma_r and gamma rounded to their nearest powers of two; the
// multiply/divide pair collapses into one exponent shift.
inline Tensor sbn_infer(const Tensor& x, const BatchNormState& state) {
    size_t rows, cols;
    detail::bn_dims(x, state.channels(), rows, cols);
    const int C = state.channels();
    Tensor out = x;
    for (size_t n = 0; n < rows; ++n)
        for (int c = 0; c < C; ++c) {
            float* p = out.data() + (n * C + c) * cols;
            const float mu = state.running_mean[static_cast<size_t>(c)];
            const float beta = state.beta[static_cast<size_t>(c)];
            const float gamma = state.gamma[static_cast<size_t>(c)];
            if (gamma == 0.0f) {
                for (size_t i = 0; i < cols; ++i) p[i] = beta;
                continue;
            }
            const int shift = nearest_pow2_exp(gamma) -
                              nearest_pow2_exp(state.sigma_r(c));
            const float sgn = gamma > 0.0f ? 1.0f : -1.0f;
            for (size_t i = 0; i < cols; ++i)
                p[i] = sgn * std::ldexp(p[i] - mu, shift) + beta;
        }
    return out;
}

}  // namespace sbnn
