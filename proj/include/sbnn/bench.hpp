#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "sbnn/binrt.hpp"
#include "sbnn/error.hpp"

namespace sbnn {

enum class BNVariant { BN, SBN, BinaryBN };

inline const char* to_string(BNVariant v) {
    switch (v) {
        case BNVariant::BN: return "bn";
        case BNVariant::SBN: return "sbn";
        case BNVariant::BinaryBN: return "binary_bn";
    }
    return "?";
}

// Closed-form storage/operation costs of one normalization layer over a
// c-channel h x w feature map.
struct CostModel {
    BNVariant variant = BNVariant::BN;
    int c = 0, h = 0, w = 0;
};

// BN keeps four 32-bit vectors (128c bits); SBN two 32-bit and two 8-bit
// vectors (80c); BinaryBN an 8-bit threshold vector plus a gamma-sign bit
// vector (9c).
inline int64_t storage_bits(const CostModel& m) {
    if (m.c <= 0) throw OutOfRange("storage_bits: channels must be positive");
    switch (m.variant) {
        case BNVariant::BN: return 128LL * m.c;
        case BNVariant::SBN: return 80LL * m.c;
        case BNVariant::BinaryBN: return 9LL * m.c;
    }
    return 0;
}

// Elementwise operation counts: normalize+sign costs 4chw + chw for BN and
// SBN, compare+xnor costs 2chw for BinaryBN.
inline int64_t op_count(const CostModel& m) {
    if (m.c <= 0 || m.h <= 0 || m.w <= 0)
        throw OutOfRange("op_count: dims must be positive");
    const int64_t chw = static_cast<int64_t>(m.c) * m.h * m.w;
    switch (m.variant) {
        case BNVariant::BN:
        case BNVariant::SBN: return 4 * chw + chw;
        case BNVariant::BinaryBN: return 2 * chw;
    }
    return 0;
}

inline int64_t output_memory_bits(const CostModel& m, int batch = 1) {
    const int64_t chw = static_cast<int64_t>(batch) * m.c * m.h * m.w;
    switch (m.variant) {
        case BNVariant::BN:
        case BNVariant::SBN: return 32 * chw + chw;
        case BNVariant::BinaryBN: return chw;
    }
    return 0;
}

// ---------------------------------------------------------------------------
// Timed kernels
// ---------------------------------------------------------------------------

struct BenchLayerParams {
    std::vector<float> mu, sigma, gamma, beta;
};

namespace detail {

// Q16.16 fixed point for the shift-based variant.
constexpr int kSbnFracBits = 16;

inline int64_t to_fx(double x) {
    return static_cast<int64_t>(std::llround(std::ldexp(x, kSbnFracBits)));
}

struct SbnChannel {
    int64_t mu_fx, beta_fx;
    int shift;      // gamma exponent minus sigma exponent
    bool negate;    // gamma < 0
    bool zero;      // gamma == 0
};

inline std::vector<SbnChannel> sbn_prepare(const BenchLayerParams& p) {
    std::vector<SbnChannel> ch(p.mu.size());
    for (size_t c = 0; c < p.mu.size(); ++c) {
        ch[c].mu_fx = to_fx(p.mu[c]);
        ch[c].beta_fx = to_fx(p.beta[c]);
        ch[c].zero = p.gamma[c] == 0.0f;
        ch[c].negate = p.gamma[c] < 0.0f;
        ch[c].shift = ch[c].zero ? 0
                                 : nearest_pow2_exp(p.gamma[c]) -
                                       nearest_pow2_exp(p.sigma[c]);
    }
    return ch;
}

}  // namespace detail

namespace detail {

// Accumulates output bits in a register and stores whole 64-bit words, so
// bit packing is not a per-element memory round trip. push8 takes a
// pre-assembled byte of eight bits (requires byte alignment, which the
// kernels maintain by construction).
struct BitPacker {
    uint64_t* words;
    uint64_t acc = 0;
    int fill = 0;
    size_t word = 0;

    explicit BitPacker(uint64_t* w) : words(w) {}
    void push(bool bit) {
        acc |= static_cast<uint64_t>(bit) << fill;
        if (++fill == 64) {
            words[word++] = acc;
            acc = 0;
            fill = 0;
        }
    }
    void push8(uint8_t byte) {
        acc |= static_cast<uint64_t>(byte) << fill;
        fill += 8;
        if (fill == 64) {
            words[word++] = acc;
            acc = 0;
            fill = 0;
        }
    }
    bool byte_aligned() const { return (fill & 7) == 0; }
    void flush() {
        if (fill) {
            words[word++] = acc;
            acc = 0;
            fill = 0;
        }
    }
};

}  // namespace detail

// Float batch norm followed by sign; writes the normalized map and the
// packed sign bits (the 32chw + chw output of Table 2's BN+sign column).
inline void bn_sign_kernel(const float* in, int batch, int c, size_t hw,
                           const BenchLayerParams& p, float* out_f,
                           uint64_t* out_bits) {
    detail::BitPacker bits(out_bits);
    size_t idx = 0;
    for (int n = 0; n < batch; ++n)
        for (int ch = 0; ch < c; ++ch) {
            const float mu = p.mu[static_cast<size_t>(ch)];
            const float sigma = p.sigma[static_cast<size_t>(ch)];
            const float gamma = p.gamma[static_cast<size_t>(ch)];
            const float beta = p.beta[static_cast<size_t>(ch)];
            size_t i = 0;
            if (bits.byte_aligned()) {
                for (; i + 8 <= hw; i += 8, idx += 8) {
                    float o[8];
                    for (int j = 0; j < 8; ++j)
                        o[j] = (in[idx + j] - mu) / sigma * gamma + beta;
                    for (int j = 0; j < 8; ++j) out_f[idx + j] = o[j];
                    const uint8_t lo =
                        static_cast<uint8_t>((o[0] > 0) | ((o[1] > 0) << 1)) |
                        static_cast<uint8_t>(((o[2] > 0) << 2) | ((o[3] > 0) << 3));
                    const uint8_t hi =
                        static_cast<uint8_t>(((o[4] > 0) << 4) | ((o[5] > 0) << 5)) |
                        static_cast<uint8_t>(((o[6] > 0) << 6) | ((o[7] > 0) << 7));
                    bits.push8(lo | hi);
                }
            }
            for (; i < hw; ++i, ++idx) {
                const float o = (in[idx] - mu) / sigma * gamma + beta;
                out_f[idx] = o;
                bits.push(o > 0.0f);
            }
        }
    bits.flush();
}

// Shift-based batch norm in Q16.16 followed by sign; multiplies and divides
// are arithmetic shifts.
inline void sbn_sign_kernel(const int64_t* in_fx, int batch, int c, size_t hw,
                            const std::vector<detail::SbnChannel>& ch,
                            int64_t* out_fx, uint64_t* out_bits) {
    detail::BitPacker bits(out_bits);
    size_t idx = 0;
    for (int n = 0; n < batch; ++n)
        for (int k = 0; k < c; ++k) {
            const detail::SbnChannel& s = ch[static_cast<size_t>(k)];
            const int64_t sign = s.negate ? -1 : 1;
            size_t i = 0;
            if (bits.byte_aligned() && !s.zero) {
                for (; i + 8 <= hw; i += 8, idx += 8) {
                    int64_t v[8];
                    for (int j = 0; j < 8; ++j) {
                        int64_t x = in_fx[idx + j] - s.mu_fx;
                        x = s.shift >= 0 ? x << s.shift : x >> -s.shift;
                        v[j] = sign * x + s.beta_fx;
                    }
                    for (int j = 0; j < 8; ++j) out_fx[idx + j] = v[j];
                    const uint8_t lo =
                        static_cast<uint8_t>((v[0] > 0) | ((v[1] > 0) << 1)) |
                        static_cast<uint8_t>(((v[2] > 0) << 2) | ((v[3] > 0) << 3));
                    const uint8_t hi =
                        static_cast<uint8_t>(((v[4] > 0) << 4) | ((v[5] > 0) << 5)) |
                        static_cast<uint8_t>(((v[6] > 0) << 6) | ((v[7] > 0) << 7));
                    bits.push8(lo | hi);
                }
            }
            for (; i < hw; ++i, ++idx) {
                int64_t v;
                if (s.zero) {
                    v = s.beta_fx;
                } else {
                    v = in_fx[idx] - s.mu_fx;
                    v = s.shift >= 0 ? v << s.shift : v >> -s.shift;
                    if (s.negate) v = -v;
                    v += s.beta_fx;
                }
                out_fx[idx] = v;
                bits.push(v > 0);
            }
        }
    bits.flush();
}

// Comparison-based batch norm: one integer compare and one boolean XNOR per
// element, emitting bits only. Groups of eight independent compares fill a
// byte at a time.
inline void binary_bn_kernel(const int32_t* in, int batch, int c, size_t hw,
                             const QuantizedThresholds& th, uint64_t* out_bits) {
    detail::BitPacker bits(out_bits);
    size_t idx = 0;
    for (int n = 0; n < batch; ++n)
        for (int ch = 0; ch < c; ++ch) {
            if (th.gamma_zero[static_cast<size_t>(ch)]) {
                const bool b = th.beta_pos[static_cast<size_t>(ch)] != 0;
                for (size_t i = 0; i < hw; ++i, ++idx) bits.push(b);
                continue;
            }
            const int32_t t = static_cast<int32_t>(
                std::clamp<int64_t>(th.threshold(ch), INT32_MIN, INT32_MAX));
            // XNOR with a negative gamma flips every bit: compare once,
            // xor with a channel constant.
            const uint8_t flip =
                th.gamma_sign[static_cast<size_t>(ch)] ? 0x00 : 0xFF;
            size_t i = 0;
            if (bits.byte_aligned()) {
                // Vectorizable block compare, then gather each group of
                // eight 0/1 bytes into a packed byte with one multiply
                // (byte k of the group lands at bit k).
                constexpr uint64_t kGather = 0x0102040810204080ull;
                uint8_t block[64];
                for (; i + 64 <= hw; i += 64, idx += 64) {
                    const int32_t* p = in + idx;
                    for (int j = 0; j < 64; ++j) block[j] = p[j] > t;
                    for (int j = 0; j < 64; j += 8) {
                        uint64_t eight;
                        __builtin_memcpy(&eight, block + j, 8);
                        bits.push8(static_cast<uint8_t>(
                            ((eight * kGather) >> 56) ^ flip));
                    }
                }
            }
            for (; i < hw; ++i, ++idx) bits.push(((in[idx] > t) ^ flip) & 1);
        }
    bits.flush();
}

// ---------------------------------------------------------------------------
// Measurement harness
// ---------------------------------------------------------------------------

struct BenchResult {
    BNVariant variant = BNVariant::BN;
    int batch = 0;
    int c = 0, h = 0, w = 0;
    double median_ns = 0.0;
    double iqr_ns = 0.0;
    size_t output_bytes = 0;
    int64_t storage_bits = 0;
};

struct BenchConfig {
    int trials = 30;
    int warmup = 5;
    uint32_t seed = 42;
    int fan_in = 256;  // integer pre-activation range
};

inline BenchLayerParams make_bench_params(int c, std::mt19937& rng) {
    std::uniform_real_distribution<float> unit(-2.0f, 2.0f);
    std::uniform_real_distribution<float> pos(0.5f, 3.0f);
    BenchLayerParams p;
    p.mu.resize(static_cast<size_t>(c));
    p.sigma.resize(static_cast<size_t>(c));
    p.gamma.resize(static_cast<size_t>(c));
    p.beta.resize(static_cast<size_t>(c));
    for (int i = 0; i < c; ++i) {
        p.mu[static_cast<size_t>(i)] = unit(rng) * 16.0f;
        p.sigma[static_cast<size_t>(i)] = pos(rng) * 8.0f;
        float g = unit(rng);
        if (std::fabs(g) < 1e-3f) g = 1.0f;
        p.gamma[static_cast<size_t>(i)] = g;
        p.beta[static_cast<size_t>(i)] = unit(rng);
    }
    return p;
}

// Folds the float parameters into integer thresholds for the BinaryBN run.
inline QuantizedThresholds bench_thresholds(const BenchLayerParams& p,
                                            int fan_in) {
    BatchNormState st(static_cast<int>(p.mu.size()));
    st.running_mean = p.mu;
    st.gamma = p.gamma;
    st.beta = p.beta;
    for (size_t i = 0; i < p.sigma.size(); ++i)
        st.running_var[i] = p.sigma[i] * p.sigma[i] - st.epsilon;
    return quantize_thresholds(fold_bn(st), fan_in);
}

inline std::vector<BenchResult> run_bench(BNVariant variant, int c, int h, int w,
                                          const std::vector<int>& batches,
                                          const BenchConfig& cfg = {}) {
    std::mt19937 rng(cfg.seed);
    const BenchLayerParams params = make_bench_params(c, rng);
    const QuantizedThresholds th = bench_thresholds(params, cfg.fan_in);
    const auto sbn_channels = detail::sbn_prepare(params);

    std::vector<BenchResult> results;
    for (int batch : batches) {
        const size_t hw = static_cast<size_t>(h) * w;
        const size_t n = static_cast<size_t>(batch) * c * hw;
        const size_t words = (n + 63) / 64;

        // Integer pre-activations in [-fan_in, fan_in]; the float variants
        // see the same values.
        std::uniform_int_distribution<int32_t> acts(-cfg.fan_in, cfg.fan_in);
        std::vector<int32_t> ints(n);
        for (auto& v : ints) v = acts(rng);
        std::vector<float> floats(n);
        for (size_t i = 0; i < n; ++i) floats[i] = static_cast<float>(ints[i]);
        std::vector<int64_t> fx(n);
        for (size_t i = 0; i < n; ++i)
            fx[i] = static_cast<int64_t>(ints[i]) << detail::kSbnFracBits;

        std::vector<float> out_f;
        std::vector<int64_t> out_fx;
        std::vector<uint64_t> out_bits(words);
        size_t output_bytes = 0;

        auto run_once = [&] {
            std::fill(out_bits.begin(), out_bits.end(), 0);
            switch (variant) {
                case BNVariant::BN:
                    bn_sign_kernel(floats.data(), batch, c, hw, params,
                                   out_f.data(), out_bits.data());
                    break;
                case BNVariant::SBN:
                    sbn_sign_kernel(fx.data(), batch, c, hw, sbn_channels,
                                    out_fx.data(), out_bits.data());
                    break;
                case BNVariant::BinaryBN:
                    binary_bn_kernel(ints.data(), batch, c, hw, th,
                                     out_bits.data());
                    break;
            }
        };

        switch (variant) {
            case BNVariant::BN:
                out_f.resize(n);
                output_bytes = n * sizeof(float) + words * sizeof(uint64_t);
                break;
            case BNVariant::SBN:
                out_fx.resize(n);
                output_bytes = n * sizeof(int64_t) + words * sizeof(uint64_t);
                break;
            case BNVariant::BinaryBN:
                output_bytes = words * sizeof(uint64_t);
                break;
        }

        for (int i = 0; i < cfg.warmup; ++i) run_once();
        std::vector<double> times;
        times.reserve(static_cast<size_t>(cfg.trials));
        for (int i = 0; i < cfg.trials; ++i) {
            const auto t0 = std::chrono::steady_clock::now();
            run_once();
            const auto t1 = std::chrono::steady_clock::now();
            times.push_back(static_cast<double>(
                std::chrono::duration_cast<std::chrono::nanoseconds>(t1 - t0)
                    .count()));
        }
        std::sort(times.begin(), times.end());
        const size_t q2 = times.size() / 2;
        const size_t q1 = times.size() / 4;
        const size_t q3 = (3 * times.size()) / 4;

        BenchResult r;
        r.variant = variant;
        r.batch = batch;
        r.c = c;
        r.h = h;
        r.w = w;
        r.median_ns = times[q2];
        r.iqr_ns = times[q3] - times[q1];
        r.output_bytes = output_bytes;
        r.storage_bits = sbnn::storage_bits({variant, c, h, w});
        results.push_back(r);
    }
    return results;
}

// Channel ranges of the normalization layers in two classic reference
// architectures, emitted as plot annotations.
struct ArchAnnotation {
    std::string arch;
    int min_channels;
    int max_channels;
};

inline std::vector<ArchAnnotation> bench_annotations() {
    return {{"vgg16", 64, 512}, {"alexnet", 96, 384}};
}

}  // namespace sbnn
