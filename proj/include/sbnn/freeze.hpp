#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <type_traits>
#include <variant>
#include <vector>

#include "sbnn/bittensor.hpp"
#include "sbnn/constrained_weights.hpp"
#include "sbnn/error.hpp"
#include "sbnn/io.hpp"
#include "sbnn/layer_ops.hpp"
#include "sbnn/model.hpp"

namespace sbnn {

// ---------------------------------------------------------------------------
// Batch-norm folding: sign(BN(I)) == XNOR(I > T, gamma > 0)
// ---------------------------------------------------------------------------

struct BinaryBNThresholds {
    std::vector<float> T;               // mu_r - sigma_r*beta/gamma
    std::vector<uint8_t> gamma_sign;    // gamma > 0
    std::vector<uint8_t> gamma_zero;    // gamma == 0: constant channel
    std::vector<uint8_t> beta_pos;      // used only when gamma == 0

    int channels() const { return static_cast<int>(T.size()); }
};

inline BinaryBNThresholds fold_bn(const BatchNormState& state) {
    const int c = state.channels();
    BinaryBNThresholds th;
    th.T.resize(c);
    th.gamma_sign.assign(c, 0);
    th.gamma_zero.assign(c, 0);
    th.beta_pos.assign(c, 0);
    for (int i = 0; i < c; ++i) {
        const double gamma = state.gamma[static_cast<size_t>(i)];
        const double beta = state.beta[static_cast<size_t>(i)];
        if (gamma == 0.0) {
            th.gamma_zero[static_cast<size_t>(i)] = 1;
            th.beta_pos[static_cast<size_t>(i)] = beta > 0.0 ? 1 : 0;
            th.T[static_cast<size_t>(i)] = 0.0f;
            continue;
        }
        const double mu = state.running_mean[static_cast<size_t>(i)];
        const double sigma = static_cast<double>(state.sigma_r(i));
        th.T[static_cast<size_t>(i)] =
            static_cast<float>(mu - sigma * beta / gamma);
        th.gamma_sign[static_cast<size_t>(i)] = gamma > 0.0 ? 1 : 0;
    }
    return th;
}

// T' = T/alpha; alpha > 0 keeps the inequality direction, so gamma_sign is
// untouched.
inline BinaryBNThresholds apply_alpha(const BinaryBNThresholds& th,
                                      const AlphaScale& alpha) {
    if (alpha.channels() != th.channels())
        throw ChannelMismatch("apply_alpha: channel counts differ");
    BinaryBNThresholds out = th;
    for (int c = 0; c < th.channels(); ++c) {
        if (th.gamma_zero[static_cast<size_t>(c)]) continue;
        const float a = alpha.alpha[static_cast<size_t>(c)];
        if (!(a > 0.0f))
            throw NonPositiveAlpha("alpha[" + std::to_string(c) + "] = " +
                                   std::to_string(a));
        out.T[static_cast<size_t>(c)] /= a;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Fixed-point threshold quantization
// ---------------------------------------------------------------------------

// Per-layer power-of-two scale: runtime compares I > t_q * 2^s with integer
// arithmetic only. t_q = floor(T / 2^s), which for s = 0 is exact on the
// integer pre-activation domain. Thresholds outside the reachable range
// [-k, k] are pinned so the channel stays constant.
struct QuantizedThresholds {
    std::vector<int8_t> t_q;
    uint8_t scale_exp = 0;
    std::vector<uint8_t> gamma_sign;
    std::vector<uint8_t> gamma_zero;
    std::vector<uint8_t> beta_pos;

    int channels() const { return static_cast<int>(t_q.size()); }
    int64_t threshold(int c) const {
        return static_cast<int64_t>(t_q[static_cast<size_t>(c)]) << scale_exp;
    }
};

inline QuantizedThresholds quantize_thresholds(const BinaryBNThresholds& th,
                                               int layer_fan_in) {
    const int c = th.channels();
    QuantizedThresholds out;
    out.t_q.assign(c, 0);
    out.gamma_sign = th.gamma_sign;
    out.gamma_zero = th.gamma_zero;
    out.beta_pos = th.beta_pos;

    const double k = static_cast<double>(layer_fan_in);
    double max_abs = 0.0;
    for (int i = 0; i < c; ++i) {
        if (th.gamma_zero[static_cast<size_t>(i)]) continue;
        const double t =
            std::clamp(static_cast<double>(th.T[static_cast<size_t>(i)]),
                       -(k + 1.0), k + 1.0);
        max_abs = std::max(max_abs, std::fabs(t));
    }
    uint8_t s = 0;
    while (std::ceil(max_abs) > 127.0 * std::pow(2.0, s)) ++s;
    out.scale_exp = s;
    const double step = std::pow(2.0, s);

    for (int i = 0; i < c; ++i) {
        if (th.gamma_zero[static_cast<size_t>(i)]) continue;
        const double t = static_cast<double>(th.T[static_cast<size_t>(i)]);
        double q;
        if (t > k) {
            q = std::ceil(k / step);          // t_q*2^s >= k: never exceeded
        } else if (t < -k) {
            q = std::floor(-(k + 1.0) / step);  // t_q*2^s < -k: always exceeded
        } else {
            q = std::floor(t / step);
        }
        out.t_q[static_cast<size_t>(i)] =
            static_cast<int8_t>(std::clamp(q, -128.0, 127.0));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Frozen model
// ---------------------------------------------------------------------------

enum class InputMode : uint8_t {
    MedianBinarize = 0,  // bit = feature > per-channel training median
    Int8 = 1,            // first layer runs 8-bit integer dot products
};

// Fixed-point scale of Int8 inputs: x in [-1,1] maps to round(127*x).
constexpr int kInputQ7Scale = 127;

struct FrozenConv {
    uint32_t out_ch = 0, in_ch = 0, kh = 0, kw = 0;
    uint8_t stride = 1, pad = 0;
    BitTensor weights;  // [out_ch, in_ch*kh*kw]
};

struct FrozenDense {
    uint32_t out_f = 0, in_f = 0;
    BitTensor weights;  // [out_f, in_f]
};

struct FrozenPool {};

struct FrozenThresholdAct {
    QuantizedThresholds th;
};

using FrozenLayer =
    std::variant<FrozenConv, FrozenDense, FrozenPool, FrozenThresholdAct>;

// Fully binary deployable model: packed weight bits, integer thresholds and
// shape metadata. Holds no floating-point payload; alpha scales are consumed
// at freeze time via T' = T/alpha.
struct FrozenModel {
    InputMode input_mode = InputMode::Int8;
    uint32_t in_ch = 0, in_h = 0, in_w = 0;
    uint32_t num_classes = 0;
    std::vector<int16_t> input_thresholds;  // per channel, median mode only
    std::vector<FrozenLayer> layers;
};

static_assert(std::is_same_v<decltype(QuantizedThresholds::t_q),
                             std::vector<int8_t>> &&
                  std::is_same_v<decltype(FrozenModel::input_thresholds),
                                 std::vector<int16_t>>,
              "frozen model payloads must stay integer-typed");

// bit = 1 iff value > 0 (so exactly the sign(P) pattern with sign(0) = -1).
inline BitTensor freeze_weights(const Tensor& p) { return BitTensor::pack(p); }

// Packs a weight tensor into per-output-channel rows of fan-in bits.
inline BitTensor pack_weight_rows(const Tensor& p) {
    const int rows = p.dim(0);
    const int cols = static_cast<int>(p.size()) / rows;
    return BitTensor::pack(Tensor::from_data({rows, cols}, p.vec()));
}

// ---------------------------------------------------------------------------
// Graph -> FrozenModel
// ---------------------------------------------------------------------------

struct FreezeOptions {
    bool use_alpha = false;
    InputMode input_mode = InputMode::Int8;
    std::vector<float> input_medians;  // required for MedianBinarize
    float nu = 1000.0f;                // sharpness used for alpha extraction
};

inline FrozenModel freeze_model(const ModelGraph& model,
                                const FreezeOptions& opt) {
    FrozenModel fm;
    fm.input_mode = opt.input_mode;
    fm.in_ch = static_cast<uint32_t>(model.input_shape()[0]);
    fm.in_h = static_cast<uint32_t>(model.input_shape()[1]);
    fm.in_w = static_cast<uint32_t>(model.input_shape()[2]);
    fm.num_classes = static_cast<uint32_t>(model.num_classes());
    if (opt.input_mode == InputMode::MedianBinarize) {
        if (static_cast<uint32_t>(opt.input_medians.size()) != fm.in_ch)
            throw ChannelMismatch("freeze: need one input median per channel");
        for (float m : opt.input_medians)
            fm.input_thresholds.push_back(static_cast<int16_t>(
                std::lround(static_cast<double>(m) * kInputQ7Scale)));
    }

    // Fan-in (and threshold scale) of the conv/dense layer awaiting its BN.
    int pending_fan_in = 0;
    double pending_scale = 1.0;
    AlphaScale pending_alpha;
    bool pending = false;
    bool first_param_layer = true;

    const auto& layers = model.layers();
    for (size_t i = 0; i < layers.size(); ++i) {
        const Layer& layer = layers[i];
        if (const auto* cl = std::get_if<ConvLayer>(&layer)) {
            if (!cl->binarize)
                throw UnfoldableLayer(cl->name + " opted out of binarization");
            FrozenConv fc;
            fc.out_ch = static_cast<uint32_t>(cl->out_ch);
            fc.in_ch = static_cast<uint32_t>(cl->in_ch);
            fc.kh = fc.kw = static_cast<uint32_t>(cl->kernel);
            fc.stride = static_cast<uint8_t>(cl->stride);
            fc.pad = static_cast<uint8_t>(cl->pad);
            fc.weights = pack_weight_rows(cl->cw.latent());
            fm.layers.emplace_back(std::move(fc));
            pending_fan_in = cl->fan_in();
            pending_scale =
                (first_param_layer && opt.input_mode == InputMode::Int8)
                    ? static_cast<double>(kInputQ7Scale)
                    : 1.0;
            if (opt.use_alpha) pending_alpha = export_alpha(cl->cw, opt.nu);
            pending = true;
            first_param_layer = false;
        } else if (const auto* dl = std::get_if<DenseLayer>(&layer)) {
            if (!dl->binarize)
                throw UnfoldableLayer(dl->name + " opted out of binarization");
            FrozenDense fd;
            fd.out_f = static_cast<uint32_t>(dl->out_features);
            fd.in_f = static_cast<uint32_t>(dl->in_features);
            fd.weights = pack_weight_rows(dl->cw.latent());
            fm.layers.emplace_back(std::move(fd));
            pending_fan_in = dl->in_features;
            pending_scale =
                (first_param_layer && opt.input_mode == InputMode::Int8)
                    ? static_cast<double>(kInputQ7Scale)
                    : 1.0;
            if (opt.use_alpha) pending_alpha = export_alpha(dl->cw, opt.nu);
            pending = true;
            first_param_layer = false;
        } else if (std::get_if<PoolLayer>(&layer)) {
            fm.layers.emplace_back(FrozenPool{});
        } else if (const auto* bl = std::get_if<BatchNormLayer>(&layer)) {
            if (i + 1 >= layers.size() ||
                !std::holds_alternative<ActivationLayer>(layers[i + 1]))
                throw UnfoldableLayer(
                    "batchnorm without a binary activation consumer");
            if (!pending)
                throw UnfoldableLayer("batchnorm without a producing layer");
            BinaryBNThresholds th = fold_bn(bl->state);
            if (opt.use_alpha) th = apply_alpha(th, pending_alpha);
            // Int8 inputs scale the first layer's pre-activations by 127;
            // thresholds move into the same integer domain.
            if (pending_scale != 1.0)
                for (auto& t : th.T)
                    t = static_cast<float>(t * pending_scale);
            const int k = static_cast<int>(
                std::lround(pending_fan_in * pending_scale));
            fm.layers.emplace_back(
                FrozenThresholdAct{quantize_thresholds(th, k)});
            pending = false;
        }
        // activation and softmax layers leave no frozen record
    }
    return fm;
}

// ---------------------------------------------------------------------------
// Serialization: magic "SBNN", u16 version, u16 layer count, model header,
// per-layer records, CRC32 trailer. Little-endian throughout.
// ---------------------------------------------------------------------------

namespace detail {

constexpr uint8_t kTagConv = 1;
constexpr uint8_t kTagDense = 2;
constexpr uint8_t kTagPool = 3;
constexpr uint8_t kTagThresholdAct = 4;

inline void write_bitfield(BinaryWriter& w, const std::vector<uint8_t>& bits) {
    uint8_t acc = 0;
    int fill = 0;
    for (uint8_t b : bits) {
        acc |= static_cast<uint8_t>((b & 1) << fill);
        if (++fill == 8) {
            w.u8(acc);
            acc = 0;
            fill = 0;
        }
    }
    if (fill) w.u8(acc);
}

inline std::vector<uint8_t> read_bitfield(BinaryReader& r, int n) {
    std::vector<uint8_t> bits(static_cast<size_t>(n));
    uint8_t acc = 0;
    for (int i = 0; i < n; ++i) {
        if (i % 8 == 0) acc = r.u8();
        bits[static_cast<size_t>(i)] = (acc >> (i % 8)) & 1;
    }
    return bits;
}

// Weight rows are padded to a byte boundary per output channel.
inline void write_weight_rows(BinaryWriter& w, const BitTensor& bits) {
    const int row_bits = bits.row_bits();
    for (size_t r = 0; r < bits.rows(); ++r) {
        uint8_t acc = 0;
        int fill = 0;
        for (int b = 0; b < row_bits; ++b) {
            acc |= static_cast<uint8_t>(bits.get(r, b) << fill);
            if (++fill == 8) {
                w.u8(acc);
                acc = 0;
                fill = 0;
            }
        }
        if (fill) w.u8(acc);
    }
}

inline BitTensor read_weight_rows(BinaryReader& r, int rows, int row_bits) {
    BitTensor out({rows, row_bits});
    for (int row = 0; row < rows; ++row) {
        uint8_t acc = 0;
        for (int b = 0; b < row_bits; ++b) {
            if (b % 8 == 0) acc = r.u8();
            if ((acc >> (b % 8)) & 1) out.set(static_cast<size_t>(row), b, true);
        }
    }
    return out;
}

inline void write_thresholds(BinaryWriter& w, const QuantizedThresholds& th) {
    for (int8_t q : th.t_q) w.i8(q);
    w.u8(th.scale_exp);
    write_bitfield(w, th.gamma_sign);
    write_bitfield(w, th.gamma_zero);
    write_bitfield(w, th.beta_pos);
}

inline QuantizedThresholds read_thresholds(BinaryReader& r, int channels) {
    QuantizedThresholds th;
    th.t_q.resize(static_cast<size_t>(channels));
    for (auto& q : th.t_q) q = r.i8();
    th.scale_exp = r.u8();
    th.gamma_sign = read_bitfield(r, channels);
    th.gamma_zero = read_bitfield(r, channels);
    th.beta_pos = read_bitfield(r, channels);
    return th;
}

}  // namespace detail

inline std::vector<uint8_t> serialize_frozen(const FrozenModel& fm) {
    BinaryWriter w;
    w.bytes(reinterpret_cast<const uint8_t*>("SBNN"), 4);
    w.u16(1);  // version
    w.u16(static_cast<uint16_t>(fm.layers.size()));
    w.u8(static_cast<uint8_t>(fm.input_mode));
    w.u32(fm.in_ch);
    w.u32(fm.in_h);
    w.u32(fm.in_w);
    w.u32(fm.num_classes);
    if (fm.input_mode == InputMode::MedianBinarize)
        for (int16_t t : fm.input_thresholds) w.i16(t);

    for (const FrozenLayer& layer : fm.layers) {
        if (const auto* c = std::get_if<FrozenConv>(&layer)) {
            w.u8(detail::kTagConv);
            w.u32(c->out_ch); w.u32(c->in_ch); w.u32(c->kh); w.u32(c->kw);
            w.u8(c->stride);
            w.u8(c->pad);
            detail::write_weight_rows(w, c->weights);
        } else if (const auto* d = std::get_if<FrozenDense>(&layer)) {
            w.u8(detail::kTagDense);
            w.u32(d->out_f); w.u32(d->in_f); w.u32(1); w.u32(1);
            detail::write_weight_rows(w, d->weights);
        } else if (std::get_if<FrozenPool>(&layer)) {
            w.u8(detail::kTagPool);
            w.u32(2); w.u32(2); w.u32(2); w.u32(2);
        } else if (const auto* t = std::get_if<FrozenThresholdAct>(&layer)) {
            w.u8(detail::kTagThresholdAct);
            w.u32(static_cast<uint32_t>(t->th.channels()));
            w.u32(0); w.u32(0); w.u32(0);
            detail::write_thresholds(w, t->th);
        }
    }
    w.append_crc32();
    return w.buffer();
}

inline FrozenModel deserialize_frozen(std::vector<uint8_t> data) {
    BinaryReader r(std::move(data));
    r.check_crc32();
    uint8_t magic[4];
    r.bytes(magic, 4);
    if (magic[0] != 'S' || magic[1] != 'B' || magic[2] != 'N' || magic[3] != 'N')
        throw FormatError("bad magic at byte 0 (want \"SBNN\")");
    const uint16_t version = r.u16();
    if (version != 1)
        throw FormatError("unsupported version " + std::to_string(version));
    const uint16_t layer_count = r.u16();

    FrozenModel fm;
    fm.input_mode = static_cast<InputMode>(r.u8());
    if (fm.input_mode != InputMode::MedianBinarize &&
        fm.input_mode != InputMode::Int8)
        throw FormatError("unknown input mode");
    fm.in_ch = r.u32();
    fm.in_h = r.u32();
    fm.in_w = r.u32();
    fm.num_classes = r.u32();
    if (fm.input_mode == InputMode::MedianBinarize) {
        fm.input_thresholds.resize(fm.in_ch);
        for (auto& t : fm.input_thresholds) t = r.i16();
    }

    for (uint16_t i = 0; i < layer_count; ++i) {
        const uint8_t tag = r.u8();
        const uint32_t s0 = r.u32(), s1 = r.u32(), s2 = r.u32(), s3 = r.u32();
        switch (tag) {
            case detail::kTagConv: {
                FrozenConv c;
                c.out_ch = s0; c.in_ch = s1; c.kh = s2; c.kw = s3;
                c.stride = r.u8();
                c.pad = r.u8();
                c.weights = detail::read_weight_rows(
                    r, static_cast<int>(c.out_ch),
                    static_cast<int>(c.in_ch * c.kh * c.kw));
                fm.layers.emplace_back(std::move(c));
                break;
            }
            case detail::kTagDense: {
                FrozenDense d;
                d.out_f = s0; d.in_f = s1;
                d.weights = detail::read_weight_rows(r, static_cast<int>(d.out_f),
                                                     static_cast<int>(d.in_f));
                fm.layers.emplace_back(std::move(d));
                break;
            }
            case detail::kTagPool:
                fm.layers.emplace_back(FrozenPool{});
                break;
            case detail::kTagThresholdAct: {
                FrozenThresholdAct t;
                t.th = detail::read_thresholds(r, static_cast<int>(s0));
                fm.layers.emplace_back(std::move(t));
                break;
            }
            default:
                throw FormatError("unknown layer tag " + std::to_string(tag) +
                                  " at byte " + std::to_string(r.offset() - 17));
        }
    }
    if (!r.at_end())
        throw FormatError("trailing bytes after last layer record at byte " +
                          std::to_string(r.offset()));
    return fm;
}

inline void save_frozen(const FrozenModel& fm, const std::string& path) {
    atomic_write_file(path, serialize_frozen(fm));
}

inline FrozenModel load_frozen(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open " + path);
    std::vector<uint8_t> data((std::istreambuf_iterator<char>(in)),
                              std::istreambuf_iterator<char>());
    return deserialize_frozen(std::move(data));
}

}  // namespace sbnn
