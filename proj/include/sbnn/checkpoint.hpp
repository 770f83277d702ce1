#pragma once

#include <string>
#include <vector>

#include "sbnn/adam.hpp"
#include "sbnn/config.hpp"
#include "sbnn/io.hpp"
#include "sbnn/model.hpp"

namespace sbnn {

// Training checkpoint: the latent parameters P (the constrained weights W
// are derived), batch-norm state, Adam state, and enough metadata to
// rebuild the graph and export it.
struct Checkpoint {
    RunConfig config;
    int epoch = 0;
    float nu = 1.0f;
    std::vector<int> input_shape;       // [C,H,W]
    std::vector<float> input_medians;   // per channel, from the training set
    ModelGraph model;
    std::vector<AdamState> adam;        // canonical slot order
};

namespace detail {

inline void write_tensor(BinaryWriter& w, const Tensor& t) {
    w.u8(static_cast<uint8_t>(t.rank()));
    for (int i = 0; i < t.rank(); ++i)
        w.u32(static_cast<uint32_t>(t.dim(i)));
    for (size_t i = 0; i < t.size(); ++i) w.f32(t[i]);
}

inline Tensor read_tensor(BinaryReader& r) {
    const int rank = r.u8();
    if (rank < 1 || rank > 4) throw FormatError("tensor rank out of range");
    std::vector<int> shape(static_cast<size_t>(rank));
    for (auto& d : shape) d = static_cast<int>(r.u32());
    Tensor t(shape);
    for (size_t i = 0; i < t.size(); ++i) t[i] = r.f32();
    return t;
}

inline void write_floats(BinaryWriter& w, const std::vector<float>& v) {
    w.u32(static_cast<uint32_t>(v.size()));
    for (float x : v) w.f32(x);
}

inline std::vector<float> read_floats(BinaryReader& r) {
    std::vector<float> v(r.u32());
    for (auto& x : v) x = r.f32();
    return v;
}

inline void write_adam(BinaryWriter& w, const AdamState& s) {
    write_tensor(w, s.m);
    write_tensor(w, s.v);
    w.u64(static_cast<uint64_t>(s.step));
    w.f32(s.lr0);
    w.f32(s.decay);
    w.f32(s.beta1);
    w.f32(s.beta2);
    w.f32(s.eps);
}

inline AdamState read_adam(BinaryReader& r) {
    AdamState s;
    s.m = read_tensor(r);
    s.v = read_tensor(r);
    s.step = static_cast<long>(r.u64());
    s.lr0 = r.f32();
    s.decay = r.f32();
    s.beta1 = r.f32();
    s.beta2 = r.f32();
    s.eps = r.f32();
    return s;
}

}  // namespace detail

inline std::vector<uint8_t> serialize_checkpoint(const Checkpoint& ck) {
    BinaryWriter w;
    w.bytes(reinterpret_cast<const uint8_t*>("SBCK"), 4);
    w.u16(1);
    w.str(serialize_config(ck.config));
    w.i32(ck.epoch);
    w.f32(ck.nu);
    for (int d : ck.input_shape) w.u32(static_cast<uint32_t>(d));
    detail::write_floats(w, ck.input_medians);

    for (const Layer& layer : ck.model.layers()) {
        if (const auto* cl = std::get_if<ConvLayer>(&layer)) {
            detail::write_tensor(w, cl->cw.latent());
        } else if (const auto* dl = std::get_if<DenseLayer>(&layer)) {
            detail::write_tensor(w, dl->cw.latent());
        } else if (const auto* bl = std::get_if<BatchNormLayer>(&layer)) {
            detail::write_floats(w, bl->state.running_mean);
            detail::write_floats(w, bl->state.running_var);
            detail::write_floats(w, bl->state.gamma);
            detail::write_floats(w, bl->state.beta);
            w.f32(bl->state.momentum);
            w.f32(bl->state.epsilon);
        }
    }
    w.u32(static_cast<uint32_t>(ck.adam.size()));
    for (const AdamState& s : ck.adam) detail::write_adam(w, s);
    w.append_crc32();
    return w.buffer();
}

inline Checkpoint deserialize_checkpoint(std::vector<uint8_t> data) {
    BinaryReader r(std::move(data));
    r.check_crc32();
    uint8_t magic[4];
    r.bytes(magic, 4);
    if (magic[0] != 'S' || magic[1] != 'B' || magic[2] != 'C' || magic[3] != 'K')
        throw FormatError("bad checkpoint magic");
    if (r.u16() != 1) throw FormatError("unsupported checkpoint version");

    Checkpoint ck;
    ck.config = parse_config(r.str());
    ck.epoch = r.i32();
    ck.nu = r.f32();
    ck.input_shape = {static_cast<int>(r.u32()), static_cast<int>(r.u32()),
                      static_cast<int>(r.u32())};
    ck.input_medians = detail::read_floats(r);

    ck.model = ModelGraph::build(parse_architecture(ck.config.arch),
                                 ck.input_shape, ck.config.mode, ck.config.seed);
    for (Layer& layer : ck.model.layers()) {
        if (auto* cl = std::get_if<ConvLayer>(&layer)) {
            Tensor p = detail::read_tensor(r);
            if (!p.same_shape(cl->cw.latent()))
                throw FormatError("checkpoint conv shape mismatch");
            cl->cw.latent() = std::move(p);
        } else if (auto* dl = std::get_if<DenseLayer>(&layer)) {
            Tensor p = detail::read_tensor(r);
            if (!p.same_shape(dl->cw.latent()))
                throw FormatError("checkpoint dense shape mismatch");
            dl->cw.latent() = std::move(p);
        } else if (auto* bl = std::get_if<BatchNormLayer>(&layer)) {
            bl->state.running_mean = detail::read_floats(r);
            bl->state.running_var = detail::read_floats(r);
            bl->state.gamma = detail::read_floats(r);
            bl->state.beta = detail::read_floats(r);
            bl->state.momentum = r.f32();
            bl->state.epsilon = r.f32();
            if (bl->state.running_mean.size() != bl->state.gamma.size())
                throw FormatError("checkpoint batchnorm size mismatch");
        }
    }
    ck.model.refresh_weights_all(ck.nu);

    ck.adam.resize(r.u32());
    for (auto& s : ck.adam) s = detail::read_adam(r);
    if (!r.at_end()) throw FormatError("trailing bytes in checkpoint");
    return ck;
}

inline void save_checkpoint(const Checkpoint& ck, const std::string& path) {
    atomic_write_file(path, serialize_checkpoint(ck));
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open " + path);
    std::vector<uint8_t> data((std::istreambuf_iterator<char>(in)),
                              std::istreambuf_iterator<char>());
    return deserialize_checkpoint(std::move(data));
}

}  // namespace sbnn
