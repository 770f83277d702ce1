#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "sbnn/error.hpp"
#include "sbnn/tensor.hpp"

namespace sbnn {

enum class DatasetFormat { MnistIdx, Cifar10Binary, SyntheticBlobs };

inline DatasetFormat dataset_format_from_string(const std::string& s) {
    if (s == "mnist-idx") return DatasetFormat::MnistIdx;
    if (s == "cifar10-binary") return DatasetFormat::Cifar10Binary;
    if (s == "synthetic-blobs") return DatasetFormat::SyntheticBlobs;
    throw ConfigError("unknown dataset format: " + s);
}

inline const char* to_string(DatasetFormat f) {
    switch (f) {
        case DatasetFormat::MnistIdx: return "mnist-idx";
        case DatasetFormat::Cifar10Binary: return "cifar10-binary";
        case DatasetFormat::SyntheticBlobs: return "synthetic-blobs";
    }
    return "?";
}

// In-memory dataset: images normalized to [-1,1], NCHW.
struct Dataset {
    Tensor images;
    std::vector<int> labels;
    int num_classes = 0;

    int count() const { return images.empty() ? 0 : images.dim(0); }
    std::vector<int> input_shape() const {
        return {images.dim(1), images.dim(2), images.dim(3)};
    }

    // Per-channel median of the raw feature values; used as the input
    // binarization threshold of exported models.
    std::vector<float> channel_medians() const {
        const int c = images.dim(1);
        const size_t per = static_cast<size_t>(images.dim(2)) * images.dim(3);
        std::vector<float> medians(static_cast<size_t>(c));
        std::vector<float> scratch;
        scratch.reserve(static_cast<size_t>(count()) * per);
        for (int ch = 0; ch < c; ++ch) {
            scratch.clear();
            for (int n = 0; n < count(); ++n) {
                const float* p = images.data() +
                                 ((static_cast<size_t>(n) * c + ch) * per);
                scratch.insert(scratch.end(), p, p + per);
            }
            auto mid = scratch.begin() + static_cast<long>(scratch.size() / 2);
            std::nth_element(scratch.begin(), mid, scratch.end());
            medians[static_cast<size_t>(ch)] = *mid;
        }
        return medians;
    }
};

namespace detail {

inline uint32_t read_be_u32(std::ifstream& in, const std::string& file,
                            size_t offset) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4))
        throw FormatError(file + ": truncated at byte " + std::to_string(offset));
    return (static_cast<uint32_t>(b[0]) << 24) | (static_cast<uint32_t>(b[1]) << 16) |
           (static_cast<uint32_t>(b[2]) << 8) | static_cast<uint32_t>(b[3]);
}

inline float normalize_u8(uint8_t p) {
    return static_cast<float>(p) / 127.5f - 1.0f;
}

}  // namespace detail

// IDX pair loader; `prefix` names the file pair as in
// "<prefix>-images-idx3-ubyte" / "<prefix>-labels-idx1-ubyte".
inline Dataset load_mnist_idx(const std::string& prefix) {
    const std::string image_file = prefix + "-images-idx3-ubyte";
    const std::string label_file = prefix + "-labels-idx1-ubyte";

    std::ifstream imgs(image_file, std::ios::binary);
    if (!imgs) throw FormatError("cannot open " + image_file);
    const uint32_t magic = detail::read_be_u32(imgs, image_file, 0);
    if (magic != 0x00000803u)
        throw FormatError(image_file + ": bad magic at byte 0 (want 0x00000803)");
    const uint32_t n = detail::read_be_u32(imgs, image_file, 4);
    const uint32_t rows = detail::read_be_u32(imgs, image_file, 8);
    const uint32_t cols = detail::read_be_u32(imgs, image_file, 12);

    std::ifstream labs(label_file, std::ios::binary);
    if (!labs) throw FormatError("cannot open " + label_file);
    const uint32_t lmagic = detail::read_be_u32(labs, label_file, 0);
    if (lmagic != 0x00000801u)
        throw FormatError(label_file + ": bad magic at byte 0 (want 0x00000801)");
    const uint32_t ln = detail::read_be_u32(labs, label_file, 4);
    if (ln != n)
        throw FormatError(label_file + ": label count " + std::to_string(ln) +
                          " != image count " + std::to_string(n));

    Dataset ds;
    ds.num_classes = 10;
    ds.images = Tensor({static_cast<int>(n), 1, static_cast<int>(rows),
                        static_cast<int>(cols)});
    ds.labels.resize(n);
    const size_t per = static_cast<size_t>(rows) * cols;
    std::vector<uint8_t> buf(per);
    for (uint32_t i = 0; i < n; ++i) {
        if (!imgs.read(reinterpret_cast<char*>(buf.data()),
                       static_cast<std::streamsize>(per)))
            throw FormatError(image_file + ": truncated at byte " +
                              std::to_string(16 + static_cast<size_t>(i) * per));
        float* out = ds.images.data() + static_cast<size_t>(i) * per;
        for (size_t j = 0; j < per; ++j) out[j] = detail::normalize_u8(buf[j]);
        char lab;
        if (!labs.read(&lab, 1))
            throw FormatError(label_file + ": truncated at byte " +
                              std::to_string(8 + i));
        ds.labels[i] = static_cast<uint8_t>(lab);
        if (ds.labels[i] > 9)
            throw FormatError(label_file + ": label out of range at record " +
                              std::to_string(i));
    }
    return ds;
}

// CIFAR-10 binary batches: each record is 1 label byte + 3072 RGB bytes.
// `path` is either one .bin file or a directory holding data_batch_*.bin
// (falling back to test_batch.bin).
inline Dataset load_cifar10_binary(const std::string& path) {
    namespace fs = std::filesystem;
    std::vector<std::string> files;
    if (fs::is_directory(path)) {
        for (int i = 1; i <= 5; ++i) {
            const std::string f = path + "/data_batch_" + std::to_string(i) + ".bin";
            if (fs::exists(f)) files.push_back(f);
        }
        if (files.empty() && fs::exists(path + "/test_batch.bin"))
            files.push_back(path + "/test_batch.bin");
        if (files.empty())
            throw FormatError(path + ": no CIFAR-10 batch files found");
    } else {
        files.push_back(path);
    }

    constexpr size_t kRecord = 1 + 3072;
    std::vector<uint8_t> raw;
    for (const std::string& f : files) {
        std::ifstream in(f, std::ios::binary);
        if (!in) throw FormatError("cannot open " + f);
        std::vector<uint8_t> chunk((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
        if (chunk.size() % kRecord != 0)
            throw FormatError(f + ": size " + std::to_string(chunk.size()) +
                              " not a multiple of record size 3073 (trailing " +
                              std::to_string(chunk.size() % kRecord) +
                              " bytes at byte " +
                              std::to_string(chunk.size() - chunk.size() % kRecord) +
                              ")");
        raw.insert(raw.end(), chunk.begin(), chunk.end());
    }

    const size_t n = raw.size() / kRecord;
    Dataset ds;
    ds.num_classes = 10;
    ds.images = Tensor({static_cast<int>(n), 3, 32, 32});
    ds.labels.resize(n);
    for (size_t i = 0; i < n; ++i) {
        const uint8_t* rec = raw.data() + i * kRecord;
        if (rec[0] > 9)
            throw FormatError("label out of range at byte " +
                              std::to_string(i * kRecord));
        ds.labels[i] = rec[0];
        float* out = ds.images.data() + i * 3072;
        for (size_t j = 0; j < 3072; ++j)
            out[j] = detail::normalize_u8(rec[1 + j]);
    }
    return ds;
}

// Two-class 2-D blob mixture: Gaussian clusters at -(0.45,0.45) and
// +(0.45,0.45) with sigma 0.2, clamped to [-1,1]. Cleanly separable, which
// keeps the binarized decision boundary learnable at toy scale.
inline Dataset make_blobs(uint32_t seed, int n) {
    std::mt19937 rng(seed);
    std::normal_distribution<float> noise(0.0f, 0.2f);
    std::uniform_int_distribution<int> cls(0, 1);
    Dataset ds;
    ds.num_classes = 2;
    ds.images = Tensor({n, 2, 1, 1});
    ds.labels.resize(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        const int c = cls(rng);
        const float center = c ? 0.45f : -0.45f;
        ds.images[static_cast<size_t>(i) * 2] =
            std::clamp(center + noise(rng), -1.0f, 1.0f);
        ds.images[static_cast<size_t>(i) * 2 + 1] =
            std::clamp(center + noise(rng), -1.0f, 1.0f);
        ds.labels[static_cast<size_t>(i)] = c;
    }
    return ds;
}

// Blob path syntax: "seed=7,n=1000" (either key optional).
inline Dataset load_dataset(const std::string& path, DatasetFormat format) {
    switch (format) {
        case DatasetFormat::MnistIdx: return load_mnist_idx(path);
        case DatasetFormat::Cifar10Binary: return load_cifar10_binary(path);
        case DatasetFormat::SyntheticBlobs: {
            uint32_t seed = 7;
            int n = 1000;
            std::istringstream in(path);
            std::string kv;
            while (std::getline(in, kv, ',')) {
                if (kv.empty()) continue;
                const auto eq = kv.find('=');
                if (eq == std::string::npos)
                    throw FormatError("blob spec expects key=value, got " + kv);
                const std::string key = kv.substr(0, eq);
                const std::string val = kv.substr(eq + 1);
                if (key == "seed") seed = static_cast<uint32_t>(std::stoul(val));
                else if (key == "n") n = std::stoi(val);
                else throw FormatError("unknown blob spec key " + key);
            }
            return make_blobs(seed, n);
        }
    }
    throw FormatError("unhandled dataset format");
}

// Deterministic train/val split: last `val_fraction` of a seeded shuffle.
inline void split_dataset(const Dataset& full, float val_fraction, uint32_t seed,
                          Dataset& train, Dataset& val) {
    const int n = full.count();
    std::vector<int> idx(static_cast<size_t>(n));
    std::iota(idx.begin(), idx.end(), 0);
    std::mt19937 rng(seed);
    std::shuffle(idx.begin(), idx.end(), rng);
    const int n_val = static_cast<int>(static_cast<float>(n) * val_fraction);
    const int n_train = n - n_val;

    auto take = [&full](const std::vector<int>& subset) {
        Dataset out;
        out.num_classes = full.num_classes;
        const size_t per = full.images.size() / static_cast<size_t>(full.count());
        std::vector<int> shape = full.images.shape();
        shape[0] = static_cast<int>(subset.size());
        out.images = Tensor(shape);
        out.labels.resize(subset.size());
        for (size_t i = 0; i < subset.size(); ++i) {
            const float* src =
                full.images.data() + static_cast<size_t>(subset[i]) * per;
            std::copy(src, src + per, out.images.data() + i * per);
            out.labels[i] = full.labels[static_cast<size_t>(subset[i])];
        }
        return out;
    };
    train = take(std::vector<int>(idx.begin(), idx.begin() + n_train));
    val = take(std::vector<int>(idx.begin() + n_train, idx.end()));
}

struct Batch {
    Tensor images;
    std::vector<int> labels;
};

// Shuffled minibatch iterator over a Dataset with optional pad-4 /
// random-crop / horizontal-flip augmentation. Order is a pure function of
// the epoch seed.
class DatasetStream {
public:
    DatasetStream(const Dataset& data, int batch_size, bool augment)
        : data_(&data), batch_size_(batch_size), augment_(augment),
          order_(static_cast<size_t>(data.count())) {
        std::iota(order_.begin(), order_.end(), 0);
    }

    void start_epoch(uint64_t seed) {
        rng_.seed(seed);
        std::shuffle(order_.begin(), order_.end(), rng_);
        cursor_ = 0;
    }

    bool next(Batch& out) {
        if (cursor_ >= order_.size()) return false;
        const size_t take =
            std::min(static_cast<size_t>(batch_size_), order_.size() - cursor_);
        const int c = data_->images.dim(1), h = data_->images.dim(2),
                  w = data_->images.dim(3);
        const size_t per = static_cast<size_t>(c) * h * w;
        out.images = Tensor({static_cast<int>(take), c, h, w});
        out.labels.resize(take);
        for (size_t i = 0; i < take; ++i) {
            const int src_idx = order_[cursor_ + i];
            const float* src =
                data_->images.data() + static_cast<size_t>(src_idx) * per;
            float* dst = out.images.data() + i * per;
            if (augment_ && h > 1 && w > 1) {
                augment_into(src, dst, c, h, w);
            } else {
                std::copy(src, src + per, dst);
            }
            out.labels[i] = data_->labels[static_cast<size_t>(src_idx)];
        }
        cursor_ += take;
        return true;
    }

private:
    // Pad 4 px each side (zeros), crop back to HxW at a random offset,
    // flip horizontally with probability 1/2.
    void augment_into(const float* src, float* dst, int c, int h, int w) {
        constexpr int kPad = 4;
        std::uniform_int_distribution<int> off(0, 2 * kPad);
        std::uniform_int_distribution<int> coin(0, 1);
        const int oy = off(rng_), ox = off(rng_);
        const bool flip = coin(rng_) == 1;
        for (int ch = 0; ch < c; ++ch)
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x) {
                    const int sy = y + oy - kPad;
                    const int sx0 = x + ox - kPad;
                    const int sx = flip ? (w - 1 - sx0) : sx0;
                    float v = 0.0f;
                    if (sy >= 0 && sy < h && sx >= 0 && sx < w)
                        v = src[(static_cast<size_t>(ch) * h + sy) * w + sx];
                    dst[(static_cast<size_t>(ch) * h + y) * w + x] = v;
                }
    }

    const Dataset* data_;
    int batch_size_;
    bool augment_;
    std::vector<int> order_;
    size_t cursor_ = 0;
    std::mt19937 rng_;
};

}  // namespace sbnn
