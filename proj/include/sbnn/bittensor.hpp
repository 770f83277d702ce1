#pragma once

#include <bit>
#include <cstdint>
#include <span>
#include <vector>

#include "sbnn/error.hpp"
#include "sbnn/tensor.hpp"

namespace sbnn {

// Packed +-1 tensor, one bit per element: bit 1 is +1, bit 0 is -1.
// The innermost axis is padded to a 64-bit word boundary and padding bits
// are kept zero so tail words can enter popcounts unmasked.
class BitTensor {
public:
    BitTensor() = default;

    explicit BitTensor(std::vector<int> shape) : shape_(std::move(shape)) {
        if (shape_.empty() || shape_.size() > 4)
            throw ShapeMismatch("bit tensor rank must be 1..4");
        rows_ = 1;
        for (size_t i = 0; i + 1 < shape_.size(); ++i)
            rows_ *= static_cast<size_t>(shape_[i]);
        row_bits_ = shape_.back();
        words_per_row_ = (static_cast<size_t>(row_bits_) + 63) / 64;
        words_.assign(rows_ * words_per_row_, 0);
    }

    const std::vector<int>& shape() const { return shape_; }
    int rank() const { return static_cast<int>(shape_.size()); }
    int dim(int i) const { return shape_[static_cast<size_t>(i)]; }
    size_t rows() const { return rows_; }
    int row_bits() const { return row_bits_; }
    size_t words_per_row() const { return words_per_row_; }
    size_t word_count() const { return words_.size(); }
    size_t logical_size() const { return rows_ * static_cast<size_t>(row_bits_); }

    uint64_t* row(size_t r) { return words_.data() + r * words_per_row_; }
    const uint64_t* row(size_t r) const { return words_.data() + r * words_per_row_; }
    std::span<const uint64_t> row_span(size_t r) const {
        return {row(r), words_per_row_};
    }

    void set(size_t r, int bit, bool value) {
        uint64_t& w = words_[r * words_per_row_ + (static_cast<size_t>(bit) >> 6)];
        const uint64_t mask = uint64_t{1} << (bit & 63);
        if (value) w |= mask; else w &= ~mask;
    }
    bool get(size_t r, int bit) const {
        return (words_[r * words_per_row_ + (static_cast<size_t>(bit) >> 6)] >>
                (bit & 63)) & 1u;
    }

    // Padding must stay zero; verified by tests and after deserialization.
    bool padding_canonical() const {
        const int tail = row_bits_ & 63;
        if (tail == 0) return true;
        const uint64_t mask = ~((uint64_t{1} << tail) - 1);
        for (size_t r = 0; r < rows_; ++r)
            if (row(r)[words_per_row_ - 1] & mask) return false;
        return true;
    }

    std::vector<uint64_t>& words() { return words_; }
    const std::vector<uint64_t>& words() const { return words_; }

    // bit = (value > 0), matching sign(0) = -1.
    static BitTensor pack(const Tensor& t) {
        BitTensor out(t.shape());
        const size_t n = out.rows_;
        const int bits = out.row_bits_;
        for (size_t r = 0; r < n; ++r) {
            const float* src = t.data() + r * static_cast<size_t>(bits);
            for (int b = 0; b < bits; ++b)
                if (src[b] > 0.0f) out.set(r, b, true);
        }
        return out;
    }

    Tensor unpack() const {
        Tensor out(shape_, 0.0f);
        for (size_t r = 0; r < rows_; ++r) {
            float* dst = out.data() + r * static_cast<size_t>(row_bits_);
            for (int b = 0; b < row_bits_; ++b) dst[b] = get(r, b) ? 1.0f : -1.0f;
        }
        return out;
    }

private:
    std::vector<int> shape_;
    size_t rows_ = 0;
    int row_bits_ = 0;
    size_t words_per_row_ = 0;
    std::vector<uint64_t> words_;
};

// +-1 dot product of two packed rows: n_valid - 2*popcount(a xor b).
// Requires canonical (zero) padding on both operands.
inline int xnor_dot(std::span<const uint64_t> a, std::span<const uint64_t> b,
                    int n_valid) {
    if (a.size() != b.size())
        throw LengthMismatch("xnor_dot: word counts differ");
    int mismatches = 0;
    for (size_t i = 0; i < a.size(); ++i)
        mismatches += std::popcount(a[i] ^ b[i]);
    return n_valid - 2 * mismatches;
}

// Integer pre-activation map (NCHW), the output domain of binary kernels.
// Every element lies in [-k, k] where k is the producing layer's fan-in.
struct IntFeatureMap {
    std::vector<int> shape;  // [N,C,H,W]
    std::vector<int32_t> data;

    IntFeatureMap() = default;
    explicit IntFeatureMap(std::vector<int> s) : shape(std::move(s)) {
        size_t n = 1;
        for (int d : shape) n *= static_cast<size_t>(d);
        data.assign(n, 0);
    }

    int dim(int i) const { return shape[static_cast<size_t>(i)]; }
    int32_t& at4(int n, int c, int h, int w) {
        return data[((static_cast<size_t>(n) * dim(1) + c) * dim(2) + h) *
                        dim(3) + w];
    }
    int32_t at4(int n, int c, int h, int w) const {
        return data[((static_cast<size_t>(n) * dim(1) + c) * dim(2) + h) *
                        dim(3) + w];
    }
};

namespace detail {

// Appends `count` bits read from src starting at src_bit to a pre-zeroed
// destination buffer at *cursor. Used to gather convolution windows and to
// flatten maps for dense layers.
inline void append_bits(uint64_t* dst, int& cursor, const uint64_t* src,
                        int src_bit, int count) {
    while (count > 0) {
        const int sb = src_bit & 63;
        const int take = std::min(count, 64 - sb);
        uint64_t chunk = src[src_bit >> 6] >> sb;
        if (take < 64) chunk &= (uint64_t{1} << take) - 1;
        const int dw = cursor >> 6, db = cursor & 63;
        dst[static_cast<size_t>(dw)] |= chunk << db;
        if (db != 0 && take > 64 - db)
            dst[static_cast<size_t>(dw) + 1] |= chunk >> (64 - db);
        cursor += take;
        src_bit += take;
        count -= take;
    }
}

}  // namespace detail

}  // namespace sbnn
