#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "sbnn/error.hpp"

namespace sbnn {

// Dense row-major float tensor of rank 1..4. Feature maps are NCHW,
// convolution kernels are [Cout,Cin,Kh,Kw].
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::vector<int> shape, float fill = 0.0f)
        : shape_(std::move(shape)), data_(checked_size(shape_), fill) {}

    static Tensor from_data(std::vector<int> shape, std::vector<float> data) {
        Tensor t;
        t.shape_ = std::move(shape);
        if (checked_size(t.shape_) != data.size())
            throw ShapeMismatch("data length " + std::to_string(data.size()) +
                                " does not match shape volume");
        t.data_ = std::move(data);
        return t;
    }

    int rank() const { return static_cast<int>(shape_.size()); }
    int dim(int i) const { return shape_[static_cast<size_t>(i)]; }
    const std::vector<int>& shape() const { return shape_; }
    size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    float* data() { return data_.data(); }
    const float* data() const { return data_.data(); }
    std::vector<float>& vec() { return data_; }
    const std::vector<float>& vec() const { return data_; }

    float& operator[](size_t i) { return data_[i]; }
    float operator[](size_t i) const { return data_[i]; }

    // Rank-specific accessors; callers are responsible for rank.
    float& at2(int i, int j) {
        return data_[static_cast<size_t>(i) * dim(1) + j];
    }
    float at2(int i, int j) const {
        return data_[static_cast<size_t>(i) * dim(1) + j];
    }
    float& at4(int n, int c, int h, int w) {
        return data_[offset4(n, c, h, w)];
    }
    float at4(int n, int c, int h, int w) const {
        return data_[offset4(n, c, h, w)];
    }

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

    std::string shape_string() const {
        std::string s = "[";
        for (int i = 0; i < rank(); ++i)
            s += (i ? "," : "") + std::to_string(shape_[static_cast<size_t>(i)]);
        return s + "]";
    }

private:
    size_t offset4(int n, int c, int h, int w) const {
        return ((static_cast<size_t>(n) * dim(1) + c) * dim(2) + h) * dim(3) + w;
    }

    static size_t checked_size(const std::vector<int>& shape) {
        if (shape.empty() || shape.size() > 4)
            throw ShapeMismatch("tensor rank must be 1..4");
        size_t n = 1;
        for (int d : shape) {
            if (d <= 0) throw ShapeMismatch("non-positive extent");
            n *= static_cast<size_t>(d);
        }
        return n;
    }

    std::vector<int> shape_;
    std::vector<float> data_;
};

inline Tensor map(const std::function<float(float)>& f, const Tensor& t) {
    Tensor out = t;
    for (auto& v : out.vec()) v = f(v);
    return out;
}

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (!a.same_shape(b))
        throw ShapeMismatch(std::string(op) + ": " + a.shape_string() + " vs " +
                            b.shape_string());
}

inline Tensor add(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "add");
    Tensor out = a;
    for (size_t i = 0; i < out.size(); ++i) out[i] += b[i];
    return out;
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "sub");
    Tensor out = a;
    for (size_t i = 0; i < out.size(); ++i) out[i] -= b[i];
    return out;
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "mul");
    Tensor out = a;
    for (size_t i = 0; i < out.size(); ++i) out[i] *= b[i];
    return out;
}

inline Tensor scale(const Tensor& t, float s) {
    Tensor out = t;
    for (auto& v : out.vec()) v *= s;
    return out;
}

inline float reduce_mean(const Tensor& t) {
    double acc = 0.0;
    for (size_t i = 0; i < t.size(); ++i) acc += t[i];
    return static_cast<float>(acc / static_cast<double>(t.size()));
}

// Population variance over all elements.
inline float reduce_var(const Tensor& t) {
    const double mean = reduce_mean(t);
    double acc = 0.0;
    for (size_t i = 0; i < t.size(); ++i) {
        const double d = t[i] - mean;
        acc += d * d;
    }
    return static_cast<float>(acc / static_cast<double>(t.size()));
}

// Reduces the axes listed in `axes` (collapsing them); remaining axes keep
// their order. Reducing every axis yields a rank-1 tensor of size 1.
inline Tensor reduce_mean(const Tensor& t, const std::vector<int>& axes) {
    bool reduce[4] = {false, false, false, false};
    for (int a : axes) {
        if (a < 0 || a >= t.rank()) throw OutOfRange("reduce axis out of range");
        reduce[a] = true;
    }
    std::vector<int> out_shape;
    for (int i = 0; i < t.rank(); ++i)
        if (!reduce[i]) out_shape.push_back(t.dim(i));
    if (out_shape.empty()) out_shape.push_back(1);

    Tensor out(out_shape, 0.0f);
    std::vector<double> acc(out.size(), 0.0);
    // Walk the full index space once, binning into the kept-axes offset.
    int ext[4] = {1, 1, 1, 1};
    for (int i = 0; i < t.rank(); ++i) ext[i] = t.dim(i);
    size_t flat = 0;
    for (int i0 = 0; i0 < ext[0]; ++i0)
        for (int i1 = 0; i1 < ext[1]; ++i1)
            for (int i2 = 0; i2 < ext[2]; ++i2)
                for (int i3 = 0; i3 < ext[3]; ++i3, ++flat) {
                    const int idx[4] = {i0, i1, i2, i3};
                    size_t o = 0;
                    for (int a = 0; a < t.rank(); ++a)
                        if (!reduce[a]) o = o * static_cast<size_t>(ext[a]) + idx[a];
                    acc[o] += t[flat];
                }
    size_t group = t.size() / out.size();
    for (size_t i = 0; i < out.size(); ++i)
        out[i] = static_cast<float>(acc[i] / static_cast<double>(group));
    return out;
}

inline Tensor reduce_var(const Tensor& t, const std::vector<int>& axes) {
    const Tensor mean = reduce_mean(t, axes);
    bool reduce[4] = {false, false, false, false};
    for (int a : axes) reduce[a] = true;
    Tensor out(mean.shape(), 0.0f);
    std::vector<double> acc(out.size(), 0.0);
    int ext[4] = {1, 1, 1, 1};
    for (int i = 0; i < t.rank(); ++i) ext[i] = t.dim(i);
    size_t flat = 0;
    for (int i0 = 0; i0 < ext[0]; ++i0)
        for (int i1 = 0; i1 < ext[1]; ++i1)
            for (int i2 = 0; i2 < ext[2]; ++i2)
                for (int i3 = 0; i3 < ext[3]; ++i3, ++flat) {
                    const int idx[4] = {i0, i1, i2, i3};
                    size_t o = 0;
                    for (int a = 0; a < t.rank(); ++a)
                        if (!reduce[a]) o = o * static_cast<size_t>(ext[a]) + idx[a];
                    const double d = t[flat] - mean[o];
                    acc[o] += d * d;
                }
    size_t group = t.size() / out.size();
    for (size_t i = 0; i < out.size(); ++i)
        out[i] = static_cast<float>(acc[i] / static_cast<double>(group));
    return out;
}

// Cross-correlation (deep-learning convention, no kernel flip) of an NCHW
// input with a [Cout,Cin,Kh,Kw] kernel. Zero padding.
inline Tensor conv2d(const Tensor& input, const Tensor& kernel, int stride,
                     int pad) {
    if (input.rank() != 4 || kernel.rank() != 4)
        throw ShapeMismatch("conv2d expects rank-4 input and kernel");
    if (stride <= 0) throw ShapeMismatch("conv2d: stride must be positive");
    if (pad < 0) throw ShapeMismatch("conv2d: pad must be non-negative");
    const int N = input.dim(0), Cin = input.dim(1), H = input.dim(2),
              W = input.dim(3);
    const int Cout = kernel.dim(0), Kh = kernel.dim(2), Kw = kernel.dim(3);
    if (kernel.dim(1) != Cin)
        throw ShapeMismatch("conv2d: kernel expects " +
                            std::to_string(kernel.dim(1)) + " input channels, got " +
                            std::to_string(Cin));
    if (Kh > H + 2 * pad || Kw > W + 2 * pad)
        throw ShapeMismatch("conv2d: kernel larger than padded input");
    if ((H + 2 * pad - Kh) % stride != 0 || (W + 2 * pad - Kw) % stride != 0)
        throw ShapeMismatch("conv2d: output extent not integral");
    const int Ho = (H + 2 * pad - Kh) / stride + 1;
    const int Wo = (W + 2 * pad - Kw) / stride + 1;

    Tensor out({N, Cout, Ho, Wo}, 0.0f);
    for (int n = 0; n < N; ++n)
        for (int co = 0; co < Cout; ++co)
            for (int oh = 0; oh < Ho; ++oh)
                for (int ow = 0; ow < Wo; ++ow) {
                    float acc = 0.0f;
                    for (int ci = 0; ci < Cin; ++ci)
                        for (int kh = 0; kh < Kh; ++kh) {
                            const int ih = oh * stride - pad + kh;
                            if (ih < 0 || ih >= H) continue;
                            for (int kw = 0; kw < Kw; ++kw) {
                                const int iw = ow * stride - pad + kw;
                                if (iw < 0 || iw >= W) continue;
                                acc += input.at4(n, ci, ih, iw) *
                                       kernel.at4(co, ci, kh, kw);
                            }
                        }
                    out.at4(n, co, oh, ow) = acc;
                }
    return out;
}

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2)
        throw ShapeMismatch("matmul expects rank-2 operands");
    if (a.dim(1) != b.dim(0))
        throw ShapeMismatch("matmul: inner dims " + std::to_string(a.dim(1)) +
                            " vs " + std::to_string(b.dim(0)));
    const int M = a.dim(0), K = a.dim(1), N = b.dim(1);
    Tensor out({M, N}, 0.0f);
    for (int i = 0; i < M; ++i)
        for (int k = 0; k < K; ++k) {
            const float aik = a.at2(i, k);
            if (aik == 0.0f) continue;
            for (int j = 0; j < N; ++j) out.at2(i, j) += aik * b.at2(k, j);
        }
    return out;
}

}  // namespace sbnn
