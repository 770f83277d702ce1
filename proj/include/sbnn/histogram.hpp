#pragma once

#include <vector>

#include "sbnn/constrained_weights.hpp"
#include "sbnn/layer_ops.hpp"

namespace sbnn {

// Fixed-range density histograms over [-1.5, 1.5] of the float weights
// before binarization and of sign(P) after, comparable across layers
// and epochs.
struct HistogramPair {
    std::vector<float> bin_centers;
    std::vector<float> pre_density;
    std::vector<float> post_density;
};

namespace detail {

inline std::vector<float> density_histogram(const Tensor& values, int bins,
                                            float lo, float hi) {
    std::vector<float> density(bins, 0.0f);
    const float width = (hi - lo) / static_cast<float>(bins);
    size_t total = values.size();
    for (size_t i = 0; i < total; ++i) {
        int b = static_cast<int>((values[i] - lo) / width);
        if (b < 0) b = 0;
        if (b >= bins) b = bins - 1;
        density[static_cast<size_t>(b)] += 1.0f;
    }
    const float norm = 1.0f / (static_cast<float>(total) * width);
    for (auto& d : density) d *= norm;
    return density;
}

}  // namespace detail

inline HistogramPair histogram_snapshot(const ConstrainedWeights& cw, float nu,
                                        int bins = 100) {
    constexpr float kLo = -1.5f, kHi = 1.5f;
    HistogramPair out;
    out.bin_centers.resize(bins);
    const float width = (kHi - kLo) / static_cast<float>(bins);
    for (int b = 0; b < bins; ++b)
        out.bin_centers[static_cast<size_t>(b)] = kLo + (b + 0.5f) * width;
    out.pre_density = detail::density_histogram(cw.effective_float_weights(nu),
                                                bins, kLo, kHi);
    out.post_density =
        detail::density_histogram(sign_forward(cw.latent()), bins, kLo, kHi);
    return out;
}

}  // namespace sbnn
