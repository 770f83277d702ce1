#pragma once

#include <cmath>
#include <string>

#include "sbnn/error.hpp"

namespace sbnn {

// The monotone sharpness schedule nu_0 < nu_1 < ... < nu_M driving
// self-binarization. Geometric interpolation between the endpoints.
struct NuSchedule {
    float nu_start = 1.0f;
    float nu_end = 1000.0f;
    int total_epochs = 1;  // M; nu_at is defined on epochs 0..M

    NuSchedule() = default;
    NuSchedule(float start, float end, int m)
        : nu_start(start), nu_end(end), total_epochs(m) {
        if (start <= 0.0f || end < start)
            throw OutOfRange("schedule endpoints must satisfy 0 < start <= end");
        if (m < 0) throw OutOfRange("schedule length must be non-negative");
    }
};

// nu_e = nu_start * (nu_end/nu_start)^(e/M), with exact endpoints.
inline float nu_at(const NuSchedule& s, int epoch) {
    if (epoch < 0 || epoch > s.total_epochs)
        throw OutOfRange("epoch " + std::to_string(epoch) +
                         " outside schedule 0.." + std::to_string(s.total_epochs));
    if (epoch == s.total_epochs) return s.nu_end;
    if (epoch == 0) return s.nu_start;
    const double ratio = static_cast<double>(s.nu_end) / s.nu_start;
    const double t = static_cast<double>(epoch) / s.total_epochs;
    return static_cast<float>(s.nu_start * std::pow(ratio, t));
}

}  // namespace sbnn
