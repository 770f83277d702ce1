#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace sbnn {

// All library errors carry a machine-parsable category plus a human message.
// The CLI prints them as a single "category: message" line.
class Error : public std::runtime_error {
public:
    Error(std::string category, const std::string& message)
        : std::runtime_error(category + ": " + message),
          category_(std::move(category)) {}

    const std::string& category() const noexcept { return category_; }

private:
    std::string category_;
};

#define SBNN_DEFINE_ERROR(NAME)                              \
    struct NAME : Error {                                    \
        explicit NAME(const std::string& message)            \
            : Error(#NAME, message) {}                       \
    }

SBNN_DEFINE_ERROR(ShapeMismatch);
SBNN_DEFINE_ERROR(DegenerateBatch);
SBNN_DEFINE_ERROR(StaleCache);
SBNN_DEFINE_ERROR(WrongMode);
SBNN_DEFINE_ERROR(OutOfRange);
SBNN_DEFINE_ERROR(NonPositiveAlpha);
SBNN_DEFINE_ERROR(LengthMismatch);
SBNN_DEFINE_ERROR(ChannelMismatch);
SBNN_DEFINE_ERROR(FormatError);
SBNN_DEFINE_ERROR(ChecksumError);
SBNN_DEFINE_ERROR(NonFiniteLoss);
SBNN_DEFINE_ERROR(UnfoldableLayer);
SBNN_DEFINE_ERROR(InvalidArchitecture);
SBNN_DEFINE_ERROR(ConfigError);

#undef SBNN_DEFINE_ERROR

}  // namespace sbnn
