// Copyright (c) 2026 The MAGIC Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace magic {

enum class errc {
    shape_mismatch,
    zero_axis,
    malformed_header,
    offset_overlap,
    unsupported_dtype,
    io_failure,
    dimension_mismatch,
    unknown_activation,
    missing_tensor,
    missing_labels,
    diverged_loss,
    base_mismatch,
    empty_input,
    degenerate_feature,
    degenerate_input,
    unknown_key,
    out_of_range,
    missing_required,
};

const char* errc_name(errc code) noexcept;

class Error : public std::runtime_error {
public:
    Error(errc code, const std::string& message)
        : std::runtime_error(std::string(errc_name(code)) + ": " + message), code_(code) {}

    errc code() const noexcept { return code_; }

private:
    errc code_;
};

[[noreturn]] inline void fail(errc code, const std::string& message) {
    throw Error(code, message);
}

inline const char* errc_name(errc code) noexcept {
    switch (code) {
        case errc::shape_mismatch: return "ShapeMismatch";
        case errc::zero_axis: return "ZeroAxis";
        case errc::malformed_header: return "MalformedHeader";
        case errc::offset_overlap: return "OffsetOverlap";
        case errc::unsupported_dtype: return "UnsupportedDtype";
        case errc::io_failure: return "IoFailure";
        case errc::dimension_mismatch: return "DimensionMismatch";
        case errc::unknown_activation: return "UnknownActivation";
        case errc::missing_tensor: return "MissingTensor";
        case errc::missing_labels: return "MissingLabels";
        case errc::diverged_loss: return "DivergedLoss";
        case errc::base_mismatch: return "BaseMismatch";
        case errc::empty_input: return "EmptyInput";
        case errc::degenerate_feature: return "DegenerateFeature";
        case errc::degenerate_input: return "DegenerateInput";
        case errc::unknown_key: return "UnknownKey";
        case errc::out_of_range: return "OutOfRange";
        case errc::missing_required: return "MissingRequired";
    }
    return "UnknownError";
}

}  // namespace magic
