#pragma once

#include "stcflow/tensor.hpp"

#include <optional>
#include <string>

namespace stcflow {

/// Optical flow, [2,H,W]: channel 0 horizontal (u), channel 1 vertical (v),
/// in pixels at the field's own resolution.
using FlowField = Tensor<float>;

/// Middlebury .flo: float32 sentinel 202021.25, int32 width, int32 height,
/// then row-major interleaved (u,v) float32 pairs. Little-endian throughout.
FlowField read_flo(const std::string& path);
void write_flo(const FlowField& flow, const std::string& path);

/// HSV colour-wheel rendering: hue = atan2(v,u), saturation = |flow| scaled by
/// max_magnitude (default: field maximum, floored at 1e-6). Zero flow is white.
Tensor<float> flow_to_color(const FlowField& flow,
                            std::optional<float> max_magnitude = std::nullopt);

}  // namespace stcflow
