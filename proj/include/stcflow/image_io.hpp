#pragma once

#include "stcflow/tensor.hpp"

#include <string>

namespace stcflow {

/// Loads an 8/16-bit PNG or a binary PPM/PGM as [3,H,W] floats in [0,1].
/// Grayscale inputs are replicated across channels.
Tensor<float> read_image(const std::string& path);

/// Writes [3,H,W] or [1,H,W] floats in [0,1] as an 8-bit PNG.
void write_png(const std::string& path, const Tensor<float>& img);

void write_ppm(const std::string& path, const Tensor<float>& img);

}  // namespace stcflow
