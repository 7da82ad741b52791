#pragma once

#include "stcflow/tensor.hpp"

#include <cstdint>
#include <vector>

namespace stcflow {

struct SyntheticSpec {
  double affine_range = 4.0;    // translation/linear term scale, pixels
  double sinusoid_range = 2.0;  // sinusoidal perturbation amplitude, pixels
  double noise_sigma = 0.0;     // photometric noise on frame 2
  double max_flow = 8.0;        // global magnitude cap, pixels
};

/// One generated pair: gt_flow satisfies frame1(x) == frame2(x + gt(x)) up to
/// interpolation and photometric noise, so backward-warping frame 2 by the
/// ground truth reproduces frame 1.
struct SyntheticSample {
  Tensor<float> frame1, frame2;  // [3,H,W] in [0,1]
  Tensor<float> gt_flow;         // [2,H,W]
  uint64_t seed = 0;
};

/// Deterministic per (seed, index). Frames are multi-octave noise textures;
/// flows are affine fields plus a low-frequency sinusoid with a per-sample
/// amplitude factor (squared-uniform, so near-zero motion is well covered),
/// capped at max_flow.
std::vector<SyntheticSample> generate_synthetic(int count, int h, int w, uint64_t seed,
                                                const SyntheticSpec& spec);

/// Horizontal/vertical flip of a sample; flow components negate along the
/// flipped axes. The flip-augmentation primitive used during training.
SyntheticSample flip_sample(const SyntheticSample& s, bool flip_h, bool flip_v);

}  // namespace stcflow
