#include "stcflow/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

namespace stcflow {

namespace {

float sample_clamped(const Tensor<float>& t, int c, float py, float px) {
  const int h = t.height(), w = t.width();
  const float fy = std::floor(py), fx = std::floor(px);
  const int y0 = std::clamp(int(fy), 0, h - 1), x0 = std::clamp(int(fx), 0, w - 1);
  const int y1 = std::clamp(int(fy) + 1, 0, h - 1), x1 = std::clamp(int(fx) + 1, 0, w - 1);
  const float wy = py - fy, wx = px - fx;
  return (1 - wy) * ((1 - wx) * t(c, y0, x0) + wx * t(c, y0, x1)) +
         wy * ((1 - wx) * t(c, y1, x0) + wx * t(c, y1, x1));
}

Tensor<float> resize_bilinear(const Tensor<float>& src, int h, int w) {
  Tensor<float> out(src.channels(), h, w);
  const float sy = float(src.height()) / h, sx = float(src.width()) / w;
  for (int c = 0; c < src.channels(); ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        out(c, y, x) = sample_clamped(src, c, (y + 0.5f) * sy - 0.5f, (x + 0.5f) * sx - 0.5f);
  return out;
}

Tensor<float> octave_texture(int h, int w, std::mt19937& rng) {
  Tensor<float> acc(3, h, w);
  float amp = 1.0f;
  for (int g = 4; g <= std::min(h, w); g *= 2, amp *= 0.75f) {
    const int gh = g, gw = std::max(2, g * w / h);
    Tensor<float> grid = Tensor<float>::random_uniform(3, gh, gw, rng, -1.0f, 1.0f);
    Tensor<float> up = resize_bilinear(grid, h, w);
    acc.array() += up.array() * amp;
  }
  // per-channel min-max normalisation to [0,1]
  for (int c = 0; c < 3; ++c) {
    float lo = acc(c, 0, 0), hi = lo;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        lo = std::min(lo, acc(c, y, x));
        hi = std::max(hi, acc(c, y, x));
      }
    const float scale = hi > lo ? 1.0f / (hi - lo) : 1.0f;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) acc(c, y, x) = (acc(c, y, x) - lo) * scale;
  }
  return acc;
}

}  // namespace

std::vector<SyntheticSample> generate_synthetic(int count, int h, int w, uint64_t seed,
                                                const SyntheticSpec& spec) {
  if (h < 64 || w < 64) throw std::invalid_argument("generate_synthetic: size must be >= 64x64");
  std::vector<SyntheticSample> out;
  out.reserve(count);
  for (int idx = 0; idx < count; ++idx) {
    const uint64_t sample_seed = seed + uint64_t(idx) * 0x9e3779b97f4a7c15ULL;
    std::mt19937 rng(uint32_t(sample_seed ^ (sample_seed >> 32)));
    std::uniform_real_distribution<float> uni(-1.0f, 1.0f);
    std::normal_distribution<float> gauss(0.0f, 1.0f);

    Tensor<float> base = octave_texture(h, w, rng);

    // Affine component: translation plus mild linear terms around the centre.
    const float ar = float(spec.affine_range);
    const float tu = uni(rng) * ar * 0.5f, tv = uni(rng) * ar * 0.5f;
    const float auu = uni(rng), auv = uni(rng), avu = uni(rng), avv = uni(rng);
    // Sinusoidal perturbation, one or two periods across the field.
    const float sr = float(spec.sinusoid_range);
    const float su = uni(rng) * sr, sv = uni(rng) * sr;
    const float fu = 1.0f + std::abs(uni(rng)), fv = 1.0f + std::abs(uni(rng));
    const float pu = uni(rng) * 3.14159265f, pv = uni(rng) * 3.14159265f;
    // Per-sample amplitude factor: squared-uniform, with an atom at zero so
    // static (identical-frame) pairs appear in every moderately sized set.
    const float amp_u = 0.5f * (uni(rng) + 1.0f);
    const float amp = amp_u < 0.2f ? 0.0f : amp_u * amp_u;

    Tensor<float> flow(2, h, w);
    float max_mag = 0;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const float nx = float(x) / w - 0.5f, ny = float(y) / h - 0.5f;
        float u = tu + ar * 0.5f * (auu * nx + auv * ny) +
                  su * std::sin(2 * 3.14159265f * fu * nx + pu);
        float v = tv + ar * 0.5f * (avu * nx + avv * ny) +
                  sv * std::sin(2 * 3.14159265f * fv * ny + pv);
        flow(0, y, x) = amp * u;
        flow(1, y, x) = amp * v;
        max_mag = std::max(max_mag, std::hypot(flow(0, y, x), flow(1, y, x)));
      }
    if (max_mag > float(spec.max_flow) && max_mag > 0)
      flow.array() *= float(spec.max_flow) / max_mag;

    // frame1 is frame2's texture pulled back through the flow, so that
    // warp(frame2, gt) == frame1 by construction.
    Tensor<float> frame1(3, h, w), frame2(3, h, w);
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          frame1(c, y, x) = sample_clamped(base, c, y + flow(1, y, x), x + flow(0, y, x));
          float v2 = base(c, y, x);
          if (spec.noise_sigma > 0) v2 += float(spec.noise_sigma) * gauss(rng);
          frame2(c, y, x) = std::clamp(v2, 0.0f, 1.0f);
        }

    out.push_back(SyntheticSample{std::move(frame1), std::move(frame2), std::move(flow),
                                  sample_seed});
  }
  return out;
}

SyntheticSample flip_sample(const SyntheticSample& s, bool flip_h, bool flip_v) {
  if (!flip_h && !flip_v) return s;
  const int h = s.frame1.height(), w = s.frame1.width();
  SyntheticSample out = s;
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const int sy = flip_v ? h - 1 - y : y;
        const int sx = flip_h ? w - 1 - x : x;
        out.frame1(c, y, x) = s.frame1(c, sy, sx);
        out.frame2(c, y, x) = s.frame2(c, sy, sx);
      }
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const int sy = flip_v ? h - 1 - y : y;
      const int sx = flip_h ? w - 1 - x : x;
      out.gt_flow(0, y, x) = (flip_h ? -1.0f : 1.0f) * s.gt_flow(0, sy, sx);
      out.gt_flow(1, y, x) = (flip_v ? -1.0f : 1.0f) * s.gt_flow(1, sy, sx);
    }
  return out;
}

}  // namespace stcflow
