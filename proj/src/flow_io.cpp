#include "stcflow/flow_io.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <memory>
#include <stdexcept>
#include <vector>

namespace stcflow {

namespace {

constexpr float kFloSentinel = 202021.25f;

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace

FlowField read_flo(const std::string& path) {
  FilePtr f(std::fopen(path.c_str(), "rb"));
  if (!f) throw std::runtime_error("read_flo: cannot open " + path);
  float sentinel = 0;
  int32_t w = 0, h = 0;
  if (std::fread(&sentinel, 4, 1, f.get()) != 1 || sentinel != kFloSentinel)
    throw std::runtime_error("read_flo: bad sentinel in " + path);
  if (std::fread(&w, 4, 1, f.get()) != 1 || std::fread(&h, 4, 1, f.get()) != 1)
    throw std::runtime_error("read_flo: truncated header in " + path);
  if (w <= 0 || h <= 0 || w > 1 << 20 || h > 1 << 20)
    throw std::runtime_error("read_flo: implausible dimensions in " + path);
  std::vector<float> buf(size_t(2) * w * h);
  if (std::fread(buf.data(), 4, buf.size(), f.get()) != buf.size())
    throw std::runtime_error("read_flo: truncated payload in " + path);
  FlowField flow(2, h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      flow(0, y, x) = buf[2 * (size_t(y) * w + x)];
      flow(1, y, x) = buf[2 * (size_t(y) * w + x) + 1];
    }
  return flow;
}

void write_flo(const FlowField& flow, const std::string& path) {
  if (flow.channels() != 2) throw std::invalid_argument("write_flo: flow must be [2,H,W]");
  if (!flow.all_finite()) throw std::invalid_argument("write_flo: flow contains NaN/Inf");
  FilePtr f(std::fopen(path.c_str(), "wb"));
  if (!f) throw std::runtime_error("write_flo: cannot open " + path);
  const int32_t w = flow.width(), h = flow.height();
  if (std::fwrite(&kFloSentinel, 4, 1, f.get()) != 1 || std::fwrite(&w, 4, 1, f.get()) != 1 ||
      std::fwrite(&h, 4, 1, f.get()) != 1)
    throw std::runtime_error("write_flo: write failed for " + path);
  std::vector<float> buf(size_t(2) * w * h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      buf[2 * (size_t(y) * w + x)] = flow(0, y, x);
      buf[2 * (size_t(y) * w + x) + 1] = flow(1, y, x);
    }
  if (std::fwrite(buf.data(), 4, buf.size(), f.get()) != buf.size())
    throw std::runtime_error("write_flo: write failed for " + path);
}

Tensor<float> flow_to_color(const FlowField& flow, std::optional<float> max_magnitude) {
  if (flow.channels() != 2) throw std::invalid_argument("flow_to_color: flow must be [2,H,W]");
  const int h = flow.height(), w = flow.width();
  float max_mag = 1e-6f;
  if (max_magnitude) {
    max_mag = std::max(*max_magnitude, 1e-6f);
  } else {
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        max_mag = std::max(max_mag, std::hypot(flow(0, y, x), flow(1, y, x)));
  }
  Tensor<float> img(3, h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const float u = flow(0, y, x), v = flow(1, y, x);
      const float mag = std::hypot(u, v);
      float hue = std::atan2(v, u) / (2.0f * float(M_PI));  // [-0.5, 0.5]
      if (hue < 0) hue += 1.0f;
      const float sat = std::min(1.0f, mag / max_mag);
      // HSV -> RGB with value 1: zero magnitude renders white.
      const float hf = hue * 6.0f;
      const int sector = std::min(5, int(hf));
      const float frac = hf - sector;
      const float p = 1.0f - sat;
      const float q = 1.0f - sat * frac;
      const float t = 1.0f - sat * (1.0f - frac);
      float r, g, b;
      switch (sector) {
        case 0: r = 1; g = t; b = p; break;
        case 1: r = q; g = 1; b = p; break;
        case 2: r = p; g = 1; b = t; break;
        case 3: r = p; g = q; b = 1; break;
        case 4: r = t; g = p; b = 1; break;
        default: r = 1; g = p; b = q; break;
      }
      img(0, y, x) = r;
      img(1, y, x) = g;
      img(2, y, x) = b;
    }
  return img;
}

}  // namespace stcflow
