#pragma once

#include "stcflow/tensor.hpp"

#include <cmath>
#include <stdexcept>
#include <vector>

namespace stcflow {

struct EvalReport {
  double aee = 0;     // average endpoint error, pixels
  double fl_all = 0;  // fraction of erroneous pixels, in [0,1]
  long long count = 0;
};

namespace detail {

template <typename S>
void check_flow_pair(const Tensor<S>& pred, const Tensor<S>& gt, const Tensor<S>* mask) {
  if (pred.channels() != 2 || gt.channels() != 2)
    throw std::invalid_argument("flow metrics: fields must be [2,H,W]");
  if (!pred.same_shape(gt)) throw std::invalid_argument("flow metrics: shape mismatch");
  if (mask && (mask->height() != pred.height() || mask->width() != pred.width()))
    throw std::invalid_argument("flow metrics: mask shape mismatch");
}

}  // namespace detail

/// Mean endpoint error over valid pixels. 64-bit accumulation.
template <typename S>
double aee(const Tensor<S>& pred, const Tensor<S>& gt, const Tensor<S>* mask = nullptr) {
  detail::check_flow_pair(pred, gt, mask);
  double sum = 0;
  long long n = 0;
  for (int y = 0; y < pred.height(); ++y)
    for (int x = 0; x < pred.width(); ++x) {
      if (mask && (*mask)(0, y, x) == S(0)) continue;
      const double du = double(pred(0, y, x)) - double(gt(0, y, x));
      const double dv = double(pred(1, y, x)) - double(gt(1, y, x));
      sum += std::sqrt(du * du + dv * dv);
      ++n;
    }
  if (n == 0) throw std::invalid_argument("aee: empty valid mask");
  return sum / double(n);
}

/// KITTI rule: erroneous iff endpoint error > 3 px AND > 5% of gt magnitude.
template <typename S>
double fl_all(const Tensor<S>& pred, const Tensor<S>& gt, const Tensor<S>* mask = nullptr) {
  detail::check_flow_pair(pred, gt, mask);
  long long bad = 0, n = 0;
  for (int y = 0; y < pred.height(); ++y)
    for (int x = 0; x < pred.width(); ++x) {
      if (mask && (*mask)(0, y, x) == S(0)) continue;
      const double du = double(pred(0, y, x)) - double(gt(0, y, x));
      const double dv = double(pred(1, y, x)) - double(gt(1, y, x));
      const double err = std::sqrt(du * du + dv * dv);
      const double mag = std::hypot(double(gt(0, y, x)), double(gt(1, y, x)));
      if (err > 3.0 && err > 0.05 * mag) ++bad;
      ++n;
    }
  if (n == 0) throw std::invalid_argument("fl_all: empty valid mask");
  return double(bad) / double(n);
}

template <typename S>
EvalReport evaluate_flow(const Tensor<S>& pred, const Tensor<S>& gt,
                         const Tensor<S>* mask = nullptr) {
  EvalReport r;
  r.aee = aee(pred, gt, mask);
  r.fl_all = fl_all(pred, gt, mask);
  r.count = 0;
  for (int y = 0; y < pred.height(); ++y)
    for (int x = 0; x < pred.width(); ++x)
      if (!mask || (*mask)(0, y, x) != S(0)) ++r.count;
  return r;
}

struct SsimInfo {
  bool global_fallback = false;
};

/// Per-channel SSIM, 11x11 Gaussian window (sigma 1.5), K1=0.01 / K2=0.03 on
/// the joint per-channel value range, averaged over channels and window
/// positions. Fields smaller than the window fall back to global statistics
/// (flagged via `info`).
template <typename S>
double ssim(const Tensor<S>& a, const Tensor<S>& b, SsimInfo* info = nullptr) {
  if (!a.same_shape(b)) throw std::invalid_argument("ssim: shape mismatch");
  const int c = a.channels(), h = a.height(), w = a.width();
  constexpr int kWin = 11;
  const bool windowed = h >= kWin && w >= kWin;
  if (info) info->global_fallback = !windowed;

  std::vector<double> kernel(kWin * kWin);
  {
    double sum = 0;
    for (int i = 0; i < kWin; ++i)
      for (int j = 0; j < kWin; ++j) {
        const double dy = i - kWin / 2, dx = j - kWin / 2;
        kernel[i * kWin + j] = std::exp(-(dy * dy + dx * dx) / (2.0 * 1.5 * 1.5));
        sum += kernel[i * kWin + j];
      }
    for (double& k : kernel) k /= sum;
  }

  double total = 0;
  for (int ci = 0; ci < c; ++ci) {
    double lo = double(a(ci, 0, 0)), hi = lo;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        lo = std::min({lo, double(a(ci, y, x)), double(b(ci, y, x))});
        hi = std::max({hi, double(a(ci, y, x)), double(b(ci, y, x))});
      }
    const double range = std::max(hi - lo, 1e-6);
    const double c1 = (0.01 * range) * (0.01 * range);
    const double c2 = (0.03 * range) * (0.03 * range);

    auto local = [&](double mu_a, double mu_b, double var_a, double var_b, double cov) {
      return ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) /
             ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2));
    };

    double channel_sum = 0;
    long long windows = 0;
    if (windowed) {
      for (int y = 0; y + kWin <= h; ++y)
        for (int x = 0; x + kWin <= w; ++x) {
          double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
          for (int i = 0; i < kWin; ++i)
            for (int j = 0; j < kWin; ++j) {
              const double k = kernel[i * kWin + j];
              const double va = double(a(ci, y + i, x + j));
              const double vb = double(b(ci, y + i, x + j));
              ma += k * va;
              mb += k * vb;
              saa += k * va * va;
              sbb += k * vb * vb;
              sab += k * va * vb;
            }
          channel_sum += local(ma, mb, saa - ma * ma, sbb - mb * mb, sab - ma * mb);
          ++windows;
        }
    } else {
      double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
      const double inv = 1.0 / (double(h) * w);
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          const double va = double(a(ci, y, x));
          const double vb = double(b(ci, y, x));
          ma += va * inv;
          mb += vb * inv;
          saa += va * va * inv;
          sbb += vb * vb * inv;
          sab += va * vb * inv;
        }
      channel_sum = local(ma, mb, saa - ma * ma, sbb - mb * mb, sab - ma * mb);
      windows = 1;
    }
    total += channel_sum / double(windows);
  }
  return total / double(c);
}

}  // namespace stcflow
