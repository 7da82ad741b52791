#pragma once

#include "stcflow/tensor.hpp"

#include <cmath>
#include <vector>

// Straight-line scalar-loop reference implementations. These deliberately
// share no code with the library paths they check.
namespace stcflow::test {

template <typename S>
RowMat<S> oracle_matmul(const RowMat<S>& a, const RowMat<S>& b) {
  RowMat<S> y = RowMat<S>::Zero(a.rows(), b.cols());
  for (int i = 0; i < a.rows(); ++i)
    for (int j = 0; j < b.cols(); ++j)
      for (int k = 0; k < a.cols(); ++k) y(i, j) += a(i, k) * b(k, j);
  return y;
}

template <typename S>
Tensor<S> oracle_correlate(const Tensor<S>& f1, const Tensor<S>& f2, int n) {
  const int c = f1.channels(), h = f1.height(), w = f1.width(), side = 2 * n + 1;
  Tensor<S> out(side * side, h, w);
  for (int dy = -n; dy <= n; ++dy)
    for (int dx = -n; dx <= n; ++dx) {
      const int d = (dy + n) * side + (dx + n);
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          S acc = 0;
          for (int ci = 0; ci < c; ++ci) {
            const int y2 = y + dy, x2 = x + dx;
            if (y2 >= 0 && y2 < h && x2 >= 0 && x2 < w) acc += f1(ci, y, x) * f2(ci, y2, x2);
          }
          out(d, y, x) = acc / S(c);
        }
    }
  return out;
}

template <typename S>
Tensor<S> oracle_warp(const Tensor<S>& f, const Tensor<S>& flow) {
  const int c = f.channels(), h = f.height(), w = f.width();
  Tensor<S> out(c, h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double px = x + double(flow(0, y, x));
      const double py = y + double(flow(1, y, x));
      const int x0 = int(std::floor(px)), y0 = int(std::floor(py));
      const double wx = px - x0, wy = py - y0;
      for (int ci = 0; ci < c; ++ci) {
        double acc = 0;
        const double weight[4] = {(1 - wy) * (1 - wx), (1 - wy) * wx, wy * (1 - wx), wy * wx};
        const int ys[4] = {y0, y0, y0 + 1, y0 + 1};
        const int xs[4] = {x0, x0 + 1, x0, x0 + 1};
        for (int k = 0; k < 4; ++k)
          if (ys[k] >= 0 && ys[k] < h && xs[k] >= 0 && xs[k] < w)
            acc += weight[k] * double(f(ci, ys[k], xs[k]));
        out(ci, y, x) = S(acc);
      }
    }
  return out;
}

/// Embedded-Gaussian non-local block, looped per Eq. form:
/// z_i = x_i + Wz * sum_j softmax_j((Wq x_i)^T (Wk x_j)) (Wv x_j).
template <typename S>
Tensor<S> oracle_non_local(const Tensor<S>& x, const RowMat<S>& wq, const RowMat<S>& wk,
                           const RowMat<S>& wv, const RowMat<S>& wz) {
  const int c = x.channels(), h = x.height(), w = x.width(), hw = h * w;
  const int e = int(wq.rows());
  auto col = [&](int pos) {
    Eigen::Matrix<S, Eigen::Dynamic, 1> v(c);
    for (int ci = 0; ci < c; ++ci) v(ci) = x(ci, pos / w, pos % w);
    return v;
  };
  Tensor<S> out(c, h, w);
  for (int i = 0; i < hw; ++i) {
    Eigen::Matrix<S, Eigen::Dynamic, 1> qi = wq * col(i);
    std::vector<double> logits(hw);
    double mx = -1e300;
    for (int j = 0; j < hw; ++j) {
      Eigen::Matrix<S, Eigen::Dynamic, 1> kj = wk * col(j);
      double dot = 0;
      for (int t = 0; t < e; ++t) dot += double(qi(t)) * double(kj(t));
      logits[j] = dot;
      mx = std::max(mx, dot);
    }
    double denom = 0;
    for (int j = 0; j < hw; ++j) denom += std::exp(logits[j] - mx);
    Eigen::Matrix<double, Eigen::Dynamic, 1> ctx = Eigen::Matrix<double, Eigen::Dynamic, 1>::Zero(e);
    for (int j = 0; j < hw; ++j) {
      const double a = std::exp(logits[j] - mx) / denom;
      Eigen::Matrix<S, Eigen::Dynamic, 1> vj = wv * col(j);
      for (int t = 0; t < e; ++t) ctx(t) += a * double(vj(t));
    }
    for (int ci = 0; ci < c; ++ci) {
      double z = 0;
      for (int t = 0; t < e; ++t) z += double(wz(ci, t)) * ctx(t);
      out(ci, i / w, i % w) = x(ci, i / w, i % w) + S(z);
    }
  }
  return out;
}

/// Exhaustive integer-displacement block matching; returns [2,H,W] best
/// offsets of frame1 blocks found in frame2.
inline Tensor<float> block_matching(const Tensor<float>& f1, const Tensor<float>& f2, int radius,
                                    int block = 5) {
  const int h = f1.height(), w = f1.width(), half = block / 2;
  Tensor<float> flow(2, h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double best = 1e300;
      int bu = 0, bv = 0;
      for (int dv = -radius; dv <= radius; ++dv)
        for (int du = -radius; du <= radius; ++du) {
          double cost = 0;
          for (int by = -half; by <= half; ++by)
            for (int bx = -half; bx <= half; ++bx) {
              const int y1 = y + by, x1 = x + bx;
              const int y2 = y1 + dv, x2 = x1 + du;
              if (y1 < 0 || y1 >= h || x1 < 0 || x1 >= w || y2 < 0 || y2 >= h || x2 < 0 ||
                  x2 >= w) {
                cost += 1.0;  // penalise out-of-frame comparisons
                continue;
              }
              for (int c = 0; c < 3; ++c) {
                const double d = double(f1(c, y1, x1)) - double(f2(c, y2, x2));
                cost += d * d;
              }
            }
          if (cost < best) {
            best = cost;
            bu = du;
            bv = dv;
          }
        }
      flow(0, y, x) = float(bu);
      flow(1, y, x) = float(bv);
    }
  return flow;
}

/// Reference SSIM (global statistics, used for cross-checking the library's
/// windowed implementation on noise cases where both should roughly agree,
/// and exactly on small fields where the library falls back to global stats).
template <typename S>
double reference_ssim_global(const Tensor<S>& a, const Tensor<S>& b) {
  double total = 0;
  for (int c = 0; c < a.channels(); ++c) {
    double lo = 1e300, hi = -1e300;
    for (int y = 0; y < a.height(); ++y)
      for (int x = 0; x < a.width(); ++x) {
        lo = std::min({lo, double(a(c, y, x)), double(b(c, y, x))});
        hi = std::max({hi, double(a(c, y, x)), double(b(c, y, x))});
      }
    const double range = std::max(hi - lo, 1e-6);
    const double c1 = 0.0001 * range * range, c2 = 0.0009 * range * range;
    double ma = 0, mb = 0, n = double(a.height()) * a.width();
    for (int y = 0; y < a.height(); ++y)
      for (int x = 0; x < a.width(); ++x) {
        ma += a(c, y, x) / n;
        mb += b(c, y, x) / n;
      }
    double va = 0, vb = 0, cov = 0;
    for (int y = 0; y < a.height(); ++y)
      for (int x = 0; x < a.width(); ++x) {
        va += (a(c, y, x) - ma) * (a(c, y, x) - ma) / n;
        vb += (b(c, y, x) - mb) * (b(c, y, x) - mb) / n;
        cov += (a(c, y, x) - ma) * (b(c, y, x) - mb) / n;
      }
    total += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
  }
  return total / a.channels();
}

}  // namespace stcflow::test
