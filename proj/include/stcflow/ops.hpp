#pragma once

#include "stcflow/tape.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace stcflow {

/// Accumulates multiply-add counts (2 FLOPs per MAC) across matrix products.
struct FlopCounter {
  long long flops = 0;
  void add(long long n) { flops += n; }
  void reset() { flops = 0; }
};

namespace ops {

template <typename S>
Var<S> make_out(const Var<S>& like, int c, int h, int w) {
  return make_var(*like.tape, Tensor<S>(c, h, w));
}

// ---------------------------------------------------------------- arithmetic

template <typename S>
Var<S> add(const Var<S>& a, const Var<S>& b) {
  if (!a.val->same_shape(*b.val)) throw std::invalid_argument("add: shape mismatch");
  Var<S> out = make_out(a, a.channels(), a.height(), a.width());
  out.val->array() = a.val->array() + b.val->array();
  auto ag = a.grad, bg = b.grad, og = out.grad;
  a.tape->push([ag, bg, og] {
    ag->array() += og->array();
    bg->array() += og->array();
  });
  return out;
}

template <typename S>
Var<S> sub(const Var<S>& a, const Var<S>& b) {
  if (!a.val->same_shape(*b.val)) throw std::invalid_argument("sub: shape mismatch");
  Var<S> out = make_out(a, a.channels(), a.height(), a.width());
  out.val->array() = a.val->array() - b.val->array();
  auto ag = a.grad, bg = b.grad, og = out.grad;
  a.tape->push([ag, bg, og] {
    ag->array() += og->array();
    bg->array() -= og->array();
  });
  return out;
}

template <typename S>
Var<S> scale(const Var<S>& a, S factor) {
  Var<S> out = make_out(a, a.channels(), a.height(), a.width());
  out.val->array() = a.val->array() * factor;
  auto ag = a.grad, og = out.grad;
  a.tape->push([ag, og, factor] { ag->array() += og->array() * factor; });
  return out;
}

template <typename S>
Var<S> leaky_relu(const Var<S>& a, S slope) {
  Var<S> out = make_out(a, a.channels(), a.height(), a.width());
  for (Eigen::Index i = 0; i < a.val->size(); ++i)
    (*out.val)[i] = (*a.val)[i] > S(0) ? (*a.val)[i] : slope * (*a.val)[i];
  auto av = a.val, ag = a.grad, og = out.grad;
  a.tape->push([av, ag, og, slope] {
    for (Eigen::Index i = 0; i < av->size(); ++i)
      (*ag)[i] += ((*av)[i] > S(0) ? S(1) : slope) * (*og)[i];
  });
  return out;
}

template <typename S>
Var<S> relu(const Var<S>& a) {
  return leaky_relu(a, S(0));
}

/// Copy into a new shape with identical element count.
template <typename S>
Var<S> reshape(const Var<S>& a, int c, int h, int w) {
  if (Eigen::Index(c) * h * w != a.val->size()) throw std::invalid_argument("reshape: size mismatch");
  Var<S> out = make_out(a, c, h, w);
  out.val->array() = a.val->array();
  auto ag = a.grad, og = out.grad;
  a.tape->push([ag, og] { ag->array() += og->array(); });
  return out;
}

template <typename S>
Var<S> concat_channels(const std::vector<Var<S>>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat: empty input list");
  int h = parts[0].height(), w = parts[0].width(), c = 0;
  for (const auto& p : parts) {
    if (p.height() != h || p.width() != w) throw std::invalid_argument("concat: spatial mismatch");
    c += p.channels();
  }
  Var<S> out = make_out(parts[0], c, h, w);
  Eigen::Index off = 0;
  for (const auto& p : parts) {
    out.val->array().segment(off, p.val->size()) = p.val->array();
    off += p.val->size();
  }
  std::vector<std::shared_ptr<Tensor<S>>> grads;
  for (const auto& p : parts) grads.push_back(p.grad);
  auto og = out.grad;
  parts[0].tape->push([grads, og] {
    Eigen::Index off2 = 0;
    for (auto& g : grads) {
      g->array() += og->array().segment(off2, g->size());
      off2 += g->size();
    }
  });
  return out;
}

template <typename S>
Var<S> slice_channels(const Var<S>& a, int from, int count) {
  if (from < 0 || from + count > a.channels()) throw std::invalid_argument("slice: out of range");
  Var<S> out = make_out(a, count, a.height(), a.width());
  Eigen::Index plane = Eigen::Index(a.height()) * a.width();
  out.val->array() = a.val->array().segment(from * plane, count * plane);
  auto ag = a.grad, og = out.grad;
  a.tape->push([ag, og, from, plane] {
    ag->array().segment(from * plane, og->size()) += og->array();
  });
  return out;
}

// ---------------------------------------------------------------- reductions

template <typename S>
Var<S> sum_all(const Var<S>& a) {
  Var<S> out = make_out(a, 1, 1, 1);
  (*out.val)[0] = a.val->array().sum();
  auto ag = a.grad, og = out.grad;
  a.tape->push([ag, og] { ag->array() += (*og)[0]; });
  return out;
}

/// Scalar = sum(a .* weights); used by gradient-check harnesses.
template <typename S>
Var<S> weighted_sum_all(const Var<S>& a, const Tensor<S>& weights) {
  if (!a.val->same_shape(weights)) throw std::invalid_argument("weighted_sum: shape mismatch");
  Var<S> out = make_out(a, 1, 1, 1);
  (*out.val)[0] = (a.val->array() * weights.array()).sum();
  auto ag = a.grad, og = out.grad;
  Tensor<S> w = weights;
  a.tape->push([ag, og, w] { ag->array() += w.array() * (*og)[0]; });
  return out;
}

template <typename S>
Var<S> spatial_mean(const Var<S>& a) {
  Var<S> out = make_out(a, a.channels(), 1, 1);
  const S inv = S(1) / S(Eigen::Index(a.height()) * a.width());
  for (int c = 0; c < a.channels(); ++c) (*out.val)(c, 0, 0) = a.val->channel(c).sum() * inv;
  auto ag = a.grad, og = out.grad;
  int C = a.channels();
  a.tape->push([ag, og, inv, C] {
    for (int c = 0; c < C; ++c) ag->channel(c).array() += (*og)(c, 0, 0) * inv;
  });
  return out;
}

template <typename S>
Var<S> broadcast_spatial(const Var<S>& a, int h, int w) {
  if (a.height() != 1 || a.width() != 1) throw std::invalid_argument("broadcast: expects [C,1,1]");
  Var<S> out = make_out(a, a.channels(), h, w);
  for (int c = 0; c < a.channels(); ++c) out.val->channel(c).setConstant((*a.val)(c, 0, 0));
  auto ag = a.grad, og = out.grad;
  int C = a.channels();
  a.tape->push([ag, og, C] {
    for (int c = 0; c < C; ++c) (*ag)(c, 0, 0) += og->channel(c).sum();
  });
  return out;
}

// ------------------------------------------------------------------ softmax

/// Row-wise softmax of a matrix carried as [1,M,N]. Max-subtracted.
template <typename S>
Var<S> softmax_rows(const Var<S>& a) {
  if (a.channels() != 1) throw std::invalid_argument("softmax_rows: expects [1,M,N]");
  const int m = a.height(), n = a.width();
  Var<S> out = make_out(a, 1, m, n);
  for (int i = 0; i < m; ++i) {
    auto row = a.val->channel(0).row(i);
    S mx = row.maxCoeff();
    ArrayX<S> e = (row.transpose().array() - mx).exp();
    out.val->channel(0).row(i) = (e / e.sum()).transpose();
  }
  auto og = out.grad, ov = out.val, ag = a.grad;
  a.tape->push([og, ov, ag, m] {
    for (int i = 0; i < m; ++i) {
      auto y = ov->channel(0).row(i).array();
      auto dy = og->channel(0).row(i).array();
      S dot = (y * dy).sum();
      ag->channel(0).row(i).array() += y * (dy - dot);
    }
  });
  return out;
}

/// Softmax over the channel axis at every spatial position.
template <typename S>
Var<S> softmax_channels(const Var<S>& a) {
  const int C = a.channels(), hw = a.height() * a.width();
  Var<S> out = make_out(a, C, a.height(), a.width());
  auto xm = a.val->as_matrix();
  auto ym = out.val->as_matrix();
  for (int p = 0; p < hw; ++p) {
    S mx = xm.col(p).maxCoeff();
    ArrayX<S> e = (xm.col(p).array() - mx).exp();
    ym.col(p) = (e / e.sum()).matrix();
  }
  auto og = out.grad, ov = out.val, ag = a.grad;
  a.tape->push([og, ov, ag, hw] {
    auto y = ov->as_matrix();
    auto dy = og->as_matrix();
    auto dx = ag->as_matrix();
    for (int p = 0; p < hw; ++p) {
      S dot = (y.col(p).array() * dy.col(p).array()).sum();
      dx.col(p).array() += y.col(p).array() * (dy.col(p).array() - dot);
    }
  });
  return out;
}

// ------------------------------------------------------------ matrix product

/// General product of matrices carried as [1,r,c]; optional transposes.
template <typename S>
Var<S> matmul(const Var<S>& a, const Var<S>& b, bool ta = false, bool tb = false,
              FlopCounter* counter = nullptr) {
  if (a.channels() != 1 || b.channels() != 1) throw std::invalid_argument("matmul: expects [1,r,c]");
  const int m = ta ? a.width() : a.height();
  const int ka = ta ? a.height() : a.width();
  const int kb = tb ? b.width() : b.height();
  const int n = tb ? b.height() : b.width();
  if (ka != kb) throw std::invalid_argument("matmul: inner dimension mismatch");
  Var<S> out = make_out(a, 1, m, n);
  {
    auto A = a.val->channel(0);
    auto B = b.val->channel(0);
    auto Y = out.val->channel(0);
    if (!ta && !tb) Y.noalias() = A * B;
    else if (ta && !tb) Y.noalias() = A.transpose() * B;
    else if (!ta && tb) Y.noalias() = A * B.transpose();
    else Y.noalias() = A.transpose() * B.transpose();
  }
  if (counter) counter->add(2LL * m * n * ka);
  auto av = a.val, bv = b.val, ag = a.grad, bg = b.grad, og = out.grad;
  a.tape->push([av, bv, ag, bg, og, ta, tb] {
    auto A = av->channel(0);
    auto B = bv->channel(0);
    auto dY = og->channel(0);
    auto dA = ag->channel(0);
    auto dB = bg->channel(0);
    // dA' = dY B'^T, dB' = A'^T dY with A' = op(A), B' = op(B)
    if (!ta) dA.noalias() += tb ? (dY * B).eval() : (dY * B.transpose()).eval();
    else dA.noalias() += tb ? (B.transpose() * dY.transpose()).eval() : (B * dY.transpose()).eval();
    if (!tb) dB.noalias() += ta ? (A * dY).eval() : (A.transpose() * dY).eval();
    else dB.noalias() += ta ? (dY.transpose() * A.transpose()).eval() : (dY.transpose() * A).eval();
  });
  return out;
}

/// Keep columns 0, s, 2s, ... of a [1,m,n] matrix.
template <typename S>
Var<S> subsample_cols(const Var<S>& a, int s) {
  if (a.channels() != 1) throw std::invalid_argument("subsample_cols: expects [1,m,n]");
  if (s < 1) throw std::invalid_argument("subsample_cols: s must be >= 1");
  const int m = a.height(), n = a.width(), nsub = (n + s - 1) / s;
  Var<S> out = make_out(a, 1, m, nsub);
  for (int j = 0; j < nsub; ++j) out.val->channel(0).col(j) = a.val->channel(0).col(j * s);
  auto ag = a.grad, og = out.grad;
  a.tape->push([ag, og, nsub, s] {
    for (int j = 0; j < nsub; ++j) ag->channel(0).col(j * s) += og->channel(0).col(j);
  });
  return out;
}

// ---------------------------------------------------------------- convolution

/// 2-D convolution. Weight blob is [Cout, Cin, K*K]; bias [Cout,1,1] may be
/// empty. im2col + GEMM; column matrix is retained for the backward pass.
template <typename S>
Var<S> conv2d(const Var<S>& x, const Var<S>& w, const Var<S>& b, int k, int stride, int pad) {
  const int cin = x.channels(), h = x.height(), wd = x.width();
  const int cout = w.channels();
  if (w.height() != cin || w.width() != k * k) throw std::invalid_argument("conv2d: weight shape");
  const int ho = (h + 2 * pad - k) / stride + 1;
  const int wo = (wd + 2 * pad - k) / stride + 1;
  if (ho <= 0 || wo <= 0) throw std::invalid_argument("conv2d: empty output");

  auto col = std::make_shared<Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>>(
      Eigen::Index(cin) * k * k, Eigen::Index(ho) * wo);
  col->setZero();
  for (int oy = 0; oy < ho; ++oy)
    for (int ox = 0; ox < wo; ++ox) {
      Eigen::Index cidx = Eigen::Index(oy) * wo + ox;
      Eigen::Index r = 0;
      for (int ci = 0; ci < cin; ++ci)
        for (int ky = 0; ky < k; ++ky) {
          const int iy = oy * stride - pad + ky;
          for (int kx = 0; kx < k; ++kx, ++r) {
            const int ix = ox * stride - pad + kx;
            if (iy >= 0 && iy < h && ix >= 0 && ix < wd) (*col)(r, cidx) = (*x.val)(ci, iy, ix);
          }
        }
    }

  Var<S> out = make_out(x, cout, ho, wo);
  {
    Eigen::Map<const RowMat<S>> W(w.val->data(), cout, Eigen::Index(cin) * k * k);
    Eigen::Map<RowMat<S>> Y(out.val->data(), cout, Eigen::Index(ho) * wo);
    Y.noalias() = W * (*col);
    if (b.val && b.val->size() == cout)
      for (int co = 0; co < cout; ++co) Y.row(co).array() += (*b.val)[co];
  }

  auto xv = x.val, xg = x.grad, wv = w.val, wg = w.grad, og = out.grad;
  auto bg = (b.val && b.val->size() == cout) ? b.grad : nullptr;
  x.tape->push([xv, xg, wv, wg, bg, og, col, cin, h, wd, cout, ho, wo, k, stride, pad] {
    Eigen::Map<const RowMat<S>> W(wv->data(), cout, Eigen::Index(cin) * k * k);
    Eigen::Map<RowMat<S>> dW(wg->data(), cout, Eigen::Index(cin) * k * k);
    Eigen::Map<const RowMat<S>> dY(og->data(), cout, Eigen::Index(ho) * wo);
    dW.noalias() += dY * col->transpose();
    if (bg)
      for (int co = 0; co < cout; ++co) (*bg)[co] += dY.row(co).sum();
    Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic> dcol = W.transpose() * dY;
    for (int oy = 0; oy < ho; ++oy)
      for (int ox = 0; ox < wo; ++ox) {
        Eigen::Index cidx = Eigen::Index(oy) * wo + ox;
        Eigen::Index r = 0;
        for (int ci = 0; ci < cin; ++ci)
          for (int ky = 0; ky < k; ++ky) {
            const int iy = oy * stride - pad + ky;
            for (int kx = 0; kx < k; ++kx, ++r) {
              const int ix = ox * stride - pad + kx;
              if (iy >= 0 && iy < h && ix >= 0 && ix < wd) (*xg)(ci, iy, ix) += dcol(r, cidx);
            }
          }
      }
  });
  return out;
}

/// 1x1 convolution (linear transform over channels).
template <typename S>
Var<S> conv1x1(const Var<S>& x, const Var<S>& w, const Var<S>& b) {
  return conv2d(x, w, b, 1, 1, 0);
}

/// Transposed 2-D convolution. Weight blob is [K*K, Cin, Cout].
template <typename S>
Var<S> conv_transpose2d(const Var<S>& x, const Var<S>& w, const Var<S>& b, int k, int stride,
                        int pad) {
  const int cin = x.channels(), h = x.height(), wd = x.width();
  if (w.channels() != k * k || w.height() != cin)
    throw std::invalid_argument("conv_transpose2d: weight shape");
  const int cout = w.width();
  const int ho = (h - 1) * stride - 2 * pad + k;
  const int wo = (wd - 1) * stride - 2 * pad + k;
  Var<S> out = make_out(x, cout, ho, wo);

  auto X = x.val->as_matrix();  // [Cin, H*W]
  for (int t = 0; t < k * k; ++t) {
    const int ky = t / k, kx = t % k;
    auto Wt = w.val->channel(t);  // [Cin, Cout]
    RowMat<S> Yt = Wt.transpose() * X;  // [Cout, H*W]
    for (int y0 = 0; y0 < h; ++y0) {
      const int oy = y0 * stride - pad + ky;
      if (oy < 0 || oy >= ho) continue;
      for (int x0 = 0; x0 < wd; ++x0) {
        const int ox = x0 * stride - pad + kx;
        if (ox < 0 || ox >= wo) continue;
        for (int co = 0; co < cout; ++co) (*out.val)(co, oy, ox) += Yt(co, Eigen::Index(y0) * wd + x0);
      }
    }
  }
  if (b.val && b.val->size() == cout)
    for (int co = 0; co < cout; ++co) out.val->channel(co).array() += (*b.val)[co];

  auto xv = x.val, xg = x.grad, wv = w.val, wg = w.grad, og = out.grad;
  auto bg = (b.val && b.val->size() == cout) ? b.grad : nullptr;
  x.tape->push([xv, xg, wv, wg, bg, og, cin, h, wd, cout, ho, wo, k, stride, pad] {
    auto X = xv->as_matrix();
    auto dX = xg->as_matrix();
    for (int t = 0; t < k * k; ++t) {
      const int ky = t / k, kx = t % k;
      RowMat<S> dYt = RowMat<S>::Zero(cout, Eigen::Index(h) * wd);
      for (int y0 = 0; y0 < h; ++y0) {
        const int oy = y0 * stride - pad + ky;
        if (oy < 0 || oy >= ho) continue;
        for (int x0 = 0; x0 < wd; ++x0) {
          const int ox = x0 * stride - pad + kx;
          if (ox < 0 || ox >= wo) continue;
          for (int co = 0; co < cout; ++co) dYt(co, Eigen::Index(y0) * wd + x0) = (*og)(co, oy, ox);
        }
      }
      auto Wt = wv->channel(t);
      auto dWt = wg->channel(t);
      dWt.noalias() += X * dYt.transpose();
      dX.noalias() += Wt * dYt;
    }
    if (bg)
      for (int co = 0; co < cout; ++co) (*bg)[co] += og->channel(co).sum();
  });
  return out;
}

// ------------------------------------------------------------------- pooling

template <typename S>
Var<S> max_pool2(const Var<S>& x) {
  const int c = x.channels(), h = x.height(), w = x.width();
  if (h % 2 || w % 2) throw std::invalid_argument("max_pool2: odd spatial size");
  const int ho = h / 2, wo = w / 2;
  Var<S> out = make_out(x, c, ho, wo);
  auto idx = std::make_shared<std::vector<Eigen::Index>>(Eigen::Index(c) * ho * wo);
  Eigen::Index o = 0;
  for (int ci = 0; ci < c; ++ci)
    for (int y = 0; y < ho; ++y)
      for (int xx = 0; xx < wo; ++xx, ++o) {
        S best = (*x.val)(ci, 2 * y, 2 * xx);
        Eigen::Index bi = (Eigen::Index(ci) * h + 2 * y) * w + 2 * xx;
        for (int dy = 0; dy < 2; ++dy)
          for (int dx = 0; dx < 2; ++dx) {
            S v = (*x.val)(ci, 2 * y + dy, 2 * xx + dx);
            if (v > best) {
              best = v;
              bi = (Eigen::Index(ci) * h + 2 * y + dy) * w + 2 * xx + dx;
            }
          }
        (*out.val)[o] = best;
        (*idx)[o] = bi;
      }
  auto xg = x.grad, og = out.grad;
  x.tape->push([xg, og, idx] {
    for (Eigen::Index i = 0; i < og->size(); ++i) (*xg)[(*idx)[i]] += (*og)[i];
  });
  return out;
}

template <typename S>
Var<S> avg_pool2(const Var<S>& x) {
  const int c = x.channels(), h = x.height(), w = x.width();
  if (h % 2 || w % 2) throw std::invalid_argument("avg_pool2: odd spatial size");
  const int ho = h / 2, wo = w / 2;
  Var<S> out = make_out(x, c, ho, wo);
  for (int ci = 0; ci < c; ++ci)
    for (int y = 0; y < ho; ++y)
      for (int xx = 0; xx < wo; ++xx) {
        S s01 = (*x.val)(ci, 2 * y, 2 * xx) + (*x.val)(ci, 2 * y, 2 * xx + 1);
        S s23 = (*x.val)(ci, 2 * y + 1, 2 * xx) + (*x.val)(ci, 2 * y + 1, 2 * xx + 1);
        (*out.val)(ci, y, xx) = (s01 + s23) * S(0.25);
      }
  auto xg = x.grad, og = out.grad;
  x.tape->push([xg, og, c, ho, wo] {
    for (int ci = 0; ci < c; ++ci)
      for (int y = 0; y < ho; ++y)
        for (int xx = 0; xx < wo; ++xx) {
          S g = (*og)(ci, y, xx) * S(0.25);
          for (int dy = 0; dy < 2; ++dy)
            for (int dx = 0; dx < 2; ++dx) (*xg)(ci, 2 * y + dy, 2 * xx + dx) += g;
        }
  });
  return out;
}

// -------------------------------------------------------------- interpolation

/// x2 bilinear upsampling, align_corners=false, edge-clamped sampling.
template <typename S>
Var<S> bilinear_upsample2(const Var<S>& x) {
  const int c = x.channels(), h = x.height(), w = x.width();
  const int ho = 2 * h, wo = 2 * w;
  Var<S> out = make_out(x, c, ho, wo);
  auto sample_axis = [](int o, int n, int& i0, int& i1, S& f) {
    S src = (S(o) + S(0.5)) / S(2) - S(0.5);
    S fl = std::floor(src);
    f = src - fl;
    i0 = std::clamp(int(fl), 0, n - 1);
    i1 = std::clamp(int(fl) + 1, 0, n - 1);
  };
  for (int oy = 0; oy < ho; ++oy) {
    int y0, y1;
    S fy;
    sample_axis(oy, h, y0, y1, fy);
    for (int ox = 0; ox < wo; ++ox) {
      int x0, x1;
      S fx;
      sample_axis(ox, w, x0, x1, fx);
      for (int ci = 0; ci < c; ++ci)
        (*out.val)(ci, oy, ox) = (S(1) - fy) * ((S(1) - fx) * (*x.val)(ci, y0, x0) + fx * (*x.val)(ci, y0, x1)) +
                                 fy * ((S(1) - fx) * (*x.val)(ci, y1, x0) + fx * (*x.val)(ci, y1, x1));
    }
  }
  auto xg = x.grad, og = out.grad;
  x.tape->push([xg, og, c, h, w, ho, wo, sample_axis] {
    for (int oy = 0; oy < ho; ++oy) {
      int y0, y1;
      S fy;
      sample_axis(oy, h, y0, y1, fy);
      for (int ox = 0; ox < wo; ++ox) {
        int x0, x1;
        S fx;
        sample_axis(ox, w, x0, x1, fx);
        for (int ci = 0; ci < c; ++ci) {
          S g = (*og)(ci, oy, ox);
          (*xg)(ci, y0, x0) += (S(1) - fy) * (S(1) - fx) * g;
          (*xg)(ci, y0, x1) += (S(1) - fy) * fx * g;
          (*xg)(ci, y1, x0) += fy * (S(1) - fx) * g;
          (*xg)(ci, y1, x1) += fy * fx * g;
        }
      }
    }
  });
  return out;
}

/// Sub-pixel rearrangement [r^2*C, H, W] -> [C, r*H, r*W].
template <typename S>
Var<S> pixel_shuffle(const Var<S>& x, int r) {
  const int c2 = x.channels(), h = x.height(), w = x.width();
  if (c2 % (r * r)) throw std::invalid_argument("pixel_shuffle: channels not divisible by r^2");
  const int c = c2 / (r * r);
  Var<S> out = make_out(x, c, r * h, r * w);
  for (int ci = 0; ci < c; ++ci)
    for (int dy = 0; dy < r; ++dy)
      for (int dx = 0; dx < r; ++dx)
        for (int y = 0; y < h; ++y)
          for (int xx = 0; xx < w; ++xx)
            (*out.val)(ci, r * y + dy, r * xx + dx) = (*x.val)(ci * r * r + dy * r + dx, y, xx);
  auto xg = x.grad, og = out.grad;
  x.tape->push([xg, og, c, h, w, r] {
    for (int ci = 0; ci < c; ++ci)
      for (int dy = 0; dy < r; ++dy)
        for (int dx = 0; dx < r; ++dx)
          for (int y = 0; y < h; ++y)
            for (int xx = 0; xx < w; ++xx)
              (*xg)(ci * r * r + dy * r + dx, y, xx) += (*og)(ci, r * y + dy, r * xx + dx);
  });
  return out;
}

// ----------------------------------------------------------- flow primitives

/// Backward warping: out(c,y,x) = bilinear sample of f at (x+u, y+v).
/// Corners outside the frame contribute zero. Differentiable in f and flow.
template <typename S>
Var<S> warp(const Var<S>& f, const Var<S>& flow) {
  if (flow.channels() != 2) throw std::invalid_argument("warp: flow must be [2,H,W]");
  if (f.height() != flow.height() || f.width() != flow.width())
    throw std::invalid_argument("warp: spatial mismatch");
  const int c = f.channels(), h = f.height(), w = f.width();
  Var<S> out = make_out(f, c, h, w);
  auto fv = f.val, flv = flow.val;
  auto at = [&](int ci, int y, int x) -> S {
    return (y >= 0 && y < h && x >= 0 && x < w) ? (*fv)(ci, y, x) : S(0);
  };
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      S px = S(x) + (*flv)(0, y, x);
      S py = S(y) + (*flv)(1, y, x);
      S flx = std::floor(px), fly = std::floor(py);
      int x0 = int(flx), y0 = int(fly);
      S wx = px - flx, wy = py - fly;
      for (int ci = 0; ci < c; ++ci)
        (*out.val)(ci, y, x) = (S(1) - wy) * ((S(1) - wx) * at(ci, y0, x0) + wx * at(ci, y0, x0 + 1)) +
                               wy * ((S(1) - wx) * at(ci, y0 + 1, x0) + wx * at(ci, y0 + 1, x0 + 1));
    }
  auto fg = f.grad, flg = flow.grad, og = out.grad;
  f.tape->push([fv, fg, flv, flg, og, c, h, w] {
    auto at = [&](int ci, int y, int x) -> S {
      return (y >= 0 && y < h && x >= 0 && x < w) ? (*fv)(ci, y, x) : S(0);
    };
    auto scatter = [&](int ci, int y, int x, S g) {
      if (y >= 0 && y < h && x >= 0 && x < w) (*fg)(ci, y, x) += g;
    };
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        S px = S(x) + (*flv)(0, y, x);
        S py = S(y) + (*flv)(1, y, x);
        S flx = std::floor(px), fly = std::floor(py);
        int x0 = int(flx), y0 = int(fly);
        S wx = px - flx, wy = py - fly;
        S du = 0, dv = 0;
        for (int ci = 0; ci < c; ++ci) {
          S g = (*og)(ci, y, x);
          scatter(ci, y0, x0, (S(1) - wy) * (S(1) - wx) * g);
          scatter(ci, y0, x0 + 1, (S(1) - wy) * wx * g);
          scatter(ci, y0 + 1, x0, wy * (S(1) - wx) * g);
          scatter(ci, y0 + 1, x0 + 1, wy * wx * g);
          S f00 = at(ci, y0, x0), f01 = at(ci, y0, x0 + 1);
          S f10 = at(ci, y0 + 1, x0), f11 = at(ci, y0 + 1, x0 + 1);
          du += g * ((S(1) - wy) * (f01 - f00) + wy * (f11 - f10));
          dv += g * ((S(1) - wx) * (f10 - f00) + wx * (f11 - f01));
        }
        (*flg)(0, y, x) += du;
        (*flg)(1, y, x) += dv;
      }
  });
  return out;
}

/// Cost volume over a (2n+1)^2 offset grid, 1/C-normalised, zero padding.
/// Channel d corresponds to (dy, dx) = (d / (2n+1) - n, d % (2n+1) - n).
template <typename S>
Var<S> correlate(const Var<S>& f1, const Var<S>& f2, int n) {
  if (!f1.val->same_shape(*f2.val)) throw std::invalid_argument("correlate: shape mismatch");
  if (n < 0) throw std::invalid_argument("correlate: negative displacement");
  const int c = f1.channels(), h = f1.height(), w = f1.width();
  const int side = 2 * n + 1, d = side * side;
  const S inv_c = S(1) / S(c);
  Var<S> out = make_out(f1, d, h, w);
  for (int di = 0; di < d; ++di) {
    const int dy = di / side - n, dx = di % side - n;
    for (int y = 0; y < h; ++y) {
      const int y2 = y + dy;
      if (y2 < 0 || y2 >= h) continue;
      for (int x = 0; x < w; ++x) {
        const int x2 = x + dx;
        if (x2 < 0 || x2 >= w) continue;
        S acc = 0;
        for (int ci = 0; ci < c; ++ci) acc += (*f1.val)(ci, y, x) * (*f2.val)(ci, y2, x2);
        (*out.val)(di, y, x) = acc * inv_c;
      }
    }
  }
  auto f1v = f1.val, f2v = f2.val, f1g = f1.grad, f2g = f2.grad, og = out.grad;
  f1.tape->push([f1v, f2v, f1g, f2g, og, c, h, w, n, side, d, inv_c] {
    for (int di = 0; di < d; ++di) {
      const int dy = di / side - n, dx = di % side - n;
      for (int y = 0; y < h; ++y) {
        const int y2 = y + dy;
        if (y2 < 0 || y2 >= h) continue;
        for (int x = 0; x < w; ++x) {
          const int x2 = x + dx;
          if (x2 < 0 || x2 >= w) continue;
          const S g = (*og)(di, y, x) * inv_c;
          if (g == S(0)) continue;
          for (int ci = 0; ci < c; ++ci) {
            (*f1g)(ci, y, x) += g * (*f2v)(ci, y2, x2);
            (*f2g)(ci, y2, x2) += g * (*f1v)(ci, y, x);
          }
        }
      }
    }
  });
  return out;
}

// --------------------------------------------------------------- other layers

/// Layer normalisation over the channel axis of a [C,1,1] vector.
template <typename S>
Var<S> layer_norm_vec(const Var<S>& x, const Var<S>& gamma, const Var<S>& beta, S eps = S(1e-5)) {
  if (x.height() != 1 || x.width() != 1) throw std::invalid_argument("layer_norm: expects [C,1,1]");
  const int c = x.channels();
  Var<S> out = make_out(x, c, 1, 1);
  S mu = x.val->array().mean();
  ArrayX<S> d = x.val->array() - mu;
  S var = d.square().mean();
  S inv = S(1) / std::sqrt(var + eps);
  ArrayX<S> xhat = d * inv;
  out.val->array() = xhat * gamma.val->array() + beta.val->array();
  auto xg = x.grad, gg = gamma.grad, bg = beta.grad, og = out.grad;
  auto gv = gamma.val;
  auto xhat_p = std::make_shared<ArrayX<S>>(std::move(xhat));
  x.tape->push([xg, gg, bg, og, gv, xhat_p, inv, c] {
    ArrayX<S> dy = og->array();
    gg->array() += dy * (*xhat_p);
    bg->array() += dy;
    ArrayX<S> dxhat = dy * gv->array();
    S m1 = dxhat.mean();
    S m2 = (dxhat * (*xhat_p)).mean();
    xg->array() += inv * (dxhat - m1 - (*xhat_p) * m2);
  });
  return out;
}

/// Content-adaptive reassembly: out(c,y,x) = sum_{k} kernels(k,y,x) *
/// values(c, y+ky-r, x+kx-r) with edge-clamped neighbourhood (kappa odd).
template <typename S>
Var<S> kernel_reassemble(const Var<S>& kernels, const Var<S>& values, int kappa) {
  if (kernels.channels() != kappa * kappa)
    throw std::invalid_argument("reassemble: kernel channel count != kappa^2");
  if (kernels.height() != values.height() || kernels.width() != values.width())
    throw std::invalid_argument("reassemble: spatial mismatch");
  const int c = values.channels(), h = values.height(), w = values.width(), r = kappa / 2;
  Var<S> out = make_out(values, c, h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int t = 0; t < kappa * kappa; ++t) {
        const int sy = std::clamp(y + t / kappa - r, 0, h - 1);
        const int sx = std::clamp(x + t % kappa - r, 0, w - 1);
        const S kv = (*kernels.val)(t, y, x);
        for (int ci = 0; ci < c; ++ci) (*out.val)(ci, y, x) += kv * (*values.val)(ci, sy, sx);
      }
  auto kv_ = kernels.val, kg = kernels.grad, vv = values.val, vg = values.grad, og = out.grad;
  values.tape->push([kv_, kg, vv, vg, og, c, h, w, kappa, r] {
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        for (int t = 0; t < kappa * kappa; ++t) {
          const int sy = std::clamp(y + t / kappa - r, 0, h - 1);
          const int sx = std::clamp(x + t % kappa - r, 0, w - 1);
          S dk = 0;
          const S kval = (*kv_)(t, y, x);
          for (int ci = 0; ci < c; ++ci) {
            const S g = (*og)(ci, y, x);
            dk += g * (*vv)(ci, sy, sx);
            (*vg)(ci, sy, sx) += g * kval;
          }
          (*kg)(t, y, x) += dk;
        }
  });
  return out;
}

// -------------------------------------------------------------------- losses

/// Sum of squared entries.
template <typename S>
Var<S> squared_sum(const Var<S>& a) {
  Var<S> out = make_out(a, 1, 1, 1);
  (*out.val)[0] = a.val->array().square().sum();
  auto av = a.val, ag = a.grad, og = out.grad;
  a.tape->push([av, ag, og] { ag->array() += S(2) * av->array() * (*og)[0]; });
  return out;
}

/// Charbonnier penalty of the per-pixel endpoint error of a [2,H,W] residual:
/// sum over pixels of (du^2 + dv^2 + eps^2)^q.
template <typename S>
Var<S> charbonnier_sum(const Var<S>& diff, S eps, S q) {
  if (diff.channels() != 2) throw std::invalid_argument("charbonnier: expects [2,H,W]");
  const int h = diff.height(), w = diff.width();
  Var<S> out = make_out(diff, 1, 1, 1);
  S total = 0;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      S du = (*diff.val)(0, y, x), dv = (*diff.val)(1, y, x);
      total += std::pow(du * du + dv * dv + eps * eps, q);
    }
  (*out.val)[0] = total;
  auto dv_ = diff.val, dg = diff.grad, og = out.grad;
  diff.tape->push([dv_, dg, og, h, w, eps, q] {
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        S du = (*dv_)(0, y, x), dvv = (*dv_)(1, y, x);
        S base = du * du + dvv * dvv + eps * eps;
        S f = q * std::pow(base, q - S(1)) * S(2) * (*og)[0];
        (*dg)(0, y, x) += f * du;
        (*dg)(1, y, x) += f * dvv;
      }
  });
  return out;
}

}  // namespace ops
}  // namespace stcflow
