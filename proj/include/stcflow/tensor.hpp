#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace stcflow {

template <typename S>
using RowMat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using ArrayX = Eigen::Array<S, Eigen::Dynamic, 1>;

/// Dense rank-3 array [C,H,W], channel-major contiguous storage.
/// Feature maps, flow fields, cost volumes and parameter blobs all use this
/// one type; matrices are carried as [1,rows,cols].
template <typename S>
class Tensor {
 public:
  Tensor() = default;
  Tensor(int c, int h, int w) : c_(c), h_(h), w_(w), data_(size_check(c, h, w)) {
    data_.setZero();
  }

  static Tensor zeros(int c, int h, int w) { return Tensor(c, h, w); }

  static Tensor constant(int c, int h, int w, S value) {
    Tensor t(c, h, w);
    t.data_.setConstant(value);
    return t;
  }

  /// Uniform in [lo, hi), deterministic for a given engine state.
  static Tensor random_uniform(int c, int h, int w, std::mt19937& rng, S lo = S(0), S hi = S(1)) {
    Tensor t(c, h, w);
    std::uniform_real_distribution<double> dist{double(lo), double(hi)};
    for (Eigen::Index i = 0; i < t.data_.size(); ++i) t.data_[i] = S(dist(rng));
    return t;
  }

  static Tensor random_normal(int c, int h, int w, std::mt19937& rng, S stddev = S(1)) {
    Tensor t(c, h, w);
    std::normal_distribution<double> dist{0.0, double(stddev)};
    for (Eigen::Index i = 0; i < t.data_.size(); ++i) t.data_[i] = S(dist(rng));
    return t;
  }

  int channels() const { return c_; }
  int height() const { return h_; }
  int width() const { return w_; }
  Eigen::Index size() const { return data_.size(); }
  bool empty() const { return data_.size() == 0; }
  bool same_shape(const Tensor& o) const { return c_ == o.c_ && h_ == o.h_ && w_ == o.w_; }

  S* data() { return data_.data(); }
  const S* data() const { return data_.data(); }

  S& operator()(int c, int y, int x) { return data_[(Eigen::Index(c) * h_ + y) * w_ + x]; }
  S operator()(int c, int y, int x) const { return data_[(Eigen::Index(c) * h_ + y) * w_ + x]; }
  S& operator[](Eigen::Index i) { return data_[i]; }
  S operator[](Eigen::Index i) const { return data_[i]; }

  ArrayX<S>& array() { return data_; }
  const ArrayX<S>& array() const { return data_; }

  /// [C, H*W] view, one contiguous row per channel.
  Eigen::Map<RowMat<S>> as_matrix() { return {data_.data(), c_, Eigen::Index(h_) * w_}; }
  Eigen::Map<const RowMat<S>> as_matrix() const { return {data_.data(), c_, Eigen::Index(h_) * w_}; }

  Eigen::Map<RowMat<S>> channel(int c) { return {data_.data() + Eigen::Index(c) * h_ * w_, h_, w_}; }
  Eigen::Map<const RowMat<S>> channel(int c) const {
    return {data_.data() + Eigen::Index(c) * h_ * w_, h_, w_};
  }

  void set_zero() { data_.setZero(); }
  void fill(S v) { data_.setConstant(v); }

  bool all_finite() const {
    for (Eigen::Index i = 0; i < data_.size(); ++i)
      if (!std::isfinite(double(data_[i]))) return false;
    return true;
  }

  S max_abs() const { return data_.size() ? data_.abs().maxCoeff() : S(0); }

  template <typename T>
  Tensor<T> cast() const {
    Tensor<T> out(c_, h_, w_);
    for (Eigen::Index i = 0; i < data_.size(); ++i) out[i] = T(data_[i]);
    return out;
  }

  std::string shape_str() const {
    return "[" + std::to_string(c_) + "," + std::to_string(h_) + "," + std::to_string(w_) + "]";
  }

 private:
  static Eigen::Index size_check(int c, int h, int w) {
    if (c < 0 || h < 0 || w < 0) throw std::invalid_argument("tensor: negative dimension");
    return Eigen::Index(c) * h * w;
  }

  int c_ = 0, h_ = 0, w_ = 0;
  ArrayX<S> data_;
};

template <typename S>
bool bitwise_equal(const Tensor<S>& a, const Tensor<S>& b) {
  if (!a.same_shape(b)) return false;
  for (Eigen::Index i = 0; i < a.size(); ++i)
    if (a[i] != b[i]) return false;
  return true;
}

template <typename S>
S max_abs_diff(const Tensor<S>& a, const Tensor<S>& b) {
  if (!a.same_shape(b)) throw std::invalid_argument("max_abs_diff: shape mismatch");
  S m = 0;
  for (Eigen::Index i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace stcflow
