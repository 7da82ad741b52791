#pragma once

#include "stcflow/tape.hpp"

#include <cstdint>
#include <memory>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace stcflow {

enum class Init {
  zero,
  he,            // normal, stddev sqrt(2/fan_in)
  ones,
  identity1x1,   // square [C,C,1] identity mapping
  bilinear4x4,   // transposed-conv kernel [16,C,C]: per-channel bilinear x2
};

template <typename S>
struct ParamEntry {
  std::string name;
  std::shared_ptr<Tensor<S>> value;
  std::shared_ptr<Tensor<S>> grad;
  Init init = Init::he;
  int fan_in = 0;

  Var<S> var(Tape<S>& tape) const { return leaf(tape, value, grad); }
};

inline uint64_t fnv1a(const std::string& s) {
  uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

/// Flat registry of named learnable tensors. Modules hold stable pointers to
/// entries; the optimizer, checkpointing and parameter counting walk the set.
template <typename S>
class ParamSet {
 public:
  ParamEntry<S>* add(const std::string& name, int c, int h, int w, Init init, int fan_in = 0) {
    if (index_.count(name)) throw std::invalid_argument("duplicate parameter: " + name);
    auto e = std::make_unique<ParamEntry<S>>();
    e->name = name;
    e->value = std::make_shared<Tensor<S>>(c, h, w);
    e->grad = std::make_shared<Tensor<S>>(c, h, w);
    e->init = init;
    e->fan_in = fan_in;
    entries_.push_back(std::move(e));
    index_[name] = entries_.size() - 1;
    return entries_.back().get();
  }

  ParamEntry<S>* find(const std::string& name) {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : entries_[it->second].get();
  }

  const std::vector<std::unique_ptr<ParamEntry<S>>>& entries() const { return entries_; }

  long long count_scalars() const {
    long long n = 0;
    for (const auto& e : entries_) n += e->value->size();
    return n;
  }

  void zero_grads() {
    for (auto& e : entries_) e->grad->set_zero();
  }

  /// Deterministic per-name seeding: entry order does not matter.
  void initialize(uint64_t seed) {
    for (auto& e : entries_) {
      std::mt19937 rng(uint32_t(seed ^ fnv1a(e->name)));
      Tensor<S>& v = *e->value;
      switch (e->init) {
        case Init::zero:
          v.set_zero();
          break;
        case Init::ones:
          v.fill(S(1));
          break;
        case Init::he: {
          const double std = std::sqrt(2.0 / std::max(1, e->fan_in));
          std::normal_distribution<double> dist(0.0, std);
          for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = S(dist(rng));
          break;
        }
        case Init::identity1x1: {
          v.set_zero();
          for (int i = 0; i < std::min(v.channels(), v.height()); ++i) v(i, i, 0) = S(1);
          break;
        }
        case Init::bilinear4x4: {
          v.set_zero();
          const S f[4] = {S(0.25), S(0.75), S(0.75), S(0.25)};
          for (int ky = 0; ky < 4; ++ky)
            for (int kx = 0; kx < 4; ++kx)
              for (int c = 0; c < std::min(v.height(), v.width()); ++c)
                v(ky * 4 + kx, c, c) = f[ky] * f[kx];
          break;
        }
      }
    }
  }

  /// Randomises every entry; used by structural tests that need all paths live.
  void randomize(uint64_t seed, S stddev) {
    for (auto& e : entries_) {
      std::mt19937 rng(uint32_t(seed ^ fnv1a(e->name)));
      std::normal_distribution<double> dist(0.0, double(stddev));
      for (Eigen::Index i = 0; i < e->value->size(); ++i) (*e->value)[i] = S(dist(rng));
    }
  }

 private:
  std::vector<std::unique_ptr<ParamEntry<S>>> entries_;
  std::unordered_map<std::string, size_t> index_;
};

/// 1x1 convolution over channels; the linear-transform building block used by
/// every attention branch. Weight [Cout,Cin,1], optional bias [Cout,1,1].
template <typename S>
struct LinearTransform {
  ParamEntry<S>* w = nullptr;
  ParamEntry<S>* b = nullptr;

  Var<S> operator()(Tape<S>& tape, const Var<S>& x) const;
};

}  // namespace stcflow

#include "stcflow/ops.hpp"

namespace stcflow {

template <typename S>
Var<S> LinearTransform<S>::operator()(Tape<S>& tape, const Var<S>& x) const {
  Var<S> bias = b ? b->var(tape) : Var<S>{};
  return ops::conv1x1(x, w->var(tape), bias);
}

}  // namespace stcflow
