#pragma once

#include "stcflow/tensor.hpp"

#include <functional>
#include <memory>
#include <vector>

namespace stcflow {

/// Reverse-mode tape. Operations append a backward closure; backward() runs
/// them in reverse order. One tape per forward pass; not thread-shared.
template <typename S>
class Tape {
 public:
  void push(std::function<void()> back) { nodes_.push_back(std::move(back)); }

  void backward() {
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
  }

  void clear() { nodes_.clear(); }
  size_t size() const { return nodes_.size(); }

 private:
  std::vector<std::function<void()>> nodes_;
};

/// Handle to a tensor on the tape. Gradients accumulate into `grad`, which
/// has the same shape as `val` and starts at zero.
template <typename S>
struct Var {
  std::shared_ptr<Tensor<S>> val;
  std::shared_ptr<Tensor<S>> grad;
  Tape<S>* tape = nullptr;

  Var() = default;
  Var(std::shared_ptr<Tensor<S>> v, std::shared_ptr<Tensor<S>> g, Tape<S>* t)
      : val(std::move(v)), grad(std::move(g)), tape(t) {}

  const Tensor<S>& value() const { return *val; }
  int channels() const { return val->channels(); }
  int height() const { return val->height(); }
  int width() const { return val->width(); }
};

template <typename S>
Var<S> make_var(Tape<S>& tape, Tensor<S> value) {
  auto v = std::make_shared<Tensor<S>>(std::move(value));
  auto g = std::make_shared<Tensor<S>>(v->channels(), v->height(), v->width());
  return Var<S>(std::move(v), std::move(g), &tape);
}

/// Leaf whose value/grad storage is owned elsewhere (parameters).
template <typename S>
Var<S> leaf(Tape<S>& tape, std::shared_ptr<Tensor<S>> value, std::shared_ptr<Tensor<S>> grad) {
  return Var<S>(std::move(value), std::move(grad), &tape);
}

/// Leaf over a constant: gradient is tracked but discarded by the caller.
template <typename S>
Var<S> constant(Tape<S>& tape, Tensor<S> value) {
  return make_var(tape, std::move(value));
}

/// Seeds d(root)/d(root) = 1 and propagates. `root` is normally [1,1,1].
template <typename S>
void backward(const Var<S>& root) {
  root.grad->fill(S(1));
  root.tape->backward();
}

}  // namespace stcflow
