#pragma once

#include "stcflow/ops.hpp"

#include <array>
#include <vector>

namespace stcflow {

enum class LossMode { l2, charbonnier };

struct LossConfig {
  std::array<double, 5> stage_weights{0.32, 0.08, 0.02, 0.01, 0.005};  // coarse to fine
  LossMode mode = LossMode::l2;
  double epsilon = 0.01;
  double q = 0.4;

  void validate() const {
    for (double w : stage_weights)
      if (w <= 0) throw std::invalid_argument("loss config: weights must be positive");
    if (epsilon <= 0) throw std::invalid_argument("loss config: epsilon must be positive");
    if (q <= 0 || q >= 1) throw std::invalid_argument("loss config: q must be in (0,1)");
  }
};

/// Average-pools a ground-truth flow down `levels` times, halving the
/// magnitudes at each step so values stay in stage-resolution pixels.
template <typename S>
Tensor<S> downsample_gt(const Tensor<S>& gt, int levels) {
  Tensor<S> cur = gt;
  for (int l = 0; l < levels; ++l) {
    const int h = cur.height() / 2, w = cur.width() / 2;
    Tensor<S> next(cur.channels(), h, w);
    for (int c = 0; c < cur.channels(); ++c)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          S s01 = cur(c, 2 * y, 2 * x) + cur(c, 2 * y, 2 * x + 1);
          S s23 = cur(c, 2 * y + 1, 2 * x) + cur(c, 2 * y + 1, 2 * x + 1);
          next(c, y, x) = (s01 + s23) * S(0.125);  // mean * 0.5 magnitude rescale
        }
    cur = std::move(next);
  }
  return cur;
}

/// Multi-scale supervision: stage flows (coarse to fine, stages 6..2) against
/// downsampled ground truth; per-pixel penalty is squared L2 or Charbonnier of
/// the endpoint error, summed over pixels and weighted per stage. Unweighted
/// per-stage values are exposed through `stage_values` for logging.
template <typename S>
Var<S> multiscale_loss(Tape<S>& tape, const std::vector<Var<S>>& stage_flows, const Tensor<S>& gt,
                       const LossConfig& cfg, std::array<double, 5>* stage_values = nullptr) {
  cfg.validate();
  if (stage_flows.size() != cfg.stage_weights.size())
    throw std::invalid_argument("multiscale_loss: weight count != stage count");
  Var<S> total;
  for (size_t i = 0; i < stage_flows.size(); ++i) {
    const int stage = 6 - int(i);
    Tensor<S> gt_k = downsample_gt(gt, stage);
    if (gt_k.height() != stage_flows[i].height() || gt_k.width() != stage_flows[i].width())
      throw std::invalid_argument("multiscale_loss: stage flow resolution mismatch");
    Var<S> diff = ops::sub(stage_flows[i], constant(tape, gt_k));
    Var<S> stage_loss = cfg.mode == LossMode::l2
                            ? ops::squared_sum(diff)
                            : ops::charbonnier_sum(diff, S(cfg.epsilon), S(cfg.q));
    if (stage_values) (*stage_values)[i] = double((*stage_loss.val)[0]);
    Var<S> weighted = ops::scale(stage_loss, S(cfg.stage_weights[i]));
    total = i == 0 ? weighted : ops::add(total, weighted);
  }
  return total;
}

}  // namespace stcflow
