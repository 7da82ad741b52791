#pragma once

#include "stcflow/attention.hpp"

#include <optional>
#include <utility>
#include <vector>

namespace stcflow {

/// Correlation cost volume over a (2n+1)^2 displacement grid. Channel d maps
/// to offset (dy, dx) = (d / (2n+1) - n, d % (2n+1) - n), row-major in (dy,dx).
template <typename S>
struct CostVolume {
  Tensor<S> data;  // [(2n+1)^2, H, W]
  int max_displacement = 0;

  int offset_count() const { return data.channels(); }
  int offset_dy(int d) const { return d / (2 * max_displacement + 1) - max_displacement; }
  int offset_dx(int d) const { return d % (2 * max_displacement + 1) - max_displacement; }
};

/// Plain-tensor correlation; same arithmetic as the differentiable op.
template <typename S>
CostVolume<S> correlate_volume(const Tensor<S>& f1, const Tensor<S>& f2, int n) {
  Tape<S> tape;
  Var<S> v1 = constant(tape, f1);
  Var<S> v2 = constant(tape, f2);
  Var<S> out = ops::correlate(v1, v2, n);
  return CostVolume<S>{*out.val, n};
}

template <typename S>
struct TccDiagnostics {
  Var<S> a_t;  // [1,C,C], rows sum to 1
};

template <typename S>
struct TccStageParams {
  LinearTransform<S> wq, wk;    // channel-attention embeddings, C -> C
  ParamEntry<S>* w3d = nullptr; // value transform: T x 5 x 5 conv, [C, 2C, 25]
  LinearTransform<S> w1x1;      // C -> C after the 3-D convolution
  LinearTransform<S> wc;        // D -> D on the cost volume, identity at init
  LinearTransform<S> wz;        // C -> D on the attended context, zero at init
  int channels = 0;
  int volume_channels = 0;

  static TccStageParams create(ParamSet<S>& ps, const std::string& prefix, int c, int n) {
    TccStageParams p;
    p.channels = c;
    p.volume_channels = (2 * n + 1) * (2 * n + 1);
    p.wq.w = ps.add(prefix + ".wq", c, c, 1, Init::he, c);
    p.wk.w = ps.add(prefix + ".wk", c, c, 1, Init::he, c);
    p.w3d = ps.add(prefix + ".w3d", c, 2 * c, 25, Init::he, 2 * c * 25);
    p.w1x1.w = ps.add(prefix + ".w1x1", c, c, 1, Init::he, c);
    p.wc.w = ps.add(prefix + ".wc", p.volume_channels, p.volume_channels, 1, Init::identity1x1,
                    p.volume_channels);
    p.wz.w = ps.add(prefix + ".wz", p.volume_channels, c, 1, Init::zero, c);
    return p;
  }
};

/// Temporal context correlation:
///   Z = W_c Corr(F1,F2) + W_z (A_T . V),
/// A_T the C x C cross-frame channel attention (row softmax), V the value
/// transform of the stacked frame pair (time-collapsing T x 5 x 5 convolution
/// followed by 1x1). Both summands live in cost-volume channels.
template <typename S>
Var<S> tcc_forward(Tape<S>& tape, const Var<S>& f1, const Var<S>& f2, const TccStageParams<S>& p,
                   int n, int lite_s, FlopCounter* counter = nullptr,
                   TccDiagnostics<S>* diag = nullptr) {
  if (!f1.val->same_shape(*f2.val)) throw std::invalid_argument("tcc_forward: shape mismatch");
  const int c = f1.channels(), h = f1.height(), w = f1.width(), hw = h * w;
  if (c != p.channels) throw std::invalid_argument("tcc_forward: channel mismatch with params");

  Var<S> corr = ops::correlate(f1, f2, n);

  Var<S> q = p.wq(tape, f1);
  Var<S> k = p.wk(tape, f2);
  Var<S> gram =
      lite_matmul_chan(ops::reshape(q, 1, c, hw), ops::reshape(k, 1, c, hw), lite_s, counter);
  Var<S> a_t = ops::softmax_rows(gram);  // [1,C,C], rows sum to 1
  if (diag) diag->a_t = a_t;

  Var<S> stacked = ops::concat_channels<S>({f1, f2});  // temporal stack, frame-major
  Var<S> v3 = ops::conv2d(stacked, p.w3d->var(tape), Var<S>{}, 5, 1, 2);  // [C,H,W]
  Var<S> v = p.w1x1(tape, v3);
  Var<S> attended = ops::reshape(ops::matmul(a_t, ops::reshape(v, 1, c, hw)), c, h, w);

  return ops::add(p.wc(tape, corr), p.wz(tape, attended));
}

// ------------------------------------------------------- contextual PWC block

template <typename S>
struct DecoderStageParams {
  struct Conv {
    ParamEntry<S>* w = nullptr;
    ParamEntry<S>* b = nullptr;
  };
  std::vector<Conv> convs;  // widths per config, 3x3
  Conv head;                // 3x3 -> 2 flow channels
  int in_channels = 0;

  static DecoderStageParams create(ParamSet<S>& ps, const std::string& prefix, int in_c,
                                   const std::vector<int>& widths) {
    DecoderStageParams p;
    p.in_channels = in_c;
    int cin = in_c;
    for (size_t i = 0; i < widths.size(); ++i) {
      Conv conv;
      conv.w = ps.add(prefix + ".conv" + std::to_string(i + 1) + ".w", widths[i], cin, 9, Init::he,
                      cin * 9);
      conv.b = ps.add(prefix + ".conv" + std::to_string(i + 1) + ".b", widths[i], 1, 1, Init::zero);
      p.convs.push_back(conv);
      cin = widths[i];
    }
    p.head.w = ps.add(prefix + ".head.w", 2, cin, 9, Init::he, cin * 9);
    p.head.b = ps.add(prefix + ".head.b", 2, 1, 1, Init::zero);
    return p;
  }
};

/// Decoder stack shared by every stage: four 3x3 convolutions with leaky-ReLU
/// and a 2-channel flow head. Returns (flow, pre-head feature).
template <typename S>
std::pair<Var<S>, Var<S>> decoder_stack(Tape<S>& tape, const Var<S>& input,
                                        const DecoderStageParams<S>& p) {
  Var<S> x = input;
  for (const auto& conv : p.convs)
    x = ops::leaky_relu(ops::conv2d(x, conv.w->var(tape), conv.b->var(tape), 3, 1, 1), S(0.1));
  Var<S> flow = ops::conv2d(x, p.head.w->var(tape), p.head.b->var(tape), 3, 1, 1);
  return {flow, x};
}

/// One coarse-to-fine decoder step: contextual correlation of the reference
/// feature against the warped second-frame feature, concatenated with the
/// reference feature and the upsampled flow/feature carries, then decoded.
/// up_flow/up_feat are absent at the coarsest stage.
template <typename S>
std::pair<Var<S>, Var<S>> contextual_pwc_block(Tape<S>& tape, const Var<S>& f1_feat,
                                               const Var<S>& f2_warped,
                                               const std::optional<Var<S>>& up_flow,
                                               const std::optional<Var<S>>& up_feat,
                                               const TccStageParams<S>* tcc,
                                               const DecoderStageParams<S>& decoder, int n,
                                               int lite_s, FlopCounter* counter = nullptr) {
  if (!f1_feat.val->same_shape(*f2_warped.val))
    throw std::invalid_argument("contextual_pwc_block: feature shape mismatch");
  Var<S> cost = tcc ? tcc_forward(tape, f1_feat, f2_warped, *tcc, n, lite_s, counter)
                    : ops::correlate(f1_feat, f2_warped, n);
  cost = ops::leaky_relu(cost, S(0.1));
  std::vector<Var<S>> parts{cost, f1_feat};
  if (up_flow) {
    parts.push_back(*up_flow);
    parts.push_back(*up_feat);
  }
  return decoder_stack(tape, ops::concat_channels(parts), decoder);
}

}  // namespace stcflow
