#pragma once

#include "stcflow/ops.hpp"
#include "stcflow/params.hpp"

namespace stcflow {

using ops::pixel_shuffle;

inline constexpr int kRrcuUpsample = 2;   // sigma; only x2 is supported
inline constexpr int kRrcuKappa = 3;      // reassembly kernel size
inline constexpr int kRrcuEncWidth = 16;  // shared residual encoder width

template <typename S>
struct RrcuDiagnostics {
  Var<S> kernels;  // [kappa^2, 2H, 2W], kernel entries sum to 1 per position
};

template <typename S>
struct RrcuParams {
  LinearTransform<S> enc;        // shared 1x1 flow encoder, 2 -> 16 (bias-free:
                                 // a shared bias cancels in the residual)
  ParamEntry<S>* wr_w = nullptr; // kernel predictor, 3x3, 16 -> sigma^2*kappa^2
  ParamEntry<S>* wr_b = nullptr;
  LinearTransform<S> wz;         // 16 -> 2, zero at init
  ParamEntry<S>* deconv_w = nullptr;  // [16, 2, 2] transposed conv, bilinear at init
  ParamEntry<S>* deconv_b = nullptr;

  static RrcuParams create(ParamSet<S>& ps, const std::string& prefix) {
    RrcuParams p;
    const int e = kRrcuEncWidth;
    const int kk = kRrcuUpsample * kRrcuUpsample * kRrcuKappa * kRrcuKappa;
    p.enc.w = ps.add(prefix + ".enc.w", e, 2, 1, Init::he, 2);
    p.wr_w = ps.add(prefix + ".wr.w", kk, e, 9, Init::he, e * 9);
    p.wr_b = ps.add(prefix + ".wr.b", kk, 1, 1, Init::zero);
    p.wz.w = ps.add(prefix + ".wz", 2, e, 1, Init::zero, e);
    p.deconv_w = ps.add(prefix + ".deconv.w", 16, 2, 2, Init::bilinear4x4);
    p.deconv_b = ps.add(prefix + ".deconv.b", 2, 1, 1, Init::zero);
    return p;
  }
};

/// Recurrent residual contextual upsampling, x2:
///   R   = enc(Y_k) - enc(Ytil_prev)            (shared 1x1 encoder)
///   A_U = softmax_kappa^2( ps( W_r R ) )       (per-position kernels)
///   R~  = A_U * bilinear_x2(R)                 (position-wise reassembly)
///   Y~  = 2 * deconv(Y_k) + W_z R~
/// The decoder feature rides along in the signature for wiring symmetry but
/// the computation is driven by the flow residual alone.
template <typename S>
Var<S> rrcu_forward(Tape<S>& tape, const Var<S>& y_k, const Var<S>& /*y_feat*/,
                    const Var<S>& ytil_prev, const RrcuParams<S>& p,
                    RrcuDiagnostics<S>* diag = nullptr) {
  if (y_k.channels() != 2 || ytil_prev.channels() != 2)
    throw std::invalid_argument("rrcu_forward: flows must be [2,H,W]");
  if (!y_k.val->same_shape(*ytil_prev.val))
    throw std::invalid_argument("rrcu_forward: flow shape mismatch");

  Var<S> r = ops::sub(p.enc(tape, y_k), p.enc(tape, ytil_prev));
  Var<S> logits = ops::conv2d(r, p.wr_w->var(tape), p.wr_b->var(tape), 3, 1, 1);
  Var<S> kernels = ops::softmax_channels(ops::pixel_shuffle(logits, kRrcuUpsample));
  if (diag) diag->kernels = kernels;
  Var<S> values = ops::bilinear_upsample2(r);
  Var<S> refined = ops::kernel_reassemble(kernels, values, kRrcuKappa);

  Var<S> up = ops::conv_transpose2d(y_k, p.deconv_w->var(tape), p.deconv_b->var(tape), 4, 2, 1);
  return ops::add(ops::scale(up, S(2)), p.wz(tape, refined));
}

}  // namespace stcflow
