#pragma once

#include "stcflow/attention.hpp"

#include <optional>
#include <utility>
#include <vector>

namespace stcflow {

/// Cross-stage context carry. `c_p` is the position context at the stage's
/// own resolution; `c_c` is the (spatially constant) channel context map.
template <typename S>
struct PscState {
  Var<S> c_p;
  Var<S> c_c;
  int stage = 0;
};

/// Attention maps actually used by a psc_forward call (normalisation checks).
template <typename S>
struct PscDiagnostics {
  Var<S> a_p;  // [1,HW,HW], rows sum to 1
  Var<S> a_c;  // [1,1,HW], sums to 1
};

template <typename S>
struct PscStageParams {
  LinearTransform<S> wq, wk;       // position-attention embeddings
  LinearTransform<S> wz_pos;       // [cat width -> C]
  LinearTransform<S> wkey;         // channel-attention key, C -> 1
  LinearTransform<S> wz_chan;      // [cat width -> C]
  int channels = 0;
  int prev_channels = 0;           // 0 at the first PSC stage

  static PscStageParams create(ParamSet<S>& ps, const std::string& prefix, int c, int c_prev) {
    PscStageParams p;
    p.channels = c;
    p.prev_channels = c_prev;
    const int e = std::max(1, c / 2);
    p.wq.w = ps.add(prefix + ".pos.wq", e, c, 1, Init::he, c);
    p.wk.w = ps.add(prefix + ".pos.wk", e, c, 1, Init::he, c);
    p.wz_pos.w = ps.add(prefix + ".pos.wz", c, c + c_prev, 1, Init::zero, c + c_prev);
    p.wkey.w = ps.add(prefix + ".chan.wkey", 1, c, 1, Init::he, c);
    p.wz_chan.w = ps.add(prefix + ".chan.wz", c, c + c_prev, 1, Init::zero, c + c_prev);
    return p;
  }
};

/// One pyramidal-spatial-context stage: dual position/channel attention with
/// the carried context of the previous (finer) stage folded in:
///   F~ = F + C_P + C_C,   C_P = W_z[ attn_P(F), pool(C_P_prev) ],
///                         C_C = W_z[ attn_C(F), C_C_prev ].
/// The position carry is max-pooled down by 2; the channel carry is a global
/// vector and needs no pooling.
template <typename S>
std::pair<Var<S>, PscState<S>> psc_forward(Tape<S>& tape, const Var<S>& f,
                                           const PscState<S>* prev, const PscStageParams<S>& p,
                                           int lite_s, FlopCounter* counter = nullptr,
                                           PscDiagnostics<S>* diag = nullptr) {
  const int c = f.channels(), h = f.height(), w = f.width(), hw = h * w;
  if (c != p.channels) throw std::invalid_argument("psc_forward: channel mismatch with params");
  if (prev) {
    if (prev->c_p.height() != 2 * h || prev->c_p.width() != 2 * w)
      throw std::invalid_argument("psc_forward: prev carry must be exactly 2x the current size");
    if (prev->c_p.channels() != p.prev_channels)
      throw std::invalid_argument("psc_forward: prev carry channel mismatch");
  } else if (p.prev_channels != 0) {
    throw std::invalid_argument("psc_forward: params expect a previous stage carry");
  }

  // Position branch.
  const int e = std::max(1, c / 2);
  Var<S> q = p.wq(tape, f);
  Var<S> k = p.wk(tape, f);
  Var<S> logits =
      lite_matmul_pos(ops::reshape(q, 1, e, hw), ops::reshape(k, 1, e, hw), lite_s, counter);
  Var<S> a_p = ops::softmax_rows(logits);                                        // [1,HW,HW]
  if (diag) diag->a_p = a_p;
  Var<S> ctx_p = ops::reshape(ops::matmul(ops::reshape(f, 1, c, hw), a_p, false, true), c, h, w);
  Var<S> cat_p = prev ? ops::concat_channels<S>({ctx_p, ops::max_pool2(prev->c_p)}) : ctx_p;
  Var<S> c_p = p.wz_pos(tape, cat_p);

  // Channel branch: one global descriptor (position softmax of a 1-channel key).
  Var<S> key = p.wkey(tape, f);
  Var<S> a_c = ops::softmax_rows(ops::reshape(key, 1, 1, hw));                   // [1,1,HW]
  if (diag) diag->a_c = a_c;
  Var<S> ctx_c = ops::reshape(ops::matmul(ops::reshape(f, 1, c, hw), a_c, false, true), c, 1, 1);
  Var<S> cat_c = prev ? ops::concat_channels<S>({ctx_c, ops::spatial_mean(prev->c_c)}) : ctx_c;
  Var<S> c_c_vec = p.wz_chan(tape, cat_c);
  Var<S> c_c = ops::broadcast_spatial(c_c_vec, h, w);

  Var<S> out = ops::add(ops::add(f, c_p), c_c);
  return {out, PscState<S>{c_p, c_c, prev ? prev->stage + 1 : 0}};
}

/// Applies PSC to a fine-to-coarse chain of stage features, threading the
/// context carry. Shapes are preserved per stage.
template <typename S>
std::vector<Var<S>> psc_pyramid(Tape<S>& tape, const std::vector<Var<S>>& features,
                                const std::vector<const PscStageParams<S>*>& params, int lite_s,
                                FlopCounter* counter = nullptr) {
  if (features.size() != params.size())
    throw std::invalid_argument("psc_pyramid: stage count mismatch");
  std::vector<Var<S>> out;
  std::optional<PscState<S>> carry;
  for (size_t i = 0; i < features.size(); ++i) {
    if (i > 0) {
      if (features[i].height() * 2 != features[i - 1].height() ||
          features[i].width() * 2 != features[i - 1].width())
        throw std::invalid_argument("psc_pyramid: stages must halve in size");
    }
    auto [enhanced, state] =
        psc_forward(tape, features[i], carry ? &*carry : nullptr, *params[i], lite_s, counter);
    out.push_back(enhanced);
    carry = state;
  }
  return out;
}

}  // namespace stcflow
