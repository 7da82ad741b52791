#pragma once

#include "stcflow/ops.hpp"
#include "stcflow/params.hpp"

#include <functional>

namespace stcflow {

/// The two product orientations of a reshaped feature matrix [positions, channels]:
/// position mode relates all position pairs, channel mode all channel pairs.
enum class MatmulMode { position, channel };

namespace detail {

inline int phase_size(int m, int s, int p) { return (m - p + s - 1) / s; }

/// Member of phase p (rows p, p+s, ...) nearest to row/column j; ties go low.
inline int phase_nearest(int j, int p, int s, int mp) {
  int t = (j - p + (s - 1) / 2) / s;
  t = std::clamp(t, 0, mp - 1);
  return t;
}

}  // namespace detail

// ------------------------------------------------------------- plain products

/// position: F2 * F1^T  in R^{M2 x M1};  channel: F1^T * F2 in R^{N1 x N2}.
/// Inputs are [positions, channels] matrices. Counter accrues 2*r*c*inner.
template <typename S>
RowMat<S> attention_matmul(const RowMat<S>& f1, const RowMat<S>& f2, MatmulMode mode,
                           FlopCounter& counter) {
  if (mode == MatmulMode::position) {
    if (f1.cols() != f2.cols()) throw std::invalid_argument("attention_matmul: channel mismatch");
    counter.add(2LL * f2.rows() * f1.rows() * f1.cols());
    return f2 * f1.transpose();
  }
  if (f1.rows() != f2.rows()) throw std::invalid_argument("attention_matmul: position mismatch");
  counter.add(2LL * f1.cols() * f2.cols() * f1.rows());
  return f1.transpose() * f2;
}

/// Polyphase-approximated self product of a reshaped feature [M,N].
///
/// position mode: rows are split into s interleaved phases; each phase's
/// product is computed exactly and the full [M,M] result is reconstructed by
/// interleaving phase rows and carrying each row's in-phase entries across to
/// the nearest missing columns. s=1 reproduces the exact product bit-for-bit.
/// channel mode: the contracted position axis is subsampled to one phase and
/// rescaled, giving an [N,N] estimate at 1/s of the multiplications.
template <typename S>
RowMat<S> lite_matmul(const RowMat<S>& f, int s, MatmulMode mode, FlopCounter& counter) {
  if (s <= 0) throw std::invalid_argument("lite_matmul: s must be positive");
  const int m = int(f.rows()), n = int(f.cols());
  if (mode == MatmulMode::channel) {
    const int msub = detail::phase_size(m, s, 0);
    RowMat<S> sub(msub, n);
    for (int i = 0; i < msub; ++i) sub.row(i) = f.row(i * s);
    counter.add(2LL * n * n * msub);
    RowMat<S> g = sub.transpose() * sub;
    return g * (S(m) / S(msub));
  }
  RowMat<S> out(m, m);
  for (int p = 0; p < s; ++p) {
    const int mp = detail::phase_size(m, s, p);
    RowMat<S> fp(mp, n);
    for (int i = 0; i < mp; ++i) fp.row(i) = f.row(p + i * s);
    counter.add(2LL * n * mp * mp);
    RowMat<S> block = fp * fp.transpose();
    for (int i = 0; i < mp; ++i) {
      const int gi = p + i * s;
      for (int j = 0; j < m; ++j) out(gi, j) = block(i, detail::phase_nearest(j, p, s, mp));
    }
  }
  return out;
}

// ---------------------------------------------------- differentiable products

/// Differentiable polyphase position product of two embeddings carried as
/// [1, C', M] (channels x positions). Output [1, M, M] approximates Q^T K.
template <typename S>
Var<S> lite_matmul_pos(const Var<S>& qmat, const Var<S>& kmat, int s, FlopCounter* counter) {
  if (s <= 0) throw std::invalid_argument("lite_matmul_pos: s must be positive");
  if (qmat.height() != kmat.height() || qmat.width() != kmat.width())
    throw std::invalid_argument("lite_matmul_pos: shape mismatch");
  const int cdim = qmat.height(), m = qmat.width();
  Var<S> out = ops::make_out(qmat, 1, m, m);

  auto gather = [&](const Tensor<S>& src, int p, int mp) {
    RowMat<S> g(cdim, mp);
    for (int i = 0; i < mp; ++i) g.col(i) = src.channel(0).col(p + i * s);
    return g;
  };
  for (int p = 0; p < s; ++p) {
    const int mp = detail::phase_size(m, s, p);
    RowMat<S> qp = gather(*qmat.val, p, mp);
    RowMat<S> kp = gather(*kmat.val, p, mp);
    if (counter) counter->add(2LL * cdim * mp * mp);
    RowMat<S> block = qp.transpose() * kp;
    for (int i = 0; i < mp; ++i) {
      const int gi = p + i * s;
      for (int j = 0; j < m; ++j)
        (*out.val)(0, gi, j) = block(i, detail::phase_nearest(j, p, s, mp));
    }
  }

  auto qv = qmat.val, kv = kmat.val, qg = qmat.grad, kg = kmat.grad, og = out.grad;
  qmat.tape->push([qv, kv, qg, kg, og, s, cdim, m] {
    for (int p = 0; p < s; ++p) {
      const int mp = detail::phase_size(m, s, p);
      RowMat<S> qp(cdim, mp), kp(cdim, mp);
      for (int i = 0; i < mp; ++i) {
        qp.col(i) = qv->channel(0).col(p + i * s);
        kp.col(i) = kv->channel(0).col(p + i * s);
      }
      RowMat<S> dblock = RowMat<S>::Zero(mp, mp);
      for (int i = 0; i < mp; ++i) {
        const int gi = p + i * s;
        for (int j = 0; j < m; ++j)
          dblock(i, detail::phase_nearest(j, p, s, mp)) += (*og)(0, gi, j);
      }
      RowMat<S> dqp = kp * dblock.transpose();
      RowMat<S> dkp = qp * dblock;
      for (int i = 0; i < mp; ++i) {
        qg->channel(0).col(p + i * s) += dqp.col(i);
        kg->channel(0).col(p + i * s) += dkp.col(i);
      }
    }
  });
  return out;
}

/// Differentiable channel-mode lite product: Q K^T over a subsampled position
/// axis, rescaled to the full sum. Inputs [1, C', M]; output [1, C', C'].
template <typename S>
Var<S> lite_matmul_chan(const Var<S>& qmat, const Var<S>& kmat, int s, FlopCounter* counter) {
  const int m = qmat.width();
  Var<S> qs = ops::subsample_cols(qmat, s);
  Var<S> ks = ops::subsample_cols(kmat, s);
  Var<S> g = ops::matmul(qs, ks, false, true, counter);
  const S ratio = S(m) / S(qs.width());
  return ratio == S(1) ? g : ops::scale(g, ratio);
}

// ------------------------------------------------------------ non-local block

template <typename S>
struct NonLocalParams {
  LinearTransform<S> wq, wk, wv, wz;
  int embed = 0;

  static NonLocalParams create(ParamSet<S>& ps, const std::string& prefix, int c) {
    NonLocalParams p;
    p.embed = std::max(1, c / 2);
    p.wq.w = ps.add(prefix + ".wq", p.embed, c, 1, Init::he, c);
    p.wk.w = ps.add(prefix + ".wk", p.embed, c, 1, Init::he, c);
    p.wv.w = ps.add(prefix + ".wv", p.embed, c, 1, Init::he, c);
    p.wz.w = ps.add(prefix + ".wz", c, p.embed, 1, Init::zero, p.embed);
    return p;
  }
};

/// Embedded-Gaussian non-local block: Z_i = X_i + W_z sum_j softmax_j((W_q
/// X_i)^T (W_k X_j)) (W_v X_j). Residual, so zero W_z is the identity.
template <typename S>
Var<S> non_local_block(Tape<S>& tape, const Var<S>& x, const NonLocalParams<S>& p,
                       FlopCounter* counter = nullptr) {
  const int h = x.height(), w = x.width();
  if (h * w == 0) throw std::invalid_argument("non_local_block: empty spatial extent");
  const int hw = h * w, e = p.embed;
  Var<S> q = p.wq(tape, x);
  Var<S> k = p.wk(tape, x);
  Var<S> v = p.wv(tape, x);
  Var<S> logits = ops::matmul(ops::reshape(q, 1, e, hw), ops::reshape(k, 1, e, hw), true, false,
                              counter);                      // [1,HW,HW]
  Var<S> attn = ops::softmax_rows(logits);
  Var<S> ctx = ops::matmul(ops::reshape(v, 1, e, hw), attn, false, true, counter);  // [1,e,HW]
  Var<S> z = p.wz(tape, ops::reshape(ctx, e, h, w));
  return ops::add(x, z);
}

// ------------------------------------------------------- global context block

template <typename S>
struct GcParams {
  LinearTransform<S> wkey, w1, wz;
  ParamEntry<S>* ln_gamma = nullptr;
  ParamEntry<S>* ln_beta = nullptr;
  int bottleneck = 0;

  static GcParams create(ParamSet<S>& ps, const std::string& prefix, int c) {
    GcParams p;
    p.bottleneck = std::max(1, c / 4);
    p.wkey.w = ps.add(prefix + ".wkey", 1, c, 1, Init::he, c);
    p.w1.w = ps.add(prefix + ".w1", p.bottleneck, c, 1, Init::he, c);
    p.ln_gamma = ps.add(prefix + ".ln_gamma", p.bottleneck, 1, 1, Init::ones);
    p.ln_beta = ps.add(prefix + ".ln_beta", p.bottleneck, 1, 1, Init::zero);
    p.wz.w = ps.add(prefix + ".wz", c, p.bottleneck, 1, Init::zero, p.bottleneck);
    return p;
  }
};

/// Global-context block: one position softmax pools a global vector, a
/// bottleneck (1x1, LN, ReLU, 1x1) transforms it, and the result is broadcast
/// back onto the input.
template <typename S>
Var<S> global_context_block(Tape<S>& tape, const Var<S>& x, const GcParams<S>& p,
                            FlopCounter* counter = nullptr) {
  const int c = x.channels(), h = x.height(), w = x.width();
  if (h * w == 0) throw std::invalid_argument("global_context_block: empty spatial extent");
  const int hw = h * w;
  Var<S> key = p.wkey(tape, x);                                     // [1,H,W]
  Var<S> attn = ops::softmax_rows(ops::reshape(key, 1, 1, hw));     // [1,1,HW]
  Var<S> ctx = ops::matmul(ops::reshape(x, 1, c, hw), attn, false, true, counter);  // [1,c,1]
  Var<S> t = p.w1(tape, ops::reshape(ctx, c, 1, 1));
  t = ops::layer_norm_vec(t, p.ln_gamma->var(tape), p.ln_beta->var(tape));
  t = ops::relu(t);
  Var<S> z = p.wz(tape, t);                                         // [c,1,1]
  return ops::add(x, ops::broadcast_spatial(z, h, w));
}

// -------------------------------------------------- contextual attention frame

/// The abstract contextual attention block
///   Z = fuse( target(X), aggregate( attention(X), sum_k w_k X_k ) ).
/// Classic attention blocks are its single-input specialisations.
template <typename S>
struct ContextAttentionSpec {
  std::vector<S> input_weights;
  std::function<Var<S>(Tape<S>&, const std::vector<Var<S>>&)> attention;
  std::function<Var<S>(Tape<S>&, const std::vector<Var<S>>&)> target;
  std::function<Var<S>(Tape<S>&, const Var<S>&, const Var<S>&)> aggregate;
  std::function<Var<S>(Tape<S>&, const Var<S>&, const Var<S>&)> fuse;
};

template <typename S>
Var<S> apply_context_framework(Tape<S>& tape, const ContextAttentionSpec<S>& spec,
                               const std::vector<Var<S>>& inputs) {
  if (inputs.empty()) throw std::invalid_argument("context framework: no inputs");
  if (spec.input_weights.size() != inputs.size())
    throw std::invalid_argument("context framework: weight count != input count");
  for (const auto& in : inputs)
    if (!in.val->same_shape(*inputs[0].val))
      throw std::invalid_argument("context framework: input shape mismatch");

  Var<S> wsum = ops::scale(inputs[0], spec.input_weights[0]);
  for (size_t i = 1; i < inputs.size(); ++i)
    wsum = ops::add(wsum, ops::scale(inputs[i], spec.input_weights[i]));

  Var<S> attn = spec.attention(tape, inputs);
  Var<S> agg = spec.aggregate(tape, attn, wsum);
  Var<S> tgt = spec.target(tape, inputs);
  return spec.fuse(tape, tgt, agg);
}

/// Non-local block expressed through the framework: attention path carries the
/// aggregated context, target path is all-pass, fusion is addition.
template <typename S>
ContextAttentionSpec<S> make_non_local_spec(const NonLocalParams<S>& p,
                                            FlopCounter* counter = nullptr) {
  ContextAttentionSpec<S> spec;
  spec.input_weights = {S(1)};
  spec.attention = [p, counter](Tape<S>& tape, const std::vector<Var<S>>& xs) {
    const Var<S>& x = xs[0];
    const int h = x.height(), w = x.width(), hw = h * w, e = p.embed;
    Var<S> q = p.wq(tape, x);
    Var<S> k = p.wk(tape, x);
    Var<S> v = p.wv(tape, x);
    Var<S> logits =
        ops::matmul(ops::reshape(q, 1, e, hw), ops::reshape(k, 1, e, hw), true, false, counter);
    Var<S> attn = ops::softmax_rows(logits);
    Var<S> ctx = ops::matmul(ops::reshape(v, 1, e, hw), attn, false, true, counter);
    return ops::reshape(ctx, e, h, w);
  };
  spec.target = [](Tape<S>&, const std::vector<Var<S>>& xs) { return xs[0]; };
  spec.aggregate = [p](Tape<S>& tape, const Var<S>& attn, const Var<S>&) {
    return p.wz(tape, attn);
  };
  spec.fuse = [](Tape<S>&, const Var<S>& tgt, const Var<S>& agg) { return ops::add(tgt, agg); };
  return spec;
}

}  // namespace stcflow
