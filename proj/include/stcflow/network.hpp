#pragma once

#include "stcflow/psc.hpp"
#include "stcflow/rrcu.hpp"
#include "stcflow/tcc.hpp"

#include <array>
#include <map>
#include <optional>

namespace stcflow {

struct NetworkConfig {
  std::array<int, 6> stage_channels{16, 32, 64, 96, 128, 196};
  std::array<int, 4> decoder_widths{128, 96, 64, 32};
  int max_displacement = 4;
  int lite_factor = 2;
  bool use_psc = true;
  bool use_tcc = true;
  bool use_rrcu = true;
  int toy_scale = 1;

  int stage_ch(int k) const { return std::max(1, stage_channels[k - 1] / toy_scale); }
  int dec_w(int i) const { return std::max(1, decoder_widths[i] / toy_scale); }
  int volume_channels() const {
    return (2 * max_displacement + 1) * (2 * max_displacement + 1);
  }

  void validate() const {
    if (max_displacement < 1) throw std::invalid_argument("config: max_displacement must be >= 1");
    if (lite_factor != 1 && lite_factor != 2 && lite_factor != 4)
      throw std::invalid_argument("config: lite_factor must be 1, 2 or 4");
    if (toy_scale < 1) throw std::invalid_argument("config: toy_scale must be >= 1");
  }
};

inline NetworkConfig toy_config(int scale = 4) {
  NetworkConfig cfg;
  cfg.toy_scale = scale;
  return cfg;
}

/// Frame pair [3,H,W] each, values in [0,1].
template <typename S>
struct FramePair {
  Tensor<S> frame1, frame2;
};

struct CropRecord {
  int height = 0, width = 0;  // original size before padding
};

/// Zero-pads both frames on the bottom/right to multiples of 64.
template <typename S>
std::pair<FramePair<S>, CropRecord> pad_input(const FramePair<S>& pair) {
  const int h = pair.frame1.height(), w = pair.frame1.width();
  if (h < 64 || w < 64) throw std::invalid_argument("pad_input: frames must be at least 64x64");
  if (!pair.frame1.same_shape(pair.frame2))
    throw std::invalid_argument("pad_input: frame shape mismatch");
  const int hp = (h + 63) / 64 * 64, wp = (w + 63) / 64 * 64;
  if (hp == h && wp == w) return {pair, CropRecord{h, w}};
  FramePair<S> out{Tensor<S>(3, hp, wp), Tensor<S>(3, hp, wp)};
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        out.frame1(c, y, x) = pair.frame1(c, y, x);
        out.frame2(c, y, x) = pair.frame2(c, y, x);
      }
  return {out, CropRecord{h, w}};
}

template <typename S>
Tensor<S> crop_flow(const Tensor<S>& flow, const CropRecord& rec) {
  if (flow.height() == rec.height && flow.width() == rec.width) return flow;
  Tensor<S> out(flow.channels(), rec.height, rec.width);
  for (int c = 0; c < flow.channels(); ++c)
    for (int y = 0; y < rec.height; ++y)
      for (int x = 0; x < rec.width; ++x) out(c, y, x) = flow(c, y, x);
  return out;
}

// ------------------------------------------------------------------- model

template <typename S>
struct ConvParam {
  ParamEntry<S>* w = nullptr;
  ParamEntry<S>* b = nullptr;
};

/// Owns every learnable tensor of the configured network.
template <typename S>
class Model {
 public:
  explicit Model(NetworkConfig cfg) : cfg_(cfg) {
    cfg_.validate();
    const int n = cfg_.max_displacement;
    const int d = cfg_.volume_channels();

    for (int k = 1; k <= 6; ++k) {
      const int cin = k == 1 ? 3 : cfg_.stage_ch(k - 1);
      const int cout = cfg_.stage_ch(k);
      const std::string prefix = "extractor.stage" + std::to_string(k);
      extractor_[k - 1].first.w = params_.add(prefix + ".conv_a.w", cout, cin, 9, Init::he, cin * 9);
      extractor_[k - 1].first.b = params_.add(prefix + ".conv_a.b", cout, 1, 1, Init::zero);
      extractor_[k - 1].second.w =
          params_.add(prefix + ".conv_b.w", cout, cout, 9, Init::he, cout * 9);
      extractor_[k - 1].second.b = params_.add(prefix + ".conv_b.b", cout, 1, 1, Init::zero);
    }

    if (cfg_.use_psc)
      for (int k = 3; k <= 5; ++k) {
        const int cprev = k == 3 ? 0 : cfg_.stage_ch(k - 1);
        psc_.emplace(k, PscStageParams<S>::create(params_, "psc.stage" + std::to_string(k),
                                                  cfg_.stage_ch(k), cprev));
      }

    if (cfg_.use_tcc)
      for (int k = 3; k <= 6; ++k)
        tcc_.emplace(k, TccStageParams<S>::create(params_, "tcc.stage" + std::to_string(k),
                                                  cfg_.stage_ch(k), n));

    std::vector<int> widths{cfg_.dec_w(0), cfg_.dec_w(1), cfg_.dec_w(2), cfg_.dec_w(3)};
    for (int k = 6; k >= 2; --k) {
      const int in_c = d + cfg_.stage_ch(k) + (k == 6 ? 0 : 2 + cfg_.dec_w(3));
      decoder_.emplace(k, DecoderStageParams<S>::create(
                              params_, "decoder.stage" + std::to_string(k), in_c, widths));
    }

    for (int coarse = 6; coarse >= 3; --coarse) {
      const std::string sk = std::to_string(coarse);
      if (cfg_.use_rrcu && coarse >= 4) {
        rrcu_.emplace(coarse, RrcuParams<S>::create(params_, "rrcu.stage" + sk));
      } else {
        ConvParam<S> up;
        up.w = params_.add("upflow.stage" + sk + ".w", 16, 2, 2, Init::bilinear4x4);
        up.b = params_.add("upflow.stage" + sk + ".b", 2, 1, 1, Init::zero);
        upflow_.emplace(coarse, up);
      }
      ConvParam<S> uf;
      const int wf = cfg_.dec_w(3);
      uf.w = params_.add("upfeat.stage" + sk + ".w", 16, wf, wf, Init::he, wf * 4);
      uf.b = params_.add("upfeat.stage" + sk + ".b", wf, 1, 1, Init::zero);
      upfeat_.emplace(coarse, uf);
    }

    params_.initialize(0x5703f10d);
  }

  const NetworkConfig& config() const { return cfg_; }
  ParamSet<S>& params() { return params_; }
  const ParamSet<S>& params() const { return params_; }

  void reinitialize(uint64_t seed) { params_.initialize(seed); }

  const std::pair<ConvParam<S>, ConvParam<S>>& extractor_stage(int k) const {
    return extractor_[k - 1];
  }
  const PscStageParams<S>& psc_stage(int k) const { return psc_.at(k); }
  const TccStageParams<S>* tcc_stage(int k) const {
    auto it = tcc_.find(k);
    return it == tcc_.end() ? nullptr : &it->second;
  }
  const DecoderStageParams<S>& decoder_stage(int k) const { return decoder_.at(k); }
  const RrcuParams<S>* rrcu_stage(int coarse) const {
    auto it = rrcu_.find(coarse);
    return it == rrcu_.end() ? nullptr : &it->second;
  }
  const ConvParam<S>* upflow_stage(int coarse) const {
    auto it = upflow_.find(coarse);
    return it == upflow_.end() ? nullptr : &it->second;
  }
  const ConvParam<S>& upfeat_stage(int coarse) const { return upfeat_.at(coarse); }

 private:
  NetworkConfig cfg_;
  ParamSet<S> params_;
  std::array<std::pair<ConvParam<S>, ConvParam<S>>, 6> extractor_;
  std::map<int, PscStageParams<S>> psc_;
  std::map<int, TccStageParams<S>> tcc_;
  std::map<int, DecoderStageParams<S>> decoder_;
  std::map<int, RrcuParams<S>> rrcu_;
  std::map<int, ConvParam<S>> upflow_;
  std::map<int, ConvParam<S>> upfeat_;
};

/// Six-stage feature pyramid; each stage halves the resolution with one
/// stride-2 and one stride-1 convolution, leaky-ReLU activations.
template <typename S>
std::vector<Var<S>> extract_pyramid(Tape<S>& tape, const Var<S>& frame, const Model<S>& model) {
  if (frame.channels() != 3) throw std::invalid_argument("extract_pyramid: expects [3,H,W]");
  if (frame.height() % 64 || frame.width() % 64)
    throw std::invalid_argument("extract_pyramid: input size must be a multiple of 64");
  std::vector<Var<S>> stages;
  Var<S> x = frame;
  for (int k = 1; k <= 6; ++k) {
    const auto& [ca, cb] = model.extractor_stage(k);
    x = ops::leaky_relu(ops::conv2d(x, ca.w->var(tape), ca.b->var(tape), 3, 2, 1), S(0.1));
    x = ops::leaky_relu(ops::conv2d(x, cb.w->var(tape), cb.b->var(tape), 3, 1, 1), S(0.1));
    stages.push_back(x);
  }
  return stages;
}

template <typename S>
struct ForwardResult {
  Var<S> final_flow;                // [2,H,W] pixels at input resolution
  std::vector<Var<S>> stage_flows;  // coarse to fine: stages 6,5,4,3,2
};

/// Full coarse-to-fine pass over a padded frame pair.
template <typename S>
ForwardResult<S> stcflow_forward(Tape<S>& tape, const Tensor<S>& frame1, const Tensor<S>& frame2,
                                 const Model<S>& model, FlopCounter* counter = nullptr) {
  const NetworkConfig& cfg = model.config();
  const int n = cfg.max_displacement, s = cfg.lite_factor;

  Var<S> in1 = constant(tape, frame1);
  Var<S> in2 = constant(tape, frame2);
  std::vector<Var<S>> pyr1 = extract_pyramid(tape, in1, model);
  std::vector<Var<S>> pyr2 = extract_pyramid(tape, in2, model);

  if (cfg.use_psc) {
    std::vector<const PscStageParams<S>*> pp;
    for (int k = 3; k <= 5; ++k) pp.push_back(&model.psc_stage(k));
    for (auto* pyr : {&pyr1, &pyr2}) {
      std::vector<Var<S>> feats{(*pyr)[2], (*pyr)[3], (*pyr)[4]};
      std::vector<Var<S>> enhanced = psc_pyramid(tape, feats, pp, s, counter);
      (*pyr)[2] = enhanced[0];
      (*pyr)[3] = enhanced[1];
      (*pyr)[4] = enhanced[2];
    }
  }

  std::map<int, Var<S>> flows, feats;
  {
    auto [flow6, feat6] =
        contextual_pwc_block<S>(tape, pyr1[5], pyr2[5], std::nullopt, std::nullopt,
                                cfg.use_tcc ? model.tcc_stage(6) : nullptr, model.decoder_stage(6),
                                n, s, counter);
    flows.emplace(6, flow6);
    feats.emplace(6, feat6);
  }

  std::optional<Var<S>> prev_up;  // upsampled flow from the previous transition
  for (int k = 5; k >= 2; --k) {
    const int coarse = k + 1;
    const Var<S>& coarse_flow = flows.at(coarse);
    Var<S> up_flow;
    if (const RrcuParams<S>* rp = model.rrcu_stage(coarse)) {
      Var<S> prev = prev_up ? *prev_up
                            : constant(tape, Tensor<S>(2, coarse_flow.height(),
                                                       coarse_flow.width()));
      up_flow = rrcu_forward(tape, coarse_flow, feats.at(coarse), prev, *rp);
    } else {
      const ConvParam<S>* up = model.upflow_stage(coarse);
      up_flow = ops::scale(
          ops::conv_transpose2d(coarse_flow, up->w->var(tape), up->b->var(tape), 4, 2, 1), S(2));
    }
    const ConvParam<S>& uf = model.upfeat_stage(coarse);
    Var<S> up_feat =
        ops::conv_transpose2d(feats.at(coarse), uf.w->var(tape), uf.b->var(tape), 4, 2, 1);

    Var<S> warped = ops::warp(pyr2[k - 1], up_flow);
    const TccStageParams<S>* tcc = (cfg.use_tcc && k >= 3) ? model.tcc_stage(k) : nullptr;
    auto [flow_k, feat_k] = contextual_pwc_block<S>(tape, pyr1[k - 1], warped, up_flow, up_feat,
                                                    tcc, model.decoder_stage(k), n, s, counter);
    flows.emplace(k, flow_k);
    feats.emplace(k, feat_k);
    prev_up = up_flow;
  }

  Var<S> final_flow =
      ops::scale(ops::bilinear_upsample2(ops::bilinear_upsample2(flows.at(2))), S(4));
  ForwardResult<S> res;
  res.final_flow = final_flow;
  for (int k = 6; k >= 2; --k) res.stage_flows.push_back(flows.at(k));
  return res;
}

/// Exact learnable-scalar count for a configuration.
inline long long count_parameters(const NetworkConfig& cfg) {
  Model<float> model(cfg);
  return model.params().count_scalars();
}

}  // namespace stcflow
