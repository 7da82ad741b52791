#pragma once

#include "stcflow/network.hpp"

#include <json.hpp>

#include <cstdio>
#include <cstring>
#include <memory>
#include <string>

namespace stcflow {

inline nlohmann::json config_to_json(const NetworkConfig& cfg) {
  nlohmann::json j;
  j["stage_channels"] = cfg.stage_channels;
  j["decoder_widths"] = cfg.decoder_widths;
  j["max_displacement"] = cfg.max_displacement;
  j["lite_factor"] = cfg.lite_factor;
  j["use_psc"] = cfg.use_psc;
  j["use_tcc"] = cfg.use_tcc;
  j["use_rrcu"] = cfg.use_rrcu;
  j["toy_scale"] = cfg.toy_scale;
  return j;
}

inline NetworkConfig config_from_json(const nlohmann::json& j) {
  NetworkConfig cfg;
  if (j.contains("stage_channels")) j.at("stage_channels").get_to(cfg.stage_channels);
  if (j.contains("decoder_widths")) j.at("decoder_widths").get_to(cfg.decoder_widths);
  if (j.contains("max_displacement")) j.at("max_displacement").get_to(cfg.max_displacement);
  if (j.contains("lite_factor")) j.at("lite_factor").get_to(cfg.lite_factor);
  if (j.contains("use_psc")) j.at("use_psc").get_to(cfg.use_psc);
  if (j.contains("use_tcc")) j.at("use_tcc").get_to(cfg.use_tcc);
  if (j.contains("use_rrcu")) j.at("use_rrcu").get_to(cfg.use_rrcu);
  if (j.contains("toy_scale")) j.at("toy_scale").get_to(cfg.toy_scale);
  cfg.validate();
  return cfg;
}

namespace detail {

constexpr char kCkptMagic[4] = {'S', 'T', 'C', 'F'};
constexpr uint32_t kCkptVersion = 1;

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};

inline void write_u32(std::FILE* f, uint32_t v) {
  unsigned char b[4] = {uint8_t(v), uint8_t(v >> 8), uint8_t(v >> 16), uint8_t(v >> 24)};
  if (std::fwrite(b, 1, 4, f) != 4) throw std::runtime_error("checkpoint: write failed");
}

inline uint32_t read_u32(std::FILE* f) {
  unsigned char b[4];
  if (std::fread(b, 1, 4, f) != 4) throw std::runtime_error("checkpoint: truncated file");
  return uint32_t(b[0]) | uint32_t(b[1]) << 8 | uint32_t(b[2]) << 16 | uint32_t(b[3]) << 24;
}

}  // namespace detail

/// Versioned flat name->tensor map with a JSON config header. All payload is
/// little-endian float32; parameter shapes are stored alongside the data.
template <typename S>
void save_checkpoint(const Model<S>& model, const std::string& path) {
  std::unique_ptr<std::FILE, detail::FileCloser> f(std::fopen(path.c_str(), "wb"));
  if (!f) throw std::runtime_error("checkpoint: cannot open " + path);
  if (std::fwrite(detail::kCkptMagic, 1, 4, f.get()) != 4)
    throw std::runtime_error("checkpoint: write failed");
  detail::write_u32(f.get(), detail::kCkptVersion);
  const std::string cfg = config_to_json(model.config()).dump();
  detail::write_u32(f.get(), uint32_t(cfg.size()));
  if (std::fwrite(cfg.data(), 1, cfg.size(), f.get()) != cfg.size())
    throw std::runtime_error("checkpoint: write failed");
  detail::write_u32(f.get(), uint32_t(model.params().entries().size()));
  for (const auto& e : model.params().entries()) {
    detail::write_u32(f.get(), uint32_t(e->name.size()));
    if (std::fwrite(e->name.data(), 1, e->name.size(), f.get()) != e->name.size())
      throw std::runtime_error("checkpoint: write failed");
    const Tensor<S>& t = *e->value;
    detail::write_u32(f.get(), 3);
    detail::write_u32(f.get(), uint32_t(t.channels()));
    detail::write_u32(f.get(), uint32_t(t.height()));
    detail::write_u32(f.get(), uint32_t(t.width()));
    for (Eigen::Index i = 0; i < t.size(); ++i) {
      const float v = float(t[i]);
      uint32_t bits;
      std::memcpy(&bits, &v, 4);
      detail::write_u32(f.get(), bits);
    }
  }
}

/// Rebuilds the model from the stored config and loads every parameter.
/// Name or shape mismatches are incompatibility errors.
template <typename S>
std::unique_ptr<Model<S>> load_checkpoint(const std::string& path) {
  std::unique_ptr<std::FILE, detail::FileCloser> f(std::fopen(path.c_str(), "rb"));
  if (!f) throw std::runtime_error("checkpoint: cannot open " + path);
  char magic[4];
  if (std::fread(magic, 1, 4, f.get()) != 4 || std::memcmp(magic, detail::kCkptMagic, 4) != 0)
    throw std::runtime_error("checkpoint: bad magic in " + path);
  if (detail::read_u32(f.get()) != detail::kCkptVersion)
    throw std::runtime_error("checkpoint: unsupported version in " + path);
  const uint32_t cfg_len = detail::read_u32(f.get());
  std::string cfg_str(cfg_len, '\0');
  if (std::fread(cfg_str.data(), 1, cfg_len, f.get()) != cfg_len)
    throw std::runtime_error("checkpoint: truncated config in " + path);
  NetworkConfig cfg = config_from_json(nlohmann::json::parse(cfg_str));
  auto model = std::make_unique<Model<S>>(cfg);
  const uint32_t n = detail::read_u32(f.get());
  if (n != model.get()->params().entries().size())
    throw std::runtime_error("checkpoint: incompatible parameter count in " + path);
  for (uint32_t i = 0; i < n; ++i) {
    const uint32_t name_len = detail::read_u32(f.get());
    std::string name(name_len, '\0');
    if (std::fread(name.data(), 1, name_len, f.get()) != name_len)
      throw std::runtime_error("checkpoint: truncated entry in " + path);
    ParamEntry<S>* e = model->params().find(name);
    if (!e) throw std::runtime_error("checkpoint: unknown parameter " + name);
    if (detail::read_u32(f.get()) != 3)
      throw std::runtime_error("checkpoint: unsupported rank for " + name);
    const uint32_t c = detail::read_u32(f.get());
    const uint32_t h = detail::read_u32(f.get());
    const uint32_t w = detail::read_u32(f.get());
    Tensor<S>& t = *e->value;
    if (int(c) != t.channels() || int(h) != t.height() || int(w) != t.width())
      throw std::runtime_error("checkpoint: shape mismatch for " + name);
    for (Eigen::Index k = 0; k < t.size(); ++k) {
      const uint32_t bits = detail::read_u32(f.get());
      float v;
      std::memcpy(&v, &bits, 4);
      t[k] = S(v);
    }
  }
  return model;
}

}  // namespace stcflow
