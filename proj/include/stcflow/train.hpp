#pragma once

#include "stcflow/attention.hpp"
#include "stcflow/loss.hpp"
#include "stcflow/metrics.hpp"
#include "stcflow/network.hpp"
#include "stcflow/synthetic.hpp"

#include <chrono>
#include <cmath>
#include <string>
#include <vector>

namespace stcflow {

struct DivergenceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Adaptive-moment optimizer, beta (0.9, 0.999), bias-corrected.
template <typename S>
class Adam {
 public:
  explicit Adam(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(ParamSet<S>& params, double lr) {
    const auto& entries = params.entries();
    if (m_.empty()) {
      for (const auto& e : entries) {
        m_.emplace_back(e->value->channels(), e->value->height(), e->value->width());
        v_.emplace_back(e->value->channels(), e->value->height(), e->value->width());
      }
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, t_);
    const double bc2 = 1.0 - std::pow(beta2_, t_);
    for (size_t i = 0; i < entries.size(); ++i) {
      Tensor<S>& p = *entries[i]->value;
      Tensor<S>& g = *entries[i]->grad;
      Tensor<S>& m = m_[i];
      Tensor<S>& v = v_[i];
      for (Eigen::Index k = 0; k < p.size(); ++k) {
        m[k] = S(beta1_) * m[k] + S(1 - beta1_) * g[k];
        v[k] = S(beta2_) * v[k] + S(1 - beta2_) * g[k] * g[k];
        const double mhat = double(m[k]) / bc1;
        const double vhat = double(v[k]) / bc2;
        p[k] -= S(lr * mhat / (std::sqrt(vhat) + eps_));
      }
    }
  }

 private:
  double beta1_, beta2_, eps_;
  int t_ = 0;
  std::vector<Tensor<S>> m_, v_;
};

/// Toy stand-in for the staged schedules: fixed rate with one halving.
struct TrainSchedule {
  double base_lr = 1e-4;
  double halve_fraction = 0.6;

  double lr_at(int step, int total_steps) const {
    return step >= int(total_steps * halve_fraction) ? base_lr * 0.5 : base_lr;
  }
};

struct TrainOptions {
  int steps = 100;
  TrainSchedule schedule;
  bool flip_augment = true;  // random h/v flips per sample per step, seeded
  uint32_t augment_seed = 0x517c0a1d;
};

struct StepLog {
  int step = 0;
  double total_loss = 0;
  std::array<double, 5> stage_losses{};  // unweighted, coarse to fine
  double lr = 0;
};

/// Full-batch gradient steps over the sample list. Deterministic; throws
/// DivergenceError if the loss leaves the reals.
inline std::vector<StepLog> train(Model<float>& model, const LossConfig& loss_cfg,
                                  const std::vector<SyntheticSample>& data,
                                  const TrainOptions& opt) {
  if (opt.steps < 1) throw std::invalid_argument("train: steps must be >= 1");
  if (data.empty()) throw std::invalid_argument("train: empty data set");
  loss_cfg.validate();
  Adam<float> adam;
  std::vector<StepLog> log;
  log.reserve(opt.steps);
  std::mt19937 flip_rng(opt.augment_seed);
  const float inv_n = 1.0f / float(data.size());
  for (int step = 0; step < opt.steps; ++step) {
    model.params().zero_grads();
    double total = 0;
    std::array<double, 5> stages{};
    for (const SyntheticSample& sample : data) {
      const bool fh = opt.flip_augment && (flip_rng() & 1);
      const bool fv = opt.flip_augment && (flip_rng() & 1);
      SyntheticSample flipped;
      const SyntheticSample* use = &sample;
      if (fh || fv) {
        flipped = flip_sample(sample, fh, fv);
        use = &flipped;
      }
      Tape<float> tape;
      ForwardResult<float> fwd = stcflow_forward(tape, use->frame1, use->frame2, model);
      std::array<double, 5> stage_vals{};
      Var<float> loss = multiscale_loss(tape, fwd.stage_flows, use->gt_flow, loss_cfg, &stage_vals);
      total += double((*loss.val)[0]);
      for (int i = 0; i < 5; ++i) stages[i] += stage_vals[i];
      backward(loss);
    }
    total *= inv_n;
    for (double& s : stages) s *= inv_n;
    if (!std::isfinite(total))
      throw DivergenceError("train: loss diverged at step " + std::to_string(step));
    for (const auto& e : model.params().entries()) e->grad->array() *= inv_n;
    const double lr = opt.schedule.lr_at(step, opt.steps);
    adam.step(model.params(), lr);
    log.push_back(StepLog{step, total, stages, lr});
  }
  return log;
}

/// Mean full-resolution AEE of the model over a sample set.
inline double evaluate_mean_aee(Model<float>& model, const std::vector<SyntheticSample>& data) {
  if (data.empty()) throw std::invalid_argument("evaluate: empty data set");
  double sum = 0;
  for (const SyntheticSample& sample : data) {
    Tape<float> tape;
    ForwardResult<float> fwd = stcflow_forward(tape, sample.frame1, sample.frame2, model);
    sum += aee(*fwd.final_flow.val, sample.gt_flow);
  }
  return sum / double(data.size());
}

// ---------------------------------------------------------------- ablation

struct AblationRow {
  std::string name;
  NetworkConfig config;
  double train_aee = 0;
  double holdout_aee = 0;
};

inline std::vector<std::pair<std::string, NetworkConfig>> standard_ablation_grid(
    NetworkConfig base) {
  auto with = [&](bool psc, bool tcc, bool rrcu) {
    NetworkConfig c = base;
    c.use_psc = psc;
    c.use_tcc = tcc;
    c.use_rrcu = rrcu;
    return c;
  };
  return {{"baseline", with(false, false, false)},
          {"+PSC", with(true, false, false)},
          {"+TCC", with(false, true, false)},
          {"+RRCU", with(false, false, true)},
          {"full", with(true, true, true)}};
}

/// Trains every configuration identically and reports train/holdout AEE.
inline std::vector<AblationRow> run_ablation(
    const std::vector<std::pair<std::string, NetworkConfig>>& grid, const LossConfig& loss_cfg,
    const std::vector<SyntheticSample>& train_data, const std::vector<SyntheticSample>& holdout,
    const TrainOptions& opt, uint64_t seed) {
  if (grid.empty()) throw std::invalid_argument("run_ablation: empty grid");
  std::vector<AblationRow> rows;
  for (const auto& [name, cfg] : grid) {
    Model<float> model(cfg);
    model.reinitialize(seed);
    train(model, loss_cfg, train_data, opt);
    AblationRow row;
    row.name = name;
    row.config = cfg;
    row.train_aee = evaluate_mean_aee(model, train_data);
    row.holdout_aee = holdout.empty() ? 0.0 : evaluate_mean_aee(model, holdout);
    rows.push_back(row);
  }
  return rows;
}

inline std::string ablation_csv(const std::vector<AblationRow>& rows) {
  std::string out = "config,psc,tcc,rrcu,train_aee,holdout_aee\n";
  char buf[256];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%s,%d,%d,%d,%.6f,%.6f\n", r.name.c_str(), int(r.config.use_psc),
                  int(r.config.use_tcc), int(r.config.use_rrcu), r.train_aee, r.holdout_aee);
    out += buf;
  }
  return out;
}

inline std::string ablation_table(const std::vector<AblationRow>& rows) {
  std::string out;
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-10s %5s %5s %5s %12s %12s\n", "config", "PSC", "TCC", "RRCU",
                "train AEE", "holdout AEE");
  out += buf;
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%-10s %5s %5s %5s %12.4f %12.4f\n", r.name.c_str(),
                  r.config.use_psc ? "on" : "off", r.config.use_tcc ? "on" : "off",
                  r.config.use_rrcu ? "on" : "off", r.train_aee, r.holdout_aee);
    out += buf;
  }
  return out;
}

// ------------------------------------------------------------------- bench

struct BenchRow {
  int m = 0, n = 0, s = 1;
  long long flops = 0;
  double wall_ms = 0;
  double ssim_vs_naive = 1.0;
};

/// Smooth test feature: slow ramp plus low-frequency sinusoid, so that
/// neighbouring position rows are similar.
template <typename S>
RowMat<S> smooth_feature(int m, int n) {
  RowMat<S> f(m, n);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) {
      const double t = double(i) / m;
      f(i, j) = S(std::sin(2 * M_PI * (t + 0.07 * j)) + 0.5 * t * (j + 1));
    }
  return f;
}

inline std::vector<BenchRow> bench_litemul(const std::vector<std::pair<int, int>>& sizes,
                                           const std::vector<int>& factors, int trials) {
  if (sizes.empty()) throw std::invalid_argument("bench_litemul: empty size list");
  if (trials < 1) throw std::invalid_argument("bench_litemul: trials must be >= 1");
  std::vector<BenchRow> rows;
  for (const auto& [m, n] : sizes) {
    RowMat<double> f = smooth_feature<double>(m, n);
    FlopCounter naive_counter;
    RowMat<double> naive = attention_matmul(f, f, MatmulMode::position, naive_counter);
    Tensor<double> naive_t(1, m, m);
    naive_t.channel(0) = naive;
    for (int s : factors) {
      FlopCounter counter;
      RowMat<double> lite = lite_matmul(f, s, MatmulMode::position, counter);
      const long long flops = counter.flops;
      const auto t0 = std::chrono::steady_clock::now();
      for (int trial = 0; trial < trials; ++trial) {
        FlopCounter scratch;
        volatile double sink = lite_matmul(f, s, MatmulMode::position, scratch)(0, 0);
        (void)sink;
      }
      const auto t1 = std::chrono::steady_clock::now();
      Tensor<double> lite_t(1, m, m);
      lite_t.channel(0) = lite;
      BenchRow row;
      row.m = m;
      row.n = n;
      row.s = s;
      row.flops = flops;
      row.wall_ms = std::chrono::duration<double, std::milli>(t1 - t0).count() / trials;
      row.ssim_vs_naive = ssim(lite_t, naive_t);
      rows.push_back(row);
    }
  }
  return rows;
}

inline std::string bench_json_lines(const std::vector<BenchRow>& rows) {
  std::string out;
  char buf[256];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf,
                  "{\"op\":\"lite_matmul\",\"M\":%d,\"N\":%d,\"s\":%d,\"flops\":%lld,"
                  "\"wall_ms\":%.6f,\"ssim\":%.6f}\n",
                  r.m, r.n, r.s, r.flops, r.wall_ms, r.ssim_vs_naive);
    out += buf;
  }
  return out;
}

}  // namespace stcflow
