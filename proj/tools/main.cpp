// Batch command-line driver: train / infer / eval / bench / selftest.
// Exit codes: 0 success, 1 usage or config error, 2 numerical failure.

#include "stcflow/attention.hpp"
#include "stcflow/checkpoint.hpp"
#include "stcflow/flow_io.hpp"
#include "stcflow/image_io.hpp"
#include "stcflow/metrics.hpp"
#include "stcflow/train.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace stcflow;

namespace {

struct DataConfig {
  int count = 8;
  int holdout_count = 0;
  int height = 64;
  int width = 64;
  SyntheticSpec spec;
};

struct RunConfig {
  NetworkConfig network;
  LossConfig loss;
  DataConfig data;
  TrainOptions train_opt;
  uint64_t seed = 42;
};

void reject_unknown(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  for (const auto& [key, value] : j.items())
    if (!allowed.count(key))
      throw std::invalid_argument("config: unknown key '" + key + "' in " + where);
}

RunConfig parse_run_config(const json& j) {
  RunConfig cfg;
  reject_unknown(j, {"network", "loss", "data", "train", "seed"}, "root");
  if (j.contains("network")) {
    reject_unknown(j.at("network"),
                   {"stage_channels", "decoder_widths", "max_displacement", "lite_factor",
                    "use_psc", "use_tcc", "use_rrcu", "toy_scale"},
                   "network");
    cfg.network = config_from_json(j.at("network"));
  }
  if (j.contains("loss")) {
    const json& l = j.at("loss");
    reject_unknown(l, {"mode", "epsilon", "q", "stage_weights"}, "loss");
    if (l.contains("mode")) {
      const std::string m = l.at("mode");
      if (m == "l2") cfg.loss.mode = LossMode::l2;
      else if (m == "charbonnier") cfg.loss.mode = LossMode::charbonnier;
      else throw std::invalid_argument("config: loss.mode must be 'l2' or 'charbonnier'");
    }
    if (l.contains("epsilon")) l.at("epsilon").get_to(cfg.loss.epsilon);
    if (l.contains("q")) l.at("q").get_to(cfg.loss.q);
    if (l.contains("stage_weights")) l.at("stage_weights").get_to(cfg.loss.stage_weights);
    cfg.loss.validate();
  }
  if (j.contains("data")) {
    const json& d = j.at("data");
    reject_unknown(d,
                   {"count", "holdout_count", "height", "width", "max_flow", "affine_range",
                    "sinusoid_range", "noise_sigma"},
                   "data");
    if (d.contains("count")) d.at("count").get_to(cfg.data.count);
    if (d.contains("holdout_count")) d.at("holdout_count").get_to(cfg.data.holdout_count);
    if (d.contains("height")) d.at("height").get_to(cfg.data.height);
    if (d.contains("width")) d.at("width").get_to(cfg.data.width);
    if (d.contains("max_flow")) d.at("max_flow").get_to(cfg.data.spec.max_flow);
    if (d.contains("affine_range")) d.at("affine_range").get_to(cfg.data.spec.affine_range);
    if (d.contains("sinusoid_range")) d.at("sinusoid_range").get_to(cfg.data.spec.sinusoid_range);
    if (d.contains("noise_sigma")) d.at("noise_sigma").get_to(cfg.data.spec.noise_sigma);
  }
  if (j.contains("train")) {
    const json& t = j.at("train");
    reject_unknown(t, {"steps", "base_lr", "halve_fraction", "flip_augment"}, "train");
    if (t.contains("steps")) t.at("steps").get_to(cfg.train_opt.steps);
    if (t.contains("base_lr")) t.at("base_lr").get_to(cfg.train_opt.schedule.base_lr);
    if (t.contains("halve_fraction"))
      t.at("halve_fraction").get_to(cfg.train_opt.schedule.halve_fraction);
    if (t.contains("flip_augment")) t.at("flip_augment").get_to(cfg.train_opt.flip_augment);
  }
  if (j.contains("seed")) j.at("seed").get_to(cfg.seed);
  return cfg;
}

json run_config_to_json(const RunConfig& cfg) {
  json j;
  j["network"] = config_to_json(cfg.network);
  j["loss"] = {{"mode", cfg.loss.mode == LossMode::l2 ? "l2" : "charbonnier"},
               {"epsilon", cfg.loss.epsilon},
               {"q", cfg.loss.q},
               {"stage_weights", cfg.loss.stage_weights}};
  j["data"] = {{"count", cfg.data.count},
               {"holdout_count", cfg.data.holdout_count},
               {"height", cfg.data.height},
               {"width", cfg.data.width},
               {"max_flow", cfg.data.spec.max_flow},
               {"affine_range", cfg.data.spec.affine_range},
               {"sinusoid_range", cfg.data.spec.sinusoid_range},
               {"noise_sigma", cfg.data.spec.noise_sigma}};
  j["train"] = {{"steps", cfg.train_opt.steps},
                {"base_lr", cfg.train_opt.schedule.base_lr},
                {"halve_fraction", cfg.train_opt.schedule.halve_fraction},
                {"flip_augment", cfg.train_opt.flip_augment}};
  j["seed"] = cfg.seed;
  return j;
}

int cmd_train(const std::string& config_path, const std::string& out_dir, int64_t seed_override,
              int steps_override) {
  RunConfig cfg;
  if (!config_path.empty()) {
    std::ifstream in(config_path);
    if (!in) {
      std::fprintf(stderr, "error: cannot open config %s\n", config_path.c_str());
      return 1;
    }
    cfg = parse_run_config(json::parse(in));
  }
  if (seed_override >= 0) cfg.seed = uint64_t(seed_override);
  if (steps_override > 0) cfg.train_opt.steps = steps_override;
  cfg.network.validate();

  fs::create_directories(out_dir);
  std::ofstream cfg_out(fs::path(out_dir) / "config.json");
  cfg_out << run_config_to_json(cfg).dump(2) << "\n";
  cfg_out.close();

  auto data = generate_synthetic(cfg.data.count, cfg.data.height, cfg.data.width, cfg.seed,
                                 cfg.data.spec);
  Model<float> model(cfg.network);
  model.reinitialize(cfg.seed);

  std::vector<StepLog> log;
  try {
    log = train(model, cfg.loss, data, cfg.train_opt);
  } catch (const DivergenceError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }

  std::ofstream log_out(fs::path(out_dir) / "train_log.jsonl");
  for (const auto& entry : log) {
    char buf[512];
    std::snprintf(buf, sizeof buf,
                  "{\"step\":%d,\"total_loss\":%.9g,\"stage_losses\":[%.9g,%.9g,%.9g,%.9g,%.9g],"
                  "\"lr\":%.9g}\n",
                  entry.step, entry.total_loss, entry.stage_losses[0], entry.stage_losses[1],
                  entry.stage_losses[2], entry.stage_losses[3], entry.stage_losses[4], entry.lr);
    log_out << buf;
  }
  log_out.close();

  save_checkpoint(model, (fs::path(out_dir) / "checkpoint.bin").string());
  const double train_aee = evaluate_mean_aee(model, data);
  std::ofstream aee_out(fs::path(out_dir) / "train_aee.txt");
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f\n", train_aee);
  aee_out << buf;
  std::printf("trained %d steps on %d samples; final loss %.6g; train AEE %.4f px\n",
              cfg.train_opt.steps, cfg.data.count, log.back().total_loss, train_aee);
  std::printf("checkpoint: %s\n", (fs::path(out_dir) / "checkpoint.bin").c_str());
  return 0;
}

int cmd_infer(const std::string& ckpt, const std::string& frame1_path,
              const std::string& frame2_path, const std::string& out_flo,
              const std::string& out_viz) {
  std::unique_ptr<Model<float>> model;
  try {
    model = load_checkpoint<float>(ckpt);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  Tensor<float> f1 = read_image(frame1_path);
  Tensor<float> f2 = read_image(frame2_path);
  if (!f1.same_shape(f2)) {
    std::fprintf(stderr, "error: frames differ in size\n");
    return 1;
  }
  auto [pair, rec] = pad_input(FramePair<float>{f1, f2});
  Tape<float> tape;
  ForwardResult<float> res = stcflow_forward(tape, pair.frame1, pair.frame2, *model);
  Tensor<float> flow = crop_flow(*res.final_flow.val, rec);
  if (!flow.all_finite()) {
    std::fprintf(stderr, "error: non-finite flow output\n");
    return 2;
  }
  write_flo(flow, out_flo);
  std::printf("wrote %s (%dx%d)\n", out_flo.c_str(), flow.width(), flow.height());
  if (!out_viz.empty()) {
    write_png(out_viz, flow_to_color(flow));
    std::printf("wrote %s\n", out_viz.c_str());
  }
  return 0;
}

int cmd_eval(const std::string& pred_dir, const std::string& gt_dir) {
  auto list_flo = [](const std::string& dir) {
    std::set<std::string> names;
    for (const auto& entry : fs::directory_iterator(dir))
      if (entry.path().extension() == ".flo") names.insert(entry.path().filename().string());
    return names;
  };
  if (!fs::is_directory(pred_dir) || !fs::is_directory(gt_dir)) {
    std::fprintf(stderr, "error: --pred-dir and --gt-dir must be directories\n");
    return 1;
  }
  const auto pred_names = list_flo(pred_dir);
  const auto gt_names = list_flo(gt_dir);
  if (pred_names.empty() || pred_names != gt_names) {
    std::fprintf(stderr, "error: prediction and ground-truth file sets do not match\n");
    return 1;
  }
  std::printf("%-32s %10s %10s\n", "file", "AEE", "Fl-all");
  double sum_aee = 0, sum_fl = 0;
  for (const auto& name : pred_names) {
    FlowField pred = read_flo((fs::path(pred_dir) / name).string());
    FlowField gt = read_flo((fs::path(gt_dir) / name).string());
    EvalReport r = evaluate_flow(pred, gt);
    std::printf("%-32s %10.4f %9.2f%%\n", name.c_str(), r.aee, 100.0 * r.fl_all);
    sum_aee += r.aee;
    sum_fl += r.fl_all;
  }
  const double n = double(pred_names.size());
  std::printf("%-32s %10.4f %9.2f%%\n", "mean", sum_aee / n, 100.0 * sum_fl / n);
  return 0;
}

int cmd_bench(const std::string& sizes_str, const std::string& factors_str, int trials,
              const std::string& out_path) {
  std::vector<std::pair<int, int>> sizes;
  std::vector<int> factors;
  try {
    for (size_t pos = 0; pos < sizes_str.size();) {
      size_t comma = sizes_str.find(',', pos);
      const std::string tok = sizes_str.substr(pos, comma == std::string::npos ? comma : comma - pos);
      const size_t xpos = tok.find('x');
      if (xpos == std::string::npos) throw std::invalid_argument("size must be MxN");
      sizes.emplace_back(std::stoi(tok.substr(0, xpos)), std::stoi(tok.substr(xpos + 1)));
      if (comma == std::string::npos) break;
      pos = comma + 1;
    }
    for (size_t pos = 0; pos < factors_str.size();) {
      size_t comma = factors_str.find(',', pos);
      factors.push_back(
          std::stoi(factors_str.substr(pos, comma == std::string::npos ? comma : comma - pos)));
      if (comma == std::string::npos) break;
      pos = comma + 1;
    }
    if (sizes.empty() || factors.empty()) throw std::invalid_argument("empty size/factor list");
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  std::vector<BenchRow> rows;
  try {
    rows = bench_litemul(sizes, factors, trials);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  const std::string report = bench_json_lines(rows);
  if (!out_path.empty()) {
    std::ofstream out(out_path);
    out << report;
  }
  std::fputs(report.c_str(), stdout);
  return 0;
}

int cmd_selftest() {
  int failures = 0;
  auto report = [&](const std::string& name, bool ok) {
    std::printf("%s %s\n", ok ? "PASS" : "FAIL", name.c_str());
    if (!ok) ++failures;
  };
  std::mt19937 rng(1234);

  {  // .flo round trip
    FlowField f = Tensor<float>::random_uniform(2, 6, 5, rng, -9, 9);
    const std::string path = (fs::temp_directory_path() / "stcflow_selftest.flo").string();
    write_flo(f, path);
    const bool ok = bitwise_equal(read_flo(path), f);
    std::remove(path.c_str());
    report("flo round-trip bit-exact", ok);
  }
  {  // warp identity
    Tensor<float> f = Tensor<float>::random_uniform(3, 8, 8, rng, -1, 1);
    Tape<float> tape;
    Var<float> out = ops::warp(constant(tape, f), constant(tape, Tensor<float>(2, 8, 8)));
    report("warp(F,0) == F bit-exact", bitwise_equal(*out.val, f));
  }
  {  // lite s=1 bit-identical; flop ratios
    RowMat<double> f = smooth_feature<double>(32, 8);
    FlopCounter c1, cl;
    RowMat<double> naive = attention_matmul(f, f, MatmulMode::position, c1);
    RowMat<double> lite = lite_matmul(f, 1, MatmulMode::position, cl);
    report("lite_matmul s=1 bit-identical", (naive - lite).cwiseAbs().maxCoeff() == 0.0);
    bool ratios_ok = true;
    for (int s : {2, 4}) {
      FlopCounter cs;
      lite_matmul(f, s, MatmulMode::position, cs);
      ratios_ok = ratios_ok && (cs.flops * s == cl.flops);
    }
    report("lite_matmul flop ratio 1/s", ratios_ok);
  }
  {  // attention normalisation
    bool ok = true;
    for (int trial = 0; trial < 100; ++trial) {
      Tensor<float> logits = Tensor<float>::random_uniform(1, 8, 8, rng, -6, 6);
      Tape<float> tape;
      Var<float> a = ops::softmax_rows(constant(tape, logits));
      for (int i = 0; i < 8; ++i)
        ok = ok && std::abs(a.val->channel(0).row(i).sum() - 1.0f) < 1e-5f;
    }
    report("attention rows normalise to 1", ok);
  }
  {  // zero-init identities
    ParamSet<float> ps;
    auto nl = NonLocalParams<float>::create(ps, "nl", 4);
    auto gc = GcParams<float>::create(ps, "gc", 4);
    auto psc = PscStageParams<float>::create(ps, "psc", 4, 0);
    ps.initialize(5);
    Tensor<float> x = Tensor<float>::random_uniform(4, 6, 6, rng, -1, 1);
    Tape<float> tape;
    bool ok = bitwise_equal(*non_local_block(tape, constant(tape, x), nl).val, x);
    ok = ok && bitwise_equal(*global_context_block(tape, constant(tape, x), gc).val, x);
    auto [pout, pstate] = psc_forward<float>(tape, constant(tape, x), nullptr, psc, 2);
    ok = ok && bitwise_equal(*pout.val, x);
    report("zero-init context blocks are identities", ok);
  }
  {  // TCC degenerates to the plain cost volume at init
    ParamSet<float> ps;
    auto tcc = TccStageParams<float>::create(ps, "tcc", 4, 2);
    ps.initialize(6);
    Tensor<float> f1 = Tensor<float>::random_uniform(4, 6, 6, rng, -1, 1);
    Tensor<float> f2 = Tensor<float>::random_uniform(4, 6, 6, rng, -1, 1);
    Tape<float> tape;
    Var<float> z = tcc_forward(tape, constant(tape, f1), constant(tape, f2), tcc, 2, 2);
    Var<float> corr = ops::correlate(constant(tape, f1), constant(tape, f2), 2);
    report("zero-init TCC equals naive correlation", max_abs_diff(*z.val, *corr.val) < 1e-6f);
  }
  {  // shape contract
    NetworkConfig cfg = toy_config(8);
    Model<float> model(cfg);
    Tape<float> tape;
    ForwardResult<float> res = stcflow_forward(
        tape, Tensor<float>::random_uniform(3, 384, 448, rng, 0, 1),
        Tensor<float>::random_uniform(3, 384, 448, rng, 0, 1), model);
    bool ok = res.final_flow.height() == 384 && res.final_flow.width() == 448;
    const int hs[5] = {6, 12, 24, 48, 96};
    for (int i = 0; i < 5; ++i) ok = ok && res.stage_flows[i].height() == hs[i];
    report("448x384 stage-flow shape contract", ok);
  }
  {  // parameter counts
    NetworkConfig full;
    const long long n = count_parameters(full);
    report("default parameter count in [6M,12M]", n >= 6'000'000 && n <= 12'000'000);
    report("toy parameter count < 1M", count_parameters(toy_config(4)) < 1'000'000);
  }
  {  // training determinism
    NetworkConfig cfg = toy_config(8);
    SyntheticSpec spec;
    auto data = generate_synthetic(2, 64, 64, 77, spec);
    LossConfig loss;
    TrainOptions opt;
    opt.steps = 5;
    Model<float> m1(cfg), m2(cfg);
    m1.reinitialize(9);
    m2.reinitialize(9);
    auto l1 = train(m1, loss, data, opt);
    auto l2 = train(m2, loss, data, opt);
    bool ok = true;
    for (int i = 0; i < 5; ++i) ok = ok && l1[i].total_loss == l2[i].total_loss;
    report("training deterministic under fixed seed", ok);
  }
  return failures == 0 ? 0 : 2;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"STC-Flow: spatio-temporal context optical flow (desk-scale)"};
  app.require_subcommand(1);

  auto* train_cmd = app.add_subcommand("train", "Train on generated synthetic data");
  std::string config_path, out_dir = "run";
  int64_t seed_override = -1;
  int steps_override = 0;
  train_cmd->add_option("--config", config_path, "JSON run configuration");
  train_cmd->add_option("--out", out_dir, "Output directory");
  train_cmd->add_option("--seed", seed_override, "Override config seed");
  train_cmd->add_option("--steps", steps_override, "Override step count");

  auto* infer_cmd = app.add_subcommand("infer", "Estimate flow for a frame pair");
  std::string ckpt, frame1, frame2, out_flo = "flow.flo", out_viz;
  infer_cmd->add_option("--ckpt", ckpt, "Checkpoint path")->required();
  infer_cmd->add_option("--frame1", frame1, "First frame (PNG/PPM)")->required();
  infer_cmd->add_option("--frame2", frame2, "Second frame (PNG/PPM)")->required();
  infer_cmd->add_option("--out-flo", out_flo, "Output .flo path");
  infer_cmd->add_option("--out-viz", out_viz, "Optional colour PNG");

  auto* eval_cmd = app.add_subcommand("eval", "AEE / Fl-all over matching .flo directories");
  std::string pred_dir, gt_dir;
  eval_cmd->add_option("--pred-dir", pred_dir, "Predicted flows")->required();
  eval_cmd->add_option("--gt-dir", gt_dir, "Ground-truth flows")->required();

  auto* bench_cmd = app.add_subcommand("bench", "Lite matrix-multiplication study");
  std::string sizes = "64x16,256x32", factors = "1,2,4", bench_out;
  int trials = 5;
  bench_cmd->add_option("--sizes", sizes, "Comma list of MxN sizes");
  bench_cmd->add_option("--factors", factors, "Comma list of polyphase factors");
  bench_cmd->add_option("--trials", trials, "Timing repetitions");
  bench_cmd->add_option("--out", bench_out, "JSON-lines report path");

  auto* selftest_cmd = app.add_subcommand("selftest", "Run the invariant suite");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;  // 0 for --help, 1 for usage errors
  }

  try {
    if (train_cmd->parsed()) return cmd_train(config_path, out_dir, seed_override, steps_override);
    if (infer_cmd->parsed()) return cmd_infer(ckpt, frame1, frame2, out_flo, out_viz);
    if (eval_cmd->parsed()) return cmd_eval(pred_dir, gt_dir);
    if (bench_cmd->parsed()) return cmd_bench(sizes, factors, trials, bench_out);
    if (selftest_cmd->parsed()) return cmd_selftest();
  } catch (const DivergenceError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 1;
}
