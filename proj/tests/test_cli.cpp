#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "stcflow/flow_io.hpp"
#include "stcflow/image_io.hpp"
#include "stcflow/synthetic.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace fs = std::filesystem;
using namespace stcflow;

namespace {

#ifndef STCFLOW_CLI_PATH
#error "STCFLOW_CLI_PATH must be defined by the build"
#endif

int run_cli(const std::string& args) {
  const std::string cmd = std::string(STCFLOW_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  const int rc = std::system(cmd.c_str());
  return WEXITSTATUS(rc);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path fresh_dir(const std::string& name) {
  fs::path dir = fs::temp_directory_path() / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

void write_toy_config(const fs::path& path, int steps, int count = 2) {
  std::ofstream out(path);
  out << R"({
  "network": {"toy_scale": 8},
  "data": {"count": )"
      << count << R"(, "height": 64, "width": 64, "max_flow": 4.0},
  "train": {"steps": )"
      << steps << R"(, "base_lr": 0.0003},
  "seed": 7
})";
}

}  // namespace

TEST_CASE("cli train writes checkpoint, log and resolved config") {
  fs::path dir = fresh_dir("stcflow_cli_train");
  write_toy_config(dir / "cfg.json", 10);
  const int rc = run_cli("train --config " + (dir / "cfg.json").string() + " --out " +
                         (dir / "run").string());
  CHECK(rc == 0);
  CHECK(fs::exists(dir / "run" / "checkpoint.bin"));
  CHECK(fs::exists(dir / "run" / "config.json"));
  const std::string log = slurp(dir / "run" / "train_log.jsonl");
  CHECK(std::count(log.begin(), log.end(), '\n') == 10);
  CHECK(log.find("\"step\":0") != std::string::npos);
  fs::remove_all(dir);
}

TEST_CASE("cli train is byte-deterministic under a fixed seed") {
  fs::path dir = fresh_dir("stcflow_cli_det");
  write_toy_config(dir / "cfg.json", 8);
  CHECK(run_cli("train --config " + (dir / "cfg.json").string() + " --out " +
                (dir / "a").string()) == 0);
  CHECK(run_cli("train --config " + (dir / "cfg.json").string() + " --out " +
                (dir / "b").string()) == 0);
  CHECK(slurp(dir / "a" / "train_log.jsonl") == slurp(dir / "b" / "train_log.jsonl"));
  CHECK(slurp(dir / "a" / "checkpoint.bin") == slurp(dir / "b" / "checkpoint.bin"));
  fs::remove_all(dir);
}

TEST_CASE("cli rejects configs with unknown keys") {
  fs::path dir = fresh_dir("stcflow_cli_badcfg");
  {
    std::ofstream out(dir / "bad.json");
    out << R"({"network": {"toy_scale": 8}, "mystery_knob": 3})";
  }
  CHECK(run_cli("train --config " + (dir / "bad.json").string() + " --out " +
                (dir / "run").string()) == 1);
  fs::remove_all(dir);
}

TEST_CASE("cli infer round-trips through images, padding and flo output") {
  fs::path dir = fresh_dir("stcflow_cli_infer");
  write_toy_config(dir / "cfg.json", 2);
  REQUIRE(run_cli("train --config " + (dir / "cfg.json").string() + " --out " +
                  (dir / "run").string()) == 0);

  // non-multiple-of-64 frames exercise pad + crop
  SyntheticSpec spec;
  auto samples = generate_synthetic(1, 64, 128, 3, spec);
  Tensor<float> f1(3, 100, 130), f2(3, 100, 130);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < 100; ++y)
      for (int x = 0; x < 130; ++x) {
        f1(c, y, x) = samples[0].frame1(c, y % 64, x % 128);
        f2(c, y, x) = samples[0].frame2(c, y % 64, x % 128);
      }
  write_png((dir / "f1.png").string(), f1);
  write_ppm((dir / "f2.ppm").string(), f2);

  const int rc = run_cli("infer --ckpt " + (dir / "run" / "checkpoint.bin").string() +
                         " --frame1 " + (dir / "f1.png").string() + " --frame2 " +
                         (dir / "f2.ppm").string() + " --out-flo " + (dir / "out.flo").string() +
                         " --out-viz " + (dir / "viz.png").string());
  CHECK(rc == 0);
  FlowField flow = read_flo((dir / "out.flo").string());
  CHECK(flow.height() == 100);
  CHECK(flow.width() == 130);
  CHECK(fs::exists(dir / "viz.png"));
  Tensor<float> viz = read_image((dir / "viz.png").string());
  CHECK(viz.height() == 100);
  CHECK(viz.width() == 130);
  fs::remove_all(dir);
}

TEST_CASE("cli infer fails cleanly on a missing checkpoint") {
  fs::path dir = fresh_dir("stcflow_cli_nockpt");
  const int rc = run_cli("infer --ckpt " + (dir / "nope.bin").string() + " --frame1 a --frame2 b" +
                         " --out-flo " + (dir / "out.flo").string());
  CHECK(rc == 1);
  CHECK(!fs::exists(dir / "out.flo"));
  fs::remove_all(dir);
}

TEST_CASE("cli eval: identical directories score zero; mismatched sets fail") {
  fs::path dir = fresh_dir("stcflow_cli_eval");
  fs::create_directories(dir / "pred");
  fs::create_directories(dir / "gt");
  SyntheticSpec spec;
  auto samples = generate_synthetic(2, 64, 64, 5, spec);
  for (int i = 0; i < 2; ++i) {
    const std::string name = "s" + std::to_string(i) + ".flo";
    write_flo(samples[i].gt_flow, (dir / "pred" / name).string());
    write_flo(samples[i].gt_flow, (dir / "gt" / name).string());
  }
  const std::string cmd = std::string(STCFLOW_CLI_PATH) + " eval --pred-dir " +
                          (dir / "pred").string() + " --gt-dir " + (dir / "gt").string() + " > " +
                          (dir / "eval.txt").string() + " 2>&1";
  CHECK(WEXITSTATUS(std::system(cmd.c_str())) == 0);
  const std::string out = slurp(dir / "eval.txt");
  CHECK(out.find("mean") != std::string::npos);
  CHECK(out.find("0.0000") != std::string::npos);

  write_flo(samples[0].gt_flow, (dir / "pred" / "extra.flo").string());
  CHECK(run_cli("eval --pred-dir " + (dir / "pred").string() + " --gt-dir " +
                (dir / "gt").string()) == 1);
  fs::remove_all(dir);
}

TEST_CASE("cli eval matches the metric oracles on a known offset") {
  fs::path dir = fresh_dir("stcflow_cli_eval_offset");
  fs::create_directories(dir / "pred");
  fs::create_directories(dir / "gt");
  SyntheticSpec spec;
  auto samples = generate_synthetic(1, 64, 64, 6, spec);
  FlowField pred = samples[0].gt_flow;
  for (int y = 0; y < 64; ++y)
    for (int x = 0; x < 64; ++x) {
      pred(0, y, x) += 3.0f;  // uniform (3,4): AEE 5, Fl-all depends on gt magnitude
      pred(1, y, x) += 4.0f;
    }
  write_flo(pred, (dir / "pred" / "a.flo").string());
  write_flo(samples[0].gt_flow, (dir / "gt" / "a.flo").string());
  const std::string cmd = std::string(STCFLOW_CLI_PATH) + " eval --pred-dir " +
                          (dir / "pred").string() + " --gt-dir " + (dir / "gt").string() + " > " +
                          (dir / "eval.txt").string() + " 2>&1";
  REQUIRE(WEXITSTATUS(std::system(cmd.c_str())) == 0);
  const std::string out = slurp(dir / "eval.txt");
  CHECK(out.find("5.0000") != std::string::npos);
  // oracle: every pixel has error 5 > 3px and > 5% of |gt| <= 6px -> Fl-all 100%
  CHECK(out.find("100.00%") != std::string::npos);
  fs::remove_all(dir);
}

TEST_CASE("cli usage errors exit with code 1, help with 0") {
  CHECK(run_cli("infer") == 1);          // missing required options
  CHECK(run_cli("no-such-command") == 1);
  CHECK(run_cli("--help") == 0);
}

TEST_CASE("cli bench reports flops and ssim per factor") {
  fs::path dir = fresh_dir("stcflow_cli_bench");
  const int rc = run_cli("bench --sizes 32x8 --factors 1,2,4 --trials 2 --out " +
                         (dir / "bench.jsonl").string());
  CHECK(rc == 0);
  const std::string report = slurp(dir / "bench.jsonl");
  CHECK(std::count(report.begin(), report.end(), '\n') == 3);
  CHECK(report.find("\"s\":1") != std::string::npos);
  CHECK(report.find("\"s\":4") != std::string::npos);
  CHECK(run_cli("bench --sizes \"\" --factors 1") == 1);
  fs::remove_all(dir);
}

TEST_CASE("cli selftest passes on a fresh build") {
  CHECK(run_cli("selftest") == 0);
}
