#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "stcflow/checkpoint.hpp"
#include "stcflow/network.hpp"

#include "grad_check.hpp"
#include "oracles.hpp"

#include <cstdio>
#include <filesystem>
#include <random>

using namespace stcflow;
using test::projection_weights;

namespace {

Tensor<double> rand_t(int c, int h, int w, uint32_t seed, double lo = -1, double hi = 1) {
  std::mt19937 rng(seed);
  return Tensor<double>::random_uniform(c, h, w, rng, lo, hi);
}

Tensor<float> rand_f(int c, int h, int w, uint32_t seed, float lo = 0, float hi = 1) {
  std::mt19937 rng(seed);
  return Tensor<float>::random_uniform(c, h, w, rng, lo, hi);
}

}  // namespace

TEST_CASE("warp") {
  SUBCASE("zero flow is the identity, bit-exact") {
    Tensor<double> f = rand_t(3, 5, 6, 1);
    Tape<double> tape;
    Var<double> out = ops::warp(constant(tape, f), constant(tape, Tensor<double>(2, 5, 6)));
    CHECK(bitwise_equal(*out.val, f));
  }
  SUBCASE("constant (1,0) flow on a linear-in-x field") {
    Tensor<double> f(1, 4, 6);
    for (int y = 0; y < 4; ++y)
      for (int x = 0; x < 6; ++x) f(0, y, x) = double(x);
    Tensor<double> flow(2, 4, 6);
    for (int y = 0; y < 4; ++y)
      for (int x = 0; x < 6; ++x) flow(0, y, x) = 1.0;
    Tape<double> tape;
    Var<double> out = ops::warp(constant(tape, f), constant(tape, flow));
    for (int y = 0; y < 4; ++y)
      for (int x = 0; x < 5; ++x) CHECK((*out.val)(0, y, x) == doctest::Approx(x + 1.0));
  }
  SUBCASE("random warp matches the loop oracle") {
    std::mt19937 rng(7);
    for (int trial = 0; trial < 30; ++trial) {
      Tensor<double> f = Tensor<double>::random_uniform(2, 6, 6, rng, -1, 1);
      Tensor<double> flow = Tensor<double>::random_uniform(2, 6, 6, rng, -3, 3);
      Tape<double> tape;
      Var<double> out = ops::warp(constant(tape, f), constant(tape, flow));
      CHECK(max_abs_diff(*out.val, test::oracle_warp(f, flow)) < 1e-6);
    }
  }
  SUBCASE("fully out-of-frame samples return zero") {
    Tensor<double> f = rand_t(1, 4, 4, 2);
    Tensor<double> flow = Tensor<double>::constant(2, 4, 4, 100.0);
    Tape<double> tape;
    Var<double> out = ops::warp(constant(tape, f), constant(tape, flow));
    CHECK(out.val->max_abs() == 0.0);
  }
  SUBCASE("gradients w.r.t. features and flow") {
    double err = test::grad_check(
        [&](Tape<double>&, const std::vector<Var<double>>& v) {
          return ops::weighted_sum_all(ops::warp(v[0], v[1]), projection_weights(2, 4, 4, 3));
        },
        {rand_t(2, 4, 4, 4), rand_t(2, 4, 4, 5, -1.3, 1.3)});
    CHECK(err < 1e-4);
  }
  SUBCASE("shape mismatch throws") {
    Tape<double> tape;
    CHECK_THROWS(ops::warp(constant(tape, rand_t(1, 4, 4, 6)),
                           constant(tape, Tensor<double>(2, 3, 4))));
  }
}

TEST_CASE("pad_input and crop") {
  SUBCASE("multiples of 64 pass through") {
    FramePair<float> pair{rand_f(3, 384, 448, 1), rand_f(3, 384, 448, 2)};
    auto [padded, rec] = pad_input(pair);
    CHECK(padded.frame1.height() == 384);
    CHECK(padded.frame1.width() == 448);
    CHECK(rec.height == 384);
  }
  SUBCASE("436x1024 pads to 448x1024 and crops back") {
    FramePair<float> pair{rand_f(3, 436, 1024, 3), rand_f(3, 436, 1024, 4)};
    auto [padded, rec] = pad_input(pair);
    CHECK(padded.frame1.height() == 448);
    CHECK(padded.frame1.width() == 1024);
    Tensor<float> flow(2, 448, 1024);
    Tensor<float> cropped = crop_flow(flow, rec);
    CHECK(cropped.height() == 436);
    CHECK(cropped.width() == 1024);
  }
  SUBCASE("100x130 pads to 128x192; payload preserved, border zero") {
    FramePair<float> pair{rand_f(3, 100, 130, 5), rand_f(3, 100, 130, 6)};
    auto [padded, rec] = pad_input(pair);
    CHECK(padded.frame1.height() == 128);
    CHECK(padded.frame1.width() == 192);
    CHECK(padded.frame1(0, 50, 60) == pair.frame1(0, 50, 60));
    CHECK(padded.frame1(0, 120, 10) == 0.0f);
    CHECK(padded.frame2(2, 10, 150) == 0.0f);
  }
  SUBCASE("too-small inputs are rejected") {
    FramePair<float> pair{rand_f(3, 32, 128, 7), rand_f(3, 32, 128, 8)};
    CHECK_THROWS(pad_input(pair));
  }
}

TEST_CASE("extract_pyramid stage geometry") {
  NetworkConfig cfg = toy_config(8);
  Model<float> model(cfg);
  SUBCASE("448x384 input gives the documented dyadic chain") {
    Tape<float> tape;
    Var<float> frame = constant(tape, rand_f(3, 384, 448, 10));
    auto stages = extract_pyramid(tape, frame, model);
    REQUIRE(stages.size() == 6);
    const int hs[6] = {192, 96, 48, 24, 12, 6};
    const int ws[6] = {224, 112, 56, 28, 14, 7};
    for (int k = 0; k < 6; ++k) {
      CHECK(stages[k].height() == hs[k]);
      CHECK(stages[k].width() == ws[k]);
      CHECK(stages[k].channels() == cfg.stage_ch(k + 1));
    }
  }
  SUBCASE("64x64 input reaches 1x1 at stage 6") {
    Tape<float> tape;
    auto stages = extract_pyramid(tape, constant(tape, rand_f(3, 64, 64, 11)), model);
    CHECK(stages[5].height() == 1);
    CHECK(stages[5].width() == 1);
  }
  SUBCASE("identical frames give identical pyramids") {
    Tensor<float> frame = rand_f(3, 64, 64, 12);
    Tape<float> tape;
    auto s1 = extract_pyramid(tape, constant(tape, frame), model);
    auto s2 = extract_pyramid(tape, constant(tape, frame), model);
    for (int k = 0; k < 6; ++k) CHECK(bitwise_equal(*s1[k].val, *s2[k].val));
  }
  SUBCASE("non-padded input is rejected") {
    Tape<float> tape;
    CHECK_THROWS(extract_pyramid(tape, constant(tape, rand_f(3, 60, 64, 13)), model));
  }
}

TEST_CASE("stcflow_forward shape contract at 448x384") {
  NetworkConfig cfg = toy_config(8);  // widths scaled down; shapes are width-independent
  Model<float> model(cfg);
  Tape<float> tape;
  ForwardResult<float> res =
      stcflow_forward(tape, rand_f(3, 384, 448, 20), rand_f(3, 384, 448, 21), model);
  REQUIRE(res.stage_flows.size() == 5);
  const int hs[5] = {6, 12, 24, 48, 96};
  const int ws[5] = {7, 14, 28, 56, 112};
  for (int i = 0; i < 5; ++i) {
    CHECK(res.stage_flows[i].channels() == 2);
    CHECK(res.stage_flows[i].height() == hs[i]);
    CHECK(res.stage_flows[i].width() == ws[i]);
  }
  CHECK(res.final_flow.channels() == 2);
  CHECK(res.final_flow.height() == 384);
  CHECK(res.final_flow.width() == 448);
  CHECK(res.final_flow.val->all_finite());
}

TEST_CASE("stcflow_forward is finite and deterministic at initialisation") {
  NetworkConfig cfg = toy_config(4);
  Model<float> model(cfg);
  Tensor<float> f1 = rand_f(3, 64, 64, 30), f2 = rand_f(3, 64, 64, 31);
  Tape<float> t1, t2;
  ForwardResult<float> a = stcflow_forward(t1, f1, f2, model);
  ForwardResult<float> b = stcflow_forward(t2, f1, f2, model);
  CHECK(a.final_flow.val->all_finite());
  CHECK(bitwise_equal(*a.final_flow.val, *b.final_flow.val));
  for (int i = 0; i < 5; ++i) CHECK(bitwise_equal(*a.stage_flows[i].val, *b.stage_flows[i].val));
}

TEST_CASE("every toggle combination runs and baseline matches Table-style identity") {
  for (bool psc : {false, true})
    for (bool tcc : {false, true})
      for (bool rrcu : {false, true}) {
        NetworkConfig cfg = toy_config(8);
        cfg.use_psc = psc;
        cfg.use_tcc = tcc;
        cfg.use_rrcu = rrcu;
        Model<float> model(cfg);
        Tape<float> tape;
        ForwardResult<float> res =
            stcflow_forward(tape, rand_f(3, 64, 64, 40), rand_f(3, 64, 64, 41), model);
        CHECK(res.final_flow.val->all_finite());
      }
}

TEST_CASE("zero-init context paths: full model equals baseline at initialisation") {
  // W_z zero everywhere means PSC/TCC-context/RRCU-residual paths are inert;
  // with identical extractor/decoder weights the full model must produce the
  // baseline's flows exactly, except for the upsampling path swap (RRCU's
  // deconv is bilinear-initialised, and so is the baseline's).
  NetworkConfig full = toy_config(4);
  NetworkConfig base = full;
  base.use_psc = false;
  base.use_rrcu = false;
  base.use_tcc = false;
  Model<float> mf(full), mb(base);
  // TCC at init: wc identity, wz zero -> cost path equals plain correlation
  Tensor<float> f1 = rand_f(3, 64, 64, 50), f2 = rand_f(3, 64, 64, 51);
  Tape<float> t1, t2;
  ForwardResult<float> rf = stcflow_forward(t1, f1, f2, mf);
  ForwardResult<float> rb = stcflow_forward(t2, f1, f2, mb);
  for (int i = 0; i < 5; ++i)
    CHECK(max_abs_diff(*rf.stage_flows[i].val, *rb.stage_flows[i].val) < 1e-6);
}

TEST_CASE("dead-path detector: gradient reaches every parameter") {
  NetworkConfig cfg = toy_config(8);
  Model<float> model(cfg);
  model.params().randomize(99, 0.05f);
  model.params().zero_grads();
  Tape<float> tape;
  ForwardResult<float> res = stcflow_forward(tape, rand_f(3, 64, 64, 60), rand_f(3, 64, 64, 61), model);
  // drive all outputs
  Var<float> loss = ops::squared_sum(res.final_flow);
  for (auto& sf : res.stage_flows) loss = ops::add(loss, ops::squared_sum(sf));
  backward(loss);
  for (const auto& e : model.params().entries()) {
    INFO("parameter: ", e->name);
    CHECK(e->grad->max_abs() > 0.0f);
  }
}

TEST_CASE("count_parameters") {
  NetworkConfig full;
  const long long n_full = count_parameters(full);
  CHECK(n_full >= 6'000'000);
  CHECK(n_full <= 12'000'000);
  NetworkConfig toy = toy_config(4);
  CHECK(count_parameters(toy) < 1'000'000);
  NetworkConfig base = full;
  base.use_psc = base.use_tcc = base.use_rrcu = false;
  CHECK(count_parameters(base) < n_full);
}

TEST_CASE("checkpoint round trip") {
  const std::string path =
      (std::filesystem::temp_directory_path() / "stcflow_ckpt_test.bin").string();
  NetworkConfig cfg = toy_config(8);
  cfg.lite_factor = 1;
  Model<float> model(cfg);
  model.params().randomize(123, 0.3f);
  save_checkpoint(model, path);
  auto loaded = load_checkpoint<float>(path);
  CHECK(loaded->config().lite_factor == 1);
  CHECK(loaded->config().toy_scale == 8);
  for (const auto& e : model.params().entries()) {
    ParamEntry<float>* le = loaded->params().find(e->name);
    REQUIRE(le != nullptr);
    CHECK(bitwise_equal(*e->value, *le->value));
  }
  // corrupt magic -> incompatible
  {
    std::FILE* f = std::fopen(path.c_str(), "r+b");
    std::fputc('X', f);
    std::fclose(f);
  }
  CHECK_THROWS(load_checkpoint<float>(path));
  std::remove(path.c_str());
}
