#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "stcflow/ops.hpp"

#include "grad_check.hpp"
#include "oracles.hpp"

#include <random>

using namespace stcflow;
using test::grad_check;
using test::projection_weights;

namespace {

Tensor<double> rand_t(int c, int h, int w, uint32_t seed, double lo = -1, double hi = 1) {
  std::mt19937 rng(seed);
  return Tensor<double>::random_uniform(c, h, w, rng, lo, hi);
}

}  // namespace

TEST_CASE("add/sub/scale/leaky_relu gradients") {
  auto wts = projection_weights(3, 4, 5, 7);
  double err = grad_check(
      [&](Tape<double>&, const std::vector<Var<double>>& v) {
        Var<double> y = ops::add(v[0], ops::scale(v[1], 1.7));
        y = ops::leaky_relu(ops::sub(y, v[2]), 0.1);
        return ops::weighted_sum_all(y, wts);
      },
      {rand_t(3, 4, 5, 1), rand_t(3, 4, 5, 2), rand_t(3, 4, 5, 3)});
  CHECK(err < 1e-6);
}

TEST_CASE("matmul matches loop oracle and differentiates") {
  RowMat<double> a = rand_t(1, 6, 5, 11).channel(0);
  RowMat<double> b = rand_t(1, 5, 7, 12).channel(0);
  Tape<double> tape;
  Tensor<double> at(1, 6, 5), bt(1, 5, 7);
  at.channel(0) = a;
  bt.channel(0) = b;
  FlopCounter counter;
  Var<double> y = ops::matmul(constant(tape, at), constant(tape, bt), false, false, &counter);
  RowMat<double> expect = test::oracle_matmul(a, b);
  CHECK((y.val->channel(0) - expect).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(counter.flops == 2 * 6 * 7 * 5);

  for (bool ta : {false, true})
    for (bool tb : {false, true}) {
      auto wts = projection_weights(1, 6, 7, 5);
      double err = grad_check(
          [&](Tape<double>&, const std::vector<Var<double>>& v) {
            return ops::weighted_sum_all(ops::matmul(v[0], v[1], ta, tb), wts);
          },
          {ta ? rand_t(1, 5, 6, 21) : rand_t(1, 6, 5, 21),
           tb ? rand_t(1, 7, 5, 22) : rand_t(1, 5, 7, 22)});
      CHECK(err < 1e-6);
    }
}

TEST_CASE("softmax rows sums to one and differentiates") {
  Tensor<double> x = rand_t(1, 5, 9, 31, -3, 3);
  Tape<double> tape;
  Var<double> y = ops::softmax_rows(constant(tape, x));
  for (int i = 0; i < 5; ++i) CHECK(y.val->channel(0).row(i).sum() == doctest::Approx(1.0).epsilon(1e-10));
  auto wts = projection_weights(1, 5, 9, 6);
  double err = grad_check(
      [&](Tape<double>&, const std::vector<Var<double>>& v) {
        return ops::weighted_sum_all(ops::softmax_rows(v[0]), wts);
      },
      {x});
  CHECK(err < 1e-6);
}

TEST_CASE("softmax channels normalises every position") {
  Tensor<double> x = rand_t(7, 3, 4, 33, -2, 2);
  Tape<double> tape;
  Var<double> y = ops::softmax_channels(constant(tape, x));
  for (int py = 0; py < 3; ++py)
    for (int px = 0; px < 4; ++px) {
      double s = 0;
      for (int c = 0; c < 7; ++c) s += (*y.val)(c, py, px);
      CHECK(s == doctest::Approx(1.0).epsilon(1e-10));
    }
  auto wts = projection_weights(7, 3, 4, 8);
  double err = grad_check(
      [&](Tape<double>&, const std::vector<Var<double>>& v) {
        return ops::weighted_sum_all(ops::softmax_channels(v[0]), wts);
      },
      {x});
  CHECK(err < 1e-6);
}

TEST_CASE("conv2d gradient (stride 1 and 2, with bias)") {
  for (int stride : {1, 2}) {
    auto wts = projection_weights(4, stride == 1 ? 5 : 3, stride == 1 ? 6 : 3, 9);
    double err = grad_check(
        [&](Tape<double>&, const std::vector<Var<double>>& v) {
          return ops::weighted_sum_all(ops::conv2d(v[0], v[1], v[2], 3, stride, 1), wts);
        },
        {rand_t(3, 5, 6, 41), rand_t(4, 3, 9, 42), rand_t(4, 1, 1, 43)});
    CHECK(err < 1e-6);
  }
}

TEST_CASE("conv_transpose2d doubles size and differentiates") {
  Tape<double> tape;
  Tensor<double> x = rand_t(2, 3, 4, 51);
  Tensor<double> w = rand_t(16, 2, 3, 52);
  Tensor<double> b = rand_t(3, 1, 1, 53);
  Var<double> y =
      ops::conv_transpose2d(constant(tape, x), constant(tape, w), constant(tape, b), 4, 2, 1);
  CHECK(y.channels() == 3);
  CHECK(y.height() == 6);
  CHECK(y.width() == 8);
  auto wts = projection_weights(3, 6, 8, 10);
  double err = grad_check(
      [&](Tape<double>&, const std::vector<Var<double>>& v) {
        return ops::weighted_sum_all(ops::conv_transpose2d(v[0], v[1], v[2], 4, 2, 1), wts);
      },
      {x, w, b});
  CHECK(err < 1e-6);
}

TEST_CASE("pooling, upsampling and pixel shuffle") {
  SUBCASE("max_pool2 gradient") {
    double err = grad_check(
        [&](Tape<double>&, const std::vector<Var<double>>& v) {
          return ops::weighted_sum_all(ops::max_pool2(v[0]), projection_weights(3, 2, 3, 11));
        },
        {rand_t(3, 4, 6, 61)});
    CHECK(err < 1e-6);
  }
  SUBCASE("avg_pool2 keeps constants and differentiates") {
    Tape<double> tape;
    Tensor<double> c = Tensor<double>::constant(2, 4, 4, 0.37);
    Var<double> y = ops::avg_pool2(constant(tape, c));
    CHECK(bitwise_equal(*y.val, Tensor<double>::constant(2, 2, 2, 0.37)));
    double err = grad_check(
        [&](Tape<double>&, const std::vector<Var<double>>& v) {
          return ops::weighted_sum_all(ops::avg_pool2(v[0]), projection_weights(2, 2, 2, 12));
        },
        {rand_t(2, 4, 4, 62)});
    CHECK(err < 1e-6);
  }
  SUBCASE("bilinear_upsample2 gradient") {
    double err = grad_check(
        [&](Tape<double>&, const std::vector<Var<double>>& v) {
          return ops::weighted_sum_all(ops::bilinear_upsample2(v[0]),
                                       projection_weights(2, 6, 8, 13));
        },
        {rand_t(2, 3, 4, 63)});
    CHECK(err < 1e-6);
  }
  SUBCASE("pixel_shuffle definitional layout") {
    Tape<double> tape;
    Tensor<double> x(4, 1, 1);
    for (int c = 0; c < 4; ++c) x(c, 0, 0) = c;
    Var<double> y = ops::pixel_shuffle(constant(tape, x), 2);
    CHECK((*y.val)(0, 0, 0) == 0);
    CHECK((*y.val)(0, 0, 1) == 1);
    CHECK((*y.val)(0, 1, 0) == 2);
    CHECK((*y.val)(0, 1, 1) == 3);
  }
  SUBCASE("pixel_shuffle index formula on [8,3,5]") {
    Tape<double> tape;
    Tensor<double> x = rand_t(8, 3, 5, 64);
    Var<double> y = ops::pixel_shuffle(constant(tape, x), 2);
    CHECK(y.channels() == 2);
    CHECK(y.height() == 6);
    CHECK(y.width() == 10);
    for (int c = 0; c < 2; ++c)
      for (int oy = 0; oy < 6; ++oy)
        for (int ox = 0; ox < 10; ++ox)
          CHECK((*y.val)(c, oy, ox) == x(c * 4 + (oy % 2) * 2 + ox % 2, oy / 2, ox / 2));
    double err = grad_check(
        [&](Tape<double>&, const std::vector<Var<double>>& v) {
          return ops::weighted_sum_all(ops::pixel_shuffle(v[0], 2),
                                       projection_weights(2, 6, 10, 14));
        },
        {x});
    CHECK(err < 1e-6);
  }
}

TEST_CASE("layer_norm_vec gradient") {
  double err = grad_check(
      [&](Tape<double>&, const std::vector<Var<double>>& v) {
        return ops::weighted_sum_all(ops::layer_norm_vec(v[0], v[1], v[2]),
                                     projection_weights(6, 1, 1, 15));
      },
      {rand_t(6, 1, 1, 71), rand_t(6, 1, 1, 72, 0.5, 1.5), rand_t(6, 1, 1, 73)});
  CHECK(err < 1e-5);
}

TEST_CASE("losses: squared sum and charbonnier") {
  double err = grad_check(
      [&](Tape<double>&, const std::vector<Var<double>>& v) {
        return ops::squared_sum(v[0]);
      },
      {rand_t(2, 3, 3, 81)});
  CHECK(err < 1e-7);

  err = grad_check(
      [&](Tape<double>&, const std::vector<Var<double>>& v) {
        return ops::charbonnier_sum(v[0], 0.01, 0.4);
      },
      {rand_t(2, 3, 3, 82)});
  CHECK(err < 1e-6);

  // Charbonnier value at zero error: N * (eps^2)^q
  Tape<double> tape;
  Tensor<double> zero(2, 2, 2);
  Var<double> l = ops::charbonnier_sum(constant(tape, zero), 0.01, 0.4);
  CHECK((*l.val)[0] == doctest::Approx(4.0 * std::pow(1e-4, 0.4)).epsilon(1e-12));
}

TEST_CASE("reductions and shaping ops differentiate") {
  double err = grad_check(
      [&](Tape<double>&, const std::vector<Var<double>>& v) {
        Var<double> cat = ops::concat_channels<double>({v[0], v[1]});
        Var<double> mean = ops::spatial_mean(cat);
        Var<double> bc = ops::broadcast_spatial(mean, 3, 4);
        Var<double> sl = ops::slice_channels(bc, 1, 3);
        return ops::weighted_sum_all(sl, projection_weights(3, 3, 4, 16));
      },
      {rand_t(2, 3, 4, 91), rand_t(3, 3, 4, 92)});
  CHECK(err < 1e-6);
}
