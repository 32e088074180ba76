#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "gradcheck.hpp"
#include "reference.hpp"
#include "wavesplit/errors.hpp"
#include "wavesplit/rng.hpp"
#include "wavesplit/tensor.hpp"

using namespace wavesplit;

namespace {

TensorPtr rand_tensor(std::vector<std::int64_t> shape, RngStream& rng, bool grad = false) {
  auto t = Tensor::create(std::move(shape), grad);
  for (auto& v : t->data) v = static_cast<float>(rng.normal());
  return t;
}

}  // namespace

TEST_CASE("conv1d center tap is the identity") {
  auto x = Tensor::from({1, 2, 3, 4}, {4, 1});
  auto w = Tensor::from({0, 1, 0}, {3, 1, 1});
  auto b = Tensor::zeros({1});
  auto out = ops::conv1d_dilated(x, w, b, 1);
  for (int i = 0; i < 4; ++i) CHECK(out->data[i] == doctest::Approx(x->data[i]));
}

TEST_CASE("conv1d first tap with dilation 2 is a delay with zero padding") {
  auto x = Tensor::from({1, 2, 3, 4}, {4, 1});
  auto w = Tensor::from({1, 0, 0}, {3, 1, 1});
  auto b = Tensor::zeros({1});
  auto out = ops::conv1d_dilated(x, w, b, 2);
  CHECK(out->data[0] == 0.0f);
  CHECK(out->data[1] == 0.0f);
  CHECK(out->data[2] == 1.0f);
  CHECK(out->data[3] == 2.0f);
}

TEST_CASE("conv1d matches the direct-summation oracle") {
  RngStream rng(42);
  const std::int64_t T = 16, cin = 2, cout = 3, K = 3, dil = 4;
  auto x = rand_tensor({T, cin}, rng);
  auto w = rand_tensor({K, cin, cout}, rng);
  auto b = rand_tensor({cout}, rng);
  auto out = ops::conv1d_dilated(x, w, b, dil);

  const auto ref = refk::conv1d(refk::dvec(x->data.begin(), x->data.end()), T, cin,
                                refk::dvec(w->data.begin(), w->data.end()), K, cout,
                                refk::dvec(b->data.begin(), b->data.end()), dil);
  for (std::int64_t i = 0; i < out->numel(); ++i) {
    CHECK(std::abs(out->data[i] - ref[i]) <=
          1e-5 * std::max(1.0, std::abs(ref[i])));
  }
}

TEST_CASE("conv1d accepts dilation larger than the sequence") {
  RngStream rng(7);
  auto x = rand_tensor({5, 2}, rng);
  auto w = rand_tensor({3, 2, 2}, rng);
  auto b = Tensor::zeros({2});
  auto out = ops::conv1d_dilated(x, w, b, 16);  // taps land in padding only
  CHECK(out->dim(0) == 5);
  CHECK(out->all_finite());
}

TEST_CASE("conv1d rejects shape mismatches") {
  auto x = Tensor::zeros({4, 2});
  auto w = Tensor::zeros({3, 3, 2});
  auto b = Tensor::zeros({2});
  CHECK_THROWS_AS(ops::conv1d_dilated(x, w, b, 1), ContractViolation);
  auto w_even = Tensor::zeros({2, 2, 2});
  CHECK_THROWS_AS(ops::conv1d_dilated(x, w_even, b, 1), ContractViolation);
}

TEST_CASE("layer_norm collapses a constant row to the shift") {
  auto x = Tensor::from({5, 5, 5, 5}, {1, 4});
  auto g = Tensor::full({4}, 1.0f);
  auto s = Tensor::zeros({4});
  auto out = ops::layer_norm(x, g, s);
  for (int c = 0; c < 4; ++c) CHECK(out->data[c] == doctest::Approx(0.0f));
}

TEST_CASE("layer_norm passes an already-normalized row through") {
  auto x = Tensor::from({1, -1}, {1, 2});
  auto g = Tensor::full({2}, 1.0f);
  auto s = Tensor::zeros({2});
  auto out = ops::layer_norm(x, g, s, 1e-12f);
  CHECK(out->data[0] == doctest::Approx(1.0).epsilon(1e-5));
  CHECK(out->data[1] == doctest::Approx(-1.0).epsilon(1e-5));
}

TEST_CASE("layer_norm output has zero mean and unit variance per row") {
  RngStream rng(3);
  const std::int64_t T = 4, C = 8;
  auto x = rand_tensor({T, C}, rng);
  auto g = Tensor::full({C}, 1.0f);
  auto s = Tensor::zeros({C});
  auto out = ops::layer_norm(x, g, s);
  for (std::int64_t t = 0; t < T; ++t) {
    double mean = 0.0, var = 0.0;
    for (std::int64_t c = 0; c < C; ++c) mean += out->data[t * C + c];
    mean /= C;
    for (std::int64_t c = 0; c < C; ++c) {
      const double d = out->data[t * C + c] - mean;
      var += d * d;
    }
    var /= C;
    CHECK(std::abs(mean) <= 1e-5);
    CHECK(std::abs(var - 1.0) <= 1e-4);
  }
}

TEST_CASE("prelu definition") {
  auto x = Tensor::from({3.0f, -2.0f}, {1, 2});
  auto slope = Tensor::from({0.5f, 0.25f}, {2});
  auto out = ops::prelu(x, slope);
  CHECK(out->data[0] == 3.0f);
  CHECK(out->data[1] == doctest::Approx(-0.5f));
}

TEST_CASE("prelu slope gradient matches finite differences") {
  // d out / d slope at x = -2 is -2.
  auto x = Tensor::from({-2.0f}, {1, 1});
  auto slope = Tensor::from({0.25f}, {1}, true);
  Tape tape;
  auto loss = ops::sum(ops::prelu(x, slope));
  backward(tape, loss);
  CHECK(slope->grad[0] == doctest::Approx(-2.0f));

  const double h = 1e-3;
  auto eval = [&](double sv) {
    return refk::prelu({-2.0}, 1, 1, {sv})[0];
  };
  const double fd = (eval(0.25 + h) - eval(0.25 - h)) / (2 * h);
  CHECK(slope->grad[0] == doctest::Approx(fd).epsilon(1e-3));
}

TEST_CASE("l2_normalize basics") {
  auto v = Tensor::from({3, 4}, {1, 2});
  auto out = ops::l2_normalize(v);
  CHECK(out->data[0] == doctest::Approx(0.6f));
  CHECK(out->data[1] == doctest::Approx(0.8f));

  auto zero = Tensor::from({0, 0}, {1, 2});
  auto zout = ops::l2_normalize(zero);
  CHECK(zout->data[0] == 0.0f);
  CHECK(zout->data[1] == 0.0f);

  RngStream rng(11);
  auto big = rand_tensor({1, 16}, rng);
  auto bout = ops::l2_normalize(big);
  double norm = 0.0;
  for (float x : bout->data) norm += static_cast<double>(x) * x;
  CHECK(std::sqrt(norm) == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("log_sum_exp values") {
  auto two = Tensor::from({0, 0}, {2});
  CHECK(ops::log_sum_exp(two)->item() == doctest::Approx(std::log(2.0)));

  auto one = Tensor::from({3.25f}, {1});
  CHECK(ops::log_sum_exp(one)->item() == doctest::Approx(3.25f));

  auto huge = Tensor::from({1000, 1000}, {2});
  CHECK(ops::log_sum_exp(huge)->item() ==
        doctest::Approx(1000.0 + std::log(2.0)).epsilon(1e-6));
}

TEST_CASE("backward of sum gives ones; backward of squared norm gives 2x") {
  RngStream rng(5);
  auto x = rand_tensor({3, 4}, rng, true);
  {
    Tape tape;
    auto loss = ops::sum(x);
    backward(tape, loss);
    for (float g : x->grad) CHECK(g == doctest::Approx(1.0f));
  }
  x->zero_grad();
  {
    Tape tape;
    auto loss = ops::sum(ops::mul(x, x));
    backward(tape, loss);
    for (std::int64_t i = 0; i < x->numel(); ++i)
      CHECK(x->grad[i] == doctest::Approx(2.0f * x->data[i]));
  }
}

TEST_CASE("backward rejects non-scalar losses and double passes") {
  RngStream rng(9);
  auto x = rand_tensor({2, 2}, rng, true);
  Tape tape;
  auto out = ops::scale(x, 2.0f);
  CHECK_THROWS_AS(backward(tape, out), ContractViolation);
  auto loss = ops::sum(out);
  backward(tape, loss);
  CHECK_THROWS_AS(backward(tape, loss), ContractViolation);
}

TEST_CASE("gradients accumulate across tapes until zeroed") {
  auto x = Tensor::from({1, 2, 3}, {3}, true);
  {
    Tape tape;
    backward(tape, ops::sum(x));
  }
  {
    Tape tape;
    backward(tape, ops::sum(x));
  }
  for (float g : x->grad) CHECK(g == doctest::Approx(2.0f));
  x->zero_grad();
  for (float g : x->grad) CHECK(g == 0.0f);
}

TEST_CASE("ops are deterministic within one build") {
  RngStream rng(21);
  auto x = rand_tensor({32, 4}, rng);
  auto w = rand_tensor({3, 4, 4}, rng);
  auto b = rand_tensor({4}, rng);
  auto a1 = ops::conv1d_dilated(x, w, b, 2);
  auto a2 = ops::conv1d_dilated(x, w, b, 2);
  CHECK(a1->data == a2->data);
}

TEST_CASE("three-layer composition passes the finite-difference gradient check") {
  auto results = gradcheck::run_all(1234);
  for (const auto& r : results) {
    INFO(r.name, " max_rel_err=", r.max_rel_err);
    CHECK(r.passed());
  }
}

TEST_CASE("gradient-check property holds over randomized seeds") {
  for (std::uint64_t seed : {1ull, 2ull, 3ull, 4ull, 5ull}) {
    auto results = gradcheck::run_all(seed);
    INFO("seed ", seed);
    CHECK(gradcheck::all_passed(results));
  }
}

TEST_CASE("a corrupted backward rule is caught by the checker") {
  RngStream rng(77);
  auto x = Tensor::from({0.7f, -0.3f, 1.2f}, {3}, true);
  Tape tape;
  // Deliberately wrong gradient: claims d(sum of squares)/dx = x.
  auto out = Tensor::scalar(0.0f);
  double acc = 0.0;
  for (float v : x->data) acc += static_cast<double>(v) * v;
  out->data[0] = static_cast<float>(acc);
  ops::attach(out, {x}, [self = out.get(), px = x.get()] {
    auto& g = px->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self->grad[0] * px->data[i];  // missing 2x
  });
  backward(tape, out);

  std::vector<double> analytic(x->grad.begin(), x->grad.end());
  std::vector<double> point(x->data.begin(), x->data.end());
  auto loss_at = [&]() {
    double s = 0.0;
    for (double v : point) s += v * v;
    return s;
  };
  auto result = gradcheck::fd_compare("corrupted", analytic, point, loss_at, {}, rng);
  CHECK_FALSE(result.passed());
}
