#include <cmath>
#include <vector>

#include "dil/conv_ops.hpp"
#include "dil/gradcheck.hpp"
#include "dil/layers.hpp"
#include "dil/rng.hpp"
#include "dil/tensor.hpp"
#include "doctest.h"
#include "oracles.hpp"

using dil::Tensor;

namespace {

Tensor<double> random_tensor(std::vector<int> shape, uint64_t seed, double lo,
                             double hi) {
  dil::Rng rng(seed);
  size_t n = 1;
  for (int d : shape) n *= static_cast<size_t>(d);
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Tensor<double>::from(std::move(shape), std::move(v));
}

}  // namespace

TEST_SUITE_BEGIN("tensor");

TEST_CASE("conv2d matches hand examples") {
  SUBCASE("1x1 kernel doubles the input") {
    auto x = Tensor<double>::from({1, 1, 2, 2}, {1, 2, 3, 4});
    auto k = Tensor<double>::from({1, 1, 1, 1}, {2});
    auto y = dil::conv2d(x, k);
    CHECK(y.shape() == std::vector<int>{1, 1, 2, 2});
    const std::vector<double> want{2, 4, 6, 8};
    for (size_t i = 0; i < want.size(); ++i) CHECK(y.data()[i] == want[i]);
  }
  SUBCASE("all-ones valid conv sums the window") {
    auto x = Tensor<double>::filled({1, 1, 3, 3}, 1.0);
    auto k = Tensor<double>::filled({1, 1, 3, 3}, 1.0);
    auto y = dil::conv2d(x, k, 1, 0);
    CHECK(y.shape() == std::vector<int>{1, 1, 1, 1});
    CHECK(y.item() == doctest::Approx(9.0));
  }
}

TEST_CASE("conv2d agrees with the nested-loop oracle") {
  dil::Rng rng(42);
  for (int trial = 0; trial < 8; ++trial) {
    const int n = 1 + rng.uniform_int(2);
    const int c = 1 + rng.uniform_int(3);
    const int o = 1 + rng.uniform_int(3);
    const int h = 3 + rng.uniform_int(5);
    const int w = 3 + rng.uniform_int(5);
    const int kh = 1 + 2 * rng.uniform_int(2);  // 1 or 3
    const int kw = kh;
    const int stride = 1 + rng.uniform_int(2);
    const int pad = rng.uniform_int(2);
    auto x = random_tensor({n, c, h, w}, dil::derive_seed(7, trial, 0), -1, 1);
    auto k = random_tensor({o, c, kh, kw}, dil::derive_seed(7, trial, 1), -1, 1);
    auto y = dil::conv2d(x, k, stride, pad);
    const auto want = oracle::conv2d_loops(
        {x.data().begin(), x.data().end()}, n, c, h, w,
        {k.data().begin(), k.data().end()}, o, kh, kw, stride, pad);
    REQUIRE(y.numel() == want.size());
    for (size_t i = 0; i < want.size(); ++i) {
      CHECK(y.data()[i] == doctest::Approx(want[i]).epsilon(1e-12));
    }
  }
}

TEST_CASE("conv2d is linear in its input") {
  auto x = random_tensor({2, 2, 5, 5}, 11, -1, 1);
  auto y = random_tensor({2, 2, 5, 5}, 12, -1, 1);
  auto k = random_tensor({3, 2, 3, 3}, 13, -1, 1);
  auto lhs = dil::conv2d(dil::add(dil::scale(x, 2.0), y), k, 1, 1);
  auto rhs = dil::add(dil::scale(dil::conv2d(x, k, 1, 1), 2.0),
                      dil::conv2d(y, k, 1, 1));
  for (size_t i = 0; i < lhs.numel(); ++i) {
    CHECK(lhs.data()[i] == doctest::Approx(rhs.data()[i]).epsilon(1e-12));
  }
}

TEST_CASE("conv2d rejects mismatched channels") {
  auto x = Tensor<double>::filled({1, 2, 4, 4}, 1.0);
  auto k = Tensor<double>::filled({1, 3, 3, 3}, 1.0);
  CHECK_THROWS_AS(dil::conv2d(x, k), dil::AutogradError);
}

TEST_CASE("global_pool adds mean and max per channel") {
  SUBCASE("constant plane") {
    auto x = Tensor<double>::filled({1, 1, 2, 2}, 3.0);
    CHECK(dil::global_pool(x).item() == doctest::Approx(6.0));
  }
  SUBCASE("mean 2 plus max 3") {
    auto x = Tensor<double>::from({1, 1, 1, 2}, {1, 3});
    CHECK(dil::global_pool(x).item() == doctest::Approx(5.0));
  }
  SUBCASE("channels pool independently") {
    auto x = Tensor<double>::from({1, 2, 1, 2}, {1, 3, -2, -4});
    auto y = dil::global_pool(x);
    CHECK(y.data()[0] == doctest::Approx(5.0));
    CHECK(y.data()[1] == doctest::Approx(-3.0 + -2.0));
  }
}

TEST_CASE("avg_pool2d averages non-overlapping windows") {
  auto x = Tensor<double>::from({1, 1, 2, 4}, {1, 2, 3, 4, 5, 6, 7, 8});
  auto y = dil::avg_pool2d(x, 2);
  CHECK(y.shape() == std::vector<int>{1, 1, 1, 2});
  CHECK(y.data()[0] == doctest::Approx((1 + 2 + 5 + 6) / 4.0));
  CHECK(y.data()[1] == doctest::Approx((3 + 4 + 7 + 8) / 4.0));
  CHECK_THROWS_AS(dil::avg_pool2d(Tensor<double>::filled({1, 1, 1, 4}, 1.0), 2),
                  dil::AutogradError);
}

TEST_CASE("gather_columns copies, zero-fills and scatters gradients") {
  auto x = Tensor<double>::from({2, 3}, {1, 2, 3, 4, 5, 6});
  x.set_requires_grad(true);
  auto y = dil::gather_columns(x, {2, -1, 0, 2});
  CHECK(y.shape() == std::vector<int>{2, 4});
  const std::vector<double> want{3, 0, 1, 3, 6, 0, 4, 6};
  for (size_t i = 0; i < want.size(); ++i) CHECK(y.data()[i] == want[i]);
  dil::backward(dil::sum(y));
  // Column 2 is gathered twice, column 1 never.
  const std::vector<double> wg{1, 0, 2, 1, 0, 2};
  for (size_t i = 0; i < wg.size(); ++i) CHECK(x.grad()[i] == wg[i]);
  CHECK_THROWS_AS(dil::gather_columns(y, {4}), dil::AutogradError);
}

TEST_CASE("backward populates leaf gradients") {
  SUBCASE("sum of 2x has gradient 2 everywhere") {
    auto x = random_tensor({3, 4}, 5, -2, 2);
    x.set_requires_grad(true);
    dil::backward(dil::sum(dil::scale(x, 2.0)));
    for (double g : x.grad()) CHECK(g == doctest::Approx(2.0));
  }
  SUBCASE("d/dx sum(x*x) at 3 is 6") {
    auto x = Tensor<double>::from({1}, {3.0});
    x.set_requires_grad(true);
    dil::backward(dil::sum(dil::mul(x, x)));
    CHECK(x.grad()[0] == doctest::Approx(6.0));
  }
}

TEST_CASE("backward on two independent subgraphs matches separate runs") {
  auto x = random_tensor({2, 3}, 21, -1, 1);
  auto y = random_tensor({2, 3}, 22, -1, 1);

  auto xa = x.clone().set_requires_grad(true);
  auto ya = y.clone().set_requires_grad(true);
  dil::backward(dil::add(dil::sum(dil::mul(xa, xa)), dil::sum(dil::scale(ya, 3.0))));

  auto xb = x.clone().set_requires_grad(true);
  dil::backward(dil::sum(dil::mul(xb, xb)));
  auto yb = y.clone().set_requires_grad(true);
  dil::backward(dil::sum(dil::scale(yb, 3.0)));

  for (size_t i = 0; i < x.numel(); ++i) {
    CHECK(xa.grad()[i] == doctest::Approx(xb.grad()[i]).epsilon(1e-15));
    CHECK(ya.grad()[i] == doctest::Approx(yb.grad()[i]).epsilon(1e-15));
  }
}

TEST_CASE("backward misuse raises") {
  SUBCASE("non-scalar loss") {
    auto x = random_tensor({2, 2}, 31, -1, 1);
    x.set_requires_grad(true);
    auto y = dil::scale(x, 2.0);
    CHECK_THROWS_AS(dil::backward(y), dil::AutogradError);
  }
  SUBCASE("backward twice without a new forward") {
    auto x = random_tensor({2, 2}, 32, -1, 1);
    x.set_requires_grad(true);
    auto loss = dil::sum(x);
    dil::backward(loss);
    CHECK_THROWS_AS(dil::backward(loss), dil::AutogradError);
  }
}

TEST_CASE("non-finite results raise immediately") {
  auto x = Tensor<double>::from({1}, {1e308});
  CHECK_THROWS_AS(dil::scale(x, 1e10), dil::NumericError);
  CHECK_THROWS_AS(dil::mul(x, x), dil::NumericError);
}

TEST_CASE("gradient_check validates simple op pipelines") {
  SUBCASE("linear layer input") {
    dil::LinearParams<double> lin;
    lin.weight = random_tensor({3, 4}, 41, -1, 1);
    lin.bias = random_tensor({3}, 42, -1, 1);
    auto point = random_tensor({2, 4}, 43, -1, 1);
    auto report = dil::gradient_check(
        [&](const Tensor<double>& x) {
          return dil::sum(dil::linear_forward(x, lin));
        },
        point, 1e-5, 1e-4);
    CHECK(report.pass);
  }
  SUBCASE("relu with the kink excluded by construction") {
    dil::Rng rng(44);
    std::vector<double> v(12);
    for (auto& x : v) {
      x = rng.uniform(0.2, 1.2) * (rng.uniform() < 0.5 ? -1.0 : 1.0);
    }
    auto point = Tensor<double>::from({3, 4}, std::move(v));
    auto report = dil::gradient_check(
        [&](const Tensor<double>& x) {
          return dil::sum(dil::mul(dil::relu(x), dil::relu(x)));
        },
        point, 1e-5, 1e-4, /*exclusion_margin=*/1e-3);
    CHECK(report.pass);
    CHECK(report.checked == 12);
  }
}

TEST_CASE("composite conv-bn-relu-linear graph passes a finite-difference check") {
  dil::BnParams<double> bn = dil::BnParams<double>::init(2);
  dil::LinearParams<double> lin;
  lin.weight = random_tensor({2, 2}, 51, -1, 1);
  lin.bias = random_tensor({2}, 52, -1, 1);
  auto kernel = random_tensor({2, 1, 3, 3}, 53, -1, 1);
  auto point = random_tensor({2, 1, 6, 6}, 54, -2, 2);

  auto fn = [&](const Tensor<double>& x) {
    auto h = dil::conv2d(x, kernel, 1, 1);
    h = dil::batchnorm_forward(h, bn, dil::BnMode::kTrain, false);
    h = dil::relu(h);
    auto feats = dil::global_pool(h);
    auto logits = dil::linear_forward(feats, lin);
    return dil::cross_entropy_loss(logits, {0, 1});
  };
  auto report = dil::gradient_check(fn, point, 1e-6, 1e-4);
  CHECK(report.pass);
  CHECK(report.checked == point.numel());
}

TEST_SUITE_END();
