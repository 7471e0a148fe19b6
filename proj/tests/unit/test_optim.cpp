#include <doctest.h>

#include <cmath>
#include <limits>

#include "cal/optim.hpp"

using namespace cal;

namespace {

void set_grad(Tensor& t, std::vector<float> g) {
  auto dst = t.mutable_grad();
  for (std::size_t i = 0; i < g.size(); ++i) dst[i] = g[i];
}

}  // namespace

TEST_SUITE("optim") {
  TEST_CASE("zero gradient without decay leaves parameters unchanged") {
    Tensor p = Tensor::from_data({2}, {1.0f, -2.0f}, true);
    AdamW opt({{"p", p}}, {.weight_decay = 0.0});
    set_grad(p, {0, 0});
    CHECK(opt.step(0.1));
    CHECK(p.data()[0] == 1.0f);
    CHECK(p.data()[1] == -2.0f);
    CHECK(opt.step_count() == 1);
  }

  TEST_CASE("zero gradient with decay shrinks by (1 - lr * wd)") {
    Tensor p = Tensor::from_data({1}, {2.0f}, true);
    AdamW opt({{"p", p}}, {.weight_decay = 0.1});
    set_grad(p, {0});
    opt.step(0.5);
    CHECK(p.data()[0] == doctest::Approx(2.0 * (1 - 0.5 * 0.1)).epsilon(1e-7));
  }

  TEST_CASE("three scalar steps match a 64-bit hand computation") {
    Tensor p = Tensor::from_data({1}, {1.0f}, true);
    AdamWConfig cfg{.weight_decay = 0.01};
    AdamW opt({{"p", p}}, cfg);
    const double grads[3] = {0.5, -0.2, 0.1};
    double x = 1.0, m = 0.0, v = 0.0;
    for (int t = 1; t <= 3; ++t) {
      set_grad(p, {static_cast<float>(grads[t - 1])});
      opt.step(0.01);
      const double g = static_cast<float>(grads[t - 1]);
      m = 0.9 * m + 0.1 * g;
      v = 0.999 * v + 0.001 * g * g;
      const double mh = m / (1 - std::pow(0.9, t)), vh = v / (1 - std::pow(0.999, t));
      x = x - 0.01 * (mh / (std::sqrt(vh) + 1e-8) + 0.01 * x);
      CHECK(std::abs(p.data()[0] - x) < 1e-7);
    }
    CHECK(opt.step_count() == 3);
  }

  TEST_CASE("non-finite gradient skips the step and keeps the counter") {
    Tensor p = Tensor::from_data({2}, {1.0f, 1.0f}, true);
    AdamW opt({{"p", p}});
    set_grad(p, {0.1f, std::numeric_limits<float>::quiet_NaN()});
    CHECK_FALSE(opt.step(0.1));
    CHECK(opt.step_count() == 0);
    CHECK(p.data()[0] == 1.0f);
    CHECK(opt.first_moment(0)[0] == 0.0f);
  }

  TEST_CASE("linear warmup then linear decay") {
    CHECK(lr_at(0, 100, 0.1, 1.0) == 0.0);
    CHECK(lr_at(10, 100, 0.1, 1.0) == 1.0);
    CHECK(lr_at(5, 100, 0.1, 1.0) == doctest::Approx(0.5));
    CHECK(std::abs(lr_at(55, 100, 0.1, 1.0) - 0.5) < 1e-12);
    CHECK(lr_at(100, 100, 0.1, 1.0) == 0.0);
    CHECK(lr_at(0, 100, 0.0, 2.0) == 2.0);
    CHECK_THROWS_AS(lr_at(101, 100, 0.1, 1.0), std::out_of_range);
  }

  TEST_CASE("clipping scales to the requested global norm") {
    Tensor a = Tensor::from_data({1}, {0}, true), b = Tensor::from_data({1}, {0}, true);
    set_grad(a, {3});
    set_grad(b, {4});
    std::vector<std::pair<std::string, Tensor>> ps{{"a", a}, {"b", b}};
    CHECK(clip_grad_norm(ps, 1.0) == doctest::Approx(5.0));
    CHECK(global_grad_norm(ps) == doctest::Approx(1.0));
    CHECK(clip_grad_norm(ps, 10.0) == doctest::Approx(1.0));
  }
}
