#include <doctest.h>

#include <cmath>
#include <limits>

#include "cal/gradcheck.hpp"
#include "cal/ops.hpp"
#include "cal/tensor.hpp"

using namespace cal;

TEST_SUITE("tensor") {
  TEST_CASE("factories validate shape and size") {
    CHECK_THROWS_AS(Tensor::from_data({2, 2}, {1, 2, 3}), ShapeError);
    CHECK_THROWS_AS(Tensor::zeros({2, 0}), ShapeError);
    Tensor t = Tensor::full({2, 3}, 1.5f);
    CHECK(t.numel() == 6);
    CHECK(t.at(5) == doctest::Approx(1.5));
    CHECK(shape_str(t.shape()) == "[2x3]");
  }

  TEST_CASE("detach copies values and drops the gradient flag") {
    Tensor a = Tensor::from_data({2}, {1, 2}, true);
    Tensor d = a.detach();
    CHECK_FALSE(d.requires_grad());
    d.data()[0] = 9;
    CHECK(a.data()[0] == 1.0f);
  }

  TEST_CASE("no recording without an active tape") {
    Tensor a = Tensor::from_data({2}, {1, 2}, true);
    Tensor b = add(a, a);
    CHECK(b.is_leaf());
  }

  TEST_CASE("backward requires a scalar root recorded on the tape") {
    Tensor a = Tensor::from_data({2}, {1, 2}, true);
    Tape tape;
    TapeScope scope(tape);
    Tensor b = add(a, a);
    CHECK_THROWS_AS(tape.backward(b), ShapeError);
    Tape other;
    Tensor s = sum(b);
    CHECK_THROWS_AS(other.backward(s), std::logic_error);
  }

  TEST_CASE("leaf gradients accumulate across backward passes") {
    Tensor a = Tensor::from_data({2}, {1, 2}, true);
    for (int pass = 0; pass < 2; ++pass) {
      Tape tape;
      TapeScope scope(tape);
      tape.backward(sum(scale(a, 3.0f)));
    }
    CHECK(a.grad()[0] == 6.0f);
    CHECK(a.grad()[1] == 6.0f);
  }

  TEST_CASE("a tensor used twice receives both contributions") {
    Tensor a = Tensor::from_data({1}, {3}, true);
    Tape tape;
    TapeScope scope(tape);
    tape.backward(sum(mul(a, a)));
    CHECK(a.grad()[0] == 6.0f);
  }

  TEST_CASE("inputs that do not require grad get no gradient buffer") {
    Tensor a = Tensor::from_data({2}, {1, 2}, true);
    Tensor c = Tensor::from_data({2}, {5, 5});
    Tape tape;
    TapeScope scope(tape);
    tape.backward(sum(mul(a, c)));
    CHECK_FALSE(c.has_grad());
    CHECK(a.grad()[0] == 5.0f);
  }

  TEST_CASE("NoGradScope suspends recording") {
    Tensor a = Tensor::from_data({2}, {1, 2}, true);
    Tape tape;
    TapeScope scope(tape);
    {
      NoGradScope ng;
      Tensor b = add(a, a);
      CHECK(b.is_leaf());
    }
    CHECK(tape.size() == 0);
  }

  TEST_CASE("all_finite flags NaN and Inf") {
    std::vector<float> ok{1, 2}, nan{1, std::numeric_limits<float>::quiet_NaN()},
        inf{std::numeric_limits<float>::infinity()};
    CHECK(all_finite(ok));
    CHECK_FALSE(all_finite(nan));
    CHECK_FALSE(all_finite(inf));
  }

  TEST_CASE("grad_check detects a wrong derivative and nondeterminism") {
    Tensor x = Tensor::from_data({3}, {0.3f, -0.2f, 0.5f}, true);
    auto ok = grad_check([&] { return sum(tanh(x)); }, x);
    CHECK(ok.max_rel_error < 1e-6);
    CHECK(ok.checked == 3);

    int calls = 0;
    auto flaky = [&] { return sum(scale(x, static_cast<float>(1 + (calls++ % 2)))); };
    CHECK_THROWS_AS(grad_check(flaky, x), NondeterministicError);

    Tensor c = Tensor::from_data({3}, {1, 2, 3});
    CHECK_THROWS_AS(grad_check([&] { return sum(c); }, c), std::invalid_argument);
  }
}
