#include <doctest.h>

#include <cmath>
#include <random>

#include "cal/ops.hpp"
#include "cal/selfcheck.hpp"

using namespace cal;

TEST_SUITE("ops") {
  TEST_CASE("every differentiable op passes a finite-difference check") {
    for (const auto& c : op_cases(2024)) {
      CAPTURE(c.name);
      auto r = check_op_case(c);
      CHECK(r.max_rel_error < 1e-4);
      CHECK(r.checked > 0);
    }
  }

  TEST_CASE("the checker catches a sign-flipped backward rule") {
    for (const auto& c : op_cases(2024, true)) {
      if (c.name != "tanh") continue;
      CHECK(check_op_case(c).max_rel_error > 0.5);
    }
  }

  TEST_CASE("shape mismatches name both shapes") {
    Tensor a = Tensor::zeros({2, 3}), b = Tensor::zeros({3, 2});
    CHECK_THROWS_WITH_AS(add(a, b), doctest::Contains("[2x3] vs [3x2]"), ShapeError);
    CHECK_THROWS_AS(matmul(a, a), ShapeError);
    CHECK_THROWS_AS(add_bias(a, Tensor::zeros({2})), ShapeError);
  }

  TEST_CASE("matmul matches a hand computation") {
    Tensor a = Tensor::from_data({2, 2}, {1, 2, 3, 4});
    Tensor b = Tensor::from_data({2, 1}, {5, 6});
    Tensor c = matmul(a, b);
    CHECK(c.data()[0] == 17.0f);
    CHECK(c.data()[1] == 39.0f);
  }

  TEST_CASE("softmax rows sum to one and survive large logits") {
    Tensor x = Tensor::from_data({2, 3}, {1000, 1001, 1002, -5, 0, 5});
    Tensor s = softmax_rows(x);
    for (int r = 0; r < 2; ++r) {
      double tot = 0;
      for (int c = 0; c < 3; ++c) tot += s.at(r * 3 + c);
      CHECK(tot == doctest::Approx(1.0).epsilon(1e-6));
    }
    Tensor l = logsumexp_rows(x);
    CHECK(l.data()[0] == doctest::Approx(1002.0 + std::log(1 + std::exp(-1.0) + std::exp(-2.0))));
  }

  TEST_CASE("layer_norm of a constant row returns beta") {
    Tensor x = Tensor::full({1, 4}, 3.0f);
    Tensor g = Tensor::full({4}, 2.0f), b = Tensor::from_data({4}, {1, 2, 3, 4});
    Tensor y = layer_norm(x, g, b, 0.0f);
    for (int i = 0; i < 4; ++i) CHECK(y.data()[i] == b.data()[i]);
  }

  TEST_CASE("dropout: identity in eval mode, exact rate check, deterministic masks") {
    Tensor x = Tensor::full({50, 40}, 1.0f);
    CHECK(dropout(x, 0.5f, 1, 0, false).same_as(x));
    CHECK(dropout(x, 0.0f, 1, 0, true).same_as(x));
    CHECK_THROWS_AS(dropout(x, 1.0f, 1, 0, true), std::invalid_argument);
    CHECK_THROWS_AS(dropout(x, -0.1f, 1, 0, true), std::invalid_argument);
    Tensor a = dropout(x, 0.25f, 7, 3, true), b = dropout(x, 0.25f, 7, 3, true), c = dropout(x, 0.25f, 8, 3, true);
    std::size_t zeros = 0, diff = 0;
    for (std::size_t i = 0; i < x.numel(); ++i) {
      CHECK(a.data()[i] == b.data()[i]);
      zeros += a.data()[i] == 0.0f;
      diff += a.data()[i] != c.data()[i];
      if (a.data()[i] != 0.0f) CHECK(a.data()[i] == doctest::Approx(1.0 / 0.75));
    }
    CHECK(zeros > 400);
    CHECK(zeros < 600);
    CHECK(diff > 0);
  }

  TEST_CASE("l2_normalize_rows gives unit rows and passes zero rows through") {
    Tensor x = Tensor::from_data({2, 2}, {3, 4, 0, 0});
    Tensor y = l2_normalize_rows(x);
    CHECK(y.data()[0] == doctest::Approx(0.6));
    CHECK(y.data()[1] == doctest::Approx(0.8));
    CHECK(y.data()[2] == 0.0f);
  }

  TEST_CASE("embedding gathers rows and rejects bad ids") {
    Tensor table = Tensor::from_data({3, 2}, {0, 1, 2, 3, 4, 5});
    std::vector<std::int32_t> ids{2, 0};
    Tensor e = embedding(table, ids);
    CHECK(e.data()[0] == 4.0f);
    CHECK(e.data()[3] == 1.0f);
    std::vector<std::int32_t> bad{3};
    CHECK_THROWS_AS(embedding(table, bad), std::out_of_range);
  }

  TEST_CASE("padded keys receive no attention weight") {
    std::mt19937 rng(3);
    std::normal_distribution<float> d;
    std::vector<float> q(8), k(8), v(8);
    for (auto* vec : {&q, &k, &v}) {
      for (auto& x : *vec) x = d(rng);
    }
    std::vector<std::uint8_t> mask{1, 1, 1, 0};
    Tensor out1 = masked_self_attention(Tensor::from_data({4, 2}, q), Tensor::from_data({4, 2}, k),
                                        Tensor::from_data({4, 2}, v), mask, 1, 4, 1);
    v[6] = 100.0f;
    v[7] = -100.0f;
    k[6] = 50.0f;
    Tensor out2 = masked_self_attention(Tensor::from_data({4, 2}, q), Tensor::from_data({4, 2}, k),
                                        Tensor::from_data({4, 2}, v), mask, 1, 4, 1);
    for (std::size_t i = 0; i < 6; ++i) CHECK(out1.data()[i] == doctest::Approx(out2.data()[i]));
  }

  TEST_CASE("pick rejects out-of-range indices") {
    Tensor x = Tensor::zeros({2, 3});
    std::vector<std::size_t> idx{0, 3};
    CHECK_THROWS_AS(pick(x, idx), std::out_of_range);
  }
}
