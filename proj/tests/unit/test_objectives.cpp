#include <doctest.h>

#include <cmath>
#include <random>

#include "cal/errors.hpp"
#include "cal/objectives.hpp"
#include "cal/ops.hpp"
#include "cal/selfcheck.hpp"

using namespace cal;

namespace {

Tensor random_matrix(std::mt19937_64& rng, std::size_t r, std::size_t c) {
  std::normal_distribution<float> d;
  std::vector<float> v(r * c);
  for (auto& x : v) x = d(rng);
  return Tensor::from_data({r, c}, v);
}

reference::Matrix to_matrix(const Tensor& t) {
  reference::Matrix m(t.dim(0), std::vector<double>(t.dim(1)));
  for (std::size_t i = 0; i < t.dim(0); ++i) {
    for (std::size_t j = 0; j < t.dim(1); ++j) m[i][j] = t.data()[i * t.dim(1) + j];
  }
  return m;
}

}  // namespace

TEST_SUITE("objectives") {
  TEST_CASE("cross entropy of uniform logits is ln C") {
    Tensor logits = Tensor::zeros({3, 4});
    std::vector<std::int32_t> labels{0, 1, 3};
    CHECK(cross_entropy(logits, labels).item() == doctest::Approx(std::log(4.0)));
    std::vector<std::int32_t> bad{0, 1, 4};
    CHECK_THROWS_AS(cross_entropy(logits, bad), std::out_of_range);
  }

  TEST_CASE("info_nce with one example is exactly zero with zero gradient") {
    std::mt19937_64 rng(1);
    Tensor a = random_matrix(rng, 1, 6), k = random_matrix(rng, 1, 6);
    a.set_requires_grad(true);
    k.set_requires_grad(true);
    Tape tape;
    TapeScope scope(tape);
    Tensor l = info_nce(a, k, 0.05f);
    CHECK(l.item() == 0.0f);
    tape.backward(l);
    for (float g : a.grad()) CHECK(g == 0.0f);
    for (float g : k.grad()) CHECK(g == 0.0f);
  }

  TEST_CASE("uniform similarities give ln B") {
    for (std::size_t B : {2, 4, 8}) {
      Tensor a = Tensor::full({B, 3}, 1.0f);
      CHECK(info_nce(a, a, 0.05f).item() == doctest::Approx(std::log(static_cast<double>(B))).epsilon(1e-6));
    }
  }

  TEST_CASE("info_nce matches the brute-force oracle in both negative modes") {
    std::mt19937_64 rng(8);
    for (int trial = 0; trial < 50; ++trial) {
      const std::size_t B = 1 + trial % 8;
      Tensor a = random_matrix(rng, B, 4), k = random_matrix(rng, B, 4);
      for (NegativeMode mode : {NegativeMode::adv_keys, NegativeMode::clean_keys}) {
        const double want = reference::info_nce(to_matrix(a), to_matrix(k), 0.1, mode);
        CHECK(info_nce(a, k, 0.1f, mode).item() == doctest::Approx(want).epsilon(1e-6));
      }
    }
  }

  TEST_CASE("temperature and shape preconditions") {
    Tensor a = Tensor::full({2, 3}, 1.0f);
    CHECK_THROWS_AS(info_nce(a, a, 0.0f), std::invalid_argument);
    CHECK_THROWS_AS(info_nce(a, Tensor::full({3, 3}, 1.0f), 0.1f), ShapeError);
    LossConfig c;
    c.alpha = 1.5f;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    CHECK(negative_mode_from_string(to_string(NegativeMode::clean_keys)) == NegativeMode::clean_keys);
  }

  TEST_CASE("totals recombine their terms") {
    Tensor c = Tensor::scalar(1.25f), a = Tensor::scalar(2.5f), t = Tensor::scalar(0.75f);
    CHECK(scal_total(c, a, t, 0.3f).item() == doctest::Approx(0.5 * (1.25 + 2.5) + 0.3 * 0.75));
    CHECK(scal_total(1.25, 2.5, 0.75, 0.3) == doctest::Approx(0.5 * 3.75 + 0.225));
    CHECK(uscal_total(c, t, 0.3f).item() == doctest::Approx(1.25 + 0.225));
  }
}
