#include <doctest.h>

#include <cmath>
#include <random>

#include "cal/metrics.hpp"
#include "cal/selfcheck.hpp"

using namespace cal;

TEST_SUITE("metrics") {
  TEST_CASE("accuracy extremes and empty input") {
    std::vector<int> a{1, 0, 1}, b{1, 0, 1}, c{0, 1, 0}, e;
    CHECK(accuracy(a, b) == 1.0);
    CHECK(accuracy(a, c) == 0.0);
    CHECK_THROWS_AS(accuracy(e, e), MetricError);
    CHECK_THROWS_AS(accuracy(a, e), MetricError);
  }

  TEST_CASE("F1 formula oracle TP=8 FP=2 FN=4") {
    std::vector<int> p, l;
    for (int i = 0; i < 8; ++i) p.push_back(1), l.push_back(1);
    for (int i = 0; i < 2; ++i) p.push_back(1), l.push_back(0);
    for (int i = 0; i < 4; ++i) p.push_back(0), l.push_back(1);
    for (int i = 0; i < 3; ++i) p.push_back(0), l.push_back(0);
    CHECK(f1_binary(p, l) == doctest::Approx(8.0 / 11.0).epsilon(1e-12));
    std::vector<int> none{0, 0, 0}, pos{1, 1, 0};
    CHECK(f1_binary(none, pos) == 0.0);
    CHECK(f1_binary(pos, pos) == 1.0);
    std::vector<int> three{2};
    CHECK_THROWS_AS(f1_binary(three, three), MetricError);
  }

  TEST_CASE("MCC perfect, inverted and degenerate") {
    std::vector<int> l{1, 0, 1, 1, 0}, inv{0, 1, 0, 0, 1}, zeros{0, 0, 0, 0, 0};
    CHECK(mcc(l, l) == doctest::Approx(1.0));
    CHECK(mcc(inv, l) == doctest::Approx(-1.0));
    CHECK(mcc(zeros, l) == 0.0);
  }

  TEST_CASE("Spearman rank invariance, reversal, ties and constants") {
    std::vector<double> x{0.1, 0.5, 0.3, 0.9}, y{1, 5, 3, 9}, rev{9, 1, 5, -3};
    CHECK(spearman(x, y) == doctest::Approx(1.0));
    std::vector<double> expx;
    for (double v : x) expx.push_back(std::exp(3 * v));
    CHECK(spearman(expx, y) == spearman(x, y));
    std::vector<double> down{4, 3, 2, 1}, up{1, 2, 3, 4};
    CHECK(spearman(up, down) == doctest::Approx(-1.0));
    // ranks [1, 2.5, 2.5, 4] vs [1, 3, 2, 4]
    std::vector<double> tx{1, 2, 2, 3}, ty{1, 3, 2, 4};
    const double want = 4.5 / std::sqrt(4.5 * 5.0);
    CHECK(spearman(tx, ty) == doctest::Approx(want).epsilon(1e-12));
    auto r = fractional_ranks(tx);
    CHECK(r[1] == 2.5);
    std::vector<double> flat{2, 2, 2, 2};
    CHECK_THROWS_AS(spearman(flat, y), MetricError);
    std::vector<double> one{1};
    CHECK_THROWS_AS(spearman(one, one), MetricError);
    (void)rev;
  }

  TEST_CASE("metrics match brute-force oracles on random cases") {
    std::mt19937_64 rng(77);
    for (int t = 0; t < 1000; ++t) {
      const std::size_t n = 2 + rng() % 30;
      std::vector<int> p(n), l(n);
      std::vector<double> x(n), y(n);
      for (std::size_t i = 0; i < n; ++i) {
        p[i] = rng() % 2;
        l[i] = rng() % 2;
        x[i] = static_cast<double>(rng() % 5);
        y[i] = static_cast<double>(rng() % 7);
      }
      x[0] = -1, y[0] = -1;
      x[1] = 10, y[1] = 10;
      CHECK(std::abs(accuracy(p, l) - reference::accuracy(p, l)) < 1e-10);
      CHECK(std::abs(f1_binary(p, l) - reference::f1_binary(p, l)) < 1e-10);
      CHECK(std::abs(mcc(p, l) - reference::mcc(p, l)) < 1e-10);
      CHECK(std::abs(spearman(x, y) - reference::spearman(x, y)) < 1e-10);
    }
  }

  TEST_CASE("cosine similarity") {
    std::vector<float> a{1, 0}, b{0, 2}, c{2, 0}, z{0, 0};
    CHECK(cosine_similarity(a, b) == 0.0);
    CHECK(cosine_similarity(a, c) == doctest::Approx(1.0));
    CHECK(cosine_similarity(a, z) == 0.0);
  }

  TEST_CASE("reports serialize as key=value and JSON") {
    MetricReport r;
    r.metric = "robust_accuracy";
    r.value = 0.75;
    r.support = 4;
    r.attack = AttackInfo{"fgm", 0.5};
    CHECK(r.to_kv_line() == "metric=robust_accuracy value=0.75 support=4 attack=fgm epsilon=0.5");
    auto j = r.to_json();
    CHECK(j["attack"]["kind"] == "fgm");
    CHECK(j["support"] == 4);
  }
}
