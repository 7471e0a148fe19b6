#include "cal/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <vector>

#include "cal/ops.hpp"

namespace cal {

GradCheckResult grad_check(const std::function<Tensor()>& f, Tensor x, const GradCheckOptions& options) {
  if (!x.requires_grad() || !x.is_leaf()) {
    throw std::invalid_argument("grad_check: x must be a leaf that requires grad");
  }

  std::vector<float> weights;
  auto reduce = [&weights](const Tensor& out) {
    if (weights.empty()) return out;
    return sum(mul(out, Tensor::from_data(out.shape(), weights)));
  };
  auto evaluate = [&]() {
    NoGradScope no_grad;
    Tensor out = f();
    if (weights.empty()) return static_cast<double>(out.item());
    double acc = 0.0;
    for (std::size_t j = 0; j < out.numel(); ++j) acc += static_cast<double>(out.data()[j]) * weights[j];
    return acc;
  };

  {
    NoGradScope no_grad;
    Tensor probe = f();
    if (probe.numel() != 1) {
      std::mt19937_64 rng(options.projection_seed);
      std::uniform_real_distribution<float> dist(-1.0f, 1.0f);
      weights.resize(probe.numel());
      for (auto& w : weights) w = dist(rng);
    }
  }

  x.zero_grad();
  {
    Tape tape;
    TapeScope scope(tape);
    Tensor loss = reduce(f());
    if (loss.requires_grad()) tape.backward(loss);
  }
  std::vector<float> analytic(x.numel(), 0.0f);
  if (x.has_grad()) std::copy(x.grad().begin(), x.grad().end(), analytic.begin());

  if (evaluate() != evaluate()) {
    throw NondeterministicError("grad_check: function is not deterministic at the base point");
  }

  std::vector<std::size_t> coords(x.numel());
  std::iota(coords.begin(), coords.end(), std::size_t{0});
  if (options.max_coords != 0 && options.max_coords < coords.size()) {
    std::mt19937_64 rng(options.sample_seed);
    std::shuffle(coords.begin(), coords.end(), rng);
    coords.resize(options.max_coords);
    std::sort(coords.begin(), coords.end());
  }

  // A power-of-two step keeps x +- h, x +- 2h exactly representable for
  // most x, which the five-point stencil needs.
  const double step = std::exp2(std::round(std::log2(options.step)));
  GradCheckResult result;
  auto values = x.data();
  for (auto i : coords) {
    const float original = values[i];
    auto at = [&](double offset) {
      // Evaluate at the nearest representable point and report it.
      const float moved = static_cast<float>(original + offset);
      values[i] = moved;
      const double y = evaluate();
      values[i] = original;
      return std::pair<double, double>{static_cast<double>(moved) - original, y};
    };
    double numeric = 0.0;
    bool done = false;
    if (options.order == 4) {
      auto [d1, f1] = at(step);
      auto [d_1, f_1] = at(-step);
      auto [d2, f2] = at(2.0 * step);
      auto [d_2, f_2] = at(-2.0 * step);
      if (d1 == step && d_1 == -step && d2 == 2.0 * step && d_2 == -2.0 * step) {
        numeric = (-f2 + 8.0 * f1 - 8.0 * f_1 + f_2) / (12.0 * step);
        done = true;
      }
    }
    if (!done) {
      // Second order on whatever offsets are representable.
      auto [dp, fp] = at(step);
      auto [dm, fm] = at(-step);
      numeric = (fp - fm) / (dp - dm);
    }
    const double a = analytic[i];
    const double err = std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)});
    if (result.checked == 0 || err > result.max_rel_error) {
      result.max_rel_error = err;
      result.worst_index = i;
      result.worst_analytic = a;
      result.worst_numeric = numeric;
    }
    ++result.checked;
  }
  return result;
}

}  // namespace cal
