#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "cal/gradcheck.hpp"
#include "cal/objectives.hpp"
#include "cal/tensor.hpp"
#include "cal/trainer.hpp"

namespace cal {

/// One differentiable operation with fixed inputs for gradient checking.
struct OpCase {
  std::string name;
  std::vector<Tensor> inputs;  // leaves; every one is checked
  std::function<Tensor(const std::vector<Tensor>&)> fn;
  double step = 1e-2;
};

/// Every differentiable op in the library. With `flip_tanh_backward` the
/// tanh case uses a variant whose backward rule has the wrong sign; the
/// mutation test uses it to prove the checker notices.
std::vector<OpCase> op_cases(std::uint64_t seed, bool flip_tanh_backward = false);

/// Worst relative error over all inputs of one case.
GradCheckResult check_op_case(const OpCase& c);

/// Gradient check of the full objective on a 2-example toy batch, over every
/// parameter coordinate, with the perturbation held at its computed value.
GradCheckResult check_full_graph(Objective objective, std::uint64_t seed);

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

struct SelfCheckOptions {
  std::uint64_t seed = 1234;
  bool flip_tanh_backward = false;
  double op_tolerance = 1e-4;
  double graph_tolerance = 1e-3;
  std::size_t attack_draws = 200;
  std::size_t metric_cases = 200;
};

std::vector<CheckResult> run_selfcheck(const SelfCheckOptions& options,
                                       const std::function<void(const CheckResult&)>& on_result = {});

/// Straightforward 64-bit implementations used as test oracles.
namespace reference {

using Matrix = std::vector<std::vector<double>>;

double info_nce(const Matrix& anchors, const Matrix& keys, double temperature, NegativeMode mode);
double accuracy(const std::vector<int>& preds, const std::vector<int>& labels);
double f1_binary(const std::vector<int>& preds, const std::vector<int>& labels);
double mcc(const std::vector<int>& preds, const std::vector<int>& labels);
double spearman(const std::vector<double>& x, const std::vector<double>& y);

}  // namespace reference

}  // namespace cal
