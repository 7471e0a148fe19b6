#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <stdexcept>

#include "cal/tensor.hpp"

namespace cal {

class NondeterministicError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct GradCheckOptions {
  double step = 1e-2;
  // 2: (f(x+h) - f(x-h)) / 2h. 4: the fourth-order five-point stencil, which
  // tolerates the larger steps float32 rounding calls for.
  int order = 4;
  // 0 checks every coordinate; otherwise a seeded sample of this many.
  std::size_t max_coords = 0;
  std::uint64_t sample_seed = 0;
  std::uint64_t projection_seed = 0x5eed;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t checked = 0;
};

/// Compares the tape gradient of `f` w.r.t. leaf `x` against centered finite
/// differences. `f` must rebuild its graph from `x` on every call.
///
/// A non-scalar output is reduced to sum_j w_j * out_j with fixed random
/// weights w (seeded by `projection_seed`); the numeric side evaluates that
/// reduction in double so rounding of the final sum does not pollute it.
///
/// Error per coordinate is |analytic - numeric| / max(1, |analytic|, |numeric|).
/// Throws NondeterministicError when two evaluations at the same point differ.
GradCheckResult grad_check(const std::function<Tensor()>& f, Tensor x, const GradCheckOptions& options = {});

}  // namespace cal
