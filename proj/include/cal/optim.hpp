#pragma once

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "cal/tensor.hpp"

namespace cal {

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

/// AdamW with decoupled weight decay and bias-corrected moments:
///   p <- p - lr * (m_hat / (sqrt(v_hat) + eps) + wd * p)
class AdamW {
 public:
  AdamW(std::vector<std::pair<std::string, Tensor>> params, AdamWConfig config = {});

  /// Applies one update from the parameters' current gradients. Returns false
  /// (and leaves parameters, moments and the step counter untouched) when any
  /// gradient is non-finite.
  bool step(double lr);

  std::size_t step_count() const noexcept { return t_; }
  const AdamWConfig& config() const noexcept { return config_; }

  const std::vector<std::pair<std::string, Tensor>>& params() const noexcept { return params_; }
  std::vector<float>& first_moment(std::size_t i) { return m_.at(i); }
  std::vector<float>& second_moment(std::size_t i) { return v_.at(i); }
  const std::vector<float>& first_moment(std::size_t i) const { return m_.at(i); }
  const std::vector<float>& second_moment(std::size_t i) const { return v_.at(i); }
  void set_step_count(std::size_t t) noexcept { t_ = t; }

 private:
  std::vector<std::pair<std::string, Tensor>> params_;
  AdamWConfig config_;
  std::vector<std::vector<float>> m_;
  std::vector<std::vector<float>> v_;
  std::size_t t_ = 0;
};

/// Linear warmup from 0 to base_lr over floor(warmup_ratio * total_steps)
/// steps, then linear decay to 0 at total_steps.
double lr_at(std::size_t step, std::size_t total_steps, double warmup_ratio, double base_lr);

/// Global L2 norm of all gradients, accumulated in double.
double global_grad_norm(const std::vector<std::pair<std::string, Tensor>>& params);

/// Scales every gradient so the global norm is at most max_norm. Returns the
/// norm before clipping.
double clip_grad_norm(const std::vector<std::pair<std::string, Tensor>>& params, double max_norm);

}  // namespace cal
