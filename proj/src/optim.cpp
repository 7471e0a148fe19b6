#include "cal/optim.hpp"

#include <cmath>
#include <stdexcept>

#include "cal/log.hpp"

namespace cal {

AdamW::AdamW(std::vector<std::pair<std::string, Tensor>> params, AdamWConfig config)
    : params_(std::move(params)), config_(config) {
  for (const auto& [name, t] : params_) {
    m_.emplace_back(t.numel(), 0.0f);
    v_.emplace_back(t.numel(), 0.0f);
  }
}

bool AdamW::step(double lr) {
  for (const auto& [name, t] : params_) {
    if (t.has_grad() && !all_finite(t.grad())) {
      log::warn("adamw: non-finite gradient in " + name + "; step skipped");
      return false;
    }
  }
  ++t_;
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor& p = params_[i].second;
    auto values = p.data();
    auto grad = p.grad();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t j = 0; j < values.size(); ++j) {
      const double g = grad.empty() ? 0.0 : grad[j];
      const double mj = b1 * m[j] + (1.0 - b1) * g;
      const double vj = b2 * v[j] + (1.0 - b2) * g * g;
      m[j] = static_cast<float>(mj);
      v[j] = static_cast<float>(vj);
      const double m_hat = mj / c1;
      const double v_hat = vj / c2;
      const double pj = values[j];
      values[j] = static_cast<float>(pj - lr * (m_hat / (std::sqrt(v_hat) + config_.eps) + config_.weight_decay * pj));
    }
  }
  return true;
}

double lr_at(std::size_t step, std::size_t total_steps, double warmup_ratio, double base_lr) {
  if (step > total_steps) throw std::out_of_range("lr_at: step beyond total_steps");
  const auto warmup = static_cast<std::size_t>(std::floor(warmup_ratio * static_cast<double>(total_steps)));
  if (step < warmup) return base_lr * static_cast<double>(step) / static_cast<double>(warmup);
  if (total_steps == warmup) return base_lr;
  return base_lr * static_cast<double>(total_steps - step) / static_cast<double>(total_steps - warmup);
}

double global_grad_norm(const std::vector<std::pair<std::string, Tensor>>& params) {
  double sq = 0.0;
  for (const auto& [name, t] : params) {
    for (float g : t.grad()) sq += static_cast<double>(g) * g;
  }
  return std::sqrt(sq);
}

double clip_grad_norm(const std::vector<std::pair<std::string, Tensor>>& params, double max_norm) {
  const double norm = global_grad_norm(params);
  if (norm > max_norm && norm > 0.0) {
    const double factor = max_norm / norm;
    for (const auto& [name, t] : params) {
      Tensor handle = t;
      if (!handle.has_grad()) continue;
      for (auto& g : handle.mutable_grad()) g = static_cast<float>(g * factor);
    }
  }
  return norm;
}

}  // namespace cal
