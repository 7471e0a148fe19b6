#include "cal/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "cal/errors.hpp"
#include "cal/log.hpp"
#include "cal/ops.hpp"

namespace cal {

namespace {

void warn_on_zero_rows(const Tensor& x, const char* what) {
  const std::size_t cols = x.shape().back();
  const std::size_t rows = x.numel() / cols;
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < cols; ++c) s += static_cast<double>(x.data()[r * cols + c]) * x.data()[r * cols + c];
    if (std::sqrt(s) <= kNormGuard) {
      log::warn(std::string("info_nce: zero-norm ") + what + " row " + std::to_string(r) +
                " treated as cosine 0");
    }
  }
}

struct NormalizedRows {
  std::vector<double> values;  // row-normalized copy
  std::vector<double> norms;   // 0 marks a row passed through unchanged
};

NormalizedRows normalized_rows(const Tensor& x) {
  const std::size_t cols = x.dim(1), rows = x.dim(0);
  NormalizedRows out{std::vector<double>(x.numel()), std::vector<double>(rows)};
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < cols; ++c) s += static_cast<double>(x.data()[r * cols + c]) * x.data()[r * cols + c];
    const double n = std::sqrt(s);
    const bool pass = !(n > kNormGuard);
    out.norms[r] = pass ? 0.0 : n;
    for (std::size_t c = 0; c < cols; ++c) out.values[r * cols + c] = pass ? x.data()[r * cols + c] : x.data()[r * cols + c] / n;
  }
  return out;
}

// d/dx of x / ||x|| applied to upstream gradient g: (g - x_hat (x_hat . g)) / ||x||.
void accumulate_through_norm(Tensor x, const NormalizedRows& nr, const std::vector<double>& g) {
  const std::size_t cols = x.dim(1), rows = x.dim(0);
  auto dx = x.mutable_grad();
  for (std::size_t r = 0; r < rows; ++r) {
    const double n = nr.norms[r];
    if (n == 0.0) {
      for (std::size_t c = 0; c < cols; ++c) dx[r * cols + c] += static_cast<float>(g[r * cols + c]);
      continue;
    }
    double dot = 0.0;
    for (std::size_t c = 0; c < cols; ++c) dot += nr.values[r * cols + c] * g[r * cols + c];
    for (std::size_t c = 0; c < cols; ++c) {
      dx[r * cols + c] += static_cast<float>((g[r * cols + c] - nr.values[r * cols + c] * dot) / n);
    }
  }
}

}  // namespace

void LossConfig::validate() const {
  if (!(temperature > 0.0f)) throw ConfigError("temperature", "must be positive");
  if (!(alpha >= 0.0f && alpha <= 1.0f)) throw ConfigError("alpha", "must lie in [0, 1]");
}

std::string to_string(NegativeMode mode) {
  return mode == NegativeMode::adv_keys ? "adv-keys" : "clean-keys";
}

NegativeMode negative_mode_from_string(const std::string& text) {
  if (text == "adv-keys") return NegativeMode::adv_keys;
  if (text == "clean-keys") return NegativeMode::clean_keys;
  throw ConfigError("negative_mode", "expected adv-keys or clean-keys, got '" + text + "'");
}

Tensor cross_entropy(const Tensor& logits, std::span<const std::int32_t> labels) {
  if (logits.rank() != 2) throw ShapeError("cross_entropy: logits must be 2-D, got " + shape_str(logits.shape()));
  const std::size_t classes = logits.dim(1);
  if (labels.size() != logits.dim(0)) {
    throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for logits " +
                     shape_str(logits.shape()));
  }
  std::vector<std::size_t> index(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= classes) {
      throw std::out_of_range("cross_entropy: label " + std::to_string(labels[i]) + " outside [0, " +
                              std::to_string(classes) + ")");
    }
    index[i] = static_cast<std::size_t>(labels[i]);
  }
  return scale(mean(pick(log_softmax_rows(logits), index)), -1.0f);
}

namespace {

struct InfoNceForward {
  NormalizedRows a_hat, k_hat;
  std::vector<double> p;  // p[i][j]: softmax over the denominator similarities of anchor i
  double loss = 0.0;
};

InfoNceForward info_nce_forward(const Tensor& anchors, const Tensor& keys, float temperature, NegativeMode mode) {
  if (anchors.rank() != 2 || anchors.shape() != keys.shape()) {
    throw ShapeError("info_nce: anchors " + shape_str(anchors.shape()) + " and keys " + shape_str(keys.shape()) +
                     " must be equal-shape 2-D tensors");
  }
  if (!(temperature > 0.0f)) throw std::invalid_argument("info_nce: temperature must be positive");
  warn_on_zero_rows(anchors, "anchor");
  warn_on_zero_rows(keys, "key");

  const std::size_t B = anchors.dim(0), D = anchors.dim(1);
  const double inv_t = 1.0 / static_cast<double>(temperature);
  InfoNceForward f{normalized_rows(anchors), normalized_rows(keys), std::vector<double>(B * B), 0.0};
  const auto& av = f.a_hat.values;
  const auto& neg = mode == NegativeMode::clean_keys ? av : f.k_hat.values;
  auto& p = f.p;
  for (std::size_t i = 0; i < B; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < B; ++j) {
      double s = 0.0;
      for (std::size_t d = 0; d < D; ++d) s += av[i * D + d] * neg[j * D + d];
      p[i * B + j] = s * inv_t;
      mx = std::max(mx, p[i * B + j]);
    }
    double z = 0.0;
    for (std::size_t j = 0; j < B; ++j) z += std::exp(p[i * B + j] - mx);
    const double lse = mx + std::log(z);
    for (std::size_t j = 0; j < B; ++j) p[i * B + j] = std::exp(p[i * B + j] - lse);
    double pos = 0.0;
    for (std::size_t d = 0; d < D; ++d) pos += av[i * D + d] * f.k_hat.values[i * D + d];
    f.loss += lse - pos * inv_t;
  }
  f.loss /= static_cast<double>(B);
  return f;
}

}  // namespace

double info_nce_value(const Tensor& anchors, const Tensor& keys, float temperature, NegativeMode mode) {
  return info_nce_forward(anchors, keys, temperature, mode).loss;
}

Tensor info_nce(const Tensor& anchors, const Tensor& keys, float temperature, NegativeMode mode) {
  // Fused so the whole loss is evaluated in double; only the scalar result
  // is rounded to float.
  auto [a_hat, k_hat, p, loss] = info_nce_forward(anchors, keys, temperature, mode);
  const std::size_t B = anchors.dim(0), D = anchors.dim(1);
  const double inv_t = 1.0 / static_cast<double>(temperature);
  const bool clean = mode == NegativeMode::clean_keys;

  Tensor out = Tensor::scalar(static_cast<float>(loss));
  if (should_record({&anchors, &keys})) {
    const bool ga = anchors.requires_grad(), gk = keys.requires_grad();
    active_tape()->record(
        "info_nce", {anchors, keys}, out,
        [anchors, keys, out, a_hat = std::move(a_hat), k_hat = std::move(k_hat), p = std::move(p), B, D, inv_t,
         clean, ga, gk]() mutable {
          const double g = out.grad()[0] / static_cast<double>(B);
          std::vector<double> da(B * D, 0.0), dk(B * D, 0.0);
          const auto& av = a_hat.values;
          const auto& kv = k_hat.values;
          for (std::size_t i = 0; i < B; ++i) {
            for (std::size_t j = 0; j < B; ++j) {
              const double w = g * p[i * B + j] * inv_t;
              for (std::size_t d = 0; d < D; ++d) {
                if (clean) {
                  da[i * D + d] += w * av[j * D + d];
                  da[j * D + d] += w * av[i * D + d];
                } else {
                  da[i * D + d] += w * kv[j * D + d];
                  dk[j * D + d] += w * av[i * D + d];
                }
              }
            }
            for (std::size_t d = 0; d < D; ++d) {
              da[i * D + d] -= g * inv_t * kv[i * D + d];
              dk[i * D + d] -= g * inv_t * av[i * D + d];
            }
          }
          if (ga) accumulate_through_norm(anchors, a_hat, da);
          if (gk) accumulate_through_norm(keys, k_hat, dk);
        });
  }
  return out;
}

Tensor scal_total(const Tensor& ce_clean, const Tensor& ce_adv, const Tensor& contrastive, float alpha) {
  return add(scale(add(ce_clean, ce_adv), 0.5f), scale(contrastive, alpha));
}

double scal_total(double ce_clean, double ce_adv, double contrastive, double alpha) {
  return 0.5 * (ce_clean + ce_adv) + alpha * contrastive;
}

Tensor uscal_total(const Tensor& ct_views, const Tensor& ct_adv, float alpha) {
  return add(ct_views, scale(ct_adv, alpha));
}

double uscal_total(double ct_views, double ct_adv, double alpha) { return ct_views + alpha * ct_adv; }

}  // namespace cal
