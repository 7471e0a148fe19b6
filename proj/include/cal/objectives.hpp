#pragma once

#include <cstddef>
#include <span>
#include <string>

#include "cal/tensor.hpp"

namespace cal {

/// Which keys fill the InfoNCE denominator for anchor i.
enum class NegativeMode {
  adv_keys,    // sum_k exp(cos(a_i, k_k) / tau): the keys themselves
  clean_keys,  // sum_k exp(cos(a_i, a_k) / tau): the anchors' own branch
};

struct LossConfig {
  float temperature = 0.05f;
  float alpha = 0.3f;
  NegativeMode negative_mode = NegativeMode::adv_keys;

  void validate() const;
};

std::string to_string(NegativeMode mode);
NegativeMode negative_mode_from_string(const std::string& text);

struct LossReport {
  double total = 0.0;
  double ce_clean = 0.0;
  double ce_adv = 0.0;
  double contrastive = 0.0;  // SCAL clean/adversarial term
  double ct_views = 0.0;     // USCAL dropout-view term
  double ct_adv = 0.0;       // USCAL adversarial term
};

/// Mean over rows of -log softmax(logits)[label].
Tensor cross_entropy(const Tensor& logits, std::span<const std::int32_t> labels);

/// Mean over i of -log( exp(cos(a_i, k_i)/tau) / sum_j exp(sim_ij/tau) ), with
/// the denominator set chosen by `mode`. Zero-norm rows have cosine 0.
Tensor info_nce(const Tensor& anchors, const Tensor& keys, float temperature,
                NegativeMode mode = NegativeMode::adv_keys);
/// The same loss before rounding to float; info_nce(...).item() is this value
/// cast to float.
double info_nce_value(const Tensor& anchors, const Tensor& keys, float temperature,
                      NegativeMode mode = NegativeMode::adv_keys);

/// 1/2 (ce_clean + ce_adv) + alpha * contrastive
Tensor scal_total(const Tensor& ce_clean, const Tensor& ce_adv, const Tensor& contrastive, float alpha);
double scal_total(double ce_clean, double ce_adv, double contrastive, double alpha);

/// ct_views + alpha * ct_adv
Tensor uscal_total(const Tensor& ct_views, const Tensor& ct_adv, float alpha);
double uscal_total(double ct_views, double ct_adv, double alpha);

}  // namespace cal
