#pragma once

#include <cstdint>
#include <string>

#include "cal/encoder.hpp"
#include "cal/objectives.hpp"
#include "cal/tensor.hpp"
#include "cal/text.hpp"

namespace cal {

enum class AttackKind { fgsm, fgm };

std::string to_string(AttackKind kind);
AttackKind attack_kind_from_string(const std::string& text);

struct AttackConfig {
  AttackKind kind = AttackKind::fgm;
  float epsilon = 0.3f;
  float zero_grad_guard = 1e-12f;

  void validate() const;
};

/// emb + eps * sign(grad), sign(0) = 0. Result is a constant (off-tape).
Tensor fgsm_perturb(const Tensor& emb, const Tensor& grad_emb, float epsilon);

/// emb + eps * g_i / ||g_i||_2 per example i (leading axis), where g_i is the
/// whole flattened slice. Slices with ||g_i|| <= guard are left unchanged.
Tensor fgm_perturb(const Tensor& emb, const Tensor& grad_emb, float epsilon, float guard = 1e-12f);

/// The perturbation delta alone for the configured attack.
Tensor attack_delta(const Tensor& grad_emb, const AttackConfig& attack);

struct Perturbation {
  Tensor delta;     // constant, same shape as the embeddings
  Tensor gradient;  // d loss / d embeddings that produced it
  double loss = 0.0;
};

/// Gradient of the cross-entropy of the classifier w.r.t. `emb` (treated as a
/// constant leaf) and the resulting perturbation. Parameters are frozen for
/// the pass; their gradient buffers are not touched.
Perturbation supervised_perturbation(const Tensor& emb, const Batch& batch, const EncoderParams& params,
                                     const AttackConfig& attack, std::uint64_t dropout_seed, bool train_mode);

/// Gradient of info_nce(pool(encode(view1)), keys) w.r.t. the view-1
/// embeddings and the resulting perturbation. `keys` are held constant.
Perturbation unsupervised_perturbation(const Tensor& view1_emb, const Tensor& keys, const Batch& batch,
                                       const EncoderParams& params, const LossConfig& loss,
                                       const AttackConfig& attack, std::uint64_t dropout_seed, bool train_mode);

struct AdversarialExample {
  Tensor clean_emb;
  Tensor adv_emb;
  Perturbation perturbation;
};

/// Embeds `batch` with `embed_seed`, then perturbs along the cross-entropy
/// gradient computed with `attack_seed` for the layers above the embeddings.
AdversarialExample gen_supervised_adv(const Batch& batch, const EncoderParams& params, const AttackConfig& attack,
                                      std::uint64_t embed_seed, std::uint64_t attack_seed, bool train_mode);

/// Embeds two dropout views and perturbs view 1 along the contrastive gradient.
AdversarialExample gen_unsupervised_adv(const Batch& batch, const EncoderParams& params, const LossConfig& loss,
                                        const AttackConfig& attack, std::uint64_t view1_seed,
                                        std::uint64_t view2_seed, std::uint64_t attack_seed, bool train_mode);

}  // namespace cal
