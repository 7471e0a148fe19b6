#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "cal/tensor.hpp"
#include "cal/text.hpp"

namespace cal {

struct EncoderConfig {
  std::size_t vocab_size = 0;
  std::size_t hidden = 64;
  std::size_t layers = 2;
  std::size_t heads = 4;
  std::size_t ffn_dim = 256;
  float dropout = 0.1f;
  std::size_t max_len = 32;
  std::size_t num_classes = 2;  // 0 for encoders without a classifier head
  float init_std = 0.02f;

  void validate() const;
  std::map<std::string, std::string> to_map() const;
  static EncoderConfig from_map(const std::map<std::string, std::string>& kv);
  bool operator==(const EncoderConfig&) const = default;
};

struct LayerParams {
  Tensor wq, bq, wk, bk, wv, bv, wo, bo;
  Tensor ln1_gamma, ln1_beta;
  Tensor w1, b1, w2, b2;
  Tensor ln2_gamma, ln2_beta;
};

/// Every learnable tensor of the encoder. One instance is shared by all
/// forward branches of a training step; `version()` advances on each update.
class EncoderParams {
 public:
  static EncoderParams init(const EncoderConfig& config, std::uint64_t seed);

  const EncoderConfig& config() const noexcept { return config_; }

  Tensor token_embedding;
  Tensor position_embedding;
  Tensor emb_ln_gamma, emb_ln_beta;
  std::vector<LayerParams> layers;
  Tensor pool_w, pool_b;
  Tensor cls_w, cls_b;  // undefined when num_classes == 0

  /// Stable (name, tensor) listing used by the optimizer and checkpoints.
  std::vector<std::pair<std::string, Tensor>> named() const;
  std::size_t parameter_count() const;

  std::uint64_t version() const noexcept { return version_; }
  void bump_version() noexcept { ++version_; }

  void zero_grad();
  /// Deep copy with independent storage.
  EncoderParams snapshot() const;
  /// Overwrites values from `other`, which must have identical shapes.
  void assign_from(const EncoderParams& other);
  /// FNV-1a over the raw parameter bits.
  std::uint64_t checksum() const;
  bool all_finite() const;

 private:
  EncoderConfig config_;
  std::uint64_t version_ = 0;
};

/// Marks every parameter as not requiring grad for the guard's lifetime, so
/// a pass through the encoder records only activation gradients.
class FrozenParams {
 public:
  explicit FrozenParams(const EncoderParams& params);
  ~FrozenParams();
  FrozenParams(const FrozenParams&) = delete;
  FrozenParams& operator=(const FrozenParams&) = delete;

 private:
  std::vector<std::pair<Tensor, bool>> saved_;
};

/// Token + position embeddings, layer norm, dropout -> [B x L x H].
/// This is the injection point for embedding-space perturbations.
Tensor embed_tokens(const Batch& batch, const EncoderParams& params, std::uint64_t dropout_seed,
                    bool train_mode);

/// Transformer stack over `emb` ([B x L x H]); returns the [CLS] rows [B x H].
Tensor encode_from_embeddings(const Tensor& emb, const Batch& batch, const EncoderParams& params,
                              std::uint64_t dropout_seed, bool train_mode);

/// tanh(h W + b): projection into the contrastive space.
Tensor pool(const Tensor& h, const EncoderParams& params);

/// h W + b; raw logits. Throws ConfigError for encoders without a classifier.
Tensor classify(const Tensor& h, const EncoderParams& params);

struct EncoderOutput {
  Tensor emb;
  Tensor h;
  Tensor z;
  Tensor logits;  // undefined when num_classes == 0
};

EncoderOutput forward_full(const Batch& batch, const EncoderParams& params, std::uint64_t dropout_seed,
                           bool train_mode);

/// Row-major argmax per row; ties go to the lowest index.
std::vector<int> argmax_rows(const Tensor& logits);

}  // namespace cal
