#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "cal/tensor.hpp"

// Differentiable tensor operations. Every op records itself on the active
// tape when at least one input requires a gradient. No broadcasting: shapes
// must conform exactly and mismatches throw ShapeError naming both shapes.
//
// "Row" ops treat the last axis as columns and all leading axes as rows.

namespace cal {

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, float factor);

/// [M x K] * [K x N] -> [M x N], accumulated in double.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

/// x[R x C] + bias[C] added to every row.
Tensor add_bias(const Tensor& x, const Tensor& bias);

/// Stacks 2-D tensors with equal column count.
Tensor concat_rows(const std::vector<Tensor>& parts);
/// Row r of a 2-D tensor as a [1 x C] tensor.
Tensor select_row(const Tensor& x, std::size_t row);
/// Rows `rows` of a 2-D tensor as a [rows.size() x C] tensor.
Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows);

Tensor reshape(const Tensor& x, Shape shape);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

Tensor softmax_rows(const Tensor& x);
Tensor log_softmax_rows(const Tensor& x);
/// Per-row log-sum-exp -> [R].
Tensor logsumexp_rows(const Tensor& x);
/// x[r, index[r]] -> [R].
Tensor pick(const Tensor& x, std::span<const std::size_t> index);
/// Per-row inner product of equal-shape 2-D tensors -> [R].
Tensor rowwise_dot(const Tensor& a, const Tensor& b);

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, float eps);

/// Inverted dropout with a counter-based mask keyed by (seed, site, index).
Tensor dropout(const Tensor& x, float rate, std::uint64_t seed, std::uint64_t site,
               bool train_mode);

Tensor tanh(const Tensor& x);
Tensor relu(const Tensor& x);
/// tanh approximation of GELU.
Tensor gelu(const Tensor& x);

inline constexpr float kNormGuard = 1e-12f;

/// Rows with L2 norm <= guard pass through unchanged.
Tensor l2_normalize_rows(const Tensor& x, float guard = kNormGuard);

/// table[V x H] gathered at ids -> [ids.size() x H]; backward scatter-adds.
Tensor embedding(const Tensor& table, std::span<const std::int32_t> ids);

inline constexpr float kMaskedLogit = -1e9f;

/// Scaled dot-product self-attention over packed sequences.
///
/// q, k, v are [B*L x H] with row b*L + t holding token t of sequence b.
/// `key_mask` has B*L entries; zero marks a padding key that receives the
/// additive kMaskedLogit before the softmax. Heads split H evenly.
Tensor masked_self_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                             std::span<const std::uint8_t> key_mask, std::size_t batch,
                             std::size_t seq_len, std::size_t heads);

}  // namespace cal
