#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "cal/adversary.hpp"
#include "cal/encoder.hpp"
#include "cal/metrics.hpp"
#include "cal/text.hpp"

namespace cal {

inline constexpr std::size_t kEvalBatchSize = 64;

/// Eval-mode forward, argmax of the logits, then the named task metric
/// (accuracy, f1 or mcc). `predictions`, when given, receives one entry per row.
MetricReport evaluate_classification(const EncoderParams& params, std::span<const SupervisedExample> rows,
                                     const Vocab& vocab, const std::string& metric = "accuracy",
                                     std::vector<int>* predictions = nullptr,
                                     std::size_t batch_size = kEvalBatchSize);

/// Each side of every pair is encoded on its own; the [CLS] hidden vector is
/// the representation. Reports Spearman(cosine, gold).
MetricReport evaluate_similarity(const EncoderParams& params, std::span<const SimilarityExample> pairs,
                                 const Vocab& vocab, std::vector<double>* cosines = nullptr,
                                 std::size_t batch_size = kEvalBatchSize);

struct RobustReport {
  MetricReport clean;
  MetricReport robust;
};

/// White-box attack on the evaluated model in embedding space: every batch
/// is perturbed along its own cross-entropy gradient (eval mode, true labels)
/// and classified from the perturbed embeddings.
RobustReport evaluate_under_attack(const EncoderParams& params, std::span<const SupervisedExample> rows,
                                   const Vocab& vocab, const AttackConfig& attack,
                                   std::size_t batch_size = kEvalBatchSize);

/// [N x H] matrix of [CLS] hidden vectors, one row per sentence, in order.
std::vector<std::vector<float>> embed_sentences(const EncoderParams& params, std::span<const std::string> sentences,
                                                const Vocab& vocab, std::size_t batch_size = kEvalBatchSize);

}  // namespace cal
