#include "cal/evaluate.hpp"

#include <algorithm>

#include "cal/ops.hpp"
#include "cal/tensor.hpp"

namespace cal {

namespace {

template <typename T, typename Fn>
void for_each_chunk(std::span<const T> rows, std::size_t batch_size, Fn&& fn) {
  for (std::size_t start = 0; start < rows.size(); start += batch_size) {
    const std::size_t n = std::min(batch_size, rows.size() - start);
    fn(rows.subspan(start, n), start);
  }
}

std::vector<int> labels_of(std::span<const SupervisedExample> rows) {
  std::vector<int> out;
  out.reserve(rows.size());
  for (const auto& r : rows) out.push_back(r.label);
  return out;
}

void require_rows(std::size_t n, const char* what) {
  if (n == 0) throw DataError(std::string(what) + ": dataset is empty");
}

}  // namespace

MetricReport evaluate_classification(const EncoderParams& params, std::span<const SupervisedExample> rows,
                                     const Vocab& vocab, const std::string& metric,
                                     std::vector<int>* predictions, std::size_t batch_size) {
  require_rows(rows.size(), "evaluate_classification");
  NoGradScope no_grad;
  std::vector<int> preds;
  preds.reserve(rows.size());
  for_each_chunk(rows, batch_size, [&](std::span<const SupervisedExample> chunk, std::size_t) {
    Batch batch = encode_batch(chunk, vocab, params.config().max_len);
    validate_labels(batch, params.config().num_classes);
    EncoderOutput out = forward_full(batch, params, 0, false);
    auto p = argmax_rows(out.logits);
    preds.insert(preds.end(), p.begin(), p.end());
  });
  const auto labels = labels_of(rows);
  MetricReport report;
  report.metric = metric;
  report.value = classification_metric(metric, preds, labels);
  report.support = rows.size();
  for (std::size_t c = 0; c < params.config().num_classes; ++c) {
    std::size_t n = 0, hit = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (labels[i] != static_cast<int>(c)) continue;
      ++n;
      hit += preds[i] == labels[i];
    }
    if (n > 0) report.per_class["class" + std::to_string(c) + ".recall"] = static_cast<double>(hit) / n;
  }
  if (predictions != nullptr) *predictions = std::move(preds);
  return report;
}

std::vector<std::vector<float>> embed_sentences(const EncoderParams& params, std::span<const std::string> sentences,
                                                const Vocab& vocab, std::size_t batch_size) {
  NoGradScope no_grad;
  std::vector<std::vector<float>> out;
  out.reserve(sentences.size());
  const std::size_t hidden = params.config().hidden;
  for_each_chunk(sentences, batch_size, [&](std::span<const std::string> chunk, std::size_t) {
    Batch batch = encode_sentences(chunk, vocab, params.config().max_len);
    Tensor emb = embed_tokens(batch, params, 0, false);
    Tensor h = encode_from_embeddings(emb, batch, params, 0, false);
    for (std::size_t b = 0; b < chunk.size(); ++b) {
      auto row = h.data().subspan(b * hidden, hidden);
      out.emplace_back(row.begin(), row.end());
    }
  });
  return out;
}

MetricReport evaluate_similarity(const EncoderParams& params, std::span<const SimilarityExample> pairs,
                                 const Vocab& vocab, std::vector<double>* cosines, std::size_t batch_size) {
  require_rows(pairs.size(), "evaluate_similarity");
  std::vector<std::string> left, right;
  std::vector<double> gold;
  for (const auto& p : pairs) {
    left.push_back(p.sentence1);
    right.push_back(p.sentence2);
    gold.push_back(p.score);
  }
  const auto a = embed_sentences(params, left, vocab, batch_size);
  const auto b = embed_sentences(params, right, vocab, batch_size);
  std::vector<double> cos(pairs.size());
  for (std::size_t i = 0; i < pairs.size(); ++i) cos[i] = cosine_similarity(a[i], b[i]);
  MetricReport report;
  report.metric = "spearman";
  report.value = spearman(cos, gold);
  report.support = pairs.size();
  if (cosines != nullptr) *cosines = std::move(cos);
  return report;
}

RobustReport evaluate_under_attack(const EncoderParams& params, std::span<const SupervisedExample> rows,
                                   const Vocab& vocab, const AttackConfig& attack, std::size_t batch_size) {
  require_rows(rows.size(), "evaluate_under_attack");
  attack.validate();
  std::vector<int> clean_preds, adv_preds;
  for_each_chunk(rows, batch_size, [&](std::span<const SupervisedExample> chunk, std::size_t) {
    Batch batch = encode_batch(chunk, vocab, params.config().max_len);
    validate_labels(batch, params.config().num_classes);
    Tensor emb;
    {
      NoGradScope no_grad;
      emb = embed_tokens(batch, params, 0, false);
      auto p = argmax_rows(classify(encode_from_embeddings(emb, batch, params, 0, false), params));
      clean_preds.insert(clean_preds.end(), p.begin(), p.end());
    }
    Perturbation pert = supervised_perturbation(emb, batch, params, attack, 0, false);
    NoGradScope no_grad;
    Tensor adv = add(emb, pert.delta);
    auto p = argmax_rows(classify(encode_from_embeddings(adv, batch, params, 0, false), params));
    adv_preds.insert(adv_preds.end(), p.begin(), p.end());
  });
  const auto labels = labels_of(rows);
  RobustReport r;
  r.clean.metric = "accuracy";
  r.clean.value = accuracy(clean_preds, labels);
  r.clean.support = rows.size();
  r.robust.metric = "robust_accuracy";
  r.robust.value = accuracy(adv_preds, labels);
  r.robust.support = rows.size();
  r.robust.attack = AttackInfo{to_string(attack.kind), attack.epsilon};
  r.robust.notes["attack_space"] = "embedding";
  r.robust.notes["protocol"] = "white-box-embedding-proxy";
  return r;
}

}  // namespace cal
