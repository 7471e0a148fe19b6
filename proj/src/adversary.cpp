#include "cal/adversary.hpp"

#include <cmath>

#include "cal/errors.hpp"
#include "cal/ops.hpp"

namespace cal {

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": embeddings " + shape_str(a.shape()) + " vs gradient " +
                     shape_str(b.shape()));
  }
}

Tensor grad_tensor(const Tensor& leaf) {
  std::vector<float> g(leaf.grad().begin(), leaf.grad().end());
  if (g.empty()) g.assign(leaf.numel(), 0.0f);
  return Tensor::from_data(leaf.shape(), std::move(g));
}

Tensor leaf_copy(const Tensor& values) {
  Tensor x = values.detach();
  x.set_requires_grad(true);
  return x;
}

}  // namespace

std::string to_string(AttackKind kind) { return kind == AttackKind::fgsm ? "fgsm" : "fgm"; }

AttackKind attack_kind_from_string(const std::string& text) {
  if (text == "fgsm") return AttackKind::fgsm;
  if (text == "fgm") return AttackKind::fgm;
  throw ConfigError("attack", "expected fgsm or fgm, got '" + text + "'");
}

void AttackConfig::validate() const {
  if (!(epsilon >= 0.0f) || !std::isfinite(epsilon)) throw ConfigError("epsilon", "must be a finite value >= 0");
  if (!(zero_grad_guard >= 0.0f)) throw ConfigError("zero_grad_guard", "must be >= 0");
}

Tensor fgsm_perturb(const Tensor& emb, const Tensor& grad_emb, float epsilon) {
  require_same_shape(emb, grad_emb, "fgsm_perturb");
  std::vector<float> out(emb.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const float g = grad_emb.data()[i];
    const float s = g > 0.0f ? 1.0f : (g < 0.0f ? -1.0f : 0.0f);
    out[i] = emb.data()[i] + epsilon * s;
  }
  return Tensor::from_data(emb.shape(), std::move(out));
}

Tensor fgm_perturb(const Tensor& emb, const Tensor& grad_emb, float epsilon, float guard) {
  require_same_shape(emb, grad_emb, "fgm_perturb");
  const std::size_t examples = emb.dim(0);
  const std::size_t slice = emb.numel() / examples;
  std::vector<float> out(emb.data().begin(), emb.data().end());
  for (std::size_t b = 0; b < examples; ++b) {
    const float* g = grad_emb.data().data() + b * slice;
    double sq = 0.0;
    for (std::size_t i = 0; i < slice; ++i) sq += static_cast<double>(g[i]) * g[i];
    const double norm = std::sqrt(sq);
    if (!(norm > guard)) continue;
    const double factor = epsilon / norm;
    for (std::size_t i = 0; i < slice; ++i) out[b * slice + i] += static_cast<float>(factor * g[i]);
  }
  return Tensor::from_data(emb.shape(), std::move(out));
}

Tensor attack_delta(const Tensor& grad_emb, const AttackConfig& attack) {
  Tensor zero = Tensor::zeros(grad_emb.shape());
  return attack.kind == AttackKind::fgsm ? fgsm_perturb(zero, grad_emb, attack.epsilon)
                                         : fgm_perturb(zero, grad_emb, attack.epsilon, attack.zero_grad_guard);
}

Perturbation supervised_perturbation(const Tensor& emb, const Batch& batch, const EncoderParams& params,
                                     const AttackConfig& attack, std::uint64_t dropout_seed, bool train_mode) {
  if (batch.labels.size() != batch.batch_size) {
    throw DataError("supervised perturbation requires a labeled batch");
  }
  FrozenParams freeze(params);
  Tensor x = leaf_copy(emb);
  Perturbation result;
  {
    Tape tape;
    TapeScope scope(tape);
    Tensor h = encode_from_embeddings(x, batch, params, dropout_seed, train_mode);
    Tensor loss = cross_entropy(classify(h, params), batch.labels);
    tape.backward(loss);
    result.loss = loss.item();
  }
  result.gradient = grad_tensor(x);
  result.delta = attack_delta(result.gradient, attack);
  return result;
}

Perturbation unsupervised_perturbation(const Tensor& view1_emb, const Tensor& keys, const Batch& batch,
                                       const EncoderParams& params, const LossConfig& loss,
                                       const AttackConfig& attack, std::uint64_t dropout_seed, bool train_mode) {
  FrozenParams freeze(params);
  Tensor x = leaf_copy(view1_emb);
  Tensor fixed_keys = keys.detach();
  Perturbation result;
  {
    Tape tape;
    TapeScope scope(tape);
    Tensor z = pool(encode_from_embeddings(x, batch, params, dropout_seed, train_mode), params);
    Tensor ct = info_nce(z, fixed_keys, loss.temperature, loss.negative_mode);
    if (ct.requires_grad()) tape.backward(ct);
    result.loss = ct.item();
  }
  result.gradient = grad_tensor(x);
  result.delta = attack_delta(result.gradient, attack);
  return result;
}

AdversarialExample gen_supervised_adv(const Batch& batch, const EncoderParams& params, const AttackConfig& attack,
                                      std::uint64_t embed_seed, std::uint64_t attack_seed, bool train_mode) {
  AdversarialExample out;
  {
    NoGradScope no_grad;
    out.clean_emb = embed_tokens(batch, params, embed_seed, train_mode).detach();
  }
  out.perturbation = supervised_perturbation(out.clean_emb, batch, params, attack, attack_seed, train_mode);
  NoGradScope no_grad;
  out.adv_emb = add(out.clean_emb, out.perturbation.delta);
  return out;
}

AdversarialExample gen_unsupervised_adv(const Batch& batch, const EncoderParams& params, const LossConfig& loss,
                                        const AttackConfig& attack, std::uint64_t view1_seed,
                                        std::uint64_t view2_seed, std::uint64_t attack_seed, bool train_mode) {
  AdversarialExample out;
  Tensor keys;
  {
    NoGradScope no_grad;
    out.clean_emb = embed_tokens(batch, params, view1_seed, train_mode).detach();
    Tensor emb2 = embed_tokens(batch, params, view2_seed, train_mode);
    keys = pool(encode_from_embeddings(emb2, batch, params, view2_seed, train_mode), params).detach();
  }
  out.perturbation =
      unsupervised_perturbation(out.clean_emb, keys, batch, params, loss, attack, attack_seed, train_mode);
  NoGradScope no_grad;
  out.adv_emb = add(out.clean_emb, out.perturbation.delta);
  return out;
}

}  // namespace cal
