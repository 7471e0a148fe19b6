#include "cal/encoder.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <random>

#include "cal/errors.hpp"
#include "cal/ops.hpp"

namespace cal {

namespace {

constexpr float kLayerNormEps = 1e-5f;

// Dropout sites within one branch seed.
constexpr std::uint64_t kSiteEmbedding = 0;
std::uint64_t site_attention(std::size_t layer) { return 1 + 2 * layer; }
std::uint64_t site_ffn(std::size_t layer) { return 2 + 2 * layer; }

std::string format_float(float v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", static_cast<double>(v));
  return buf;
}

std::size_t parse_size(const std::map<std::string, std::string>& kv, const std::string& key, std::size_t fallback) {
  auto it = kv.find(key);
  if (it == kv.end()) return fallback;
  try {
    std::size_t used = 0;
    auto v = std::stoull(it->second, &used);
    if (used != it->second.size()) throw std::invalid_argument("trailing characters");
    return static_cast<std::size_t>(v);
  } catch (const std::exception&) {
    throw ConfigError(key, "expected a non-negative integer, got '" + it->second + "'");
  }
}

float parse_float(const std::map<std::string, std::string>& kv, const std::string& key, float fallback) {
  auto it = kv.find(key);
  if (it == kv.end()) return fallback;
  try {
    std::size_t used = 0;
    auto v = std::stof(it->second, &used);
    if (used != it->second.size()) throw std::invalid_argument("trailing characters");
    return v;
  } catch (const std::exception&) {
    throw ConfigError(key, "expected a number, got '" + it->second + "'");
  }
}

Tensor normal_tensor(Shape shape, float stddev, std::mt19937_64& rng) {
  std::normal_distribution<float> dist(0.0f, stddev);
  std::vector<float> data(shape_numel(shape));
  for (auto& v : data) v = dist(rng);
  return Tensor::from_data(std::move(shape), std::move(data), true);
}

Tensor zeros_param(Shape shape) { return Tensor::zeros(std::move(shape), true); }
Tensor ones_param(Shape shape) { return Tensor::full(std::move(shape), 1.0f, true); }

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) { return add_bias(matmul(x, w), b); }

}  // namespace

void EncoderConfig::validate() const {
  if (vocab_size < 1) throw ConfigError("vocab_size", "must be at least 1");
  if (hidden < 1) throw ConfigError("hidden", "must be at least 1");
  if (layers < 1) throw ConfigError("layers", "must be at least 1");
  if (heads < 1) throw ConfigError("heads", "must be at least 1");
  if (hidden % heads != 0) throw ConfigError("heads", "hidden size must be divisible by heads");
  if (ffn_dim < 1) throw ConfigError("ffn_dim", "must be at least 1");
  if (max_len < 3) throw ConfigError("max_len", "must be at least 3");
  if (!(dropout >= 0.0f && dropout < 1.0f)) throw ConfigError("dropout", "must lie in [0, 1)");
  if (num_classes == 1) throw ConfigError("num_classes", "must be 0 (no classifier) or at least 2");
  if (!(init_std > 0.0f)) throw ConfigError("init_std", "must be positive");
}

std::map<std::string, std::string> EncoderConfig::to_map() const {
  return {
      {"vocab_size", std::to_string(vocab_size)}, {"hidden", std::to_string(hidden)},
      {"layers", std::to_string(layers)},         {"heads", std::to_string(heads)},
      {"ffn_dim", std::to_string(ffn_dim)},       {"dropout", format_float(dropout)},
      {"max_len", std::to_string(max_len)},       {"num_classes", std::to_string(num_classes)},
      {"init_std", format_float(init_std)},
  };
}

EncoderConfig EncoderConfig::from_map(const std::map<std::string, std::string>& kv) {
  EncoderConfig c;
  c.vocab_size = parse_size(kv, "vocab_size", c.vocab_size);
  c.hidden = parse_size(kv, "hidden", c.hidden);
  c.layers = parse_size(kv, "layers", c.layers);
  c.heads = parse_size(kv, "heads", c.heads);
  c.ffn_dim = parse_size(kv, "ffn_dim", c.ffn_dim);
  c.dropout = parse_float(kv, "dropout", c.dropout);
  c.max_len = parse_size(kv, "max_len", c.max_len);
  c.num_classes = parse_size(kv, "num_classes", c.num_classes);
  c.init_std = parse_float(kv, "init_std", c.init_std);
  return c;
}

EncoderParams EncoderParams::init(const EncoderConfig& config, std::uint64_t seed) {
  config.validate();
  std::mt19937_64 rng(seed);
  const std::size_t H = config.hidden;
  const float s = config.init_std;
  EncoderParams p;
  p.config_ = config;
  p.token_embedding = normal_tensor({config.vocab_size, H}, s, rng);
  p.position_embedding = normal_tensor({config.max_len, H}, s, rng);
  p.emb_ln_gamma = ones_param({H});
  p.emb_ln_beta = zeros_param({H});
  for (std::size_t l = 0; l < config.layers; ++l) {
    LayerParams lp;
    lp.wq = normal_tensor({H, H}, s, rng);
    lp.bq = zeros_param({H});
    lp.wk = normal_tensor({H, H}, s, rng);
    lp.bk = zeros_param({H});
    lp.wv = normal_tensor({H, H}, s, rng);
    lp.bv = zeros_param({H});
    lp.wo = normal_tensor({H, H}, s, rng);
    lp.bo = zeros_param({H});
    lp.ln1_gamma = ones_param({H});
    lp.ln1_beta = zeros_param({H});
    lp.w1 = normal_tensor({H, config.ffn_dim}, s, rng);
    lp.b1 = zeros_param({config.ffn_dim});
    lp.w2 = normal_tensor({config.ffn_dim, H}, s, rng);
    lp.b2 = zeros_param({H});
    lp.ln2_gamma = ones_param({H});
    lp.ln2_beta = zeros_param({H});
    p.layers.push_back(std::move(lp));
  }
  p.pool_w = normal_tensor({H, H}, s, rng);
  p.pool_b = zeros_param({H});
  if (config.num_classes > 0) {
    p.cls_w = normal_tensor({H, config.num_classes}, s, rng);
    p.cls_b = zeros_param({config.num_classes});
  }
  return p;
}

std::vector<std::pair<std::string, Tensor>> EncoderParams::named() const {
  std::vector<std::pair<std::string, Tensor>> out;
  out.emplace_back("embeddings.token", token_embedding);
  out.emplace_back("embeddings.position", position_embedding);
  out.emplace_back("embeddings.ln.gamma", emb_ln_gamma);
  out.emplace_back("embeddings.ln.beta", emb_ln_beta);
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& lp = layers[l];
    const std::string prefix = "layer" + std::to_string(l) + ".";
    out.emplace_back(prefix + "attn.wq", lp.wq);
    out.emplace_back(prefix + "attn.bq", lp.bq);
    out.emplace_back(prefix + "attn.wk", lp.wk);
    out.emplace_back(prefix + "attn.bk", lp.bk);
    out.emplace_back(prefix + "attn.wv", lp.wv);
    out.emplace_back(prefix + "attn.bv", lp.bv);
    out.emplace_back(prefix + "attn.wo", lp.wo);
    out.emplace_back(prefix + "attn.bo", lp.bo);
    out.emplace_back(prefix + "ln1.gamma", lp.ln1_gamma);
    out.emplace_back(prefix + "ln1.beta", lp.ln1_beta);
    out.emplace_back(prefix + "ffn.w1", lp.w1);
    out.emplace_back(prefix + "ffn.b1", lp.b1);
    out.emplace_back(prefix + "ffn.w2", lp.w2);
    out.emplace_back(prefix + "ffn.b2", lp.b2);
    out.emplace_back(prefix + "ln2.gamma", lp.ln2_gamma);
    out.emplace_back(prefix + "ln2.beta", lp.ln2_beta);
  }
  out.emplace_back("pooler.w", pool_w);
  out.emplace_back("pooler.b", pool_b);
  if (cls_w.defined()) {
    out.emplace_back("classifier.w", cls_w);
    out.emplace_back("classifier.b", cls_b);
  }
  return out;
}

std::size_t EncoderParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : named()) n += t.numel();
  return n;
}

void EncoderParams::zero_grad() {
  for (auto& [name, t] : named()) t.zero_grad();
}

EncoderParams EncoderParams::snapshot() const {
  EncoderParams copy = *this;
  auto fresh = [](const Tensor& t) { return t.clone(); };
  copy.token_embedding = fresh(token_embedding);
  copy.position_embedding = fresh(position_embedding);
  copy.emb_ln_gamma = fresh(emb_ln_gamma);
  copy.emb_ln_beta = fresh(emb_ln_beta);
  for (auto& lp : copy.layers) {
    for (Tensor* t : {&lp.wq, &lp.bq, &lp.wk, &lp.bk, &lp.wv, &lp.bv, &lp.wo, &lp.bo, &lp.ln1_gamma,
                      &lp.ln1_beta, &lp.w1, &lp.b1, &lp.w2, &lp.b2, &lp.ln2_gamma, &lp.ln2_beta}) {
      *t = fresh(*t);
    }
  }
  copy.pool_w = fresh(pool_w);
  copy.pool_b = fresh(pool_b);
  if (cls_w.defined()) {
    copy.cls_w = fresh(cls_w);
    copy.cls_b = fresh(cls_b);
  }
  return copy;
}

void EncoderParams::assign_from(const EncoderParams& other) {
  auto dst = named();
  auto src = other.named();
  if (dst.size() != src.size()) throw ShapeError("assign_from: parameter lists differ");
  for (std::size_t i = 0; i < dst.size(); ++i) {
    if (dst[i].second.shape() != src[i].second.shape()) {
      throw ShapeError("assign_from: " + dst[i].first + " " + shape_str(dst[i].second.shape()) + " vs " +
                       shape_str(src[i].second.shape()));
    }
    auto d = dst[i].second.data();
    auto s = src[i].second.data();
    std::copy(s.begin(), s.end(), d.begin());
  }
  bump_version();
}

std::uint64_t EncoderParams::checksum() const {
  std::uint64_t h = 1469598103934665603ull;
  for (const auto& [name, t] : named()) {
    for (float v : t.data()) {
      std::uint32_t bits;
      std::memcpy(&bits, &v, sizeof bits);
      for (int b = 0; b < 4; ++b) {
        h ^= (bits >> (8 * b)) & 0xFFu;
        h *= 1099511628211ull;
      }
    }
  }
  return h;
}

bool EncoderParams::all_finite() const {
  for (const auto& [name, t] : named()) {
    if (!cal::all_finite(t.data())) return false;
  }
  return true;
}

FrozenParams::FrozenParams(const EncoderParams& params) {
  for (auto& [name, t] : params.named()) {
    saved_.emplace_back(t, t.requires_grad());
    Tensor handle = t;
    handle.set_requires_grad(false);
  }
}

FrozenParams::~FrozenParams() {
  for (auto& [t, flag] : saved_) t.set_requires_grad(flag);
}

Tensor embed_tokens(const Batch& batch, const EncoderParams& params, std::uint64_t dropout_seed,
                    bool train_mode) {
  const auto& cfg = params.config();
  if (batch.seq_len > cfg.max_len) {
    throw ShapeError("embed_tokens: sequence length " + std::to_string(batch.seq_len) + " exceeds max_len " +
                     std::to_string(cfg.max_len));
  }
  std::vector<std::int32_t> positions(batch.tokens());
  for (std::size_t b = 0; b < batch.batch_size; ++b)
    for (std::size_t t = 0; t < batch.seq_len; ++t)
      positions[b * batch.seq_len + t] = static_cast<std::int32_t>(t);
  Tensor x = add(embedding(params.token_embedding, batch.token_ids), embedding(params.position_embedding, positions));
  x = layer_norm(x, params.emb_ln_gamma, params.emb_ln_beta, kLayerNormEps);
  x = dropout(x, cfg.dropout, dropout_seed, kSiteEmbedding, train_mode);
  return reshape(x, {batch.batch_size, batch.seq_len, cfg.hidden});
}

Tensor encode_from_embeddings(const Tensor& emb, const Batch& batch, const EncoderParams& params,
                              std::uint64_t dropout_seed, bool train_mode) {
  const auto& cfg = params.config();
  const Shape expected{batch.batch_size, batch.seq_len, cfg.hidden};
  if (emb.shape() != expected) {
    throw ShapeError("encode_from_embeddings: embeddings " + shape_str(emb.shape()) + " vs expected " +
                     shape_str(expected));
  }
  Tensor x = reshape(emb, {batch.tokens(), cfg.hidden});
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    const auto& lp = params.layers[l];
    Tensor q = linear(x, lp.wq, lp.bq);
    Tensor k = linear(x, lp.wk, lp.bk);
    Tensor v = linear(x, lp.wv, lp.bv);
    Tensor ctx = masked_self_attention(q, k, v, batch.attn_mask, batch.batch_size, batch.seq_len, cfg.heads);
    Tensor attn = dropout(linear(ctx, lp.wo, lp.bo), cfg.dropout, dropout_seed, site_attention(l), train_mode);
    x = layer_norm(add(x, attn), lp.ln1_gamma, lp.ln1_beta, kLayerNormEps);
    Tensor ff = linear(gelu(linear(x, lp.w1, lp.b1)), lp.w2, lp.b2);
    ff = dropout(ff, cfg.dropout, dropout_seed, site_ffn(l), train_mode);
    x = layer_norm(add(x, ff), lp.ln2_gamma, lp.ln2_beta, kLayerNormEps);
  }
  std::vector<std::size_t> cls_rows(batch.batch_size);
  for (std::size_t b = 0; b < batch.batch_size; ++b) cls_rows[b] = b * batch.seq_len;
  return gather_rows(x, cls_rows);
}

Tensor pool(const Tensor& h, const EncoderParams& params) {
  return cal::tanh(linear(h, params.pool_w, params.pool_b));
}

Tensor classify(const Tensor& h, const EncoderParams& params) {
  if (params.config().num_classes == 0 || !params.cls_w.defined()) {
    throw ConfigError("num_classes", "encoder has no classifier head");
  }
  return linear(h, params.cls_w, params.cls_b);
}

EncoderOutput forward_full(const Batch& batch, const EncoderParams& params, std::uint64_t dropout_seed,
                           bool train_mode) {
  EncoderOutput out;
  out.emb = embed_tokens(batch, params, dropout_seed, train_mode);
  out.h = encode_from_embeddings(out.emb, batch, params, dropout_seed, train_mode);
  out.z = pool(out.h, params);
  if (params.config().num_classes > 0) out.logits = classify(out.h, params);
  return out;
}

std::vector<int> argmax_rows(const Tensor& logits) {
  const std::size_t cols = logits.shape().back();
  const std::size_t rows = logits.numel() / cols;
  std::vector<int> out(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < cols; ++c) {
      if (logits.data()[r * cols + c] > logits.data()[r * cols + best]) best = c;
    }
    out[r] = static_cast<int>(best);
  }
  return out;
}

}  // namespace cal
