#include <doctest.h>

#include "cal/encoder.hpp"
#include "cal/errors.hpp"
#include "cal/ops.hpp"

using namespace cal;

namespace {

EncoderConfig small_config() {
  EncoderConfig c;
  c.vocab_size = 10;
  c.hidden = 8;
  c.layers = 2;
  c.heads = 2;
  c.ffn_dim = 16;
  c.max_len = 8;
  c.init_std = 0.2f;
  return c;
}

Batch sample_batch(std::size_t max_len) {
  Vocab v = Vocab::from_tokens({"a", "b", "c", "d", "e", "f"});
  std::vector<std::string> s{"a b c", "d e f a"};
  return encode_sentences(s, v, max_len);
}

}  // namespace

TEST_SUITE("encoder") {
  TEST_CASE("config validation names the field") {
    EncoderConfig c = small_config();
    c.heads = 3;
    CHECK_THROWS_WITH_AS(c.validate(), doctest::Contains("heads"), ConfigError);
    c = small_config();
    c.dropout = 1.0f;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = small_config();
    CHECK(EncoderConfig::from_map(c.to_map()) == c);
  }

  TEST_CASE("forward shapes are [B x H] and [B x C]") {
    auto p = EncoderParams::init(small_config(), 1);
    Batch b = sample_batch(8);
    NoGradScope ng;
    auto out = forward_full(b, p, 0, false);
    CHECK(out.emb.shape() == Shape{2, 8, 8});
    CHECK(out.h.shape() == Shape{2, 8});
    CHECK(out.z.shape() == Shape{2, 8});
    CHECK(out.logits.shape() == Shape{2, 2});
    for (float v : out.z.data()) CHECK(std::abs(v) <= 1.0f);
  }

  TEST_CASE("eval mode is deterministic and train mode depends on the seed") {
    auto p = EncoderParams::init(small_config(), 1);
    Batch b = sample_batch(8);
    NoGradScope ng;
    auto e1 = forward_full(b, p, 1, false).h, e2 = forward_full(b, p, 2, false).h;
    auto t1 = forward_full(b, p, 1, true).h, t1b = forward_full(b, p, 1, true).h, t2 = forward_full(b, p, 2, true).h;
    bool seed_matters = false;
    for (std::size_t i = 0; i < e1.numel(); ++i) {
      CHECK(e1.data()[i] == e2.data()[i]);
      CHECK(t1.data()[i] == t1b.data()[i]);
      seed_matters |= t1.data()[i] != t2.data()[i];
    }
    CHECK(seed_matters);
  }

  TEST_CASE("extra padding does not change the representation") {
    auto p = EncoderParams::init(small_config(), 3);
    NoGradScope ng;
    auto short_h = forward_full(sample_batch(6), p, 0, false).h;
    auto long_h = forward_full(sample_batch(8), p, 0, false).h;
    for (std::size_t i = 0; i < short_h.numel(); ++i) CHECK(short_h.data()[i] == doctest::Approx(long_h.data()[i]).epsilon(1e-5));
  }

  TEST_CASE("parameter listing is stable and complete") {
    auto p = EncoderParams::init(small_config(), 1);
    auto named = p.named();
    CHECK(named.front().first == "embeddings.token");
    CHECK(named.back().first == "classifier.b");
    std::size_t total = 0;
    for (auto& [n, t] : named) total += t.numel();
    CHECK(total == p.parameter_count());
    EncoderConfig headless = small_config();
    headless.num_classes = 0;
    auto q = EncoderParams::init(headless, 1);
    CHECK(q.named().back().first == "pooler.b");
    NoGradScope ng;
    Tensor h = forward_full(sample_batch(8), q, 0, false).h;
    CHECK_THROWS_AS(classify(h, q), ConfigError);
  }

  TEST_CASE("same seed gives identical parameters; snapshot is independent") {
    auto p = EncoderParams::init(small_config(), 9), q = EncoderParams::init(small_config(), 9);
    CHECK(p.checksum() == q.checksum());
    auto snap = p.snapshot();
    p.token_embedding.data()[0] += 1.0f;
    CHECK(p.checksum() != snap.checksum());
    p.assign_from(snap);
    CHECK(p.checksum() == q.checksum());
  }

  TEST_CASE("FrozenParams records activation gradients only") {
    auto p = EncoderParams::init(small_config(), 1);
    Batch b = sample_batch(8);
    {
      FrozenParams freeze(p);
      Tensor emb;
      {
        NoGradScope ng;
        emb = embed_tokens(b, p, 0, false);
      }
      Tensor x = emb.detach();
      x.set_requires_grad(true);
      Tape tape;
      TapeScope scope(tape);
      tape.backward(sum(encode_from_embeddings(x, b, p, 0, false)));
      CHECK(x.has_grad());
    }
    for (auto& [n, t] : p.named()) {
      CHECK(t.requires_grad());
      CHECK_FALSE(t.has_grad());
    }
  }

  TEST_CASE("embedding input shape is checked") {
    auto p = EncoderParams::init(small_config(), 1);
    Batch b = sample_batch(8);
    CHECK_THROWS_AS(encode_from_embeddings(Tensor::zeros({2, 8, 4}), b, p, 0, false), ShapeError);
  }

  TEST_CASE("argmax ties go to the lowest index") {
    Tensor l = Tensor::from_data({2, 3}, {1, 1, 1, 0, 2, 2});
    auto a = argmax_rows(l);
    CHECK(a[0] == 0);
    CHECK(a[1] == 1);
  }
}
