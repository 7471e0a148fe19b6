#include <doctest.h>

#include <cmath>
#include <random>

#include "cal/adversary.hpp"
#include "cal/errors.hpp"
#include "cal/ops.hpp"

using namespace cal;

namespace {

Tensor random_tensor(std::mt19937_64& rng, Shape s) {
  std::normal_distribution<float> d;
  std::vector<float> v(shape_numel(s));
  for (auto& x : v) x = d(rng);
  return Tensor::from_data(s, v);
}

struct Fixture {
  Vocab vocab = Vocab::from_tokens({"a", "b", "c", "d"});
  EncoderParams params;
  Batch batch;
  Fixture() {
    EncoderConfig c;
    c.vocab_size = vocab.size();
    c.hidden = 8;
    c.layers = 1;
    c.heads = 2;
    c.ffn_dim = 16;
    c.max_len = 6;
    c.init_std = 0.3f;
    params = EncoderParams::init(c, 4);
    std::vector<SupervisedExample> rows{{1, "a b", std::nullopt}, {0, "c d a", std::nullopt}};
    batch = encode_batch(rows, vocab, 6);
  }
};

}  // namespace

TEST_SUITE("adversary") {
  TEST_CASE("FGM has exact per-example L2 norm epsilon") {
    std::mt19937_64 rng(1);
    for (float eps : {0.1f, 0.3f, 0.5f}) {
      Tensor g = random_tensor(rng, {3, 4, 5});
      Tensor d = attack_delta(g, {AttackKind::fgm, eps});
      for (std::size_t b = 0; b < 3; ++b) {
        double sq = 0;
        for (std::size_t i = 0; i < 20; ++i) sq += std::pow(d.data()[b * 20 + i], 2);
        CHECK(std::sqrt(sq) == doctest::Approx(eps).epsilon(1e-6));
      }
    }
  }

  TEST_CASE("FGSM components are in {-eps, 0, +eps} and follow the sign") {
    Tensor g = Tensor::from_data({1, 4}, {2.0f, -0.1f, 0.0f, 1e-30f});
    Tensor e = Tensor::zeros({1, 4});
    Tensor out = fgsm_perturb(e, g, 0.25f);
    CHECK(out.data()[0] == 0.25f);
    CHECK(out.data()[1] == -0.25f);
    CHECK(out.data()[2] == 0.0f);
    CHECK(out.data()[3] == 0.25f);
  }

  TEST_CASE("zero gradient leaves FGM input unchanged; eps 0 is the identity") {
    std::mt19937_64 rng(2);
    Tensor e = random_tensor(rng, {2, 3});
    Tensor z = Tensor::zeros({2, 3});
    Tensor out = fgm_perturb(e, z, 0.3f);
    for (std::size_t i = 0; i < 6; ++i) CHECK(out.data()[i] == e.data()[i]);
    out = fgm_perturb(e, random_tensor(rng, {2, 3}), 0.0f);
    for (std::size_t i = 0; i < 6; ++i) CHECK(out.data()[i] == e.data()[i]);
    CHECK_THROWS_AS(fgm_perturb(e, Tensor::zeros({3, 2}), 0.1f), ShapeError);
  }

  TEST_CASE("attack config validation") {
    AttackConfig a;
    a.epsilon = -0.1f;
    CHECK_THROWS_AS(a.validate(), ConfigError);
    CHECK(attack_kind_from_string("fgsm") == AttackKind::fgsm);
    CHECK_THROWS_AS(attack_kind_from_string("pgd"), ConfigError);
  }

  TEST_CASE("supervised perturbation is a constant and leaves parameter grads untouched") {
    Fixture f;
    auto adv = gen_supervised_adv(f.batch, f.params, {}, 1, 1, true);
    CHECK_FALSE(adv.adv_emb.requires_grad());
    CHECK_FALSE(adv.perturbation.delta.requires_grad());
    for (auto& [n, t] : f.params.named()) CHECK_FALSE(t.has_grad());
    CHECK(adv.adv_emb.shape() == adv.clean_emb.shape());
  }

  TEST_CASE("a small FGM step increases the attacked loss") {
    Fixture f;
    AttackConfig attack{AttackKind::fgm, 1e-3f};
    Tensor emb;
    {
      NoGradScope ng;
      emb = embed_tokens(f.batch, f.params, 0, false);
    }
    auto p = supervised_perturbation(emb, f.batch, f.params, attack, 0, false);
    NoGradScope ng;
    const double clean = cross_entropy(classify(encode_from_embeddings(emb, f.batch, f.params, 0, false), f.params),
                                       f.batch.labels)
                             .item();
    const double adv =
        cross_entropy(classify(encode_from_embeddings(add(emb, p.delta), f.batch, f.params, 0, false), f.params),
                      f.batch.labels)
            .item();
    CHECK(clean == doctest::Approx(p.loss));
    CHECK(adv > clean);
  }

  TEST_CASE("unsupervised perturbation from a single example is zero") {
    Fixture f;
    std::vector<std::string> one{"a b c"};
    Batch b = encode_sentences(one, f.vocab, 6);
    LossConfig loss;
    auto adv = gen_unsupervised_adv(b, f.params, loss, {}, 1, 2, 1, true);
    for (float v : adv.perturbation.delta.data()) CHECK(v == 0.0f);
  }
}
