#include <doctest.h>

#include <cmath>

#include "cal/evaluate.hpp"
#include "cal/synthetic.hpp"

using namespace cal;

namespace {

struct Fixture {
  MotifTask task;
  Vocab vocab;
  EncoderParams params;

  Fixture() {
    MotifTaskConfig mc;
    mc.train_size = 20;
    mc.dev_size = 37;
    task = make_motif_task(mc);
    std::vector<std::string> lines;
    for (auto& r : task.train) lines.push_back(r.sentence1);
    for (auto& r : task.dev) lines.push_back(r.sentence1);
    vocab = Vocab::build(lines, 1);
    EncoderConfig ec;
    ec.vocab_size = vocab.size();
    ec.hidden = 16;
    ec.layers = 1;
    ec.heads = 2;
    ec.ffn_dim = 32;
    ec.max_len = 16;
    ec.init_std = 0.2f;
    params = EncoderParams::init(ec, 4);
  }
};

}  // namespace

TEST_SUITE("evaluate") {
  TEST_CASE("support counts every row across partial batches") {
    Fixture f;
    std::vector<int> preds;
    auto r = evaluate_classification(f.params, f.task.dev, f.vocab, "accuracy", &preds, 8);
    CHECK(r.support == 37);
    CHECK(preds.size() == 37);
    auto whole = evaluate_classification(f.params, f.task.dev, f.vocab, "accuracy", nullptr, 64);
    CHECK(whole.value == r.value);
  }

  TEST_CASE("the reported metric recomputes from the dumped predictions") {
    Fixture f;
    for (const char* m : {"accuracy", "f1", "mcc"}) {
      std::vector<int> preds;
      auto r = evaluate_classification(f.params, f.task.dev, f.vocab, m, &preds);
      std::vector<int> labels;
      for (auto& row : f.task.dev) labels.push_back(row.label);
      CHECK(r.value == classification_metric(m, preds, labels));
    }
  }

  TEST_CASE("evaluation leaves the parameters untouched and is repeatable") {
    Fixture f;
    const auto before = f.params.checksum();
    auto a = evaluate_classification(f.params, f.task.dev, f.vocab);
    auto b = evaluate_classification(f.params, f.task.dev, f.vocab);
    AttackConfig attack;
    attack.epsilon = 0.5f;
    evaluate_under_attack(f.params, f.task.dev, f.vocab, attack);
    CHECK(a.value == b.value);
    CHECK(f.params.checksum() == before);
  }

  TEST_CASE("robust accuracy at epsilon 0 equals clean accuracy") {
    Fixture f;
    AttackConfig attack;
    attack.epsilon = 0.0f;
    auto r = evaluate_under_attack(f.params, f.task.dev, f.vocab, attack);
    CHECK(r.robust.value == r.clean.value);
    REQUIRE(r.robust.attack.has_value());
    CHECK(r.robust.attack->epsilon == 0.0);
  }

  TEST_CASE("a large attack does not help the model") {
    Fixture f;
    AttackConfig attack;
    attack.epsilon = 5.0f;
    auto r = evaluate_under_attack(f.params, f.task.dev, f.vocab, attack);
    CHECK(r.robust.value <= r.clean.value);
  }

  TEST_CASE("an all-zero classifier predicts class 0 everywhere") {
    Fixture f;
    for (float& v : f.params.cls_w.data()) v = 0.0f;
    for (float& v : f.params.cls_b.data()) v = 0.0f;
    std::vector<int> preds;
    evaluate_classification(f.params, f.task.dev, f.vocab, "accuracy", &preds);
    for (int p : preds) CHECK(p == 0);
  }

  TEST_CASE("identical sentences have cosine 1") {
    Fixture f;
    std::vector<SimilarityExample> pairs;
    for (int i = 0; i < 5; ++i) {
      const auto& s = f.task.dev[i].sentence1;
      pairs.push_back({static_cast<double>(i), s, s});
    }
    pairs.push_back({9.0, f.task.dev[0].sentence1, f.task.dev[1].sentence1});
    std::vector<double> cos;
    evaluate_similarity(f.params, pairs, f.vocab, &cos);
    for (int i = 0; i < 5; ++i) CHECK(cos[i] == doctest::Approx(1.0).epsilon(1e-6));
  }

  TEST_CASE("empty data is rejected") {
    Fixture f;
    std::vector<SupervisedExample> none;
    CHECK_THROWS_AS(evaluate_classification(f.params, none, f.vocab), DataError);
  }

  TEST_CASE("embeddings have one row of width H per sentence") {
    Fixture f;
    std::vector<std::string> s{"ma mb mc", "d1 d2", "ma"};
    auto e = embed_sentences(f.params, s, f.vocab, 2);
    REQUIRE(e.size() == 3);
    for (auto& row : e) CHECK(row.size() == 16);
    auto again = embed_sentences(f.params, s, f.vocab, 64);
    CHECK(again == e);
  }
}
