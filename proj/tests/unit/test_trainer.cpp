#include <doctest.h>

#include <cmath>
#include <limits>
#include <sstream>

#include "cal/errors.hpp"
#include "cal/evaluate.hpp"
#include "cal/trainer.hpp"

using namespace cal;

namespace {

struct Toy {
  Vocab vocab = Vocab::from_tokens({"x", "a", "b", "c", "d", "e"});
  std::vector<SupervisedExample> rows;
  std::vector<std::string> sentences;
  EncoderConfig config;

  explicit Toy(float dropout = 0.1f, std::size_t num_classes = 2) {
    const char* words[] = {"a", "b", "c", "d", "e"};
    for (int i = 0; i < 64; ++i) {
      std::string s;
      for (int j = 0; j < 4; ++j) s += std::string(words[(i * 7 + j * 3) % 5]) + " ";
      const int label = i % 2;
      if (label == 1) s += "x";
      rows.push_back({label, s, std::nullopt});
      sentences.push_back(s);
    }
    config.vocab_size = vocab.size();
    config.hidden = 16;
    config.layers = 1;
    config.heads = 2;
    config.ffn_dim = 32;
    config.max_len = 8;
    config.dropout = dropout;
    config.num_classes = num_classes;
    config.init_std = 0.25f;
  }
};

TrainConfig fast_train(std::size_t steps) {
  TrainConfig t;
  t.lr = 3e-3;
  t.batch_size = 8;
  t.max_steps = steps;
  t.max_epochs = 1000;
  t.eval_interval_steps = 1000;
  t.seed = 3;
  return t;
}

std::vector<double> trajectory(const Toy& toy, Objective obj, const LossConfig& loss, const AttackConfig& attack,
                               std::size_t steps) {
  auto params = EncoderParams::init(toy.config, 11);
  TrainData data = is_supervised(obj) ? supervised_data(toy.rows, toy.vocab, toy.config.max_len)
                                      : unsupervised_data(toy.sentences, toy.vocab, toy.config.max_len);
  auto r = train_loop(params, data, obj, fast_train(steps), loss, attack, [](const EncoderParams&) { return 0.0; });
  std::vector<double> out;
  for (auto& l : r.losses) out.push_back(l.total);
  return out;
}

}  // namespace

TEST_SUITE("trainer") {
  TEST_CASE("config validation") {
    TrainConfig t;
    t.lr = 0;
    CHECK_THROWS_AS(t.validate(), ConfigError);
    t = {};
    t.warmup_ratio = 1.0;
    CHECK_THROWS_AS(t.validate(), ConfigError);
    t = {};
    t.eval_interval_steps = 0;
    CHECK_THROWS_AS(t.validate(), ConfigError);
    CHECK(objective_from_string("uscal") == Objective::uscal);
  }

  TEST_CASE("SCAL with alpha 0, eps 0, no dropout follows the CE trajectory") {
    Toy toy(0.0f);
    LossConfig loss;
    loss.alpha = 0.0f;
    AttackConfig attack;
    attack.epsilon = 0.0f;
    auto scal = trajectory(toy, Objective::scal, loss, attack, 50);
    auto ce = trajectory(toy, Objective::ce, loss, attack, 50);
    REQUIRE(scal.size() == 50);
    for (std::size_t i = 0; i < scal.size(); ++i) CHECK(std::abs(scal[i] - ce[i]) <= 1e-6);
  }

  TEST_CASE("USCAL with alpha 0 follows the dropout-only contrastive trajectory") {
    Toy toy(0.1f, 0);
    LossConfig loss;
    loss.alpha = 0.0f;
    auto uscal = trajectory(toy, Objective::uscal, loss, {}, 50);
    auto simcse = trajectory(toy, Objective::simcse, loss, {}, 50);
    for (std::size_t i = 0; i < uscal.size(); ++i) CHECK(std::abs(uscal[i] - simcse[i]) <= 1e-6);
  }

  TEST_CASE("same seed gives the same trajectory") {
    Toy toy;
    auto a = trajectory(toy, Objective::scal, {}, {}, 20);
    auto b = trajectory(toy, Objective::scal, {}, {}, 20);
    CHECK(a == b);
  }

  TEST_CASE("reports recombine and degenerate USCAL branches coincide") {
    Toy toy(0.0f);
    auto params = EncoderParams::init(toy.config, 2);
    Batch batch = encode_batch(toy.rows, toy.vocab, toy.config.max_len);
    Tape tape;
    TapeScope scope(tape);
    LossConfig loss;
    auto g = build_objective(Objective::scal, batch, params, loss, {}, StepSeeds::for_step(1, 0), true);
    CHECK(std::abs(g.report.total - scal_total(g.report.ce_clean, g.report.ce_adv, g.report.contrastive, loss.alpha)) <
          1e-6);
    AttackConfig none;
    none.epsilon = 0.0f;
    Batch ub = encode_sentences(toy.sentences, toy.vocab, toy.config.max_len);
    auto u = build_objective(Objective::uscal, ub, params, loss, none, StepSeeds::for_step(1, 0), true);
    CHECK(std::abs(u.report.ct_adv - u.report.ct_views) < 1e-6);
  }

  TEST_CASE("USCAL on a single sentence has zero losses and zero gradients") {
    Toy toy(0.1f, 0);
    auto params = EncoderParams::init(toy.config, 2);
    std::vector<std::string> one{"a b c"};
    Batch b = encode_sentences(one, toy.vocab, toy.config.max_len);
    Trainer trainer(params, Objective::uscal, fast_train(5), {}, {}, 5);
    LossReport r = trainer.step(b);
    CHECK(r.total == 0.0);
    CHECK(r.ct_views == 0.0);
    CHECK(r.ct_adv == 0.0);
    for (auto& [n, t] : params.named()) {
      for (float g : t.grad()) CHECK(g == 0.0f);
    }
  }

  TEST_CASE("early stopping with patience 0 stops at the first non-improving evaluation") {
    Toy toy;
    auto params = EncoderParams::init(toy.config, 2);
    TrainConfig t = fast_train(100);
    t.eval_interval_steps = 2;
    t.early_stop_patience = 0;
    std::vector<double> script{0.5, 0.6, 0.55, 0.9, 0.95};
    std::size_t calls = 0;
    auto r = train_loop(params, supervised_data(toy.rows, toy.vocab, toy.config.max_len), Objective::ce, t, {}, {},
                        [&](const EncoderParams&) { return script[calls++]; });
    CHECK(r.early_stopped);
    CHECK(r.history.size() == 3);
    CHECK(calls == r.history.size());
    CHECK(r.best_value == 0.6);
    CHECK(r.best_step == 4);
    CHECK(r.steps == 6);
  }

  TEST_CASE("history has one entry per evaluation, including the final one") {
    Toy toy;
    auto params = EncoderParams::init(toy.config, 2);
    TrainConfig t = fast_train(7);
    t.eval_interval_steps = 3;
    std::ostringstream log_text;
    RunLog log(&log_text);
    std::size_t calls = 0;
    auto r = train_loop(params, supervised_data(toy.rows, toy.vocab, toy.config.max_len), Objective::scal, t, {}, {},
                        [&](const EncoderParams&) { return static_cast<double>(calls++); }, &log);
    CHECK(r.history.size() == 3);
    CHECK(r.history.back().step == 7);
    CHECK(calls == 3);
    std::size_t step_lines = 0, eval_lines = 0;
    std::istringstream in(log_text.str());
    for (std::string line; std::getline(in, line);) {
      step_lines += line.rfind("step\t", 0) == 0;
      eval_lines += line.rfind("eval\t", 0) == 0;
    }
    CHECK(step_lines == 7);
    CHECK(eval_lines == 3);
  }

  TEST_CASE("a non-finite loss aborts with the step number") {
    Toy toy;
    auto params = EncoderParams::init(toy.config, 2);
    params.cls_w.data()[0] = std::numeric_limits<float>::quiet_NaN();
    Trainer trainer(params, Objective::scal, fast_train(5), {}, {}, 5);
    Batch b = encode_batch(toy.rows, toy.vocab, toy.config.max_len);
    try {
      trainer.step(b);
      FAIL("expected NonFiniteError");
    } catch (const NonFiniteError& e) {
      CHECK(e.step() == 1);
    }
  }

  TEST_CASE("parameters stay finite and the step counter advances by one per step") {
    Toy toy;
    auto params = EncoderParams::init(toy.config, 2);
    Trainer trainer(params, Objective::scal, fast_train(10), {}, {}, 10);
    Batch b = encode_batch(toy.rows, toy.vocab, toy.config.max_len);
    for (std::size_t i = 1; i <= 3; ++i) {
      trainer.step(b);
      CHECK(trainer.optimizer().step_count() == i);
      CHECK(params.all_finite());
    }
  }

  TEST_CASE("SCAL fits a separable token task") {
    Toy toy;
    auto params = EncoderParams::init(toy.config, 5);
    TrainConfig t = fast_train(200);
    train_loop(params, supervised_data(toy.rows, toy.vocab, toy.config.max_len), Objective::scal, t, {}, {},
               [](const EncoderParams&) { return 0.0; });
    CHECK(evaluate_classification(params, toy.rows, toy.vocab).value >= 0.99);
  }

  TEST_CASE("an out-of-range label is a data error naming its row") {
    Toy toy;
    auto params = EncoderParams::init(toy.config, 2);
    toy.rows[5].label = 4;
    std::vector<std::size_t> idx{3, 4, 5};
    Batch b = encode_batch(std::span(toy.rows).subspan(3, 3), toy.vocab, toy.config.max_len, idx);
    Tape tape;
    TapeScope scope(tape);
    try {
      build_objective(Objective::scal, b, params, {}, {}, StepSeeds::for_step(1, 0), true);
      FAIL("expected DataError");
    } catch (const DataError& e) {
      CHECK(e.row() == 5);
    }
  }

  TEST_CASE("an empty training set is rejected") {
    Toy toy;
    auto params = EncoderParams::init(toy.config, 2);
    std::vector<SupervisedExample> none;
    CHECK_THROWS_AS(train_loop(params, supervised_data(none, toy.vocab, 8), Objective::ce, fast_train(5), {}, {},
                               [](const EncoderParams&) { return 0.0; }),
                    DataError);
  }
}
