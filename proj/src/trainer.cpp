#include "cal/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>

#include "cal/errors.hpp"
#include "cal/log.hpp"
#include "cal/ops.hpp"
#include "cal/rng.hpp"

namespace cal {

namespace {

enum Branch : std::uint64_t { kBranchClean = 1, kBranchView2 = 2, kBranchAdv = 3 };

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

ObjectiveGraph build_ce(const Batch& batch, const EncoderParams& params, const StepSeeds& seeds, bool train_mode) {
  Tensor emb = embed_tokens(batch, params, seeds.clean, train_mode);
  Tensor h = encode_from_embeddings(emb, batch, params, seeds.clean, train_mode);
  ObjectiveGraph g;
  g.total = cross_entropy(classify(h, params), batch.labels);
  g.report.ce_clean = g.total.item();
  g.report.total = g.report.ce_clean;
  return g;
}

ObjectiveGraph build_scal(const Batch& batch, const EncoderParams& params, const LossConfig& loss,
                          const AttackConfig& attack, const StepSeeds& seeds, bool train_mode,
                          const Tensor* fixed_delta) {
  Tensor emb = embed_tokens(batch, params, seeds.clean, train_mode);
  Tensor h = encode_from_embeddings(emb, batch, params, seeds.clean, train_mode);
  Tensor ce_clean = cross_entropy(classify(h, params), batch.labels);
  Tensor z = pool(h, params);

  ObjectiveGraph g;
  if (fixed_delta != nullptr) {
    g.delta = fixed_delta->detach();
  } else {
    // The perturbation is a constant: it is computed on its own tape from a
    // detached copy of the embeddings.
    g.delta = supervised_perturbation(emb.detach(), batch, params, attack, seeds.attack, train_mode).delta;
  }
  Tensor x_adv = add(emb, g.delta);
  Tensor h_adv = encode_from_embeddings(x_adv, batch, params, seeds.adv, train_mode);
  Tensor ce_adv = cross_entropy(classify(h_adv, params), batch.labels);
  Tensor z_adv = pool(h_adv, params);
  Tensor ct = info_nce(z, z_adv, loss.temperature, loss.negative_mode);

  g.total = scal_total(ce_clean, ce_adv, ct, loss.alpha);
  g.report.ce_clean = ce_clean.item();
  g.report.ce_adv = ce_adv.item();
  g.report.contrastive = ct.item();
  g.report.total = g.total.item();
  return g;
}

struct Views {
  Tensor emb1;
  Tensor z1;
  Tensor z2;
  Tensor ct_views;
};

Views build_views(const Batch& batch, const EncoderParams& params, const LossConfig& loss, const StepSeeds& seeds,
                  bool train_mode) {
  Views v;
  v.emb1 = embed_tokens(batch, params, seeds.clean, train_mode);
  v.z1 = pool(encode_from_embeddings(v.emb1, batch, params, seeds.clean, train_mode), params);
  Tensor emb2 = embed_tokens(batch, params, seeds.view2, train_mode);
  v.z2 = pool(encode_from_embeddings(emb2, batch, params, seeds.view2, train_mode), params);
  v.ct_views = info_nce(v.z1, v.z2, loss.temperature, loss.negative_mode);
  return v;
}

ObjectiveGraph build_simcse(const Batch& batch, const EncoderParams& params, const LossConfig& loss,
                            const StepSeeds& seeds, bool train_mode) {
  Views v = build_views(batch, params, loss, seeds, train_mode);
  ObjectiveGraph g;
  g.total = v.ct_views;
  g.report.ct_views = v.ct_views.item();
  g.report.total = g.report.ct_views;
  return g;
}

ObjectiveGraph build_uscal(const Batch& batch, const EncoderParams& params, const LossConfig& loss,
                           const AttackConfig& attack, const StepSeeds& seeds, bool train_mode,
                           const Tensor* fixed_delta) {
  Views v = build_views(batch, params, loss, seeds, train_mode);
  ObjectiveGraph g;
  if (fixed_delta != nullptr) {
    g.delta = fixed_delta->detach();
  } else {
    g.delta = unsupervised_perturbation(v.emb1.detach(), v.z2.detach(), batch, params, loss, attack, seeds.attack,
                                        train_mode)
                  .delta;
  }
  Tensor x_adv = add(v.emb1, g.delta);
  Tensor z_adv = pool(encode_from_embeddings(x_adv, batch, params, seeds.adv, train_mode), params);
  Tensor ct_adv = info_nce(v.z1, z_adv, loss.temperature, loss.negative_mode);

  g.total = uscal_total(v.ct_views, ct_adv, loss.alpha);
  g.report.ct_views = v.ct_views.item();
  g.report.ct_adv = ct_adv.item();
  g.report.total = g.total.item();
  return g;
}

}  // namespace

std::string to_string(Objective objective) {
  switch (objective) {
    case Objective::ce: return "ce";
    case Objective::scal: return "scal";
    case Objective::simcse: return "simcse";
    case Objective::uscal: return "uscal";
  }
  return "?";
}

Objective objective_from_string(const std::string& text) {
  if (text == "ce") return Objective::ce;
  if (text == "scal") return Objective::scal;
  if (text == "simcse") return Objective::simcse;
  if (text == "uscal") return Objective::uscal;
  throw ConfigError("objective", "expected ce, scal, simcse or uscal, got '" + text + "'");
}

bool is_supervised(Objective objective) { return objective == Objective::ce || objective == Objective::scal; }

void TrainConfig::validate() const {
  if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("lr", "must be positive");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay", "must be >= 0");
  if (!(warmup_ratio >= 0.0 && warmup_ratio < 1.0)) throw ConfigError("warmup_ratio", "must lie in [0, 1)");
  if (batch_size == 0) throw ConfigError("batch_size", "must be >= 1");
  if (max_epochs == 0) throw ConfigError("max_epochs", "must be >= 1");
  if (eval_interval_steps == 0) throw ConfigError("eval_interval_steps", "must be >= 1");
  if (!(clip_norm > 0.0)) throw ConfigError("clip_norm", "must be positive");
  if (dev_metric != "accuracy" && dev_metric != "f1" && dev_metric != "mcc" && dev_metric != "spearman") {
    throw ConfigError("dev_metric", "expected accuracy, f1, mcc or spearman, got '" + dev_metric + "'");
  }
}

StepSeeds StepSeeds::for_step(std::uint64_t run_seed, std::size_t step) {
  StepSeeds s;
  s.clean = derive_seed(run_seed, step, kBranchClean);
  s.view2 = derive_seed(run_seed, step, kBranchView2);
  s.attack = s.clean;
  s.adv = derive_seed(run_seed, step, kBranchAdv);
  return s;
}

ObjectiveGraph build_objective(Objective objective, const Batch& batch, const EncoderParams& params,
                               const LossConfig& loss, const AttackConfig& attack, const StepSeeds& seeds,
                               bool train_mode, const Tensor* fixed_delta) {
  if (is_supervised(objective) && batch.labels.size() != batch.batch_size) {
    throw DataError(to_string(objective) + " objective requires a labeled batch");
  }
  if (is_supervised(objective)) validate_labels(batch, params.config().num_classes);
  switch (objective) {
    case Objective::ce: return build_ce(batch, params, seeds, train_mode);
    case Objective::scal: return build_scal(batch, params, loss, attack, seeds, train_mode, fixed_delta);
    case Objective::simcse: return build_simcse(batch, params, loss, seeds, train_mode);
    case Objective::uscal: return build_uscal(batch, params, loss, attack, seeds, train_mode, fixed_delta);
  }
  throw std::logic_error("unhandled objective");
}

Trainer::Trainer(EncoderParams& params, Objective objective, TrainConfig train, LossConfig loss, AttackConfig attack,
                 std::size_t total_steps)
    : params_(params),
      objective_(objective),
      train_(std::move(train)),
      loss_(loss),
      attack_(attack),
      optimizer_(params.named(), AdamWConfig{.weight_decay = train_.weight_decay}),
      total_steps_(total_steps) {
  train_.validate();
  loss_.validate();
  attack_.validate();
  if (total_steps_ == 0) throw ConfigError("max_steps", "training needs at least one step");
  if (is_supervised(objective_) && params_.config().num_classes == 0) {
    throw ConfigError("num_classes", to_string(objective_) + " needs a classifier head");
  }
}

LossReport Trainer::step(const Batch& batch) {
  if (step_ >= total_steps_) throw std::logic_error("Trainer::step: schedule exhausted");
  const StepSeeds seeds = StepSeeds::for_step(train_.seed, step_);
  params_.zero_grad();
  ObjectiveGraph graph;
  {
    Tape tape;
    TapeScope scope(tape);
    graph = build_objective(objective_, batch, params_, loss_, attack_, seeds, true);
    if (!std::isfinite(graph.report.total)) {
      throw NonFiniteError(step_ + 1, "non-finite total loss in " + to_string(objective_) + " step");
    }
    if (graph.total.requires_grad()) tape.backward(graph.total);
  }
  last_grad_norm_ = train_.robust ? clip_grad_norm(optimizer_.params(), train_.clip_norm)
                                  : global_grad_norm(optimizer_.params());
  // The schedule is evaluated at the step being taken, counted from 1, so the
  // first update is not a zero-lr no-op.
  last_lr_ = lr_at(step_ + 1, total_steps_, train_.warmup_ratio, train_.lr);
  last_skipped_ = !optimizer_.step(last_lr_);
  if (!last_skipped_) params_.bump_version();
  ++step_;
  return graph.report;
}

void RunLog::comment(const std::string& text) {
  if (out_ != nullptr) *out_ << "# " << text << '\n';
}

void RunLog::step_line(std::size_t step, double lr, const LossReport& r) {
  if (out_ == nullptr) return;
  *out_ << "step\t" << step << '\t' << fmt(lr) << '\t' << fmt(r.total) << '\t' << fmt(r.ce_clean) << '\t'
        << fmt(r.ce_adv) << '\t' << fmt(r.contrastive) << '\t' << fmt(r.ct_views) << '\t' << fmt(r.ct_adv) << '\n';
}

void RunLog::eval_line(std::size_t step, const std::string& metric, double value) {
  if (out_ != nullptr) *out_ << "eval\t" << step << '\t' << metric << '\t' << fmt(value) << '\n';
}

TrainData supervised_data(std::span<const SupervisedExample> rows, const Vocab& vocab, std::size_t max_len) {
  TrainData d;
  d.size = rows.size();
  d.batch_of = [rows, &vocab, max_len](std::span<const std::size_t> idx) {
    std::vector<SupervisedExample> picked;
    picked.reserve(idx.size());
    for (std::size_t i : idx) picked.push_back(rows[i]);
    return encode_batch(picked, vocab, max_len, idx);
  };
  return d;
}

TrainData unsupervised_data(std::span<const std::string> sentences, const Vocab& vocab, std::size_t max_len) {
  TrainData d;
  d.size = sentences.size();
  d.batch_of = [sentences, &vocab, max_len](std::span<const std::size_t> idx) {
    std::vector<std::string> picked;
    picked.reserve(idx.size());
    for (std::size_t i : idx) picked.push_back(sentences[i]);
    return encode_sentences(picked, vocab, max_len, idx);
  };
  return d;
}

std::size_t planned_steps(std::size_t dataset_size, const TrainConfig& train) {
  const std::size_t per_epoch = (dataset_size + train.batch_size - 1) / train.batch_size;
  std::size_t total = per_epoch * train.max_epochs;
  if (train.max_steps > 0) total = std::min(total, train.max_steps);
  return total;
}

TrainResult train_loop(EncoderParams& params, const TrainData& data, Objective objective, const TrainConfig& train,
                       const LossConfig& loss, const AttackConfig& attack, const DevEvaluator& evaluate,
                       RunLog* log) {
  train.validate();
  if (data.size == 0) throw DataError("training set is empty");
  if (!evaluate) throw ConfigError("dev_set", "a dev evaluator is required");
  const std::size_t total = planned_steps(data.size, train);
  Trainer trainer(params, objective, train, loss, attack, total);
  if (log != nullptr) {
    log->comment("objective=" + to_string(objective) + " seed=" + std::to_string(train.seed) +
                 " total_steps=" + std::to_string(total) +
                 " clip=" + (train.robust ? fmt(train.clip_norm) : std::string("off")));
  }

  TrainResult result;
  std::size_t bad_evals = 0;
  bool have_best = false;
  auto run_eval = [&]() {
    const double value = evaluate(params);
    result.history.push_back({trainer.steps_taken(), train.dev_metric, value});
    if (log != nullptr) log->eval_line(trainer.steps_taken(), train.dev_metric, value);
    if (!have_best || value > result.best_value) {
      have_best = true;
      result.best_value = value;
      result.best_step = trainer.steps_taken();
      result.best = params.snapshot();
      bad_evals = 0;
    } else {
      ++bad_evals;
    }
    return bad_evals > train.early_stop_patience;
  };

  bool stop = false;
  std::size_t last_eval_step = 0;
  for (std::size_t epoch = 0; epoch < train.max_epochs && !stop; ++epoch) {
    for (const auto& idx : epoch_batches(data.size, train.batch_size, train.seed, epoch)) {
      if (trainer.steps_taken() >= total) break;
      Batch batch = data.batch_of(idx);
      LossReport report = trainer.step(batch);
      result.losses.push_back(report);
      if (log != nullptr) log->step_line(trainer.steps_taken(), trainer.last_lr(), report);
      if (trainer.steps_taken() % train.eval_interval_steps == 0) {
        last_eval_step = trainer.steps_taken();
        if (run_eval()) {
          stop = true;
          result.early_stopped = true;
          break;
        }
      }
    }
    if (trainer.steps_taken() >= total) break;
  }
  if (!result.early_stopped && last_eval_step != trainer.steps_taken()) run_eval();
  result.steps = trainer.steps_taken();
  return result;
}

}  // namespace cal
