#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cal/adversary.hpp"
#include "cal/encoder.hpp"
#include "cal/objectives.hpp"
#include "cal/optim.hpp"
#include "cal/text.hpp"

namespace cal {

enum class Objective {
  ce,      // cross-entropy fine-tuning only
  scal,    // supervised contrastive adversarial
  simcse,  // two dropout views, contrastive only
  uscal,   // dropout views plus an adversarial view
};

std::string to_string(Objective objective);
Objective objective_from_string(const std::string& text);
bool is_supervised(Objective objective);

struct TrainConfig {
  double lr = 3e-5;
  double weight_decay = 0.01;
  double warmup_ratio = 0.1;
  std::size_t batch_size = 32;
  std::size_t max_epochs = 15;
  std::size_t max_steps = 0;  // 0 means no cap beyond max_epochs
  std::size_t early_stop_patience = 3;
  std::size_t eval_interval_steps = 250;
  std::uint64_t seed = 42;
  bool robust = false;  // clip gradients at global norm `clip_norm`
  double clip_norm = 1.0;
  std::string dev_metric = "accuracy";

  void validate() const;
};

/// Dropout seeds for the branches of one step. The attack pass reuses the
/// clean (or view-1) masks by default, so the perturbation follows the exact
/// gradient of the loss it attacks.
struct StepSeeds {
  std::uint64_t clean = 0;
  std::uint64_t view2 = 0;
  std::uint64_t attack = 0;
  std::uint64_t adv = 0;

  static StepSeeds for_step(std::uint64_t run_seed, std::size_t step);
};

struct ObjectiveGraph {
  Tensor total;
  LossReport report;
  Tensor delta;  // perturbation that was applied (undefined for ce/simcse)
};

/// Builds the selected objective on the active tape. When `fixed_delta` is
/// given the attack pass is skipped and that perturbation is used instead,
/// which makes the graph a plain function of the parameters.
ObjectiveGraph build_objective(Objective objective, const Batch& batch, const EncoderParams& params,
                               const LossConfig& loss, const AttackConfig& attack, const StepSeeds& seeds,
                               bool train_mode, const Tensor* fixed_delta = nullptr);

class Trainer {
 public:
  Trainer(EncoderParams& params, Objective objective, TrainConfig train, LossConfig loss, AttackConfig attack,
          std::size_t total_steps);

  /// One optimizer step on `batch`. Throws NonFiniteError when the total
  /// loss is not finite; a non-finite gradient skips the update instead.
  LossReport step(const Batch& batch);

  std::size_t steps_taken() const noexcept { return step_; }
  std::size_t total_steps() const noexcept { return total_steps_; }
  double last_lr() const noexcept { return last_lr_; }
  bool last_step_skipped() const noexcept { return last_skipped_; }
  double last_grad_norm() const noexcept { return last_grad_norm_; }
  Objective objective() const noexcept { return objective_; }

  AdamW& optimizer() noexcept { return optimizer_; }
  const AdamW& optimizer() const noexcept { return optimizer_; }

 private:
  EncoderParams& params_;
  Objective objective_;
  TrainConfig train_;
  LossConfig loss_;
  AttackConfig attack_;
  AdamW optimizer_;
  std::size_t total_steps_;
  std::size_t step_ = 0;
  double last_lr_ = 0.0;
  double last_grad_norm_ = 0.0;
  bool last_skipped_ = false;
};

/// Tab-separated run log. Step lines:
///   step <n> lr total ce_clean ce_adv contrastive ct_views ct_adv
/// Evaluation lines:
///   eval <n> <metric> <value>
class RunLog {
 public:
  explicit RunLog(std::ostream* out) : out_(out) {}
  void comment(const std::string& text);
  void step_line(std::size_t step, double lr, const LossReport& report);
  void eval_line(std::size_t step, const std::string& metric, double value);

 private:
  std::ostream* out_;
};

struct EvalRecord {
  std::size_t step = 0;
  std::string metric;
  double value = 0.0;
};

struct TrainResult {
  EncoderParams best;
  double best_value = 0.0;
  std::size_t best_step = 0;
  std::vector<EvalRecord> history;
  std::vector<LossReport> losses;
  std::size_t steps = 0;
  bool early_stopped = false;
};

/// Source of training batches: `size` examples, `batch_of(indices)` builds one.
struct TrainData {
  std::size_t size = 0;
  std::function<Batch(std::span<const std::size_t>)> batch_of;
};

TrainData supervised_data(std::span<const SupervisedExample> rows, const Vocab& vocab, std::size_t max_len);
TrainData unsupervised_data(std::span<const std::string> sentences, const Vocab& vocab, std::size_t max_len);

/// Higher is better for every dev metric.
using DevEvaluator = std::function<double(const EncoderParams&)>;

/// Number of optimizer steps the loop will schedule the learning rate over.
std::size_t planned_steps(std::size_t dataset_size, const TrainConfig& train);

/// Trains `params` in place, evaluating every eval_interval_steps and once
/// more at the end. Stops early once more than early_stop_patience
/// consecutive evaluations fail to improve on the best value. `params` ends
/// at the last trained state; the best snapshot is in the result.
TrainResult train_loop(EncoderParams& params, const TrainData& data, Objective objective, const TrainConfig& train,
                       const LossConfig& loss, const AttackConfig& attack, const DevEvaluator& evaluate,
                       RunLog* log = nullptr);

}  // namespace cal
