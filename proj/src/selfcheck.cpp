#include "cal/selfcheck.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <random>

#include "cal/adversary.hpp"
#include "cal/encoder.hpp"
#include "cal/metrics.hpp"
#include "cal/ops.hpp"
#include "cal/text.hpp"

namespace cal {

namespace {

using Rng = std::mt19937_64;

Tensor random_leaf(Rng& rng, Shape shape, float scale = 1.0f, float min_abs = 0.0f) {
  std::normal_distribution<float> dist(0.0f, scale);
  std::vector<float> v(shape_numel(shape));
  for (auto& x : v) {
    x = dist(rng);
    // Keeps kinked ops (relu) away from their non-differentiable point.
    if (std::abs(x) < min_abs) x = x < 0 ? x - min_abs : x + min_abs;
  }
  return Tensor::from_data(std::move(shape), std::move(v), true);
}

// tanh with the sign of its backward rule flipped; a deliberate bug.
Tensor tanh_flipped_backward(const Tensor& x) {
  std::vector<float> y(x.numel());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = std::tanh(x.data()[i]);
  Tensor out = Tensor::from_data(x.shape(), std::move(y));
  if (should_record({&x})) {
    active_tape()->record("tanh", {x}, out, [x, out]() mutable {
      auto g = out.grad();
      auto dx = x.mutable_grad();
      for (std::size_t i = 0; i < g.size(); ++i) dx[i] -= g[i] * (1.0f - out.data()[i] * out.data()[i]);
    });
  }
  return out;
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

struct ToyModel {
  Vocab vocab;
  EncoderParams params;
  Batch batch;
};

ToyModel toy_model(std::uint64_t seed, std::size_t num_classes) {
  ToyModel m;
  m.vocab = Vocab::from_tokens({"a", "b", "c", "d", "e", "f"});
  EncoderConfig cfg;
  cfg.vocab_size = m.vocab.size();
  cfg.hidden = 8;
  cfg.layers = 1;
  cfg.heads = 2;
  cfg.ffn_dim = 16;
  cfg.dropout = 0.1f;
  cfg.max_len = 6;
  cfg.num_classes = num_classes;
  cfg.init_std = 0.3f;
  m.params = EncoderParams::init(cfg, seed);
  if (num_classes > 0) {
    std::vector<SupervisedExample> rows{{1, "a b c", std::nullopt}, {0, "d e", std::nullopt}};
    m.batch = encode_batch(rows, m.vocab, cfg.max_len);
  } else {
    std::vector<std::string> rows{"a b c", "d e"};
    m.batch = encode_sentences(rows, m.vocab, cfg.max_len);
  }
  return m;
}

}  // namespace

std::vector<OpCase> op_cases(std::uint64_t seed, bool flip_tanh_backward) {
  Rng rng(seed);
  std::vector<OpCase> cases;
  auto add_case = [&](std::string name, std::vector<Tensor> inputs, std::function<Tensor(const std::vector<Tensor>&)> fn,
                      double step = 1e-2) { cases.push_back({std::move(name), std::move(inputs), std::move(fn), step}); };

  add_case("add", {random_leaf(rng, {3, 4}), random_leaf(rng, {3, 4})}, [](auto& in) { return add(in[0], in[1]); });
  add_case("sub", {random_leaf(rng, {3, 4}), random_leaf(rng, {3, 4})}, [](auto& in) { return sub(in[0], in[1]); });
  add_case("mul", {random_leaf(rng, {3, 4}), random_leaf(rng, {3, 4})}, [](auto& in) { return mul(in[0], in[1]); });
  add_case("scale", {random_leaf(rng, {3, 4})}, [](auto& in) { return scale(in[0], -1.7f); });
  add_case("matmul", {random_leaf(rng, {3, 5}), random_leaf(rng, {5, 2})},
           [](auto& in) { return matmul(in[0], in[1]); });
  add_case("transpose", {random_leaf(rng, {3, 4})}, [](auto& in) { return transpose(in[0]); });
  add_case("add_bias", {random_leaf(rng, {3, 4}), random_leaf(rng, {4})},
           [](auto& in) { return add_bias(in[0], in[1]); });
  add_case("concat_rows", {random_leaf(rng, {2, 3}), random_leaf(rng, {1, 3})},
           [](auto& in) { return concat_rows({in[0], in[1], in[0]}); });
  add_case("select_row", {random_leaf(rng, {3, 4})}, [](auto& in) { return select_row(in[0], 1); });
  add_case("gather_rows", {random_leaf(rng, {4, 3})}, [](auto& in) {
    std::vector<std::size_t> rows{2, 0, 2};
    return gather_rows(in[0], rows);
  });
  add_case("reshape", {random_leaf(rng, {2, 6})}, [](auto& in) { return reshape(in[0], {3, 4}); });
  add_case("sum", {random_leaf(rng, {3, 4})}, [](auto& in) { return sum(in[0]); });
  add_case("mean", {random_leaf(rng, {3, 4})}, [](auto& in) { return mean(in[0]); });
  add_case("softmax_rows", {random_leaf(rng, {3, 5})}, [](auto& in) { return softmax_rows(in[0]); });
  add_case("log_softmax_rows", {random_leaf(rng, {3, 5})}, [](auto& in) { return log_softmax_rows(in[0]); });
  add_case("logsumexp_rows", {random_leaf(rng, {3, 5})}, [](auto& in) { return logsumexp_rows(in[0]); });
  add_case("pick", {random_leaf(rng, {3, 5})}, [](auto& in) {
    std::vector<std::size_t> idx{4, 0, 2};
    return pick(in[0], idx);
  });
  add_case("rowwise_dot", {random_leaf(rng, {3, 4}), random_leaf(rng, {3, 4})},
           [](auto& in) { return rowwise_dot(in[0], in[1]); });
  add_case("layer_norm", {random_leaf(rng, {3, 6}), random_leaf(rng, {6}), random_leaf(rng, {6})},
           [](auto& in) { return layer_norm(in[0], in[1], in[2], 1e-5f); });
  add_case("dropout", {random_leaf(rng, {4, 5})}, [](auto& in) { return dropout(in[0], 0.3f, 99, 3, true); });
  if (flip_tanh_backward) {
    add_case("tanh", {random_leaf(rng, {3, 4})}, [](auto& in) { return tanh_flipped_backward(in[0]); });
  } else {
    add_case("tanh", {random_leaf(rng, {3, 4})}, [](auto& in) { return tanh(in[0]); });
  }
  add_case("relu", {random_leaf(rng, {3, 4}, 1.0f, 0.05f)}, [](auto& in) { return relu(in[0]); });
  add_case("gelu", {random_leaf(rng, {3, 4})}, [](auto& in) { return gelu(in[0]); });
  add_case("l2_normalize_rows", {random_leaf(rng, {3, 4})}, [](auto& in) { return l2_normalize_rows(in[0]); });
  add_case("embedding", {random_leaf(rng, {6, 3})}, [](auto& in) {
    std::vector<std::int32_t> ids{1, 3, 1, 5};
    return embedding(in[0], ids);
  });
  add_case("masked_self_attention", {random_leaf(rng, {6, 4}), random_leaf(rng, {6, 4}), random_leaf(rng, {6, 4})},
           [](auto& in) {
             std::vector<std::uint8_t> mask{1, 1, 0, 1, 1, 1};
             return masked_self_attention(in[0], in[1], in[2], mask, 2, 3, 2);
           });
  add_case("cross_entropy", {random_leaf(rng, {4, 3})}, [](auto& in) {
    std::vector<std::int32_t> labels{0, 2, 1, 2};
    return cross_entropy(in[0], labels);
  });
  add_case("info_nce:adv-keys", {random_leaf(rng, {4, 5}), random_leaf(rng, {4, 5})},
           [](auto& in) { return info_nce(in[0], in[1], 0.5f, NegativeMode::adv_keys); });
  add_case("info_nce:clean-keys", {random_leaf(rng, {4, 5}), random_leaf(rng, {4, 5})},
           [](auto& in) { return info_nce(in[0], in[1], 0.5f, NegativeMode::clean_keys); });
  // The loss is scale-invariant in its inputs but reaches ~1/tau, so float
  // rounding of the output dominates small steps. Longer rows with a
  // proportionally longer step keep the difference quotient resolvable.
  add_case("info_nce:tau=0.05", {random_leaf(rng, {4, 5}, 16.0f), random_leaf(rng, {4, 5}, 16.0f)},
           [](auto& in) { return info_nce(in[0], in[1], 0.05f, NegativeMode::adv_keys); }, 1.0 / 16);
  return cases;
}

GradCheckResult check_op_case(const OpCase& c) {
  GradCheckResult worst;
  for (std::size_t i = 0; i < c.inputs.size(); ++i) {
    GradCheckOptions opt;
    opt.step = c.step;
    opt.projection_seed = 0x5eed + i;
    auto r = grad_check([&c] { return c.fn(c.inputs); }, c.inputs[i], opt);
    if (i == 0 || r.max_rel_error > worst.max_rel_error) worst = r;
  }
  return worst;
}

GradCheckResult check_full_graph(Objective objective, std::uint64_t seed) {
  ToyModel m = toy_model(seed, is_supervised(objective) ? 2 : 0);
  LossConfig loss;
  AttackConfig attack;
  const StepSeeds seeds = StepSeeds::for_step(seed, 0);
  Tensor delta;
  {
    Tape tape;
    TapeScope scope(tape);
    delta = build_objective(objective, m.batch, m.params, loss, attack, seeds, true).delta;
  }
  auto f = [&] { return build_objective(objective, m.batch, m.params, loss, attack, seeds, true, &delta).total; };
  GradCheckResult worst;
  bool first = true;
  for (auto& [name, t] : m.params.named()) {
    auto r = grad_check(f, t);
    if (first || r.max_rel_error > worst.max_rel_error) worst = r;
    first = false;
  }
  return worst;
}

std::vector<CheckResult> run_selfcheck(const SelfCheckOptions& options,
                                       const std::function<void(const CheckResult&)>& on_result) {
  std::vector<CheckResult> results;
  auto report = [&](CheckResult r) {
    if (on_result) on_result(r);
    results.push_back(std::move(r));
  };

  for (const auto& c : op_cases(options.seed, options.flip_tanh_backward)) {
    auto r = check_op_case(c);
    report({"backward:" + c.name, r.max_rel_error < options.op_tolerance, "max_rel_error=" + fmt(r.max_rel_error)});
  }
  for (Objective obj : {Objective::scal, Objective::uscal}) {
    auto r = check_full_graph(obj, options.seed);
    report({"graph:" + to_string(obj), r.max_rel_error < options.graph_tolerance,
            "max_rel_error=" + fmt(r.max_rel_error)});
  }

  Rng rng(options.seed ^ 0xa77ac);
  {
    double worst = 0.0;
    bool fgsm_ok = true;
    std::normal_distribution<float> dist(0.0f, 1.0f);
    for (std::size_t draw = 0; draw < options.attack_draws; ++draw) {
      std::vector<float> g(3 * 4 * 5);
      for (auto& v : g) v = draw % 3 == 0 && rng() % 4 == 0 ? 0.0f : dist(rng);
      Tensor grad = Tensor::from_data({3, 4, 5}, g);
      for (float eps : {0.1f, 0.2f, 0.3f, 0.4f, 0.5f}) {
        Tensor d = attack_delta(grad, {AttackKind::fgm, eps, 1e-12f});
        for (std::size_t b = 0; b < 3; ++b) {
          double sq = 0.0;
          for (std::size_t i = 0; i < 20; ++i) sq += static_cast<double>(d.data()[b * 20 + i]) * d.data()[b * 20 + i];
          worst = std::max(worst, std::abs(std::sqrt(sq) - eps));
        }
        Tensor s = attack_delta(grad, {AttackKind::fgsm, eps, 1e-12f});
        for (float v : s.data()) fgsm_ok = fgsm_ok && (v == eps || v == -eps || v == 0.0f);
      }
    }
    report({"attack:fgm-norm", worst <= 1e-6, "max_norm_error=" + fmt(worst)});
    report({"attack:fgsm-values", fgsm_ok, fgsm_ok ? "all in {-eps, 0, +eps}" : "off-grid component"});
  }

  {
    double worst = 0.0;
    std::normal_distribution<float> dist(0.0f, 1.0f);
    for (std::size_t trial = 0; trial < options.metric_cases; ++trial) {
      const std::size_t B = 1 + trial % 8, D = 5;
      const float tau = std::array<float, 3>{0.05f, 0.1f, 0.5f}[trial % 3];
      const NegativeMode mode = trial % 2 == 0 ? NegativeMode::adv_keys : NegativeMode::clean_keys;
      std::vector<float> a(B * D), k(B * D);
      for (auto& v : a) v = dist(rng);
      for (auto& v : k) v = dist(rng);
      reference::Matrix ra(B, std::vector<double>(D)), rk(B, std::vector<double>(D));
      for (std::size_t i = 0; i < B; ++i) {
        for (std::size_t d = 0; d < D; ++d) {
          ra[i][d] = a[i * D + d];
          rk[i][d] = k[i * D + d];
        }
      }
      NoGradScope no_grad;
      const double got = info_nce_value(Tensor::from_data({B, D}, a), Tensor::from_data({B, D}, k), tau, mode);
      worst = std::max(worst, std::abs(got - reference::info_nce(ra, rk, tau, mode)));
    }
    report({"loss:info_nce-oracle", worst < 1e-6, "max_abs_error=" + fmt(worst)});
  }

  {
    double worst_acc = 0, worst_f1 = 0, worst_mcc = 0, worst_rho = 0;
    for (std::size_t trial = 0; trial < options.metric_cases; ++trial) {
      const std::size_t n = 2 + rng() % 40;
      std::vector<int> p(n), l(n);
      for (std::size_t i = 0; i < n; ++i) {
        p[i] = static_cast<int>(rng() % 2);
        l[i] = static_cast<int>(rng() % 2);
      }
      worst_acc = std::max(worst_acc, std::abs(accuracy(p, l) - reference::accuracy(p, l)));
      worst_f1 = std::max(worst_f1, std::abs(f1_binary(p, l) - reference::f1_binary(p, l)));
      worst_mcc = std::max(worst_mcc, std::abs(mcc(p, l) - reference::mcc(p, l)));
      std::vector<double> x(n), y(n);
      for (std::size_t i = 0; i < n; ++i) {
        x[i] = static_cast<double>(rng() % 6);
        y[i] = static_cast<double>(rng() % 6);
      }
      x[0] = 0.0, x[1] = 7.0, y[0] = 7.0, y[1] = 0.0;  // never constant
      worst_rho = std::max(worst_rho, std::abs(spearman(x, y) - reference::spearman(x, y)));
    }
    report({"metric:accuracy", worst_acc < 1e-10, "max_abs_error=" + fmt(worst_acc)});
    report({"metric:f1", worst_f1 < 1e-10, "max_abs_error=" + fmt(worst_f1)});
    report({"metric:mcc", worst_mcc < 1e-10, "max_abs_error=" + fmt(worst_mcc)});
    report({"metric:spearman", worst_rho < 1e-10, "max_abs_error=" + fmt(worst_rho)});
  }
  return results;
}

namespace reference {

double info_nce(const Matrix& anchors, const Matrix& keys, double temperature, NegativeMode mode) {
  auto unit = [](std::vector<double> v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    const double n = std::sqrt(s);
    if (n > 1e-12) {
      for (double& x : v) x /= n;
    }
    return v;
  };
  auto dot = [](const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
  };
  const std::size_t B = anchors.size();
  Matrix a(B), k(B);
  for (std::size_t i = 0; i < B; ++i) {
    a[i] = unit(anchors[i]);
    k[i] = unit(keys[i]);
  }
  double total = 0.0;
  for (std::size_t i = 0; i < B; ++i) {
    double denom = 0.0;
    for (std::size_t j = 0; j < B; ++j) {
      const auto& other = mode == NegativeMode::adv_keys ? k[j] : a[j];
      denom += std::exp(dot(a[i], other) / temperature);
    }
    const double num = std::exp(dot(a[i], k[i]) / temperature);
    total += -std::log(num / denom);
  }
  return total / static_cast<double>(B);
}

double accuracy(const std::vector<int>& preds, const std::vector<int>& labels) {
  double hit = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) hit += preds[i] == labels[i] ? 1 : 0;
  return hit / static_cast<double>(preds.size());
}

namespace {
struct Counts {
  double tp = 0, tn = 0, fp = 0, fn = 0;
};
Counts count(const std::vector<int>& p, const std::vector<int>& l) {
  Counts c;
  for (std::size_t i = 0; i < p.size(); ++i) {
    c.tp += p[i] == 1 && l[i] == 1;
    c.tn += p[i] == 0 && l[i] == 0;
    c.fp += p[i] == 1 && l[i] == 0;
    c.fn += p[i] == 0 && l[i] == 1;
  }
  return c;
}
}  // namespace

double f1_binary(const std::vector<int>& preds, const std::vector<int>& labels) {
  const Counts c = count(preds, labels);
  // Equivalent closed form 2TP / (2TP + FP + FN); 0 when there is no positive at all.
  const double denom = 2 * c.tp + c.fp + c.fn;
  return c.tp == 0 ? 0.0 : 2 * c.tp / denom;
}

double mcc(const std::vector<int>& preds, const std::vector<int>& labels) {
  const Counts c = count(preds, labels);
  const double d = (c.tp + c.fp) * (c.tp + c.fn) * (c.tn + c.fp) * (c.tn + c.fn);
  return d == 0 ? 0.0 : (c.tp * c.tn - c.fp * c.fn) / std::sqrt(d);
}

double spearman(const std::vector<double>& x, const std::vector<double>& y) {
  auto ranks = [](const std::vector<double>& v) {
    std::vector<double> r(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
      double less = 0, equal = 0;
      for (double w : v) {
        less += w < v[i];
        equal += w == v[i];
      }
      r[i] = less + (equal + 1.0) / 2.0;
    }
    return r;
  };
  const auto rx = ranks(x), ry = ranks(y);
  const double n = static_cast<double>(x.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) mx += rx[i], my += ry[i];
  mx /= n, my /= n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  return sxy / std::sqrt(sxx * syy);
}

}  // namespace reference

}  // namespace cal
