// Command-line front end: build-vocab, train, eval, embed, selfcheck.
//
// Exit codes:
//   0  success
//   1  selfcheck failure
//   2  invalid configuration, unreadable input or malformed data
//   3  non-finite loss during training
//   4  checkpoint could not be loaded or does not match the configuration

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "cal/checkpoint.hpp"
#include "cal/errors.hpp"
#include "cal/evaluate.hpp"
#include "cal/metrics.hpp"
#include "cal/run_config.hpp"
#include "cal/selfcheck.hpp"
#include "cal/text.hpp"
#include "cal/trainer.hpp"

namespace fs = std::filesystem;

namespace {

enum ExitCode : int { kOk = 0, kSelfcheckFailed = 1, kBadInput = 2, kNonFinite = 3, kCheckpointMismatch = 4 };

struct Exit {
  int code;
};

[[noreturn]] void fail(int code, const std::string& message) {
  std::cerr << "error: " << message << '\n';
  throw Exit{code};
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) fail(kBadInput, "cannot write " + path.string());
  os << text;
}

// Checked before training so a bad label is reported against its row, not
// as a failure deep inside the first batch that contains it.
void check_labels(const std::vector<cal::SupervisedExample>& rows, std::size_t num_classes, const std::string& split) {
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].label < 0 || static_cast<std::size_t>(rows[i].label) >= num_classes) {
      throw cal::DataError(split + " row " + std::to_string(i) + ": label " + std::to_string(rows[i].label) +
                               " outside [0, " + std::to_string(num_classes) + ")",
                           std::nullopt, i);
    }
  }
}

std::string join_tokens(const cal::Vocab& vocab) {
  std::string out;
  for (std::size_t i = cal::kNumReserved; i < vocab.size(); ++i) {
    if (!out.empty()) out += ' ';
    out += vocab.token(static_cast<std::int32_t>(i));
  }
  return out;
}

cal::Vocab vocab_from_meta(const cal::Checkpoint& ckpt) {
  auto it = ckpt.meta.find("vocab");
  if (it == ckpt.meta.end()) fail(kCheckpointMismatch, "checkpoint carries no vocabulary");
  std::istringstream in(it->second);
  std::vector<std::string> tokens;
  for (std::string t; in >> t;) tokens.push_back(t);
  return cal::Vocab::from_tokens(std::move(tokens));
}

struct LoadedModel {
  cal::Checkpoint ckpt;
  cal::EncoderParams params;
  cal::Vocab vocab;
};

// Loads a checkpoint; with a config file, the parameters are built from that
// config and must match the checkpoint tensor for tensor.
LoadedModel load_model(const std::string& path, const std::string& config_path) {
  LoadedModel m;
  if (!fs::exists(path)) fail(kBadInput, "checkpoint not found: " + path);
  try {
    m.ckpt = cal::load_checkpoint(path);
    m.vocab = vocab_from_meta(m.ckpt);
    if (m.vocab.size() != m.ckpt.config.vocab_size) {
      fail(kCheckpointMismatch, "vocabulary size disagrees with the checkpoint config");
    }
    if (config_path.empty()) {
      m.params = cal::params_from_checkpoint(m.ckpt);
    } else {
      cal::RunConfig rc = cal::RunConfig::load(config_path);
      cal::EncoderConfig enc = rc.encoder;
      enc.vocab_size = m.ckpt.config.vocab_size;
      m.params = cal::EncoderParams::init(enc, 0);
      cal::restore_params(m.ckpt, m.params);
    }
  } catch (const cal::CheckpointError& e) {
    fail(kCheckpointMismatch, e.what());
  } catch (const cal::IoError& e) {
    fail(kBadInput, e.what());
  } catch (const cal::ConfigError& e) {
    fail(kBadInput, std::string("invalid config field '") + e.field() + "': " + e.what());
  }
  return m;
}

int cmd_build_vocab(const std::string& corpus, const std::string& out, std::size_t min_freq, bool tsv) {
  std::vector<std::string> lines;
  if (tsv) {
    for (auto& row : cal::load_supervised_tsv(corpus)) {
      lines.push_back(row.sentence1);
      if (row.sentence2) lines.push_back(*row.sentence2);
    }
  } else {
    lines = cal::load_unsupervised_lines(corpus);
  }
  cal::Vocab vocab = cal::Vocab::build(lines, min_freq);
  vocab.save(out);
  std::cout << "vocab_size=" << vocab.size() << " regular_tokens=" << vocab.size() - cal::kNumReserved << '\n';
  return kOk;
}

int cmd_train(cal::RunConfig rc) {
  rc.validate();
  const bool supervised = cal::is_supervised(rc.objective);
  if (rc.train_path.empty()) throw cal::ConfigError("train", "a training file is required");
  if (rc.dev_path.empty()) throw cal::ConfigError("dev", "a dev file is required");

  std::vector<cal::SupervisedExample> train_rows, dev_rows;
  std::vector<std::string> train_lines;
  std::vector<cal::SimilarityExample> dev_pairs;
  std::vector<std::string> vocab_lines;
  if (supervised) {
    train_rows = cal::load_supervised_tsv(rc.train_path);
    dev_rows = cal::load_supervised_tsv(rc.dev_path);
    check_labels(train_rows, rc.encoder.num_classes, "train");
    check_labels(dev_rows, rc.encoder.num_classes, "dev");
    for (const auto& r : train_rows) {
      vocab_lines.push_back(r.sentence1);
      if (r.sentence2) vocab_lines.push_back(*r.sentence2);
    }
  } else {
    train_lines = cal::load_unsupervised_lines(rc.train_path);
    dev_pairs = cal::load_similarity_tsv(rc.dev_path);
    vocab_lines = train_lines;
  }
  if (supervised ? dev_rows.empty() : dev_pairs.empty()) throw cal::DataError("dev set is empty");

  cal::Vocab vocab = rc.vocab_path.empty() ? cal::Vocab::build(vocab_lines, rc.min_freq) : cal::Vocab::load(rc.vocab_path);
  rc.encoder.vocab_size = vocab.size();
  if (!supervised) rc.encoder.num_classes = 0;

  const fs::path out = rc.out_dir;
  fs::create_directories(out);
  write_file(out / "config.txt", rc.serialize());
  vocab.save(out / "vocab.txt");

  cal::EncoderParams params = cal::EncoderParams::init(rc.encoder, rc.train.seed);
  std::ofstream log_file(out / "train.log", std::ios::trunc);
  cal::RunLog log(&log_file);

  cal::DevEvaluator evaluate;
  if (supervised) {
    evaluate = [&](const cal::EncoderParams& p) {
      return cal::evaluate_classification(p, dev_rows, vocab, rc.train.dev_metric).value;
    };
  } else {
    evaluate = [&](const cal::EncoderParams& p) { return cal::evaluate_similarity(p, dev_pairs, vocab).value; };
  }
  cal::TrainData data = supervised ? cal::supervised_data(train_rows, vocab, rc.encoder.max_len)
                                   : cal::unsupervised_data(train_lines, vocab, rc.encoder.max_len);

  cal::TrainResult result;
  try {
    result = cal::train_loop(params, data, rc.objective, rc.train, rc.loss, rc.attack, evaluate, &log);
  } catch (const cal::NonFiniteError& e) {
    log_file.flush();
    fail(kNonFinite, std::string("non-finite loss at step ") + std::to_string(e.step()));
  }

  std::ostringstream history;
  history << "step\tmetric\tvalue\n";
  for (const auto& h : result.history) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.9g", h.value);
    history << h.step << '\t' << h.metric << '\t' << buf << '\n';
  }
  write_file(out / "history.tsv", history.str());

  std::map<std::string, std::string> meta{
      {"vocab", join_tokens(vocab)},
      {"seed", std::to_string(rc.train.seed)},
      {"objective", cal::to_string(rc.objective)},
      {"dev_metric", rc.train.dev_metric},
      {"step", std::to_string(result.best_step)},
      {"dev_value", std::to_string(result.best_value)},
  };
  cal::save_checkpoint(cal::make_checkpoint(result.best, nullptr, meta), out / "best.ckpt");
  meta["step"] = std::to_string(result.steps);
  cal::save_checkpoint(cal::make_checkpoint(params, nullptr, meta), out / "last.ckpt");

  nlohmann::json summary{{"steps", result.steps},
                         {"best_step", result.best_step},
                         {"best_value", result.best_value},
                         {"dev_metric", rc.train.dev_metric},
                         {"early_stopped", result.early_stopped},
                         {"evaluations", result.history.size()}};
  write_file(out / "summary.json", summary.dump(2) + "\n");
  std::cout << "steps=" << result.steps << " best_step=" << result.best_step << " best_" << rc.train.dev_metric
            << '=' << result.best_value << " run_dir=" << out.string() << '\n';
  return kOk;
}

struct EvalArgs {
  std::string checkpoint, data, metric, config, out_dir, attack;
  std::optional<double> epsilon;
};

int cmd_eval(const EvalArgs& a) {
  LoadedModel m = load_model(a.checkpoint, a.config);
  std::string metric = a.metric;
  if (metric.empty()) metric = m.ckpt.meta.count("dev_metric") ? m.ckpt.meta.at("dev_metric") : "accuracy";

  std::vector<cal::MetricReport> reports;
  if (metric == "spearman") {
    if (!a.attack.empty()) throw cal::ConfigError("attack", "attacks apply to classification data only");
    reports.push_back(cal::evaluate_similarity(m.params, cal::load_similarity_tsv(a.data), m.vocab));
  } else {
    auto rows = cal::load_supervised_tsv(a.data);
    if (m.params.config().num_classes == 0) fail(kCheckpointMismatch, "checkpoint has no classifier head");
    reports.push_back(cal::evaluate_classification(m.params, rows, m.vocab, metric));
    if (!a.attack.empty()) {
      cal::AttackConfig attack;
      attack.kind = cal::attack_kind_from_string(a.attack);
      if (a.epsilon) attack.epsilon = static_cast<float>(*a.epsilon);
      reports.push_back(cal::evaluate_under_attack(m.params, rows, m.vocab, attack).robust);
    }
  }
  nlohmann::json doc = nlohmann::json::array();
  std::string lines;
  for (const auto& r : reports) {
    lines += r.to_kv_line() + "\n";
    doc.push_back(r.to_json());
  }
  std::cout << lines;
  if (!a.out_dir.empty()) {
    fs::create_directories(a.out_dir);
    write_file(fs::path(a.out_dir) / "report.txt", lines);
    write_file(fs::path(a.out_dir) / "report.json", doc.dump(2) + "\n");
  }
  return kOk;
}

int cmd_embed(const std::string& checkpoint, const std::string& input, const std::string& out,
              const std::string& config) {
  LoadedModel m = load_model(checkpoint, config);
  // Every line is kept, blank ones included, so row i matches line i.
  std::vector<std::string> lines;
  {
    std::istringstream in(cal::read_text_file(input));
    for (std::string line; std::getline(in, line);) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      lines.push_back(line);
    }
  }
  auto vectors = cal::embed_sentences(m.params, lines, m.vocab);
  std::ostringstream os;
  os << m.params.config().hidden << ' ' << vectors.size() << '\n';
  char buf[32];
  for (const auto& v : vectors) {
    for (std::size_t i = 0; i < v.size(); ++i) {
      std::snprintf(buf, sizeof buf, "%.9g", static_cast<double>(v[i]));
      os << (i ? " " : "") << buf;
    }
    os << '\n';
  }
  write_file(out, os.str());
  std::cout << "rows=" << vectors.size() << " dim=" << m.params.config().hidden << '\n';
  return kOk;
}

int cmd_selfcheck(const std::string& fault) {
  cal::SelfCheckOptions options;
  if (!fault.empty()) {
    if (fault != "backward-sign") throw cal::ConfigError("inject_fault", "only 'backward-sign' is supported");
    options.flip_tanh_backward = true;
  }
  const auto start = std::chrono::steady_clock::now();
  std::vector<std::string> failed;
  cal::run_selfcheck(options, [&](const cal::CheckResult& r) {
    std::cout << (r.passed ? "PASS " : "FAIL ") << r.name << "  " << r.detail << '\n' << std::flush;
    if (!r.passed) failed.push_back(r.name);
  });
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (!failed.empty()) {
    std::string names;
    for (const auto& n : failed) names += (names.empty() ? "" : ", ") + n;
    std::cout << "selfcheck: FAIL (" << names << ")\n";
    std::cerr << "selfcheck failed: " << names << '\n';
    return kSelfcheckFailed;
  }
  std::printf("selfcheck: PASS (%.1f s)\n", secs);
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Contrastive adversarial training toolkit"};
  app.require_subcommand(1);

  auto* vocab_cmd = app.add_subcommand("build-vocab", "Build a vocabulary file from a corpus");
  std::string corpus, vocab_out;
  std::size_t min_freq = 1;
  bool tsv = false;
  vocab_cmd->add_option("--corpus", corpus, "One sentence per line (or a labeled TSV with --tsv)")->required();
  vocab_cmd->add_option("--out", vocab_out, "Output vocabulary file")->required();
  vocab_cmd->add_option("--min-freq", min_freq, "Minimum token count")->capture_default_str();
  vocab_cmd->add_flag("--tsv", tsv, "Read sentences from a label<TAB>s1[<TAB>s2] file");

  auto* train_cmd = app.add_subcommand("train", "Train an encoder and write a run directory");
  std::string config_path;
  train_cmd->add_option("--config", config_path, "key=value or JSON config file");
  std::map<std::string, std::string> overrides;
  for (const auto& key : cal::run_config_keys()) {
    std::string flag = key;
    for (auto& ch : flag) {
      if (ch == '_') ch = '-';
    }
    train_cmd->add_option_function<std::string>(
        "--" + flag, [&overrides, key](const std::string& v) { overrides[key] = v; }, "Config key " + key);
  }

  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint");
  EvalArgs eval_args;
  double epsilon = 0.0;
  eval_cmd->add_option("--checkpoint", eval_args.checkpoint)->required();
  eval_cmd->add_option("--data", eval_args.data, "Labeled TSV, or similarity TSV for spearman")->required();
  eval_cmd->add_option("--metric", eval_args.metric, "accuracy, f1, mcc or spearman");
  eval_cmd->add_option("--attack", eval_args.attack, "fgm or fgsm: also report robust accuracy");
  auto* eps_opt = eval_cmd->add_option("--epsilon", epsilon, "Attack budget");
  eval_cmd->add_option("--config", eval_args.config, "Config whose encoder settings must match the checkpoint");
  eval_cmd->add_option("--out-dir", eval_args.out_dir, "Write report.txt and report.json here");

  auto* embed_cmd = app.add_subcommand("embed", "Export sentence embeddings");
  std::string embed_ckpt, embed_in, embed_out, embed_config;
  embed_cmd->add_option("--checkpoint", embed_ckpt)->required();
  embed_cmd->add_option("--input", embed_in, "One sentence per line")->required();
  embed_cmd->add_option("--out", embed_out, "Output matrix file")->required();
  embed_cmd->add_option("--config", embed_config);

  auto* self_cmd = app.add_subcommand("selfcheck", "Run gradient, attack, loss and metric checks");
  std::string fault;
  self_cmd->add_option("--inject-fault", fault)->group("");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kBadInput;
  }

  try {
    if (*vocab_cmd) return cmd_build_vocab(corpus, vocab_out, min_freq, tsv);
    if (*train_cmd) {
      cal::RunConfig rc = config_path.empty() ? cal::RunConfig{} : cal::RunConfig::load(config_path);
      cal::apply_seed_env(rc);
      for (const auto& [k, v] : overrides) rc.set(k, v);
      return cmd_train(rc);
    }
    if (*eval_cmd) {
      if (eps_opt->count() > 0) eval_args.epsilon = epsilon;
      return cmd_eval(eval_args);
    }
    if (*embed_cmd) return cmd_embed(embed_ckpt, embed_in, embed_out, embed_config);
    if (*self_cmd) return cmd_selfcheck(fault);
  } catch (const Exit& e) {
    return e.code;
  } catch (const cal::ConfigError& e) {
    std::cerr << "error: invalid config field '" << e.field() << "': " << e.what() << '\n';
    return kBadInput;
  } catch (const cal::IoError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kBadInput;
  } catch (const cal::DataError& e) {
    std::cerr << "error: " << e.what();
    if (e.line()) std::cerr << " (line " << *e.line() << ")";
    std::cerr << '\n';
    return kBadInput;
  } catch (const cal::CheckpointError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kCheckpointMismatch;
  } catch (const cal::MetricError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kBadInput;
  } catch (const std::exception& e) {
    // Library argument checks (shapes, ranges) that slipped past validation.
    std::cerr << "error: " << e.what() << '\n';
    return kBadInput;
  }
  return kOk;
}
