#include "cal/run_config.hpp"

#include <cstdio>
#include <cstdlib>
#include <sstream>

#include <nlohmann/json.hpp>

#include "cal/errors.hpp"
#include "cal/text.hpp"

namespace cal {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

std::size_t to_size(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    if (!v.empty() && v[0] == '-') throw std::invalid_argument("negative");
    auto n = std::stoull(v, &used);
    if (used != v.size()) throw std::invalid_argument("trailing");
    return static_cast<std::size_t>(n);
  } catch (const std::exception&) {
    throw ConfigError(key, "expected a non-negative integer, got '" + v + "'");
  }
}

double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument("trailing");
    return d;
  } catch (const std::exception&) {
    throw ConfigError(key, "expected a number, got '" + v + "'");
  }
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "1" || v == "true" || v == "on" || v == "yes") return true;
  if (v == "0" || v == "false" || v == "off" || v == "no") return false;
  throw ConfigError(key, "expected true or false, got '" + v + "'");
}

std::string mode_name(const RunConfig& c) { return c.train.robust ? "robust" : "faithful"; }

}  // namespace

std::string normalize_key(const std::string& key) {
  std::string k = key;
  while (!k.empty() && k.front() == '-') k.erase(k.begin());
  for (auto& ch : k) {
    if (ch == '-') ch = '_';
  }
  return k;
}

const std::vector<std::string>& run_config_keys() {
  static const std::vector<std::string> keys = {
      "mode",          "train",         "dev",          "vocab",       "out_dir",     "min_freq",
      "hidden",        "layers",        "heads",        "ffn_dim",     "dropout",     "max_len",
      "num_classes",   "init_std",      "lr",           "weight_decay", "warmup_ratio", "batch_size",
      "max_epochs",    "max_steps",     "patience",     "eval_interval", "seed",       "clip",
      "clip_norm",     "dev_metric",    "temperature",  "alpha",       "negative_mode", "attack",
      "epsilon",
  };
  return keys;
}

void RunConfig::set(const std::string& raw_key, const std::string& raw_value) {
  const std::string key = normalize_key(raw_key);
  const std::string v = trim(raw_value);
  if (key == "mode") objective = objective_from_string(v);
  else if (key == "train") train_path = v;
  else if (key == "dev") dev_path = v;
  else if (key == "vocab") vocab_path = v;
  else if (key == "out_dir") out_dir = v;
  else if (key == "min_freq") min_freq = to_size(key, v);
  else if (key == "hidden") encoder.hidden = to_size(key, v);
  else if (key == "layers") encoder.layers = to_size(key, v);
  else if (key == "heads") encoder.heads = to_size(key, v);
  else if (key == "ffn_dim") encoder.ffn_dim = to_size(key, v);
  else if (key == "dropout") encoder.dropout = static_cast<float>(to_double(key, v));
  else if (key == "max_len") encoder.max_len = to_size(key, v);
  else if (key == "num_classes") encoder.num_classes = to_size(key, v);
  else if (key == "init_std") encoder.init_std = static_cast<float>(to_double(key, v));
  else if (key == "lr") train.lr = to_double(key, v);
  else if (key == "weight_decay") train.weight_decay = to_double(key, v);
  else if (key == "warmup_ratio") train.warmup_ratio = to_double(key, v);
  else if (key == "batch_size") train.batch_size = to_size(key, v);
  else if (key == "max_epochs") train.max_epochs = to_size(key, v);
  else if (key == "max_steps") train.max_steps = to_size(key, v);
  else if (key == "patience") train.early_stop_patience = to_size(key, v);
  else if (key == "eval_interval") train.eval_interval_steps = to_size(key, v);
  else if (key == "seed") train.seed = to_size(key, v);
  else if (key == "clip") {
    if (v == "robust") train.robust = true;
    else if (v == "faithful") train.robust = false;
    else train.robust = to_bool(key, v);
  } else if (key == "clip_norm") train.clip_norm = to_double(key, v);
  else if (key == "dev_metric") train.dev_metric = v;
  else if (key == "temperature") loss.temperature = static_cast<float>(to_double(key, v));
  else if (key == "alpha") loss.alpha = static_cast<float>(to_double(key, v));
  else if (key == "negative_mode") loss.negative_mode = negative_mode_from_string(v);
  else if (key == "attack") attack.kind = attack_kind_from_string(v);
  else if (key == "epsilon") attack.epsilon = static_cast<float>(to_double(key, v));
  else throw ConfigError(key, "unknown config key");
}

void RunConfig::validate() const {
  EncoderConfig probe = encoder;
  if (probe.vocab_size == 0) probe.vocab_size = kNumReserved;  // filled in from the vocabulary later
  probe.validate();
  train.validate();
  loss.validate();
  attack.validate();
  if (is_supervised(objective) && encoder.num_classes < 2) {
    throw ConfigError("num_classes", to_string(objective) + " needs num_classes >= 2");
  }
  if (!is_supervised(objective) && train.dev_metric != "spearman") {
    throw ConfigError("dev_metric", to_string(objective) + " is evaluated with spearman");
  }
  if (is_supervised(objective) && train.dev_metric == "spearman") {
    throw ConfigError("dev_metric", "spearman applies to unsupervised objectives only");
  }
}

std::vector<std::pair<std::string, std::string>> RunConfig::entries() const {
  return {
      {"mode", to_string(objective)},
      {"train", train_path},
      {"dev", dev_path},
      {"vocab", vocab_path},
      {"out_dir", out_dir},
      {"min_freq", std::to_string(min_freq)},
      {"hidden", std::to_string(encoder.hidden)},
      {"layers", std::to_string(encoder.layers)},
      {"heads", std::to_string(encoder.heads)},
      {"ffn_dim", std::to_string(encoder.ffn_dim)},
      {"dropout", fmt(encoder.dropout)},
      {"max_len", std::to_string(encoder.max_len)},
      {"num_classes", std::to_string(encoder.num_classes)},
      {"init_std", fmt(encoder.init_std)},
      {"lr", fmt(train.lr)},
      {"weight_decay", fmt(train.weight_decay)},
      {"warmup_ratio", fmt(train.warmup_ratio)},
      {"batch_size", std::to_string(train.batch_size)},
      {"max_epochs", std::to_string(train.max_epochs)},
      {"max_steps", std::to_string(train.max_steps)},
      {"patience", std::to_string(train.early_stop_patience)},
      {"eval_interval", std::to_string(train.eval_interval_steps)},
      {"seed", std::to_string(train.seed)},
      {"clip", mode_name(*this)},
      {"clip_norm", fmt(train.clip_norm)},
      {"dev_metric", train.dev_metric},
      {"temperature", fmt(loss.temperature)},
      {"alpha", fmt(loss.alpha)},
      {"negative_mode", to_string(loss.negative_mode)},
      {"attack", to_string(attack.kind)},
      {"epsilon", fmt(attack.epsilon)},
  };
}

std::string RunConfig::serialize() const {
  std::ostringstream os;
  for (const auto& [k, v] : entries()) os << k << '=' << v << '\n';
  return os.str();
}

RunConfig RunConfig::parse(const std::string& text) {
  RunConfig c;
  const std::string body = trim(text);
  if (!body.empty() && body.front() == '{') {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(body);
    } catch (const nlohmann::json::parse_error& e) {
      throw ConfigError("config", std::string("invalid JSON: ") + e.what());
    }
    if (!j.is_object()) throw ConfigError("config", "JSON config must be an object");
    for (const auto& [k, v] : j.items()) {
      if (v.is_string()) c.set(k, v.get<std::string>());
      else if (v.is_boolean()) c.set(k, v.get<bool>() ? "true" : "false");
      else if (v.is_number_integer() || v.is_number_unsigned()) c.set(k, v.dump());
      else if (v.is_number_float()) c.set(k, fmt(v.get<double>()));
      else throw ConfigError(normalize_key(k), "expected a scalar value");
    }
    return c;
  }
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t.front() == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config", "line " + std::to_string(lineno) + ": expected key=value");
    }
    c.set(trim(t.substr(0, eq)), t.substr(eq + 1));
  }
  return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) { return parse(read_text_file(path)); }

void apply_seed_env(RunConfig& config) {
  if (const char* env = std::getenv("CAL_SEED"); env != nullptr && *env != '\0') {
    config.set("seed", env);
  }
}

}  // namespace cal
