#include "cal/text.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <sstream>

#include "cal/rng.hpp"

namespace cal {

namespace {

const char* const kReserved[kNumReserved] = {"[PAD]", "[UNK]", "[CLS]", "[SEP]"};

bool is_space(unsigned char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; }
bool is_punct(unsigned char c) { return c < 0x80 && std::ispunct(c); }

std::vector<std::string_view> split_lines(std::string_view text) {
  std::vector<std::string_view> lines;
  std::size_t start = 0;
  while (start <= text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    auto line = text.substr(start, end - start);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    lines.push_back(line);
    if (end == text.size()) break;
    start = end + 1;
  }
  if (!lines.empty() && lines.back().empty()) lines.pop_back();
  return lines;
}

std::vector<std::string_view> split_tabs(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    auto end = line.find('\t', start);
    if (end == std::string_view::npos) {
      fields.push_back(line.substr(start));
      break;
    }
    fields.push_back(line.substr(start, end - start));
    start = end + 1;
  }
  return fields;
}

bool is_blank(std::string_view s) {
  return std::all_of(s.begin(), s.end(), [](char c) { return is_space(static_cast<unsigned char>(c)); });
}

std::vector<std::int32_t> sentence_ids(const std::string& s, const Vocab& vocab) {
  auto tokens = tokenize(s);
  return vocab.ids(tokens);
}

void write_row(Batch& batch, std::size_t row, const std::vector<std::int32_t>& ids) {
  std::copy(ids.begin(), ids.end(), batch.token_ids.begin() + static_cast<std::ptrdiff_t>(row * batch.seq_len));
  for (std::size_t t = 0; t < ids.size(); ++t) batch.attn_mask[row * batch.seq_len + t] = 1;
}

Batch empty_batch(std::size_t rows, std::size_t max_len, std::span<const std::size_t> raw_indices) {
  if (max_len < 3) throw std::invalid_argument("max_len must be at least 3");
  if (rows == 0) throw std::invalid_argument("cannot encode an empty batch");
  if (!raw_indices.empty() && raw_indices.size() != rows) {
    throw std::invalid_argument("raw_indices size does not match rows");
  }
  Batch batch;
  batch.batch_size = rows;
  batch.seq_len = max_len;
  batch.token_ids.assign(rows * max_len, kPadId);
  batch.attn_mask.assign(rows * max_len, 0);
  if (raw_indices.empty()) {
    batch.raw_indices.resize(rows);
    std::iota(batch.raw_indices.begin(), batch.raw_indices.end(), std::size_t{0});
  } else {
    batch.raw_indices.assign(raw_indices.begin(), raw_indices.end());
  }
  return batch;
}

}  // namespace

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::string current;
  auto flush = [&] {
    if (!current.empty()) tokens.push_back(std::move(current));
    current.clear();
  };
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (is_space(c)) {
      flush();
    } else if (is_punct(c)) {
      flush();
      tokens.emplace_back(1, ch);
    } else {
      current.push_back(c < 0x80 ? static_cast<char>(std::tolower(c)) : ch);
    }
  }
  flush();
  return tokens;
}

Vocab Vocab::build(std::span<const std::string> lines, std::size_t min_freq) {
  if (lines.empty()) throw DataError("cannot build a vocabulary from an empty corpus");
  std::map<std::string, std::size_t> counts;
  for (const auto& line : lines) {
    for (auto& tok : tokenize(line)) ++counts[tok];
  }
  std::vector<std::pair<std::string, std::size_t>> entries;
  for (auto& [tok, n] : counts) {
    if (n >= min_freq) entries.emplace_back(tok, n);
  }
  std::stable_sort(entries.begin(), entries.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> tokens;
  tokens.reserve(entries.size());
  for (auto& e : entries) tokens.push_back(std::move(e.first));
  return from_tokens(std::move(tokens));
}

Vocab Vocab::from_tokens(std::vector<std::string> tokens) {
  Vocab v;
  for (auto r : kReserved) v.tokens_.emplace_back(r);
  for (auto& t : tokens) v.tokens_.push_back(std::move(t));
  for (std::size_t i = 0; i < v.tokens_.size(); ++i) {
    if (v.tokens_[i].empty()) throw DataError("vocabulary token " + std::to_string(i) + " is empty");
    auto [it, inserted] = v.index_.emplace(v.tokens_[i], static_cast<std::int32_t>(i));
    if (!inserted) throw DataError("duplicate vocabulary token '" + v.tokens_[i] + "'");
  }
  return v;
}

Vocab Vocab::load(const std::filesystem::path& path) {
  auto text = read_text_file(path);
  std::vector<std::string> tokens;
  for (auto line : split_lines(text)) tokens.emplace_back(line);
  return from_tokens(std::move(tokens));
}

std::string Vocab::serialize() const {
  std::string out;
  for (std::size_t i = kNumReserved; i < tokens_.size(); ++i) {
    out += tokens_[i];
    out += '\n';
  }
  return out;
}

void Vocab::save(const std::filesystem::path& path) const {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write vocabulary to " + path.string());
  os << serialize();
}

std::int32_t Vocab::id(std::string_view token) const {
  auto it = index_.find(std::string(token));
  return it == index_.end() ? kUnkId : it->second;
}

const std::string& Vocab::token(std::int32_t id) const { return tokens_.at(static_cast<std::size_t>(id)); }

bool Vocab::contains(std::string_view token) const { return index_.count(std::string(token)) != 0; }

std::vector<std::int32_t> Vocab::ids(std::span<const std::string> tokens) const {
  std::vector<std::int32_t> out;
  out.reserve(tokens.size());
  for (const auto& t : tokens) out.push_back(id(t));
  return out;
}

std::vector<std::string> Vocab::decode(std::span<const std::int32_t> ids) const {
  std::vector<std::string> out;
  out.reserve(ids.size());
  for (auto i : ids) out.push_back(token(i));
  return out;
}

std::size_t Batch::length(std::size_t row) const {
  std::size_t n = 0;
  for (std::size_t t = 0; t < seq_len; ++t) n += attn_mask[row * seq_len + t];
  return n;
}

Batch encode_sentences(std::span<const std::string> sentences, const Vocab& vocab, std::size_t max_len,
                       std::span<const std::size_t> raw_indices) {
  Batch batch = empty_batch(sentences.size(), max_len, raw_indices);
  for (std::size_t r = 0; r < sentences.size(); ++r) {
    auto body = sentence_ids(sentences[r], vocab);
    if (body.size() > max_len - 2) body.resize(max_len - 2);
    std::vector<std::int32_t> ids;
    ids.reserve(body.size() + 2);
    ids.push_back(kClsId);
    ids.insert(ids.end(), body.begin(), body.end());
    ids.push_back(kSepId);
    write_row(batch, r, ids);
  }
  return batch;
}

Batch encode_batch(std::span<const SupervisedExample> rows, const Vocab& vocab, std::size_t max_len,
                   std::span<const std::size_t> raw_indices) {
  Batch batch = empty_batch(rows.size(), max_len, raw_indices);
  batch.labels.resize(rows.size());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const auto& ex = rows[r];
    if (ex.label < 0) throw DataError("row " + std::to_string(r) + ": missing label", std::nullopt, r);
    batch.labels[r] = ex.label;
    auto first = sentence_ids(ex.sentence1, vocab);
    std::vector<std::int32_t> ids{kClsId};
    if (!ex.sentence2) {
      if (first.size() > max_len - 2) first.resize(max_len - 2);
      ids.insert(ids.end(), first.begin(), first.end());
      ids.push_back(kSepId);
    } else {
      if (max_len < 4) throw DataError("row " + std::to_string(r) + ": max_len too small for a pair", std::nullopt, r);
      auto second = sentence_ids(*ex.sentence2, vocab);
      const std::size_t budget = max_len - 3;
      while (first.size() + second.size() > budget) {
        if (first.size() >= second.size()) first.pop_back();
        else second.pop_back();
      }
      ids.insert(ids.end(), first.begin(), first.end());
      ids.push_back(kSepId);
      ids.insert(ids.end(), second.begin(), second.end());
      ids.push_back(kSepId);
    }
    write_row(batch, r, ids);
  }
  return batch;
}

void validate_labels(const Batch& batch, std::size_t num_classes) {
  for (std::size_t r = 0; r < batch.labels.size(); ++r) {
    if (batch.labels[r] < 0 || static_cast<std::size_t>(batch.labels[r]) >= num_classes) {
      const std::size_t row = r < batch.raw_indices.size() ? batch.raw_indices[r] : r;
      throw DataError("row " + std::to_string(row) + ": label " + std::to_string(batch.labels[r]) +
                          " outside [0, " + std::to_string(num_classes) + ")",
                      std::nullopt, row);
    }
  }
}

void validate_mask(const Batch& batch) {
  for (std::size_t r = 0; r < batch.batch_size; ++r) {
    if (batch.token_ids[r * batch.seq_len] != kClsId) {
      throw DataError("row " + std::to_string(r) + ": does not start with [CLS]", std::nullopt, r);
    }
    for (std::size_t t = 0; t < batch.seq_len; ++t) {
      const bool pad = batch.token_ids[r * batch.seq_len + t] == kPadId;
      if (pad == static_cast<bool>(batch.attn_mask[r * batch.seq_len + t])) {
        throw DataError("row " + std::to_string(r) + ": mask disagrees with padding at position " +
                            std::to_string(t),
                        std::nullopt, r);
      }
    }
  }
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

std::vector<SupervisedExample> parse_supervised_tsv(std::string_view text) {
  std::vector<SupervisedExample> rows;
  auto lines = split_lines(text);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (is_blank(lines[i])) continue;
    auto fields = split_tabs(lines[i]);
    const std::size_t line_no = i + 1;
    if (fields.size() < 2 || fields.size() > 3) {
      throw DataError("line " + std::to_string(line_no) + ": expected 2 or 3 tab-separated fields, got " +
                          std::to_string(fields.size()),
                      line_no);
    }
    int label = -1;
    auto f = fields[0];
    auto [ptr, ec] = std::from_chars(f.data(), f.data() + f.size(), label);
    if (ec != std::errc() || ptr != f.data() + f.size() || label < 0) {
      throw DataError("line " + std::to_string(line_no) + ": invalid label '" + std::string(f) + "'", line_no);
    }
    SupervisedExample ex;
    ex.label = label;
    ex.sentence1 = std::string(fields[1]);
    if (fields.size() == 3) ex.sentence2 = std::string(fields[2]);
    rows.push_back(std::move(ex));
  }
  return rows;
}

std::vector<SimilarityExample> parse_similarity_tsv(std::string_view text) {
  std::vector<SimilarityExample> rows;
  auto lines = split_lines(text);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (is_blank(lines[i])) continue;
    auto fields = split_tabs(lines[i]);
    const std::size_t line_no = i + 1;
    if (fields.size() != 3) {
      throw DataError("line " + std::to_string(line_no) + ": expected 3 tab-separated fields, got " +
                          std::to_string(fields.size()),
                      line_no);
    }
    std::string score_text(fields[0]);
    double score = 0.0;
    std::size_t consumed = 0;
    try {
      score = std::stod(score_text, &consumed);
    } catch (const std::exception&) {
      consumed = 0;
    }
    if (consumed == 0 || consumed != score_text.size()) {
      throw DataError("line " + std::to_string(line_no) + ": invalid score '" + score_text + "'", line_no);
    }
    if (!(score >= 0.0 && score <= 5.0)) {
      throw DataError("line " + std::to_string(line_no) + ": score " + score_text + " outside [0, 5]", line_no);
    }
    rows.push_back({score, std::string(fields[1]), std::string(fields[2])});
  }
  return rows;
}

std::vector<std::string> parse_unsupervised_lines(std::string_view text) {
  std::vector<std::string> rows;
  for (auto line : split_lines(text)) {
    if (!is_blank(line)) rows.emplace_back(line);
  }
  return rows;
}

std::vector<SupervisedExample> load_supervised_tsv(const std::filesystem::path& path) {
  return parse_supervised_tsv(read_text_file(path));
}

std::vector<std::string> load_unsupervised_lines(const std::filesystem::path& path) {
  return parse_unsupervised_lines(read_text_file(path));
}

std::vector<SimilarityExample> load_similarity_tsv(const std::filesystem::path& path) {
  return parse_similarity_tsv(read_text_file(path));
}

std::vector<std::vector<std::size_t>> epoch_batches(std::size_t count, std::size_t batch_size,
                                                    std::uint64_t seed, std::uint64_t epoch, bool shuffle) {
  if (batch_size == 0) throw std::invalid_argument("batch_size must be positive");
  std::vector<std::size_t> order(count);
  std::iota(order.begin(), order.end(), std::size_t{0});
  if (shuffle) {
    std::mt19937_64 rng(derive_seed(seed, 0x5348554646ull, epoch));
    // Fisher-Yates with an explicit draw so the order is library-independent.
    for (std::size_t i = count; i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(rng() % i);
      std::swap(order[i - 1], order[j]);
    }
  }
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start < count; start += batch_size) {
    const std::size_t end = std::min(count, start + batch_size);
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                         order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return batches;
}

}  // namespace cal
