#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace cal {

inline constexpr std::int32_t kPadId = 0;
inline constexpr std::int32_t kUnkId = 1;
inline constexpr std::int32_t kClsId = 2;
inline constexpr std::int32_t kSepId = 3;
inline constexpr std::int32_t kNumReserved = 4;

/// Malformed input data. `line` is 1-based when the error refers to a file
/// line, `row` is 0-based when it refers to an in-memory example.
class DataError : public std::runtime_error {
 public:
  DataError(const std::string& what, std::optional<std::size_t> line = std::nullopt,
            std::optional<std::size_t> row = std::nullopt)
      : std::runtime_error(what), line_(line), row_(row) {}
  std::optional<std::size_t> line() const noexcept { return line_; }
  std::optional<std::size_t> row() const noexcept { return row_; }

 private:
  std::optional<std::size_t> line_;
  std::optional<std::size_t> row_;
};

/// A file could not be opened for reading or writing.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Lowercases ASCII, splits on whitespace and emits each ASCII punctuation
/// character as its own token.
std::vector<std::string> tokenize(std::string_view text);

class Vocab {
 public:
  /// Tokens with count >= min_freq, ordered by count desc then lexicographically.
  static Vocab build(std::span<const std::string> lines, std::size_t min_freq);
  /// Regular (non-reserved) tokens in id order.
  static Vocab from_tokens(std::vector<std::string> tokens);
  static Vocab load(const std::filesystem::path& path);

  /// One regular token per line; the reserved ids are implicit.
  void save(const std::filesystem::path& path) const;
  std::string serialize() const;

  std::int32_t id(std::string_view token) const;
  const std::string& token(std::int32_t id) const;
  std::size_t size() const noexcept { return tokens_.size(); }
  bool contains(std::string_view token) const;

  std::vector<std::int32_t> ids(std::span<const std::string> tokens) const;
  std::vector<std::string> decode(std::span<const std::int32_t> ids) const;

  bool operator==(const Vocab& other) const { return tokens_ == other.tokens_; }

 private:
  std::vector<std::string> tokens_;  // indexed by id, reserved included
  std::unordered_map<std::string, std::int32_t> index_;
};

struct SupervisedExample {
  int label = -1;
  std::string sentence1;
  std::optional<std::string> sentence2;
};

struct SimilarityExample {
  double score = 0.0;
  std::string sentence1;
  std::string sentence2;
};

/// Padded token matrix. Row b occupies token_ids[b * seq_len, (b + 1) * seq_len).
struct Batch {
  std::size_t batch_size = 0;
  std::size_t seq_len = 0;
  std::vector<std::int32_t> token_ids;
  std::vector<std::uint8_t> attn_mask;
  std::vector<std::int32_t> labels;   // empty when unlabeled
  std::vector<float> pair_scores;     // empty unless similarity data
  std::vector<std::size_t> raw_indices;

  std::size_t tokens() const noexcept { return batch_size * seq_len; }
  std::size_t length(std::size_t row) const;
};

/// [CLS] s [SEP], truncated to max_len keeping the trailing [SEP].
Batch encode_sentences(std::span<const std::string> sentences, const Vocab& vocab, std::size_t max_len,
                       std::span<const std::size_t> raw_indices = {});

/// Single sentences or packed pairs [CLS] s1 [SEP] s2 [SEP].
/// Pairs are truncated longest-first. Rows without a label are rejected.
Batch encode_batch(std::span<const SupervisedExample> rows, const Vocab& vocab, std::size_t max_len,
                   std::span<const std::size_t> raw_indices = {});

/// Throws DataError naming the first row with a label outside [0, num_classes).
void validate_labels(const Batch& batch, std::size_t num_classes);
/// Throws DataError when the mask disagrees with the padding layout.
void validate_mask(const Batch& batch);

std::vector<SupervisedExample> load_supervised_tsv(const std::filesystem::path& path);
std::vector<std::string> load_unsupervised_lines(const std::filesystem::path& path);
std::vector<SimilarityExample> load_similarity_tsv(const std::filesystem::path& path);

std::vector<SupervisedExample> parse_supervised_tsv(std::string_view text);
std::vector<SimilarityExample> parse_similarity_tsv(std::string_view text);
std::vector<std::string> parse_unsupervised_lines(std::string_view text);

/// Shuffled index groups for one epoch; identical for equal (seed, epoch).
/// The trailing short batch is kept.
std::vector<std::vector<std::size_t>> epoch_batches(std::size_t count, std::size_t batch_size,
                                                    std::uint64_t seed, std::uint64_t epoch,
                                                    bool shuffle = true);

std::string read_text_file(const std::filesystem::path& path);

}  // namespace cal
