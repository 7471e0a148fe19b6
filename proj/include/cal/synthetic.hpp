#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "cal/text.hpp"

namespace cal {

/// Binary task: label 1 iff the three motif tokens appear contiguously and in
/// order. Negatives mix pure-distractor sentences, sentences holding some of
/// the motif tokens, and sentences holding all three out of place.
struct MotifTaskConfig {
  std::size_t train_size = 2000;
  std::size_t dev_size = 500;
  std::size_t distractors = 40;
  std::size_t min_tokens = 6;
  std::size_t max_tokens = 12;
  double partial_fraction = 0.3;    // of negatives: 1-2 motif tokens present
  double scattered_fraction = 0.2;  // of negatives: all 3 present, not as the motif
  std::uint64_t seed = 7;
};

struct MotifTask {
  std::vector<std::string> motif;
  std::vector<SupervisedExample> train;
  std::vector<SupervisedExample> dev;
};

MotifTask make_motif_task(const MotifTaskConfig& config);

/// Template sentences "<det> <s0> <s1> <s2> <det> <s3>": a meaning fills the
/// content slots (slot i draws from its own words), and paraphrases of one
/// meaning differ in the freely chosen determiners. Graded pairs share k of
/// the content slots and carry gold similarity 5k / slots.
struct ParaphraseConfig {
  std::size_t slot_words = 12;
  std::size_t determiners = 3;
  std::size_t corpus_size = 2000;
  std::size_t graded_pairs = 200;
  std::uint64_t seed = 11;
};

inline constexpr std::size_t kParaphraseSlots = 4;

struct ParaphraseTask {
  std::vector<std::string> corpus;
  std::vector<SimilarityExample> graded;
};

ParaphraseTask make_paraphrase_task(const ParaphraseConfig& config);

}  // namespace cal
