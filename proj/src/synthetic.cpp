#include "cal/synthetic.hpp"

#include <algorithm>
#include <array>
#include <numeric>
#include <random>
#include <stdexcept>

namespace cal {

namespace {

using Rng = std::mt19937_64;

std::size_t uniform_index(Rng& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

std::string join(const std::vector<std::string>& words) {
  std::string out;
  for (const auto& w : words) {
    if (!out.empty()) out += ' ';
    out += w;
  }
  return out;
}

bool has_motif(const std::vector<std::string>& words, const std::vector<std::string>& motif) {
  for (std::size_t i = 0; i + motif.size() <= words.size(); ++i) {
    if (std::equal(motif.begin(), motif.end(), words.begin() + static_cast<std::ptrdiff_t>(i))) return true;
  }
  return false;
}

std::vector<std::string> distractor_sentence(Rng& rng, const MotifTaskConfig& c) {
  const std::size_t n = uniform_index(rng, c.min_tokens, c.max_tokens);
  std::vector<std::string> words(n);
  for (auto& w : words) w = "d" + std::to_string(uniform_index(rng, 0, c.distractors - 1));
  return words;
}

SupervisedExample motif_example(Rng& rng, const MotifTaskConfig& c, const std::vector<std::string>& motif) {
  auto words = distractor_sentence(rng, c);
  const bool positive = uniform_index(rng, 0, 1) == 1;
  if (positive) {
    const std::size_t at = uniform_index(rng, 0, words.size() - motif.size());
    std::copy(motif.begin(), motif.end(), words.begin() + static_cast<std::ptrdiff_t>(at));
    return {1, join(words), std::nullopt};
  }
  const double kind = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  if (kind < c.partial_fraction) {
    std::vector<std::size_t> which{0, 1, 2};
    std::shuffle(which.begin(), which.end(), rng);
    const std::size_t keep = uniform_index(rng, 1, 2);
    for (std::size_t i = 0; i < keep; ++i) words[uniform_index(rng, 0, words.size() - 1)] = motif[which[i]];
  } else if (kind < c.partial_fraction + c.scattered_fraction) {
    do {
      std::vector<std::size_t> pos(words.size());
      std::iota(pos.begin(), pos.end(), std::size_t{0});
      std::shuffle(pos.begin(), pos.end(), rng);
      for (std::size_t i = 0; i < motif.size(); ++i) words[pos[i]] = motif[i];
    } while (has_motif(words, motif));
  }
  // Rejection keeps the label exact if random placement recreated the motif.
  if (has_motif(words, motif)) return {1, join(words), std::nullopt};
  return {0, join(words), std::nullopt};
}

using Meaning = std::array<std::size_t, kParaphraseSlots>;

std::string render(Rng& rng, const Meaning& m, const ParaphraseConfig& c) {
  auto det = [&] { return "t" + std::to_string(uniform_index(rng, 0, c.determiners - 1)); };
  auto slot = [&](std::size_t i) { return std::string(1, static_cast<char>('p' + i)) + std::to_string(m[i]); };
  return join({det(), slot(0), slot(1), slot(2), det(), slot(3)});
}

Meaning random_meaning(Rng& rng, const ParaphraseConfig& c) {
  Meaning m{};
  for (auto& w : m) w = uniform_index(rng, 0, c.slot_words - 1);
  return m;
}

}  // namespace

MotifTask make_motif_task(const MotifTaskConfig& c) {
  if (c.min_tokens < 3 || c.max_tokens < c.min_tokens || c.distractors == 0) {
    throw std::invalid_argument("make_motif_task: need 3 <= min_tokens <= max_tokens and distractors > 0");
  }
  Rng rng(c.seed);
  MotifTask task;
  task.motif = {"ma", "mb", "mc"};
  for (std::size_t i = 0; i < c.train_size; ++i) task.train.push_back(motif_example(rng, c, task.motif));
  for (std::size_t i = 0; i < c.dev_size; ++i) task.dev.push_back(motif_example(rng, c, task.motif));
  return task;
}

ParaphraseTask make_paraphrase_task(const ParaphraseConfig& c) {
  if (c.slot_words < 2 || c.determiners == 0) {
    throw std::invalid_argument("make_paraphrase_task: need slot_words >= 2 and determiners >= 1");
  }
  Rng rng(c.seed);
  ParaphraseTask task;
  for (std::size_t i = 0; i < c.corpus_size; ++i) task.corpus.push_back(render(rng, random_meaning(rng, c), c));
  for (std::size_t i = 0; i < c.graded_pairs; ++i) {
    // Cycling k keeps every similarity grade equally represented.
    const std::size_t k = i % (kParaphraseSlots + 1);
    const Meaning a = random_meaning(rng, c);
    std::array<std::size_t, kParaphraseSlots> order{0, 1, 2, 3};
    std::shuffle(order.begin(), order.end(), rng);
    Meaning b = a;
    for (std::size_t j = k; j < kParaphraseSlots; ++j) {
      const std::size_t s = order[j];
      // Any other word of the same slot.
      b[s] = (a[s] + uniform_index(rng, 1, c.slot_words - 1)) % c.slot_words;
    }
    const double gold = 5.0 * static_cast<double>(k) / static_cast<double>(kParaphraseSlots);
    task.graded.push_back({gold, render(rng, a, c), render(rng, b, c)});
  }
  return task;
}

}  // namespace cal
