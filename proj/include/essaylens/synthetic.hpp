#pragma once

#include <cstdint>
#include <vector>

#include "essaylens/corpus.hpp"

namespace essaylens::synth {

/// A corpus whose scores are recoverable from sentence content: an essay of
/// score k out of C classes with S sentences has round(k / (C - 1) * S)
/// sentences containing a "strong" marker word and the rest a "weak" one.
struct SyntheticOptions {
  std::size_t essays = 200;
  int set_id = 3;
  int score_min = 0;
  int score_max = 3;
  int min_sentences = 4;
  int max_sentences = 10;
  Index dim = 64;  // hashed-embedder width
  std::uint64_t seed = 7;
  bool embed = true;
};

std::vector<corpus::EssayRecord> make_corpus(const SyntheticOptions& opts = {});

}  // namespace essaylens::synth
