#include "essaylens/synthetic.hpp"

#include <cmath>
#include <string>

#include "essaylens/embeddings.hpp"
#include "essaylens/rng.hpp"

namespace essaylens::synth {

namespace {

constexpr const char* kFiller[] = {
    "the",    "writer", "explains", "that",   "people", "often",  "think", "about", "their",  "day",
    "school", "friends", "we",      "can",    "see",    "this",   "when",  "they",  "go",     "home",
    "many",   "reasons", "because", "story",  "place",  "time",   "makes", "some",  "things", "good",
    "house",  "road",   "weather", "family", "town",   "summer", "work",  "book",  "kids",   "idea"};
constexpr const char* kStrong[] = {"evidence", "analysis", "insightful"};
constexpr const char* kWeak[] = {"vague", "unclear", "rambling"};

template <std::size_t N>
const char* pick(const char* const (&words)[N], CounterRng& rng) {
  return words[rng.below(N)];
}

}  // namespace

std::vector<corpus::EssayRecord> make_corpus(const SyntheticOptions& opts) {
  if (opts.score_max <= opts.score_min) fail(ErrorCode::invalid_argument, "synthetic corpus needs two classes");
  if (opts.min_sentences < 1 || opts.max_sentences < opts.min_sentences)
    fail(ErrorCode::invalid_argument, "bad synthetic sentence range");
  CounterRng rng(opts.seed);
  const int classes = opts.score_max - opts.score_min + 1;
  const embed::HashedEmbedder embedder(opts.dim, opts.seed);

  std::vector<corpus::EssayRecord> out;
  out.reserve(opts.essays);
  for (std::size_t n = 0; n < opts.essays; ++n) {
    const int k = static_cast<int>(rng.below(static_cast<std::uint64_t>(classes)));
    const int span = opts.max_sentences - opts.min_sentences + 1;
    const int s = opts.min_sentences + static_cast<int>(rng.below(static_cast<std::uint64_t>(span)));
    const int strong = static_cast<int>(std::lround(static_cast<double>(k) / (classes - 1) * s));

    std::vector<bool> is_strong(static_cast<std::size_t>(s), false);
    for (int i = 0; i < strong; ++i) is_strong[static_cast<std::size_t>(i)] = true;
    rng.shuffle(is_strong.begin(), is_strong.end());

    corpus::EssayRecord r;
    r.essay_id = "synth-" + std::to_string(n + 1);
    r.set_id = opts.set_id;
    r.score = opts.score_min + k;
    r.normalized = static_cast<double>(k) / (classes - 1);
    for (int i = 0; i < s; ++i) {
      // a few filler words plus two markers of the sentence's polarity
      std::vector<std::string> words;
      const int filler = 3 + static_cast<int>(rng.below(4));
      for (int w = 0; w < filler; ++w) words.emplace_back(pick(kFiller, rng));
      for (int w = 0; w < 2; ++w) words.emplace_back(is_strong[static_cast<std::size_t>(i)] ? pick(kStrong, rng) : pick(kWeak, rng));
      rng.shuffle(words.begin(), words.end());
      std::string sentence;
      for (const auto& w : words) {
        if (!sentence.empty()) sentence += ' ';
        sentence += w;
      }
      sentence[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(sentence[0])));
      sentence += '.';
      if (!r.text.empty()) r.text += ' ';
      r.text += sentence;
      r.sentences.push_back(std::move(sentence));
    }
    if (opts.embed) {
      r.embedding = embedder.embed(r.sentences);
      r.embedded = true;
    }
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace essaylens::synth
