#pragma once

#include <cstdint>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "essaylens/tensor.hpp"

namespace essaylens::embed {

struct SentenceSplit {
  std::vector<std::string> sentences;
  /// [begin, end) byte offsets into the source text.
  std::vector<std::pair<std::size_t, std::size_t>> offsets;

  std::size_t size() const { return sentences.size(); }
};

/// Rule-based splitter: '.', '?' or '!' followed by whitespace and an
/// uppercase letter (or end of text) ends a sentence unless the word is a
/// known abbreviation; a newline ends any non-empty line.
SentenceSplit segment_sentences(std::string_view text);

/// Lowercased alphanumeric runs; bytes >= 0x80 count as word characters.
std::vector<std::string> tokenize(std::string_view text);

/// Identifies an embedding source, e.g. "hashed:512:0" for the built-in
/// provider with dim 512 and seed 0, or "use" for externally produced vectors.
struct ProviderSpec {
  std::string kind = "hashed";
  Index dim = 512;
  std::uint64_t seed = 0;

  std::string id() const;
  static ProviderSpec parse(std::string_view id);
};

class SentenceEmbedder {
 public:
  virtual ~SentenceEmbedder() = default;
  virtual std::string id() const = 0;
  virtual Index dim() const = 0;
  /// One row per sentence.
  virtual MatrixXd embed(const std::vector<std::string>& sentences) const = 0;
};

/// Hashed bag-of-tokens random projection: each token is hashed (seeded
/// 64-bit FNV-1a) to a coordinate and a sign, the signed counts are summed and
/// the row is L2-normalized.  Word order is ignored by construction.
class HashedEmbedder final : public SentenceEmbedder {
 public:
  explicit HashedEmbedder(Index dim = 512, std::uint64_t seed = 0);

  std::string id() const override;
  Index dim() const override { return dim_; }
  MatrixXd embed(const std::vector<std::string>& sentences) const override;

  std::uint64_t hash(std::string_view token) const;

 private:
  Index dim_;
  std::uint64_t seed_;
};

/// Only the hashed provider can be built in-process; other kinds arrive
/// through embedding files and yield provider_unavailable.
std::unique_ptr<SentenceEmbedder> make_provider(const ProviderSpec& spec);
std::unique_ptr<SentenceEmbedder> make_provider(std::string_view id);

struct EmbeddingMatrix {
  MatrixXd vectors;
  std::string provider;

  Index dim() const { return vectors.cols(); }
};

/// Embeds sentences, checking the provider width against an expected corpus
/// width when one is given.
EmbeddingMatrix embed_sentences(const SentenceEmbedder& provider, const std::vector<std::string>& sentences,
                                std::optional<Index> corpus_dim = std::nullopt);

// -- JSON Lines embedding files ---------------------------------------------------

struct EmbeddingRecord {
  std::string id;
  std::vector<std::string> sentences;
  MatrixXd vectors;  // sentences x dim
  Index dim = 0;
  std::string provider;
};

void write_embedding_file(std::ostream& out, const std::vector<EmbeddingRecord>& records);
std::vector<EmbeddingRecord> read_embedding_file(std::istream& in);
std::vector<EmbeddingRecord> load_embedding_file(const std::string& path);
void save_embedding_file(const std::string& path, const std::vector<EmbeddingRecord>& records);

}  // namespace essaylens::embed
