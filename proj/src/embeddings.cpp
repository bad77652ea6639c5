#include "essaylens/embeddings.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <fstream>
#include <istream>
#include <ostream>

#include "json.hpp"

#include "essaylens/error.hpp"

namespace essaylens::embed {

namespace {

bool is_space(char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; }
bool is_terminator(char c) { return c == '.' || c == '?' || c == '!'; }
bool is_closer(char c) { return c == '"' || c == '\'' || c == ')' || c == ']'; }

// ASAP anonymization tokens (@CAPS1, @PERSON2, ...) stand in for capitalized
// words, so '@' counts as a sentence opener.
bool opens_sentence(char c) { return (c >= 'A' && c <= 'Z') || c == '@'; }

constexpr std::array<std::string_view, 8> kAbbreviations = {"mr.", "mrs.", "dr.", "st.", "etc.", "e.g.", "i.e.", "vs."};

bool ends_with_abbreviation(std::string_view text, std::size_t period) {
  std::size_t begin = period;
  while (begin > 0 && !is_space(text[begin - 1])) --begin;
  std::string word(text.substr(begin, period + 1 - begin));
  while (!word.empty() && (word.front() == '"' || word.front() == '(' || word.front() == '\'')) word.erase(0, 1);
  for (auto& c : word) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return std::find(kAbbreviations.begin(), kAbbreviations.end(), word) != kAbbreviations.end();
}

}  // namespace

SentenceSplit segment_sentences(std::string_view text) {
  SentenceSplit out;
  std::size_t start = std::string_view::npos;  // first non-space byte of the open segment
  auto close = [&](std::size_t end) {
    if (start == std::string_view::npos) return;
    std::size_t e = end;
    while (e > start && is_space(text[e - 1])) --e;
    if (e > start) {
      out.sentences.emplace_back(text.substr(start, e - start));
      out.offsets.emplace_back(start, e);
    }
    start = std::string_view::npos;
  };

  std::size_t i = 0;
  while (i < text.size()) {
    const char c = text[i];
    if (c == '\n') {
      close(i);
      ++i;
      continue;
    }
    if (start == std::string_view::npos) {
      if (!is_space(c)) start = i;
      ++i;
      continue;
    }
    if (!is_terminator(c)) {
      ++i;
      continue;
    }
    std::size_t end = i + 1;
    while (end < text.size() && is_terminator(text[end])) ++end;
    while (end < text.size() && is_closer(text[end])) ++end;
    std::size_t next = end;
    while (next < text.size() && is_space(text[next]) && text[next] != '\n') ++next;
    const bool at_end = next >= text.size() || text[next] == '\n';
    const bool boundary = at_end || (next > end && opens_sentence(text[next]));
    const bool abbreviation = c == '.' && end == i + 1 && ends_with_abbreviation(text, i);
    if (boundary && !abbreviation) close(end);
    i = end;
  }
  close(text.size());
  return out;
}

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::string cur;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isalnum(c) || c >= 0x80) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else if (!cur.empty()) {
      tokens.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) tokens.push_back(std::move(cur));
  return tokens;
}

std::string ProviderSpec::id() const {
  if (kind == "hashed") return "hashed:" + std::to_string(dim) + ":" + std::to_string(seed);
  return kind;
}

ProviderSpec ProviderSpec::parse(std::string_view id) {
  ProviderSpec spec;
  const auto first = id.find(':');
  spec.kind = std::string(id.substr(0, first));
  if (first == std::string_view::npos) {
    if (spec.kind == "use") spec.dim = 512;
    else if (spec.kind == "sbert") spec.dim = 768;
    return spec;
  }
  const auto second = id.find(':', first + 1);
  try {
    spec.dim = std::stol(std::string(id.substr(first + 1, second - first - 1)));
    if (second != std::string_view::npos) spec.seed = std::stoull(std::string(id.substr(second + 1)));
  } catch (const std::exception&) {
    fail(ErrorCode::invalid_argument, "malformed provider id '" + std::string(id) + "'");
  }
  if (spec.dim <= 0) fail(ErrorCode::invalid_argument, "provider dimension must be positive");
  return spec;
}

HashedEmbedder::HashedEmbedder(Index dim, std::uint64_t seed) : dim_(dim), seed_(seed) {
  if (dim <= 0) fail(ErrorCode::invalid_argument, "embedding dimension must be positive");
}

std::string HashedEmbedder::id() const { return ProviderSpec{"hashed", dim_, seed_}.id(); }

std::uint64_t HashedEmbedder::hash(std::string_view token) const {
  std::uint64_t h = 0xcbf29ce484222325ULL ^ seed_;
  for (char ch : token) {
    h ^= static_cast<unsigned char>(ch);
    h *= 0x100000001b3ULL;
  }
  return h;
}

MatrixXd HashedEmbedder::embed(const std::vector<std::string>& sentences) const {
  MatrixXd out = MatrixXd::Zero(static_cast<Index>(sentences.size()), dim_);
  for (std::size_t s = 0; s < sentences.size(); ++s) {
    auto tokens = tokenize(sentences[s]);
    if (tokens.empty()) tokens.emplace_back("<empty>");
    for (const auto& t : tokens) {
      const std::uint64_t h = hash(t);
      const auto idx = static_cast<Index>(h % static_cast<std::uint64_t>(dim_));
      out(static_cast<Index>(s), idx) += (h >> 63) ? -1.0 : 1.0;
    }
    const double norm = out.row(static_cast<Index>(s)).norm();
    if (norm > 0.0) {
      out.row(static_cast<Index>(s)) /= norm;
    } else {
      // Every token cancelled out; fall back to the reserved token.
      const std::uint64_t h = hash("<empty>");
      out(static_cast<Index>(s), static_cast<Index>(h % static_cast<std::uint64_t>(dim_))) = 1.0;
    }
  }
  return out;
}

std::unique_ptr<SentenceEmbedder> make_provider(const ProviderSpec& spec) {
  if (spec.kind == "hashed") return std::make_unique<HashedEmbedder>(spec.dim, spec.seed);
  fail(ErrorCode::provider_unavailable,
       "embedding provider '" + spec.id() + "' cannot run in-process; supply its vectors as an embedding file");
}

std::unique_ptr<SentenceEmbedder> make_provider(std::string_view id) { return make_provider(ProviderSpec::parse(id)); }

EmbeddingMatrix embed_sentences(const SentenceEmbedder& provider, const std::vector<std::string>& sentences,
                                std::optional<Index> corpus_dim) {
  if (corpus_dim && *corpus_dim != provider.dim())
    fail(ErrorCode::dimension_mismatch, "provider '" + provider.id() + "' produces " + std::to_string(provider.dim()) +
                                            "-dim vectors, corpus uses " + std::to_string(*corpus_dim));
  return {provider.embed(sentences), provider.id()};
}

// -- files ----------------------------------------------------------------------

void write_embedding_file(std::ostream& out, const std::vector<EmbeddingRecord>& records) {
  std::optional<Index> dim;
  for (const auto& r : records) {
    if (r.vectors.rows() != static_cast<Index>(r.sentences.size()))
      fail(ErrorCode::invalid_argument, "document '" + r.id + "' has " + std::to_string(r.vectors.rows()) +
                                            " vectors for " + std::to_string(r.sentences.size()) + " sentences");
    const Index d = r.vectors.rows() > 0 ? r.vectors.cols() : r.dim;
    if (dim && *dim != d)
      fail(ErrorCode::dimension_mismatch, "document '" + r.id + "' has dim " + std::to_string(d) + ", expected " +
                                              std::to_string(*dim));
    dim = d;
    nlohmann::json vectors = nlohmann::json::array();
    for (Index i = 0; i < r.vectors.rows(); ++i) {
      nlohmann::json row = nlohmann::json::array();
      for (Index j = 0; j < r.vectors.cols(); ++j) row.push_back(r.vectors(i, j));
      vectors.push_back(std::move(row));
    }
    nlohmann::json j = {{"id", r.id}, {"sentences", r.sentences}, {"vectors", std::move(vectors)},
                        {"dim", d},   {"provider", r.provider}};
    out << j.dump() << '\n';
  }
}

std::vector<EmbeddingRecord> read_embedding_file(std::istream& in) {
  std::vector<EmbeddingRecord> records;
  std::optional<Index> dim;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    const std::string where = "embedding file line " + std::to_string(line_no);
    EmbeddingRecord r;
    try {
      const auto j = nlohmann::json::parse(line);
      r.id = j.at("id").get<std::string>();
      r.sentences = j.at("sentences").get<std::vector<std::string>>();
      r.dim = j.at("dim").get<Index>();
      r.provider = j.value("provider", std::string{});
      const auto& vectors = j.at("vectors");
      if (!vectors.is_array() || vectors.size() != r.sentences.size())
        fail(ErrorCode::malformed_line, where + ": vector count does not match sentence count");
      r.vectors.resize(static_cast<Index>(vectors.size()), r.dim);
      for (std::size_t i = 0; i < vectors.size(); ++i) {
        if (!vectors[i].is_array() || static_cast<Index>(vectors[i].size()) != r.dim)
          fail(ErrorCode::dimension_mismatch, where + ": vector " + std::to_string(i) + " does not have dim " +
                                                  std::to_string(r.dim));
        for (std::size_t k = 0; k < vectors[i].size(); ++k)
          r.vectors(static_cast<Index>(i), static_cast<Index>(k)) = vectors[i][k].get<double>();
      }
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorCode::malformed_line, where + ": " + e.what());
    }
    if (dim && *dim != r.dim)
      fail(ErrorCode::dimension_mismatch, where + ": dim " + std::to_string(r.dim) + " differs from earlier dim " +
                                              std::to_string(*dim));
    dim = r.dim;
    records.push_back(std::move(r));
  }
  return records;
}

std::vector<EmbeddingRecord> load_embedding_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::io_error, "cannot open embedding file " + path);
  return read_embedding_file(in);
}

void save_embedding_file(const std::string& path, const std::vector<EmbeddingRecord>& records) {
  std::ofstream out(path);
  if (!out) fail(ErrorCode::io_error, "cannot write embedding file " + path);
  write_embedding_file(out, records);
}

}  // namespace essaylens::embed
