#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "essaylens/tensor.hpp"

namespace essaylens::corpus {

struct EssaySetMeta {
  int set_id = 0;
  int grade_level = 0;
  int avg_length_words = 0;
  int score_min = 0;
  int score_max = 1;
  int essay_count = 0;
  bool source_dependent = false;
  std::string description;
  std::optional<std::string> prompt;
  std::optional<std::string> passage;

  int n_classes() const { return score_max - score_min + 1; }
};

void validate(const EssaySetMeta& meta);

void to_json(nlohmann::json& j, const EssaySetMeta& m);
void from_json(const nlohmann::json& j, EssaySetMeta& m);

/// The essay-set table the rest of the system keys off.  The default
/// collection is the eight ASAP-AES prompts.
class EssaySetCollection {
 public:
  EssaySetCollection() = default;
  explicit EssaySetCollection(std::vector<EssaySetMeta> sets);

  static EssaySetCollection builtin();
  /// JSON array of EssaySetMeta objects.
  static EssaySetCollection from_json_text(const std::string& text);
  static EssaySetCollection load(const std::string& path);

  const std::vector<EssaySetMeta>& sets() const { return sets_; }
  const EssaySetMeta& at(int set_id) const;
  const EssaySetMeta* find(int set_id) const;

  /// Replaces or appends entries by set_id.
  void override_with(const EssaySetCollection& other);

  /// Mean class count over the collection (15.875 for the built-in table).
  double mean_class_count() const;

  nlohmann::json to_json() const;

 private:
  std::vector<EssaySetMeta> sets_;
};

struct EssayRecord {
  std::string essay_id;
  int set_id = 0;
  std::string text;
  int score = 0;
  double normalized = 0.0;
  std::vector<std::string> sentences;
  MatrixXd embedding;  // sentences x d_e once embedded
  bool embedded = false;
};

/// (score - score_min) / (score_max - score_min)
double normalize_score(int score, const EssaySetMeta& meta);

/// round(score_min + value * range), clamped to the set's range.
int denormalize_score(double value, const EssaySetMeta& meta);

struct ParseOptions {
  /// Receives non-fatal notices (e.g. the Windows-1252 fallback).
  std::vector<std::string>* warnings = nullptr;
};

/// Reads the public ASAP-AES tab-separated release.  Required columns:
/// essay_id, essay_set, essay, domain1_score; others are ignored.
std::vector<EssayRecord> parse_asap_tsv(std::istream& in, const EssaySetCollection& sets, ParseOptions opts = {});
std::vector<EssayRecord> load_asap_tsv(const std::string& path, const EssaySetCollection& sets,
                                       ParseOptions opts = {});

/// True when `bytes` is well-formed UTF-8.
bool is_valid_utf8(std::string_view bytes);
/// Decodes Windows-1252 bytes into UTF-8.
std::string windows1252_to_utf8(std::string_view bytes);

struct Fold {
  std::vector<std::size_t> train;
  std::vector<std::size_t> dev;
  std::vector<std::size_t> test;
};

inline constexpr std::size_t kFoldCount = 5;

struct FoldPlan {
  std::uint64_t seed = 0;
  std::array<Fold, kFoldCount> folds;
};

/// Seeded shuffle into five near-equal partitions; fold i tests on partition
/// i, tunes on partition (i + 1) mod 5 and trains on the remaining three.
FoldPlan make_folds(std::size_t n, std::uint64_t seed);

/// Label-stratified seeded subsample of round(fraction * |indices|) entries.
/// `labels[k]` is the label of `indices[k]`.  Every label keeps at least one
/// sample when the target size allows it.  Output preserves input order.
std::vector<std::size_t> reduce_training_set(const std::vector<std::size_t>& indices, const std::vector<int>& labels,
                                             double fraction, std::uint64_t seed);

}  // namespace essaylens::corpus
