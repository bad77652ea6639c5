#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "essaylens/corpus.hpp"
#include "essaylens/metrics.hpp"
#include "essaylens/scorers.hpp"

namespace essaylens::eval {

/// What a fold runner gets: the split, the data, and a per-fold seed
/// (seed + fold_index).
struct FoldTask {
  std::size_t fold_index = 0;
  corpus::Fold fold;
  std::uint64_t seed = 0;
  const scoring::Dataset* data = nullptr;
  const corpus::EssaySetMeta* meta = nullptr;
};

struct FoldOutcome {
  std::vector<int> predictions;  // one per fold.test entry, same order
  int epochs_run = 0;
  double best_dev_qwk = 0.0;
};

using FoldRunner = std::function<FoldOutcome(const FoldTask&)>;

struct FoldResult {
  std::size_t fold_index = 0;
  double test_qwk = 0.0;
  bool degenerate = false;
  std::size_t n_train = 0, n_dev = 0, n_test = 0;
  int epochs_run = 0;
  double best_dev_qwk = 0.0;
};

struct CrossValidation {
  std::string model;
  int set_id = 0;
  double mean_qwk = 0.0;  // mean of the five fold QWKs
  std::vector<FoldResult> folds;
};

struct CvOptions {
  /// Applied with reduce_training_set to train and dev of every fold.
  double fraction = 1.0;
  /// Run folds on separate threads.
  bool parallel = false;
};

CrossValidation cross_validate(const FoldRunner& runner, const std::string& model_name, const scoring::Dataset& data,
                               const corpus::EssaySetMeta& meta, std::uint64_t seed, CvOptions opts = {});

/// Trains a fresh model of `kind` per fold.
FoldRunner model_runner(scoring::ModelKind kind, const hyper::HyperParams& hp, Index input_dim,
                        scoring::TrainOptions train_opts = {});

CrossValidation cross_validate(scoring::ModelKind kind, const hyper::HyperParams& hp, const scoring::Dataset& data,
                               const corpus::EssaySetMeta& meta, std::uint64_t seed, CvOptions opts = {});

struct SweepRow {
  double fraction = 1.0;
  double mean_qwk = 0.0;
  CrossValidation detail;
};

/// Throws fraction_out_of_range for fractions outside (0, 1].
std::vector<SweepRow> reduced_data_sweep(const FoldRunner& runner, const std::string& model_name,
                                         const scoring::Dataset& data, const corpus::EssaySetMeta& meta,
                                         const std::vector<double>& fractions, std::uint64_t seed,
                                         bool parallel = false);

// -- reporting ---------------------------------------------------------------------

struct QwkTable {
  std::string model;
  std::map<int, double> per_set;

  /// Arithmetic mean of the sets present; nullopt when empty.
  std::optional<double> average() const;
};

nlohmann::json to_json(const QwkTable& t);
QwkTable qwk_table_from_json(const nlohmann::json& j);

/// Aligned plain-text table with columns Model, 1..8, Avg; absent sets print "-".
std::string format_table(const std::vector<QwkTable>& rows);

nlohmann::json to_json(const CrossValidation& cv);
nlohmann::json to_json(const std::vector<SweepRow>& sweep);

}  // namespace essaylens::eval
