#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "essaylens/corpus.hpp"
#include "essaylens/hypergen.hpp"
#include "essaylens/layers.hpp"

namespace essaylens::scoring {

enum class ModelKind { lstm, mha, mha2, mha_blstm, passage_conditioned };

std::string to_string(ModelKind kind);
/// Accepts the enum names plus the display names (LSTM, MHA, 2MHA, MHA+BLSTM, PD).
ModelKind parse_model_kind(const std::string& text);
const std::vector<ModelKind>& all_model_kinds();

struct ModelSpec {
  ModelKind kind = ModelKind::mha;
  hyper::HyperParams hp;
  Index input_dim = 512;
  int score_min = 0;
  int score_max = 1;
  int set_id = 0;
  std::string provider;  // embedding provider id the model was trained against

  int n_classes() const { return score_max - score_min + 1; }
};

/// Throws invalid_spec.
void validate(const ModelSpec& spec);

void to_json(nlohmann::json& j, const ModelSpec& s);
void from_json(const nlohmann::json& j, ModelSpec& s);

inline constexpr std::size_t kStatCount = 4;
using EssayStats = std::array<double, kStatCount>;  // sentences, tokens, mean sentence length, type/token

EssayStats essay_stats(const std::vector<std::string>& sentences);

struct EssayInput {
  MatrixXd embeddings;  // one row per sentence
  EssayStats stats{};
  bool embedded = false;
};

EssayInput make_input(const std::vector<std::string>& sentences, MatrixXd embeddings);

struct Example {
  EssayInput input;
  int score = 0;
};

/// Random-access view over labelled examples; training and evaluation only
/// touch records through this interface.
class Dataset {
 public:
  virtual ~Dataset() = default;
  virtual std::size_t size() const = 0;
  virtual const Example& at(std::size_t index) const = 0;
};

class VectorDataset final : public Dataset {
 public:
  VectorDataset() = default;
  explicit VectorDataset(std::vector<Example> examples) : examples_(std::move(examples)) {}
  std::size_t size() const override { return examples_.size(); }
  const Example& at(std::size_t index) const override;
  void push_back(Example e) { examples_.push_back(std::move(e)); }

 private:
  std::vector<Example> examples_;
};

/// Converts corpus records; throws unembedded_record for records without vectors.
VectorDataset make_dataset(const std::vector<corpus::EssayRecord>& records);

struct Provenance {
  std::uint64_t seed = 0;
  int epochs_run = 0;
  int best_epoch = 0;
  double best_dev_qwk = 0.0;
  bool trained = false;
};

struct ScoreModel {
  ModelSpec spec;
  nn::Parameters params;
  Provenance provenance;
  EssayStats stats_mean{};
  EssayStats stats_scale{1.0, 1.0, 1.0, 1.0};
  MatrixXd passage;  // passage sentence embeddings (passage_conditioned only)
};

ScoreModel build_model(const ModelSpec& spec, std::uint64_t seed, const MatrixXd& passage = {});

/// Closed-form parameter count for a spec; matches parameter_count(build_model(spec).params).
Index expected_parameter_count(const ModelSpec& spec);

struct ScorePrediction {
  std::vector<double> class_probs;
  double regression = 0.0;      // sigmoid output in [0, 1]
  double expected_score = 0.0;  // E = sum_k p_k (score_min + k)
  double regression_score = 0.0;
  double blended_value = 0.0;
  int score = 0;
};

/// round(P E + (1 - P) R) clamped to the score range.
int blend_scores(double P, double expected, double regression_score, int score_min, int score_max);

struct PredictOptions {
  /// Pad the essay with masked zero rows up to this many sentences.
  Index pad_to = 0;
};

/// Pure; safe to call concurrently on a shared model.  Throws dimension_mismatch.
ScorePrediction predict(const ScoreModel& model, const EssayInput& essay, PredictOptions opts = {});

// -- training ------------------------------------------------------------------

struct EpochLog {
  int epoch = 0;
  double train_loss = 0.0;
  double dev_loss = 0.0;
  double dev_qwk = 0.0;
  double learning_rate = 0.0;

  bool operator==(const EpochLog&) const = default;
};

struct TrainReport {
  std::vector<EpochLog> epochs;
  int best_epoch = 0;
  std::string stop_reason;  // "patience" or "max_epochs"
  std::int64_t steps = 0;

  bool operator==(const TrainReport&) const = default;
};

struct TrainOptions {
  /// Fixed learning rate override; takes precedence over the schedule.
  std::optional<double> learning_rate;
};

struct TrainResult {
  ScoreModel model;
  TrainReport report;
};

/// Mini-batch training on fold.train with early stopping on fold.dev QWK.
/// Records in fold.test are never accessed.
TrainResult train(const ScoreModel& model, const Dataset& data, const corpus::Fold& fold, TrainOptions opts = {});
TrainResult train(const ScoreModel& model, const Dataset& data, const corpus::Fold& fold,
                  const hyper::HyperParams& hp, TrainOptions opts = {});

/// Combined-loss gradients for one batch at the current parameters (no dropout).
struct LossAndGradients {
  double loss = 0.0;
  nn::Parameters gradients;
};
LossAndGradients batch_gradients(const ScoreModel& model, const std::vector<const Example*>& batch);

struct GradientCheck {
  double max_relative_error = 0.0;
  std::string worst_parameter;
  Index worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

/// Compares analytic and central-difference gradients over every parameter
/// entry, for one batch.
GradientCheck gradient_check(const ScoreModel& model, const std::vector<const Example*>& batch, double h = 1e-6);

// -- container -------------------------------------------------------------------

inline constexpr std::uint8_t kContainerVersion = 1;

std::string save_model(const ScoreModel& model);
ScoreModel load_model(const std::string& bytes);
void save_model_file(const ScoreModel& model, const std::string& path);
ScoreModel load_model_file(const std::string& path);

nlohmann::json prediction_to_json(const ScorePrediction& p);

}  // namespace essaylens::scoring
