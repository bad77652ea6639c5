#include "essaylens/scorers.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>
#include <unordered_set>

#include "essaylens/autodiff.hpp"
#include "essaylens/embeddings.hpp"
#include "essaylens/metrics.hpp"
#include "essaylens/objectives.hpp"
#include "essaylens/optim.hpp"

namespace essaylens::scoring {

using nlohmann::json;

namespace {

struct KindName {
  ModelKind kind;
  const char* id;
  const char* display;
};

constexpr KindName kKindNames[] = {
    {ModelKind::lstm, "lstm", "LSTM"},
    {ModelKind::mha, "mha", "MHA"},
    {ModelKind::mha2, "mha2", "2MHA"},
    {ModelKind::mha_blstm, "mha_blstm", "MHA+BLSTM"},
    {ModelKind::passage_conditioned, "passage_conditioned", "PD"},
};

bool uses_attention(ModelKind k) { return k != ModelKind::lstm; }

int attention_depth(const ModelSpec& s) {
  switch (s.kind) {
    case ModelKind::lstm: return 0;
    case ModelKind::mha: return 1;
    case ModelKind::mha2: return 2;
    case ModelKind::mha_blstm: return s.hp.attention_layers;
    case ModelKind::passage_conditioned: return 2;
  }
  return 0;
}

nn::MhaConfig mha_config(const hyper::HyperParams& hp) {
  nn::MhaConfig cfg;
  cfg.d_model = hp.d_model;
  cfg.n_heads = hp.n_heads;
  cfg.d_ff = hp.d_ff;
  return cfg;
}

bool uses_pooling_readout(ModelKind k) {
  return k == ModelKind::mha || k == ModelKind::mha2 || k == ModelKind::passage_conditioned;
}

Index classifier_input(const ModelSpec& s) {
  const Index d = s.hp.d_model;
  switch (s.kind) {
    case ModelKind::lstm: return d;
    case ModelKind::mha:
    case ModelKind::mha2: return d;
    case ModelKind::mha_blstm: return 2 * d;  // forward, backward, mean of both directions
    case ModelKind::passage_conditioned: return 2 * d + static_cast<Index>(kStatCount);
  }
  return d;
}

}  // namespace

std::string to_string(ModelKind kind) {
  for (const auto& k : kKindNames)
    if (k.kind == kind) return k.id;
  return "unknown";
}

ModelKind parse_model_kind(const std::string& text) {
  for (const auto& k : kKindNames)
    if (text == k.id || text == k.display) return k.kind;
  fail(ErrorCode::invalid_spec, "unknown model kind '" + text + "'");
}

const std::vector<ModelKind>& all_model_kinds() {
  static const std::vector<ModelKind> kinds = {ModelKind::lstm, ModelKind::mha, ModelKind::mha2,
                                               ModelKind::mha_blstm, ModelKind::passage_conditioned};
  return kinds;
}

void validate(const ModelSpec& spec) {
  hyper::validate(spec.hp);
  if (spec.input_dim <= 0) fail(ErrorCode::invalid_spec, "input dimension must be positive");
  if (spec.n_classes() < 2)
    fail(ErrorCode::invalid_spec, "score range " + std::to_string(spec.score_min) + "-" +
                                      std::to_string(spec.score_max) + " has fewer than two classes");
  if (uses_attention(spec.kind)) nn::validate(mha_config(spec.hp));
  if (spec.kind == ModelKind::mha_blstm) {
    if (spec.hp.d_model % 2 != 0) fail(ErrorCode::invalid_spec, "MHA+BLSTM needs an even d_model");
    if (spec.hp.attention_layers < 1) fail(ErrorCode::invalid_spec, "MHA+BLSTM needs at least one attention layer");
  }
}

void to_json(json& j, const ModelSpec& s) {
  j = json{{"kind", to_string(s.kind)}, {"hyperparams", s.hp},     {"input_dim", s.input_dim},
           {"score_min", s.score_min},  {"score_max", s.score_max}, {"set_id", s.set_id},
           {"provider", s.provider}};
}

void from_json(const json& j, ModelSpec& s) {
  s.kind = parse_model_kind(j.at("kind").get<std::string>());
  s.hp = j.at("hyperparams").get<hyper::HyperParams>();
  s.input_dim = j.at("input_dim").get<Index>();
  s.score_min = j.at("score_min").get<int>();
  s.score_max = j.at("score_max").get<int>();
  s.set_id = j.value("set_id", 0);
  s.provider = j.value("provider", std::string());
}

EssayStats essay_stats(const std::vector<std::string>& sentences) {
  std::size_t tokens = 0;
  std::unordered_set<std::string> types;
  for (const auto& s : sentences)
    for (auto& t : embed::tokenize(s)) {
      ++tokens;
      types.insert(std::move(t));
    }
  const double n = static_cast<double>(sentences.size());
  const double t = static_cast<double>(tokens);
  return {n, t, n > 0 ? t / n : 0.0, tokens > 0 ? static_cast<double>(types.size()) / t : 0.0};
}

EssayInput make_input(const std::vector<std::string>& sentences, MatrixXd embeddings) {
  if (embeddings.rows() != static_cast<Index>(sentences.size()))
    fail(ErrorCode::dimension_mismatch, std::to_string(sentences.size()) + " sentences but " +
                                            std::to_string(embeddings.rows()) + " embedding rows");
  return {std::move(embeddings), essay_stats(sentences), true};
}

const Example& VectorDataset::at(std::size_t index) const {
  if (index >= examples_.size())
    fail(ErrorCode::index_out_of_range, "example " + std::to_string(index) + " of " +
                                            std::to_string(examples_.size()));
  return examples_[index];
}

VectorDataset make_dataset(const std::vector<corpus::EssayRecord>& records) {
  std::vector<Example> out;
  out.reserve(records.size());
  for (const auto& r : records) {
    if (!r.embedded) fail(ErrorCode::unembedded_record, "essay " + r.essay_id + " has no embeddings");
    out.push_back({make_input(r.sentences, r.embedding), r.score});
  }
  return VectorDataset(std::move(out));
}

// -- construction -------------------------------------------------------------------

ScoreModel build_model(const ModelSpec& spec, std::uint64_t seed, const MatrixXd& passage) {
  validate(spec);
  if (passage.size() > 0 && passage.cols() != spec.input_dim)
    fail(ErrorCode::dimension_mismatch, "passage embeddings have width " + std::to_string(passage.cols()) +
                                            ", model expects " + std::to_string(spec.input_dim));
  ScoreModel m;
  m.spec = spec;
  m.provenance.seed = seed;
  if (spec.kind == ModelKind::passage_conditioned) m.passage = passage;

  CounterRng rng(CounterRng::derive(seed, 0x6d6f64656c));
  auto& p = m.params;
  const Index d = spec.hp.d_model;
  const Index ff = spec.hp.d_ff;
  if (spec.input_dim != d) nn::init_dense(p, "input_projection", spec.input_dim, d, rng);

  if (spec.kind == ModelKind::lstm) {
    nn::init_lstm(p, "lstm", d, d, rng);
    nn::init_dense(p, "pre1", d, ff, rng);
    nn::init_dense(p, "pre2", ff, ff, rng);
  } else {
    MatrixXd cls(1, d);
    for (Index i = 0; i < d; ++i) cls(0, i) = rng.normal(0.0, 0.02);
    p["cls"] = cls;
    const auto cfg = mha_config(spec.hp);
    for (int l = 0; l < attention_depth(spec); ++l) nn::init_mha(p, "block" + std::to_string(l), cfg, rng);
    if (uses_pooling_readout(spec.kind) && spec.hp.readout == hyper::Readout::luong) nn::init_luong(p, "luong", d, rng);
    if (spec.kind == ModelKind::mha_blstm) {
      nn::init_lstm(p, "blstm.forward", d, d / 2, rng);
      nn::init_lstm(p, "blstm.backward", d, d / 2, rng);
    }
    nn::init_dense(p, "classifier", classifier_input(spec), ff, rng);
  }
  nn::init_dense(p, "head.class", ff, spec.n_classes(), rng);
  nn::init_dense(p, "head.regression", ff, 1, rng);
  return m;
}

Index expected_parameter_count(const ModelSpec& spec) {
  validate(spec);
  const Index d = spec.hp.d_model;
  const Index ff = spec.hp.d_ff;
  const Index c = spec.n_classes();
  auto dense = [](Index in, Index out) { return in * out + out; };
  auto lstm = [](Index in, Index h) { return 4 * h * in + 4 * h * h + 4 * h; };
  Index n = spec.input_dim != d ? dense(spec.input_dim, d) : 0;
  if (spec.kind == ModelKind::lstm) {
    n += lstm(d, d) + dense(d, ff) + dense(ff, ff);
  } else {
    const Index block = 4 * dense(d, d) - d + 2 * d + dense(d, ff) + dense(ff, d) + 2 * d;
    n += d + attention_depth(spec) * block;
    if (uses_pooling_readout(spec.kind) && spec.hp.readout == hyper::Readout::luong) n += d * d;
    if (spec.kind == ModelKind::mha_blstm) n += 2 * lstm(d, d / 2);
    n += dense(classifier_input(spec), ff);
  }
  return n + dense(ff, c) + dense(ff, 1);
}

// -- forward pass ---------------------------------------------------------------------

namespace {

template <typename S>
struct Heads {
  ad::Expr<S> probs;       // 1 x C
  ad::Expr<S> regression;  // 1 x 1
};

template <typename S>
class Forward {
 public:
  Forward(ad::Graph<S>& g, const ScoreModel& m, ad::DropoutContext& drop)
      : g_(g), m_(m), hp_(m.spec.hp), drop_(drop) {}

  Heads<S> essay(const EssayInput& in, Index pad_to) {
    std::vector<bool> mask;
    auto x = encode(in.embeddings, pad_to, mask);
    ad::Expr<S> features;
    switch (m_.spec.kind) {
      case ModelKind::lstm: {
        auto h = nn::lstm(g_, "lstm", x, hp_.d_model, mask).final_h;
        auto a = drop(nn::dense(g_, "pre1", h, nn::Activation::relu), 1, hp_.d_ff);
        return heads(drop(nn::dense(g_, "pre2", a, nn::Activation::relu), 1, hp_.d_ff));
      }
      case ModelKind::mha:
      case ModelKind::mha2: {
        auto seq = trunk(x, mask);
        features = pool(seq, mask);
        break;
      }
      case ModelKind::mha_blstm: {
        auto seq = trunk(x, mask);
        const Index half = hp_.d_model / 2;
        auto bl = nn::bilstm(g_, "blstm.forward", "blstm.backward", seq, half, mask);
        const auto valid = std::count(mask.begin(), mask.end(), true);
        Matrix<S> avg = Matrix<S>::Zero(1, static_cast<Index>(mask.size()));
        for (std::size_t t = 0; t < mask.size(); ++t)
          if (mask[t]) avg(0, static_cast<Index>(t)) = S(1) / static_cast<S>(valid);
        auto mean_state = ad::matmul(g_.constant(std::move(avg)), bl.states);
        features = ad::concat(std::vector<ad::Expr<S>>{bl.forward, bl.backward, mean_state}, ad::Axis::cols);
        break;
      }
      case ModelKind::passage_conditioned: {
        auto essay_seq = trunk(x, mask);
        auto essay_vec = pool(essay_seq, mask);
        std::vector<bool> pmask;
        auto px = encode(m_.passage, 0, pmask);
        auto passage_seq = trunk(px, pmask);
        auto passage_vec = pool(passage_seq, pmask);
        Matrix<S> z(1, static_cast<Index>(kStatCount));
        for (std::size_t i = 0; i < kStatCount; ++i)
          z(0, static_cast<Index>(i)) = static_cast<S>((in.stats[i] - m_.stats_mean[i]) / m_.stats_scale[i]);
        features = ad::concat(std::vector<ad::Expr<S>>{essay_vec, passage_vec, g_.constant(std::move(z))},
                              ad::Axis::cols);
        break;
      }
    }
    return heads(drop(nn::dense(g_, "classifier", features, nn::Activation::relu), 1, hp_.d_ff));
  }

 private:
  ad::Expr<S> drop(ad::Expr<S> x, Index rows, Index cols) { return ad::dropout(x, rows, cols, drop_); }

  /// Zero-padded, projected sentence sequence; fills `mask` with one flag per row.
  ad::Expr<S> encode(const MatrixXd& emb, Index pad_to, std::vector<bool>& mask) {
    const Index steps = std::max(emb.rows(), pad_to);
    const Index d_e = m_.spec.input_dim;
    mask.assign(static_cast<std::size_t>(steps), false);
    std::fill_n(mask.begin(), emb.rows(), true);
    Matrix<S> padded = Matrix<S>::Zero(steps, d_e);
    if (emb.rows() > 0) padded.topRows(emb.rows()) = emb.template cast<S>();
    auto x = g_.constant(std::move(padded));
    if (d_e != hp_.d_model) x = nn::dense(g_, "input_projection", x);
    return x;
  }

  /// CLS row + positions, positional encoding, then the attention stack.
  /// `mask` gains the CLS slot at the front.
  ad::Expr<S> trunk(ad::Expr<S> x, std::vector<bool>& mask) {
    const Index steps = static_cast<Index>(mask.size());
    auto cls = g_.parameter("cls");
    auto seq = steps > 0 ? ad::concat(std::vector<ad::Expr<S>>{cls, x}, ad::Axis::rows) : cls;
    mask.insert(mask.begin(), true);
    if (hp_.positional_encoding) seq = seq + g_.constant(nn::sinusoidal_encoding<S>(steps + 1, hp_.d_model));
    const auto cfg = mha_config(hp_);
    // Dropout lives on the classifier features only; inside the attention
    // stack it stalled training on small sets.
    ad::DropoutContext none;
    for (int l = 0; l < attention_depth(m_.spec); ++l)
      seq = nn::mha_block(g_, "block" + std::to_string(l), cfg, seq, mask, none);
    return seq;
  }

  ad::Expr<S> pool(ad::Expr<S> seq, const std::vector<bool>& mask) {
    auto cls = ad::row(seq, 0);
    if (hp_.readout == hyper::Readout::cls) return cls;
    return nn::luong_attention(g_, "luong", cls, seq, mask).context;
  }

  Heads<S> heads(ad::Expr<S> features) {
    return {nn::dense(g_, "head.class", features, nn::Activation::softmax),
            nn::dense(g_, "head.regression", features, nn::Activation::sigmoid)};
  }

  ad::Graph<S>& g_;
  const ScoreModel& m_;
  const hyper::HyperParams& hp_;
  ad::DropoutContext& drop_;
};

void check_input(const ScoreModel& m, const EssayInput& in) {
  if (!in.embedded) fail(ErrorCode::unembedded_record, "essay has not been embedded");
  if (in.embeddings.rows() > 0 && in.embeddings.cols() != m.spec.input_dim)
    fail(ErrorCode::dimension_mismatch, "essay embeddings have width " + std::to_string(in.embeddings.cols()) +
                                            ", model expects " + std::to_string(m.spec.input_dim));
}

template <typename S = double>
struct BatchGraph {
  ad::Graph<S> graph;
  ad::Expr<S> probs;       // N x C
  ad::Expr<S> regression;  // N x 1
  ad::Expr<S> loss;
};

bool kappa_applicable(const std::vector<int>& labels, double smoothing) {
  if (labels.size() < 2) return false;
  const std::set<int> distinct(labels.begin(), labels.end());
  return distinct.size() > 1 || smoothing > 0.0;
}

/// Builds the combined-loss graph for a batch.  The kappa objective falls
/// back to cross-entropy on batches where it is undefined.
template <typename S>
void build_batch(BatchGraph<S>& bg, const ScoreModel& m, const std::vector<const Example*>& batch,
                 ad::DropoutContext& drop) {
  const auto& spec = m.spec;
  Index pad_to = 0;
  for (const auto* e : batch) {
    check_input(m, e->input);
    pad_to = std::max(pad_to, e->input.embeddings.rows());
  }
  Forward<S> fwd(bg.graph, m, drop);
  std::vector<ad::Expr<S>> probs, regs;
  std::vector<int> labels;
  MatrixXd targets(static_cast<Index>(batch.size()), 1);
  for (std::size_t n = 0; n < batch.size(); ++n) {
    auto h = fwd.essay(batch[n]->input, pad_to);
    probs.push_back(h.probs);
    regs.push_back(h.regression);
    const int score = batch[n]->score;
    if (score < spec.score_min || score > spec.score_max)
      fail(ErrorCode::score_out_of_range, "score " + std::to_string(score) + " outside " +
                                              std::to_string(spec.score_min) + "-" + std::to_string(spec.score_max));
    labels.push_back(score - spec.score_min);
    targets(static_cast<Index>(n), 0) =
        static_cast<double>(score - spec.score_min) / static_cast<double>(spec.score_max - spec.score_min);
  }
  bg.probs = probs.size() == 1 ? probs.front() : ad::concat(probs, ad::Axis::rows);
  bg.regression = regs.size() == 1 ? regs.front() : ad::concat(regs, ad::Axis::rows);

  const double eps = spec.hp.label_smoothing;
  const Index c = spec.n_classes();
  ad::Expr<S> class_loss =
      spec.hp.class_loss == hyper::ClassLoss::ordinal_kappa && kappa_applicable(labels, eps)
          ? objectives::weighted_kappa_loss(bg.probs, labels, c, eps)
          : objectives::categorical_cross_entropy(bg.probs, objectives::smoothed_targets(labels, c, eps));
  auto mse = objectives::mean_squared_error(bg.regression, targets);
  const double P = spec.hp.P;
  bg.loss = class_loss * S(P) + mse * S(1.0 - P);
  bg.graph.mark_output("loss", bg.loss);
}

double class_loss_value(const ModelSpec& spec, const MatrixXd& probs, const std::vector<int>& labels) {
  const double eps = spec.hp.label_smoothing;
  if (spec.hp.class_loss == hyper::ClassLoss::ordinal_kappa && kappa_applicable(labels, eps))
    return objectives::weighted_kappa_loss(probs, labels, eps);
  return objectives::categorical_cross_entropy(probs, objectives::smoothed_targets(labels, spec.n_classes(), eps));
}

}  // namespace

int blend_scores(double P, double expected, double regression_score, int score_min, int score_max) {
  const double v = P * expected + (1.0 - P) * regression_score;
  const auto r = static_cast<int>(std::lround(v));
  return std::clamp(r, score_min, score_max);
}

ScorePrediction predict(const ScoreModel& model, const EssayInput& essay, PredictOptions opts) {
  check_input(model, essay);
  ad::Graph<double> g;
  ad::DropoutContext off;
  Forward<double> fwd(g, model, off);
  auto h = fwd.essay(essay, opts.pad_to);
  const auto t = ad::forward(g, nn::bind<double>(model.params));
  const MatrixXd& probs = t[h.probs.id];
  const auto& spec = model.spec;

  ScorePrediction p;
  p.class_probs.assign(probs.data(), probs.data() + probs.size());
  for (std::size_t k = 0; k < p.class_probs.size(); ++k)
    p.expected_score += p.class_probs[k] * static_cast<double>(spec.score_min + static_cast<int>(k));
  p.regression = t[h.regression.id](0, 0);
  p.regression_score = spec.score_min + p.regression * (spec.score_max - spec.score_min);
  p.blended_value = spec.hp.P * p.expected_score + (1.0 - spec.hp.P) * p.regression_score;
  p.score = blend_scores(spec.hp.P, p.expected_score, p.regression_score, spec.score_min, spec.score_max);
  return p;
}

json prediction_to_json(const ScorePrediction& p) {
  return json{{"class_probs", p.class_probs},       {"regression", p.regression},
              {"expected_score", p.expected_score}, {"regression_score", p.regression_score},
              {"blended_value", p.blended_value},   {"score", p.score}};
}

// -- training ---------------------------------------------------------------------------

LossAndGradients batch_gradients(const ScoreModel& model, const std::vector<const Example*>& batch) {
  BatchGraph bg;
  ad::DropoutContext off;
  build_batch(bg, model, batch, off);
  auto vg = ad::value_and_gradients(bg.graph, nn::bind<double>(model.params), bg.loss);
  LossAndGradients out;
  out.loss = vg.value;
  for (const auto& name : bg.graph.parameter_names()) out.gradients[name] = vg.gradients.at(name).matrix();
  return out;
}

GradientCheck gradient_check(const ScoreModel& model, const std::vector<const Example*>& batch, double h) {
  BatchGraph bg;
  ad::DropoutContext off;
  build_batch(bg, model, batch, off);
  const auto analytic = ad::backprop(bg.graph, nn::bind<double>(model.params), bg.loss);

  // The reference differences run in long double: with h = 1e-5 a double
  // loss leaves ~1e-11 of round-off in each quotient, which swamps entries
  // near 1e-8 (deep LSTM recurrences produce plenty of those).
  using Wide = long double;
  BatchGraph<Wide> wide;
  ad::DropoutContext off_wide;
  build_batch(wide, model, batch, off_wide);
  const auto bindings = nn::bind<Wide>(model.params);

  GradientCheck out;
  for (const auto& name : bg.graph.parameter_names()) {
    std::function<Wide(const Tensor<Wide>&)> f = [&](const Tensor<Wide>& x) {
      auto b = bindings;
      b[name] = x;
      return ad::forward(wide.graph, b)[wide.loss.id](0, 0);
    };
    const auto numeric = ad::finite_difference_grad(f, bindings.at(name), Wide(h));
    const auto& a_t = analytic.at(name);
    for (Index i = 0; i < a_t.size(); ++i) {
      const double a = a_t.data()[i];
      const auto n = static_cast<double>(numeric.data()[i]);
      const double err = ad::relative_error(a, n);
      if (err > out.max_relative_error) out = {err, name, i, a, n};
    }
  }
  return out;
}

TrainResult train(const ScoreModel& model, const Dataset& data, const corpus::Fold& fold,
                  const hyper::HyperParams& hp, TrainOptions opts) {
  ScoreModel m = model;
  const auto& old = model.spec.hp;
  if (hp.d_model != old.d_model || hp.n_heads != old.n_heads || hp.d_ff != old.d_ff ||
      hp.readout != old.readout || hp.attention_layers != old.attention_layers)
    fail(ErrorCode::invalid_spec, "training hyperparameters change the model architecture");
  m.spec.hp = hp;
  return train(m, data, fold, opts);
}

TrainResult train(const ScoreModel& model, const Dataset& data, const corpus::Fold& fold, TrainOptions opts) {
  validate(model.spec);
  const auto& spec = model.spec;
  const auto& hp = spec.hp;
  if (fold.train.empty()) fail(ErrorCode::degenerate_fold, "training split is empty");

  std::set<int> train_labels;
  for (auto i : fold.train) {
    const auto& e = data.at(i);
    check_input(model, e.input);
    train_labels.insert(e.score);
  }
  if (train_labels.size() < 2)
    fail(ErrorCode::degenerate_fold, "training split has a single score (" + std::to_string(*train_labels.begin()) + ")");
  for (auto i : fold.dev) check_input(model, data.at(i).input);

  TrainResult result{model, {}};
  ScoreModel& m = result.model;
  TrainReport& report = result.report;

  // z-score the essay statistics against the training split
  EssayStats mean{}, sq{};
  for (auto i : fold.train)
    for (std::size_t k = 0; k < kStatCount; ++k) {
      const double v = data.at(i).input.stats[k];
      mean[k] += v;
      sq[k] += v * v;
    }
  const double n = static_cast<double>(fold.train.size());
  for (std::size_t k = 0; k < kStatCount; ++k) {
    mean[k] /= n;
    const double var = std::max(0.0, sq[k] / n - mean[k] * mean[k]);
    m.stats_mean[k] = mean[k];
    m.stats_scale[k] = var > 1e-12 ? std::sqrt(var) : 1.0;
  }

  optim::OptimState state;
  state.config.alpha = hp.learning_rate;
  const optim::SchedulerConfig sched{hp.d_model, hp.warmup_steps};
  const auto batch_size = static_cast<std::size_t>(hp.batch_size);

  double best_qwk = -std::numeric_limits<double>::infinity();
  nn::Parameters best_params = m.params;
  int since_best = 0;
  report.stop_reason = "max_epochs";

  std::vector<int> dev_truth;
  for (auto i : fold.dev) dev_truth.push_back(data.at(i).score);

  for (int epoch = 1; epoch <= hp.epochs; ++epoch) {
    std::vector<std::size_t> order = fold.train;
    CounterRng shuffle_rng(CounterRng::derive(model.provenance.seed, 0x10000u + static_cast<std::uint64_t>(epoch)));
    shuffle_rng.shuffle(order.begin(), order.end());

    std::vector<std::vector<const Example*>> batches;
    for (std::size_t start = 0; start < order.size(); start += batch_size) {
      std::vector<const Example*> b;
      for (std::size_t k = start; k < std::min(order.size(), start + batch_size); ++k) b.push_back(&data.at(order[k]));
      if (b.size() == 1 && !batches.empty()) batches.back().push_back(b.front());
      else batches.push_back(std::move(b));
    }

    double loss_sum = 0.0;
    double lr = 0.0;
    for (const auto& batch : batches) {
      ++report.steps;
      lr = opts.learning_rate ? *opts.learning_rate
                              : (hp.use_schedule ? optim::lr_at(sched, report.steps) : hp.learning_rate);
      ad::DropoutContext drop{true, hp.dropout,
                              CounterRng(CounterRng::derive(model.provenance.seed, static_cast<std::uint64_t>(report.steps)))};
      BatchGraph bg;
      build_batch(bg, m, batch, drop);
      auto vg = ad::value_and_gradients(bg.graph, nn::bind<double>(m.params), bg.loss);
      optim::ParameterSet grads;
      for (const auto& name : bg.graph.parameter_names()) grads[name] = vg.gradients.at(name).matrix();
      optim::step(hp.optimizer, state, m.params, grads, lr);
      loss_sum += vg.value;
    }

    EpochLog log;
    log.epoch = epoch;
    log.train_loss = loss_sum / static_cast<double>(batches.size());
    log.learning_rate = lr;
    if (!fold.dev.empty()) {
      MatrixXd probs(static_cast<Index>(fold.dev.size()), spec.n_classes());
      MatrixXd reg(static_cast<Index>(fold.dev.size()), 1), target(static_cast<Index>(fold.dev.size()), 1);
      std::vector<int> pred, labels;
      for (std::size_t k = 0; k < fold.dev.size(); ++k) {
        const auto& e = data.at(fold.dev[k]);
        const auto p = predict(m, e.input);
        for (Index c = 0; c < spec.n_classes(); ++c) probs(static_cast<Index>(k), c) = p.class_probs[static_cast<std::size_t>(c)];
        reg(static_cast<Index>(k), 0) = p.regression;
        target(static_cast<Index>(k), 0) =
            static_cast<double>(e.score - spec.score_min) / static_cast<double>(spec.score_max - spec.score_min);
        pred.push_back(p.score);
        labels.push_back(e.score - spec.score_min);
      }
      log.dev_loss = hp.P * class_loss_value(spec, probs, labels) +
                     (1.0 - hp.P) * objectives::mean_squared_error(reg, target);
      log.dev_qwk = eval::quadratic_weighted_kappa(dev_truth, pred, spec.score_min, spec.score_max);
    } else {
      log.dev_loss = std::numeric_limits<double>::quiet_NaN();
      log.dev_qwk = std::numeric_limits<double>::quiet_NaN();
    }
    report.epochs.push_back(log);

    if (fold.dev.empty() || log.dev_qwk > best_qwk) {
      best_qwk = log.dev_qwk;
      best_params = m.params;
      report.best_epoch = epoch;
      since_best = 0;
    } else if (++since_best >= hp.patience) {
      report.stop_reason = "patience";
      break;
    }
  }

  m.params = std::move(best_params);
  m.provenance.epochs_run = static_cast<int>(report.epochs.size());
  m.provenance.best_epoch = report.best_epoch;
  m.provenance.best_dev_qwk = report.epochs[static_cast<std::size_t>(report.best_epoch - 1)].dev_qwk;
  m.provenance.trained = true;
  return result;
}

// -- container ------------------------------------------------------------------------------
//
// bytes 0-3   "ESLM"
// byte  4     format version
// bytes 5-7   zero
// bytes 8-11  header length H, u32 little-endian
// 12..12+H    UTF-8 JSON header
// rest        float64 little-endian payload, tensors in header order

namespace {

constexpr char kMagic[4] = {'E', 'S', 'L', 'M'};
constexpr std::size_t kPrelude = 12;

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint32_t get_u32(const std::string& in, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[at + i])) << (8 * i);
  return v;
}

void put_f64(std::string& out, double d) {
  std::uint64_t bits;
  std::memcpy(&bits, &d, sizeof bits);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

double get_f64(const std::string& in, std::size_t at) {
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[at + i])) << (8 * i);
  double d;
  std::memcpy(&d, &bits, sizeof d);
  return d;
}

json provenance_json(const Provenance& p) {
  return json{{"seed", p.seed},
              {"epochs_run", p.epochs_run},
              {"best_epoch", p.best_epoch},
              {"best_dev_qwk", p.best_dev_qwk},
              {"trained", p.trained}};
}

[[noreturn]] void corrupt(const std::string& why) { fail(ErrorCode::corrupt_container, "model container: " + why); }

}  // namespace

std::string save_model(const ScoreModel& model) {
  json tensors = json::array();
  for (const auto& [name, t] : model.params) tensors.push_back({{"name", name}, {"rows", t.rows()}, {"cols", t.cols()}});
  json header{{"format", "essaylens-model"},
              {"spec", model.spec},
              {"provenance", provenance_json(model.provenance)},
              {"stats_mean", model.stats_mean},
              {"stats_scale", model.stats_scale},
              {"tensors", tensors},
              {"passage", {{"rows", model.passage.rows()}, {"cols", model.passage.cols()}}}};
  const std::string text = header.dump();

  std::string out(kMagic, 4);
  out.push_back(static_cast<char>(kContainerVersion));
  out.append(3, '\0');
  put_u32(out, static_cast<std::uint32_t>(text.size()));
  out += text;
  for (const auto& [_, t] : model.params)
    for (Index i = 0; i < t.size(); ++i) put_f64(out, t.data()[i]);
  for (Index i = 0; i < model.passage.size(); ++i) put_f64(out, model.passage.data()[i]);
  return out;
}

ScoreModel load_model(const std::string& bytes) {
  if (bytes.size() < kPrelude) corrupt("truncated prelude");
  if (bytes.compare(0, 4, kMagic, 4) != 0) corrupt("bad magic");
  const auto version = static_cast<std::uint8_t>(bytes[4]);
  if (version != kContainerVersion)
    fail(ErrorCode::version_mismatch, "model container version " + std::to_string(version) + ", expected " +
                                          std::to_string(kContainerVersion));
  const std::size_t header_len = get_u32(bytes, 8);
  if (bytes.size() < kPrelude + header_len) corrupt("truncated header");

  ScoreModel m;
  std::size_t cursor = kPrelude + header_len;
  auto read_matrix = [&](Index rows, Index cols) {
    if (rows < 0 || cols < 0) corrupt("negative tensor shape");
    MatrixXd t(rows, cols);
    const auto need = static_cast<std::size_t>(t.size()) * 8;
    if (bytes.size() - cursor < need) corrupt("truncated payload");
    for (Index i = 0; i < t.size(); ++i, cursor += 8) t.data()[i] = get_f64(bytes, cursor);
    return t;
  };
  try {
    const json header = json::parse(bytes.begin() + kPrelude, bytes.begin() + static_cast<std::ptrdiff_t>(kPrelude + header_len));
    if (header.at("format") != "essaylens-model") corrupt("unknown format tag");
    m.spec = header.at("spec").get<ModelSpec>();
    const auto& p = header.at("provenance");
    m.provenance = {p.at("seed").get<std::uint64_t>(), p.at("epochs_run").get<int>(), p.at("best_epoch").get<int>(),
                    p.at("best_dev_qwk").get<double>(), p.at("trained").get<bool>()};
    m.stats_mean = header.at("stats_mean").get<EssayStats>();
    m.stats_scale = header.at("stats_scale").get<EssayStats>();
    for (const auto& t : header.at("tensors"))
      m.params[t.at("name").get<std::string>()] = read_matrix(t.at("rows").get<Index>(), t.at("cols").get<Index>());
    m.passage = read_matrix(header.at("passage").at("rows").get<Index>(), header.at("passage").at("cols").get<Index>());
  } catch (const json::exception& e) {
    corrupt(std::string("bad header: ") + e.what());
  }
  if (cursor != bytes.size()) corrupt("trailing bytes after payload");
  validate(m.spec);
  const ScoreModel fresh = build_model(m.spec, 0, m.passage);
  for (const auto& [name, t] : fresh.params) {
    auto it = m.params.find(name);
    if (it == m.params.end() || it->second.rows() != t.rows() || it->second.cols() != t.cols())
      corrupt("tensor '" + name + "' missing or misshapen");
  }
  if (m.params.size() != fresh.params.size()) corrupt("unexpected tensors");
  return m;
}

void save_model_file(const ScoreModel& model, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::io_error, "cannot write " + path);
  const std::string bytes = save_model(model);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorCode::io_error, "write failed for " + path);
}

ScoreModel load_model_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::io_error, "cannot read " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return load_model(ss.str());
}

}  // namespace essaylens::scoring
