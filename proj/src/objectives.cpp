#include "essaylens/objectives.hpp"

#include <cmath>
#include <set>
#include <string>

namespace essaylens::objectives {

LossWeights classification_weight(double n_classes, double mean_classes) {
  if (n_classes < 2) fail(ErrorCode::invalid_argument, "class count must be at least 2");
  LossWeights w;
  w.n_classes = n_classes;
  w.mean_classes = mean_classes;
  w.P = w.L / (1.0 + std::exp(w.k * (n_classes - mean_classes))) + w.c;
  return w;
}

double combined_loss(double class_loss, double mse, const LossWeights& w) {
  return w.P * class_loss + (1.0 - w.P) * mse;
}

MatrixXd smoothed_targets(const std::vector<int>& labels, Index n_classes, double smoothing) {
  if (n_classes < 2) fail(ErrorCode::invalid_argument, "class count must be at least 2");
  if (smoothing < 0.0 || smoothing >= 1.0) fail(ErrorCode::invalid_argument, "label smoothing must be in [0, 1)");
  MatrixXd t = MatrixXd::Constant(static_cast<Index>(labels.size()), n_classes,
                                  smoothing / static_cast<double>(n_classes));
  for (std::size_t n = 0; n < labels.size(); ++n) {
    const int y = labels[n];
    if (y < 0 || y >= n_classes)
      fail(ErrorCode::invalid_argument, "label " + std::to_string(y) + " outside [0, " +
                                            std::to_string(n_classes) + ")");
    t(static_cast<Index>(n), y) += 1.0 - smoothing;
  }
  return t;
}

MatrixXd quadratic_weights(Index n_classes) {
  MatrixXd w(n_classes, n_classes);
  const double scale = static_cast<double>((n_classes - 1) * (n_classes - 1));
  for (Index i = 0; i < n_classes; ++i)
    for (Index j = 0; j < n_classes; ++j) w(i, j) = static_cast<double>((i - j) * (i - j)) / scale;
  return w;
}

void check_kappa_batch(const std::vector<int>& labels, Index n_classes, double smoothing) {
  if (n_classes < 2) fail(ErrorCode::invalid_argument, "class count must be at least 2");
  if (labels.size() < 2)
    fail(ErrorCode::single_class_batch, "kappa loss needs a batch of at least 2 essays, got " +
                                            std::to_string(labels.size()));
  const std::set<int> distinct(labels.begin(), labels.end());
  if (distinct.size() == 1 && smoothing == 0.0)
    fail(ErrorCode::single_class_batch, "kappa loss batch of " + std::to_string(labels.size()) +
                                            " essays has only label " + std::to_string(*distinct.begin()));
}

namespace {

void require_same_classes(const MatrixXd& a, const MatrixXd& b) {
  if (a.cols() != b.cols())
    fail(ErrorCode::class_count_mismatch, "prediction has " + std::to_string(a.cols()) + " classes, target has " +
                                              std::to_string(b.cols()));
  if (a.rows() != b.rows())
    fail(ErrorCode::shape_mismatch, "prediction batch " + std::to_string(a.rows()) + " vs target batch " +
                                        std::to_string(b.rows()));
}

template <typename Build>
double run(const MatrixXd& input, Build build) {
  ad::Graph<double> g;
  auto x = g.constant(input);
  auto out = build(x);
  g.mark_output("loss", out);
  return ad::evaluate(g, {}).at("loss").item();
}

}  // namespace

double categorical_cross_entropy(const MatrixXd& probs, const MatrixXd& targets) {
  require_same_classes(probs, targets);
  return run(probs, [&](auto x) { return categorical_cross_entropy(x, targets); });
}

double mean_squared_error(const MatrixXd& pred, const MatrixXd& target) {
  require_same_classes(pred, target);
  if ((pred.array() < 0.0).any() || (pred.array() > 1.0).any() || (target.array() < 0.0).any() ||
      (target.array() > 1.0).any())
    fail(ErrorCode::invalid_argument, "normalized scores must lie in [0, 1]");
  return run(pred, [&](auto x) { return mean_squared_error(x, target); });
}

KappaTerms weighted_kappa_terms(const MatrixXd& probs, const std::vector<int>& labels, double smoothing) {
  if (static_cast<Index>(labels.size()) != probs.rows())
    fail(ErrorCode::shape_mismatch, "label count does not match the prediction batch");
  const MatrixXd targets = smoothed_targets(labels, probs.cols(), smoothing);
  const MatrixXd weights = quadratic_weights(probs.cols());
  KappaTerms k;
  k.numerator = (targets * weights).cwiseProduct(probs).sum();
  k.denominator = ((targets.colwise().sum() * weights).cwiseProduct(probs.colwise().mean())).sum();
  return k;
}

double weighted_kappa_loss(const MatrixXd& probs, const std::vector<int>& labels, double smoothing, double epsilon) {
  check_kappa_batch(labels, probs.cols(), smoothing);
  const KappaTerms k = weighted_kappa_terms(probs, labels, smoothing);
  if (!(k.denominator > 0.0))
    fail(ErrorCode::single_class_batch, "kappa loss denominator is zero for this batch of " +
                                            std::to_string(labels.size()) + " essays");
  return run(probs, [&](auto x) { return weighted_kappa_loss(x, labels, probs.cols(), smoothing, epsilon); });
}

}  // namespace essaylens::objectives
