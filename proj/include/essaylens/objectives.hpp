#pragma once

#include <vector>

#include "essaylens/graph.hpp"

namespace essaylens::objectives {

using ad::Expr;

inline constexpr double kLogisticLimit = 0.9;     // L
inline constexpr double kLogisticFloor = 0.001;   // c
inline constexpr double kLogisticSlope = 0.5;     // k
inline constexpr double kKappaStabilizer = 1e-6;  // added inside the log
inline constexpr double kProbabilityFloor = 1e-12;

/// Weight of the classification objective; the regression objective gets 1 - P.
struct LossWeights {
  double P = 0.5;
  double L = kLogisticLimit;
  double c = kLogisticFloor;
  double k = kLogisticSlope;
  double n_classes = 0;
  double mean_classes = 0;
};

/// P = L / (1 + exp(k (n_c - mean_n_c))) + c
LossWeights classification_weight(double n_classes, double mean_classes);

/// P * class_loss + (1 - P) * mse
double combined_loss(double class_loss, double mse, const LossWeights& w);

/// (1 - eps) * onehot + eps / C, one row per label.
MatrixXd smoothed_targets(const std::vector<int>& labels, Index n_classes, double smoothing);

/// w_ij = (i - j)^2 / (C - 1)^2
MatrixXd quadratic_weights(Index n_classes);

// -- graph builders ----------------------------------------------------------

/// Mean over the batch of -sum(target * log(clip(pred, 1e-12, 1))).
template <typename S>
Expr<S> categorical_cross_entropy(Expr<S> probs, const MatrixXd& targets) {
  auto& g = *probs.graph;
  auto clipped = -ad::max(-ad::max(probs, S(kProbabilityFloor)), S(-1));
  auto t = g.constant(targets.template cast<S>());
  return -(ad::sum(t * ad::log(clipped)) / static_cast<S>(targets.rows()));
}

template <typename S>
Expr<S> mean_squared_error(Expr<S> pred, const MatrixXd& target) {
  auto diff = pred - pred.graph->constant(target.template cast<S>());
  return ad::mean(diff * diff);
}

/// Batch-level soft quadratic-weighted-kappa loss:
///   numerator   = sum_n sum_ij T_n(i) w_ij p_n(j)
///   denominator = sum_j (sum_i hist_i w_ij) * mean_n p_n(j)
///   loss        = log(numerator / denominator + eps)
/// Requires N >= 2; a batch whose labels are all identical is rejected when
/// no smoothing is applied, since the ratio is then identically 1.
void check_kappa_batch(const std::vector<int>& labels, Index n_classes, double smoothing);

template <typename S>
Expr<S> weighted_kappa_loss(Expr<S> probs, const std::vector<int>& labels, Index n_classes, double smoothing,
                            double epsilon = kKappaStabilizer) {
  check_kappa_batch(labels, n_classes, smoothing);
  auto& g = *probs.graph;
  const MatrixXd targets = smoothed_targets(labels, n_classes, smoothing);
  const MatrixXd weights = quadratic_weights(n_classes);
  const MatrixXd per_row = targets * weights;
  const MatrixXd column_weights = targets.colwise().sum() * weights;
  auto numerator = ad::sum(g.constant(per_row.template cast<S>()) * probs);
  auto denominator = ad::sum(g.constant(column_weights.template cast<S>()) * ad::mean(probs, ad::Axis::rows));
  return ad::log(numerator / denominator + static_cast<S>(epsilon));
}

// -- value-level entry points ---------------------------------------------------

double categorical_cross_entropy(const MatrixXd& probs, const MatrixXd& targets);
double mean_squared_error(const MatrixXd& pred, const MatrixXd& target);
double weighted_kappa_loss(const MatrixXd& probs, const std::vector<int>& labels, double smoothing,
                           double epsilon = kKappaStabilizer);

struct KappaTerms {
  double numerator = 0;
  double denominator = 0;
};
KappaTerms weighted_kappa_terms(const MatrixXd& probs, const std::vector<int>& labels, double smoothing);

}  // namespace essaylens::objectives
