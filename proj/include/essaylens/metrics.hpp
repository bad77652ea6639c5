#pragma once

#include <vector>

#include "essaylens/tensor.hpp"

namespace essaylens::eval {

struct ConfusionMatrix {
  Eigen::Matrix<long, Eigen::Dynamic, Eigen::Dynamic> counts;  // truth x prediction
  int n_classes = 0;
  long total = 0;
};

ConfusionMatrix confusion_matrix(const std::vector<int>& truth, const std::vector<int>& pred, int score_min,
                                 int score_max);

struct KappaResult {
  double value = 0.0;
  /// Set when the expected weighted disagreement is zero but the observed is
  /// not; value is then reported as 0.
  bool degenerate = false;
};

/// kappa = 1 - sum(w o O) / sum(w o E), with w_ij = (i - j)^2 / (C - 1)^2 and
/// E the outer product of the marginals divided by N.
KappaResult quadratic_weighted_kappa_detail(const std::vector<int>& truth, const std::vector<int>& pred,
                                            int score_min, int score_max);
double quadratic_weighted_kappa(const std::vector<int>& truth, const std::vector<int>& pred, int score_min,
                                int score_max);

// Reporting-only agreement measures; none of these drive model selection.
double cohen_kappa(const std::vector<int>& truth, const std::vector<int>& pred, int score_min, int score_max);
double pearson(const std::vector<double>& x, const std::vector<double>& y);
double spearman(const std::vector<double>& x, const std::vector<double>& y);
double kendall_tau(const std::vector<double>& x, const std::vector<double>& y);

}  // namespace essaylens::eval
