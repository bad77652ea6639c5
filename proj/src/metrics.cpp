#include "essaylens/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "essaylens/error.hpp"

namespace essaylens::eval {

ConfusionMatrix confusion_matrix(const std::vector<int>& truth, const std::vector<int>& pred, int score_min,
                                 int score_max) {
  if (truth.size() != pred.size())
    fail(ErrorCode::shape_mismatch, "truth has " + std::to_string(truth.size()) + " labels, prediction has " +
                                        std::to_string(pred.size()));
  if (score_max <= score_min) fail(ErrorCode::invalid_argument, "QWK needs at least two classes");
  ConfusionMatrix cm;
  cm.n_classes = score_max - score_min + 1;
  cm.counts.setZero(cm.n_classes, cm.n_classes);
  for (std::size_t n = 0; n < truth.size(); ++n) {
    for (int v : {truth[n], pred[n]})
      if (v < score_min || v > score_max)
        fail(ErrorCode::index_out_of_range, "label " + std::to_string(v) + " outside " + std::to_string(score_min) +
                                                "-" + std::to_string(score_max));
    ++cm.counts(truth[n] - score_min, pred[n] - score_min);
  }
  cm.total = static_cast<long>(truth.size());
  return cm;
}

KappaResult quadratic_weighted_kappa_detail(const std::vector<int>& truth, const std::vector<int>& pred,
                                            int score_min, int score_max) {
  if (truth.empty()) fail(ErrorCode::invalid_argument, "QWK of an empty sample");
  const ConfusionMatrix cm = confusion_matrix(truth, pred, score_min, score_max);
  const Index c = cm.n_classes;
  const MatrixXd observed = cm.counts.cast<double>();
  const Eigen::VectorXd rows = observed.rowwise().sum();
  const Eigen::RowVectorXd cols = observed.colwise().sum();
  const MatrixXd expected = rows * cols / static_cast<double>(cm.total);
  double num = 0.0, den = 0.0;
  const double scale = static_cast<double>((c - 1) * (c - 1));
  for (Index i = 0; i < c; ++i)
    for (Index j = 0; j < c; ++j) {
      const double w = static_cast<double>((i - j) * (i - j)) / scale;
      num += w * observed(i, j);
      den += w * expected(i, j);
    }
  if (den == 0.0) return num == 0.0 ? KappaResult{1.0, false} : KappaResult{0.0, true};
  return {1.0 - num / den, false};
}

double quadratic_weighted_kappa(const std::vector<int>& truth, const std::vector<int>& pred, int score_min,
                                int score_max) {
  return quadratic_weighted_kappa_detail(truth, pred, score_min, score_max).value;
}

double cohen_kappa(const std::vector<int>& truth, const std::vector<int>& pred, int score_min, int score_max) {
  const ConfusionMatrix cm = confusion_matrix(truth, pred, score_min, score_max);
  const MatrixXd o = cm.counts.cast<double>() / static_cast<double>(cm.total);
  const double agree = o.trace();
  const double chance = (o.rowwise().sum().transpose().array() * o.colwise().sum().array()).sum();
  return chance == 1.0 ? 1.0 : (agree - chance) / (1.0 - chance);
}

double pearson(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) fail(ErrorCode::invalid_argument, "pearson needs two equal samples of size >= 2");
  const auto n = static_cast<Index>(x.size());
  const Eigen::Map<const Eigen::VectorXd> a(x.data(), n), b(y.data(), n);
  const Eigen::VectorXd da = a.array() - a.mean();
  const Eigen::VectorXd db = b.array() - b.mean();
  const double denom = std::sqrt(da.squaredNorm() * db.squaredNorm());
  return denom == 0.0 ? 0.0 : da.dot(db) / denom;
}

namespace {

std::vector<double> average_ranks(const std::vector<double>& v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

}  // namespace

double spearman(const std::vector<double>& x, const std::vector<double>& y) {
  return pearson(average_ranks(x), average_ranks(y));
}

double kendall_tau(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) fail(ErrorCode::invalid_argument, "kendall needs two equal samples of size >= 2");
  // tau-b, O(n^2)
  double concordant = 0, discordant = 0, ties_x = 0, ties_y = 0;
  for (std::size_t i = 0; i < x.size(); ++i)
    for (std::size_t j = i + 1; j < x.size(); ++j) {
      const double dx = x[i] - x[j];
      const double dy = y[i] - y[j];
      if (dx == 0 && dy == 0) continue;
      if (dx == 0) ++ties_x;
      else if (dy == 0) ++ties_y;
      else if ((dx > 0) == (dy > 0)) ++concordant;
      else ++discordant;
    }
  const double denom = std::sqrt((concordant + discordant + ties_x) * (concordant + discordant + ties_y));
  return denom == 0.0 ? 0.0 : (concordant - discordant) / denom;
}

}  // namespace essaylens::eval
