#include "essaylens/insight.hpp"

#include <algorithm>
#include <string>

namespace essaylens::insight {

MatrixXd similarity_matrix(const MatrixXd& essay, const MatrixXd& passage) {
  if (essay.cols() != passage.cols())
    fail(ErrorCode::dimension_mismatch, "essay vectors have width " + std::to_string(essay.cols()) +
                                            ", passage vectors " + std::to_string(passage.cols()));
  auto unit = [](const MatrixXd& m) {
    MatrixXd u = m;
    for (Index r = 0; r < u.rows(); ++r) {
      const double n = u.row(r).norm();
      if (n > 0.0) u.row(r) /= n;
      else u.row(r).setZero();
    }
    return u;
  };
  MatrixXd s = unit(essay) * unit(passage).transpose();
  return s.cwiseMax(-1.0).cwiseMin(1.0);
}

double saturation(double s, double s_max, double tau) {
  if (s <= tau || s_max <= tau) return 0.0;
  return std::min(1.0, (s - tau) / (s_max - tau));
}

std::vector<HighlightSpan> highlight_spans(const MatrixXd& sim, std::size_t row, const embed::SentenceSplit& passage,
                                           double tau) {
  if (row >= static_cast<std::size_t>(sim.rows()))
    fail(ErrorCode::index_out_of_range, "essay sentence " + std::to_string(row) + " of " + std::to_string(sim.rows()));
  if (!(tau >= 0.0 && tau < 1.0)) fail(ErrorCode::invalid_argument, "threshold must lie in [0, 1)");
  if (passage.size() != static_cast<std::size_t>(sim.cols()))
    fail(ErrorCode::dimension_mismatch, "passage has " + std::to_string(passage.size()) + " sentences, matrix has " +
                                            std::to_string(sim.cols()) + " columns");
  const auto r = static_cast<Index>(row);
  const double s_max = sim.cols() > 0 ? sim.row(r).maxCoeff() : 0.0;
  std::vector<HighlightSpan> spans;
  spans.reserve(passage.size());
  for (std::size_t j = 0; j < passage.size(); ++j) {
    const double s = sim(r, static_cast<Index>(j));
    spans.push_back({j, passage.offsets[j].first, passage.offsets[j].second, s, saturation(s, s_max, tau)});
  }
  return spans;
}

}  // namespace essaylens::insight
