#pragma once

#include <vector>

#include "essaylens/embeddings.hpp"

namespace essaylens::insight {

inline constexpr double kDefaultThreshold = 0.3;

/// Cosine similarity of every essay row against every passage row, clamped to
/// [-1, 1]; rows with zero norm score 0.  Throws dimension_mismatch.
MatrixXd similarity_matrix(const MatrixXd& essay, const MatrixXd& passage);

/// (s - tau) / (s_max - tau) above the threshold, else 0.
double saturation(double s, double s_max, double tau);

struct HighlightSpan {
  std::size_t passage_index = 0;
  std::size_t begin = 0;  // byte offsets into the passage text
  std::size_t end = 0;
  double similarity = 0.0;
  double saturation = 0.0;
};

/// One span per passage sentence for essay sentence `row`.
/// Throws index_out_of_range, invalid_argument (tau outside [0, 1)) or
/// dimension_mismatch (split size differs from the matrix width).
std::vector<HighlightSpan> highlight_spans(const MatrixXd& sim, std::size_t row, const embed::SentenceSplit& passage,
                                           double tau = kDefaultThreshold);

}  // namespace essaylens::insight
