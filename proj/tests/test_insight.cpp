#include "doctest.h"
#include "essaylens/embeddings.hpp"
#include "essaylens/insight.hpp"
#include "support.hpp"

using namespace essaylens;
using namespace essaylens::insight;

TEST_SUITE("insight") {
  TEST_CASE("similarity matrix basics") {
    MatrixXd a(2, 2), b(3, 2);
    a << 1, 0, 0, 2;
    b << 3, 0, 1, 1, 0, 0;
    const MatrixXd s = similarity_matrix(a, b);
    REQUIRE(s.rows() == 2);
    REQUIRE(s.cols() == 3);
    CHECK(s(0, 0) == doctest::Approx(1.0));
    CHECK(s(0, 1) == doctest::Approx(1.0 / std::sqrt(2.0)));
    CHECK(s(1, 0) == doctest::Approx(0.0));
    CHECK(s(0, 2) == 0.0);  // zero-norm passage row
    CHECK(testing::error_code([] { similarity_matrix(MatrixXd::Ones(1, 2), MatrixXd::Ones(1, 3)); }) ==
          ErrorCode::dimension_mismatch);
  }

  TEST_CASE("similarity is transpose-symmetric, bounded and scale invariant") {
    CounterRng rng(101);
    for (int trial = 0; trial < 30; ++trial) {
      const MatrixXd a = testing::random_matrix(rng, 1 + Index(rng.below(6)), 7);
      const MatrixXd b = testing::random_matrix(rng, 1 + Index(rng.below(6)), 7);
      const MatrixXd ab = similarity_matrix(a, b);
      CHECK((ab - similarity_matrix(b, a).transpose()).cwiseAbs().maxCoeff() < 1e-15);
      CHECK(ab.maxCoeff() <= 1.0);
      CHECK(ab.minCoeff() >= -1.0);
      MatrixXd scaled = a;
      scaled.row(0) *= 0.5 + 10.0 * rng.uniform();
      CHECK((similarity_matrix(scaled, b) - ab).cwiseAbs().maxCoeff() < 1e-12);
    }
    const MatrixXd same = testing::random_matrix(rng, 3, 5);
    CHECK((similarity_matrix(same, same).diagonal().array() - 1.0).abs().maxCoeff() < 1e-12);
  }

  TEST_CASE("saturation") {
    CHECK(saturation(0.2, 0.9, 0.3) == 0.0);
    CHECK(saturation(0.3, 0.9, 0.3) == 0.0);
    CHECK(saturation(0.9, 0.9, 0.3) == doctest::Approx(1.0));
    CHECK(saturation(0.6, 0.9, 0.3) == doctest::Approx(0.5));
  }

  TEST_CASE("highlights follow similarity within a row") {
    const std::string passage_text = "The hill was steep. The rider was tired. Water ran out. Night came.";
    const auto split = embed::segment_sentences(passage_text);
    REQUIRE(split.size() == 4);
    CounterRng rng(202);
    for (int trial = 0; trial < 20; ++trial) {
      const MatrixXd sim = similarity_matrix(testing::random_matrix(rng, 3, 6), testing::random_matrix(rng, 4, 6));
      for (std::size_t row = 0; row < 3; ++row) {
        const auto spans = highlight_spans(sim, row, split, 0.1);
        REQUIRE(spans.size() == 4);
        for (std::size_t i = 0; i < 4; ++i) {
          CHECK(passage_text.substr(spans[i].begin, spans[i].end - spans[i].begin) == split.sentences[i]);
          CHECK(spans[i].saturation >= 0.0);
          CHECK(spans[i].saturation <= 1.0);
          for (std::size_t j = 0; j < 4; ++j)
            if (spans[i].similarity <= spans[j].similarity) CHECK(spans[i].saturation <= spans[j].saturation);
        }
      }
    }
  }

  TEST_CASE("rows under the threshold highlight nothing") {
    const auto split = embed::segment_sentences("One. Two. Three.");
    MatrixXd sim(2, 3);
    sim << 0.1, 0.29, -0.5, 0.95, 0.3, 0.6;
    for (const auto& s : highlight_spans(sim, 0, split, 0.3)) CHECK(s.saturation == 0.0);
    const auto spans = highlight_spans(sim, 1, split, 0.3);
    CHECK(spans[0].saturation == doctest::Approx(1.0));
    CHECK(spans[1].saturation == 0.0);
    CHECK(spans[2].saturation == doctest::Approx(0.3 / 0.65));
  }

  TEST_CASE("highlight argument errors") {
    const auto split = embed::segment_sentences("One. Two.");
    const MatrixXd sim = MatrixXd::Constant(2, 2, 0.5);
    CHECK(testing::error_code([&] { highlight_spans(sim, 2, split); }) == ErrorCode::index_out_of_range);
    CHECK(testing::error_code([&] { highlight_spans(sim, 0, split, 1.0); }) == ErrorCode::invalid_argument);
    CHECK(testing::error_code([&] { highlight_spans(sim, 0, split, -0.1); }) == ErrorCode::invalid_argument);
    CHECK(testing::error_code([&] { highlight_spans(MatrixXd::Constant(2, 3, 0.5), 0, split); }) ==
          ErrorCode::dimension_mismatch);
  }
}
