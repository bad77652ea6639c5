#include <future>
#include <thread>

#include "doctest.h"
#include "essaylens/scorers.hpp"
#include "support.hpp"

using namespace essaylens;
using namespace essaylens::scoring;

namespace {

std::vector<Example> essays(Index dim, std::size_t count, std::uint64_t seed) {
  return testing::tiny_examples(dim, count, seed);
}

corpus::Fold simple_fold(std::size_t n) {
  // first 60% train, next 20% dev, rest test
  corpus::Fold f;
  for (std::size_t i = 0; i < n; ++i) {
    if (i < n * 6 / 10)
      f.train.push_back(i);
    else if (i < n * 8 / 10)
      f.dev.push_back(i);
    else
      f.test.push_back(i);
  }
  return f;
}

bool same_params(const nn::Parameters& a, const nn::Parameters& b) {
  if (a.size() != b.size()) return false;
  for (const auto& [name, t] : a) {
    auto it = b.find(name);
    if (it == b.end() || it->second != t) return false;
  }
  return true;
}

}  // namespace

TEST_SUITE("scorers") {
  TEST_CASE("model kind names") {
    for (auto k : all_model_kinds()) CHECK(parse_model_kind(to_string(k)) == k);
    CHECK(parse_model_kind("2MHA") == ModelKind::mha2);
    CHECK(parse_model_kind("MHA+BLSTM") == ModelKind::mha_blstm);
    CHECK(parse_model_kind("PD") == ModelKind::passage_conditioned);
    CHECK(testing::error_code([] { parse_model_kind("gru"); }) == ErrorCode::invalid_spec);
  }

  TEST_CASE("end-to-end gradient check for every kind") {
    for (auto kind : all_model_kinds())
      for (Index dim : {Index(8), Index(6)}) {
        CAPTURE(to_string(kind));
        CAPTURE(dim);
        const auto model = testing::tiny_model(kind, dim);
        const auto ex = essays(dim, 3, 11);
        const auto r = gradient_check(model, testing::pointers(ex), 1e-5);
        CAPTURE(r.worst_parameter);
        CHECK(r.max_relative_error < 1e-4);
      }
  }

  TEST_CASE("parameter counts") {
    for (auto kind : all_model_kinds())
      for (Index dim : {Index(8), Index(6)}) {
        const auto spec = testing::tiny_spec(kind, dim);
        CHECK(nn::parameter_count(build_model(spec, 1).params) == expected_parameter_count(spec));
      }
    // by hand: lstm(8,8) 544 + pre1 72 + pre2 72 + heads 27 + 9
    CHECK(expected_parameter_count(testing::tiny_spec(ModelKind::lstm)) == 724);
    // cls 8 + block (qkvo 4*72 - 8 key bias, 2 norms 32, ffn 144) + classifier 72 + heads 36
    CHECK(expected_parameter_count(testing::tiny_spec(ModelKind::mha)) == 572);
    auto bad = testing::tiny_spec(ModelKind::mha);
    bad.hp.n_heads = 3;
    CHECK(testing::error_code([&] { build_model(bad, 1); }) == ErrorCode::invalid_spec);
    CHECK(testing::error_code([&] { validate(bad); }) == ErrorCode::invalid_spec);
  }

  TEST_CASE("construction is deterministic in the seed") {
    const auto spec = testing::tiny_spec(ModelKind::mha2);
    CHECK(same_params(build_model(spec, 5).params, build_model(spec, 5).params));
    CHECK_FALSE(same_params(build_model(spec, 5).params, build_model(spec, 6).params));
  }

  TEST_CASE("padding invariance") {
    for (auto kind : all_model_kinds()) {
      CAPTURE(to_string(kind));
      const auto model = testing::tiny_model(kind, 8);
      for (const auto& e : essays(8, 6, 21)) {
        const auto base = predict(model, e.input);
        for (Index pad : {Index(4), Index(9)}) {
          const auto padded = predict(model, e.input, {pad});
          for (std::size_t c = 0; c < base.class_probs.size(); ++c)
            CHECK(std::abs(base.class_probs[c] - padded.class_probs[c]) < 1e-10);
          CHECK(std::abs(base.regression - padded.regression) < 1e-10);
        }
      }
    }
  }

  TEST_CASE("prediction structure and blending") {
    CHECK(blend_scores(1.0, 2.359, 0.0, 0, 3) == 2);
    CHECK(blend_scores(0.5, 2.0, 3.0, 0, 3) == 3);  // 2.5 rounds away from zero
    CHECK(blend_scores(0.0, 0.0, 7.4, 0, 3) == 3);
    CHECK(blend_scores(0.0, 0.0, -1.0, 0, 3) == 0);
    const auto model = testing::tiny_model(ModelKind::mha, 8);
    const auto e = essays(8, 1, 3)[0];
    const auto p = predict(model, e.input);
    REQUIRE(p.class_probs.size() == 3);
    double sum = 0.0, expected = 0.0;
    for (std::size_t k = 0; k < 3; ++k) {
      sum += p.class_probs[k];
      expected += double(k) * p.class_probs[k];
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(p.expected_score == doctest::Approx(expected).epsilon(1e-12));
    CHECK(p.regression > 0.0);
    CHECK(p.regression < 1.0);
    CHECK(p.regression_score == doctest::Approx(2.0 * p.regression));
    CHECK(p.score == blend_scores(0.6, p.expected_score, p.regression_score, 0, 2));

    EssayInput wrong = e.input;
    wrong.embeddings = MatrixXd::Ones(2, 5);
    CHECK(testing::error_code([&] { predict(model, wrong); }) == ErrorCode::dimension_mismatch);
  }

  TEST_CASE("predict is pure and thread-safe") {
    const auto model = testing::tiny_model(ModelKind::mha_blstm, 8);
    const auto ex = essays(8, 12, 4);
    std::vector<double> serial;
    for (const auto& e : ex) serial.push_back(predict(model, e.input).regression);
    std::vector<std::future<std::vector<double>>> jobs;
    for (int t = 0; t < 4; ++t)
      jobs.push_back(std::async(std::launch::async, [&] {
        std::vector<double> out;
        for (const auto& e : ex) out.push_back(predict(model, e.input).regression);
        return out;
      }));
    for (auto& j : jobs) CHECK(j.get() == serial);
  }

  TEST_CASE("container round-trip") {
    for (auto kind : all_model_kinds()) {
      auto model = testing::tiny_model(kind, 6);
      model.spec.provider = "hashed:6:0";
      model.stats_mean = {3.0, 40.0, 12.5, 0.7};
      const auto bytes = save_model(model);
      CHECK(bytes.substr(0, 4) == "ESLM");
      const auto back = load_model(bytes);
      CHECK(same_params(back.params, model.params));
      CHECK(back.passage == model.passage);
      CHECK(back.spec.provider == "hashed:6:0");
      CHECK(back.stats_mean == model.stats_mean);
      for (const auto& e : essays(6, 4, 9)) {
        const auto a = predict(model, e.input), b = predict(back, e.input);
        CHECK(a.class_probs == b.class_probs);
        CHECK(a.regression == b.regression);
      }
      CHECK(testing::error_code([&] { load_model(bytes.substr(0, bytes.size() - 3)); }) ==
            ErrorCode::corrupt_container);
      CHECK(testing::error_code([&] { load_model(bytes.substr(0, 7)); }) == ErrorCode::corrupt_container);
      CHECK(testing::error_code([&] { load_model(bytes + "x"); }) == ErrorCode::corrupt_container);
      auto magic = bytes;
      magic[0] = 'X';
      CHECK(testing::error_code([&] { load_model(magic); }) == ErrorCode::corrupt_container);
      auto bumped = bytes;
      bumped[4] = char(kContainerVersion + 1);
      CHECK(testing::error_code([&] { load_model(bumped); }) == ErrorCode::version_mismatch);
    }
  }

  TEST_CASE("training is deterministic and respects the fold") {
    const auto ex = essays(8, 20, 31);
    const VectorDataset data(ex);
    const testing::TrackingDataset tracked(data);
    const auto fold = simple_fold(ex.size());
    const auto model = build_model(testing::tiny_spec(ModelKind::mha), 17);
    const auto a = train(model, tracked, fold);
    const auto b = train(model, data, fold);
    CHECK(a.report == b.report);
    CHECK(same_params(a.model.params, b.model.params));
    for (auto i : fold.test) CHECK(tracked.touched().count(i) == 0);
    CHECK(a.model.provenance.trained);
    CHECK(a.model.provenance.epochs_run == int(a.report.epochs.size()));
    CHECK(a.report.steps > 0);
  }

  TEST_CASE("early stopping on a stalled dev score") {
    const auto ex = essays(8, 20, 32);
    const VectorDataset data(ex);
    auto spec = testing::tiny_spec(ModelKind::lstm);
    spec.hp.epochs = 6;
    spec.hp.patience = 1;
    const auto model = build_model(spec, 2);
    TrainOptions opts;
    opts.learning_rate = 0.0;
    const auto r = train(model, data, simple_fold(ex.size()), opts);
    CHECK(r.report.stop_reason == "patience");
    CHECK(r.report.epochs.size() == 2);
    CHECK(r.report.best_epoch == 1);
    CHECK(same_params(r.model.params, model.params));
  }

  TEST_CASE("degenerate folds") {
    auto ex = essays(8, 10, 33);
    for (auto& e : ex) e.score = 1;
    const VectorDataset data(ex);
    const auto model = build_model(testing::tiny_spec(ModelKind::mha), 1);
    CHECK(testing::error_code([&] { train(model, data, simple_fold(ex.size())); }) == ErrorCode::degenerate_fold);
    corpus::Fold empty;
    empty.test = {0};
    CHECK(testing::error_code([&] { train(model, data, empty); }) == ErrorCode::degenerate_fold);
  }

  TEST_CASE("unembedded records are rejected") {
    corpus::EssayRecord r;
    r.essay_id = "x";
    r.set_id = 3;
    r.score = 1;
    CHECK(testing::error_code([&] { make_dataset({r}); }) == ErrorCode::unembedded_record);
  }
}
