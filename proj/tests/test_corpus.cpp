#include <algorithm>
#include <numeric>
#include <set>
#include <sstream>

#include "doctest.h"
#include "essaylens/corpus.hpp"
#include "support.hpp"

using namespace essaylens;
using namespace essaylens::corpus;

namespace {

std::vector<EssayRecord> parse(const std::string& text) {
  std::istringstream in(text);
  return parse_asap_tsv(in, EssaySetCollection::builtin());
}

std::string error_text(const std::string& tsv) {
  try {
    parse(tsv);
  } catch (const Error& e) {
    return e.what();
  }
  return {};
}

}  // namespace

TEST_SUITE("corpus") {
  TEST_CASE("built-in essay sets") {
    const auto sets = EssaySetCollection::builtin();
    REQUIRE(sets.sets().size() == 8);
    const auto& s1 = sets.at(1);
    CHECK(s1.grade_level == 8);
    CHECK(s1.avg_length_words == 350);
    CHECK(s1.score_min == 2);
    CHECK(s1.score_max == 12);
    CHECK(s1.essay_count == 1785);
    CHECK_FALSE(s1.source_dependent);
    CHECK(sets.at(3).source_dependent);
    CHECK(sets.at(8).n_classes() == 61);
    CHECK(sets.mean_class_count() == doctest::Approx(15.875).epsilon(1e-15));
    int source = 0;
    for (const auto& m : sets.sets()) source += m.source_dependent;
    CHECK(source == 4);
    CHECK(sets.find(9) == nullptr);
    CHECK(testing::error_code([&] { sets.at(9); }) == ErrorCode::not_found);
  }

  TEST_CASE("essay-set JSON round-trip and override") {
    const auto sets = EssaySetCollection::builtin();
    const auto back = EssaySetCollection::from_json_text(sets.to_json().dump());
    REQUIRE(back.sets().size() == 8);
    CHECK(back.at(5).score_max == 4);
    auto custom = EssaySetCollection::from_json_text(
        R"([{"set_id": 3, "grade_level": 10, "avg_length_words": 150, "score_min": 0, "score_max": 5,
             "essay_count": 100, "source_dependent": true, "description": "x", "passage": "A passage."},
            {"set_id": 9, "grade_level": 7, "avg_length_words": 200, "score_min": 1, "score_max": 4,
             "essay_count": 50, "source_dependent": false, "description": "new"}])");
    auto merged = sets;
    merged.override_with(custom);
    CHECK(merged.sets().size() == 9);
    CHECK(merged.at(3).score_max == 5);
    CHECK(merged.at(3).passage.value() == "A passage.");
    CHECK(merged.mean_class_count() != doctest::Approx(15.875));
    CHECK(testing::error_code([] {
            EssaySetCollection::from_json_text(
                R"([{"set_id": 1, "grade_level": 8, "avg_length_words": 1, "score_min": 3, "score_max": 3,
                     "essay_count": 1, "source_dependent": false, "description": ""}])");
          }) == ErrorCode::invalid_argument);
  }

  TEST_CASE("normalization") {
    const auto sets = EssaySetCollection::builtin();
    CHECK(normalize_score(7, sets.at(1)) == doctest::Approx(0.5));
    CHECK(denormalize_score(0.5, sets.at(1)) == 7);
    CHECK(denormalize_score(0.0, sets.at(1)) == 2);
    CHECK(denormalize_score(1.0, sets.at(1)) == 12);
    CHECK(denormalize_score(1.7, sets.at(1)) == 12);
    CHECK(denormalize_score(-0.3, sets.at(1)) == 2);
    for (const auto& m : sets.sets())
      for (int s = m.score_min; s <= m.score_max; ++s) CHECK(denormalize_score(normalize_score(s, m), m) == s);
  }

  TEST_CASE("TSV parsing") {
    const auto recs = parse(
        "essay_id\tessay_set\tessay\trater1_domain1\tdomain1_score\n"
        "1\t1\tDear @CAPS1, computers are great.\t4\t7\n"
        "2\t3\tThe setting matters.\t1\t2\n");
    REQUIRE(recs.size() == 2);
    CHECK(recs[0].essay_id == "1");
    CHECK(recs[0].set_id == 1);
    CHECK(recs[0].score == 7);
    CHECK(recs[0].normalized == doctest::Approx(0.5));
    CHECK(recs[0].text == "Dear @CAPS1, computers are great.");
    CHECK(recs[1].score == 2);
    CHECK_FALSE(recs[1].embedded);
  }

  TEST_CASE("TSV errors name the line") {
    CHECK(testing::error_code([] { parse("essay_id\tessay_set\tessay\n1\t1\tx\n"); }) == ErrorCode::missing_column);
    CHECK(testing::error_code([] { parse("essay_id\tessay_set\tessay\tdomain1_score\n1\t1\tx\tseven\n"); }) ==
          ErrorCode::bad_score);
    const std::string tsv = "essay_id\tessay_set\tessay\tdomain1_score\n1\t3\tok\t2\n2\t3\tbad\t99\n";
    CHECK(testing::error_code([&] { parse(tsv); }) == ErrorCode::score_out_of_range);
    CHECK(error_text(tsv).find("line 3") != std::string::npos);
  }

  TEST_CASE("Windows-1252 fallback") {
    CHECK(is_valid_utf8("caf\xc3\xa9"));
    CHECK_FALSE(is_valid_utf8("caf\xe9"));
    CHECK(windows1252_to_utf8("caf\xe9 \x93quoted\x94") == "caf\xc3\xa9 \xe2\x80\x9cquoted\xe2\x80\x9d");
    std::vector<std::string> warnings;
    std::istringstream in("essay_id\tessay_set\tessay\tdomain1_score\n1\t3\tna\xefve\t1\n");
    const auto recs = parse_asap_tsv(in, EssaySetCollection::builtin(), {&warnings});
    REQUIRE(recs.size() == 1);
    CHECK(recs[0].text == "na\xc3\xafve");
    CHECK(warnings.size() == 1);
  }

  TEST_CASE("fold plans") {
    const auto plan = make_folds(10, 42);
    std::set<std::size_t> tests;
    for (const auto& f : plan.folds) {
      CHECK(f.test.size() == 2);
      CHECK(f.dev.size() == 2);
      CHECK(f.train.size() == 6);
      std::set<std::size_t> all(f.train.begin(), f.train.end());
      all.insert(f.dev.begin(), f.dev.end());
      all.insert(f.test.begin(), f.test.end());
      CHECK(all.size() == 10);
      tests.insert(f.test.begin(), f.test.end());
    }
    CHECK(tests.size() == 10);
    for (std::size_t i = 0; i < 5; ++i) CHECK(plan.folds[i].dev == plan.folds[(i + 1) % 5].test);

    const auto again = make_folds(10, 42);
    for (std::size_t i = 0; i < 5; ++i) CHECK(again.folds[i].test == plan.folds[i].test);
    bool differs = false;
    const auto other = make_folds(10, 43);
    for (std::size_t i = 0; i < 5; ++i) differs |= other.folds[i].test != plan.folds[i].test;
    CHECK(differs);

    for (std::size_t n : {5u, 7u, 13u, 200u}) {
      const auto p = make_folds(n, 1);
      std::size_t lo = n, hi = 0;
      for (const auto& f : p.folds) {
        lo = std::min(lo, f.test.size());
        hi = std::max(hi, f.test.size());
        CHECK(f.train.size() + f.dev.size() + f.test.size() == n);
      }
      CHECK(hi - lo <= 1);
    }
    CHECK(testing::error_code([] { make_folds(4, 1); }) == ErrorCode::too_few_records);
  }

  TEST_CASE("training-set reduction") {
    std::vector<std::size_t> idx(10);
    std::iota(idx.begin(), idx.end(), 100);
    const std::vector<int> labels = {0, 0, 0, 0, 0, 1, 1, 1, 1, 1};
    CHECK(reduce_training_set(idx, labels, 1.0, 3) == idx);
    const auto kept = reduce_training_set(idx, labels, 0.6, 3);
    CHECK(kept.size() == 6);
    int zeros = 0;
    for (auto i : kept) zeros += i < 105;
    CHECK(zeros == 3);
    CHECK(std::is_sorted(kept.begin(), kept.end()));
    CHECK(reduce_training_set(idx, labels, 0.6, 3) == kept);

    const std::vector<int> skewed = {0, 0, 0, 0, 0, 0, 0, 0, 1, 2};
    const auto small = reduce_training_set(idx, skewed, 0.3, 5);
    CHECK(small.size() == 3);
    std::set<int> present;
    for (auto i : small) present.insert(skewed[i - 100]);
    CHECK(present.size() == 3);

    CHECK(testing::error_code([&] { reduce_training_set(idx, labels, 0.0, 1); }) == ErrorCode::fraction_out_of_range);
    CHECK(testing::error_code([&] { reduce_training_set(idx, labels, 1.2, 1); }) == ErrorCode::fraction_out_of_range);
  }
}
