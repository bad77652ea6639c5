#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace essaylens {

enum class ErrorCode {
  shape_mismatch,
  unbound_input,
  nonscalar_loss,
  nonfinite_evaluation,
  class_count_mismatch,
  single_class_batch,
  invalid_argument,
  step_zero,
  missing_column,
  bad_score,
  score_out_of_range,
  too_few_records,
  fraction_out_of_range,
  provider_unavailable,
  dimension_mismatch,
  malformed_line,
  invalid_spec,
  unembedded_record,
  degenerate_fold,
  corrupt_container,
  version_mismatch,
  index_out_of_range,
  io_error,
  not_found,
};

std::string_view to_string(ErrorCode code);

/// Every failure surfaced by the library carries one of the codes above so that
/// the CLI and the HTTP layer can map it to an exit status or response code.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) {
  throw Error(code, what);
}

}  // namespace essaylens
