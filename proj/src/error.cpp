#include "essaylens/error.hpp"
#include "essaylens/graph.hpp"

namespace essaylens {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::shape_mismatch: return "shape_mismatch";
    case ErrorCode::unbound_input: return "unbound_input";
    case ErrorCode::nonscalar_loss: return "nonscalar_loss";
    case ErrorCode::nonfinite_evaluation: return "nonfinite_evaluation";
    case ErrorCode::class_count_mismatch: return "class_count_mismatch";
    case ErrorCode::single_class_batch: return "single_class_batch";
    case ErrorCode::invalid_argument: return "invalid_argument";
    case ErrorCode::step_zero: return "step_zero";
    case ErrorCode::missing_column: return "missing_column";
    case ErrorCode::bad_score: return "bad_score";
    case ErrorCode::score_out_of_range: return "score_out_of_range";
    case ErrorCode::too_few_records: return "too_few_records";
    case ErrorCode::fraction_out_of_range: return "fraction_out_of_range";
    case ErrorCode::provider_unavailable: return "provider_unavailable";
    case ErrorCode::dimension_mismatch: return "dimension_mismatch";
    case ErrorCode::malformed_line: return "malformed_line";
    case ErrorCode::invalid_spec: return "invalid_spec";
    case ErrorCode::unembedded_record: return "unembedded_record";
    case ErrorCode::degenerate_fold: return "degenerate_fold";
    case ErrorCode::corrupt_container: return "corrupt_container";
    case ErrorCode::version_mismatch: return "version_mismatch";
    case ErrorCode::index_out_of_range: return "index_out_of_range";
    case ErrorCode::io_error: return "io_error";
    case ErrorCode::not_found: return "not_found";
  }
  return "unknown";
}

namespace ad {

const char* op_name(Op op) {
  switch (op) {
    case Op::input: return "input";
    case Op::parameter: return "parameter";
    case Op::constant: return "constant";
    case Op::add: return "add";
    case Op::sub: return "sub";
    case Op::mul: return "mul";
    case Op::div: return "div";
    case Op::matmul: return "matmul";
    case Op::transpose: return "transpose";
    case Op::scale: return "scale";
    case Op::add_scalar: return "add_scalar";
    case Op::neg: return "neg";
    case Op::tanh: return "tanh";
    case Op::sigmoid: return "sigmoid";
    case Op::relu: return "relu";
    case Op::exp: return "exp";
    case Op::log: return "log";
    case Op::sqrt: return "sqrt";
    case Op::max: return "max";
    case Op::softmax: return "softmax";
    case Op::concat: return "concat";
    case Op::slice: return "slice";
    case Op::sum: return "sum";
    case Op::mean: return "mean";
    case Op::layer_norm: return "layer_norm";
  }
  return "unknown";
}

}  // namespace ad
}  // namespace essaylens
