#pragma once

// Define-then-run computation graphs over dense matrices with reverse-mode
// differentiation.  A Graph is a flat node list in topological order (a node
// can only reference nodes created before it), so forward evaluation is a
// single pass and backprop is the reverse pass.

#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "essaylens/error.hpp"
#include "essaylens/tensor.hpp"

namespace essaylens::ad {

using NodeId = std::int32_t;

enum class Op {
  input,
  parameter,
  constant,
  add,
  sub,
  mul,
  div,
  matmul,
  transpose,
  scale,
  add_scalar,
  neg,
  tanh,
  sigmoid,
  relu,
  exp,
  log,
  sqrt,
  max,
  softmax,
  concat,
  slice,
  sum,
  mean,
  layer_norm,
};

const char* op_name(Op op);

/// Reduction / concatenation axis.  `rows` runs down the rows (axis 0), so a
/// rows-reduction of an MxN matrix yields 1xN; `cols` yields Mx1.
enum class Axis { all, rows, cols };

template <typename Scalar>
struct Node {
  Op op = Op::constant;
  std::vector<NodeId> inputs;
  std::string name;
  Matrix<Scalar> payload;  // constant value, or the 1xN key mask for softmax
  Scalar scalar = Scalar(0);
  Axis axis = Axis::all;
  Index begin = 0;
  Index length = 0;
  bool transpose_rhs = false;
  bool masked = false;
};

template <typename Scalar>
class Graph;

/// Lightweight handle used to compose graph nodes with ordinary operators.
template <typename Scalar>
struct Expr {
  Graph<Scalar>* graph = nullptr;
  NodeId id = -1;

  bool valid() const { return graph != nullptr && id >= 0; }
};

template <typename Scalar>
class Graph {
 public:
  using MatrixType = Matrix<Scalar>;
  using ExprType = Expr<Scalar>;

  /// Free input bound at evaluation time; never trainable.
  ExprType input(const std::string& name) { return named(Op::input, name); }

  /// Trainable input.  Requesting the same name twice yields the same node, so
  /// layers applied to many sequences share one gradient accumulator.
  ExprType parameter(const std::string& name) { return named(Op::parameter, name); }

  ExprType constant(MatrixType value) {
    Node<Scalar> n;
    n.op = Op::constant;
    n.payload = std::move(value);
    return push(std::move(n));
  }

  ExprType scalar_constant(Scalar v) { return constant(MatrixType::Constant(1, 1, v)); }

  ExprType push(Node<Scalar> node) {
    for (NodeId in : node.inputs) {
      if (in < 0 || in >= static_cast<NodeId>(nodes_.size()))
        fail(ErrorCode::invalid_argument, "graph node references a node that does not precede it");
    }
    nodes_.push_back(std::move(node));
    return ExprType{this, static_cast<NodeId>(nodes_.size() - 1)};
  }

  const Node<Scalar>& node(NodeId id) const { return nodes_.at(static_cast<std::size_t>(id)); }
  std::size_t size() const { return nodes_.size(); }
  const std::vector<Node<Scalar>>& nodes() const { return nodes_; }

  /// Names of trainable parameters in creation order.
  const std::vector<std::string>& parameter_names() const { return parameter_names_; }
  const std::vector<std::string>& input_names() const { return input_names_; }

  void mark_output(const std::string& name, ExprType e) { outputs_[name] = e.id; }
  const std::map<std::string, NodeId>& outputs() const { return outputs_; }

 private:
  ExprType named(Op op, const std::string& name) {
    auto it = by_name_.find(name);
    if (it != by_name_.end()) {
      if (nodes_[static_cast<std::size_t>(it->second)].op != op)
        fail(ErrorCode::invalid_argument, "name '" + name + "' used for both an input and a parameter");
      return ExprType{this, it->second};
    }
    Node<Scalar> n;
    n.op = op;
    n.name = name;
    auto e = push(std::move(n));
    by_name_.emplace(name, e.id);
    (op == Op::parameter ? parameter_names_ : input_names_).push_back(name);
    return e;
  }

  std::vector<Node<Scalar>> nodes_;
  std::unordered_map<std::string, NodeId> by_name_;
  std::vector<std::string> parameter_names_;
  std::vector<std::string> input_names_;
  std::map<std::string, NodeId> outputs_;
};

// ---------------------------------------------------------------------------
// Builders

namespace detail {

template <typename Scalar>
Graph<Scalar>& same_graph(Expr<Scalar> a, Expr<Scalar> b) {
  if (a.graph != b.graph || a.graph == nullptr)
    fail(ErrorCode::invalid_argument, "expressions belong to different graphs");
  return *a.graph;
}

template <typename Scalar>
Expr<Scalar> unary(Op op, Expr<Scalar> a, Scalar s = Scalar(0)) {
  Node<Scalar> n;
  n.op = op;
  n.inputs = {a.id};
  n.scalar = s;
  return a.graph->push(std::move(n));
}

template <typename Scalar>
Expr<Scalar> binary(Op op, Expr<Scalar> a, Expr<Scalar> b) {
  auto& g = same_graph(a, b);
  Node<Scalar> n;
  n.op = op;
  n.inputs = {a.id, b.id};
  return g.push(std::move(n));
}

}  // namespace detail

template <typename S> Expr<S> operator+(Expr<S> a, Expr<S> b) { return detail::binary(Op::add, a, b); }
template <typename S> Expr<S> operator-(Expr<S> a, Expr<S> b) { return detail::binary(Op::sub, a, b); }
/// Elementwise (Hadamard) product with broadcasting.
template <typename S> Expr<S> operator*(Expr<S> a, Expr<S> b) { return detail::binary(Op::mul, a, b); }
template <typename S> Expr<S> operator/(Expr<S> a, Expr<S> b) { return detail::binary(Op::div, a, b); }
template <typename S> Expr<S> operator-(Expr<S> a) { return detail::unary(Op::neg, a); }
template <typename S> Expr<S> operator*(Expr<S> a, S s) { return detail::unary(Op::scale, a, s); }
template <typename S> Expr<S> operator*(S s, Expr<S> a) { return detail::unary(Op::scale, a, s); }
template <typename S> Expr<S> operator/(Expr<S> a, S s) { return detail::unary(Op::scale, a, S(1) / s); }
template <typename S> Expr<S> operator+(Expr<S> a, S s) { return detail::unary(Op::add_scalar, a, s); }
template <typename S> Expr<S> operator+(S s, Expr<S> a) { return detail::unary(Op::add_scalar, a, s); }
template <typename S> Expr<S> operator-(Expr<S> a, S s) { return detail::unary(Op::add_scalar, a, -s); }
template <typename S> Expr<S> operator-(S s, Expr<S> a) { return detail::unary(Op::add_scalar, -a, s); }

template <typename S>
Expr<S> matmul(Expr<S> a, Expr<S> b, bool transpose_rhs = false) {
  auto& g = detail::same_graph(a, b);
  Node<S> n;
  n.op = Op::matmul;
  n.inputs = {a.id, b.id};
  n.transpose_rhs = transpose_rhs;
  return g.push(std::move(n));
}

template <typename S> Expr<S> transpose(Expr<S> a) { return detail::unary(Op::transpose, a); }
template <typename S> Expr<S> tanh(Expr<S> a) { return detail::unary(Op::tanh, a); }
template <typename S> Expr<S> sigmoid(Expr<S> a) { return detail::unary(Op::sigmoid, a); }
template <typename S> Expr<S> relu(Expr<S> a) { return detail::unary(Op::relu, a); }
template <typename S> Expr<S> exp(Expr<S> a) { return detail::unary(Op::exp, a); }
template <typename S> Expr<S> log(Expr<S> a) { return detail::unary(Op::log, a); }
template <typename S> Expr<S> sqrt(Expr<S> a) { return detail::unary(Op::sqrt, a); }
template <typename S> Expr<S> max(Expr<S> a, Expr<S> b) { return detail::binary(Op::max, a, b); }

template <typename S>
Expr<S> max(Expr<S> a, S floor) {
  return max(a, a.graph->scalar_constant(floor));
}

/// Row-wise softmax.  `key_mask` (length = number of columns) zeroes out the
/// masked columns exactly; every row must keep at least one valid column.
template <typename S>
Expr<S> softmax(Expr<S> a, const std::vector<bool>& key_mask = {}) {
  Node<S> n;
  n.op = Op::softmax;
  n.inputs = {a.id};
  if (!key_mask.empty()) {
    n.masked = true;
    n.payload.resize(1, static_cast<Index>(key_mask.size()));
    for (std::size_t i = 0; i < key_mask.size(); ++i)
      n.payload(0, static_cast<Index>(i)) = key_mask[i] ? S(1) : S(0);
  }
  return a.graph->push(std::move(n));
}

template <typename S>
Expr<S> concat(const std::vector<Expr<S>>& parts, Axis axis) {
  if (parts.empty()) fail(ErrorCode::invalid_argument, "concat of zero expressions");
  if (axis == Axis::all) fail(ErrorCode::invalid_argument, "concat needs a row or column axis");
  Node<S> n;
  n.op = Op::concat;
  n.axis = axis;
  for (const auto& p : parts) {
    detail::same_graph(parts.front(), p);
    n.inputs.push_back(p.id);
  }
  return parts.front().graph->push(std::move(n));
}

template <typename S>
Expr<S> slice(Expr<S> a, Axis axis, Index begin, Index length) {
  if (axis == Axis::all) fail(ErrorCode::invalid_argument, "slice needs a row or column axis");
  Node<S> n;
  n.op = Op::slice;
  n.inputs = {a.id};
  n.axis = axis;
  n.begin = begin;
  n.length = length;
  return a.graph->push(std::move(n));
}

template <typename S> Expr<S> rows(Expr<S> a, Index begin, Index count) { return slice(a, Axis::rows, begin, count); }
template <typename S> Expr<S> row(Expr<S> a, Index i) { return slice(a, Axis::rows, i, 1); }
template <typename S> Expr<S> cols(Expr<S> a, Index begin, Index count) { return slice(a, Axis::cols, begin, count); }

template <typename S>
Expr<S> sum(Expr<S> a, Axis axis = Axis::all) {
  Node<S> n;
  n.op = Op::sum;
  n.inputs = {a.id};
  n.axis = axis;
  return a.graph->push(std::move(n));
}

template <typename S>
Expr<S> mean(Expr<S> a, Axis axis = Axis::all) {
  Node<S> n;
  n.op = Op::mean;
  n.inputs = {a.id};
  n.axis = axis;
  return a.graph->push(std::move(n));
}

/// Normalizes each row to zero mean and unit variance (no affine part).
template <typename S>
Expr<S> layer_norm(Expr<S> a, S epsilon) {
  return detail::unary(Op::layer_norm, a, epsilon);
}

// ---------------------------------------------------------------------------
// Evaluation

template <typename Scalar>
using Bindings = std::map<std::string, Tensor<Scalar>>;

template <typename Scalar>
using Gradients = std::map<std::string, Tensor<Scalar>>;

/// All node values from one forward pass.
template <typename Scalar>
struct Trace {
  std::vector<Matrix<Scalar>> values;
  std::vector<int> ranks;

  const Matrix<Scalar>& operator[](NodeId id) const { return values[static_cast<std::size_t>(id)]; }
  Tensor<Scalar> tensor(NodeId id) const {
    return Tensor<Scalar>::with_rank(values[static_cast<std::size_t>(id)], ranks[static_cast<std::size_t>(id)]);
  }
};

namespace detail {

inline std::string shape_str(Index r, Index c) {
  std::ostringstream os;
  os << r << "x" << c;
  return os.str();
}

template <typename S>
[[noreturn]] void shape_error(NodeId id, const Node<S>& n, const std::string& detail) {
  std::ostringstream os;
  os << "shape mismatch at node " << id << " (" << op_name(n.op) << "): " << detail;
  fail(ErrorCode::shape_mismatch, os.str());
}

inline bool broadcastable(Index a, Index b) { return a == b || a == 1 || b == 1; }

template <typename S>
Matrix<S> broadcast_to(const Matrix<S>& m, Index rows, Index cols) {
  if (m.rows() == rows && m.cols() == cols) return m;
  if (m.rows() == 1 && m.cols() == 1) return Matrix<S>::Constant(rows, cols, m(0, 0));
  if (m.rows() == 1) return m.replicate(rows, 1);
  return m.replicate(1, cols);
}

template <typename S>
Matrix<S> reduce_to(const Matrix<S>& g, Index rows, Index cols) {
  if (g.rows() == rows && g.cols() == cols) return g;
  if (rows == 1 && cols == 1) return Matrix<S>::Constant(1, 1, g.sum());
  if (rows == 1) return g.colwise().sum();
  return g.rowwise().sum();
}

template <typename S, typename F>
Matrix<S> elementwise(NodeId id, const Node<S>& n, const Matrix<S>& a, const Matrix<S>& b, F f) {
  if (a.rows() == b.rows() && a.cols() == b.cols()) return f(a.array(), b.array()).matrix();
  if (!broadcastable(a.rows(), b.rows()) || !broadcastable(a.cols(), b.cols()))
    shape_error(id, n, shape_str(a.rows(), a.cols()) + " vs " + shape_str(b.rows(), b.cols()));
  const Index r = a.rows() == 1 ? b.rows() : a.rows();
  const Index c = a.cols() == 1 ? b.cols() : a.cols();
  const Matrix<S> A = broadcast_to(a, r, c);
  const Matrix<S> B = broadcast_to(b, r, c);
  return f(A.array(), B.array()).matrix();
}

template <typename S>
Matrix<S> masked_softmax(NodeId id, const Node<S>& n, const Matrix<S>& x) {
  if (n.masked && n.payload.cols() != x.cols())
    shape_error(id, n, "mask length " + std::to_string(n.payload.cols()) + " vs " +
                           std::to_string(x.cols()) + " columns");
  Matrix<S> y = Matrix<S>::Zero(x.rows(), x.cols());
  for (Index r = 0; r < x.rows(); ++r) {
    S hi = -std::numeric_limits<S>::infinity();
    for (Index c = 0; c < x.cols(); ++c)
      if (!n.masked || n.payload(0, c) != S(0)) hi = std::max(hi, x(r, c));
    if (hi == -std::numeric_limits<S>::infinity())
      fail(ErrorCode::invalid_argument, "softmax row has no valid positions");
    S total = 0;
    for (Index c = 0; c < x.cols(); ++c) {
      if (n.masked && n.payload(0, c) == S(0)) continue;
      y(r, c) = std::exp(x(r, c) - hi);
      total += y(r, c);
    }
    y.row(r) /= total;
  }
  return y;
}

inline int binary_rank(int a, int b) { return std::max(a, b); }

}  // namespace detail

struct EvalOptions {
  bool check_finite = true;
};

/// Runs every node once.  Pure with respect to the graph and bindings.
template <typename S>
Trace<S> forward(const Graph<S>& graph, const Bindings<S>& bindings, EvalOptions opts = {}) {
  using M = Matrix<S>;
  Trace<S> t;
  t.values.resize(graph.size());
  t.ranks.assign(graph.size(), 2);
  const auto& nodes = graph.nodes();
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    const auto id = static_cast<NodeId>(i);
    const Node<S>& n = nodes[i];
    auto in = [&](std::size_t k) -> const M& { return t.values[static_cast<std::size_t>(n.inputs[k])]; };
    auto in_rank = [&](std::size_t k) { return t.ranks[static_cast<std::size_t>(n.inputs[k])]; };
    M& out = t.values[i];
    int rank = n.inputs.empty() ? 2 : in_rank(0);
    switch (n.op) {
      case Op::input:
      case Op::parameter: {
        auto it = bindings.find(n.name);
        if (it == bindings.end()) fail(ErrorCode::unbound_input, "unbound input '" + n.name + "'");
        out = it->second.matrix();
        rank = it->second.rank();
        break;
      }
      case Op::constant: out = n.payload; rank = 2; break;
      case Op::add:
        out = detail::elementwise(id, n, in(0), in(1), [](const auto& a, const auto& b) { return (a + b).eval(); });
        rank = detail::binary_rank(in_rank(0), in_rank(1));
        break;
      case Op::sub:
        out = detail::elementwise(id, n, in(0), in(1), [](const auto& a, const auto& b) { return (a - b).eval(); });
        rank = detail::binary_rank(in_rank(0), in_rank(1));
        break;
      case Op::mul:
        out = detail::elementwise(id, n, in(0), in(1), [](const auto& a, const auto& b) { return (a * b).eval(); });
        rank = detail::binary_rank(in_rank(0), in_rank(1));
        break;
      case Op::div:
        out = detail::elementwise(id, n, in(0), in(1), [](const auto& a, const auto& b) { return (a / b).eval(); });
        rank = detail::binary_rank(in_rank(0), in_rank(1));
        break;
      case Op::max:
        out = detail::elementwise(id, n, in(0), in(1), [](const auto& a, const auto& b) { return a.max(b).eval(); });
        rank = detail::binary_rank(in_rank(0), in_rank(1));
        break;
      case Op::matmul: {
        const M& a = in(0);
        const M& b = in(1);
        const Index inner = n.transpose_rhs ? b.cols() : b.rows();
        if (a.cols() != inner)
          detail::shape_error(id, n, detail::shape_str(a.rows(), a.cols()) + " times " +
                                         detail::shape_str(b.rows(), b.cols()) +
                                         (n.transpose_rhs ? " (transposed)" : ""));
        if (n.transpose_rhs) out.noalias() = a * b.transpose();
        else out.noalias() = a * b;
        rank = 2;
        break;
      }
      case Op::transpose: out = in(0).transpose(); rank = 2; break;
      case Op::scale: out = in(0) * n.scalar; break;
      case Op::add_scalar: out = (in(0).array() + n.scalar).matrix(); break;
      case Op::neg: out = -in(0); break;
      case Op::tanh: out = in(0).array().tanh().matrix(); break;
      case Op::sigmoid: out = (S(1) / (S(1) + (-in(0).array()).exp())).matrix(); break;
      case Op::relu: out = in(0).cwiseMax(S(0)); break;
      case Op::exp: out = in(0).array().exp().matrix(); break;
      case Op::log: out = in(0).array().log().matrix(); break;
      case Op::sqrt: out = in(0).array().sqrt().matrix(); break;
      case Op::softmax: out = detail::masked_softmax(id, n, in(0)); break;
      case Op::concat: {
        Index r = 0, c = 0;
        const bool down = n.axis == Axis::rows;
        for (std::size_t k = 0; k < n.inputs.size(); ++k) {
          const M& p = in(k);
          if (k == 0) {
            r = p.rows();
            c = p.cols();
            continue;
          }
          if (down ? p.cols() != c : p.rows() != r)
            detail::shape_error(id, n, "part " + std::to_string(k) + " is " + detail::shape_str(p.rows(), p.cols()));
          (down ? r : c) += down ? p.rows() : p.cols();
        }
        out.resize(r, c);
        Index offset = 0;
        for (std::size_t k = 0; k < n.inputs.size(); ++k) {
          const M& p = in(k);
          if (down) {
            out.middleRows(offset, p.rows()) = p;
            offset += p.rows();
          } else {
            out.middleCols(offset, p.cols()) = p;
            offset += p.cols();
          }
        }
        rank = std::max(rank, 1);
        break;
      }
      case Op::slice: {
        const M& a = in(0);
        const Index extent = n.axis == Axis::rows ? a.rows() : a.cols();
        if (n.begin < 0 || n.length < 0 || n.begin + n.length > extent)
          detail::shape_error(id, n, "range [" + std::to_string(n.begin) + ", " +
                                         std::to_string(n.begin + n.length) + ") of extent " +
                                         std::to_string(extent));
        out = n.axis == Axis::rows ? M(a.middleRows(n.begin, n.length)) : M(a.middleCols(n.begin, n.length));
        break;
      }
      case Op::sum:
      case Op::mean: {
        const M& a = in(0);
        const bool avg = n.op == Op::mean;
        if (n.axis == Axis::all) {
          S v = a.sum();
          if (avg) v /= static_cast<S>(a.size());
          out = M::Constant(1, 1, v);
          rank = 0;
        } else if (n.axis == Axis::rows) {
          out = a.colwise().sum();
          if (avg) out /= static_cast<S>(a.rows());
          rank = 2;
        } else {
          out = a.rowwise().sum();
          if (avg) out /= static_cast<S>(a.cols());
          rank = 2;
        }
        break;
      }
      case Op::layer_norm: {
        const M& a = in(0);
        out.resize(a.rows(), a.cols());
        for (Index r = 0; r < a.rows(); ++r) {
          const S mu = a.row(r).mean();
          const S var = (a.row(r).array() - mu).square().mean();
          out.row(r) = (a.row(r).array() - mu) / std::sqrt(var + n.scalar);
        }
        break;
      }
    }
    t.ranks[i] = rank;
    if (opts.check_finite && !out.allFinite()) {
      std::ostringstream os;
      os << "non-finite value produced at node " << id << " (" << op_name(n.op) << ")";
      fail(ErrorCode::nonfinite_evaluation, os.str());
    }
  }
  return t;
}

/// Evaluates the graph and returns its marked outputs by name.
template <typename S>
std::map<std::string, Tensor<S>> evaluate(const Graph<S>& graph, const Bindings<S>& bindings,
                                          EvalOptions opts = {}) {
  const Trace<S> t = forward(graph, bindings, opts);
  std::map<std::string, Tensor<S>> out;
  for (const auto& [name, id] : graph.outputs()) out.emplace(name, t.tensor(id));
  return out;
}

template <typename S>
struct ValueAndGradients {
  S value = S(0);
  Gradients<S> gradients;
};

/// Reverse pass from a scalar node.  Gradients are returned for every named
/// input and parameter of the graph; unreachable ones are all-zero.
template <typename S>
ValueAndGradients<S> value_and_gradients(const Graph<S>& graph, const Bindings<S>& bindings, Expr<S> loss,
                                         EvalOptions opts = {}) {
  using M = Matrix<S>;
  const Trace<S> t = forward(graph, bindings, opts);
  const auto& nodes = graph.nodes();
  const auto lid = static_cast<std::size_t>(loss.id);
  if (lid >= nodes.size()) fail(ErrorCode::invalid_argument, "loss node is not part of the graph");
  if (t.values[lid].size() != 1) {
    fail(ErrorCode::nonscalar_loss, "loss node " + std::to_string(loss.id) + " has shape " +
                                        detail::shape_str(t.values[lid].rows(), t.values[lid].cols()));
  }

  std::vector<char> needs(nodes.size(), 0);
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    const auto& n = nodes[i];
    if (n.op == Op::input || n.op == Op::parameter) needs[i] = 1;
    for (NodeId in : n.inputs) needs[i] |= needs[static_cast<std::size_t>(in)];
  }

  std::vector<M> adj(nodes.size());
  adj[lid] = M::Ones(1, 1);
  auto add_to = [&](NodeId target, M contribution) {
    const auto k = static_cast<std::size_t>(target);
    if (!needs[k]) return;
    if (adj[k].size() == 0 && adj[k].rows() == 0) adj[k] = std::move(contribution);
    else adj[k] += contribution;
  };

  for (std::size_t i = lid + 1; i-- > 0;) {
    const Node<S>& n = nodes[i];
    if (!needs[i] || adj[i].rows() == 0) continue;
    const M& g = adj[i];
    const M& y = t.values[i];
    auto val = [&](std::size_t k) -> const M& { return t.values[static_cast<std::size_t>(n.inputs[k])]; };
    auto shape_of = [&](std::size_t k) { return std::pair{val(k).rows(), val(k).cols()}; };
    auto reduce_for = [&](std::size_t k, const M& m) {
      auto [r, c] = shape_of(k);
      return detail::reduce_to(m, r, c);
    };
    auto wants = [&](std::size_t k) { return needs[static_cast<std::size_t>(n.inputs[k])] != 0; };
    switch (n.op) {
      case Op::input:
      case Op::parameter:
      case Op::constant: break;
      case Op::add:
        if (wants(0)) add_to(n.inputs[0], reduce_for(0, g));
        if (wants(1)) add_to(n.inputs[1], reduce_for(1, g));
        break;
      case Op::sub:
        if (wants(0)) add_to(n.inputs[0], reduce_for(0, g));
        if (wants(1)) add_to(n.inputs[1], reduce_for(1, -g));
        break;
      case Op::mul: {
        const M a = detail::broadcast_to(val(0), g.rows(), g.cols());
        const M b = detail::broadcast_to(val(1), g.rows(), g.cols());
        if (wants(0)) add_to(n.inputs[0], reduce_for(0, g.cwiseProduct(b)));
        if (wants(1)) add_to(n.inputs[1], reduce_for(1, g.cwiseProduct(a)));
        break;
      }
      case Op::div: {
        const M a = detail::broadcast_to(val(0), g.rows(), g.cols());
        const M b = detail::broadcast_to(val(1), g.rows(), g.cols());
        if (wants(0)) add_to(n.inputs[0], reduce_for(0, (g.array() / b.array()).matrix()));
        if (wants(1))
          add_to(n.inputs[1], reduce_for(1, (-g.array() * a.array() / b.array().square()).matrix()));
        break;
      }
      case Op::max: {
        const M a = detail::broadcast_to(val(0), g.rows(), g.cols());
        const M b = detail::broadcast_to(val(1), g.rows(), g.cols());
        const auto take_a = (a.array() >= b.array()).template cast<S>();
        if (wants(0)) add_to(n.inputs[0], reduce_for(0, (g.array() * take_a).matrix()));
        if (wants(1)) add_to(n.inputs[1], reduce_for(1, (g.array() * (S(1) - take_a)).matrix()));
        break;
      }
      case Op::matmul: {
        const M& a = val(0);
        const M& b = val(1);
        if (n.transpose_rhs) {
          if (wants(0)) add_to(n.inputs[0], g * b);
          if (wants(1)) add_to(n.inputs[1], g.transpose() * a);
        } else {
          if (wants(0)) add_to(n.inputs[0], g * b.transpose());
          if (wants(1)) add_to(n.inputs[1], a.transpose() * g);
        }
        break;
      }
      case Op::transpose: add_to(n.inputs[0], g.transpose()); break;
      case Op::scale: add_to(n.inputs[0], g * n.scalar); break;
      case Op::add_scalar: add_to(n.inputs[0], g); break;
      case Op::neg: add_to(n.inputs[0], -g); break;
      case Op::tanh: add_to(n.inputs[0], (g.array() * (S(1) - y.array().square())).matrix()); break;
      case Op::sigmoid: add_to(n.inputs[0], (g.array() * y.array() * (S(1) - y.array())).matrix()); break;
      case Op::relu:
        add_to(n.inputs[0], (g.array() * (val(0).array() > S(0)).template cast<S>()).matrix());
        break;
      case Op::exp: add_to(n.inputs[0], g.cwiseProduct(y)); break;
      case Op::log: add_to(n.inputs[0], (g.array() / val(0).array()).matrix()); break;
      case Op::sqrt: add_to(n.inputs[0], (g.array() / (S(2) * y.array())).matrix()); break;
      case Op::softmax: {
        const auto dot = (g.cwiseProduct(y)).rowwise().sum();
        M gx = y.cwiseProduct(g - dot.replicate(1, g.cols()));
        add_to(n.inputs[0], std::move(gx));
        break;
      }
      case Op::concat: {
        Index offset = 0;
        const bool down = n.axis == Axis::rows;
        for (std::size_t k = 0; k < n.inputs.size(); ++k) {
          const Index extent = down ? val(k).rows() : val(k).cols();
          if (wants(k)) add_to(n.inputs[k], down ? M(g.middleRows(offset, extent)) : M(g.middleCols(offset, extent)));
          offset += extent;
        }
        break;
      }
      case Op::slice: {
        M gx = M::Zero(val(0).rows(), val(0).cols());
        if (n.axis == Axis::rows) gx.middleRows(n.begin, n.length) = g;
        else gx.middleCols(n.begin, n.length) = g;
        add_to(n.inputs[0], std::move(gx));
        break;
      }
      case Op::sum:
      case Op::mean: {
        const M& a = val(0);
        M gx = detail::broadcast_to(g, a.rows(), a.cols());
        if (n.op == Op::mean) {
          const Index count = n.axis == Axis::all ? a.size() : (n.axis == Axis::rows ? a.rows() : a.cols());
          gx /= static_cast<S>(count);
        }
        add_to(n.inputs[0], std::move(gx));
        break;
      }
      case Op::layer_norm: {
        const M& a = val(0);
        M gx(a.rows(), a.cols());
        const S cols = static_cast<S>(a.cols());
        for (Index r = 0; r < a.rows(); ++r) {
          const S mu = a.row(r).mean();
          const S var = (a.row(r).array() - mu).square().mean();
          const S inv = S(1) / std::sqrt(var + n.scalar);
          const S g_mean = g.row(r).sum() / cols;
          const S gy_mean = g.row(r).cwiseProduct(y.row(r)).sum() / cols;
          gx.row(r) = inv * (g.row(r).array() - g_mean - y.row(r).array() * gy_mean);
        }
        add_to(n.inputs[0], std::move(gx));
        break;
      }
    }
  }

  ValueAndGradients<S> result;
  result.value = t.values[lid](0, 0);
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    const auto& n = nodes[i];
    if (n.op != Op::input && n.op != Op::parameter) continue;
    M grad = adj[i].rows() == 0 ? M::Zero(t.values[i].rows(), t.values[i].cols()) : std::move(adj[i]);
    result.gradients.emplace(n.name, Tensor<S>::with_rank(std::move(grad), t.ranks[i]));
  }
  return result;
}

template <typename S>
Gradients<S> backprop(const Graph<S>& graph, const Bindings<S>& bindings, Expr<S> loss, EvalOptions opts = {}) {
  return value_and_gradients(graph, bindings, loss, opts).gradients;
}

}  // namespace essaylens::ad
