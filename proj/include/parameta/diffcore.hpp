#pragma once

// Tape-based reverse-mode differentiation over dense 2-D arrays.
//
// A Graph records every operation as it is evaluated. Node ids are handed out
// in creation order, so the tape is already topologically sorted and
// backward() is a single reverse sweep. Gradients accumulate (+=) so a value
// consumed by several operations receives the sum of its contributions.
//
// Trainable state lives outside the graph in Parameter objects. Binding a
// Parameter into a graph creates a leaf node; backward() adds that leaf's
// gradient into Parameter::grad.

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "parameta/matrix.hpp"

namespace parameta::diff {

using NodeId = std::size_t;

struct Parameter {
  Parameter() = default;
  Parameter(std::string name, Matrix value, bool decay = true);

  std::string name;
  Matrix value;
  Matrix grad;
  // Whether decoupled weight decay applies (weights yes, biases no).
  bool decay = true;

  void zero_grad() { grad = Matrix::zeros(value.shape()); }
  std::size_t size() const { return value.size(); }
};

struct Tensor {
  Matrix values;
  bool requires_grad = false;
  std::optional<Matrix> grad;

  Shape shape() const { return values.shape(); }
};

enum class OpKind {
  constant,
  variable,
  parameter,
  matmul,
  add,
  add_row,
  sub,
  mul,
  scale,
  add_scalar,
  tanh,
  exp,
  sum,
  mean,
  row_sum,
  col_sum,
  row_mean,
  col_mean,
  gather_rows,
  transpose,
  concat_rows,
  normalize_rows,
  log_softmax_row_masked,
  log_softmax_leave_one_out,
};

const char* to_string(OpKind k);

class Graph;

// Lightweight handle to a node. Copyable; valid as long as its graph lives.
class Var {
 public:
  Var() = default;
  Var(Graph* g, NodeId id) : graph_(g), id_(id) {}

  Graph& graph() const { return *graph_; }
  NodeId id() const { return id_; }
  const Matrix& value() const;
  Shape shape() const { return value().shape(); }
  bool requires_grad() const;
  // Value of a 1x1 node.
  real item() const;
  // Gradient after backward(); nullptr when the node was not reached.
  const Matrix* grad() const;

 private:
  Graph* graph_ = nullptr;
  NodeId id_ = 0;
};

class Graph {
 public:
  // Receives the graph, the id of the node being differentiated, and its
  // upstream gradient; accumulates into the node's inputs.
  using BackwardFn = std::function<void(Graph&, NodeId self, const Matrix& grad_out)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var constant(Matrix value);
  // A free leaf that requires grad (used by gradient checks on raw inputs).
  Var variable(Matrix value);
  // Binding the same Parameter twice returns the same node.
  Var parameter(Parameter& p);

  void backward(Var root);
  // Drops every node gradient so backward() may run again.
  void reset_grad();

  std::size_t size() const { return nodes_.size(); }
  const Tensor& tensor(NodeId id) const { return nodes_.at(id).out; }
  OpKind kind(NodeId id) const { return nodes_.at(id).kind; }
  const std::vector<NodeId>& inputs(NodeId id) const { return nodes_.at(id).inputs; }

  // Appends an operation node. Used by the op implementations.
  Var record(OpKind kind, std::vector<NodeId> inputs, Matrix out, BackwardFn fn);
  // Adds `g` into the gradient of `id` if that node requires grad.
  void accumulate(NodeId id, const Matrix& g);

 private:
  struct Node {
    OpKind kind;
    std::vector<NodeId> inputs;
    Tensor out;
    BackwardFn backward;
    Parameter* param = nullptr;
  };

  NodeId append(Node n);

  std::vector<Node> nodes_;
  std::unordered_map<const Parameter*, NodeId> bound_;
  bool backward_done_ = false;
};

// ---- primitives ----------------------------------------------------------

Var matmul(Var a, Var b);
Var add(Var a, Var b);
// Adds a 1xn row to every row of an mxn matrix.
Var add_row(Var a, Var row);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, real s);
Var add_scalar(Var a, real s);
Var tanh(Var a);
Var exp(Var a);
Var sum(Var a);
Var mean(Var a);
Var row_sum(Var a);   // mxn -> mx1
Var col_sum(Var a);   // mxn -> 1xn
Var row_mean(Var a);  // mxn -> mx1
Var col_mean(Var a);  // mxn -> 1xn
Var gather_rows(Var a, std::span<const std::size_t> index);
Var transpose(Var a);
Var concat_rows(std::span<const Var> parts);

// Row i divided by max(||row i||, eps).
Var normalize_rows(Var a, real eps = 1e-8);

// (i,j) = <a_i, b_j> / (max(||a_i||,eps) * max(||b_j||,eps)).
Var cosine_sim_matrix(Var a, Var b, real eps = 1e-8);

// Row-wise log-softmax. With exclude_diagonal, entry (i,i) is left out of
// row i's normaliser and the output diagonal is 0 with zero gradient.
Var log_softmax_row_masked(Var scores, bool exclude_diagonal);

// Row-wise softmax (no masking).
Var softmax_rows(Var scores);

// Square input. For i != j:
//   out(i,j) = s(i,j) - log sum_{k != i} exp(s(k,j))
// i.e. column j is normalised with row i held out. Diagonal is 0.
Var log_softmax_leave_one_out(Var scores);

}  // namespace parameta::diff
