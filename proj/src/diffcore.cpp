#include "parameta/diffcore.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "parameta/errors.hpp"

namespace parameta::diff {

namespace {

Graph& common_graph(Var a, Var b, const char* op) {
  if (&a.graph() != &b.graph()) {
    throw GraphError(std::string(op) + ": operands belong to different graphs");
  }
  return a.graph();
}

void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shapes differ " + to_string(a.shape()) + " vs " +
                         to_string(b.shape()));
  }
}

template <class F>
Matrix map(const Matrix& a, F&& f) {
  Matrix out(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.size(); ++i) out.data()[i] = f(a.data()[i]);
  return out;
}

const Matrix& values_of(const Graph& g, NodeId id) { return g.tensor(id).values; }
bool wants_grad(const Graph& g, NodeId id) { return g.tensor(id).requires_grad; }

}  // namespace

const char* to_string(OpKind k) {
  switch (k) {
    case OpKind::constant: return "constant";
    case OpKind::variable: return "variable";
    case OpKind::parameter: return "parameter";
    case OpKind::matmul: return "matmul";
    case OpKind::add: return "add";
    case OpKind::add_row: return "add_row";
    case OpKind::sub: return "sub";
    case OpKind::mul: return "mul";
    case OpKind::scale: return "scale";
    case OpKind::add_scalar: return "add_scalar";
    case OpKind::tanh: return "tanh";
    case OpKind::exp: return "exp";
    case OpKind::sum: return "sum";
    case OpKind::mean: return "mean";
    case OpKind::row_sum: return "row_sum";
    case OpKind::col_sum: return "col_sum";
    case OpKind::row_mean: return "row_mean";
    case OpKind::col_mean: return "col_mean";
    case OpKind::gather_rows: return "gather_rows";
    case OpKind::transpose: return "transpose";
    case OpKind::concat_rows: return "concat_rows";
    case OpKind::normalize_rows: return "normalize_rows";
    case OpKind::log_softmax_row_masked: return "log_softmax_row_masked";
    case OpKind::log_softmax_leave_one_out: return "log_softmax_leave_one_out";
  }
  return "unknown";
}

Parameter::Parameter(std::string n, Matrix v, bool d)
    : name(std::move(n)), value(std::move(v)), grad(Matrix::zeros(value.shape())), decay(d) {}

// ---- Var -----------------------------------------------------------------

const Matrix& Var::value() const { return graph_->tensor(id_).values; }

bool Var::requires_grad() const { return graph_->tensor(id_).requires_grad; }

real Var::item() const {
  const Matrix& v = value();
  if (v.shape() != Shape{1, 1}) throw DimensionError("item() on non-scalar " + to_string(v.shape()));
  return v(0, 0);
}

const Matrix* Var::grad() const {
  const auto& g = graph_->tensor(id_).grad;
  return g ? &*g : nullptr;
}

// ---- Graph ---------------------------------------------------------------

NodeId Graph::append(Node n) {
  nodes_.push_back(std::move(n));
  return nodes_.size() - 1;
}

Var Graph::constant(Matrix value) {
  return {this, append(Node{OpKind::constant, {}, Tensor{std::move(value), false, {}}, {}, nullptr})};
}

Var Graph::variable(Matrix value) {
  return {this, append(Node{OpKind::variable, {}, Tensor{std::move(value), true, {}}, {}, nullptr})};
}

Var Graph::parameter(Parameter& p) {
  if (auto it = bound_.find(&p); it != bound_.end()) return {this, it->second};
  const NodeId id = append(Node{OpKind::parameter, {}, Tensor{p.value, true, {}}, {}, &p});
  bound_.emplace(&p, id);
  return {this, id};
}

Var Graph::record(OpKind kind, std::vector<NodeId> inputs, Matrix out, BackwardFn fn) {
  bool needs = false;
  for (NodeId i : inputs) {
    if (i >= nodes_.size()) throw GraphError("input id refers to a node not yet recorded");
    needs = needs || nodes_[i].out.requires_grad;
  }
  Node n{kind, std::move(inputs), Tensor{std::move(out), needs, {}}, needs ? std::move(fn) : BackwardFn{},
         nullptr};
  return {this, append(std::move(n))};
}

void Graph::accumulate(NodeId id, const Matrix& g) {
  Node& n = nodes_.at(id);
  if (!n.out.requires_grad) return;
  if (g.shape() != n.out.values.shape()) {
    throw DimensionError("gradient shape " + parameta::to_string(g.shape()) + " does not match node " +
                         parameta::to_string(n.out.values.shape()));
  }
  if (!n.out.grad) {
    n.out.grad = g;
  } else {
    *n.out.grad += g;
  }
}

void Graph::backward(Var root) {
  if (&root.graph() != this) throw GraphError("backward: root belongs to another graph");
  const Node& r = nodes_.at(root.id());
  if (r.out.values.shape() != Shape{1, 1}) {
    throw DimensionError("backward: root must be 1x1, got " + parameta::to_string(r.out.values.shape()));
  }
  if (backward_done_) throw GraphError("backward called twice without reset_grad()");
  backward_done_ = true;
  if (!r.out.requires_grad) return;

  accumulate(root.id(), Matrix(1, 1, 1.0));
  for (NodeId id = root.id() + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (!n.out.grad) continue;
    if (n.backward) {
      // Callbacks only touch strictly earlier nodes; copying keeps the
      // upstream gradient stable while they run.
      const Matrix g = *n.out.grad;
      n.backward(*this, id, g);
    }
    if (n.param) n.param->grad += *n.out.grad;
  }
}

void Graph::reset_grad() {
  for (auto& n : nodes_) n.out.grad.reset();
  backward_done_ = false;
}

// ---- primitives ----------------------------------------------------------

Var matmul(Var a, Var b) {
  Graph& g = common_graph(a, b, "matmul");
  Matrix out = parameta::matmul(a.value(), b.value());
  const NodeId ia = a.id(), ib = b.id();
  return g.record(OpKind::matmul, {ia, ib}, std::move(out), [ia, ib](Graph& gr, NodeId, const Matrix& go) {
    if (wants_grad(gr, ia)) gr.accumulate(ia, parameta::matmul(go, values_of(gr, ib).transposed()));
    if (wants_grad(gr, ib)) gr.accumulate(ib, parameta::matmul(values_of(gr, ia).transposed(), go));
  });
}

Var add(Var a, Var b) {
  Graph& g = common_graph(a, b, "add");
  require_same_shape(a.value(), b.value(), "add");
  Matrix out = a.value();
  out += b.value();
  const NodeId ia = a.id(), ib = b.id();
  return g.record(OpKind::add, {ia, ib}, std::move(out), [ia, ib](Graph& gr, NodeId, const Matrix& go) {
    gr.accumulate(ia, go);
    gr.accumulate(ib, go);
  });
}

Var add_row(Var a, Var row) {
  Graph& g = common_graph(a, row, "add_row");
  const Matrix& av = a.value();
  const Matrix& rv = row.value();
  if (rv.rows() != 1 || rv.cols() != av.cols()) {
    throw DimensionError("add_row: row " + to_string(rv.shape()) + " does not broadcast over " +
                         to_string(av.shape()));
  }
  Matrix out = av;
  for (std::size_t i = 0; i < out.rows(); ++i)
    for (std::size_t j = 0; j < out.cols(); ++j) out(i, j) += rv(0, j);
  const NodeId ia = a.id(), ir = row.id();
  return g.record(OpKind::add_row, {ia, ir}, std::move(out), [ia, ir](Graph& gr, NodeId, const Matrix& go) {
    gr.accumulate(ia, go);
    if (wants_grad(gr, ir)) {
      Matrix d(1, go.cols());
      for (std::size_t i = 0; i < go.rows(); ++i)
        for (std::size_t j = 0; j < go.cols(); ++j) d(0, j) += go(i, j);
      gr.accumulate(ir, d);
    }
  });
}

Var sub(Var a, Var b) {
  Graph& g = common_graph(a, b, "sub");
  require_same_shape(a.value(), b.value(), "sub");
  Matrix out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] -= b.value().data()[i];
  const NodeId ia = a.id(), ib = b.id();
  return g.record(OpKind::sub, {ia, ib}, std::move(out), [ia, ib](Graph& gr, NodeId, const Matrix& go) {
    gr.accumulate(ia, go);
    if (wants_grad(gr, ib)) gr.accumulate(ib, map(go, [](real x) { return -x; }));
  });
}

Var mul(Var a, Var b) {
  Graph& g = common_graph(a, b, "mul");
  require_same_shape(a.value(), b.value(), "mul");
  Matrix out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] *= b.value().data()[i];
  const NodeId ia = a.id(), ib = b.id();
  return g.record(OpKind::mul, {ia, ib}, std::move(out), [ia, ib](Graph& gr, NodeId, const Matrix& go) {
    if (wants_grad(gr, ia)) {
      Matrix d = go;
      const Matrix& bv = values_of(gr, ib);
      for (std::size_t i = 0; i < d.size(); ++i) d.data()[i] *= bv.data()[i];
      gr.accumulate(ia, d);
    }
    if (wants_grad(gr, ib)) {
      Matrix d = go;
      const Matrix& av = values_of(gr, ia);
      for (std::size_t i = 0; i < d.size(); ++i) d.data()[i] *= av.data()[i];
      gr.accumulate(ib, d);
    }
  });
}

Var scale(Var a, real s) {
  const NodeId ia = a.id();
  return a.graph().record(OpKind::scale, {ia}, map(a.value(), [s](real x) { return x * s; }),
                          [ia, s](Graph& gr, NodeId, const Matrix& go) {
                            gr.accumulate(ia, map(go, [s](real x) { return x * s; }));
                          });
}

Var add_scalar(Var a, real s) {
  const NodeId ia = a.id();
  return a.graph().record(OpKind::add_scalar, {ia}, map(a.value(), [s](real x) { return x + s; }),
                          [ia](Graph& gr, NodeId, const Matrix& go) { gr.accumulate(ia, go); });
}

Var tanh(Var a) {
  const NodeId ia = a.id();
  return a.graph().record(OpKind::tanh, {ia}, map(a.value(), [](real x) { return std::tanh(x); }),
                          [ia](Graph& gr, NodeId self, const Matrix& go) {
                            const Matrix& y = values_of(gr, self);
                            Matrix d = go;
                            for (std::size_t i = 0; i < d.size(); ++i)
                              d.data()[i] *= 1.0 - y.data()[i] * y.data()[i];
                            gr.accumulate(ia, d);
                          });
}

Var exp(Var a) {
  const NodeId ia = a.id();
  return a.graph().record(OpKind::exp, {ia}, map(a.value(), [](real x) { return std::exp(x); }),
                          [ia](Graph& gr, NodeId self, const Matrix& go) {
                            const Matrix& y = values_of(gr, self);
                            Matrix d = go;
                            for (std::size_t i = 0; i < d.size(); ++i) d.data()[i] *= y.data()[i];
                            gr.accumulate(ia, d);
                          });
}

Var sum(Var a) {
  real s = 0.0;
  for (real x : a.value().data()) s += x;
  const NodeId ia = a.id();
  const Shape sh = a.shape();
  return a.graph().record(OpKind::sum, {ia}, Matrix(1, 1, s), [ia, sh](Graph& gr, NodeId, const Matrix& go) {
    gr.accumulate(ia, Matrix(sh.rows, sh.cols, go(0, 0)));
  });
}

Var mean(Var a) {
  const auto n = a.value().size();
  if (n == 0) throw DimensionError("mean of an empty matrix");
  real s = 0.0;
  for (real x : a.value().data()) s += x;
  const real inv = 1.0 / static_cast<real>(n);
  const NodeId ia = a.id();
  const Shape sh = a.shape();
  return a.graph().record(OpKind::mean, {ia}, Matrix(1, 1, s * inv),
                          [ia, sh, inv](Graph& gr, NodeId, const Matrix& go) {
                            gr.accumulate(ia, Matrix(sh.rows, sh.cols, go(0, 0) * inv));
                          });
}

namespace {

Var reduce_rows(Var a, OpKind kind, real factor) {
  const Matrix& av = a.value();
  Matrix out(av.rows(), 1);
  for (std::size_t i = 0; i < av.rows(); ++i) {
    for (std::size_t j = 0; j < av.cols(); ++j) out(i, 0) += av(i, j);
    out(i, 0) *= factor;
  }
  const NodeId ia = a.id();
  const Shape sh = av.shape();
  return a.graph().record(kind, {ia}, std::move(out), [ia, sh, factor](Graph& gr, NodeId, const Matrix& go) {
    Matrix d(sh.rows, sh.cols);
    for (std::size_t i = 0; i < sh.rows; ++i)
      for (std::size_t j = 0; j < sh.cols; ++j) d(i, j) = go(i, 0) * factor;
    gr.accumulate(ia, d);
  });
}

Var reduce_cols(Var a, OpKind kind, real factor) {
  const Matrix& av = a.value();
  Matrix out(1, av.cols());
  for (std::size_t i = 0; i < av.rows(); ++i)
    for (std::size_t j = 0; j < av.cols(); ++j) out(0, j) += av(i, j);
  for (real& x : out.data()) x *= factor;
  const NodeId ia = a.id();
  const Shape sh = av.shape();
  return a.graph().record(kind, {ia}, std::move(out), [ia, sh, factor](Graph& gr, NodeId, const Matrix& go) {
    Matrix d(sh.rows, sh.cols);
    for (std::size_t i = 0; i < sh.rows; ++i)
      for (std::size_t j = 0; j < sh.cols; ++j) d(i, j) = go(0, j) * factor;
    gr.accumulate(ia, d);
  });
}

}  // namespace

Var row_sum(Var a) { return reduce_rows(a, OpKind::row_sum, 1.0); }
Var col_sum(Var a) { return reduce_cols(a, OpKind::col_sum, 1.0); }

Var row_mean(Var a) {
  if (a.shape().cols == 0) throw DimensionError("row_mean of a matrix with no columns");
  return reduce_rows(a, OpKind::row_mean, 1.0 / static_cast<real>(a.shape().cols));
}

Var col_mean(Var a) {
  if (a.shape().rows == 0) throw DimensionError("col_mean of a matrix with no rows");
  return reduce_cols(a, OpKind::col_mean, 1.0 / static_cast<real>(a.shape().rows));
}

Var gather_rows(Var a, std::span<const std::size_t> index) {
  const Matrix& av = a.value();
  Matrix out(index.size(), av.cols());
  for (std::size_t r = 0; r < index.size(); ++r) {
    if (index[r] >= av.rows()) {
      throw DimensionError("gather_rows: index " + std::to_string(index[r]) + " out of range for " +
                           to_string(av.shape()));
    }
    for (std::size_t j = 0; j < av.cols(); ++j) out(r, j) = av(index[r], j);
  }
  const NodeId ia = a.id();
  const Shape sh = av.shape();
  std::vector<std::size_t> idx(index.begin(), index.end());
  return a.graph().record(OpKind::gather_rows, {ia}, std::move(out),
                          [ia, sh, idx = std::move(idx)](Graph& gr, NodeId, const Matrix& go) {
                            Matrix d(sh.rows, sh.cols);
                            for (std::size_t r = 0; r < idx.size(); ++r)
                              for (std::size_t j = 0; j < sh.cols; ++j) d(idx[r], j) += go(r, j);
                            gr.accumulate(ia, d);
                          });
}

Var transpose(Var a) {
  const NodeId ia = a.id();
  return a.graph().record(OpKind::transpose, {ia}, a.value().transposed(),
                          [ia](Graph& gr, NodeId, const Matrix& go) { gr.accumulate(ia, go.transposed()); });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw DimensionError("concat_rows of zero parts");
  Graph& g = parts.front().graph();
  const std::size_t cols = parts.front().shape().cols;
  std::vector<NodeId> ids;
  std::vector<std::size_t> row_counts;
  std::vector<real> values;
  std::size_t rows = 0;
  for (const Var& p : parts) {
    if (&p.graph() != &g) throw GraphError("concat_rows: parts belong to different graphs");
    if (p.shape().cols != cols) {
      throw DimensionError("concat_rows: column counts differ (" + std::to_string(cols) + " vs " +
                           std::to_string(p.shape().cols) + ")");
    }
    ids.push_back(p.id());
    row_counts.push_back(p.shape().rows);
    rows += p.shape().rows;
    values.insert(values.end(), p.value().data().begin(), p.value().data().end());
  }
  return g.record(OpKind::concat_rows, ids, Matrix(rows, cols, std::move(values)),
                  [ids, row_counts, cols](Graph& gr, NodeId, const Matrix& go) {
                    std::size_t offset = 0;
                    for (std::size_t p = 0; p < ids.size(); ++p) {
                      Matrix d(row_counts[p], cols);
                      for (std::size_t i = 0; i < row_counts[p]; ++i)
                        for (std::size_t j = 0; j < cols; ++j) d(i, j) = go(offset + i, j);
                      offset += row_counts[p];
                      gr.accumulate(ids[p], d);
                    }
                  });
}

Var normalize_rows(Var a, real eps) {
  if (!(eps > 0)) throw ValidationError("normalize_rows: eps must be positive");
  const Matrix& av = a.value();
  Matrix out(av.rows(), av.cols());
  std::vector<real> norms(av.rows());
  for (std::size_t i = 0; i < av.rows(); ++i) {
    norms[i] = norm(av.row(i));
    const real denom = std::max(norms[i], eps);
    for (std::size_t j = 0; j < av.cols(); ++j) out(i, j) = av(i, j) / denom;
  }
  const NodeId ia = a.id();
  return a.graph().record(
      OpKind::normalize_rows, {ia}, std::move(out),
      [ia, eps, norms = std::move(norms)](Graph& gr, NodeId self, const Matrix& go) {
        const Matrix& y = values_of(gr, self);
        Matrix d(go.rows(), go.cols());
        for (std::size_t i = 0; i < go.rows(); ++i) {
          if (norms[i] > eps) {
            // d(a/|a|) = (I - y y^T) / |a|
            const real yg = dot(y.row(i), go.row(i));
            for (std::size_t j = 0; j < go.cols(); ++j) d(i, j) = (go(i, j) - y(i, j) * yg) / norms[i];
          } else {
            // Clamped branch: the denominator is the constant eps.
            for (std::size_t j = 0; j < go.cols(); ++j) d(i, j) = go(i, j) / eps;
          }
        }
        gr.accumulate(ia, d);
      });
}

Var cosine_sim_matrix(Var a, Var b, real eps) {
  if (a.shape().cols != b.shape().cols) {
    throw DimensionError("cosine_sim_matrix: column counts differ " + to_string(a.shape()) + " vs " +
                         to_string(b.shape()));
  }
  Var na = normalize_rows(a, eps);
  Var nb = a.id() == b.id() ? na : normalize_rows(b, eps);
  return matmul(na, transpose(nb));
}

Var log_softmax_row_masked(Var scores, bool exclude_diagonal) {
  const Matrix& s = scores.value();
  const std::size_t m = s.rows();
  if (exclude_diagonal) {
    if (s.rows() != s.cols()) {
      throw DimensionError("log_softmax_row_masked: diagonal masking needs a square input, got " +
                           to_string(s.shape()));
    }
    if (m < 2) throw DegenerateBatchError("log_softmax_row_masked: a 1x1 input leaves nothing after masking");
  }
  if (s.cols() == 0) throw DimensionError("log_softmax_row_masked: empty rows");
  Matrix out(m, s.cols());
  for (std::size_t i = 0; i < m; ++i) {
    real mx = -std::numeric_limits<real>::infinity();
    for (std::size_t j = 0; j < s.cols(); ++j)
      if (!(exclude_diagonal && i == j)) mx = std::max(mx, s(i, j));
    real acc = 0.0;
    for (std::size_t j = 0; j < s.cols(); ++j)
      if (!(exclude_diagonal && i == j)) acc += std::exp(s(i, j) - mx);
    const real lse = mx + std::log(acc);
    for (std::size_t j = 0; j < s.cols(); ++j) out(i, j) = (exclude_diagonal && i == j) ? 0.0 : s(i, j) - lse;
  }
  const NodeId is = scores.id();
  return scores.graph().record(
      OpKind::log_softmax_row_masked, {is}, std::move(out),
      [is, exclude_diagonal](Graph& gr, NodeId self, const Matrix& go) {
        const Matrix& y = values_of(gr, self);
        Matrix d(go.rows(), go.cols());
        for (std::size_t i = 0; i < go.rows(); ++i) {
          real gsum = 0.0;
          for (std::size_t j = 0; j < go.cols(); ++j)
            if (!(exclude_diagonal && i == j)) gsum += go(i, j);
          for (std::size_t j = 0; j < go.cols(); ++j) {
            if (exclude_diagonal && i == j) continue;
            d(i, j) = go(i, j) - std::exp(y(i, j)) * gsum;
          }
        }
        gr.accumulate(is, d);
      });
}

Var softmax_rows(Var scores) { return exp(log_softmax_row_masked(scores, false)); }

Var log_softmax_leave_one_out(Var scores) {
  const Matrix& s = scores.value();
  const std::size_t m = s.rows();
  if (s.rows() != s.cols()) {
    throw DimensionError("log_softmax_leave_one_out: square input required, got " + to_string(s.shape()));
  }
  if (m < 2) throw DegenerateBatchError("log_softmax_leave_one_out: needs at least 2 rows");
  // lse(i,j) = log sum_{k != i} exp(s(k,j))
  Matrix lse(m, m);
  Matrix out(m, m);
  for (std::size_t j = 0; j < m; ++j) {
    for (std::size_t i = 0; i < m; ++i) {
      if (i == j) continue;
      real mx = -std::numeric_limits<real>::infinity();
      for (std::size_t k = 0; k < m; ++k)
        if (k != i) mx = std::max(mx, s(k, j));
      real acc = 0.0;
      for (std::size_t k = 0; k < m; ++k)
        if (k != i) acc += std::exp(s(k, j) - mx);
      lse(i, j) = mx + std::log(acc);
      out(i, j) = s(i, j) - lse(i, j);
    }
  }
  const NodeId is = scores.id();
  return scores.graph().record(
      OpKind::log_softmax_leave_one_out, {is}, std::move(out),
      [is, lse = std::move(lse)](Graph& gr, NodeId, const Matrix& go) {
        const Matrix& sv = values_of(gr, is);
        const std::size_t n = sv.rows();
        Matrix d(n, n);
        for (std::size_t i = 0; i < n; ++i) {
          for (std::size_t j = 0; j < n; ++j) {
            if (i == j) continue;
            const real g = go(i, j);
            if (g == 0.0) continue;
            d(i, j) += g;
            for (std::size_t k = 0; k < n; ++k)
              if (k != i) d(k, j) -= g * std::exp(sv(k, j) - lse(i, j));
          }
        }
        gr.accumulate(is, d);
      });
}

}  // namespace parameta::diff
