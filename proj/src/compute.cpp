#include "bgt/compute.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <sstream>

namespace bgt::compute {

std::string shape_string(const Matrix& m) {
  std::ostringstream os;
  os << "[" << m.rows() << "x" << m.cols() << "]";
  return os.str();
}

namespace {

[[noreturn]] void shape_error(const char* op, const Matrix& a, const Matrix& b) {
  throw ComputeError(std::string(op) + ": incompatible shapes " + shape_string(a) + " and " +
                     shape_string(b));
}

void require_same_graph(Var a, Var b, const char* op) {
  if (!a.valid() || !b.valid() || a.graph() != b.graph()) {
    throw ComputeError(std::string(op) + ": operands belong to different graphs");
  }
}

void check_segments(const Segments& seg, Index rows, const char* op) {
  if (seg.total != rows) {
    throw ComputeError(std::string(op) + ": segments cover " + std::to_string(seg.total) +
                       " rows but input has " + std::to_string(rows));
  }
}

}  // namespace

// ---- Parameter / ParameterStore ---------------------------------------------

Parameter::Parameter(std::string name_, Matrix value_)
    : name(std::move(name_)), value(std::move(value_)), grad(Matrix::Zero(value.rows(), value.cols())) {}

Parameter& ParameterStore::add(const std::string& name, Matrix value) {
  if (index_.count(name) != 0) {
    throw ComputeError("duplicate parameter name: " + name);
  }
  index_.emplace(name, params_.size());
  params_.emplace_back(name, std::move(value));
  return params_.back();
}

Parameter& ParameterStore::at(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw ComputeError("unknown parameter: " + name);
  return params_[it->second];
}

const Parameter& ParameterStore::at(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ComputeError("unknown parameter: " + name);
  return params_[it->second];
}

bool ParameterStore::contains(const std::string& name) const { return index_.count(name) != 0; }

std::vector<Parameter*> ParameterStore::all() {
  std::vector<Parameter*> out;
  out.reserve(params_.size());
  for (auto& p : params_) out.push_back(&p);
  return out;
}

std::vector<const Parameter*> ParameterStore::all() const {
  std::vector<const Parameter*> out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.push_back(&p);
  return out;
}

std::size_t ParameterStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += static_cast<std::size_t>(p.value.size());
  return n;
}

// ---- Segments --------------------------------------------------------------

Segments Segments::from_lengths(std::span<const int> lengths) {
  Segments s;
  s.offsets.reserve(lengths.size());
  s.lengths.reserve(lengths.size());
  for (int len : lengths) {
    if (len <= 0) throw ComputeError("segment lengths must be positive");
    s.offsets.push_back(s.total);
    s.lengths.push_back(len);
    s.total += len;
  }
  return s;
}

Segments Segments::ones(int count) {
  std::vector<int> lens(static_cast<std::size_t>(count), 1);
  return from_lengths(lens);
}

// ---- Var / Graph -------------------------------------------------------------

const Matrix& Var::value() const {
  if (graph_ == nullptr) throw ComputeError("use of an empty Var");
  return graph_->value(id_);
}

double Var::scalar() const {
  const Matrix& v = value();
  if (v.rows() != 1 || v.cols() != 1) {
    throw ComputeError("scalar(): node has shape " + shape_string(v));
  }
  return v(0, 0);
}

Graph::Graph(bool record_gradients) : recording_(record_gradients) { nodes_.reserve(256); }

const Matrix& Graph::value(int id) const {
  const Node& n = nodes_[static_cast<std::size_t>(id)];
  return n.ref != nullptr ? *n.ref : n.value;
}

Var Graph::constant(Matrix value) {
  if (!all_finite(value)) throw ComputeError("constant: non-finite input");
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Graph::param(Parameter& p) {
  auto it = param_nodes_.find(&p);
  if (it != param_nodes_.end()) return Var(this, it->second);
  if (!all_finite(p.value)) throw ComputeError("parameter " + p.name + " holds non-finite values");
  Node n;
  n.ref = &p.value;
  n.param = &p;
  n.needs_grad = recording_;
  nodes_.push_back(std::move(n));
  int id = static_cast<int>(nodes_.size()) - 1;
  param_nodes_.emplace(&p, id);
  return Var(this, id);
}

Var Graph::push(Matrix value, std::initializer_list<Var> parents, BackwardFn fn, const char* op) {
  return push(std::move(value), std::vector<Var>(parents), std::move(fn), op);
}

Var Graph::push(Matrix value, const std::vector<Var>& parents, BackwardFn fn, const char* op) {
  if (!all_finite(value)) {
    throw ComputeError(std::string(op) + " produced a non-finite value");
  }
  Node n;
  n.value = std::move(value);
  if (recording_) {
    for (const Var& p : parents) {
      if (p.graph() != this) throw ComputeError(std::string(op) + ": operand from another graph");
      if (needs_grad(p.id())) n.needs_grad = true;
    }
    if (n.needs_grad) n.backward = std::move(fn);
  }
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Matrix& Graph::grad_slot(int id) {
  Node& n = nodes_[static_cast<std::size_t>(id)];
  if (n.grad.size() == 0) {
    const Matrix& v = value(id);
    n.grad = Matrix::Zero(v.rows(), v.cols());
  }
  return n.grad;
}

void Graph::accumulate(int id, const Matrix& g) {
  if (!needs_grad(id)) return;
  add_grad(id, g);
}

void Graph::add_constant_grad(int id, double c) {
  Node& n = nodes_[static_cast<std::size_t>(id)];
  if (n.grad.size() == 0) {
    const Matrix& v = value(id);
    n.grad = Matrix::Constant(v.rows(), v.cols(), c);
  } else {
    n.grad.array() += c;
  }
}

const Matrix& Graph::grad(Var v) const {
  return nodes_[static_cast<std::size_t>(v.id())].grad;
}

void Graph::backward(Var loss) {
  if (loss.graph() != this) throw ComputeError("backward: loss belongs to another graph");
  if (!recording_) throw ComputeError("backward: graph was built without gradient recording");
  const Matrix& lv = value(loss.id());
  if (lv.rows() != 1 || lv.cols() != 1) {
    throw ComputeError("backward: loss must be scalar, got " + shape_string(lv));
  }
  for (auto& n : nodes_) n.grad.resize(0, 0);
  if (needs_grad(loss.id())) {
    grad_slot(loss.id())(0, 0) = 1.0;
    for (int id = loss.id(); id >= 0; --id) {
      Node& n = nodes_[static_cast<std::size_t>(id)];
      if (!n.backward || n.grad.size() == 0) continue;
      // Closures only touch parents' grads, which have smaller ids.
      n.backward(*this, n.grad);
    }
  }
  for (auto& n : nodes_) {
    if (n.param == nullptr) continue;
    if (n.grad.size() == 0) {
      n.param->grad = Matrix::Zero(n.param->value.rows(), n.param->value.cols());
    } else {
      n.param->grad = std::move(n.grad);
    }
  }
}

// ---- primitives ----------------------------------------------------------------

Var matmul(Var a, Var b) {
  require_same_graph(a, b, "matmul");
  const Matrix& A = a.value();
  const Matrix& B = b.value();
  if (A.cols() != B.rows()) shape_error("matmul", A, B);
  Matrix out(A.rows(), B.cols());
  out.noalias() = A * B;
  int ia = a.id(), ib = b.id();
  return a.graph()->push(std::move(out), {a, b}, [ia, ib](Graph& g, const Matrix& G) {
    if (g.needs_grad(ia)) g.add_grad(ia, G * g.value(ib).transpose());
    if (g.needs_grad(ib)) g.add_grad(ib, g.value(ia).transpose() * G);
  }, "matmul");
}

Var add(Var a, Var b) {
  require_same_graph(a, b, "add");
  const Matrix& A = a.value();
  const Matrix& B = b.value();
  int ia = a.id(), ib = b.id();
  if (A.rows() == B.rows() && A.cols() == B.cols()) {
    return a.graph()->push(A + B, {a, b}, [ia, ib](Graph& g, const Matrix& G) {
      g.accumulate(ia, G);
      g.accumulate(ib, G);
    }, "add");
  }
  if (B.rows() == 1 && B.cols() == A.cols()) {
    Matrix out = A.rowwise() + B.row(0);
    return a.graph()->push(std::move(out), {a, b}, [ia, ib](Graph& g, const Matrix& G) {
      g.accumulate(ia, G);
      if (g.needs_grad(ib)) g.add_grad(ib, G.colwise().sum());
    }, "add");
  }
  shape_error("add", A, B);
}

Var sub(Var a, Var b) {
  require_same_graph(a, b, "sub");
  const Matrix& A = a.value();
  const Matrix& B = b.value();
  if (A.rows() != B.rows() || A.cols() != B.cols()) shape_error("sub", A, B);
  int ia = a.id(), ib = b.id();
  return a.graph()->push(A - B, {a, b}, [ia, ib](Graph& g, const Matrix& G) {
    g.accumulate(ia, G);
    if (g.needs_grad(ib)) g.add_grad(ib, -G);
  }, "sub");
}

Var mul(Var a, Var b) {
  require_same_graph(a, b, "mul");
  const Matrix& A = a.value();
  const Matrix& B = b.value();
  if (A.rows() != B.rows() || A.cols() != B.cols()) shape_error("mul", A, B);
  int ia = a.id(), ib = b.id();
  return a.graph()->push(A.cwiseProduct(B), {a, b}, [ia, ib](Graph& g, const Matrix& G) {
    if (g.needs_grad(ia)) g.add_grad(ia, G.cwiseProduct(g.value(ib)));
    if (g.needs_grad(ib)) g.add_grad(ib, G.cwiseProduct(g.value(ia)));
  }, "mul");
}

Var scale(Var a, double s) {
  int ia = a.id();
  return a.graph()->push(a.value() * s, {a}, [ia, s](Graph& g, const Matrix& G) {
    if (g.needs_grad(ia)) g.add_grad(ia, G * s);
  }, "scale");
}

Var add_scalar(Var a, double s) {
  int ia = a.id();
  Matrix out = a.value().array() + s;
  return a.graph()->push(std::move(out), {a}, [ia](Graph& g, const Matrix& G) {
    g.accumulate(ia, G);
  }, "add_scalar");
}

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw ComputeError("concat_cols: no operands");
  Index rows = parts[0].rows();
  Index cols = 0;
  for (const Var& p : parts) {
    require_same_graph(parts[0], p, "concat_cols");
    if (p.rows() != rows) shape_error("concat_cols", parts[0].value(), p.value());
    cols += p.cols();
  }
  Matrix out(rows, cols);
  std::vector<std::pair<int, Index>> layout;
  Index at = 0;
  for (const Var& p : parts) {
    out.middleCols(at, p.cols()) = p.value();
    layout.emplace_back(p.id(), at);
    at += p.cols();
  }
  return parts[0].graph()->push(std::move(out), parts, [layout](Graph& g, const Matrix& G) {
    for (auto [id, start] : layout) {
      if (g.needs_grad(id)) {
        Matrix& slot = g.grad_slot(id);
        slot += G.middleCols(start, slot.cols());
      }
    }
  }, "concat_cols");
}

Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw ComputeError("concat_rows: no operands");
  Index cols = parts[0].cols();
  Index rows = 0;
  for (const Var& p : parts) {
    require_same_graph(parts[0], p, "concat_rows");
    if (p.cols() != cols) shape_error("concat_rows", parts[0].value(), p.value());
    rows += p.rows();
  }
  Matrix out(rows, cols);
  std::vector<std::pair<int, Index>> layout;
  Index at = 0;
  for (const Var& p : parts) {
    out.middleRows(at, p.rows()) = p.value();
    layout.emplace_back(p.id(), at);
    at += p.rows();
  }
  return parts[0].graph()->push(std::move(out), parts, [layout](Graph& g, const Matrix& G) {
    for (auto [id, start] : layout) {
      if (g.needs_grad(id)) {
        Matrix& slot = g.grad_slot(id);
        slot += G.middleRows(start, slot.rows());
      }
    }
  }, "concat_rows");
}

Var slice_cols(Var a, Index start, Index count) {
  const Matrix& A = a.value();
  if (start < 0 || count < 0 || start + count > A.cols()) {
    throw ComputeError("slice_cols: [" + std::to_string(start) + ", +" + std::to_string(count) +
                       ") outside " + shape_string(A));
  }
  int ia = a.id();
  return a.graph()->push(A.middleCols(start, count), {a}, [ia, start, count](Graph& g, const Matrix& G) {
    if (g.needs_grad(ia)) g.grad_slot(ia).middleCols(start, count) += G;
  }, "slice_cols");
}

Var slice_rows(Var a, Index start, Index count) {
  const Matrix& A = a.value();
  if (start < 0 || count < 0 || start + count > A.rows()) {
    throw ComputeError("slice_rows: [" + std::to_string(start) + ", +" + std::to_string(count) +
                       ") outside " + shape_string(A));
  }
  int ia = a.id();
  return a.graph()->push(A.middleRows(start, count), {a}, [ia, start, count](Graph& g, const Matrix& G) {
    if (g.needs_grad(ia)) g.grad_slot(ia).middleRows(start, count) += G;
  }, "slice_rows");
}

Var gather_rows(Var a, std::span<const int> rows) {
  const Matrix& A = a.value();
  Matrix out(static_cast<Index>(rows.size()), A.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= A.rows()) {
      throw ComputeError("gather_rows: index " + std::to_string(rows[i]) + " outside " +
                         shape_string(A));
    }
    out.row(static_cast<Index>(i)) = A.row(rows[i]);
  }
  int ia = a.id();
  std::vector<int> idx(rows.begin(), rows.end());
  return a.graph()->push(std::move(out), {a}, [ia, idx = std::move(idx)](Graph& g, const Matrix& G) {
    if (!g.needs_grad(ia)) return;
    Matrix& slot = g.grad_slot(ia);
    for (std::size_t i = 0; i < idx.size(); ++i) slot.row(idx[i]) += G.row(static_cast<Index>(i));
  }, "gather_rows");
}

Var pick(Var a, std::span<const int> cols) {
  const Matrix& A = a.value();
  if (static_cast<Index>(cols.size()) != A.rows()) {
    throw ComputeError("pick: " + std::to_string(cols.size()) + " indices for " + shape_string(A));
  }
  Matrix out(A.rows(), 1);
  for (Index i = 0; i < A.rows(); ++i) {
    int c = cols[static_cast<std::size_t>(i)];
    if (c < 0 || c >= A.cols()) {
      throw ComputeError("pick: column " + std::to_string(c) + " outside " + shape_string(A));
    }
    out(i, 0) = A(i, c);
  }
  int ia = a.id();
  std::vector<int> idx(cols.begin(), cols.end());
  return a.graph()->push(std::move(out), {a}, [ia, idx = std::move(idx)](Graph& g, const Matrix& G) {
    if (!g.needs_grad(ia)) return;
    Matrix& slot = g.grad_slot(ia);
    for (std::size_t i = 0; i < idx.size(); ++i) slot(static_cast<Index>(i), idx[i]) += G(static_cast<Index>(i), 0);
  }, "pick");
}

namespace {

Matrix row_softmax(const Matrix& X) {
  Matrix Y(X.rows(), X.cols());
  for (Index i = 0; i < X.rows(); ++i) {
    double m = X.row(i).maxCoeff();
    Y.row(i) = (X.row(i).array() - m).exp();
    Y.row(i) /= Y.row(i).sum();
  }
  return Y;
}

}  // namespace

Var softmax(Var a) {
  Matrix Y = row_softmax(a.value());
  int ia = a.id();
  auto keep = std::make_shared<Matrix>(Y);
  return a.graph()->push(std::move(Y), {a}, [ia, keep](Graph& g, const Matrix& G) {
    if (!g.needs_grad(ia)) return;
    const Matrix& Yv = *keep;
    Eigen::VectorXd dot = (G.cwiseProduct(Yv)).rowwise().sum();
    g.add_grad(ia, Yv.cwiseProduct(G.colwise() - dot));
  }, "softmax");
}

Var log_softmax(Var a) {
  const Matrix& X = a.value();
  Matrix Y(X.rows(), X.cols());
  for (Index i = 0; i < X.rows(); ++i) {
    double m = X.row(i).maxCoeff();
    double lse = m + std::log((X.row(i).array() - m).exp().sum());
    Y.row(i) = X.row(i).array() - lse;
  }
  int ia = a.id();
  auto probs = std::make_shared<Matrix>(Y.array().exp().matrix());
  return a.graph()->push(std::move(Y), {a}, [ia, probs](Graph& g, const Matrix& G) {
    if (!g.needs_grad(ia)) return;
    Eigen::VectorXd total = G.rowwise().sum();
    Matrix d = G;
    d.noalias() -= probs->cwiseProduct(total.replicate(1, G.cols()));
    g.add_grad(ia, d);
  }, "log_softmax");
}

Var layer_norm(Var x, Var gamma, Var beta, double eps) {
  require_same_graph(x, gamma, "layer_norm");
  require_same_graph(x, beta, "layer_norm");
  const Matrix& X = x.value();
  const Matrix& Gm = gamma.value();
  const Matrix& Bt = beta.value();
  if (Gm.rows() != 1 || Gm.cols() != X.cols()) shape_error("layer_norm", X, Gm);
  if (Bt.rows() != 1 || Bt.cols() != X.cols()) shape_error("layer_norm", X, Bt);
  const Index d = X.cols();
  auto xhat = std::make_shared<Matrix>(X.rows(), d);
  auto inv_std = std::make_shared<Eigen::VectorXd>(X.rows());
  for (Index i = 0; i < X.rows(); ++i) {
    double mu = X.row(i).mean();
    double var = (X.row(i).array() - mu).square().mean();
    double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)(i) = is;
    xhat->row(i) = (X.row(i).array() - mu) * is;
  }
  Matrix out = (xhat->array().rowwise() * Gm.row(0).array()).rowwise() + Bt.row(0).array();
  int ix = x.id(), ig = gamma.id(), ib = beta.id();
  return x.graph()->push(std::move(out), {x, gamma, beta},
                         [ix, ig, ib, xhat, inv_std, d](Graph& g, const Matrix& G) {
    if (g.needs_grad(ig)) g.add_grad(ig, G.cwiseProduct(*xhat).colwise().sum());
    if (g.needs_grad(ib)) g.add_grad(ib, G.colwise().sum());
    if (g.needs_grad(ix)) {
      const Matrix& Gm2 = g.value(ig);
      Matrix dxhat = G.array().rowwise() * Gm2.row(0).array();
      Matrix& slot = g.grad_slot(ix);
      for (Index i = 0; i < G.rows(); ++i) {
        double m1 = dxhat.row(i).mean();
        double m2 = dxhat.row(i).dot(xhat->row(i)) / static_cast<double>(d);
        slot.row(i).array() +=
            (*inv_std)(i) * (dxhat.row(i).array() - m1 - xhat->row(i).array() * m2);
      }
    }
  }, "layer_norm");
}

Var relu(Var a) {
  int ia = a.id();
  return a.graph()->push(a.value().cwiseMax(0.0), {a}, [ia](Graph& g, const Matrix& G) {
    if (!g.needs_grad(ia)) return;
    g.add_grad(ia, (g.value(ia).array() > 0.0).select(G, 0.0).matrix());
  }, "relu");
}

Var gelu(Var a) {
  const double inv_sqrt2 = 1.0 / std::sqrt(2.0);
  Matrix out = a.value().unaryExpr([inv_sqrt2](double v) { return 0.5 * v * (1.0 + std::erf(v * inv_sqrt2)); });
  int ia = a.id();
  return a.graph()->push(std::move(out), {a}, [ia, inv_sqrt2](Graph& g, const Matrix& G) {
    if (!g.needs_grad(ia)) return;
    const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * M_PI);
    Matrix d = g.value(ia).unaryExpr([&](double v) {
      return 0.5 * (1.0 + std::erf(v * inv_sqrt2)) + v * inv_sqrt_2pi * std::exp(-0.5 * v * v);
    });
    g.add_grad(ia, G.cwiseProduct(d));
  }, "gelu");
}

Var tanh(Var a) {
  Matrix Y = a.value().array().tanh();
  int ia = a.id();
  auto keep = std::make_shared<Matrix>(Y);
  return a.graph()->push(std::move(Y), {a}, [ia, keep](Graph& g, const Matrix& G) {
    if (!g.needs_grad(ia)) return;
    g.add_grad(ia, (G.array() * (1.0 - keep->array().square())).matrix());
  }, "tanh");
}

Var sigmoid(Var a) {
  Matrix Y = a.value().unaryExpr([](double v) {
    if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
    double e = std::exp(v);
    return e / (1.0 + e);
  });
  int ia = a.id();
  auto keep = std::make_shared<Matrix>(Y);
  return a.graph()->push(std::move(Y), {a}, [ia, keep](Graph& g, const Matrix& G) {
    if (!g.needs_grad(ia)) return;
    g.add_grad(ia, (G.array() * keep->array() * (1.0 - keep->array())).matrix());
  }, "sigmoid");
}

Var exp(Var a) {
  Matrix Y = a.value().array().exp();
  int ia = a.id();
  auto keep = std::make_shared<Matrix>(Y);
  return a.graph()->push(std::move(Y), {a}, [ia, keep](Graph& g, const Matrix& G) {
    if (!g.needs_grad(ia)) return;
    g.add_grad(ia, G.cwiseProduct(*keep));
  }, "exp");
}

Var log(Var a) {
  if ((a.value().array() <= 0.0).any()) throw ComputeError("log: non-positive input");
  int ia = a.id();
  return a.graph()->push(a.value().array().log(), {a}, [ia](Graph& g, const Matrix& G) {
    if (!g.needs_grad(ia)) return;
    g.add_grad(ia, (G.array() / g.value(ia).array()).matrix());
  }, "log");
}

Var sum(Var a) {
  Matrix out(1, 1);
  out(0, 0) = a.value().sum();
  int ia = a.id();
  return a.graph()->push(std::move(out), {a}, [ia](Graph& g, const Matrix& G) {
    if (g.needs_grad(ia)) g.add_constant_grad(ia, G(0, 0));
  }, "sum");
}

Var mean(Var a) {
  const double n = static_cast<double>(a.value().size());
  if (n == 0) throw ComputeError("mean: empty input");
  Matrix out(1, 1);
  out(0, 0) = a.value().sum() / n;
  int ia = a.id();
  return a.graph()->push(std::move(out), {a}, [ia, n](Graph& g, const Matrix& G) {
    if (g.needs_grad(ia)) g.add_constant_grad(ia, G(0, 0) / n);
  }, "mean");
}

Var sum_rows(Var a) {
  Matrix out = a.value().rowwise().sum();
  int ia = a.id();
  return a.graph()->push(std::move(out), {a}, [ia](Graph& g, const Matrix& G) {
    if (!g.needs_grad(ia)) return;
    Matrix& slot = g.grad_slot(ia);
    slot.colwise() += G.col(0);
  }, "sum_rows");
}

Var segment_mean(Var x, const Segments& seg) {
  const Matrix& X = x.value();
  check_segments(seg, X.rows(), "segment_mean");
  Matrix out(static_cast<Index>(seg.count()), X.cols());
  for (std::size_t s = 0; s < seg.count(); ++s) {
    out.row(static_cast<Index>(s)) =
        X.middleRows(seg.offsets[s], seg.lengths[s]).colwise().sum() / static_cast<double>(seg.lengths[s]);
  }
  int ix = x.id();
  return x.graph()->push(std::move(out), {x}, [ix, seg](Graph& g, const Matrix& G) {
    if (!g.needs_grad(ix)) return;
    Matrix& slot = g.grad_slot(ix);
    for (std::size_t s = 0; s < seg.count(); ++s) {
      auto row = G.row(static_cast<Index>(s)) / static_cast<double>(seg.lengths[s]);
      for (int r = 0; r < seg.lengths[s]; ++r) slot.row(seg.offsets[s] + r) += row;
    }
  }, "segment_mean");
}

Var expand_segments(Var x, const Segments& seg) {
  const Matrix& X = x.value();
  if (static_cast<Index>(seg.count()) != X.rows()) {
    throw ComputeError("expand_segments: " + std::to_string(seg.count()) + " segments for " +
                       shape_string(X));
  }
  Matrix out(seg.total, X.cols());
  for (std::size_t s = 0; s < seg.count(); ++s) {
    out.middleRows(seg.offsets[s], seg.lengths[s]).rowwise() = X.row(static_cast<Index>(s));
  }
  int ix = x.id();
  return x.graph()->push(std::move(out), {x}, [ix, seg](Graph& g, const Matrix& G) {
    if (!g.needs_grad(ix)) return;
    Matrix& slot = g.grad_slot(ix);
    for (std::size_t s = 0; s < seg.count(); ++s) {
      slot.row(static_cast<Index>(s)) += G.middleRows(seg.offsets[s], seg.lengths[s]).colwise().sum();
    }
  }, "expand_segments");
}

Var attention(Var q, Var k, Var v, const Segments& qseg, const Segments& kseg, int heads,
              bool causal) {
  require_same_graph(q, k, "attention");
  require_same_graph(q, v, "attention");
  const Matrix& Q = q.value();
  const Matrix& K = k.value();
  const Matrix& V = v.value();
  check_segments(qseg, Q.rows(), "attention(query)");
  check_segments(kseg, K.rows(), "attention(key)");
  if (K.rows() != V.rows() || Q.cols() != K.cols() || K.cols() != V.cols()) {
    shape_error("attention", Q, V);
  }
  if (qseg.count() != kseg.count()) {
    throw ComputeError("attention: query has " + std::to_string(qseg.count()) +
                       " sequences but memory has " + std::to_string(kseg.count()));
  }
  if (heads <= 0 || Q.cols() % heads != 0) {
    throw ComputeError("attention: width " + std::to_string(Q.cols()) + " not divisible into " +
                       std::to_string(heads) + " heads");
  }
  if (causal && qseg.lengths != kseg.lengths) {
    throw ComputeError("attention: causal masking needs identical query and key layouts");
  }
  const Index dh = Q.cols() / heads;
  const double sc = 1.0 / std::sqrt(static_cast<double>(dh));
  const std::size_t nseq = qseg.count();
  auto probs = std::make_shared<std::vector<Matrix>>(nseq * static_cast<std::size_t>(heads));
  Matrix out(Q.rows(), Q.cols());
  for (std::size_t s = 0; s < nseq; ++s) {
    const int ql = qseg.lengths[s], kl = kseg.lengths[s];
    for (int h = 0; h < heads; ++h) {
      auto Qs = Q.block(qseg.offsets[s], h * dh, ql, dh);
      auto Ks = K.block(kseg.offsets[s], h * dh, kl, dh);
      auto Vs = V.block(kseg.offsets[s], h * dh, kl, dh);
      Matrix S(ql, kl);
      S.noalias() = Qs * Ks.transpose();
      S *= sc;
      Matrix& P = (*probs)[s * static_cast<std::size_t>(heads) + static_cast<std::size_t>(h)];
      P.resize(ql, kl);
      for (int i = 0; i < ql; ++i) {
        const int visible = causal ? i + 1 : kl;
        double m = S.row(i).head(visible).maxCoeff();
        double z = 0.0;
        for (int j = 0; j < kl; ++j) {
          double e = j < visible ? std::exp(S(i, j) - m) : 0.0;
          P(i, j) = e;
          z += e;
        }
        P.row(i) /= z;
      }
      out.block(qseg.offsets[s], h * dh, ql, dh).noalias() = P * Vs;
    }
  }
  int iq = q.id(), ik = k.id(), iv = v.id();
  return q.graph()->push(std::move(out), {q, k, v},
                         [iq, ik, iv, qseg, kseg, heads, dh, sc, probs](Graph& g, const Matrix& G) {
    const bool gq = g.needs_grad(iq), gk = g.needs_grad(ik), gv = g.needs_grad(iv);
    const Matrix& Qv = g.value(iq);
    const Matrix& Kv = g.value(ik);
    const Matrix& Vv = g.value(iv);
    for (std::size_t s = 0; s < qseg.count(); ++s) {
      const int ql = qseg.lengths[s], kl = kseg.lengths[s];
      for (int h = 0; h < heads; ++h) {
        const Matrix& P = (*probs)[s * static_cast<std::size_t>(heads) + static_cast<std::size_t>(h)];
        auto dO = G.block(qseg.offsets[s], h * dh, ql, dh);
        if (gv) g.grad_slot(iv).block(kseg.offsets[s], h * dh, kl, dh).noalias() += P.transpose() * dO;
        if (!gq && !gk) continue;
        Matrix dP(ql, kl);
        dP.noalias() = dO * Vv.block(kseg.offsets[s], h * dh, kl, dh).transpose();
        Eigen::VectorXd dot = dP.cwiseProduct(P).rowwise().sum();
        Matrix dS = P.cwiseProduct(dP.colwise() - dot);
        dS *= sc;
        if (gq) {
          g.grad_slot(iq).block(qseg.offsets[s], h * dh, ql, dh).noalias() +=
              dS * Kv.block(kseg.offsets[s], h * dh, kl, dh);
        }
        if (gk) {
          g.grad_slot(ik).block(kseg.offsets[s], h * dh, kl, dh).noalias() +=
              dS.transpose() * Qv.block(qseg.offsets[s], h * dh, ql, dh);
        }
      }
    }
  }, "attention");
}

Var dropout(Var x, double p, std::mt19937_64* rng) {
  if (rng == nullptr || p <= 0.0) return x;
  if (p >= 1.0) throw ComputeError("dropout: rate must be below 1");
  // Keep when the top 53 bits of a draw, read as a fraction, fall below 1 - p.
  const double s = 1.0 / (1.0 - p);
  const double keep = 1.0 - p;
  Matrix mask(x.rows(), x.cols());
  for (Index i = 0; i < mask.size(); ++i) {
    const double u = static_cast<double>((*rng)() >> 11) * 0x1.0p-53;
    mask.data()[i] = u < keep ? s : 0.0;
  }
  return mul(x, x.graph()->constant(std::move(mask)));
}

// ---- gradients -------------------------------------------------------------------

std::vector<Matrix> grad(Var loss, std::span<Parameter* const> params) {
  if (!loss.valid()) throw ComputeError("grad: empty loss");
  for (Parameter* p : params) p->grad.setZero(p->value.rows(), p->value.cols());
  loss.graph()->backward(loss);
  std::vector<Matrix> out;
  out.reserve(params.size());
  for (Parameter* p : params) out.push_back(p->grad);
  return out;
}

double grad_check(const std::function<Var(Graph&)>& loss_fn, std::span<Parameter* const> params,
                  double eps) {
  std::vector<Matrix> analytic;
  {
    Graph g(true);
    Var loss = loss_fn(g);
    analytic = grad(loss, params);
  }
  auto eval = [&] {
    Graph g(false);
    double v = loss_fn(g).scalar();
    if (!std::isfinite(v)) throw ComputeError("grad_check: non-finite loss");
    return v;
  };
  double worst = 0.0;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Matrix& w = params[pi]->value;
    for (Index i = 0; i < w.size(); ++i) {
      const double saved = w.data()[i];
      w.data()[i] = saved + eps;
      const double up = eval();
      w.data()[i] = saved - eps;
      const double down = eval();
      w.data()[i] = saved;
      const double numeric = (up - down) / (2.0 * eps);
      const double a = analytic[pi].data()[i];
      const double denom = std::max({1.0, std::abs(a), std::abs(numeric)});
      worst = std::max(worst, std::abs(a - numeric) / denom);
    }
  }
  return worst;
}

}  // namespace bgt::compute
