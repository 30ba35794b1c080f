#pragma once

// Reverse-mode differentiation over row-major 2-D arrays.
//
// A Graph records every primitive applied to its Vars and can replay them
// backwards from a scalar loss. Sequences are handled in "packed" form: the
// rows of several sentences are stacked into one matrix and a Segments table
// says where each sentence starts. Nothing is ever padded inside a graph.

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <deque>
#include <functional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace bgt::compute {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Index = Eigen::Index;

class ComputeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string shape_string(const Matrix& m);
// NaN and infinities propagate through the sum, so one reduction suffices.
inline bool all_finite(const Matrix& m) { return std::isfinite(m.sum()); }

struct Parameter {
  std::string name;
  Matrix value;
  Matrix grad;

  Parameter(std::string name_, Matrix value_);
};

// Owns parameters at stable addresses. Names are unique.
class ParameterStore {
 public:
  Parameter& add(const std::string& name, Matrix value);
  Parameter& at(const std::string& name);
  const Parameter& at(const std::string& name) const;
  bool contains(const std::string& name) const;

  std::vector<Parameter*> all();
  std::vector<const Parameter*> all() const;
  std::size_t size() const { return params_.size(); }
  std::size_t scalar_count() const;

 private:
  std::deque<Parameter> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Row layout of a packed batch of sequences.
struct Segments {
  std::vector<int> offsets;
  std::vector<int> lengths;
  int total = 0;

  static Segments from_lengths(std::span<const int> lengths);
  static Segments ones(int count);
  std::size_t count() const { return lengths.size(); }
};

class Graph;

class Var {
 public:
  Var() = default;

  const Matrix& value() const;
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
  double scalar() const;
  Graph* graph() const { return graph_; }
  int id() const { return id_; }
  bool valid() const { return graph_ != nullptr; }

 private:
  friend class Graph;
  Var(Graph* g, int id) : graph_(g), id_(id) {}

  Graph* graph_ = nullptr;
  int id_ = -1;
};

class Graph {
 public:
  // Called with the upstream gradient of the node; must accumulate into parents.
  using BackwardFn = std::function<void(Graph&, const Matrix&)>;

  // With record_gradients = false no backward closures are kept (inference).
  explicit Graph(bool record_gradients = true);
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var constant(Matrix value);
  Var param(Parameter& p);

  // Reverse sweep from a 1x1 node. Every Parameter bound to this graph gets
  // its grad slot overwritten with dloss/dparam.
  void backward(Var loss);

  bool recording() const { return recording_; }
  bool needs_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].needs_grad; }
  const Matrix& value(int id) const;
  const Matrix& grad(Var v) const;
  std::size_t size() const { return nodes_.size(); }

  // Primitive plumbing.
  Var push(Matrix value, std::initializer_list<Var> parents, BackwardFn fn, const char* op);
  Var push(Matrix value, const std::vector<Var>& parents, BackwardFn fn, const char* op);
  void accumulate(int id, const Matrix& g);
  // Adds expr to the node's gradient; the first contribution is assigned.
  template <typename Expr>
  void add_grad(int id, const Expr& expr) {
    Matrix& slot = nodes_[static_cast<std::size_t>(id)].grad;
    if (slot.size() == 0) {
      slot.noalias() = expr;
    } else {
      slot.noalias() += expr;
    }
  }
  void add_constant_grad(int id, double c);
  Matrix& grad_slot(int id);

 private:
  struct Node {
    Matrix value;
    const Matrix* ref = nullptr;
    Parameter* param = nullptr;
    Matrix grad;
    BackwardFn backward;
    bool needs_grad = false;
  };

  std::vector<Node> nodes_;
  std::unordered_map<Parameter*, int> param_nodes_;
  bool recording_;
};

// ---- primitives ----------------------------------------------------------

Var matmul(Var a, Var b);
// Same shape, or b a single row added to every row of a.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
Var add_scalar(Var a, double s);
Var concat_cols(const std::vector<Var>& parts);
Var concat_rows(const std::vector<Var>& parts);
Var slice_cols(Var a, Index start, Index count);
Var slice_rows(Var a, Index start, Index count);
// Row gather; also the embedding lookup. Backward scatter-adds.
Var gather_rows(Var a, std::span<const int> rows);
// out(i, 0) = a(i, cols[i])
Var pick(Var a, std::span<const int> cols);
Var softmax(Var a);
Var log_softmax(Var a);
// Per-row normalization followed by gamma * x + beta (gamma, beta are 1 x d).
Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-5);
Var relu(Var a);
Var gelu(Var a);
Var tanh(Var a);
Var sigmoid(Var a);
Var exp(Var a);
Var log(Var a);
Var sum(Var a);
Var mean(Var a);
Var sum_rows(Var a);
Var segment_mean(Var x, const Segments& seg);
// Repeats row s of x lengths[s] times.
Var expand_segments(Var x, const Segments& seg);
// Multi-head scaled dot-product attention between packed query and key/value
// sequences. Sequence s of q attends to sequence s of k/v only. With causal,
// query position i sees key positions <= i (query and key layouts must match).
Var attention(Var q, Var k, Var v, const Segments& qseg, const Segments& kseg, int heads,
              bool causal);
// Inverted dropout with a mask drawn from rng; identity when rng is null or p == 0.
Var dropout(Var x, double p, std::mt19937_64* rng);

// ---- gradients -----------------------------------------------------------

// Gradients of a scalar loss with respect to params (zero for unreachable ones).
std::vector<Matrix> grad(Var loss, std::span<Parameter* const> params);

// Max over coordinates of |analytic - central difference| / max(1, |analytic|, |numeric|).
// loss_fn must be deterministic; it is called once with a recording graph and
// twice per coordinate with non-recording graphs.
double grad_check(const std::function<Var(Graph&)>& loss_fn, std::span<Parameter* const> params,
                  double eps = 1e-4);

}  // namespace bgt::compute
