#include "bgt/layers.hpp"

#include <cmath>

namespace bgt::model {

PackedTokens PackedTokens::from_rows(std::span<const std::vector<int>> rows) {
  PackedTokens p;
  std::vector<int> lens;
  for (const auto& r : rows) {
    if (r.empty()) throw compute::ComputeError("cannot pack an empty sequence");
    p.ids.insert(p.ids.end(), r.begin(), r.end());
    lens.push_back(static_cast<int>(r.size()));
  }
  p.seg = Segments::from_lengths(lens);
  return p;
}

Matrix xavier_uniform(int rows, int cols, std::mt19937_64& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(rows + cols));
  std::uniform_real_distribution<double> u(-a, a);
  Matrix m(rows, cols);
  for (compute::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  return m;
}

Matrix sinusoid_positions(int length, int dim) {
  Matrix pe(length, dim);
  for (int pos = 0; pos < length; ++pos) {
    for (int i = 0; i < dim; ++i) {
      const double rate = std::pow(10000.0, static_cast<double>(2 * (i / 2)) / static_cast<double>(dim));
      pe(pos, i) = (i % 2 == 0) ? std::sin(pos / rate) : std::cos(pos / rate);
    }
  }
  return pe;
}

// ---- Linear ----

Linear::Linear(ParameterStore& store, const std::string& name, int in, int out, bool bias,
               std::mt19937_64& rng) {
  weight_ = &store.add(name + ".weight", xavier_uniform(in, out, rng));
  if (bias) bias_ = &store.add(name + ".bias", Matrix::Zero(1, out));
}

Var Linear::operator()(ForwardContext& ctx, Var x) const {
  Var y = compute::matmul(x, ctx.graph.param(*weight_));
  if (bias_ != nullptr) y = compute::add(y, ctx.graph.param(*bias_));
  return y;
}

// ---- LayerNormalization ----

LayerNormalization::LayerNormalization(ParameterStore& store, const std::string& name, int dim) {
  gamma_ = &store.add(name + ".gamma", Matrix::Ones(1, dim));
  beta_ = &store.add(name + ".beta", Matrix::Zero(1, dim));
}

Var LayerNormalization::operator()(ForwardContext& ctx, Var x) const {
  return compute::layer_norm(x, ctx.graph.param(*gamma_), ctx.graph.param(*beta_));
}

// ---- Embedding ----

Embedding::Embedding(ParameterStore& store, const std::string& name, int vocab, int dim,
                     bool positional, std::mt19937_64& rng)
    : vocab_(vocab), dim_(dim), positional_(positional) {
  std::normal_distribution<double> n(0.0, 1.0 / std::sqrt(static_cast<double>(dim)));
  Matrix t(vocab, dim);
  for (compute::Index i = 0; i < t.size(); ++i) t.data()[i] = n(rng);
  table_ = &store.add(name + ".table", std::move(t));
}

Var Embedding::operator()(ForwardContext& ctx, const PackedTokens& tokens) const {
  for (int id : tokens.ids) {
    if (id < 0 || id >= vocab_) {
      throw compute::ComputeError("token id " + std::to_string(id) + " outside vocabulary of size " +
                                  std::to_string(vocab_));
    }
  }
  Var x = compute::scale(compute::gather_rows(ctx.graph.param(*table_), tokens.ids),
                         std::sqrt(static_cast<double>(dim_)));
  if (positional_) {
    int longest = 0;
    for (int len : tokens.seg.lengths) longest = std::max(longest, len);
    const Matrix table = sinusoid_positions(longest, dim_);
    Matrix pos(tokens.seg.total, dim_);
    for (std::size_t s = 0; s < tokens.count(); ++s) {
      pos.middleRows(tokens.seg.offsets[s], tokens.seg.lengths[s]) = table.topRows(tokens.seg.lengths[s]);
    }
    x = compute::add(x, ctx.graph.constant(std::move(pos)));
  }
  return ctx.drop(x);
}

// ---- attention / feed-forward ----

MultiHeadAttention::MultiHeadAttention(ParameterStore& store, const std::string& name, int dim,
                                       int heads, std::mt19937_64& rng)
    : q_(store, name + ".q", dim, dim, true, rng),
      k_(store, name + ".k", dim, dim, true, rng),
      v_(store, name + ".v", dim, dim, true, rng),
      o_(store, name + ".o", dim, dim, true, rng),
      heads_(heads) {}

Var MultiHeadAttention::operator()(ForwardContext& ctx, Var query, Var memory, const Segments& qseg,
                                   const Segments& kseg, bool causal) const {
  Var ctxv = compute::attention(q_(ctx, query), k_(ctx, memory), v_(ctx, memory), qseg, kseg,
                                heads_, causal);
  return o_(ctx, ctxv);
}

FeedForward::FeedForward(ParameterStore& store, const std::string& name, int dim, int hidden,
                         std::mt19937_64& rng)
    : in_(store, name + ".in", dim, hidden, true, rng), out_(store, name + ".out", hidden, dim, true, rng) {}

Var FeedForward::operator()(ForwardContext& ctx, Var x) const {
  return out_(ctx, ctx.drop(compute::relu(in_(ctx, x))));
}

// ---- transformer blocks ----

EncoderLayer::EncoderLayer(ParameterStore& store, const std::string& name, int dim, int ffn,
                           int heads, std::mt19937_64& rng)
    : ln_attn_(store, name + ".ln_attn", dim),
      ln_ff_(store, name + ".ln_ff", dim),
      attn_(store, name + ".attn", dim, heads, rng),
      ff_(store, name + ".ff", dim, ffn, rng) {}

Var EncoderLayer::operator()(ForwardContext& ctx, Var x, const Segments& seg) const {
  Var h = ln_attn_(ctx, x);
  x = compute::add(x, ctx.drop(attn_(ctx, h, h, seg, seg, false)));
  return compute::add(x, ctx.drop(ff_(ctx, ln_ff_(ctx, x))));
}

DecoderLayer::DecoderLayer(ParameterStore& store, const std::string& name, int dim, int ffn,
                           int heads, bool cross, std::mt19937_64& rng)
    : ln_self_(store, name + ".ln_self", dim),
      ln_ff_(store, name + ".ln_ff", dim),
      self_(store, name + ".self", dim, heads, rng),
      has_cross_(cross) {
  if (cross) {
    ln_cross_ = LayerNormalization(store, name + ".ln_cross", dim);
    cross_ = MultiHeadAttention(store, name + ".cross", dim, heads, rng);
  }
  ff_ = FeedForward(store, name + ".ff", dim, ffn, rng);
}

Var DecoderLayer::operator()(ForwardContext& ctx, Var x, const Segments& seg, Var memory,
                             const Segments& mseg) const {
  Var h = ln_self_(ctx, x);
  x = compute::add(x, ctx.drop(self_(ctx, h, h, seg, seg, true)));
  if (has_cross_) {
    x = compute::add(x, ctx.drop(cross_(ctx, ln_cross_(ctx, x), memory, seg, mseg, false)));
  }
  return compute::add(x, ctx.drop(ff_(ctx, ln_ff_(ctx, x))));
}

// ---- LSTM ----

Lstm::Lstm(ParameterStore& store, const std::string& name, int in, int hidden, std::mt19937_64& rng)
    : input_(store, name + ".input", in, 4 * hidden, true, rng),
      recurrent_(store, name + ".recurrent", hidden, 4 * hidden, false, rng),
      hidden_(hidden) {
  // Forget-gate bias starts at one.
  input_.bias()->value.middleCols(hidden, hidden).setOnes();
}

Var Lstm::operator()(ForwardContext& ctx, Var x, const Segments& seg, bool reverse, Var h0) const {
  Graph& g = ctx.graph;
  const int n = static_cast<int>(seg.count());
  const int H = hidden_;
  int longest = 0;
  for (int len : seg.lengths) longest = std::max(longest, len);

  Var proj = input_(ctx, x);
  Var h = h0.valid() ? h0 : g.constant(Matrix::Zero(n, H));
  Var c = g.constant(Matrix::Zero(n, H));
  if (h.rows() != n || h.cols() != H) {
    throw compute::ComputeError("lstm: initial state has shape " + compute::shape_string(h.value()) +
                                ", expected [" + std::to_string(n) + "x" + std::to_string(H) + "]");
  }

  std::vector<int> active(static_cast<std::size_t>(n));
  for (int s = 0; s < n; ++s) active[static_cast<std::size_t>(s)] = s;
  std::vector<Var> steps;
  std::vector<int> out_index(static_cast<std::size_t>(seg.total));
  int emitted = 0;

  for (int t = 0; t < longest; ++t) {
    std::vector<int> next_active, keep;
    for (std::size_t a = 0; a < active.size(); ++a) {
      if (seg.lengths[static_cast<std::size_t>(active[a])] > t) {
        next_active.push_back(active[a]);
        keep.push_back(static_cast<int>(a));
      }
    }
    if (next_active.size() != active.size()) {
      h = compute::gather_rows(h, keep);
      c = compute::gather_rows(c, keep);
      active = std::move(next_active);
    }
    std::vector<int> rows;
    rows.reserve(active.size());
    for (int s : active) {
      const auto su = static_cast<std::size_t>(s);
      const int pos = reverse ? seg.lengths[su] - 1 - t : t;
      rows.push_back(seg.offsets[su] + pos);
      out_index[static_cast<std::size_t>(seg.offsets[su] + pos)] = emitted++;
    }
    Var gates = compute::add(compute::gather_rows(proj, rows), recurrent_(ctx, h));
    Var i = compute::sigmoid(compute::slice_cols(gates, 0, H));
    Var f = compute::sigmoid(compute::slice_cols(gates, H, H));
    Var cand = compute::tanh(compute::slice_cols(gates, 2 * H, H));
    Var o = compute::sigmoid(compute::slice_cols(gates, 3 * H, H));
    c = compute::add(compute::mul(f, c), compute::mul(i, cand));
    h = compute::mul(o, compute::tanh(c));
    steps.push_back(h);
  }
  return compute::gather_rows(compute::concat_rows(steps), out_index);
}

}  // namespace bgt::model
