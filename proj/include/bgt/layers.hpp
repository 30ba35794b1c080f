#pragma once

// Building blocks shared by the encoders and decoders. Every layer keeps raw
// pointers into a ParameterStore owned by the enclosing model.

#include "bgt/compute.hpp"

#include <random>
#include <span>
#include <string>
#include <vector>

namespace bgt::model {

using compute::Graph;
using compute::Matrix;
using compute::Parameter;
using compute::ParameterStore;
using compute::Segments;
using compute::Var;

struct ForwardContext {
  Graph& graph;
  std::mt19937_64* dropout_rng = nullptr;  // null: evaluation mode
  double dropout = 0.0;

  Var drop(Var x) const { return compute::dropout(x, dropout, dropout_rng); }
};

// Token ids of several sentences stacked end to end.
struct PackedTokens {
  std::vector<int> ids;
  Segments seg;

  static PackedTokens from_rows(std::span<const std::vector<int>> rows);
  std::size_t count() const { return seg.count(); }
};

Matrix xavier_uniform(int rows, int cols, std::mt19937_64& rng);
Matrix sinusoid_positions(int length, int dim);

class Linear {
 public:
  Linear() = default;
  Linear(ParameterStore& store, const std::string& name, int in, int out, bool bias,
         std::mt19937_64& rng);
  Var operator()(ForwardContext& ctx, Var x) const;
  bool defined() const { return weight_ != nullptr; }
  Parameter* weight() const { return weight_; }
  Parameter* bias() const { return bias_; }

 private:
  Parameter* weight_ = nullptr;
  Parameter* bias_ = nullptr;
};

class LayerNormalization {
 public:
  LayerNormalization() = default;
  LayerNormalization(ParameterStore& store, const std::string& name, int dim);
  Var operator()(ForwardContext& ctx, Var x) const;

 private:
  Parameter* gamma_ = nullptr;
  Parameter* beta_ = nullptr;
};

class Embedding {
 public:
  Embedding() = default;
  Embedding(ParameterStore& store, const std::string& name, int vocab, int dim, bool positional,
            std::mt19937_64& rng);
  // Scaled lookup plus (optionally) sinusoidal positions restarting per sequence.
  Var operator()(ForwardContext& ctx, const PackedTokens& tokens) const;
  int vocab() const { return vocab_; }

 private:
  Parameter* table_ = nullptr;
  int vocab_ = 0;
  int dim_ = 0;
  bool positional_ = false;
};

class MultiHeadAttention {
 public:
  MultiHeadAttention() = default;
  MultiHeadAttention(ParameterStore& store, const std::string& name, int dim, int heads,
                     std::mt19937_64& rng);
  Var operator()(ForwardContext& ctx, Var query, Var memory, const Segments& qseg,
                 const Segments& kseg, bool causal) const;

 private:
  Linear q_, k_, v_, o_;
  int heads_ = 1;
};

class FeedForward {
 public:
  FeedForward() = default;
  FeedForward(ParameterStore& store, const std::string& name, int dim, int hidden,
              std::mt19937_64& rng);
  Var operator()(ForwardContext& ctx, Var x) const;

 private:
  Linear in_, out_;
};

// Pre-norm self-attention block.
class EncoderLayer {
 public:
  EncoderLayer(ParameterStore& store, const std::string& name, int dim, int ffn, int heads,
               std::mt19937_64& rng);
  Var operator()(ForwardContext& ctx, Var x, const Segments& seg) const;

 private:
  LayerNormalization ln_attn_, ln_ff_;
  MultiHeadAttention attn_;
  FeedForward ff_;
};

// Pre-norm causal block with an optional cross-attention sublayer.
class DecoderLayer {
 public:
  DecoderLayer(ParameterStore& store, const std::string& name, int dim, int ffn, int heads,
               bool cross, std::mt19937_64& rng);
  Var operator()(ForwardContext& ctx, Var x, const Segments& seg, Var memory,
                 const Segments& mseg) const;

 private:
  LayerNormalization ln_self_, ln_cross_, ln_ff_;
  MultiHeadAttention self_, cross_;
  FeedForward ff_;
  bool has_cross_;
};

// Single-direction LSTM over packed sequences. Gate order: input, forget, cell, output.
class Lstm {
 public:
  Lstm() = default;
  Lstm(ParameterStore& store, const std::string& name, int in, int hidden, std::mt19937_64& rng);
  // Returns per-position hidden states in packed layout. h0 is [count x hidden]
  // or empty (zeros). Cell states always start at zero.
  Var operator()(ForwardContext& ctx, Var x, const Segments& seg, bool reverse, Var h0) const;
  int hidden() const { return hidden_; }

 private:
  Linear input_, recurrent_;
  int hidden_ = 0;
};

}  // namespace bgt::model
