#pragma once

#include "bgt/corpus.hpp"
#include "bgt/layers.hpp"

#include <nlohmann/json.hpp>

#include <array>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace bgt::model {

using corpus::Side;

class ModelError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Arch { Transformer, Recurrent };

enum class Injection : unsigned { Word = 1, Hidden = 2, Attention = 4, Logit = 8 };

struct InjectionSet {
  unsigned bits = 0;

  bool has(Injection i) const { return (bits & static_cast<unsigned>(i)) != 0; }
  InjectionSet& add(Injection i) {
    bits |= static_cast<unsigned>(i);
    return *this;
  }
  bool empty() const { return bits == 0; }
  bool operator==(const InjectionSet&) const = default;
};

enum class TrainingVariant {
  EnglishAE,
  EnglishVAE,
  EnglishTrans,
  BilingualTrans,
  BGTNoLangVars,
  BGTNoPrior,
  BGT
};

enum class EncoderRole { Semantic = 0, LangL1 = 1, LangL2 = 2 };

// What a variant instantiates and how it treats its latents.
struct VariantTraits {
  bool language_encoders = false;
  bool decoder_l1 = false;
  bool decoder_l2 = false;
  bool sampled = false;      // reparameterized samples instead of posterior means
  bool kl = false;
  bool bilingual = false;    // alternates the semantic input side by pair parity
  bool aux_translation = false;
  bool translation = false;  // trained to produce the other language
};

VariantTraits traits(TrainingVariant v);

std::string to_string(Arch a);
std::string to_string(TrainingVariant v);
std::string to_string(EncoderRole r);
std::string to_string(InjectionSet s);  // e.g. "attention+logit"
Arch parse_arch(const std::string& s);
TrainingVariant parse_variant(const std::string& s);
InjectionSet parse_injection(const std::string& s);

struct ModelConfig {
  Arch arch = Arch::Transformer;
  int enc_layers = 2;
  int dec_layers = 1;
  int model_dim = 64;
  int ffn_dim = 256;
  int heads = 4;
  int latent_dim = 64;
  InjectionSet injection = InjectionSet{}.add(Injection::Attention).add(Injection::Logit);
  TrainingVariant variant = TrainingVariant::BGT;
  int vocab_size = 1000;
  int max_len = 100;
  double dropout = 0.1;
  double label_smoothing = 0.1;
  bool separate_aux_decoders = false;
  std::uint64_t init_seed = 1;

  void validate() const;
  int decoder_latent_dim() const;

  static ModelConfig paper_preset();
  static ModelConfig desk_preset();
  bool operator==(const ModelConfig&) const = default;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

// Label smoothing applies to translation-trained variants only.
double default_label_smoothing(TrainingVariant v);

struct GaussianPosterior {
  Eigen::VectorXd mu;
  Eigen::VectorXd logvar;
};

// Batched posterior parameters, one row per sequence.
struct PosteriorVars {
  Var mu;
  Var logvar;
};

// mu + exp(0.5 logvar) * noise
Var sample_latent(Var mu, Var logvar, Var noise);
Eigen::VectorXd sample_latent(const GaussianPosterior& post, const Eigen::VectorXd& noise);

// Decoder inputs (BOS + tokens) and targets (tokens + EOS).
struct DecoderIo {
  PackedTokens inputs;
  std::vector<int> targets;
};
DecoderIo decoder_io(std::span<const std::vector<int>> sentences);

class Encoder {
 public:
  Encoder(ParameterStore& store, const std::string& name, const ModelConfig& cfg, std::mt19937_64& rng);
  PosteriorVars operator()(ForwardContext& ctx, const PackedTokens& tokens) const;

 private:
  Arch arch_;
  Embedding embed_;
  std::vector<EncoderLayer> layers_;
  LayerNormalization final_norm_;
  std::vector<Lstm> forward_, backward_;
  Linear mu_, logvar_;
};

class Decoder {
 public:
  Decoder(ParameterStore& store, const std::string& name, const ModelConfig& cfg, int latent_dim,
          std::mt19937_64& rng);
  // Teacher-forced logits, one row per input position. z has one row per sequence.
  Var operator()(ForwardContext& ctx, Var z, const PackedTokens& inputs) const;

 private:
  Arch arch_;
  InjectionSet injection_;
  Embedding embed_;
  Linear word_, memory_;
  std::vector<DecoderLayer> layers_;
  LayerNormalization final_norm_;
  std::vector<Lstm> lstm_;
  std::vector<Linear> hidden_;
  LayerNormalization cross_norm_;
  MultiHeadAttention cross_;
  Linear output_;
};

class BgtModel {
 public:
  explicit BgtModel(const ModelConfig& cfg);
  BgtModel(const BgtModel&) = delete;
  BgtModel& operator=(const BgtModel&) = delete;

  std::unique_ptr<BgtModel> clone() const;

  const ModelConfig& config() const { return cfg_; }
  ParameterStore& parameters() { return store_; }
  const ParameterStore& parameters() const { return store_; }
  std::size_t parameter_count() const { return store_.scalar_count(); }

  bool has_encoder(EncoderRole r) const { return encoders_[static_cast<std::size_t>(r)].has_value(); }
  bool has_decoder(Side s) const { return decoders_[static_cast<std::size_t>(s)].has_value(); }
  bool has_language_variables() const { return traits(cfg_.variant).language_encoders; }

  PosteriorVars encode(ForwardContext& ctx, EncoderRole role, const PackedTokens& tokens) const;
  // z = [z_sem; z_lang] (or z_sem alone without language variables).
  Var decode(ForwardContext& ctx, Side side, Var z, const PackedTokens& inputs, bool aux = false) const;

  // Evaluation-mode single-sentence helpers. PAD ids are stripped first.
  GaussianPosterior encode_posterior(EncoderRole role, std::span<const int> tokens) const;
  Matrix decode_logits(Side side, const Eigen::VectorXd& z_sem, const Eigen::VectorXd* z_lang,
                       std::span<const int> target_prefix) const;

 private:
  const Encoder& encoder(EncoderRole r) const;

  ModelConfig cfg_;
  ParameterStore store_;
  std::array<std::optional<Encoder>, 3> encoders_;
  std::array<std::optional<Decoder>, 2> decoders_;
  std::array<std::optional<Decoder>, 2> aux_decoders_;
};

std::vector<int> strip_padding(std::span<const int> tokens);

}  // namespace bgt::model
