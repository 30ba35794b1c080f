#include "bgt/model.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace bgt::model {

VariantTraits traits(TrainingVariant v) {
  VariantTraits t;
  switch (v) {
    case TrainingVariant::EnglishAE:
      t.decoder_l1 = true;
      break;
    case TrainingVariant::EnglishVAE:
      t.decoder_l1 = true;
      t.sampled = t.kl = true;
      break;
    case TrainingVariant::EnglishTrans:
      t.decoder_l2 = true;
      t.translation = true;
      break;
    case TrainingVariant::BilingualTrans:
      t.decoder_l1 = t.decoder_l2 = true;
      t.translation = true;
      break;
    case TrainingVariant::BGTNoLangVars:
      t.decoder_l1 = t.decoder_l2 = true;
      t.sampled = t.kl = true;
      t.bilingual = true;
      break;
    case TrainingVariant::BGTNoPrior:
      t.language_encoders = true;
      t.decoder_l1 = t.decoder_l2 = true;
      t.bilingual = t.aux_translation = t.translation = true;
      break;
    case TrainingVariant::BGT:
      t.language_encoders = true;
      t.decoder_l1 = t.decoder_l2 = true;
      t.sampled = t.kl = true;
      t.bilingual = t.aux_translation = t.translation = true;
      break;
  }
  return t;
}

namespace {

constexpr std::array<std::pair<TrainingVariant, const char*>, 7> kVariantNames{{
    {TrainingVariant::EnglishAE, "EnglishAE"},
    {TrainingVariant::EnglishVAE, "EnglishVAE"},
    {TrainingVariant::EnglishTrans, "EnglishTrans"},
    {TrainingVariant::BilingualTrans, "BilingualTrans"},
    {TrainingVariant::BGTNoLangVars, "BGTNoLangVars"},
    {TrainingVariant::BGTNoPrior, "BGTNoPrior"},
    {TrainingVariant::BGT, "BGT"},
}};

constexpr std::array<std::pair<Injection, const char*>, 4> kInjectionNames{{
    {Injection::Word, "word"},
    {Injection::Hidden, "hidden"},
    {Injection::Attention, "attention"},
    {Injection::Logit, "logit"},
}};

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

}  // namespace

std::string to_string(Arch a) { return a == Arch::Transformer ? "transformer" : "recurrent"; }

std::string to_string(TrainingVariant v) {
  for (const auto& [value, name] : kVariantNames) {
    if (value == v) return name;
  }
  return "?";
}

std::string to_string(EncoderRole r) {
  switch (r) {
    case EncoderRole::Semantic: return "semantic";
    case EncoderRole::LangL1: return "lang-l1";
    case EncoderRole::LangL2: return "lang-l2";
  }
  return "?";
}

std::string to_string(InjectionSet s) {
  std::string out;
  for (const auto& [value, name] : kInjectionNames) {
    if (!s.has(value)) continue;
    if (!out.empty()) out += '+';
    out += name;
  }
  return out;
}

Arch parse_arch(const std::string& s) {
  const std::string l = lower(s);
  if (l == "transformer") return Arch::Transformer;
  if (l == "recurrent" || l == "lstm") return Arch::Recurrent;
  throw ModelError("unknown architecture '" + s + "' (expected transformer or recurrent)");
}

TrainingVariant parse_variant(const std::string& s) {
  const std::string l = lower(s);
  for (const auto& [value, name] : kVariantNames) {
    if (lower(name) == l) return value;
  }
  std::string names;
  for (const auto& [value, name] : kVariantNames) names += std::string(names.empty() ? "" : ", ") + name;
  throw ModelError("unknown variant '" + s + "' (expected one of " + names + ")");
}

InjectionSet parse_injection(const std::string& s) {
  InjectionSet set;
  std::stringstream ss(s);
  std::string part;
  while (std::getline(ss, part, '+')) {
    std::stringstream inner(part);
    std::string item;
    while (std::getline(inner, item, ',')) {
      const std::string l = lower(item);
      bool found = false;
      for (const auto& [value, name] : kInjectionNames) {
        if (l == name) {
          set.add(value);
          found = true;
        }
      }
      if (!found) throw ModelError("unknown injection strategy '" + item + "'");
    }
  }
  return set;
}

double default_label_smoothing(TrainingVariant v) { return traits(v).translation || traits(v).bilingual ? 0.1 : 0.0; }

// ---- config ----

void ModelConfig::validate() const {
  auto fail = [](const std::string& m) { throw ModelError("invalid model config: " + m); };
  if (enc_layers < 1 || dec_layers < 1) fail("layer counts must be positive");
  if (model_dim < 1 || ffn_dim < 1) fail("dimensions must be positive");
  if (latent_dim < 1) fail("latent_dim must be positive");
  if (heads < 1 || model_dim % heads != 0) {
    fail("heads (" + std::to_string(heads) + ") must divide model_dim (" + std::to_string(model_dim) + ")");
  }
  if (injection.empty()) fail("at least one injection strategy is required");
  if (injection.has(Injection::Hidden) && arch != Arch::Recurrent) {
    fail("Hidden injection requires the recurrent architecture");
  }
  if (arch == Arch::Recurrent && model_dim % 2 != 0) fail("recurrent model_dim must be even");
  if (vocab_size <= corpus::kNumSpecials) fail("vocab_size must exceed the special tokens");
  if (max_len < 1) fail("max_len must be positive");
  if (!(dropout >= 0.0 && dropout < 1.0)) fail("dropout must lie in [0, 1)");
  if (!(label_smoothing >= 0.0 && label_smoothing < 1.0)) fail("label_smoothing must lie in [0, 1)");
}

int ModelConfig::decoder_latent_dim() const {
  return traits(variant).language_encoders ? 2 * latent_dim : latent_dim;
}

ModelConfig ModelConfig::paper_preset() {
  ModelConfig c;
  c.enc_layers = 5;
  c.dec_layers = 1;
  c.model_dim = 1024;
  c.ffn_dim = 4096;
  c.heads = 8;
  c.latent_dim = 1024;
  c.vocab_size = 20000;
  return c;
}

ModelConfig ModelConfig::desk_preset() { return ModelConfig{}; }

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"arch", to_string(c.arch)},
                     {"enc_layers", c.enc_layers},
                     {"dec_layers", c.dec_layers},
                     {"model_dim", c.model_dim},
                     {"ffn_dim", c.ffn_dim},
                     {"heads", c.heads},
                     {"latent_dim", c.latent_dim},
                     {"injection", to_string(c.injection)},
                     {"variant", to_string(c.variant)},
                     {"vocab_size", c.vocab_size},
                     {"max_len", c.max_len},
                     {"dropout", c.dropout},
                     {"label_smoothing", c.label_smoothing},
                     {"separate_aux_decoders", c.separate_aux_decoders},
                     {"init_seed", c.init_seed}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  c = ModelConfig{};
  c.arch = parse_arch(j.at("arch").get<std::string>());
  c.enc_layers = j.at("enc_layers").get<int>();
  c.dec_layers = j.at("dec_layers").get<int>();
  c.model_dim = j.at("model_dim").get<int>();
  c.ffn_dim = j.at("ffn_dim").get<int>();
  c.heads = j.at("heads").get<int>();
  c.latent_dim = j.at("latent_dim").get<int>();
  c.injection = parse_injection(j.at("injection").get<std::string>());
  c.variant = parse_variant(j.at("variant").get<std::string>());
  c.vocab_size = j.at("vocab_size").get<int>();
  c.max_len = j.at("max_len").get<int>();
  c.dropout = j.at("dropout").get<double>();
  c.label_smoothing = j.at("label_smoothing").get<double>();
  c.separate_aux_decoders = j.value("separate_aux_decoders", false);
  c.init_seed = j.at("init_seed").get<std::uint64_t>();
}

// ---- latents ----

Var sample_latent(Var mu, Var logvar, Var noise) {
  if (mu.rows() != noise.rows() || mu.cols() != noise.cols()) {
    throw ModelError("noise has shape " + compute::shape_string(noise.value()) + ", latent has shape " +
                     compute::shape_string(mu.value()));
  }
  return compute::add(mu, compute::mul(compute::exp(compute::scale(logvar, 0.5)), noise));
}

Eigen::VectorXd sample_latent(const GaussianPosterior& post, const Eigen::VectorXd& noise) {
  if (noise.size() != post.mu.size() || post.logvar.size() != post.mu.size()) {
    throw ModelError("noise has dimension " + std::to_string(noise.size()) + ", latent has dimension " +
                     std::to_string(post.mu.size()));
  }
  return post.mu.array() + (0.5 * post.logvar.array()).exp() * noise.array();
}

DecoderIo decoder_io(std::span<const std::vector<int>> sentences) {
  DecoderIo io;
  std::vector<std::vector<int>> inputs;
  inputs.reserve(sentences.size());
  for (const auto& s : sentences) {
    std::vector<int> in{corpus::kBos};
    in.insert(in.end(), s.begin(), s.end());
    inputs.push_back(std::move(in));
    io.targets.insert(io.targets.end(), s.begin(), s.end());
    io.targets.push_back(corpus::kEos);
  }
  io.inputs = PackedTokens::from_rows(inputs);
  return io;
}

std::vector<int> strip_padding(std::span<const int> tokens) {
  std::vector<int> out;
  for (int t : tokens) {
    if (t != corpus::kPad) out.push_back(t);
  }
  return out;
}

// ---- encoder ----

Encoder::Encoder(ParameterStore& store, const std::string& name, const ModelConfig& cfg, std::mt19937_64& rng)
    : arch_(cfg.arch) {
  const int d = cfg.model_dim;
  embed_ = Embedding(store, name + ".embed", cfg.vocab_size, d, cfg.arch == Arch::Transformer, rng);
  if (arch_ == Arch::Transformer) {
    for (int l = 0; l < cfg.enc_layers; ++l) {
      layers_.emplace_back(store, name + ".layer" + std::to_string(l), d, cfg.ffn_dim, cfg.heads, rng);
    }
    final_norm_ = LayerNormalization(store, name + ".final_norm", d);
  } else {
    for (int l = 0; l < cfg.enc_layers; ++l) {
      forward_.emplace_back(store, name + ".lstm" + std::to_string(l) + ".fwd", d, d / 2, rng);
      backward_.emplace_back(store, name + ".lstm" + std::to_string(l) + ".bwd", d, d / 2, rng);
    }
  }
  mu_ = Linear(store, name + ".mu", d, cfg.latent_dim, true, rng);
  logvar_ = Linear(store, name + ".logvar", d, cfg.latent_dim, true, rng);
}

PosteriorVars Encoder::operator()(ForwardContext& ctx, const PackedTokens& tokens) const {
  Var x = embed_(ctx, tokens);
  if (arch_ == Arch::Transformer) {
    for (const auto& layer : layers_) x = layer(ctx, x, tokens.seg);
    x = final_norm_(ctx, x);
  } else {
    for (std::size_t l = 0; l < forward_.size(); ++l) {
      Var f = forward_[l](ctx, x, tokens.seg, false, Var{});
      Var b = backward_[l](ctx, x, tokens.seg, true, Var{});
      x = ctx.drop(compute::concat_cols({f, b}));
    }
  }
  Var pooled = compute::segment_mean(x, tokens.seg);
  return {mu_(ctx, pooled), logvar_(ctx, pooled)};
}

// ---- decoder ----

Decoder::Decoder(ParameterStore& store, const std::string& name, const ModelConfig& cfg, int latent_dim,
                 std::mt19937_64& rng)
    : arch_(cfg.arch), injection_(cfg.injection) {
  const int d = cfg.model_dim;
  const bool attention = injection_.has(Injection::Attention);
  embed_ = Embedding(store, name + ".embed", cfg.vocab_size, d, cfg.arch == Arch::Transformer, rng);
  if (attention) memory_ = Linear(store, name + ".memory", latent_dim, d, true, rng);
  if (arch_ == Arch::Transformer) {
    if (injection_.has(Injection::Word)) word_ = Linear(store, name + ".word", latent_dim, d, false, rng);
    for (int l = 0; l < cfg.dec_layers; ++l) {
      layers_.emplace_back(store, name + ".layer" + std::to_string(l), d, cfg.ffn_dim, cfg.heads, attention, rng);
    }
    final_norm_ = LayerNormalization(store, name + ".final_norm", d);
  } else {
    for (int l = 0; l < cfg.dec_layers; ++l) {
      const int in = (l == 0 && injection_.has(Injection::Word)) ? d + latent_dim : d;
      lstm_.emplace_back(store, name + ".lstm" + std::to_string(l), in, d, rng);
      if (injection_.has(Injection::Hidden)) {
        hidden_.emplace_back(store, name + ".hidden" + std::to_string(l), latent_dim, d, true, rng);
      }
    }
    if (attention) {
      cross_norm_ = LayerNormalization(store, name + ".cross_norm", d);
      cross_ = MultiHeadAttention(store, name + ".cross", d, cfg.heads, rng);
    }
  }
  const int out_in = d + (injection_.has(Injection::Logit) ? latent_dim : 0);
  output_ = Linear(store, name + ".output", out_in, cfg.vocab_size, true, rng);
}

Var Decoder::operator()(ForwardContext& ctx, Var z, const PackedTokens& inputs) const {
  const Segments& seg = inputs.seg;
  if (static_cast<std::size_t>(z.rows()) != seg.count()) {
    throw ModelError("decoder received " + std::to_string(z.rows()) + " latent rows for " +
                     std::to_string(seg.count()) + " sequences");
  }
  Var x = embed_(ctx, inputs);
  Var z_tok;
  auto expanded = [&] {
    if (!z_tok.valid()) z_tok = compute::expand_segments(z, seg);
    return z_tok;
  };
  Var memory;
  const Segments mseg = Segments::ones(seg.count());
  if (injection_.has(Injection::Attention)) memory = memory_(ctx, z);

  if (arch_ == Arch::Transformer) {
    if (injection_.has(Injection::Word)) x = compute::add(x, word_(ctx, expanded()));
    for (const auto& layer : layers_) x = layer(ctx, x, seg, memory, mseg);
    x = final_norm_(ctx, x);
  } else {
    if (injection_.has(Injection::Word)) x = compute::concat_cols({x, expanded()});
    for (std::size_t l = 0; l < lstm_.size(); ++l) {
      Var h0;
      if (injection_.has(Injection::Hidden)) h0 = compute::tanh(hidden_[l](ctx, z));
      x = ctx.drop(lstm_[l](ctx, x, seg, false, h0));
    }
    if (injection_.has(Injection::Attention)) {
      x = compute::add(x, ctx.drop(cross_(ctx, cross_norm_(ctx, x), memory, seg, mseg, false)));
    }
  }
  if (injection_.has(Injection::Logit)) x = compute::concat_cols({x, expanded()});
  return output_(ctx, x);
}

// ---- model ----

BgtModel::BgtModel(const ModelConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  const VariantTraits t = traits(cfg_.variant);
  std::mt19937_64 rng(cfg_.init_seed);
  encoders_[0].emplace(store_, "enc.sem", cfg_, rng);
  if (t.language_encoders) {
    encoders_[1].emplace(store_, "enc.l1", cfg_, rng);
    encoders_[2].emplace(store_, "enc.l2", cfg_, rng);
  }
  const int zdim = cfg_.decoder_latent_dim();
  if (t.decoder_l1) decoders_[0].emplace(store_, "dec.l1", cfg_, zdim, rng);
  if (t.decoder_l2) decoders_[1].emplace(store_, "dec.l2", cfg_, zdim, rng);
  if (t.aux_translation && cfg_.separate_aux_decoders) {
    aux_decoders_[0].emplace(store_, "aux.l1", cfg_, zdim, rng);
    aux_decoders_[1].emplace(store_, "aux.l2", cfg_, zdim, rng);
  }
}

std::unique_ptr<BgtModel> BgtModel::clone() const {
  auto copy = std::make_unique<BgtModel>(cfg_);
  auto dst = copy->store_.all();
  auto src = store_.all();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i]->value = src[i]->value;
  return copy;
}

const Encoder& BgtModel::encoder(EncoderRole r) const {
  const auto& e = encoders_[static_cast<std::size_t>(r)];
  if (!e) throw ModelError("variant " + to_string(cfg_.variant) + " has no " + to_string(r) + " encoder");
  return *e;
}

PosteriorVars BgtModel::encode(ForwardContext& ctx, EncoderRole role, const PackedTokens& tokens) const {
  if (tokens.count() == 0) throw ModelError("cannot encode an empty batch");
  for (int len : tokens.seg.lengths) {
    if (len < 1) throw ModelError("cannot encode an empty sequence");
  }
  for (int id : tokens.ids) {
    if (id < 0 || id >= cfg_.vocab_size) {
      throw ModelError("token id " + std::to_string(id) + " is outside the vocabulary (size " +
                       std::to_string(cfg_.vocab_size) + ")");
    }
  }
  return encoder(role)(ctx, tokens);
}

Var BgtModel::decode(ForwardContext& ctx, Side side, Var z, const PackedTokens& inputs, bool aux) const {
  const auto i = static_cast<std::size_t>(side);
  const auto& dec = (aux && aux_decoders_[i]) ? aux_decoders_[i] : decoders_[i];
  if (!dec) {
    throw ModelError("variant " + to_string(cfg_.variant) + " has no " +
                     (side == Side::L1 ? std::string("L1") : std::string("L2")) + " decoder");
  }
  if (z.cols() != cfg_.decoder_latent_dim()) {
    throw ModelError("decoder expects a latent of width " + std::to_string(cfg_.decoder_latent_dim()) +
                     ", got " + std::to_string(z.cols()));
  }
  for (int id : inputs.ids) {
    if (id < 0 || id >= cfg_.vocab_size) {
      throw ModelError("prefix token id " + std::to_string(id) + " is outside the vocabulary (size " +
                       std::to_string(cfg_.vocab_size) + ")");
    }
  }
  return (*dec)(ctx, z, inputs);
}

GaussianPosterior BgtModel::encode_posterior(EncoderRole role, std::span<const int> tokens) const {
  std::vector<std::vector<int>> rows{strip_padding(tokens)};
  if (rows[0].empty()) throw ModelError("cannot encode an empty sequence");
  Graph g(false);
  ForwardContext ctx{g};
  PackedTokens packed = PackedTokens::from_rows(rows);
  PosteriorVars p = encode(ctx, role, packed);
  return {p.mu.value().row(0).transpose(), p.logvar.value().row(0).transpose()};
}

Matrix BgtModel::decode_logits(Side side, const Eigen::VectorXd& z_sem, const Eigen::VectorXd* z_lang,
                               std::span<const int> target_prefix) const {
  if (has_language_variables() && z_lang == nullptr) {
    throw ModelError("variant " + to_string(cfg_.variant) + " needs a language latent");
  }
  if (!has_language_variables() && z_lang != nullptr) {
    throw ModelError("variant " + to_string(cfg_.variant) + " has no language latents");
  }
  Matrix z(1, z_sem.size() + (z_lang ? z_lang->size() : 0));
  z.leftCols(z_sem.size()) = z_sem.transpose();
  if (z_lang) z.rightCols(z_lang->size()) = z_lang->transpose();
  std::vector<std::vector<int>> rows{{corpus::kBos}};
  for (int t : target_prefix) {
    if (t != corpus::kPad) rows[0].push_back(t);
  }
  Graph g(false);
  ForwardContext ctx{g};
  PackedTokens packed = PackedTokens::from_rows(rows);
  return decode(ctx, side, g.constant(std::move(z)), packed).value();
}

}  // namespace bgt::model
