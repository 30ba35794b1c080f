#pragma once

#include "bgt/model.hpp"

#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace bgt::inference {

using model::BgtModel;
using model::EncoderRole;
using model::Side;

class InferenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class EmbeddingSource { Semantic, LangL1, LangL2, RandomBaseline };

std::string to_string(EmbeddingSource s);

struct SentenceEmbedding {
  Eigen::VectorXd vector;
  EmbeddingSource source = EmbeddingSource::Semantic;
};

// Posterior mean of the chosen encoder. `random_baseline` only changes the tag
// and is meant for untrained models.
SentenceEmbedding embed(const BgtModel& model, std::span<const int> tokens,
                        EncoderRole role = EncoderRole::Semantic, bool random_baseline = false);

// Same as embed for every sentence, packed into batches of about max_tokens.
std::vector<SentenceEmbedding> embed_all(const BgtModel& model, std::span<const std::vector<int>> sentences,
                                         EncoderRole role = EncoderRole::Semantic, bool random_baseline = false,
                                         int max_tokens = 4000);

double cosine(const Eigen::VectorXd& u, const Eigen::VectorXd& v);

// Decoding starts from BOS and stops at EOS (not returned) or after max_len tokens.
// PAD and BOS are never emitted.
// z_lang must be given exactly when the model has language variables.
std::vector<int> greedy_decode(const BgtModel& model, const Eigen::VectorXd& z_sem, const Eigen::VectorXd* z_lang,
                               Side side, int max_len);
// Hypotheses are ranked by summed log-probability; beam 1 is greedy.
std::vector<int> beam_decode(const BgtModel& model, const Eigen::VectorXd& z_sem, const Eigen::VectorXd* z_lang,
                             Side side, int max_len, int beam);

// z_sem from the semantic encoder on the source, z_lang from the language
// encoder of `side` on the style sentence, decoded into `side`.
std::vector<int> style_transfer(const BgtModel& model, std::span<const int> source, std::span<const int> style,
                                Side side, int max_len, int beam = 1);

// Decodes the semantic mean into `side`. Models with language variables use
// the prior mean (zero) for the target language latent.
std::vector<int> translate(const BgtModel& model, std::span<const int> source, Side side, int max_len,
                           int beam = 1);

// One line per sentence: id, tab, space-separated components.
void write_embeddings(std::ostream& os, std::span<const SentenceEmbedding> embeddings,
                      std::span<const std::string> ids = {});
std::vector<std::pair<std::string, Eigen::VectorXd>> read_embeddings(std::istream& is);

}  // namespace bgt::inference
