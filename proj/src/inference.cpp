#include "bgt/inference.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>

namespace bgt::inference {

using compute::Graph;
using compute::Index;
using compute::Matrix;
using model::ForwardContext;
using model::PackedTokens;

std::string to_string(EmbeddingSource s) {
  switch (s) {
    case EmbeddingSource::Semantic: return "semantic";
    case EmbeddingSource::LangL1: return "lang-L1";
    case EmbeddingSource::LangL2: return "lang-L2";
    case EmbeddingSource::RandomBaseline: return "random-baseline";
  }
  return "?";
}

namespace {

EmbeddingSource source_of(EncoderRole role, bool random_baseline) {
  if (random_baseline) return EmbeddingSource::RandomBaseline;
  switch (role) {
    case EncoderRole::Semantic: return EmbeddingSource::Semantic;
    case EncoderRole::LangL1: return EmbeddingSource::LangL1;
    case EncoderRole::LangL2: return EmbeddingSource::LangL2;
  }
  return EmbeddingSource::Semantic;
}

void check_encoder(const BgtModel& model, EncoderRole role) {
  if (!model.has_encoder(role)) {
    throw InferenceError("variant " + model::to_string(model.config().variant) + " has no " +
                         model::to_string(role) + " encoder");
  }
}

Matrix latent_row(const BgtModel& model, const Eigen::VectorXd& z_sem, const Eigen::VectorXd* z_lang) {
  const int k = model.config().latent_dim;
  if (z_sem.size() != k) throw InferenceError("semantic latent must have dimension " + std::to_string(k));
  if (model.has_language_variables()) {
    if (z_lang == nullptr) {
      throw InferenceError("variant " + model::to_string(model.config().variant) + " needs a language latent");
    }
    if (z_lang->size() != k) throw InferenceError("language latent must have dimension " + std::to_string(k));
  } else if (z_lang != nullptr) {
    throw InferenceError("variant " + model::to_string(model.config().variant) + " has no language latents");
  }
  Matrix z(1, z_sem.size() + (z_lang ? z_lang->size() : 0));
  z.leftCols(z_sem.size()) = z_sem.transpose();
  if (z_lang) z.rightCols(z_lang->size()) = z_lang->transpose();
  return z;
}

// Next-token logits after each prefix (BOS is prepended), one row per prefix.
Matrix next_logits(const BgtModel& model, Side side, const Matrix& z, std::span<const std::vector<int>> prefixes) {
  std::vector<std::vector<int>> rows;
  rows.reserve(prefixes.size());
  for (const auto& p : prefixes) {
    std::vector<int> r{corpus::kBos};
    r.insert(r.end(), p.begin(), p.end());
    rows.push_back(std::move(r));
  }
  Graph g(false);
  ForwardContext ctx{g};
  PackedTokens packed = PackedTokens::from_rows(rows);
  Matrix zs = z.replicate(static_cast<Index>(rows.size()), 1);
  Matrix all = model.decode(ctx, side, g.constant(std::move(zs)), packed).value();
  Matrix out(static_cast<Index>(rows.size()), all.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.row(static_cast<Index>(i)) = all.row(packed.seg.offsets[i] + packed.seg.lengths[i] - 1);
  }
  // PAD and BOS are never targets.
  out.col(corpus::kPad).setConstant(-INFINITY);
  out.col(corpus::kBos).setConstant(-INFINITY);
  return out;
}

void check_decoding(const BgtModel& model, Side side, int max_len) {
  if (max_len < 1) throw InferenceError("max_len must be at least 1");
  if (!model.has_decoder(side)) {
    throw InferenceError("variant " + model::to_string(model.config().variant) + " has no decoder for " +
                         (side == Side::L1 ? std::string("L1") : std::string("L2")));
  }
}

}  // namespace

SentenceEmbedding embed(const BgtModel& model, std::span<const int> tokens, EncoderRole role,
                        bool random_baseline) {
  check_encoder(model, role);
  if (model::strip_padding(tokens).empty()) throw InferenceError("cannot embed an empty sentence");
  return {model.encode_posterior(role, tokens).mu, source_of(role, random_baseline)};
}

std::vector<SentenceEmbedding> embed_all(const BgtModel& model, std::span<const std::vector<int>> sentences,
                                         EncoderRole role, bool random_baseline, int max_tokens) {
  check_encoder(model, role);
  std::vector<SentenceEmbedding> out;
  out.reserve(sentences.size());
  std::size_t i = 0;
  while (i < sentences.size()) {
    std::vector<std::vector<int>> rows;
    int tokens = 0;
    while (i < sentences.size() && (rows.empty() || tokens + static_cast<int>(sentences[i].size()) <= max_tokens)) {
      rows.push_back(model::strip_padding(sentences[i]));
      if (rows.back().empty()) throw InferenceError("cannot embed an empty sentence (index " + std::to_string(i) + ")");
      tokens += static_cast<int>(rows.back().size());
      ++i;
    }
    Graph g(false);
    ForwardContext ctx{g};
    auto post = model.encode(ctx, role, PackedTokens::from_rows(rows));
    const Matrix& mu = post.mu.value();
    for (Index r = 0; r < mu.rows(); ++r) out.push_back({mu.row(r).transpose(), source_of(role, random_baseline)});
  }
  return out;
}

double cosine(const Eigen::VectorXd& u, const Eigen::VectorXd& v) {
  if (u.size() != v.size()) throw InferenceError("cosine of vectors with different dimensions");
  const double nu = u.norm(), nv = v.norm();
  if (nu == 0.0 || nv == 0.0) throw InferenceError("cosine of a zero vector");
  return std::clamp(u.dot(v) / (nu * nv), -1.0, 1.0);
}

std::vector<int> greedy_decode(const BgtModel& model, const Eigen::VectorXd& z_sem, const Eigen::VectorXd* z_lang,
                               Side side, int max_len) {
  check_decoding(model, side, max_len);
  const Matrix z = latent_row(model, z_sem, z_lang);
  std::vector<std::vector<int>> prefix(1);
  while (static_cast<int>(prefix[0].size()) < max_len) {
    Index best = 0;
    next_logits(model, side, z, prefix).row(0).maxCoeff(&best);
    if (best == corpus::kEos) break;
    prefix[0].push_back(static_cast<int>(best));
  }
  return prefix[0];
}

std::vector<int> beam_decode(const BgtModel& model, const Eigen::VectorXd& z_sem, const Eigen::VectorXd* z_lang,
                             Side side, int max_len, int beam) {
  check_decoding(model, side, max_len);
  if (beam < 1) throw InferenceError("beam must be at least 1");
  const Matrix z = latent_row(model, z_sem, z_lang);

  struct Hyp {
    std::vector<int> tokens;
    double score = 0.0;
  };
  std::vector<Hyp> live{Hyp{}};
  std::vector<Hyp> finished;

  for (int step = 0; step < max_len && !live.empty(); ++step) {
    std::vector<std::vector<int>> prefixes;
    for (const auto& h : live) prefixes.push_back(h.tokens);
    const Matrix logits = next_logits(model, side, z, prefixes);
    const Index vocab = logits.cols();
    const int width = static_cast<int>(std::min<Index>(beam, vocab));

    struct Cand {
      std::size_t parent;
      int token;
      double score;
    };
    std::vector<Cand> cands;
    std::vector<int> order(static_cast<std::size_t>(vocab));
    for (std::size_t h = 0; h < live.size(); ++h) {
      const auto row = logits.row(static_cast<Index>(h));
      const double mx = row.maxCoeff();
      const double lse = mx + std::log((row.array() - mx).exp().sum());
      std::iota(order.begin(), order.end(), 0);
      std::partial_sort(order.begin(), order.begin() + width, order.end(), [&](int a, int b) {
        return row(a) > row(b) || (row(a) == row(b) && a < b);
      });
      for (int r = 0; r < width; ++r) {
        const int t = order[static_cast<std::size_t>(r)];
        cands.push_back({h, t, live[h].score + (row(t) - lse)});
      }
    }
    std::stable_sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) { return a.score > b.score; });

    std::vector<Hyp> next;
    const std::size_t keep = std::min(cands.size(), static_cast<std::size_t>(beam));
    for (std::size_t i = 0; i < keep; ++i) {
      const Cand& c = cands[i];
      Hyp h{live[c.parent].tokens, c.score};
      if (c.token == corpus::kEos) {
        finished.push_back(std::move(h));
      } else {
        h.tokens.push_back(c.token);
        next.push_back(std::move(h));
      }
    }
    live = std::move(next);
    if (step + 1 == max_len) {
      for (auto& h : live) finished.push_back(std::move(h));
      live.clear();
    }
    // Scores only fall, so live hypotheses cannot overtake a full set of finished ones.
    if (static_cast<int>(finished.size()) >= beam) {
      const double best_live = live.empty() ? -INFINITY : live.front().score;
      std::vector<double> s;
      for (const auto& f : finished) s.push_back(f.score);
      std::nth_element(s.begin(), s.begin() + (beam - 1), s.end(), std::greater<>());
      const double worst_kept = s[static_cast<std::size_t>(beam) - 1];
      if (best_live <= worst_kept) break;
    }
  }
  auto best = std::max_element(finished.begin(), finished.end(),
                               [](const Hyp& a, const Hyp& b) { return a.score < b.score; });
  return best->tokens;
}

std::vector<int> style_transfer(const BgtModel& model, std::span<const int> source, std::span<const int> style,
                                Side side, int max_len, int beam) {
  if (!model.has_language_variables()) {
    throw InferenceError("style transfer needs language-specific encoders, which only the BGT and BGTNoPrior "
                         "variants have (model is " + model::to_string(model.config().variant) + ")");
  }
  const EncoderRole lang = side == Side::L1 ? EncoderRole::LangL1 : EncoderRole::LangL2;
  const Eigen::VectorXd z_sem = embed(model, source, EncoderRole::Semantic).vector;
  const Eigen::VectorXd z_lang = embed(model, style, lang).vector;
  return beam_decode(model, z_sem, &z_lang, side, max_len, beam);
}

std::vector<int> translate(const BgtModel& model, std::span<const int> source, Side side, int max_len, int beam) {
  const Eigen::VectorXd z_sem = embed(model, source, EncoderRole::Semantic).vector;
  if (model.has_language_variables()) {
    const Eigen::VectorXd prior = Eigen::VectorXd::Zero(z_sem.size());
    return beam_decode(model, z_sem, &prior, side, max_len, beam);
  }
  return beam_decode(model, z_sem, nullptr, side, max_len, beam);
}

void write_embeddings(std::ostream& os, std::span<const SentenceEmbedding> embeddings,
                      std::span<const std::string> ids) {
  if (!ids.empty() && ids.size() != embeddings.size()) {
    throw InferenceError("got " + std::to_string(ids.size()) + " ids for " + std::to_string(embeddings.size()) +
                         " embeddings");
  }
  char buf[32];
  for (std::size_t i = 0; i < embeddings.size(); ++i) {
    os << (ids.empty() ? std::to_string(i) : ids[i]) << '\t';
    const auto& v = embeddings[i].vector;
    for (Index c = 0; c < v.size(); ++c) {
      auto res = std::to_chars(buf, buf + sizeof buf, v(c));
      if (c > 0) os << ' ';
      os.write(buf, res.ptr - buf);
    }
    os << '\n';
  }
}

std::vector<std::pair<std::string, Eigen::VectorXd>> read_embeddings(std::istream& is) {
  std::vector<std::pair<std::string, Eigen::VectorXd>> out;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw InferenceError("embedding line " + std::to_string(lineno) + " has no tab");
    std::vector<double> vals;
    const char* p = line.data() + tab + 1;
    const char* end = line.data() + line.size();
    while (p < end) {
      while (p < end && *p == ' ') ++p;
      if (p == end) break;
      double d = 0.0;
      auto res = std::from_chars(p, end, d);
      if (res.ec != std::errc()) {
        throw InferenceError("embedding line " + std::to_string(lineno) + " has a malformed number");
      }
      vals.push_back(d);
      p = res.ptr;
    }
    out.emplace_back(line.substr(0, tab), Eigen::Map<const Eigen::VectorXd>(vals.data(), static_cast<Index>(vals.size())));
  }
  return out;
}

}  // namespace bgt::inference
