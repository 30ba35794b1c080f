#include "bgt/objective.hpp"

#include <cmath>

namespace bgt::objective {

using corpus::Side;
using model::EncoderRole;
using model::ForwardContext;
using model::PackedTokens;

double gaussian_kl(const GaussianPosterior& post) {
  if (post.mu.size() != post.logvar.size()) throw ObjectiveError("posterior mu and logvar differ in size");
  if (!post.mu.allFinite() || !post.logvar.allFinite()) throw ObjectiveError("non-finite posterior");
  const auto& lv = post.logvar.array();
  return 0.5 * (post.mu.array().square() + lv.exp() - lv - 1.0).sum();
}

Var gaussian_kl(Var mu, Var logvar) {
  const double count = static_cast<double>(mu.rows() * mu.cols());
  Var s = compute::add(compute::sum(compute::mul(mu, mu)),
                       compute::sub(compute::sum(compute::exp(logvar)), compute::sum(logvar)));
  return compute::scale(compute::add_scalar(s, -count), 0.5);
}

namespace {

std::vector<int> non_pad_rows(std::span<const int> targets) {
  std::vector<int> rows;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    if (targets[i] != corpus::kPad) rows.push_back(static_cast<int>(i));
  }
  if (rows.empty()) throw ObjectiveError("every target position is padding");
  return rows;
}

}  // namespace

Var label_smoothed_ce(Var logits, std::span<const int> targets, double eps) {
  if (static_cast<std::size_t>(logits.rows()) != targets.size()) {
    throw ObjectiveError("logits have " + std::to_string(logits.rows()) + " rows for " +
                         std::to_string(targets.size()) + " targets");
  }
  const auto rows = non_pad_rows(targets);
  std::vector<int> gold;
  for (int r : rows) {
    const int t = targets[static_cast<std::size_t>(r)];
    if (t < 0 || t >= logits.cols()) throw ObjectiveError("target id " + std::to_string(t) + " outside vocabulary");
    gold.push_back(t);
  }
  Var lsm = compute::log_softmax(rows.size() == targets.size() ? logits : compute::gather_rows(logits, rows));
  Var nll = compute::scale(compute::sum(compute::pick(lsm, gold)), -(1.0 - eps));
  if (eps > 0.0) {
    nll = compute::add(nll, compute::scale(compute::sum(lsm), -eps / static_cast<double>(logits.cols())));
  }
  return compute::scale(nll, 1.0 / static_cast<double>(rows.size()));
}

double label_smoothed_ce(const Matrix& logits, std::span<const int> targets, double eps) {
  Graph g(false);
  return label_smoothed_ce(g.constant(logits), targets, eps).scalar();
}

double kl_weight(std::int64_t step, const AnnealSchedule& schedule) {
  if (step < 0) throw ObjectiveError("negative step");
  if (schedule.total_steps <= 0) return 1.0;
  return std::min(1.0, static_cast<double>(step) / static_cast<double>(schedule.total_steps));
}

LatentNoise LatentNoise::zeros(int pairs, int k) {
  return {Matrix::Zero(pairs, k), Matrix::Zero(pairs, k), Matrix::Zero(pairs, k)};
}

LatentNoise LatentNoise::draw(int pairs, int k, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  LatentNoise out = zeros(pairs, k);
  for (Matrix* m : {&out.sem, &out.l1, &out.l2}) {
    for (compute::Index i = 0; i < m->size(); ++i) m->data()[i] = n(rng);
  }
  return out;
}

namespace {

std::vector<std::vector<int>> rows_of(const corpus::PaddedIds& p) {
  std::vector<std::vector<int>> out;
  out.reserve(static_cast<std::size_t>(p.rows));
  for (int r = 0; r < p.rows; ++r) {
    auto row = p.row(r);
    out.emplace_back(row.begin(), row.end());
  }
  return out;
}

int target_tokens(const std::vector<std::vector<int>>& rows) {
  int n = 0;
  for (const auto& r : rows) n += static_cast<int>(r.size()) + 1;  // + EOS
  return n;
}

void check_noise(const Matrix& m, std::size_t pairs, int k, const char* which) {
  if (static_cast<std::size_t>(m.rows()) != pairs || m.cols() != k) {
    throw ObjectiveError(std::string("noise for ") + which + " has shape " + compute::shape_string(m) +
                         ", expected [" + std::to_string(pairs) + "x" + std::to_string(k) + "]");
  }
}

}  // namespace

ElboResult elbo_loss(Graph& g, const BgtModel& model, TrainingVariant variant, const corpus::TokenBatch& batch,
                     const LatentNoise& noise, double weight, std::mt19937_64* dropout_rng) {
  const auto& cfg = model.config();
  const auto t = model::traits(variant);
  const auto have = model::traits(cfg.variant);
  if (t.language_encoders != have.language_encoders || (t.decoder_l1 && !model.has_decoder(Side::L1)) ||
      (t.decoder_l2 && !model.has_decoder(Side::L2))) {
    throw ObjectiveError("variant " + model::to_string(variant) + " is inconsistent with a model built for " +
                         model::to_string(cfg.variant));
  }
  if (batch.size() == 0) throw ObjectiveError("empty batch");
  if (!(weight >= 0.0 && weight <= 1.0)) throw ObjectiveError("kl weight must lie in [0, 1]");

  const std::size_t n = batch.size();
  const int k = cfg.latent_dim;
  const double eps = cfg.label_smoothing;
  ForwardContext ctx{g, dropout_rng, dropout_rng ? cfg.dropout : 0.0};

  const auto x1 = rows_of(batch.src);
  const auto x2 = rows_of(batch.tgt);
  const auto p1 = PackedTokens::from_rows(x1);
  const auto p2 = PackedTokens::from_rows(x2);

  auto latent = [&](const model::PosteriorVars& post, const Matrix& eps_noise, const char* which) {
    if (!t.sampled) return post.mu;
    check_noise(eps_noise, n, k, which);
    return model::sample_latent(post.mu, post.logvar, g.constant(eps_noise));
  };
  auto recon = [&](Side side, Var z, const std::vector<std::vector<int>>& sentences, bool aux) {
    auto io = model::decoder_io(sentences);
    return label_smoothed_ce(model.decode(ctx, side, z, io.inputs, aux), io.targets, eps);
  };

  ElboTerms terms;
  terms.kl_weight = t.kl ? weight : 0.0;
  Var zero = g.constant(Matrix::Zero(1, 1));
  Var recon_l1 = zero, recon_l2 = zero, kl_sem = zero, kl_l1 = zero, kl_l2 = zero, aux = zero;
  const int t1 = target_tokens(x1);
  const int t2 = target_tokens(x2);

  switch (variant) {
    case TrainingVariant::EnglishAE:
    case TrainingVariant::EnglishVAE: {
      auto post = model.encode(ctx, EncoderRole::Semantic, p1);
      recon_l1 = recon(Side::L1, latent(post, noise.sem, "z_sem"), x1, false);
      if (t.kl) kl_sem = compute::scale(gaussian_kl(post.mu, post.logvar), 1.0 / t1);
      break;
    }
    case TrainingVariant::EnglishTrans: {
      auto post = model.encode(ctx, EncoderRole::Semantic, p1);
      recon_l2 = recon(Side::L2, post.mu, x2, false);
      break;
    }
    case TrainingVariant::BilingualTrans: {
      std::vector<std::vector<int>> both = x1;
      both.insert(both.end(), x2.begin(), x2.end());
      auto post = model.encode(ctx, EncoderRole::Semantic, PackedTokens::from_rows(both));
      const auto ni = static_cast<compute::Index>(n);
      recon_l2 = recon(Side::L2, compute::slice_rows(post.mu, 0, ni), x2, false);
      recon_l1 = recon(Side::L1, compute::slice_rows(post.mu, ni, ni), x1, false);
      break;
    }
    case TrainingVariant::BGTNoLangVars:
    case TrainingVariant::BGTNoPrior:
    case TrainingVariant::BGT: {
      // The semantic encoder reads the parity-designated side of each pair. With
      // the auxiliary translation loss it also needs the other side's mean, so
      // both sides are encoded and rows selected.
      std::vector<int> pick_rows(n);
      model::PosteriorVars sem_all;
      if (t.aux_translation) {
        std::vector<std::vector<int>> both = x1;
        both.insert(both.end(), x2.begin(), x2.end());
        sem_all = model.encode(ctx, EncoderRole::Semantic, PackedTokens::from_rows(both));
        for (std::size_t i = 0; i < n; ++i) {
          pick_rows[i] = static_cast<int>(batch.semantic_side[i] == Side::L1 ? i : n + i);
        }
      } else {
        std::vector<std::vector<int>> sem_in;
        for (std::size_t i = 0; i < n; ++i) sem_in.push_back(batch.semantic_side[i] == Side::L1 ? x1[i] : x2[i]);
        sem_all = model.encode(ctx, EncoderRole::Semantic, PackedTokens::from_rows(sem_in));
        for (std::size_t i = 0; i < n; ++i) pick_rows[i] = static_cast<int>(i);
      }
      model::PosteriorVars sem{compute::gather_rows(sem_all.mu, pick_rows),
                               compute::gather_rows(sem_all.logvar, pick_rows)};
      Var z_sem = latent(sem, noise.sem, "z_sem");
      const double t_ref = 0.5 * (t1 + t2);
      if (t.kl) kl_sem = compute::scale(gaussian_kl(sem.mu, sem.logvar), 1.0 / t_ref);

      if (!t.language_encoders) {
        recon_l1 = recon(Side::L1, z_sem, x1, false);
        recon_l2 = recon(Side::L2, z_sem, x2, false);
        break;
      }
      auto post1 = model.encode(ctx, EncoderRole::LangL1, p1);
      auto post2 = model.encode(ctx, EncoderRole::LangL2, p2);
      Var z1 = latent(post1, noise.l1, "z_l1");
      Var z2 = latent(post2, noise.l2, "z_l2");
      recon_l1 = recon(Side::L1, compute::concat_cols({z_sem, z1}), x1, false);
      recon_l2 = recon(Side::L2, compute::concat_cols({z_sem, z2}), x2, false);
      if (t.kl) {
        kl_l1 = compute::scale(gaussian_kl(post1.mu, post1.logvar), 1.0 / t_ref);
        kl_l2 = compute::scale(gaussian_kl(post2.mu, post2.logvar), 1.0 / t_ref);
      }
      if (t.aux_translation) {
        const auto ni = static_cast<compute::Index>(n);
        Var sem_from_l1 = compute::slice_rows(sem_all.mu, 0, ni);
        Var sem_from_l2 = compute::slice_rows(sem_all.mu, ni, ni);
        aux = compute::add(recon(Side::L2, compute::concat_cols({sem_from_l1, post2.mu}), x2, true),
                           recon(Side::L1, compute::concat_cols({sem_from_l2, post1.mu}), x1, true));
      }
      break;
    }
  }

  Var kl_total = compute::add(compute::add(kl_sem, kl_l1), kl_l2);
  Var total = compute::add(compute::add(recon_l1, recon_l2), aux);
  if (t.kl) total = compute::add(total, compute::scale(kl_total, weight));

  terms.recon_l1 = recon_l1.scalar();
  terms.recon_l2 = recon_l2.scalar();
  terms.kl_sem = kl_sem.scalar();
  terms.kl_l1 = kl_l1.scalar();
  terms.kl_l2 = kl_l2.scalar();
  terms.aux_translation = aux.scalar();
  terms.total = total.scalar();
  return {total, terms};
}

ElboResult elbo_loss(Graph& g, const BgtModel& model, const corpus::TokenBatch& batch, const LatentNoise& noise,
                     double weight, std::mt19937_64* dropout_rng) {
  return elbo_loss(g, model, model.config().variant, batch, noise, weight, dropout_rng);
}

}  // namespace bgt::objective
