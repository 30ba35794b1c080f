#pragma once

#include "bgt/model.hpp"

#include <cstdint>
#include <random>
#include <span>

namespace bgt::objective {

using compute::Graph;
using compute::Matrix;
using compute::Var;
using model::BgtModel;
using model::GaussianPosterior;
using model::TrainingVariant;

class ObjectiveError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// KL(N(mu, exp(logvar)) || N(0, I)) in nats.
double gaussian_kl(const GaussianPosterior& post);
// Summed over every row.
Var gaussian_kl(Var mu, Var logvar);

// Mean over non-PAD targets of the cross-entropy against (1 - eps) one-hot + eps / V.
Var label_smoothed_ce(Var logits, std::span<const int> targets, double eps);
double label_smoothed_ce(const Matrix& logits, std::span<const int> targets, double eps);

struct AnnealSchedule {
  std::int64_t total_steps = std::int64_t{1} << 16;
};

double kl_weight(std::int64_t step, const AnnealSchedule& schedule = {});

struct ElboTerms {
  double recon_l1 = 0.0;
  double recon_l2 = 0.0;
  double kl_sem = 0.0;
  double kl_l1 = 0.0;
  double kl_l2 = 0.0;
  double kl_weight = 0.0;
  double aux_translation = 0.0;
  double total = 0.0;
};

// Standard normal noise for each latent, one row per pair.
struct LatentNoise {
  Matrix sem, l1, l2;

  static LatentNoise zeros(int pairs, int k);
  static LatentNoise draw(int pairs, int k, std::mt19937_64& rng);
};

struct ElboResult {
  Var total;
  ElboTerms terms;
};

// Builds the variant's loss on the graph. KL terms are summed over pairs and
// divided by the batch's reference token count (the mean target length over
// the sides being reconstructed), so they share the per-token scale of the
// reconstruction terms. dropout_rng null means no dropout.
ElboResult elbo_loss(Graph& g, const BgtModel& model, TrainingVariant variant, const corpus::TokenBatch& batch,
                     const LatentNoise& noise, double kl_weight, std::mt19937_64* dropout_rng = nullptr);

// Convenience for the model's own variant.
ElboResult elbo_loss(Graph& g, const BgtModel& model, const corpus::TokenBatch& batch, const LatentNoise& noise,
                     double kl_weight, std::mt19937_64* dropout_rng = nullptr);

}  // namespace bgt::objective
