#include "doctest.h"

#include "bgt/objective.hpp"
#include "oracles.hpp"

#include <cmath>

using namespace bgt;
using namespace bgt::objective;
using model::EncoderRole;
using model::Injection;
using model::InjectionSet;
using model::ModelConfig;

namespace {

Eigen::VectorXd vec(std::initializer_list<double> v) {
  Eigen::VectorXd x(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double d : v) x(i++) = d;
  return x;
}

ModelConfig small(TrainingVariant v, model::Arch arch = model::Arch::Transformer) {
  ModelConfig c;
  c.arch = arch;
  c.enc_layers = 1;
  c.dec_layers = 1;
  c.model_dim = 8;
  c.ffn_dim = 8;
  c.heads = 2;
  c.latent_dim = 4;
  c.vocab_size = 13;
  c.dropout = 0.0;
  c.variant = v;
  c.label_smoothing = model::default_label_smoothing(v);
  c.injection = InjectionSet{}.add(Injection::Attention).add(Injection::Logit);
  return c;
}

std::vector<corpus::ParallelPair> toy_pairs() {
  return {{{4, 5, 6}, {7, 8, 9, 10}, 0},
          {{11, 5}, {12, 4, 6}, 1},
          {{6, 6, 7, 8, 9}, {10, 11}, 2}};
}

// Hand-assembled smoothed cross-entropy summed over one sentence's targets.
double sentence_ce_sum(const compute::Matrix& logits, const std::vector<int>& sentence, double eps) {
  std::vector<int> targets = sentence;
  targets.push_back(corpus::kEos);
  double total = 0.0;
  const double V = static_cast<double>(logits.cols());
  for (std::size_t r = 0; r < targets.size(); ++r) {
    Eigen::RowVectorXd row = logits.row(static_cast<Eigen::Index>(r));
    const double m = row.maxCoeff();
    const double lse = m + std::log((row.array() - m).exp().sum());
    Eigen::RowVectorXd lsm = row.array() - lse;
    total += -(1.0 - eps) * lsm(targets[r]) - eps / V * lsm.sum();
  }
  return total;
}

double closed_kl(const Eigen::VectorXd& mu, const Eigen::VectorXd& lv) {
  double s = 0.0;
  for (Eigen::Index i = 0; i < mu.size(); ++i) s += 0.5 * (mu(i) * mu(i) + std::exp(lv(i)) - lv(i) - 1.0);
  return s;
}

}  // namespace

TEST_CASE("gaussian KL closed forms") {
  for (int k : {1, 3, 8}) {
    CHECK(gaussian_kl({Eigen::VectorXd::Zero(k), Eigen::VectorXd::Zero(k)}) == 0.0);
  }
  CHECK(std::abs(gaussian_kl({vec({1.0}), vec({0.0})}) - 0.5) <= 1e-12);
  CHECK(std::abs(gaussian_kl({vec({0.0}), vec({std::log(2.0)})}) - 0.5 * (1.0 - std::log(2.0))) <= 1e-12);
  CHECK(gaussian_kl({vec({0.0}), vec({std::log(2.0)})}) == doctest::Approx(0.15343).epsilon(1e-4));
  CHECK_THROWS_AS(gaussian_kl({vec({NAN}), vec({0.0})}), ObjectiveError);
  CHECK_THROWS_AS(gaussian_kl({vec({0.0, 1.0}), vec({0.0})}), ObjectiveError);
}

TEST_CASE("gaussian KL agrees with a Monte-Carlo estimate") {
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int trial = 0; trial < 5; ++trial) {
    const int k = 1 + trial;
    Eigen::VectorXd mu(k), lv(k);
    for (int i = 0; i < k; ++i) {
      mu(i) = u(rng);
      lv(i) = u(rng);
    }
    const double exact = gaussian_kl({mu, lv});
    const double mc = oracle::monte_carlo_kl(mu, lv, 100000, 77 + static_cast<std::uint64_t>(trial));
    CHECK(std::abs(mc - exact) / exact < 0.01);
  }
}

TEST_CASE("graph KL matches the value form and is nonnegative") {
  compute::Matrix mu(2, 3), lv(2, 3);
  mu << 0.1, -0.5, 1.0, 0.0, 0.3, -0.2;
  lv << 0.2, -0.1, 0.0, 0.5, -1.0, 0.3;
  compute::Graph g;
  double value = gaussian_kl(g.constant(mu), g.constant(lv)).scalar();
  double expected = gaussian_kl({mu.row(0).transpose(), lv.row(0).transpose()}) +
                    gaussian_kl({mu.row(1).transpose(), lv.row(1).transpose()});
  CHECK(value == doctest::Approx(expected).epsilon(1e-14));
  CHECK(value >= 0.0);
}

TEST_CASE("label-smoothed cross entropy") {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n(0.0, 2.0);
  const int V = 7;
  compute::Matrix logits(4, V);
  for (Eigen::Index i = 0; i < logits.size(); ++i) logits.data()[i] = n(rng);
  std::vector<int> targets{1, 4, 6, 2};

  SUBCASE("eps = 0 is plain cross entropy") {
    double expected = 0.0;
    for (int r = 0; r < 4; ++r) {
      Eigen::RowVectorXd row = logits.row(r);
      expected += std::log(row.array().exp().sum()) - row(targets[static_cast<std::size_t>(r)]);
    }
    CHECK(label_smoothed_ce(logits, targets, 0.0) == doctest::Approx(expected / 4).epsilon(1e-13));
  }
  SUBCASE("uniform logits give ln V") {
    for (double eps : {0.0, 0.1, 0.5}) {
      CHECK(label_smoothed_ce(compute::Matrix::Constant(4, V, 0.3), targets, eps) ==
            doctest::Approx(std::log(V)).epsilon(1e-14));
    }
  }
  SUBCASE("never below the smoothed target entropy") {
    const double eps = 0.1;
    const double hi = 1.0 - eps + eps / V, lo = eps / V;
    const double entropy = -hi * std::log(hi) - (V - 1) * lo * std::log(lo);
    for (int trial = 0; trial < 50; ++trial) {
      for (Eigen::Index i = 0; i < logits.size(); ++i) logits.data()[i] = n(rng) * trial;
      CHECK(label_smoothed_ce(logits, targets, eps) >= entropy - 1e-12);
    }
    compute::Matrix sharp = compute::Matrix::Constant(4, V, -1e3);
    for (int r = 0; r < 4; ++r) sharp(r, targets[static_cast<std::size_t>(r)]) = 1e3;
    CHECK(label_smoothed_ce(sharp, targets, eps) > entropy);
  }
  SUBCASE("padding targets are masked") {
    std::vector<int> padded{1, corpus::kPad, 6, corpus::kPad};
    compute::Matrix kept(2, V);
    kept.row(0) = logits.row(0);
    kept.row(1) = logits.row(2);
    std::vector<int> kept_t{1, 6};
    CHECK(label_smoothed_ce(logits, padded, 0.1) == doctest::Approx(label_smoothed_ce(kept, kept_t, 0.1)).epsilon(1e-14));
    std::vector<int> all_pad(4, corpus::kPad);
    CHECK_THROWS_AS(label_smoothed_ce(logits, all_pad, 0.1), ObjectiveError);
  }
}

TEST_CASE("KL annealing") {
  CHECK(kl_weight(0) == 0.0);
  CHECK(kl_weight(std::int64_t{1} << 15) == 0.5);
  CHECK(kl_weight(std::int64_t{1} << 16) == 1.0);
  CHECK(kl_weight((std::int64_t{1} << 16) + 12345) == 1.0);
  AnnealSchedule desk{1024};
  double prev = 0.0;
  for (std::int64_t s = 0; s < 3000; s += 7) {
    const double w = kl_weight(s, desk);
    CHECK(w >= prev);
    prev = w;
  }
  CHECK_THROWS_AS(kl_weight(-1), ObjectiveError);
}

TEST_CASE("duplicating KL across language posteriors costs at least the shared encoding") {
  std::mt19937_64 rng(8);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int trial = 0; trial < 20; ++trial) {
    Eigen::VectorXd mu(4), lv(4);
    for (int i = 0; i < 4; ++i) {
      mu(i) = n(rng);
      lv(i) = 0.5 * n(rng);
    }
    const GaussianPosterior p{mu, lv};
    const GaussianPosterior prior{Eigen::VectorXd::Zero(4), Eigen::VectorXd::Zero(4)};
    const double shared = gaussian_kl(p) + gaussian_kl(prior) + gaussian_kl(prior);
    const double duplicated = gaussian_kl(prior) + gaussian_kl(p) + gaussian_kl(p);
    CHECK(duplicated >= shared);
  }
}

TEST_CASE("BGT with zero KL weight and zero noise reduces to BGTNoPrior") {
  for (auto arch : {model::Arch::Transformer, model::Arch::Recurrent}) {
    model::BgtModel m(small(TrainingVariant::BGT, arch));
    auto pairs = toy_pairs();
    auto batch = corpus::make_batch(pairs);
    auto noise = LatentNoise::zeros(3, 4);
    compute::Graph g1, g2;
    auto a = elbo_loss(g1, m, TrainingVariant::BGT, batch, noise, 0.0);
    auto b = elbo_loss(g2, m, TrainingVariant::BGTNoPrior, batch, noise, 0.0);
    CHECK(std::abs(a.terms.total - b.terms.total) <= 1e-12);
    CHECK(a.terms.kl_sem > 0.0);
    CHECK(b.terms.kl_sem == 0.0);
    CHECK(a.terms.aux_translation == b.terms.aux_translation);
  }
}

TEST_CASE("ELBO matches a per-sentence brute-force assembly") {
  auto cfg = small(TrainingVariant::BGT);
  model::BgtModel m(cfg);
  auto pairs = toy_pairs();
  auto batch = corpus::make_batch(pairs);
  std::mt19937_64 rng(4);
  auto noise = LatentNoise::draw(3, 4, rng);
  const double w = 0.3, eps = cfg.label_smoothing;

  double ce1 = 0, ce2 = 0, aux1 = 0, aux2 = 0, kl = 0;
  int t1 = 0, t2 = 0;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const auto& p = pairs[i];
    const auto ri = static_cast<Eigen::Index>(i);
    const auto& sem_in = p.index % 2 == 0 ? p.src : p.tgt;
    auto sem = m.encode_posterior(EncoderRole::Semantic, sem_in);
    auto l1 = m.encode_posterior(EncoderRole::LangL1, p.src);
    auto l2 = m.encode_posterior(EncoderRole::LangL2, p.tgt);
    Eigen::VectorXd zs = sem.mu.array() + (0.5 * sem.logvar.array()).exp() * noise.sem.row(ri).transpose().array();
    Eigen::VectorXd z1 = l1.mu.array() + (0.5 * l1.logvar.array()).exp() * noise.l1.row(ri).transpose().array();
    Eigen::VectorXd z2 = l2.mu.array() + (0.5 * l2.logvar.array()).exp() * noise.l2.row(ri).transpose().array();
    ce1 += sentence_ce_sum(m.decode_logits(corpus::Side::L1, zs, &z1, p.src), p.src, eps);
    ce2 += sentence_ce_sum(m.decode_logits(corpus::Side::L2, zs, &z2, p.tgt), p.tgt, eps);
    kl += closed_kl(sem.mu, sem.logvar) + closed_kl(l1.mu, l1.logvar) + closed_kl(l2.mu, l2.logvar);
    // Cross-translation from posterior means.
    auto s1 = m.encode_posterior(EncoderRole::Semantic, p.src).mu;
    auto s2 = m.encode_posterior(EncoderRole::Semantic, p.tgt).mu;
    aux2 += sentence_ce_sum(m.decode_logits(corpus::Side::L2, s1, &l2.mu, p.tgt), p.tgt, eps);
    aux1 += sentence_ce_sum(m.decode_logits(corpus::Side::L1, s2, &l1.mu, p.src), p.src, eps);
    t1 += static_cast<int>(p.src.size()) + 1;
    t2 += static_cast<int>(p.tgt.size()) + 1;
  }
  const double t_ref = 0.5 * (t1 + t2);
  const double expected = ce1 / t1 + ce2 / t2 + w * kl / t_ref + aux2 / t2 + aux1 / t1;

  compute::Graph g;
  auto r = elbo_loss(g, m, batch, noise, w);
  CHECK(r.terms.total == doctest::Approx(expected).epsilon(1e-11));
  CHECK(r.terms.recon_l1 == doctest::Approx(ce1 / t1).epsilon(1e-11));
  CHECK(r.terms.aux_translation == doctest::Approx(aux2 / t2 + aux1 / t1).epsilon(1e-11));
  CHECK(r.terms.kl_weight == w);
}

TEST_CASE("every variant builds a finite loss with the right terms") {
  for (auto v : {TrainingVariant::EnglishAE, TrainingVariant::EnglishVAE, TrainingVariant::EnglishTrans,
                 TrainingVariant::BilingualTrans, TrainingVariant::BGTNoLangVars, TrainingVariant::BGTNoPrior,
                 TrainingVariant::BGT}) {
    CAPTURE(model::to_string(v));
    model::BgtModel m(small(v));
    auto pairs = toy_pairs();
    auto batch = corpus::make_batch(pairs);
    std::mt19937_64 rng(1);
    auto noise = LatentNoise::draw(3, 4, rng);
    compute::Graph g;
    auto r = elbo_loss(g, m, batch, noise, 0.7);
    const auto t = model::traits(v);
    CHECK(std::isfinite(r.terms.total));
    CHECK((r.terms.recon_l1 > 0) == t.decoder_l1);
    CHECK((r.terms.recon_l2 > 0) == t.decoder_l2);
    CHECK((r.terms.kl_sem > 0) == t.kl);
    CHECK((r.terms.kl_l1 > 0) == (t.kl && t.language_encoders));
    CHECK((r.terms.aux_translation > 0) == t.aux_translation);
    CHECK(r.terms.total == doctest::Approx(r.terms.recon_l1 + r.terms.recon_l2 +
                                           r.terms.kl_weight * (r.terms.kl_sem + r.terms.kl_l1 + r.terms.kl_l2) +
                                           r.terms.aux_translation)
                               .epsilon(1e-13));
  }
  model::BgtModel ae(small(TrainingVariant::EnglishAE));
  auto pairs = toy_pairs();
  auto batch = corpus::make_batch(pairs);
  compute::Graph g;
  CHECK_THROWS_AS(elbo_loss(g, ae, TrainingVariant::BGT, batch, LatentNoise::zeros(3, 4), 0.5), ObjectiveError);
  model::BgtModel bgt(small(TrainingVariant::BGT));
  CHECK_THROWS_AS(elbo_loss(g, bgt, batch, LatentNoise::zeros(2, 4), 0.5), ObjectiveError);
}

TEST_CASE("duplicated pairs and extra padding leave the loss unchanged") {
  model::BgtModel m(small(TrainingVariant::BGT));
  auto pairs = toy_pairs();
  std::vector<corpus::ParallelPair> one{pairs[1]};
  std::vector<corpus::ParallelPair> two{pairs[1], pairs[1]};
  auto n1 = LatentNoise::zeros(1, 4);
  n1.sem.setConstant(0.4);
  n1.l2.setConstant(-0.3);
  LatentNoise n2{n1.sem.replicate(2, 1), n1.l1.replicate(2, 1), n1.l2.replicate(2, 1)};
  compute::Graph g;
  auto a = elbo_loss(g, m, corpus::make_batch(one), n1, 1.0);
  auto b = elbo_loss(g, m, corpus::make_batch(two), n2, 1.0);
  CHECK(b.terms.total == doctest::Approx(a.terms.total).epsilon(1e-12));

  auto batch = corpus::make_batch(pairs);
  auto wide = batch;
  auto widen = [](corpus::PaddedIds& p, int extra) {
    corpus::PaddedIds out = p;
    out.cols = p.cols + extra;
    out.ids.assign(static_cast<std::size_t>(out.rows * out.cols), corpus::kPad);
    for (int r = 0; r < p.rows; ++r) {
      auto row = p.row(r);
      std::copy(row.begin(), row.end(), out.ids.begin() + static_cast<std::ptrdiff_t>(r) * out.cols);
    }
    p = out;
  };
  widen(wide.src, 4);
  widen(wide.tgt, 2);
  std::mt19937_64 rng(5);
  auto noise = LatentNoise::draw(3, 4, rng);
  CHECK(elbo_loss(g, m, batch, noise, 0.5).terms.total == elbo_loss(g, m, wide, noise, 0.5).terms.total);
}

TEST_CASE("ELBO gradients match finite differences") {
  for (auto v : {TrainingVariant::BGT, TrainingVariant::BilingualTrans, TrainingVariant::EnglishVAE}) {
    auto cfg = small(v);
    cfg.model_dim = 4;
    cfg.ffn_dim = 4;
    cfg.latent_dim = 2;
    model::BgtModel m(cfg);
    auto pairs = toy_pairs();
    pairs.resize(2);
    auto batch = corpus::make_batch(pairs);
    std::mt19937_64 rng(6);
    auto noise = LatentNoise::draw(2, 2, rng);
    auto params = m.parameters().all();
    double err = compute::grad_check(
        [&](compute::Graph& g) { return elbo_loss(g, m, batch, noise, 0.6).total; }, params);
    CHECK(err <= 1e-3);
    CHECK(err <= 1e-6);
  }
}
