#include "bgt/trainer.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <chrono>
#include <cmath>
#include <fstream>
#include <iostream>

namespace bgt::trainer {

double noam_lr(std::int64_t step, std::int64_t warmup, double peak) {
  if (step < 1) throw TrainerError("learning-rate steps start at 1");
  if (warmup < 1) throw TrainerError("warmup must be positive");
  if (step <= warmup) return peak * static_cast<double>(step) / static_cast<double>(warmup);
  return peak * std::sqrt(static_cast<double>(warmup) / static_cast<double>(step));
}

OptimizerState init_optimizer(std::span<const Parameter* const> params) {
  OptimizerState s;
  for (const auto* p : params) {
    s.m.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
    s.v.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
  }
  return s;
}

OptimizerState init_optimizer(const compute::ParameterStore& store) {
  auto all = store.all();
  return init_optimizer(std::span<const Parameter* const>(all.data(), all.size()));
}

void adam_step(std::span<Parameter* const> params, std::span<const Matrix> grads, OptimizerState& state,
               double rate, const AdamConfig& cfg) {
  if (grads.size() != params.size() || state.m.size() != params.size() || state.v.size() != params.size()) {
    throw TrainerError("adam: " + std::to_string(params.size()) + " parameters, " + std::to_string(grads.size()) +
                       " gradients, " + std::to_string(state.m.size()) + " moment slots");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& w = params[i]->value;
    if (grads[i].rows() != w.rows() || grads[i].cols() != w.cols() || state.m[i].rows() != w.rows() ||
        state.m[i].cols() != w.cols()) {
      throw TrainerError("adam: shape mismatch for parameter '" + params[i]->name + "'");
    }
    if (!compute::all_finite(grads[i])) throw TrainerError("non-finite gradient for parameter '" + params[i]->name + "'");
  }
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto m = state.m[i].array();
    auto v = state.v[i].array();
    const auto g = grads[i].array();
    m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
    v = cfg.beta2 * v + (1.0 - cfg.beta2) * g.square();
    params[i]->value.array() -= rate * (m / c1) / ((v / c2).sqrt() + cfg.eps);
  }
}

// ---- plan ----

void TrainPlan::validate() const {
  auto fail = [](const std::string& m) { throw TrainerError("invalid training plan: " + m); };
  if (epochs < 1) fail("epochs must be at least 1");
  if (max_tokens < 1) fail("max_tokens must be positive");
  if (!(peak_lr > 0.0) || !(fixed_lr > 0.0)) fail("learning rates must be positive");
  if (warmup < 1) fail("warmup must be positive");
  if (anneal_steps < 0) fail("anneal_steps must be nonnegative");
  if (accumulate < 1 || accumulate > 255) fail("accumulate must lie in [1, 255]");
  if (clip_norm < 0.0) fail("clip_norm must be nonnegative");
  if (max_steps < 0 || checkpoint_every_steps < 0 || checkpoint_every_epochs < 0) fail("negative cadence");
}

TrainPlan TrainPlan::paper_preset(model::TrainingVariant v, model::Arch arch) {
  TrainPlan p;
  p.epochs = 20;
  const bool bgt_family = v == model::TrainingVariant::BGT || v == model::TrainingVariant::BGTNoLangVars;
  p.max_tokens = bgt_family ? 25000 : 50000;
  p.schedule = arch == model::Arch::Transformer ? Schedule::Noam : Schedule::Fixed;
  p.anneal_steps = std::int64_t{1} << 16;
  return p;
}

TrainPlan TrainPlan::desk_preset(model::Arch arch) {
  TrainPlan p;
  p.epochs = 20;
  p.max_tokens = 2000;
  p.schedule = arch == model::Arch::Transformer ? Schedule::Noam : Schedule::Fixed;
  p.warmup = 200;
  p.peak_lr = 1e-3;
  p.anneal_steps = 1024;
  return p;
}

void to_json(nlohmann::json& j, const TrainPlan& p) {
  j = nlohmann::json{{"epochs", p.epochs},
                     {"max_tokens", p.max_tokens},
                     {"schedule", p.schedule == Schedule::Noam ? "noam" : "fixed"},
                     {"warmup", p.warmup},
                     {"peak_lr", p.peak_lr},
                     {"fixed_lr", p.fixed_lr},
                     {"anneal_steps", p.anneal_steps},
                     {"accumulate", p.accumulate},
                     {"clip_norm", p.clip_norm},
                     {"seed", p.seed},
                     {"checkpoint_every_epochs", p.checkpoint_every_epochs},
                     {"checkpoint_every_steps", p.checkpoint_every_steps},
                     {"max_steps", p.max_steps},
                     {"out_dir", p.out_dir.string()},
                     {"adam_beta1", p.adam.beta1},
                     {"adam_beta2", p.adam.beta2},
                     {"adam_eps", p.adam.eps}};
}

void from_json(const nlohmann::json& j, TrainPlan& p) {
  p = TrainPlan{};
  p.epochs = j.at("epochs").get<int>();
  p.max_tokens = j.at("max_tokens").get<int>();
  const auto sched = j.at("schedule").get<std::string>();
  if (sched != "noam" && sched != "fixed") throw TrainerError("unknown schedule '" + sched + "' (noam or fixed)");
  p.schedule = sched == "noam" ? Schedule::Noam : Schedule::Fixed;
  p.warmup = j.at("warmup").get<std::int64_t>();
  p.peak_lr = j.at("peak_lr").get<double>();
  p.fixed_lr = j.at("fixed_lr").get<double>();
  p.anneal_steps = j.at("anneal_steps").get<std::int64_t>();
  p.accumulate = j.at("accumulate").get<int>();
  p.clip_norm = j.at("clip_norm").get<double>();
  p.seed = j.at("seed").get<std::uint64_t>();
  p.checkpoint_every_epochs = j.at("checkpoint_every_epochs").get<int>();
  p.checkpoint_every_steps = j.at("checkpoint_every_steps").get<std::int64_t>();
  p.max_steps = j.at("max_steps").get<std::int64_t>();
  p.out_dir = j.at("out_dir").get<std::string>();
  p.adam.beta1 = j.at("adam_beta1").get<double>();
  p.adam.beta2 = j.at("adam_beta2").get<double>();
  p.adam.eps = j.at("adam_eps").get<double>();
}

namespace {

nlohmann::json ini_value(const std::string& raw) {
  auto parsed = nlohmann::json::parse(raw, nullptr, false);
  if (parsed.is_discarded() || parsed.is_object() || parsed.is_array()) return raw;
  return parsed;
}

template <typename T>
void merge_section(const boost::property_tree::ptree& section, const std::string& name, T& target) {
  nlohmann::json j = target;
  for (const auto& [key, node] : section) {
    if (!j.contains(key)) throw TrainerError("unknown key '" + key + "' in [" + name + "]");
    nlohmann::json v = ini_value(node.template get_value<std::string>());
    // Keep strings as strings even when they look numeric.
    if (j[key].is_string() && !v.is_string()) v = node.template get_value<std::string>();
    j[key] = v;
  }
  try {
    target = j.get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw TrainerError("bad value in [" + name + "]: " + e.what());
  }
}

}  // namespace

void apply_ini(const std::filesystem::path& path, model::ModelConfig& model_cfg, TrainPlan& plan) {
  boost::property_tree::ptree tree;
  try {
    boost::property_tree::ini_parser::read_ini(path.string(), tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw TrainerError(std::string("cannot read config: ") + e.what());
  }
  for (const auto& [section, node] : tree) {
    if (section == "model") {
      merge_section(node, section, model_cfg);
    } else if (section == "train") {
      merge_section(node, section, plan);
    } else {
      throw TrainerError("unknown section [" + section + "] in " + path.string());
    }
  }
}

nlohmann::json to_json(const StepRecord& r) {
  return nlohmann::json{{"step", r.step},
                        {"epoch", r.epoch},
                        {"batches", r.batches},
                        {"tokens", r.tokens},
                        {"lr", r.lr},
                        {"kl_weight", r.terms.kl_weight},
                        {"recon_l1", r.terms.recon_l1},
                        {"recon_l2", r.terms.recon_l2},
                        {"kl_sem", r.terms.kl_sem},
                        {"kl_l1", r.terms.kl_l1},
                        {"kl_l2", r.terms.kl_l2},
                        {"aux_translation", r.terms.aux_translation},
                        {"total", r.terms.total}};
}

// ---- rng streams ----

namespace {
constexpr std::uint64_t kBatching = 1, kNoise = 2, kDropout = 3;
}

std::mt19937_64 derived_rng(std::uint64_t seed, std::uint64_t purpose, std::uint64_t counter) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(purpose), static_cast<std::uint32_t>(counter),
                    static_cast<std::uint32_t>(counter >> 32)};
  return std::mt19937_64(seq);
}

std::vector<corpus::TokenBatch> epoch_batches(std::span<const corpus::ParallelPair> pairs, int max_tokens,
                                              std::uint64_t seed, std::int64_t epoch) {
  auto rng = derived_rng(seed, kBatching, static_cast<std::uint64_t>(epoch));
  return corpus::make_batches(pairs, max_tokens, rng());
}

// ---- trainer ----

Trainer::Trainer(TrainPlan plan, BgtModel& model, std::span<const corpus::ParallelPair> pairs,
                 std::uint64_t tokenizer_hash)
    : plan_(std::move(plan)), model_(model), pairs_(pairs), tokenizer_hash_(tokenizer_hash) {
  plan_.validate();
  if (pairs_.empty()) throw TrainerError("training corpus is empty");
  params_ = model_.parameters().all();
  state_ = init_optimizer(model_.parameters());
}

double Trainer::learning_rate(std::int64_t step) const {
  return plan_.schedule == Schedule::Noam ? noam_lr(step, plan_.warmup, plan_.peak_lr) : plan_.fixed_lr;
}

void Trainer::resume(const std::filesystem::path& path) {
  auto ck = model::read_checkpoint(path);
  if (!(ck.config == model_.config())) {
    throw TrainerError("checkpoint config " + nlohmann::json(ck.config).dump() + " does not match model config " +
                       nlohmann::json(model_.config()).dump());
  }
  if (ck.tokenizer_hash != tokenizer_hash_) throw TrainerError("checkpoint was trained with a different tokenizer");
  if (!ck.has_adam) throw TrainerError("checkpoint has no optimizer state");
  if (ck.extra.contains("plan")) {
    const auto saved = ck.extra.at("plan").get<TrainPlan>();
    if (saved.seed != plan_.seed || saved.max_tokens != plan_.max_tokens || saved.accumulate != plan_.accumulate) {
      throw TrainerError("checkpoint batching plan (seed, max_tokens, accumulate) differs from the current plan");
    }
  }
  auto restored = model::restore_model(ck);
  auto src = restored->parameters().all();
  for (std::size_t i = 0; i < params_.size(); ++i) params_[i]->value = src[i]->value;
  state_ = std::move(ck.adam);
  cursor_ = ck.cursor;
}

void Trainer::save(const std::filesystem::path& path) const {
  model::save_checkpoint(path, model_, tokenizer_hash_, cursor_, &state_, nlohmann::json{{"plan", plan_}});
}

StepRecord Trainer::update(std::span<const corpus::TokenBatch> group) {
  const auto& cfg = model_.config();
  const double weight = objective::kl_weight(cursor_.step, {plan_.anneal_steps});
  std::vector<Matrix> total;
  StepRecord rec;
  rec.step = cursor_.step + 1;
  rec.epoch = cursor_.epoch;
  rec.batches = static_cast<int>(group.size());
  for (std::size_t j = 0; j < group.size(); ++j) {
    const auto& batch = group[j];
    const auto counter = (static_cast<std::uint64_t>(cursor_.step) << 8) | j;
    auto noise_rng = derived_rng(plan_.seed, kNoise, counter);
    auto drop_rng = derived_rng(plan_.seed, kDropout, counter);
    auto noise = objective::LatentNoise::draw(static_cast<int>(batch.size()), cfg.latent_dim, noise_rng);
    compute::Graph g;
    auto res = objective::elbo_loss(g, model_, batch, noise, weight, &drop_rng);
    auto grads = compute::grad(res.total, params_);
    if (total.empty()) {
      total = std::move(grads);
    } else {
      for (std::size_t i = 0; i < total.size(); ++i) total[i] += grads[i];
    }
    auto& t = rec.terms;
    t.recon_l1 += res.terms.recon_l1;
    t.recon_l2 += res.terms.recon_l2;
    t.kl_sem += res.terms.kl_sem;
    t.kl_l1 += res.terms.kl_l1;
    t.kl_l2 += res.terms.kl_l2;
    t.aux_translation += res.terms.aux_translation;
    t.total += res.terms.total;
    t.kl_weight = res.terms.kl_weight;
    rec.tokens += batch.total_tokens;
  }
  const double inv = 1.0 / static_cast<double>(group.size());
  if (group.size() > 1) {
    for (auto& g : total) g *= inv;
    for (double* v : {&rec.terms.recon_l1, &rec.terms.recon_l2, &rec.terms.kl_sem, &rec.terms.kl_l1,
                      &rec.terms.kl_l2, &rec.terms.aux_translation, &rec.terms.total}) {
      *v *= inv;
    }
  }
  if (plan_.clip_norm > 0.0) {
    double sq = 0.0;
    for (const auto& g : total) sq += g.squaredNorm();
    const double norm = std::sqrt(sq);
    if (norm > plan_.clip_norm) {
      for (auto& g : total) g *= plan_.clip_norm / norm;
    }
  }
  rec.lr = learning_rate(cursor_.step + 1);
  adam_step(params_, total, state_, rec.lr, plan_.adam);
  cursor_.step += 1;
  return rec;
}

TrainReport Trainer::run(const StepHook& hook) {
  TrainReport report;
  std::ofstream log;
  if (!plan_.out_dir.empty()) {
    std::filesystem::create_directories(plan_.out_dir);
    log.open(plan_.out_dir / "train.jsonl", std::ios::app);
  }
  auto checkpoint = [&](const std::string& name) {
    if (!plan_.out_dir.empty()) save(plan_.out_dir / name);
  };

  while (cursor_.epoch < plan_.epochs) {
    const auto batches = epoch_batches(pairs_, plan_.max_tokens, plan_.seed, cursor_.epoch);
    double epoch_loss = 0.0;
    int epoch_updates = 0;
    while (cursor_.batch < static_cast<std::int64_t>(batches.size())) {
      if (plan_.max_steps > 0 && cursor_.step >= plan_.max_steps) {
        checkpoint("last.ckpt");
        report.steps = cursor_.step;
        return report;
      }
      const auto begin = static_cast<std::size_t>(cursor_.batch);
      const auto count = std::min<std::size_t>(static_cast<std::size_t>(plan_.accumulate), batches.size() - begin);
      StepRecord rec = update(std::span<const corpus::TokenBatch>(batches).subspan(begin, count));
      cursor_.batch += static_cast<std::int64_t>(count);
      epoch_loss += rec.terms.total;
      ++epoch_updates;
      if (!std::isfinite(rec.terms.total)) throw TrainerError("training loss became non-finite at step " + std::to_string(rec.step));
      if (log.is_open()) log << to_json(rec).dump() << '\n' << std::flush;
      if (hook) hook(rec);
      report.log.push_back(rec);
      if (plan_.checkpoint_every_steps > 0 && cursor_.step % plan_.checkpoint_every_steps == 0) {
        checkpoint("step" + std::to_string(cursor_.step) + ".ckpt");
      }
    }
    cursor_.epoch += 1;
    cursor_.batch = 0;
    report.epochs_completed += 1;
    report.epoch_mean_loss.push_back(epoch_updates > 0 ? epoch_loss / epoch_updates : 0.0);
    if (plan_.checkpoint_every_epochs > 0 && cursor_.epoch % plan_.checkpoint_every_epochs == 0) {
      checkpoint("last.ckpt");
    }
  }
  checkpoint("last.ckpt");
  report.steps = cursor_.step;
  return report;
}

TrainReport train(const TrainPlan& plan, BgtModel& model, std::span<const corpus::ParallelPair> pairs,
                  std::uint64_t tokenizer_hash, const StepHook& hook) {
  Trainer t(plan, model, pairs, tokenizer_hash);
  return t.run(hook);
}

std::vector<SweepRow> batch_size_sweep(const TrainPlan& plan, const model::ModelConfig& cfg,
                                       std::span<const corpus::ParallelPair> pairs, std::span<const int> sizes,
                                       const std::function<double(const BgtModel&)>& eval) {
  if (!std::is_sorted(sizes.begin(), sizes.end())) throw TrainerError("batch sizes must be sorted ascending");
  std::vector<SweepRow> rows;
  for (int size : sizes) {
    TrainPlan p = plan;
    p.max_tokens = size;
    p.out_dir.clear();
    BgtModel m(cfg);
    auto report = train(p, m, pairs);
    auto snapshot = m.clone();
    rows.push_back({size, eval(*snapshot), report.steps});
  }
  return rows;
}

}  // namespace bgt::trainer
