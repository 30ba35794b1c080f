#pragma once

#include "bgt/checkpoint.hpp"
#include "bgt/corpus.hpp"
#include "bgt/objective.hpp"

#include <filesystem>
#include <functional>
#include <random>
#include <span>
#include <vector>

namespace bgt::trainer {

using compute::Matrix;
using compute::Parameter;
using model::BgtModel;

class TrainerError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Linear warmup to peak, then peak * sqrt(warmup / step).
double noam_lr(std::int64_t step, std::int64_t warmup = 4000, double peak = 5e-4);

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-8;
};

using OptimizerState = model::AdamMoments;

OptimizerState init_optimizer(std::span<const Parameter* const> params);
OptimizerState init_optimizer(const compute::ParameterStore& store);

// Bias-corrected Adam. Every gradient is checked before any parameter moves;
// a non-finite entry aborts the step with the parameter's name.
void adam_step(std::span<Parameter* const> params, std::span<const Matrix> grads, OptimizerState& state,
               double rate, const AdamConfig& cfg = {});

enum class Schedule { Noam, Fixed };

struct TrainPlan {
  int epochs = 20;
  int max_tokens = 2000;
  Schedule schedule = Schedule::Noam;
  std::int64_t warmup = 4000;
  double peak_lr = 5e-4;
  double fixed_lr = 0.001;
  std::int64_t anneal_steps = 1024;
  int accumulate = 1;         // batches per optimizer update
  double clip_norm = 0.0;     // 0 disables clipping
  std::uint64_t seed = 1;
  int checkpoint_every_epochs = 1;
  std::int64_t checkpoint_every_steps = 0;  // 0 disables
  std::int64_t max_steps = 0;               // 0: run all epochs
  std::filesystem::path out_dir;            // empty: no files written
  AdamConfig adam;

  void validate() const;
  // Transformers use the warmup schedule, recurrent models a fixed rate.
  static TrainPlan paper_preset(model::TrainingVariant v, model::Arch arch);
  // Desk runs last a few hundred updates, so the warmup is 200 updates to a 1e-3 peak.
  static TrainPlan desk_preset(model::Arch arch);
};

void to_json(nlohmann::json& j, const TrainPlan& p);
void from_json(const nlohmann::json& j, TrainPlan& p);

// INI file with [model] and [train] sections; keys use the field names.
void apply_ini(const std::filesystem::path& path, model::ModelConfig& model_cfg, TrainPlan& plan);

struct StepRecord {
  std::int64_t step = 0;  // updates completed, including this one
  std::int64_t epoch = 0;
  int batches = 0;
  int tokens = 0;
  double lr = 0.0;
  objective::ElboTerms terms;
};

nlohmann::json to_json(const StepRecord& r);

struct TrainReport {
  std::int64_t steps = 0;
  std::int64_t epochs_completed = 0;
  std::vector<StepRecord> log;
  std::vector<double> epoch_mean_loss;
};

using StepHook = std::function<void(const StepRecord&)>;

// RNG streams derived from (seed, purpose, counter) so any step can be replayed.
std::mt19937_64 derived_rng(std::uint64_t seed, std::uint64_t purpose, std::uint64_t counter);
std::vector<corpus::TokenBatch> epoch_batches(std::span<const corpus::ParallelPair> pairs, int max_tokens,
                                              std::uint64_t seed, std::int64_t epoch);

class Trainer {
 public:
  Trainer(TrainPlan plan, BgtModel& model, std::span<const corpus::ParallelPair> pairs,
          std::uint64_t tokenizer_hash = 0);

  // Restores weights, optimizer state and cursor. The checkpoint must describe
  // the same model config, tokenizer and batching plan.
  void resume(const std::filesystem::path& checkpoint);
  TrainReport run(const StepHook& hook = {});
  void save(const std::filesystem::path& path) const;

  const OptimizerState& optimizer() const { return state_; }
  const model::TrainingCursor& cursor() const { return cursor_; }
  const TrainPlan& plan() const { return plan_; }
  double learning_rate(std::int64_t step) const;

 private:
  StepRecord update(std::span<const corpus::TokenBatch> group);

  TrainPlan plan_;
  BgtModel& model_;
  std::span<const corpus::ParallelPair> pairs_;
  std::uint64_t tokenizer_hash_;
  OptimizerState state_;
  model::TrainingCursor cursor_;
  std::vector<Parameter*> params_;
};

TrainReport train(const TrainPlan& plan, BgtModel& model, std::span<const corpus::ParallelPair> pairs,
                  std::uint64_t tokenizer_hash = 0, const StepHook& hook = {});

struct SweepRow {
  int max_tokens = 0;
  double score = 0.0;
  std::int64_t steps = 0;
};

// One fresh model per size, same seeds; eval receives the trained model.
std::vector<SweepRow> batch_size_sweep(const TrainPlan& plan, const model::ModelConfig& cfg,
                                       std::span<const corpus::ParallelPair> pairs, std::span<const int> sizes,
                                       const std::function<double(const BgtModel&)>& eval);

}  // namespace bgt::trainer
