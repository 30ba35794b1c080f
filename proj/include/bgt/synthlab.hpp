#pragma once

#include "bgt/evaluation.hpp"
#include "bgt/trainer.hpp"

#include <nlohmann/json.hpp>

#include <array>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace bgt::synthlab {

using model::Side;

class SynthError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shared factors: topic and content (the lemma sequence, hence its length).
// Language-specific factors, drawn per side: punctuation count, filler style,
// and article gender on L2. The two languages have disjoint vocabularies.
struct SynthGrammar {
  int topics = 5;
  int lemmas_per_topic = 8;
  int min_content = 4;
  int max_content = 8;
  int max_punct = 2;
  std::uint64_t lexicon_seed = 7;

  void validate() const;
  bool operator==(const SynthGrammar&) const = default;
};

void to_json(nlohmann::json& j, const SynthGrammar& g);
void from_json(const nlohmann::json& j, SynthGrammar& g);

struct Lexicon {
  std::array<std::vector<std::string>, 2> content;  // per side, indexed by lemma id
  std::array<std::array<std::string, 2>, 2> filler;  // per side, per style
  std::array<std::string, 2> article;                // L2 masculine, feminine
  std::vector<std::string> punct;

  static Lexicon build(const SynthGrammar& g);
};

struct Factors {
  int topic = 0;
  int length = 0;
  std::array<int, 2> punct{};
  std::array<int, 2> filler{};
  int gender = 0;  // 0 masculine, 1 feminine
  bool operator==(const Factors&) const = default;
};

struct SynthPair {
  std::string l1;
  std::string l2;
  std::vector<int> lemmas;
  Factors factors;

  const std::string& side(Side s) const { return s == Side::L1 ? l1 : l2; }
};

// L1: filler, content lemmas in order with punctuation after some words.
// L2: article, content lemmas reversed with punctuation, filler last.
std::vector<SynthPair> gen_corpus(const SynthGrammar& g, int n, std::uint64_t seed);

// What the surface string of one side reveals. Fields for the other side stay empty.
struct ReadFactors {
  int topic = -1;
  int length = 0;
  int punct = 0;
  int filler = -1;
  std::optional<int> gender;
  std::vector<int> lemmas;
};

// Rule-based reader; throws on strings the grammar cannot produce.
ReadFactors read_factors(const SynthGrammar& g, const Lexicon& lex, std::string_view sentence, Side side);

enum class Column { Topic, Length, PunctL1, PunctL2, GenderL2 };
inline constexpr std::array<Column, 5> kColumns{Column::Topic, Column::Length, Column::PunctL1, Column::PunctL2,
                                                Column::GenderL2};
enum class Row { Sem, L1, L2, Random };
inline constexpr std::array<Row, 4> kRows{Row::Sem, Row::L1, Row::L2, Row::Random};

std::string to_string(Column c);
std::string to_string(Row r);
int factor_label(const Factors& f, Column c);

using Matrix45 = std::array<std::array<double, 5>, 4>;  // accuracy in percent

struct SeparationRun {
  std::uint64_t seed = 0;
  Matrix45 accuracy{};
  std::array<double, 5> chance{};  // majority-class rate on the test split, percent
  std::int64_t train_steps = 0;
  double final_loss = 0.0;
};

struct SeparationReport {
  std::vector<SeparationRun> runs;
  Matrix45 mean{};
  std::array<double, 5> mean_chance{};

  nlohmann::json to_json() const;
  std::string table() const;
};

struct ExperimentConfig {
  SynthGrammar grammar;
  int train_pairs = 5000;
  int probe_pairs = 1000;
  model::ModelConfig model;
  trainer::TrainPlan plan;
  evaluation::ProbeConfig probe;

  // Small transformer BGT and plan sized for a CPU run of a few minutes per seed.
  static ExperimentConfig desk();
  // Recurrent translation model (L1 to L2) for comparing injection strategies.
  static ExperimentConfig recurrent_ablation();
};

void to_json(nlohmann::json& j, const ExperimentConfig& c);
void from_json(const nlohmann::json& j, ExperimentConfig& c);

// Word-level tokenizer over both languages of the corpus.
corpus::Tokenizer synth_tokenizer(std::span<const SynthPair> pairs);
std::vector<corpus::ParallelPair> tokenize_pairs(const corpus::Tokenizer& tok, std::span<const SynthPair> pairs);

// Probes every (row, column) cell. Each encoder reads the sentence of its own
// language; the semantic and random rows read the column's language (L1 for
// the shared factors). Probe splits are stratified 3:1:1.
SeparationRun measure_separation(const model::BgtModel& trained, const model::BgtModel& random,
                                 const corpus::Tokenizer& tok, std::span<const SynthPair> probe_pairs,
                                 const evaluation::ProbeConfig& probe, std::uint64_t seed);

// Same, from saved checkpoints. A checkpoint that saw no updates is rejected.
SeparationRun measure_separation(const std::filesystem::path& trained_ckpt, const corpus::Tokenizer& tok,
                                 std::span<const SynthPair> probe_pairs, const evaluation::ProbeConfig& probe,
                                 std::uint64_t seed);

using Progress = std::function<void(const std::string&)>;

// Per seed: generate training and probe corpora, train the configured model,
// and measure separation against an untrained model of the same shape.
SeparationReport run_separation_experiment(const ExperimentConfig& cfg, std::span<const std::uint64_t> seeds,
                                           const Progress& progress = {});

struct AblationRow {
  std::string injection;
  std::uint64_t seed = 0;
  double topic_accuracy = 0.0;
};

// Trains cfg.model once per (injection, seed) and probes topic from z_sem.
std::vector<AblationRow> run_injection_ablation(const ExperimentConfig& cfg,
                                                std::span<const model::InjectionSet> injections,
                                                std::span<const std::uint64_t> seeds, const Progress& progress = {});

// Sentence pairs whose gold score is 5 times the fraction of shared content
// lemmas (by position); language-specific factors are redrawn for s2.
std::vector<evaluation::StsExample> synthetic_sts(const SynthGrammar& g, int n, std::uint64_t seed,
                                                  bool cross_lingual = false);

}  // namespace bgt::synthlab
