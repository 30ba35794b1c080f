#pragma once

#include "bgt/corpus.hpp"
#include "bgt/inference.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace bgt::evaluation {

class EvaluationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Product-moment correlation. Needs at least two points and variance on both sides.
double pearson(std::span<const double> preds, std::span<const double> golds);

// Lowercased whitespace split; punctuation stays attached.
std::vector<std::string> word_tokens(std::string_view text);
// Word-level Levenshtein distance divided by the reference length.
double wer(std::span<const std::string> hyp, std::span<const std::string> ref);
double swer(std::string_view s1, std::string_view s2);

struct StsExample {
  std::string s1;
  std::string s2;
  double gold = 0.0;
};

struct StsDataset {
  std::string year;
  std::string name;
  std::vector<StsExample> examples;
};

// Lines "gold<TAB>s1<TAB>s2"; gold must lie in [0, 5].
std::vector<StsExample> read_sts_tsv(const std::filesystem::path& path);
// root/<year>/<dataset>.tsv, sorted by year then name.
std::vector<StsDataset> load_sts_dir(const std::filesystem::path& root);

struct DatasetScore {
  std::string year;
  std::string name;
  std::size_t n = 0;
  double r = 0.0;
};

struct StsReport {
  std::vector<DatasetScore> datasets;
  std::vector<std::pair<std::string, double>> year_means;
  double overall = 0.0;

  nlohmann::json to_json() const;
  std::string table() const;
};

// Mean of per-dataset r within each year, then the mean over years.
StsReport aggregate_sts(std::vector<DatasetScore> scores);

using PairScorer = std::function<std::vector<double>(std::span<const StsExample>)>;
StsReport evaluate_sts(std::span<const StsDataset> datasets, const PairScorer& score);
// Cosine of semantic-encoder posterior means.
std::vector<double> cosine_scores(const model::BgtModel& model, const corpus::Tokenizer& tok,
                                  std::span<const StsExample> examples);
StsReport evaluate_sts(const model::BgtModel& model, const corpus::Tokenizer& tok,
                       std::span<const StsDataset> datasets);

enum class SwerSide { Bottom, Top };

struct HardSplitSpec {
  std::string name;
  SwerSide side = SwerSide::Bottom;
  double percentile = 20.0;  // in (0, 100]
  double lo = 0.0;
  double hi = 5.0;

  void validate() const;
  // Top 20% SWER with gold in [4, 5]: dissimilar surface, same meaning.
  static HardSplitSpec hard_positive();
  // Bottom 20% SWER with gold in [0, 1]: similar surface, different meaning.
  static HardSplitSpec hard_negative();
  // The extended grid of difficult and easy splits.
  static std::vector<HardSplitSpec> extended_grid();
};

// Keeps the first occurrence of each (s1, s2) pair.
std::vector<StsExample> unique_pairs(std::span<const StsExample> pool);
// Nearest-rank percentile of the pooled SWER values. Pairs tied with the
// threshold are kept.
double swer_threshold(std::span<const double> swers, SwerSide side, double percentile);
std::vector<StsExample> build_hard_splits(std::span<const StsExample> pool, const HardSplitSpec& spec);

// A token is negating when it is "not" or ends in "'t" after trimming
// surrounding punctuation, case-insensitively.
bool has_negation(std::string_view sentence);
// Pairs where exactly one side has a negation.
std::vector<StsExample> build_negation_split(std::span<const StsExample> pool);

enum class ProbeSplit { Train, Valid, Test };
std::string to_string(ProbeSplit s);
ProbeSplit parse_probe_split(const std::string& s);

struct ProbingExample {
  std::string sentence;
  std::string label;
  ProbeSplit split = ProbeSplit::Train;
};

// Lines "split<TAB>label<TAB>sentence".
void write_probing(std::ostream& os, std::span<const ProbingExample> examples);
std::vector<ProbingExample> read_probing(std::istream& is);

// Stratified by label: each label's examples are shuffled and divided in the
// ratio train:valid:test.
void assign_splits(std::vector<ProbingExample>& examples, std::uint64_t seed, int train = 10, int valid = 1,
                   int test = 1);

// ASCII punctuation characters.
bool is_punctuation(char c);
int punctuation_count(std::string_view sentence);

struct PunctTasks {
  std::vector<ProbingExample> number;  // labels "1".."10", "11+"
  std::vector<ProbingExample> first;   // label is the first mark
};

// Sentences without punctuation are skipped. Each label keeps at most
// `cap` examples, chosen by seed.
PunctTasks build_punct_tasks(std::span<const std::string> sentences, std::uint64_t seed, std::size_t cap = 20000);

struct ArticleSwap {
  std::string a;
  std::string b;
};

std::vector<ArticleSwap> article_swaps(const std::string& language);  // "fr" or "es"
// Swaps every listed article with its opposite-gender counterpart, keeping an
// initial capital. Returns the sentence unchanged when no article occurs.
std::string swap_articles(std::string_view sentence, std::span<const ArticleSwap> swaps);
// Sentences with at least one article; half stay correct and half are
// corrupted, with labels "correct" and "incorrect".
std::vector<ProbingExample> build_gender_task(std::span<const std::string> sentences,
                                              std::span<const ArticleSwap> swaps, std::uint64_t seed);

struct ProbeConfig {
  int hidden = 256;  // 0: logistic regression
  int max_epochs = 100;
  int patience = 10;
  int batch_size = 64;
  double lr = 1e-3;
  std::uint64_t seed = 1;
};

struct ProbeResult {
  double test_accuracy = 0.0;
  double valid_accuracy = 0.0;
  double majority_rate = 0.0;  // on the test split, using the training majority class
  int best_epoch = 0;
  int classes = 0;
};

// Trains on frozen features, keeps the weights with the best validation
// accuracy and reports test accuracy.
ProbeResult probe(std::span<const Eigen::VectorXd> features, std::span<const std::string> labels,
                  std::span<const ProbeSplit> splits, const ProbeConfig& cfg = {});

// One-sided: fraction of resamples where system B's r is at least system A's.
double paired_bootstrap(std::span<const double> preds_a, std::span<const double> preds_b,
                        std::span<const double> golds, int n = 10000, std::uint64_t seed = 1);

}  // namespace bgt::evaluation
