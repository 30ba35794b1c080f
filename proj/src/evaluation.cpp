#include "bgt/evaluation.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

namespace bgt::evaluation {

using Eigen::MatrixXd;
using Eigen::VectorXd;

double pearson(std::span<const double> preds, std::span<const double> golds) {
  if (preds.size() != golds.size()) {
    throw EvaluationError("pearson: " + std::to_string(preds.size()) + " predictions for " +
                          std::to_string(golds.size()) + " gold scores");
  }
  if (preds.size() < 2) throw EvaluationError("pearson needs at least two points");
  const double n = static_cast<double>(preds.size());
  const double mp = std::accumulate(preds.begin(), preds.end(), 0.0) / n;
  const double mg = std::accumulate(golds.begin(), golds.end(), 0.0) / n;
  double cov = 0.0, vp = 0.0, vg = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const double a = preds[i] - mp, b = golds[i] - mg;
    cov += a * b;
    vp += a * a;
    vg += b * b;
  }
  if (vp == 0.0 || vg == 0.0) throw EvaluationError("pearson is undefined for a constant series");
  return std::clamp(cov / std::sqrt(vp * vg), -1.0, 1.0);
}

std::vector<std::string> word_tokens(std::string_view text) {
  std::vector<std::string> out = corpus::split_whitespace(text);
  for (auto& w : out) {
    for (auto& c : w) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  }
  return out;
}

double wer(std::span<const std::string> hyp, std::span<const std::string> ref) {
  if (ref.empty()) throw EvaluationError("word error rate needs a non-empty reference");
  std::vector<std::size_t> prev(ref.size() + 1), cur(ref.size() + 1);
  std::iota(prev.begin(), prev.end(), std::size_t{0});
  for (std::size_t i = 1; i <= hyp.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= ref.size(); ++j) {
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (hyp[i - 1] == ref[j - 1] ? 0 : 1)});
    }
    std::swap(prev, cur);
  }
  return static_cast<double>(prev[ref.size()]) / static_cast<double>(ref.size());
}

double swer(std::string_view s1, std::string_view s2) {
  const auto a = word_tokens(s1), b = word_tokens(s2);
  return 0.5 * wer(a, b) + 0.5 * wer(b, a);
}

std::vector<StsExample> read_sts_tsv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw EvaluationError("cannot open " + path.string());
  std::vector<StsExample> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto t1 = line.find('\t');
    const auto t2 = t1 == std::string::npos ? std::string::npos : line.find('\t', t1 + 1);
    if (t2 == std::string::npos || line.find('\t', t2 + 1) != std::string::npos) {
      throw EvaluationError(path.string() + ":" + std::to_string(lineno) + ": expected gold<TAB>s1<TAB>s2");
    }
    StsExample ex;
    try {
      std::size_t used = 0;
      ex.gold = std::stod(line.substr(0, t1), &used);
      if (used != t1) throw std::invalid_argument("trailing characters");
    } catch (const std::exception&) {
      throw EvaluationError(path.string() + ":" + std::to_string(lineno) + ": bad gold score");
    }
    if (!(ex.gold >= 0.0 && ex.gold <= 5.0)) {
      throw EvaluationError(path.string() + ":" + std::to_string(lineno) + ": gold score outside [0, 5]");
    }
    ex.s1 = line.substr(t1 + 1, t2 - t1 - 1);
    ex.s2 = line.substr(t2 + 1);
    out.push_back(std::move(ex));
  }
  if (out.empty()) throw EvaluationError("empty STS dataset " + path.string());
  return out;
}

std::vector<StsDataset> load_sts_dir(const std::filesystem::path& root) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(root)) throw EvaluationError("not a directory: " + root.string());
  std::vector<StsDataset> out;
  for (const auto& year : fs::directory_iterator(root)) {
    if (!year.is_directory()) continue;
    for (const auto& file : fs::directory_iterator(year.path())) {
      if (!file.is_regular_file() || file.path().extension() != ".tsv") continue;
      out.push_back({year.path().filename().string(), file.path().stem().string(), read_sts_tsv(file.path())});
    }
  }
  if (out.empty()) throw EvaluationError("no <year>/<dataset>.tsv files under " + root.string());
  std::sort(out.begin(), out.end(),
            [](const StsDataset& a, const StsDataset& b) { return std::tie(a.year, a.name) < std::tie(b.year, b.name); });
  return out;
}

nlohmann::json StsReport::to_json() const {
  nlohmann::json j;
  j["datasets"] = nlohmann::json::array();
  for (const auto& d : datasets) j["datasets"].push_back({{"year", d.year}, {"name", d.name}, {"n", d.n}, {"r", d.r}});
  j["years"] = nlohmann::json::object();
  for (const auto& [y, m] : year_means) j["years"][y] = m;
  j["overall"] = overall;
  return j;
}

std::string StsReport::table() const {
  std::ostringstream os;
  os << std::fixed << std::setprecision(1);
  os << std::left << std::setw(10) << "year" << std::setw(28) << "dataset" << std::right << std::setw(8) << "n"
     << std::setw(8) << "r*100" << '\n';
  for (const auto& d : datasets) {
    os << std::left << std::setw(10) << d.year << std::setw(28) << d.name << std::right << std::setw(8) << d.n
       << std::setw(8) << 100.0 * d.r << '\n';
  }
  for (const auto& [y, m] : year_means) {
    os << std::left << std::setw(10) << y << std::setw(28) << "(mean)" << std::right << std::setw(8) << ""
       << std::setw(8) << 100.0 * m << '\n';
  }
  os << std::left << std::setw(38) << "overall" << std::right << std::setw(16) << 100.0 * overall << '\n';
  return os.str();
}

StsReport aggregate_sts(std::vector<DatasetScore> scores) {
  if (scores.empty()) throw EvaluationError("no datasets to aggregate");
  StsReport rep;
  std::map<std::string, std::pair<double, int>> by_year;
  for (const auto& s : scores) {
    auto& [sum, count] = by_year[s.year];
    sum += s.r;
    ++count;
  }
  double total = 0.0;
  for (const auto& [y, sc] : by_year) {
    rep.year_means.emplace_back(y, sc.first / sc.second);
    total += sc.first / sc.second;
  }
  rep.overall = total / static_cast<double>(by_year.size());
  rep.datasets = std::move(scores);
  return rep;
}

StsReport evaluate_sts(std::span<const StsDataset> datasets, const PairScorer& score) {
  std::vector<DatasetScore> scores;
  for (const auto& d : datasets) {
    if (d.examples.empty()) throw EvaluationError("empty STS dataset " + d.year + "/" + d.name);
    const std::vector<double> preds = score(d.examples);
    std::vector<double> golds;
    for (const auto& e : d.examples) golds.push_back(e.gold);
    scores.push_back({d.year, d.name, d.examples.size(), pearson(preds, golds)});
  }
  return aggregate_sts(std::move(scores));
}

std::vector<double> cosine_scores(const model::BgtModel& model, const corpus::Tokenizer& tok,
                                  std::span<const StsExample> examples) {
  std::vector<std::vector<int>> sents;
  for (const auto& e : examples) {
    sents.push_back(tok.encode(e.s1));
    sents.push_back(tok.encode(e.s2));
  }
  const auto emb = inference::embed_all(model, sents);
  std::vector<double> out;
  for (std::size_t i = 0; i < examples.size(); ++i) {
    out.push_back(inference::cosine(emb[2 * i].vector, emb[2 * i + 1].vector));
  }
  return out;
}

StsReport evaluate_sts(const model::BgtModel& model, const corpus::Tokenizer& tok,
                       std::span<const StsDataset> datasets) {
  return evaluate_sts(datasets, [&](std::span<const StsExample> ex) { return cosine_scores(model, tok, ex); });
}

void HardSplitSpec::validate() const {
  if (!(percentile > 0.0 && percentile <= 100.0)) throw EvaluationError("percentile must be in (0, 100]");
  if (!(lo <= hi)) throw EvaluationError("label range needs lo <= hi");
}

HardSplitSpec HardSplitSpec::hard_positive() { return {"hard+", SwerSide::Top, 20.0, 4.0, 5.0}; }
HardSplitSpec HardSplitSpec::hard_negative() { return {"hard-", SwerSide::Bottom, 20.0, 0.0, 1.0}; }

std::vector<HardSplitSpec> HardSplitSpec::extended_grid() {
  return {
      {"bottom20-label0-2", SwerSide::Bottom, 20.0, 0.0, 2.0},
      {"bottom10-label0-1", SwerSide::Bottom, 10.0, 0.0, 1.0},
      {"top20-label3-5", SwerSide::Top, 20.0, 3.0, 5.0},
      {"top10-label4-5", SwerSide::Top, 10.0, 4.0, 5.0},
      {"top20-label0-2", SwerSide::Top, 20.0, 0.0, 2.0},
      {"bottom20-label3-5", SwerSide::Bottom, 20.0, 3.0, 5.0},
  };
}

std::vector<StsExample> unique_pairs(std::span<const StsExample> pool) {
  std::set<std::pair<std::string, std::string>> seen;
  std::vector<StsExample> out;
  for (const auto& e : pool) {
    if (seen.insert({e.s1, e.s2}).second) out.push_back(e);
  }
  return out;
}

double swer_threshold(std::span<const double> swers, SwerSide side, double percentile) {
  if (swers.empty()) throw EvaluationError("percentile of an empty pool");
  if (!(percentile > 0.0 && percentile <= 100.0)) throw EvaluationError("percentile must be in (0, 100]");
  std::vector<double> s(swers.begin(), swers.end());
  if (side == SwerSide::Bottom) {
    std::sort(s.begin(), s.end());
  } else {
    std::sort(s.begin(), s.end(), std::greater<>());
  }
  const auto rank = static_cast<std::size_t>(std::ceil(percentile / 100.0 * static_cast<double>(s.size())));
  return s[std::max<std::size_t>(rank, 1) - 1];
}

std::vector<StsExample> build_hard_splits(std::span<const StsExample> pool, const HardSplitSpec& spec) {
  spec.validate();
  if (pool.empty()) return {};
  std::vector<double> sw;
  for (const auto& e : pool) sw.push_back(swer(e.s1, e.s2));
  const double t = swer_threshold(sw, spec.side, spec.percentile);
  std::vector<StsExample> out;
  for (std::size_t i = 0; i < pool.size(); ++i) {
    const bool side_ok = spec.side == SwerSide::Bottom ? sw[i] <= t : sw[i] >= t;
    if (side_ok && pool[i].gold >= spec.lo && pool[i].gold <= spec.hi) out.push_back(pool[i]);
  }
  return out;
}

bool has_negation(std::string_view sentence) {
  for (auto w : word_tokens(sentence)) {
    // Curly apostrophes count as straight ones.
    for (std::size_t p; (p = w.find("\xE2\x80\x99")) != std::string::npos;) w.replace(p, 3, "'");
    const auto keep = [](unsigned char c) { return std::isalnum(c) || c == '\'' || c >= 0x80; };
    std::size_t b = 0, e = w.size();
    while (b < e && !keep(static_cast<unsigned char>(w[b]))) ++b;
    while (e > b && !keep(static_cast<unsigned char>(w[e - 1]))) --e;
    const std::string_view t(w.data() + b, e - b);
    if (t == "not" || (t.size() > 2 && t.substr(t.size() - 2) == "'t")) return true;
  }
  return false;
}

std::vector<StsExample> build_negation_split(std::span<const StsExample> pool) {
  std::vector<StsExample> out;
  for (const auto& e : pool) {
    if (has_negation(e.s1) != has_negation(e.s2)) out.push_back(e);
  }
  return out;
}

std::string to_string(ProbeSplit s) {
  switch (s) {
    case ProbeSplit::Train: return "train";
    case ProbeSplit::Valid: return "valid";
    case ProbeSplit::Test: return "test";
  }
  return "?";
}

ProbeSplit parse_probe_split(const std::string& s) {
  if (s == "train") return ProbeSplit::Train;
  if (s == "valid") return ProbeSplit::Valid;
  if (s == "test") return ProbeSplit::Test;
  throw EvaluationError("unknown split '" + s + "' (train, valid, test)");
}

void write_probing(std::ostream& os, std::span<const ProbingExample> examples) {
  for (const auto& e : examples) os << to_string(e.split) << '\t' << e.label << '\t' << e.sentence << '\n';
}

std::vector<ProbingExample> read_probing(std::istream& is) {
  std::vector<ProbingExample> out;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto t1 = line.find('\t');
    const auto t2 = t1 == std::string::npos ? std::string::npos : line.find('\t', t1 + 1);
    if (t2 == std::string::npos) {
      throw EvaluationError("probing line " + std::to_string(lineno) + ": expected split<TAB>label<TAB>sentence");
    }
    out.push_back({line.substr(t2 + 1), line.substr(t1 + 1, t2 - t1 - 1), parse_probe_split(line.substr(0, t1))});
  }
  return out;
}

void assign_splits(std::vector<ProbingExample>& examples, std::uint64_t seed, int train, int valid, int test) {
  if (train <= 0 || valid < 0 || test < 0) throw EvaluationError("split ratios must be positive");
  std::map<std::string, std::vector<std::size_t>> by_label;
  for (std::size_t i = 0; i < examples.size(); ++i) by_label[examples[i].label].push_back(i);
  std::mt19937_64 rng(seed);
  const double total = train + valid + test;
  for (auto& [label, idx] : by_label) {
    std::shuffle(idx.begin(), idx.end(), rng);
    const auto n = static_cast<double>(idx.size());
    const auto n_valid = static_cast<std::size_t>(std::floor(n * valid / total));
    const auto n_test = static_cast<std::size_t>(std::floor(n * test / total));
    for (std::size_t r = 0; r < idx.size(); ++r) {
      examples[idx[r]].split = r < n_valid ? ProbeSplit::Valid : r < n_valid + n_test ? ProbeSplit::Test : ProbeSplit::Train;
    }
  }
}

bool is_punctuation(char c) {
  const auto u = static_cast<unsigned char>(c);
  return u < 0x80 && std::ispunct(u);
}

int punctuation_count(std::string_view sentence) {
  return static_cast<int>(std::count_if(sentence.begin(), sentence.end(), is_punctuation));
}

namespace {

std::vector<ProbingExample> cap_labels(std::vector<ProbingExample> all, std::size_t cap, std::mt19937_64& rng) {
  std::map<std::string, std::vector<std::size_t>> by_label;
  for (std::size_t i = 0; i < all.size(); ++i) by_label[all[i].label].push_back(i);
  std::vector<bool> keep(all.size(), false);
  for (auto& [label, idx] : by_label) {
    std::shuffle(idx.begin(), idx.end(), rng);
    for (std::size_t r = 0; r < idx.size() && r < cap; ++r) keep[idx[r]] = true;
  }
  std::vector<ProbingExample> out;
  for (std::size_t i = 0; i < all.size(); ++i) {
    if (keep[i]) out.push_back(std::move(all[i]));
  }
  return out;
}

}  // namespace

PunctTasks build_punct_tasks(std::span<const std::string> sentences, std::uint64_t seed, std::size_t cap) {
  std::vector<ProbingExample> number, first;
  for (const auto& s : sentences) {
    const int n = punctuation_count(s);
    if (n == 0) continue;
    number.push_back({s, n >= 11 ? "11+" : std::to_string(n), ProbeSplit::Train});
    const char c = *std::find_if(s.begin(), s.end(), is_punctuation);
    first.push_back({s, std::string(1, c), ProbeSplit::Train});
  }
  std::mt19937_64 rng(seed);
  PunctTasks out{cap_labels(std::move(number), cap, rng), cap_labels(std::move(first), cap, rng)};
  assign_splits(out.number, rng());
  assign_splits(out.first, rng());
  return out;
}

std::vector<ArticleSwap> article_swaps(const std::string& language) {
  if (language == "fr") return {{"le", "la"}, {"un", "une"}};
  if (language == "es") return {{"el", "la"}, {"los", "las"}};
  throw EvaluationError("no article table for language '" + language + "' (fr, es)");
}

std::string swap_articles(std::string_view sentence, std::span<const ArticleSwap> swaps) {
  std::string out;
  std::size_t i = 0;
  while (i < sentence.size()) {
    if (std::isspace(static_cast<unsigned char>(sentence[i]))) {
      out += sentence[i++];
      continue;
    }
    std::size_t j = i;
    while (j < sentence.size() && !std::isspace(static_cast<unsigned char>(sentence[j]))) ++j;
    std::string word(sentence.substr(i, j - i));
    std::string lower = word;
    for (auto& c : lower) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    for (const auto& s : swaps) {
      const std::string* to = lower == s.a ? &s.b : lower == s.b ? &s.a : nullptr;
      if (to == nullptr) continue;
      std::string repl = *to;
      if (std::isupper(static_cast<unsigned char>(word[0]))) {
        repl[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(repl[0])));
      }
      word = repl;
      break;
    }
    out += word;
    i = j;
  }
  return out;
}

std::vector<ProbingExample> build_gender_task(std::span<const std::string> sentences,
                                              std::span<const ArticleSwap> swaps, std::uint64_t seed) {
  std::vector<std::string> eligible;
  for (const auto& s : sentences) {
    if (swap_articles(s, swaps) != s) eligible.push_back(s);
  }
  std::mt19937_64 rng(seed);
  std::shuffle(eligible.begin(), eligible.end(), rng);
  const std::size_t half = eligible.size() / 2;
  std::vector<ProbingExample> out;
  for (std::size_t i = 0; i < 2 * half; ++i) {
    if (i < half) {
      out.push_back({eligible[i], "correct", ProbeSplit::Train});
    } else {
      out.push_back({swap_articles(eligible[i], swaps), "incorrect", ProbeSplit::Train});
    }
  }
  assign_splits(out, rng());
  return out;
}

namespace {

struct Adam {
  MatrixXd m, v;
  explicit Adam(const MatrixXd& like) : m(MatrixXd::Zero(like.rows(), like.cols())), v(m) {}
  void step(MatrixXd& w, const MatrixXd& g, double lr, int t) {
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g.cwiseProduct(g);
    const double c1 = 1.0 - std::pow(0.9, t), c2 = 1.0 - std::pow(0.999, t);
    w.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + 1e-8);
  }
};

struct Net {
  MatrixXd w1, b1, w2, b2;  // w1/b1 unused for logistic regression
  bool hidden = false;

  MatrixXd logits(const MatrixXd& x, MatrixXd* h_out = nullptr) const {
    if (!hidden) return (x * w2).rowwise() + b2.row(0);
    MatrixXd h = ((x * w1).rowwise() + b1.row(0)).cwiseMax(0.0);
    MatrixXd out = (h * w2).rowwise() + b2.row(0);
    if (h_out) *h_out = std::move(h);
    return out;
  }
};

double accuracy(const Net& net, const MatrixXd& x, const std::vector<int>& y) {
  if (y.empty()) return 0.0;
  const MatrixXd z = net.logits(x);
  int right = 0;
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    Eigen::Index arg = 0;
    z.row(i).maxCoeff(&arg);
    right += arg == y[static_cast<std::size_t>(i)];
  }
  return static_cast<double>(right) / static_cast<double>(y.size());
}

// Mean cross-entropy over examples whose label was seen in training.
double mean_loss(const Net& net, const MatrixXd& x, const std::vector<int>& y) {
  const MatrixXd z = net.logits(x);
  double total = 0.0;
  int n = 0;
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    const int yi = y[static_cast<std::size_t>(i)];
    if (yi < 0) continue;
    const double mx = z.row(i).maxCoeff();
    total += mx + std::log((z.row(i).array() - mx).exp().sum()) - z(i, yi);
    ++n;
  }
  return n == 0 ? 0.0 : total / n;
}

MatrixXd uniform_init(int rows, int cols, std::mt19937_64& rng) {
  const double a = std::sqrt(6.0 / (rows + cols));
  std::uniform_real_distribution<double> u(-a, a);
  MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  return m;
}

}  // namespace

ProbeResult probe(std::span<const Eigen::VectorXd> features, std::span<const std::string> labels,
                  std::span<const ProbeSplit> splits, const ProbeConfig& cfg) {
  if (features.size() != labels.size() || features.size() != splits.size()) {
    throw EvaluationError("probe: features, labels and splits differ in length");
  }
  if (features.empty()) throw EvaluationError("probe: no examples");
  if (cfg.hidden < 0 || cfg.max_epochs < 1 || cfg.patience < 1 || cfg.batch_size < 1 || !(cfg.lr > 0.0)) {
    throw EvaluationError("probe: invalid classifier configuration");
  }
  const auto dim = features[0].size();
  std::map<std::string, int> classes;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (features[i].size() != dim) throw EvaluationError("probe: features differ in dimension");
    if (splits[i] == ProbeSplit::Train) classes.emplace(labels[i], 0);
  }
  if (classes.size() < 2) throw EvaluationError("probe: training data has fewer than two classes");
  int next = 0;
  for (auto& [l, id] : classes) id = next++;
  const int c = next;

  // Labels absent from training can never be predicted; they get id -1.
  std::array<std::vector<std::size_t>, 3> idx;
  for (std::size_t i = 0; i < features.size(); ++i) idx[static_cast<std::size_t>(splits[i])].push_back(i);
  for (const auto& part : idx) {
    if (part.empty()) throw EvaluationError("probe: every split needs at least one example");
  }
  VectorXd mean = VectorXd::Zero(dim), sd = VectorXd::Zero(dim);
  for (auto i : idx[0]) mean += features[i];
  mean /= static_cast<double>(idx[0].size());
  for (auto i : idx[0]) sd += (features[i] - mean).cwiseAbs2();
  sd = (sd / static_cast<double>(idx[0].size())).cwiseSqrt();
  for (Eigen::Index j = 0; j < dim; ++j) {
    if (sd(j) < 1e-12) sd(j) = 1.0;
  }
  auto gather = [&](const std::vector<std::size_t>& part, MatrixXd& x, std::vector<int>& y) {
    x.resize(static_cast<Eigen::Index>(part.size()), dim);
    y.clear();
    for (std::size_t r = 0; r < part.size(); ++r) {
      x.row(static_cast<Eigen::Index>(r)) = ((features[part[r]] - mean).array() / sd.array()).transpose();
      auto it = classes.find(labels[part[r]]);
      y.push_back(it == classes.end() ? -1 : it->second);
    }
  };
  MatrixXd xtr, xva, xte;
  std::vector<int> ytr, yva, yte;
  gather(idx[0], xtr, ytr);
  gather(idx[1], xva, yva);
  gather(idx[2], xte, yte);

  std::mt19937_64 rng(cfg.seed);
  Net net;
  net.hidden = cfg.hidden > 0;
  const int in2 = net.hidden ? cfg.hidden : static_cast<int>(dim);
  if (net.hidden) {
    net.w1 = uniform_init(static_cast<int>(dim), cfg.hidden, rng);
    net.b1 = MatrixXd::Zero(1, cfg.hidden);
  }
  net.w2 = uniform_init(in2, c, rng);
  net.b2 = MatrixXd::Zero(1, c);
  Adam a_w1(net.hidden ? net.w1 : MatrixXd()), a_b1(net.hidden ? net.b1 : MatrixXd());
  Adam a_w2(net.w2), a_b2(net.b2);

  Net best = net;
  double best_valid = accuracy(net, xva, yva);
  double best_loss = mean_loss(net, xva, yva);
  int best_epoch = 0, last_gain = 0, t = 0;
  std::vector<std::size_t> order(ytr.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t s = 0; s < order.size(); s += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t e = std::min(order.size(), s + static_cast<std::size_t>(cfg.batch_size));
      const auto b = static_cast<Eigen::Index>(e - s);
      MatrixXd x(b, dim);
      MatrixXd y = MatrixXd::Zero(b, c);
      for (std::size_t r = s; r < e; ++r) {
        x.row(static_cast<Eigen::Index>(r - s)) = xtr.row(static_cast<Eigen::Index>(order[r]));
        y(static_cast<Eigen::Index>(r - s), ytr[order[r]]) = 1.0;
      }
      MatrixXd h;
      MatrixXd z = net.logits(x, &h);
      z = z.colwise() - z.rowwise().maxCoeff();
      z = z.array().exp();
      z = z.array().colwise() / z.rowwise().sum().array();
      const MatrixXd dz = (z - y) / static_cast<double>(b);
      const MatrixXd& in = net.hidden ? h : x;
      const MatrixXd gw2 = in.transpose() * dz;
      const MatrixXd gb2 = dz.colwise().sum();
      ++t;
      if (net.hidden) {
        MatrixXd dh = dz * net.w2.transpose();
        dh = dh.cwiseProduct((h.array() > 0.0).cast<double>().matrix());
        a_w1.step(net.w1, x.transpose() * dh, cfg.lr, t);
        a_b1.step(net.b1, dh.colwise().sum(), cfg.lr, t);
      }
      a_w2.step(net.w2, gw2, cfg.lr, t);
      a_b2.step(net.b2, gb2, cfg.lr, t);
    }
    // Selection uses validation accuracy; training continues while either
    // accuracy or loss keeps improving.
    const double va = accuracy(net, xva, yva);
    const double vl = mean_loss(net, xva, yva);
    if (va > best_valid) {
      best_valid = va;
      best = net;
      best_epoch = epoch;
      last_gain = epoch;
    }
    if (vl < best_loss) {
      best_loss = vl;
      last_gain = epoch;
    }
    if (epoch - last_gain >= cfg.patience) break;
  }

  std::vector<int> counts(static_cast<std::size_t>(c), 0);
  for (int y : ytr) ++counts[static_cast<std::size_t>(y)];
  const int majority = static_cast<int>(std::max_element(counts.begin(), counts.end()) - counts.begin());
  ProbeResult res;
  res.test_accuracy = accuracy(best, xte, yte);
  res.valid_accuracy = best_valid;
  res.majority_rate = static_cast<double>(std::count(yte.begin(), yte.end(), majority)) / static_cast<double>(yte.size());
  res.best_epoch = best_epoch;
  res.classes = c;
  return res;
}

namespace {

// Correlation of a resample; constant resamples count as zero.
double resample_r(std::span<const double> p, std::span<const double> g, std::span<const std::size_t> idx) {
  double sp = 0, sg = 0;
  for (auto i : idx) sp += p[i], sg += g[i];
  const double n = static_cast<double>(idx.size());
  const double mp = sp / n, mg = sg / n;
  double cov = 0, vp = 0, vg = 0;
  for (auto i : idx) {
    const double a = p[i] - mp, b = g[i] - mg;
    cov += a * b, vp += a * a, vg += b * b;
  }
  return vp == 0.0 || vg == 0.0 ? 0.0 : cov / std::sqrt(vp * vg);
}

}  // namespace

double paired_bootstrap(std::span<const double> preds_a, std::span<const double> preds_b,
                        std::span<const double> golds, int n, std::uint64_t seed) {
  if (preds_a.size() != golds.size() || preds_b.size() != golds.size()) {
    throw EvaluationError("paired bootstrap: prediction and gold lengths differ");
  }
  if (golds.size() < 2) throw EvaluationError("paired bootstrap needs at least two examples");
  if (n < 1) throw EvaluationError("paired bootstrap needs at least one resample");
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, golds.size() - 1);
  std::vector<std::size_t> idx(golds.size());
  int b_wins = 0;
  for (int s = 0; s < n; ++s) {
    for (auto& i : idx) i = pick(rng);
    if (resample_r(preds_b, golds, idx) >= resample_r(preds_a, golds, idx)) ++b_wins;
  }
  return static_cast<double>(b_wins) / n;
}

}  // namespace bgt::evaluation
