#include "bgt/synthlab.hpp"

#include "bgt/checkpoint.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <map>
#include <random>
#include <set>
#include <sstream>

namespace bgt::synthlab {

using evaluation::ProbeSplit;
using evaluation::ProbingExample;

void SynthGrammar::validate() const {
  if (topics < 2) throw SynthError("grammar needs at least two topics");
  if (lemmas_per_topic < 1) throw SynthError("grammar needs at least one lemma per topic");
  if (min_content < 1 || max_content < min_content) throw SynthError("content length range is empty");
  if (max_punct < 0 || max_punct > min_content) {
    throw SynthError("max_punct must lie in [0, min_content] so every mark follows its own word");
  }
}

void to_json(nlohmann::json& j, const SynthGrammar& g) {
  j = {{"topics", g.topics},           {"lemmas_per_topic", g.lemmas_per_topic},
       {"min_content", g.min_content}, {"max_content", g.max_content},
       {"max_punct", g.max_punct},     {"lexicon_seed", g.lexicon_seed}};
}

void from_json(const nlohmann::json& j, SynthGrammar& g) {
  SynthGrammar d;
  for (const auto& [k, v] : j.items()) {
    if (k == "topics") d.topics = v.get<int>();
    else if (k == "lemmas_per_topic") d.lemmas_per_topic = v.get<int>();
    else if (k == "min_content") d.min_content = v.get<int>();
    else if (k == "max_content") d.max_content = v.get<int>();
    else if (k == "max_punct") d.max_punct = v.get<int>();
    else if (k == "lexicon_seed") d.lexicon_seed = v.get<std::uint64_t>();
    else throw SynthError("unknown grammar key '" + k + "'");
  }
  d.validate();
  g = d;
}

Lexicon Lexicon::build(const SynthGrammar& g) {
  g.validate();
  Lexicon lex;
  std::mt19937_64 rng(g.lexicon_seed);
  // Disjoint consonant sets keep the two vocabularies apart; content words
  // have three syllables, function words one.
  const std::array<std::string, 2> consonants{"ptkmnls", "bdgvrzf"};
  const std::string vowels = "aeiou";
  const int n = g.topics * g.lemmas_per_topic;
  for (int s = 0; s < 2; ++s) {
    std::set<std::string> used;
    std::uniform_int_distribution<std::size_t> c(0, consonants[static_cast<std::size_t>(s)].size() - 1);
    std::uniform_int_distribution<std::size_t> v(0, vowels.size() - 1);
    while (static_cast<int>(lex.content[static_cast<std::size_t>(s)].size()) < n) {
      std::string w;
      for (int syl = 0; syl < 3; ++syl) {
        w += consonants[static_cast<std::size_t>(s)][c(rng)];
        w += vowels[v(rng)];
      }
      if (used.insert(w).second) lex.content[static_cast<std::size_t>(s)].push_back(w);
    }
  }
  lex.filler = {{{"pa", "ki"}, {"bo", "du"}}};
  lex.article = {"ro", "ra"};
  lex.punct = {",", ";", ":", "!", "?"};
  return lex;
}

namespace {

std::string realize(const Lexicon& lex, std::span<const int> lemmas, Side side, int punct, int filler, int gender,
                    std::mt19937_64& rng) {
  const auto s = static_cast<std::size_t>(side);
  std::vector<int> order(lemmas.begin(), lemmas.end());
  if (side == Side::L2) std::reverse(order.begin(), order.end());
  std::vector<std::size_t> pos(order.size());
  for (std::size_t i = 0; i < pos.size(); ++i) pos[i] = i;
  std::shuffle(pos.begin(), pos.end(), rng);
  std::vector<std::string> marks(order.size());
  std::uniform_int_distribution<std::size_t> pick(0, lex.punct.size() - 1);
  for (int p = 0; p < punct; ++p) marks[pos[static_cast<std::size_t>(p)]] = lex.punct[pick(rng)];

  std::string out;
  auto add = [&](const std::string& w) {
    if (!out.empty()) out += ' ';
    out += w;
  };
  if (side == Side::L1) add(lex.filler[s][static_cast<std::size_t>(filler)]);
  if (side == Side::L2) add(lex.article[static_cast<std::size_t>(gender)]);
  for (std::size_t i = 0; i < order.size(); ++i) {
    add(lex.content[s][static_cast<std::size_t>(order[i])]);
    if (!marks[i].empty()) add(marks[i]);
  }
  if (side == Side::L2) add(lex.filler[s][static_cast<std::size_t>(filler)]);
  return out;
}

std::uint64_t sub_seed(std::uint64_t seed, std::uint64_t purpose) { return trainer::derived_rng(seed, purpose, 0)(); }

}  // namespace

std::vector<SynthPair> gen_corpus(const SynthGrammar& g, int n, std::uint64_t seed) {
  if (n < 1) throw SynthError("corpus size must be at least 1");
  const Lexicon lex = Lexicon::build(g);
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> topic(0, g.topics - 1), len(g.min_content, g.max_content),
      lemma(0, g.lemmas_per_topic - 1), punct(0, g.max_punct), coin(0, 1);
  std::vector<SynthPair> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    SynthPair p;
    Factors& f = p.factors;
    f.topic = topic(rng);
    f.length = len(rng);
    for (int k = 0; k < f.length; ++k) p.lemmas.push_back(f.topic * g.lemmas_per_topic + lemma(rng));
    for (int s = 0; s < 2; ++s) {
      f.punct[static_cast<std::size_t>(s)] = punct(rng);
      f.filler[static_cast<std::size_t>(s)] = coin(rng);
    }
    f.gender = coin(rng);
    p.l1 = realize(lex, p.lemmas, Side::L1, f.punct[0], f.filler[0], 0, rng);
    p.l2 = realize(lex, p.lemmas, Side::L2, f.punct[1], f.filler[1], f.gender, rng);
    out.push_back(std::move(p));
  }
  return out;
}

ReadFactors read_factors(const SynthGrammar& g, const Lexicon& lex, std::string_view sentence, Side side) {
  const auto s = static_cast<std::size_t>(side);
  auto words = corpus::split_whitespace(sentence);
  auto fail = [&](const std::string& why) {
    return SynthError("not a " + std::string(side == Side::L1 ? "L1" : "L2") + " sentence (" + why + "): " +
                      std::string(sentence));
  };
  if (words.size() < 2) throw fail("too short");
  ReadFactors r;
  const std::string& head = words.front();
  const std::string& tail = words.back();
  std::span<const std::string> body;
  if (side == Side::L1) {
    if (head == lex.filler[s][0]) r.filler = 0;
    else if (head == lex.filler[s][1]) r.filler = 1;
    else throw fail("no filler first");
    body = std::span<const std::string>(words).subspan(1);
  } else {
    if (head == lex.article[0]) r.gender = 0;
    else if (head == lex.article[1]) r.gender = 1;
    else throw fail("no article first");
    if (tail == lex.filler[s][0]) r.filler = 0;
    else if (tail == lex.filler[s][1]) r.filler = 1;
    else throw fail("no filler last");
    body = std::span<const std::string>(words).subspan(1, words.size() - 2);
  }
  std::map<std::string, int> ids;
  for (std::size_t i = 0; i < lex.content[s].size(); ++i) ids[lex.content[s][i]] = static_cast<int>(i);
  bool after_word = false;
  for (const auto& w : body) {
    if (std::find(lex.punct.begin(), lex.punct.end(), w) != lex.punct.end()) {
      if (!after_word) throw fail("punctuation not after a content word");
      ++r.punct;
      after_word = false;
      continue;
    }
    auto it = ids.find(w);
    if (it == ids.end()) throw fail("unknown word '" + w + "'");
    r.lemmas.push_back(it->second);
    after_word = true;
  }
  if (side == Side::L2) std::reverse(r.lemmas.begin(), r.lemmas.end());
  r.length = static_cast<int>(r.lemmas.size());
  if (r.length == 0) throw fail("no content");
  r.topic = r.lemmas[0] / g.lemmas_per_topic;
  for (int l : r.lemmas) {
    if (l / g.lemmas_per_topic != r.topic) throw fail("mixed topics");
  }
  return r;
}

std::string to_string(Column c) {
  switch (c) {
    case Column::Topic: return "topic";
    case Column::Length: return "content-length";
    case Column::PunctL1: return "punct-count-L1";
    case Column::PunctL2: return "punct-count-L2";
    case Column::GenderL2: return "gender-L2";
  }
  return "?";
}

std::string to_string(Row r) {
  switch (r) {
    case Row::Sem: return "z_sem";
    case Row::L1: return "z_l1";
    case Row::L2: return "z_l2";
    case Row::Random: return "random";
  }
  return "?";
}

int factor_label(const Factors& f, Column c) {
  switch (c) {
    case Column::Topic: return f.topic;
    case Column::Length: return f.length;
    case Column::PunctL1: return f.punct[0];
    case Column::PunctL2: return f.punct[1];
    case Column::GenderL2: return f.gender;
  }
  return 0;
}

namespace {

Side column_side(Column c) { return c == Column::PunctL2 || c == Column::GenderL2 ? Side::L2 : Side::L1; }

nlohmann::json matrix_json(const Matrix45& m) {
  nlohmann::json j = nlohmann::json::object();
  for (std::size_t r = 0; r < kRows.size(); ++r) {
    nlohmann::json row = nlohmann::json::object();
    for (std::size_t c = 0; c < kColumns.size(); ++c) {
      if (std::isnan(m[r][c])) row[to_string(kColumns[c])] = nullptr;
      else row[to_string(kColumns[c])] = m[r][c];
    }
    j[to_string(kRows[r])] = row;
  }
  return j;
}

}  // namespace

nlohmann::json SeparationReport::to_json() const {
  nlohmann::json j;
  j["runs"] = nlohmann::json::array();
  for (const auto& run : runs) {
    nlohmann::json chance = nlohmann::json::object();
    for (std::size_t c = 0; c < kColumns.size(); ++c) chance[to_string(kColumns[c])] = run.chance[c];
    j["runs"].push_back({{"seed", run.seed},
                         {"accuracy", matrix_json(run.accuracy)},
                         {"chance", chance},
                         {"train_steps", run.train_steps},
                         {"final_loss", run.final_loss}});
  }
  j["mean"] = matrix_json(mean);
  nlohmann::json chance = nlohmann::json::object();
  for (std::size_t c = 0; c < kColumns.size(); ++c) chance[to_string(kColumns[c])] = mean_chance[c];
  j["mean_chance"] = chance;
  return j;
}

std::string SeparationReport::table() const {
  std::ostringstream os;
  os << std::fixed << std::setprecision(1) << std::left << std::setw(8) << "";
  for (auto c : kColumns) os << std::right << std::setw(16) << to_string(c);
  os << '\n';
  auto line = [&](const std::string& name, const std::array<double, 5>& vals) {
    os << std::left << std::setw(8) << name;
    for (double v : vals) {
      if (std::isnan(v)) os << std::right << std::setw(16) << "-";
      else os << std::right << std::setw(16) << v;
    }
    os << '\n';
  };
  for (std::size_t r = 0; r < kRows.size(); ++r) line(to_string(kRows[r]), mean[r]);
  line("chance", mean_chance);
  os << "seeds:";
  for (const auto& run : runs) os << ' ' << run.seed;
  os << '\n';
  return os.str();
}

ExperimentConfig ExperimentConfig::desk() {
  ExperimentConfig c;
  c.model.arch = model::Arch::Transformer;
  c.model.enc_layers = 1;
  c.model.dec_layers = 1;
  c.model.model_dim = 32;
  c.model.ffn_dim = 64;
  c.model.heads = 2;
  c.model.latent_dim = 16;
  c.model.dropout = 0.1;
  c.model.variant = model::TrainingVariant::BGT;
  c.model.label_smoothing = model::default_label_smoothing(c.model.variant);
  c.plan = trainer::TrainPlan::desk_preset(c.model.arch);
  c.plan.epochs = 30;
  c.plan.max_tokens = 1000;
  c.plan.warmup = 200;
  c.plan.peak_lr = 2e-3;
  c.plan.anneal_steps = 1024;
  c.probe.max_epochs = 60;
  c.probe.patience = 8;
  return c;
}

ExperimentConfig ExperimentConfig::recurrent_ablation() {
  ExperimentConfig c = desk();
  c.model.arch = model::Arch::Recurrent;
  c.model.variant = model::TrainingVariant::EnglishTrans;
  c.model.label_smoothing = model::default_label_smoothing(c.model.variant);
  c.plan = trainer::TrainPlan::desk_preset(model::Arch::Recurrent);
  c.plan.epochs = 10;
  c.plan.max_tokens = 1000;
  return c;
}

void to_json(nlohmann::json& j, const ExperimentConfig& c) {
  j = {{"grammar", c.grammar},
       {"train_pairs", c.train_pairs},
       {"probe_pairs", c.probe_pairs},
       {"model", c.model},
       {"plan", c.plan},
       {"probe",
        {{"hidden", c.probe.hidden},
         {"max_epochs", c.probe.max_epochs},
         {"patience", c.probe.patience},
         {"batch_size", c.probe.batch_size},
         {"lr", c.probe.lr}}}};
}

void from_json(const nlohmann::json& j, ExperimentConfig& c) {
  ExperimentConfig d = ExperimentConfig::desk();
  for (const auto& [k, v] : j.items()) {
    if (k == "grammar") d.grammar = v.get<SynthGrammar>();
    else if (k == "train_pairs") d.train_pairs = v.get<int>();
    else if (k == "probe_pairs") d.probe_pairs = v.get<int>();
    else if (k == "model") d.model = v.get<model::ModelConfig>();
    else if (k == "plan") d.plan = v.get<trainer::TrainPlan>();
    else if (k == "probe") {
      for (const auto& [pk, pv] : v.items()) {
        if (pk == "hidden") d.probe.hidden = pv.get<int>();
        else if (pk == "max_epochs") d.probe.max_epochs = pv.get<int>();
        else if (pk == "patience") d.probe.patience = pv.get<int>();
        else if (pk == "batch_size") d.probe.batch_size = pv.get<int>();
        else if (pk == "lr") d.probe.lr = pv.get<double>();
        else throw SynthError("unknown probe key '" + pk + "'");
      }
    } else {
      throw SynthError("unknown experiment key '" + k + "'");
    }
  }
  c = d;
}

corpus::Tokenizer synth_tokenizer(std::span<const SynthPair> pairs) {
  std::vector<std::string> text;
  for (const auto& p : pairs) {
    text.push_back(p.l1);
    text.push_back(p.l2);
  }
  // Large enough that every word ends up as a single piece.
  return corpus::Tokenizer::train(text, 1 << 20);
}

std::vector<corpus::ParallelPair> tokenize_pairs(const corpus::Tokenizer& tok, std::span<const SynthPair> pairs) {
  std::vector<corpus::ParallelPair> out;
  out.reserve(pairs.size());
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    out.push_back({tok.encode(pairs[i].l1), tok.encode(pairs[i].l2), static_cast<int>(i)});
  }
  return out;
}

SeparationRun measure_separation(const model::BgtModel& trained, const model::BgtModel& random,
                                 const corpus::Tokenizer& tok, std::span<const SynthPair> probe_pairs,
                                 const evaluation::ProbeConfig& probe, std::uint64_t seed) {
  if (probe_pairs.empty()) throw SynthError("no probe pairs");
  std::array<std::vector<std::vector<int>>, 2> ids;
  for (const auto& p : probe_pairs) {
    ids[0].push_back(tok.encode(p.l1));
    ids[1].push_back(tok.encode(p.l2));
  }
  using inference::embed_all;
  using model::EncoderRole;
  auto features = [](const std::vector<inference::SentenceEmbedding>& e) {
    std::vector<Eigen::VectorXd> out;
    for (const auto& x : e) out.push_back(x.vector);
    return out;
  };
  std::array<std::vector<Eigen::VectorXd>, 2> sem, rnd;
  for (int s = 0; s < 2; ++s) {
    sem[static_cast<std::size_t>(s)] = features(embed_all(trained, ids[static_cast<std::size_t>(s)]));
    rnd[static_cast<std::size_t>(s)] =
        features(embed_all(random, ids[static_cast<std::size_t>(s)], EncoderRole::Semantic, true));
  }
  std::optional<std::vector<Eigen::VectorXd>> l1, l2;
  if (trained.has_encoder(EncoderRole::LangL1)) l1 = features(embed_all(trained, ids[0], EncoderRole::LangL1));
  if (trained.has_encoder(EncoderRole::LangL2)) l2 = features(embed_all(trained, ids[1], EncoderRole::LangL2));

  SeparationRun run;
  run.seed = seed;
  for (std::size_t c = 0; c < kColumns.size(); ++c) {
    const Column col = kColumns[c];
    std::vector<ProbingExample> ex;
    for (std::size_t i = 0; i < probe_pairs.size(); ++i) {
      ex.push_back({std::to_string(i), std::to_string(factor_label(probe_pairs[i].factors, col)), ProbeSplit::Train});
    }
    evaluation::assign_splits(ex, sub_seed(seed, 20 + c), 3, 1, 1);
    std::vector<std::string> labels;
    std::vector<ProbeSplit> splits;
    for (const auto& e : ex) {
      labels.push_back(e.label);
      splits.push_back(e.split);
    }
    const auto side = static_cast<std::size_t>(column_side(col));
    evaluation::ProbeConfig pc = probe;
    pc.seed = sub_seed(seed, 40 + c);
    for (std::size_t r = 0; r < kRows.size(); ++r) {
      const std::vector<Eigen::VectorXd>* x = nullptr;
      switch (kRows[r]) {
        case Row::Sem: x = &sem[side]; break;
        case Row::Random: x = &rnd[side]; break;
        case Row::L1: x = l1 ? &*l1 : nullptr; break;
        case Row::L2: x = l2 ? &*l2 : nullptr; break;
      }
      if (x == nullptr) {
        run.accuracy[r][c] = NAN;
        continue;
      }
      const auto res = evaluation::probe(*x, labels, splits, pc);
      run.accuracy[r][c] = 100.0 * res.test_accuracy;
      run.chance[c] = 100.0 * res.majority_rate;
    }
  }
  return run;
}

SeparationRun measure_separation(const std::filesystem::path& trained_ckpt, const corpus::Tokenizer& tok,
                                 std::span<const SynthPair> probe_pairs, const evaluation::ProbeConfig& probe,
                                 std::uint64_t seed) {
  const model::Checkpoint ckpt = model::read_checkpoint(trained_ckpt);
  if (ckpt.cursor.step == 0) {
    throw SynthError(trained_ckpt.string() + " has not been trained (0 updates); separation needs a trained model");
  }
  if (ckpt.tokenizer_hash != 0 && ckpt.tokenizer_hash != tok.fingerprint()) {
    throw SynthError(trained_ckpt.string() + " was trained with a different tokenizer");
  }
  auto trained = model::restore_model(ckpt);
  model::ModelConfig rc = ckpt.config;
  rc.init_seed = sub_seed(seed, 3);
  model::BgtModel random(rc);
  auto run = measure_separation(*trained, random, tok, probe_pairs, probe, seed);
  run.train_steps = ckpt.cursor.step;
  return run;
}

namespace {

struct Trained {
  corpus::Tokenizer tok;
  std::unique_ptr<model::BgtModel> model;
  std::vector<SynthPair> probe;
  trainer::TrainReport report;
};

Trained train_one(const ExperimentConfig& cfg, const model::ModelConfig& mc, std::uint64_t seed) {
  const auto train_pairs = gen_corpus(cfg.grammar, cfg.train_pairs, sub_seed(seed, 1));
  Trained t{synth_tokenizer(train_pairs), nullptr, gen_corpus(cfg.grammar, cfg.probe_pairs, sub_seed(seed, 2)), {}};
  model::ModelConfig m = mc;
  m.vocab_size = t.tok.vocab_size();
  m.init_seed = seed;
  t.model = std::make_unique<model::BgtModel>(m);
  trainer::TrainPlan plan = cfg.plan;
  plan.seed = seed;
  const auto pairs = tokenize_pairs(t.tok, train_pairs);
  t.report = trainer::train(plan, *t.model, pairs, t.tok.fingerprint());
  return t;
}

}  // namespace

SeparationReport run_separation_experiment(const ExperimentConfig& cfg, std::span<const std::uint64_t> seeds,
                                           const Progress& progress) {
  if (seeds.empty()) throw SynthError("need at least one seed");
  SeparationReport rep;
  for (auto seed : seeds) {
    if (progress) progress("seed " + std::to_string(seed) + ": training " + model::to_string(cfg.model.variant));
    Trained t = train_one(cfg, cfg.model, seed);
    model::ModelConfig rc = t.model->config();
    rc.init_seed = sub_seed(seed, 3);
    model::BgtModel random(rc);
    if (progress) progress("seed " + std::to_string(seed) + ": probing");
    SeparationRun run = measure_separation(*t.model, random, t.tok, t.probe, cfg.probe, seed);
    run.train_steps = t.report.steps;
    run.final_loss = t.report.epoch_mean_loss.empty() ? NAN : t.report.epoch_mean_loss.back();
    rep.runs.push_back(run);
  }
  for (std::size_t r = 0; r < kRows.size(); ++r) {
    for (std::size_t c = 0; c < kColumns.size(); ++c) {
      double s = 0.0;
      for (const auto& run : rep.runs) s += run.accuracy[r][c];
      rep.mean[r][c] = s / static_cast<double>(rep.runs.size());
    }
  }
  for (std::size_t c = 0; c < kColumns.size(); ++c) {
    double s = 0.0;
    for (const auto& run : rep.runs) s += run.chance[c];
    rep.mean_chance[c] = s / static_cast<double>(rep.runs.size());
  }
  return rep;
}

std::vector<AblationRow> run_injection_ablation(const ExperimentConfig& cfg,
                                                std::span<const model::InjectionSet> injections,
                                                std::span<const std::uint64_t> seeds, const Progress& progress) {
  std::vector<AblationRow> out;
  for (auto seed : seeds) {
    for (const auto& inj : injections) {
      model::ModelConfig mc = cfg.model;
      mc.injection = inj;
      if (progress) progress("seed " + std::to_string(seed) + ": training " + model::to_string(inj));
      Trained t = train_one(cfg, mc, seed);
      std::vector<std::vector<int>> ids;
      std::vector<std::string> labels;
      std::vector<ProbingExample> ex;
      for (std::size_t i = 0; i < t.probe.size(); ++i) {
        ids.push_back(t.tok.encode(t.probe[i].l1));
        ex.push_back({std::to_string(i), std::to_string(t.probe[i].factors.topic), ProbeSplit::Train});
      }
      evaluation::assign_splits(ex, sub_seed(seed, 20), 3, 1, 1);
      std::vector<ProbeSplit> splits;
      for (const auto& e : ex) {
        labels.push_back(e.label);
        splits.push_back(e.split);
      }
      std::vector<Eigen::VectorXd> x;
      for (auto& e : inference::embed_all(*t.model, ids)) x.push_back(std::move(e.vector));
      evaluation::ProbeConfig pc = cfg.probe;
      pc.seed = sub_seed(seed, 40);
      out.push_back({model::to_string(inj), seed, 100.0 * evaluation::probe(x, labels, splits, pc).test_accuracy});
    }
  }
  return out;
}

std::vector<evaluation::StsExample> synthetic_sts(const SynthGrammar& g, int n, std::uint64_t seed,
                                                  bool cross_lingual) {
  const Lexicon lex = Lexicon::build(g);
  const auto base = gen_corpus(g, n, seed);
  std::mt19937_64 rng(sub_seed(seed, 5));
  const int vocab = g.topics * g.lemmas_per_topic;
  std::uniform_int_distribution<int> any(0, vocab - 1), punct(0, g.max_punct), coin(0, 1);
  std::vector<evaluation::StsExample> out;
  for (const auto& p : base) {
    std::vector<int> lemmas = p.lemmas;
    const int len = static_cast<int>(lemmas.size());
    const int changes = std::uniform_int_distribution<int>(0, len)(rng);
    std::vector<int> pos(static_cast<std::size_t>(len));
    for (int i = 0; i < len; ++i) pos[static_cast<std::size_t>(i)] = i;
    std::shuffle(pos.begin(), pos.end(), rng);
    for (int k = 0; k < changes; ++k) {
      int& l = lemmas[static_cast<std::size_t>(pos[static_cast<std::size_t>(k)])];
      int repl = any(rng);
      while (repl == l) repl = any(rng);
      l = repl;
    }
    const Side side = cross_lingual ? Side::L2 : Side::L1;
    std::string s2 = realize(lex, lemmas, side, punct(rng), coin(rng), coin(rng), rng);
    out.push_back({p.l1, std::move(s2), 5.0 * static_cast<double>(len - changes) / len});
  }
  return out;
}

}  // namespace bgt::synthlab
