#include "bgt/evaluation.hpp"
#include "bgt/inference.hpp"
#include "bgt/synthlab.hpp"
#include "bgt/trainer.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>

namespace fs = std::filesystem;
using namespace bgt;
using nlohmann::json;

namespace {

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void log_config(const std::string& command, const json& cfg) {
  std::cerr << json{{"command", command}, {"config", cfg}}.dump() << '\n';
}

std::ofstream open_out(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw UsageError("cannot write " + path.string());
  return os;
}

void require_file(const fs::path& p, const std::string& what) {
  if (!fs::is_regular_file(p)) throw UsageError(what + " not found: " + p.string());
}

void require_dir(const fs::path& p, const std::string& what) {
  if (!fs::is_directory(p)) throw UsageError(what + " not found: " + p.string());
}

model::Side parse_side(const std::string& s) {
  if (s == "l1" || s == "L1") return model::Side::L1;
  if (s == "l2" || s == "L2") return model::Side::L2;
  throw UsageError("side must be l1 or l2, got " + s);
}

model::EncoderRole parse_role(const std::string& s) {
  if (s == "semantic") return model::EncoderRole::Semantic;
  if (s == "lang-l1") return model::EncoderRole::LangL1;
  if (s == "lang-l2") return model::EncoderRole::LangL2;
  throw UsageError("encoder must be semantic, lang-l1 or lang-l2, got " + s);
}

std::vector<std::uint64_t> parse_seeds(const std::string& s) {
  std::vector<std::uint64_t> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(std::stoull(item));
  if (out.empty()) throw UsageError("no seeds given");
  return out;
}

// A trained model plus the tokenizer it was trained with. The tokenizer
// defaults to tokenizer.txt next to the checkpoint.
struct LoadedModel {
  model::Checkpoint ckpt;
  std::unique_ptr<model::BgtModel> model;
  corpus::Tokenizer tok;
};

LoadedModel load_trained(const fs::path& checkpoint, fs::path tokenizer) {
  require_file(checkpoint, "checkpoint");
  if (tokenizer.empty()) tokenizer = checkpoint.parent_path() / "tokenizer.txt";
  require_file(tokenizer, "tokenizer");
  LoadedModel lm;
  lm.ckpt = model::read_checkpoint(checkpoint);
  lm.tok = corpus::Tokenizer::load(tokenizer);
  if (lm.ckpt.tokenizer_hash != lm.tok.fingerprint())
    throw UsageError("tokenizer " + tokenizer.string() + " does not match the checkpoint");
  lm.model = model::restore_model(lm.ckpt);
  return lm;
}

std::vector<std::vector<int>> encode_lines(const corpus::Tokenizer& tok, std::span<const std::string> lines) {
  std::vector<std::vector<int>> out;
  out.reserve(lines.size());
  for (const auto& l : lines) out.push_back(tok.encode(l));
  return out;
}

// Model and plan options shared by train and batch-sweep. Flags override the
// config file, which overrides the preset.
struct ModelFlags {
  std::string preset = "desk";
  fs::path config;
  std::string variant;
  std::string arch;
  std::string injection;
  int epochs = 0;
  int max_tokens = 0;
  int accumulate = 0;
  double clip = -1.0;
  std::int64_t max_steps = -1;

  void add(CLI::App* app) {
    app->add_option("--preset", preset, "paper or desk")->check(CLI::IsMember({"paper", "desk"}));
    app->add_option("--config", config, "INI file with [model] and [train] sections");
    app->add_option("--variant", variant, "training variant, e.g. BGT, BGTNoPrior, EnglishAE");
    app->add_option("--arch", arch, "transformer or recurrent");
    app->add_option("--injection", injection, "decoder injection, e.g. attention+logit");
    app->add_option("--epochs", epochs, "training epochs");
    app->add_option("--max-tokens", max_tokens, "tokens per batch");
    app->add_option("--accumulate", accumulate, "batches per optimizer update");
    app->add_option("--clip", clip, "gradient norm clip, 0 disables");
    app->add_option("--max-steps", max_steps, "stop after this many updates, 0 runs all epochs");
  }

  std::pair<model::ModelConfig, trainer::TrainPlan> resolve(std::uint64_t seed) const {
    model::ModelConfig m = preset == "paper" ? model::ModelConfig::paper_preset() : model::ModelConfig::desk_preset();
    if (!variant.empty()) m.variant = model::parse_variant(variant);
    if (!arch.empty()) m.arch = model::parse_arch(arch);
    trainer::TrainPlan p =
        preset == "paper" ? trainer::TrainPlan::paper_preset(m.variant, m.arch) : trainer::TrainPlan::desk_preset(m.arch);
    if (!config.empty()) {
      require_file(config, "config");
      trainer::apply_ini(config, m, p);
    }
    if (!variant.empty()) {
      m.variant = model::parse_variant(variant);
      m.label_smoothing = model::default_label_smoothing(m.variant);
    }
    if (!arch.empty()) {
      m.arch = model::parse_arch(arch);
      p.schedule = m.arch == model::Arch::Transformer ? trainer::Schedule::Noam : trainer::Schedule::Fixed;
    }
    if (!injection.empty()) m.injection = model::parse_injection(injection);
    if (epochs > 0) p.epochs = epochs;
    if (max_tokens > 0) p.max_tokens = max_tokens;
    if (accumulate > 0) p.accumulate = accumulate;
    if (clip >= 0.0) p.clip_norm = clip;
    if (max_steps >= 0) p.max_steps = max_steps;
    p.seed = seed;
    m.init_seed = seed;
    return {m, p};
  }
};

corpus::ParallelCorpus load_pairs(const fs::path& tsv, const fs::path& l1, const fs::path& l2,
                                  const corpus::Tokenizer& tok, int min_len, int max_len) {
  if (!tsv.empty()) {
    require_file(tsv, "parallel TSV");
    return corpus::load_parallel_tsv(tsv, tok, min_len, max_len);
  }
  if (l1.empty() || l2.empty()) throw UsageError("give --tsv or both --l1 and --l2");
  require_file(l1, "L1 file");
  require_file(l2, "L2 file");
  return corpus::load_parallel(l1, l2, tok, min_len, max_len);
}

std::vector<evaluation::StsExample> pooled(std::span<const evaluation::StsDataset> datasets) {
  std::vector<evaluation::StsExample> pool;
  for (const auto& d : datasets) pool.insert(pool.end(), d.examples.begin(), d.examples.end());
  return pool;
}

void write_sts_tsv(const fs::path& path, std::span<const evaluation::StsExample> ex) {
  auto os = open_out(path);
  for (const auto& e : ex) os << e.gold << '\t' << e.s1 << '\t' << e.s2 << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bilingual generative transformer: training, embedding and evaluation"};
  app.require_subcommand(1);
  app.failure_message(CLI::FailureMessage::help);
  std::uint64_t seed = 1;
  app.add_option("--seed", seed, "seed for all randomness")->default_val(1);

  // tokenizer-train
  auto* tt = app.add_subcommand("tokenizer-train", "learn a joint BPE vocabulary from text files");
  std::vector<fs::path> tt_inputs;
  std::string tt_preset = "desk";
  int tt_vocab = 0;
  fs::path tt_out;
  tt->add_option("inputs", tt_inputs, "text files, one sentence per line")->required();
  tt->add_option("--preset", tt_preset, "paper (20k) or desk (1k) vocabulary")->check(CLI::IsMember({"paper", "desk"}));
  tt->add_option("--vocab", tt_vocab, "vocabulary size, overrides the preset");
  tt->add_option("--out", tt_out, "tokenizer file")->required();

  // train
  auto* tr = app.add_subcommand("train", "train a model on a parallel corpus");
  ModelFlags tr_flags;
  tr_flags.add(tr);
  fs::path tr_tok, tr_tsv, tr_l1, tr_l2, tr_out, tr_resume;
  int tr_min_len = 5, tr_max_len = 100;
  tr->add_option("--tokenizer", tr_tok, "tokenizer file")->required();
  tr->add_option("--tsv", tr_tsv, "parallel TSV, L1<TAB>L2");
  tr->add_option("--l1", tr_l1, "L1 side, one sentence per line");
  tr->add_option("--l2", tr_l2, "L2 side, aligned with --l1");
  tr->add_option("--min-len", tr_min_len, "minimum tokens per side");
  tr->add_option("--max-len", tr_max_len, "maximum tokens per side");
  tr->add_option("--resume", tr_resume, "checkpoint to resume from");
  tr->add_option("--out", tr_out, "output directory")->required();

  // embed
  auto* em = app.add_subcommand("embed", "write sentence embeddings");
  fs::path em_ckpt, em_tok, em_in, em_out;
  std::string em_role = "semantic";
  bool em_random = false;
  em->add_option("checkpoint", em_ckpt, "model checkpoint")->required();
  em->add_option("input", em_in, "sentences, one per line")->required();
  em->add_option("--tokenizer", em_tok, "tokenizer file");
  em->add_option("--encoder", em_role, "semantic, lang-l1 or lang-l2");
  em->add_flag("--random-baseline", em_random, "tag the output as a random-encoder baseline");
  em->add_option("--out", em_out, "embedding file")->required();

  // sts-eval
  auto* se = app.add_subcommand("sts-eval", "Pearson r of cosine similarity on STS datasets");
  fs::path se_dir, se_ckpt, se_tok, se_out;
  se->add_option("sts-dir", se_dir, "directory of <year>/<dataset>.tsv")->required();
  se->add_option("checkpoint", se_ckpt, "model checkpoint")->required();
  se->add_option("--tokenizer", se_tok, "tokenizer file");
  se->add_option("--out", se_out, "JSON report");

  // hard-sts
  auto* hs = app.add_subcommand("hard-sts", "build hard STS splits from pooled datasets");
  fs::path hs_dir, hs_out, hs_ckpt, hs_tok;
  bool hs_grid = false;
  hs->add_option("sts-dir", hs_dir, "directory of <year>/<dataset>.tsv")->required();
  hs->add_flag("--grid", hs_grid, "also build the extended grid of splits");
  hs->add_option("--checkpoint", hs_ckpt, "score each split with this model");
  hs->add_option("--tokenizer", hs_tok, "tokenizer file");
  hs->add_option("--out", hs_out, "output directory")->required();

  // negation-split
  auto* ns = app.add_subcommand("negation-split", "pairs where exactly one sentence is negated");
  fs::path ns_dir, ns_out;
  ns->add_option("sts-dir", ns_dir, "directory of <year>/<dataset>.tsv")->required();
  ns->add_option("--out", ns_out, "output TSV")->required();

  // probe
  auto* pr = app.add_subcommand("probe", "train a probing classifier on frozen embeddings");
  fs::path pr_ckpt, pr_tok, pr_data, pr_out;
  std::string pr_role = "semantic";
  evaluation::ProbeConfig pr_cfg;
  bool pr_logistic = false;
  pr->add_option("checkpoint", pr_ckpt, "model checkpoint")->required();
  pr->add_option("data", pr_data, "probing file, split<TAB>label<TAB>sentence")->required();
  pr->add_option("--tokenizer", pr_tok, "tokenizer file");
  pr->add_option("--encoder", pr_role, "semantic, lang-l1 or lang-l2");
  pr->add_option("--hidden", pr_cfg.hidden, "hidden units");
  pr->add_flag("--logistic", pr_logistic, "logistic regression instead of an MLP");
  pr->add_option("--max-epochs", pr_cfg.max_epochs, "epoch limit");
  pr->add_option("--patience", pr_cfg.patience, "epochs without validation gain before stopping");
  pr->add_option("--out", pr_out, "JSON result");

  // build-probe-tasks
  auto* bp = app.add_subcommand("build-probe-tasks", "punctuation and article-gender probing tasks");
  fs::path bp_in, bp_out;
  std::string bp_lang;
  std::size_t bp_cap = 20000;
  bp->add_option("input", bp_in, "sentences, one per line")->required();
  bp->add_option("--gender-lang", bp_lang, "also build the gender task: fr or es")
      ->check(CLI::IsMember({"fr", "es"}));
  bp->add_option("--cap", bp_cap, "examples kept per label");
  bp->add_option("--out", bp_out, "output directory")->required();

  // generate
  auto* ge = app.add_subcommand("generate", "translate sentences by decoding the semantic latent");
  fs::path ge_ckpt, ge_tok, ge_in, ge_out;
  std::string ge_side = "l2";
  int ge_beam = 1, ge_len = 100;
  ge->add_option("checkpoint", ge_ckpt, "model checkpoint")->required();
  ge->add_option("input", ge_in, "source sentences, one per line")->required();
  ge->add_option("--tokenizer", ge_tok, "tokenizer file");
  ge->add_option("--side", ge_side, "target language: l1 or l2");
  ge->add_option("--beam", ge_beam, "beam width, 1 is greedy")->check(CLI::PositiveNumber);
  ge->add_option("--max-len", ge_len, "maximum output tokens")->check(CLI::PositiveNumber);
  ge->add_option("--out", ge_out, "output file")->required();

  // style-transfer
  auto* st = app.add_subcommand("style-transfer", "decode source meaning with the style of another sentence");
  fs::path st_ckpt, st_tok, st_src, st_style, st_out;
  std::string st_side = "l1";
  int st_beam = 1, st_len = 100;
  st->add_option("checkpoint", st_ckpt, "model checkpoint")->required();
  st->add_option("--source", st_src, "source sentences")->required();
  st->add_option("--style", st_style, "style sentences, aligned with --source")->required();
  st->add_option("--tokenizer", st_tok, "tokenizer file");
  st->add_option("--side", st_side, "language of the style sentences: l1 or l2");
  st->add_option("--beam", st_beam, "beam width")->check(CLI::PositiveNumber);
  st->add_option("--max-len", st_len, "maximum output tokens")->check(CLI::PositiveNumber);
  st->add_option("--out", st_out, "output file")->required();

  // synth-gen
  auto* sg = app.add_subcommand("synth-gen", "generate a synthetic parallel corpus with planted factors");
  fs::path sg_grammar, sg_out;
  int sg_pairs = 5000;
  sg->add_option("--grammar", sg_grammar, "grammar JSON");
  sg->add_option("--pairs", sg_pairs, "number of pairs")->check(CLI::PositiveNumber);
  sg->add_option("--out", sg_out, "output directory")->required();

  // synth-experiment
  auto* sx = app.add_subcommand("synth-experiment", "source-separation probes on the synthetic corpus");
  fs::path sx_config, sx_out;
  std::string sx_seeds = "1,2,3";
  std::string sx_injections;
  std::string sx_preset = "desk";
  int sx_train_pairs = 0, sx_epochs = 0;
  sx->add_option("--config", sx_config, "experiment JSON");
  sx->add_option("--preset", sx_preset, "desk or ablation (recurrent translation model)")
      ->check(CLI::IsMember({"desk", "ablation"}));
  sx->add_option("--seeds", sx_seeds, "comma-separated seeds");
  sx->add_option("--injections", sx_injections, "comma-separated injection sets; runs the ablation instead");
  sx->add_option("--train-pairs", sx_train_pairs, "training pairs");
  sx->add_option("--epochs", sx_epochs, "training epochs");
  sx->add_option("--out", sx_out, "output directory")->required();

  // batch-sweep
  auto* bs = app.add_subcommand("batch-sweep", "train one model per batch size and score each");
  ModelFlags bs_flags;
  bs_flags.add(bs);
  std::vector<int> bs_sizes;
  fs::path bs_tok, bs_tsv, bs_l1, bs_l2, bs_sts, bs_out;
  int bs_synth = 0;
  bs->add_option("--sizes", bs_sizes, "tokens per batch")->required()->delimiter(',');
  bs->add_option("--tokenizer", bs_tok, "tokenizer file for a real corpus");
  bs->add_option("--tsv", bs_tsv, "parallel TSV");
  bs->add_option("--l1", bs_l1, "L1 side");
  bs->add_option("--l2", bs_l2, "L2 side");
  bs->add_option("--sts", bs_sts, "STS directory used for scoring");
  bs->add_option("--synthetic", bs_synth, "train on this many synthetic pairs and score on the synthetic STS proxy");
  bs->add_option("--out", bs_out, "JSON result")->required();

  // grad-check
  auto* gc = app.add_subcommand("grad-check", "compare loss gradients with finite differences");
  std::string gc_variant = "BGT", gc_arch = "transformer";
  gc->add_option("--variant", gc_variant, "training variant");
  gc->add_option("--arch", gc_arch, "transformer or recurrent");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*tt) {
      for (const auto& p : tt_inputs) require_file(p, "input");
      const int vocab = tt_vocab > 0 ? tt_vocab : (tt_preset == "paper" ? 20000 : 1000);
      json cfg{{"inputs", json::array()}, {"vocab", vocab}, {"out", tt_out.string()}};
      for (const auto& p : tt_inputs) cfg["inputs"].push_back(p.string());
      log_config("tokenizer-train", cfg);
      std::vector<std::string> lines;
      for (const auto& p : tt_inputs) {
        auto l = corpus::read_lines(p);
        lines.insert(lines.end(), l.begin(), l.end());
      }
      auto tok = corpus::Tokenizer::train(lines, vocab);
      if (tt_out.has_parent_path()) fs::create_directories(tt_out.parent_path());
      tok.save(tt_out);
      std::cout << "vocabulary " << tok.vocab_size() << " pieces, " << tok.merges().size() << " merges\n";
    } else if (*tr) {
      require_file(tr_tok, "tokenizer");
      auto tok = corpus::Tokenizer::load(tr_tok);
      auto [mcfg, plan] = tr_flags.resolve(seed);
      mcfg.vocab_size = tok.vocab_size();
      plan.out_dir = tr_out;
      mcfg.validate();
      plan.validate();
      if (!tr_resume.empty()) require_file(tr_resume, "resume checkpoint");
      auto data = load_pairs(tr_tsv, tr_l1, tr_l2, tok, tr_min_len, tr_max_len);
      if (data.pairs.empty()) throw UsageError("no pairs survive length filtering");
      log_config("train", {{"model", mcfg},
                           {"train", plan},
                           {"seed", seed},
                           {"pairs", data.stats.kept},
                           {"dropped", data.stats.dropped}});
      fs::create_directories(tr_out);
      tok.save(tr_out / "tokenizer.txt");
      model::BgtModel m(mcfg);
      trainer::Trainer t(plan, m, data.pairs, tok.fingerprint());
      if (!tr_resume.empty()) t.resume(tr_resume);
      auto report = t.run();
      for (std::size_t e = 0; e < report.epoch_mean_loss.size(); ++e)
        std::cout << "epoch " << e + 1 << " mean loss " << report.epoch_mean_loss[e] << '\n';
      std::cout << "steps " << report.steps << ", checkpoint " << (tr_out / "last.ckpt").string() << '\n';
    } else if (*em) {
      require_file(em_in, "input");
      auto lm = load_trained(em_ckpt, em_tok);
      const auto role = parse_role(em_role);
      log_config("embed", {{"checkpoint", em_ckpt.string()}, {"input", em_in.string()}, {"encoder", em_role},
                           {"random_baseline", em_random}, {"out", em_out.string()}});
      auto lines = corpus::read_lines(em_in);
      auto ids = encode_lines(lm.tok, lines);
      auto embs = inference::embed_all(*lm.model, ids, role, em_random);
      auto os = open_out(em_out);
      inference::write_embeddings(os, embs);
      std::cout << embs.size() << " embeddings of dimension " << lm.model->config().latent_dim << '\n';
    } else if (*se) {
      require_dir(se_dir, "STS directory");
      auto lm = load_trained(se_ckpt, se_tok);
      log_config("sts-eval", {{"sts_dir", se_dir.string()}, {"checkpoint", se_ckpt.string()},
                              {"out", se_out.string()}});
      auto datasets = evaluation::load_sts_dir(se_dir);
      auto report = evaluation::evaluate_sts(*lm.model, lm.tok, datasets);
      std::cout << report.table();
      if (!se_out.empty()) open_out(se_out) << report.to_json().dump(2) << '\n';
    } else if (*hs) {
      require_dir(hs_dir, "STS directory");
      std::optional<LoadedModel> lm;
      if (!hs_ckpt.empty()) lm = load_trained(hs_ckpt, hs_tok);
      log_config("hard-sts", {{"sts_dir", hs_dir.string()}, {"grid", hs_grid}, {"checkpoint", hs_ckpt.string()},
                              {"out", hs_out.string()}});
      auto pool = evaluation::unique_pairs(pooled(evaluation::load_sts_dir(hs_dir)));
      std::vector<evaluation::HardSplitSpec> specs{evaluation::HardSplitSpec::hard_positive(),
                                                   evaluation::HardSplitSpec::hard_negative()};
      if (hs_grid) {
        auto grid = evaluation::HardSplitSpec::extended_grid();
        specs.insert(specs.end(), grid.begin(), grid.end());
      }
      fs::create_directories(hs_out);
      json summary = json::array();
      for (const auto& spec : specs) {
        auto split = evaluation::build_hard_splits(pool, spec);
        write_sts_tsv(hs_out / (spec.name + ".tsv"), split);
        json row{{"split", spec.name}, {"n", split.size()}};
        std::cout << spec.name << "\t" << split.size();
        if (lm && split.size() >= 2) {
          std::vector<double> golds;
          for (const auto& e : split) golds.push_back(e.gold);
          const double r = evaluation::pearson(evaluation::cosine_scores(*lm->model, lm->tok, split), golds);
          row["r"] = r;
          std::cout << "\t" << r;
        }
        std::cout << '\n';
        summary.push_back(row);
      }
      open_out(hs_out / "summary.json") << summary.dump(2) << '\n';
    } else if (*ns) {
      require_dir(ns_dir, "STS directory");
      log_config("negation-split", {{"sts_dir", ns_dir.string()}, {"out", ns_out.string()}});
      auto split = evaluation::build_negation_split(evaluation::unique_pairs(pooled(evaluation::load_sts_dir(ns_dir))));
      write_sts_tsv(ns_out, split);
      std::cout << split.size() << " pairs\n";
    } else if (*pr) {
      require_file(pr_data, "probing file");
      auto lm = load_trained(pr_ckpt, pr_tok);
      const auto role = parse_role(pr_role);
      if (pr_logistic) pr_cfg.hidden = 0;
      pr_cfg.seed = seed;
      log_config("probe", {{"checkpoint", pr_ckpt.string()}, {"data", pr_data.string()}, {"encoder", pr_role},
                           {"hidden", pr_cfg.hidden}, {"max_epochs", pr_cfg.max_epochs},
                           {"patience", pr_cfg.patience}, {"seed", seed}});
      std::ifstream is(pr_data);
      auto examples = evaluation::read_probing(is);
      std::vector<std::string> sentences, labels;
      std::vector<evaluation::ProbeSplit> splits;
      for (const auto& e : examples) {
        sentences.push_back(e.sentence);
        labels.push_back(e.label);
        splits.push_back(e.split);
      }
      auto embs = inference::embed_all(*lm.model, encode_lines(lm.tok, sentences), role);
      std::vector<Eigen::VectorXd> feats;
      for (auto& e : embs) feats.push_back(std::move(e.vector));
      auto res = evaluation::probe(feats, labels, splits, pr_cfg);
      json out{{"test_accuracy", res.test_accuracy}, {"valid_accuracy", res.valid_accuracy},
               {"majority_rate", res.majority_rate}, {"best_epoch", res.best_epoch}, {"classes", res.classes}};
      std::cout << out.dump(2) << '\n';
      if (!pr_out.empty()) open_out(pr_out) << out.dump(2) << '\n';
    } else if (*bp) {
      require_file(bp_in, "input");
      log_config("build-probe-tasks", {{"input", bp_in.string()}, {"gender_lang", bp_lang}, {"cap", bp_cap},
                                       {"seed", seed}, {"out", bp_out.string()}});
      auto lines = corpus::read_lines(bp_in);
      auto tasks = evaluation::build_punct_tasks(lines, seed, bp_cap);
      fs::create_directories(bp_out);
      {
        auto os = open_out(bp_out / "punct_number.tsv");
        evaluation::write_probing(os, tasks.number);
      }
      {
        auto os = open_out(bp_out / "punct_first.tsv");
        evaluation::write_probing(os, tasks.first);
      }
      std::cout << "punct_number " << tasks.number.size() << ", punct_first " << tasks.first.size() << '\n';
      if (!bp_lang.empty()) {
        auto gender = evaluation::build_gender_task(lines, evaluation::article_swaps(bp_lang), seed);
        auto os = open_out(bp_out / "gender.tsv");
        evaluation::write_probing(os, gender);
        std::cout << "gender " << gender.size() << '\n';
      }
    } else if (*ge) {
      require_file(ge_in, "input");
      auto lm = load_trained(ge_ckpt, ge_tok);
      const auto side = parse_side(ge_side);
      log_config("generate", {{"checkpoint", ge_ckpt.string()}, {"input", ge_in.string()}, {"side", ge_side},
                              {"beam", ge_beam}, {"max_len", ge_len}, {"out", ge_out.string()}});
      auto os = open_out(ge_out);
      for (const auto& line : corpus::read_lines(ge_in))
        os << lm.tok.decode(inference::translate(*lm.model, lm.tok.encode(line), side, ge_len, ge_beam)) << '\n';
    } else if (*st) {
      require_file(st_src, "source file");
      require_file(st_style, "style file");
      auto lm = load_trained(st_ckpt, st_tok);
      const auto side = parse_side(st_side);
      auto src = corpus::read_lines(st_src);
      auto sty = corpus::read_lines(st_style);
      if (src.size() != sty.size()) throw UsageError("--source and --style differ in line count");
      log_config("style-transfer", {{"checkpoint", st_ckpt.string()}, {"source", st_src.string()},
                                    {"style", st_style.string()}, {"side", st_side}, {"beam", st_beam},
                                    {"max_len", st_len}, {"out", st_out.string()}});
      auto os = open_out(st_out);
      for (std::size_t i = 0; i < src.size(); ++i)
        os << lm.tok.decode(inference::style_transfer(*lm.model, lm.tok.encode(src[i]), lm.tok.encode(sty[i]), side,
                                                      st_len, st_beam))
           << '\n';
    } else if (*sg) {
      synthlab::SynthGrammar g;
      if (!sg_grammar.empty()) {
        require_file(sg_grammar, "grammar");
        g = json::parse(std::ifstream(sg_grammar)).get<synthlab::SynthGrammar>();
      }
      g.validate();
      log_config("synth-gen", {{"grammar", g}, {"pairs", sg_pairs}, {"seed", seed}, {"out", sg_out.string()}});
      auto pairs = synthlab::gen_corpus(g, sg_pairs, seed);
      fs::create_directories(sg_out);
      auto o1 = open_out(sg_out / "l1.txt");
      auto o2 = open_out(sg_out / "l2.txt");
      auto of = open_out(sg_out / "factors.tsv");
      of << "topic\tlength\tpunct_l1\tpunct_l2\tfiller_l1\tfiller_l2\tgender_l2\n";
      for (const auto& p : pairs) {
        o1 << p.l1 << '\n';
        o2 << p.l2 << '\n';
        const auto& f = p.factors;
        of << f.topic << '\t' << f.length << '\t' << f.punct[0] << '\t' << f.punct[1] << '\t' << f.filler[0] << '\t'
           << f.filler[1] << '\t' << f.gender << '\n';
      }
      std::cout << pairs.size() << " pairs\n";
    } else if (*sx) {
      auto cfg = sx_preset == "ablation" ? synthlab::ExperimentConfig::recurrent_ablation()
                                         : synthlab::ExperimentConfig::desk();
      if (!sx_config.empty()) {
        require_file(sx_config, "experiment config");
        cfg = json::parse(std::ifstream(sx_config)).get<synthlab::ExperimentConfig>();
      }
      if (sx_train_pairs > 0) cfg.train_pairs = sx_train_pairs;
      if (sx_epochs > 0) cfg.plan.epochs = sx_epochs;
      cfg.grammar.validate();
      auto seeds = parse_seeds(sx_seeds);
      std::vector<model::InjectionSet> injections;
      if (!sx_injections.empty()) {
        std::stringstream ss(sx_injections);
        std::string item;
        while (std::getline(ss, item, ',')) injections.push_back(model::parse_injection(item));
      }
      log_config("synth-experiment", {{"experiment", cfg}, {"seeds", seeds}, {"injections", sx_injections},
                                      {"out", sx_out.string()}});
      fs::create_directories(sx_out);
      auto progress = [](const std::string& msg) { std::cerr << msg << '\n'; };
      if (!injections.empty()) {
        auto rows = synthlab::run_injection_ablation(cfg, injections, seeds, progress);
        json out = json::array();
        for (const auto& r : rows) {
          out.push_back({{"injection", r.injection}, {"seed", r.seed}, {"topic_accuracy", r.topic_accuracy}});
          std::cout << r.injection << "\tseed " << r.seed << "\t" << r.topic_accuracy << '\n';
        }
        open_out(sx_out / "ablation.json") << out.dump(2) << '\n';
      } else {
        auto report = synthlab::run_separation_experiment(cfg, seeds, progress);
        std::cout << report.table();
        open_out(sx_out / "report.json") << report.to_json().dump(2) << '\n';
      }
    } else if (*bs) {
      auto [mcfg, plan] = bs_flags.resolve(seed);
      std::sort(bs_sizes.begin(), bs_sizes.end());
      for (int s : bs_sizes)
        if (s <= 0) throw UsageError("batch sizes must be positive");
      std::vector<corpus::ParallelPair> pairs;
      std::function<double(const model::BgtModel&)> eval;
      corpus::Tokenizer tok;
      std::vector<evaluation::StsDataset> sts;
      std::vector<evaluation::StsExample> proxy;
      if (bs_synth > 0) {
        auto synth = synthlab::gen_corpus(synthlab::SynthGrammar{}, bs_synth, seed);
        tok = synthlab::synth_tokenizer(synth);
        pairs = synthlab::tokenize_pairs(tok, synth);
        proxy = synthlab::synthetic_sts(synthlab::SynthGrammar{}, 500, seed + 1);
        eval = [&](const model::BgtModel& m) {
          std::vector<double> golds;
          for (const auto& e : proxy) golds.push_back(e.gold);
          return evaluation::pearson(evaluation::cosine_scores(m, tok, proxy), golds);
        };
      } else {
        require_file(bs_tok, "tokenizer");
        require_dir(bs_sts, "STS directory");
        tok = corpus::Tokenizer::load(bs_tok);
        pairs = load_pairs(bs_tsv, bs_l1, bs_l2, tok, 5, 100).pairs;
        sts = evaluation::load_sts_dir(bs_sts);
        eval = [&](const model::BgtModel& m) { return evaluation::evaluate_sts(m, tok, sts).overall; };
      }
      if (pairs.empty()) throw UsageError("no training pairs");
      mcfg.vocab_size = tok.vocab_size();
      mcfg.validate();
      plan.validate();
      log_config("batch-sweep", {{"model", mcfg}, {"train", plan}, {"sizes", bs_sizes}, {"synthetic", bs_synth},
                                 {"seed", seed}, {"out", bs_out.string()}});
      auto rows = trainer::batch_size_sweep(plan, mcfg, pairs, bs_sizes, eval);
      json out = json::array();
      for (const auto& r : rows) {
        out.push_back({{"max_tokens", r.max_tokens}, {"score", r.score}, {"steps", r.steps}});
        std::cout << r.max_tokens << "\t" << r.score << "\t" << r.steps << '\n';
      }
      open_out(bs_out) << out.dump(2) << '\n';
    } else if (*gc) {
      model::ModelConfig cfg = model::ModelConfig::desk_preset();
      cfg.variant = model::parse_variant(gc_variant);
      cfg.arch = model::parse_arch(gc_arch);
      cfg.model_dim = 8;
      cfg.ffn_dim = 16;
      cfg.heads = 2;
      cfg.latent_dim = 8;
      cfg.vocab_size = 50;
      cfg.enc_layers = 1;
      cfg.dec_layers = 1;
      cfg.init_seed = seed;
      cfg.validate();
      log_config("grad-check", {{"model", cfg}, {"seed", seed}});
      model::BgtModel m(cfg);
      std::mt19937_64 rng(seed);
      std::uniform_int_distribution<int> tokd(4, cfg.vocab_size - 1), lend(3, 6);
      std::vector<corpus::ParallelPair> pairs(2);
      for (int i = 0; i < 2; ++i) {
        pairs[i].index = i;
        for (int n = lend(rng); n > 0; --n) pairs[i].src.push_back(tokd(rng));
        for (int n = lend(rng); n > 0; --n) pairs[i].tgt.push_back(tokd(rng));
      }
      auto batch = corpus::make_batch(pairs);
      auto noise = objective::LatentNoise::draw(2, cfg.latent_dim, rng);
      auto params = m.parameters().all();
      const auto t0 = std::chrono::steady_clock::now();
      const double err = compute::grad_check(
          [&](compute::Graph& g) { return objective::elbo_loss(g, m, batch, noise, 0.5).total; }, params);
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      std::cout << "max relative error " << err << " (" << secs << " s)\n";
      return err <= 1e-3 ? 0 : 1;
    }
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
