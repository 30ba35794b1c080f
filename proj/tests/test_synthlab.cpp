#include "doctest.h"

#include "bgt/checkpoint.hpp"
#include "bgt/synthlab.hpp"

#include <cmath>
#include <filesystem>
#include <set>

using namespace bgt;
using namespace bgt::synthlab;

namespace {

ExperimentConfig tiny_experiment() {
  ExperimentConfig c = ExperimentConfig::desk();
  c.train_pairs = 40;
  c.probe_pairs = 100;
  c.model.model_dim = 8;
  c.model.ffn_dim = 8;
  c.model.latent_dim = 4;
  c.plan.epochs = 1;
  c.plan.max_tokens = 400;
  c.probe.hidden = 8;
  c.probe.max_epochs = 3;
  c.probe.patience = 2;
  return c;
}

}  // namespace

TEST_CASE("grammar configuration") {
  SynthGrammar g;
  CHECK_NOTHROW(g.validate());
  nlohmann::json j = g;
  CHECK(j.get<SynthGrammar>() == g);
  j["topics"] = 7;
  CHECK(j.get<SynthGrammar>().topics == 7);
  CHECK_THROWS_AS(nlohmann::json({{"topic", 3}}).get<SynthGrammar>(), SynthError);
  SynthGrammar bad;
  bad.max_punct = 5;
  CHECK_THROWS_AS(bad.validate(), SynthError);
  bad = SynthGrammar{};
  bad.max_content = 2;
  CHECK_THROWS_AS(bad.validate(), SynthError);

  auto lex = Lexicon::build(g);
  CHECK(lex.content[0].size() == 40);
  std::set<std::string> l1(lex.content[0].begin(), lex.content[0].end());
  std::set<std::string> l2(lex.content[1].begin(), lex.content[1].end());
  CHECK(l1.size() == 40);
  CHECK(l2.size() == 40);
  for (const auto& w : l2) CHECK(l1.count(w) == 0);
}

TEST_CASE("corpus generation and the factor oracle") {
  SynthGrammar g;
  auto lex = Lexicon::build(g);
  auto a = gen_corpus(g, 1000, 3);
  auto b = gen_corpus(g, 1000, 3);
  REQUIRE(a.size() == 1000);
  std::array<std::set<int>, 5> seen;
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].l1 == b[i].l1);
    CHECK(a[i].l2 == b[i].l2);
    const Factors& f = a[i].factors;
    const auto r1 = read_factors(g, lex, a[i].l1, Side::L1);
    const auto r2 = read_factors(g, lex, a[i].l2, Side::L2);
    CHECK(r1.topic == f.topic);
    CHECK(r2.topic == f.topic);
    CHECK(r1.length == f.length);
    CHECK(r2.length == f.length);
    CHECK(r1.lemmas == a[i].lemmas);
    CHECK(r2.lemmas == a[i].lemmas);
    CHECK(r1.punct == f.punct[0]);
    CHECK(r2.punct == f.punct[1]);
    CHECK(r1.filler == f.filler[0]);
    CHECK(r2.filler == f.filler[1]);
    CHECK_FALSE(r1.gender.has_value());
    CHECK(r2.gender == f.gender);
    seen[0].insert(f.topic);
    seen[1].insert(f.length);
    seen[2].insert(f.punct[0]);
    seen[3].insert(f.punct[1]);
    seen[4].insert(f.gender);
  }
  CHECK(seen[0].size() == 5);
  CHECK(seen[1].size() == 5);
  CHECK(seen[2].size() == 3);
  CHECK(seen[3].size() == 3);
  CHECK(seen[4].size() == 2);
  CHECK(gen_corpus(g, 5, 4)[0].l1 != a[0].l1);
  CHECK_THROWS_AS(gen_corpus(g, 0, 1), SynthError);

  CHECK_THROWS_AS(read_factors(g, lex, a[0].l2, Side::L1), SynthError);
  CHECK_THROWS_AS(read_factors(g, lex, "pa , " + lex.content[0][0], Side::L1), SynthError);
  CHECK_THROWS_AS(read_factors(g, lex, "pa " + lex.content[0][0] + " " + lex.content[0][39], Side::L1), SynthError);
  CHECK(read_factors(g, lex, "ki " + lex.content[0][9] + " !", Side::L1).topic == 1);
}

TEST_CASE("word-level tokenization") {
  auto pairs = gen_corpus(SynthGrammar{}, 300, 1);
  auto tok = synth_tokenizer(pairs);
  auto ids = tokenize_pairs(tok, pairs);
  REQUIRE(ids.size() == pairs.size());
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    CHECK(ids[i].src.size() == corpus::split_whitespace(pairs[i].l1).size());
    CHECK(ids[i].tgt.size() == corpus::split_whitespace(pairs[i].l2).size());
    CHECK(tok.decode(ids[i].src) == pairs[i].l1);
  }
}

TEST_CASE("synthetic STS proxy") {
  SynthGrammar g;
  auto lex = Lexicon::build(g);
  auto ex = synthetic_sts(g, 300, 2);
  REQUIRE(ex.size() == 300);
  std::set<double> golds;
  for (const auto& e : ex) {
    CHECK(e.gold >= 0.0);
    CHECK(e.gold <= 5.0);
    golds.insert(e.gold);
    const auto a = read_factors(g, lex, e.s1, Side::L1).lemmas;
    auto w = corpus::split_whitespace(e.s2);
    // The second sentence may mix topics, so read its lemmas directly.
    std::vector<int> b;
    for (std::size_t k = 1; k < w.size(); ++k) {
      auto it = std::find(lex.content[0].begin(), lex.content[0].end(), w[k]);
      if (it != lex.content[0].end()) b.push_back(static_cast<int>(it - lex.content[0].begin()));
    }
    REQUIRE(a.size() == b.size());
    int same = 0;
    for (std::size_t k = 0; k < a.size(); ++k) same += a[k] == b[k];
    CHECK(e.gold == doctest::Approx(5.0 * same / static_cast<double>(a.size())));
  }
  CHECK(golds.size() > 10);
  auto cross = synthetic_sts(g, 20, 2, true);
  for (const auto& e : cross) CHECK(e.s2.rfind("r", 0) == 0);
}

TEST_CASE("separation measurement plumbing") {
  const auto cfg = tiny_experiment();
  std::vector<std::uint64_t> seeds{5};
  auto a = run_separation_experiment(cfg, seeds);
  auto b = run_separation_experiment(cfg, seeds);
  REQUIRE(a.runs.size() == 1);
  CHECK(a.runs[0].train_steps > 0);
  for (std::size_t r = 0; r < kRows.size(); ++r) {
    for (std::size_t c = 0; c < kColumns.size(); ++c) {
      CHECK(a.mean[r][c] == b.mean[r][c]);
      CHECK(a.mean[r][c] >= 0.0);
      CHECK(a.mean[r][c] <= 100.0);
    }
  }
  CHECK(a.to_json()["runs"][0]["seed"] == 5);
  CHECK(a.table().find("z_sem") != std::string::npos);

  // Variants without language encoders leave those rows empty.
  auto no_lang = cfg;
  no_lang.model.variant = model::TrainingVariant::BGTNoLangVars;
  auto rep = run_separation_experiment(no_lang, seeds);
  CHECK(std::isnan(rep.mean[1][0]));
  CHECK(std::isnan(rep.mean[2][4]));
  CHECK(rep.to_json()["mean"]["z_l1"]["topic"].is_null());

  std::vector<model::InjectionSet> inj{model::parse_injection("logit"), model::parse_injection("hidden")};
  auto abl = cfg;
  abl.model.arch = model::Arch::Recurrent;
  abl.model.variant = model::TrainingVariant::EnglishTrans;
  auto rows = run_injection_ablation(abl, inj, seeds);
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].injection == "logit");
  CHECK(rows[1].injection == "hidden");
}

TEST_CASE("untrained checkpoints are rejected") {
  auto pairs = gen_corpus(SynthGrammar{}, 50, 1);
  auto tok = synth_tokenizer(pairs);
  auto cfg = tiny_experiment();
  cfg.model.vocab_size = tok.vocab_size();
  model::BgtModel m(cfg.model);
  auto dir = std::filesystem::temp_directory_path() / "bgt_test_synthlab";
  std::filesystem::create_directories(dir);
  model::save_checkpoint(dir / "fresh.ckpt", m, tok.fingerprint());
  CHECK_THROWS_AS(measure_separation(dir / "fresh.ckpt", tok, pairs, cfg.probe, 1), SynthError);
  model::save_checkpoint(dir / "trained.ckpt", m, tok.fingerprint(), model::TrainingCursor{3, 1, 0});
  CHECK(measure_separation(dir / "trained.ckpt", tok, pairs, cfg.probe, 1).train_steps == 3);
  auto other = synth_tokenizer(gen_corpus(SynthGrammar{}, 5, 9));
  CHECK_THROWS_AS(measure_separation(dir / "trained.ckpt", other, pairs, cfg.probe, 1), SynthError);
}

TEST_CASE("experiment configuration round trip") {
  auto c = ExperimentConfig::desk();
  nlohmann::json j = c;
  auto back = j.get<ExperimentConfig>();
  CHECK(back.model == c.model);
  CHECK(back.plan.epochs == 30);
  CHECK(back.probe.max_epochs == c.probe.max_epochs);
  CHECK(ExperimentConfig::recurrent_ablation().model.arch == model::Arch::Recurrent);
  CHECK_THROWS_AS(nlohmann::json({{"pairs", 3}}).get<ExperimentConfig>(), SynthError);
}
