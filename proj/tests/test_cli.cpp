#include "doctest.h"

#include "bgt/checkpoint.hpp"
#include "bgt/inference.hpp"
#include "oracles.hpp"

#include <nlohmann/json.hpp>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace fs = std::filesystem;
using namespace bgt;

namespace {

struct RunResult {
  int code = 0;
  std::string out;
};

RunResult run(const std::string& args) {
  const fs::path capture = fs::temp_directory_path() / "bgt_cli_stdout.txt";
  const std::string cmd = std::string(BGT_CLI_PATH) + " " + args + " > " + capture.string() + " 2>/dev/null";
  const int status = std::system(cmd.c_str());
  std::ifstream is(capture);
  std::stringstream ss;
  ss << is.rdbuf();
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, ss.str()};
}

fs::path fresh_dir(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("bgt_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("usage and unknown commands") {
  auto help = run("--help");
  CHECK(help.code == 0);
  for (const char* sub : {"tokenizer-train", "train", "embed", "sts-eval", "hard-sts", "negation-split", "probe",
                          "build-probe-tasks", "generate", "style-transfer", "synth-gen", "synth-experiment",
                          "batch-sweep", "grad-check"})
    CHECK_MESSAGE(help.out.find(sub) != std::string::npos, sub);
  CHECK(run("frobnicate").code != 0);
  CHECK(run("").code != 0);
  CHECK(run("synth-gen --bogus 1 --out x").code != 0);
}

TEST_CASE("flags are validated before anything is written") {
  auto dir = fresh_dir("validate");
  CHECK(run("embed " + (dir / "missing.ckpt").string() + " " + (dir / "none.txt").string() + " --out " +
            (dir / "e.txt").string())
            .code != 0);
  CHECK_FALSE(fs::exists(dir / "e.txt"));
  CHECK(run("negation-split " + (dir / "nodir").string() + " --out " + (dir / "n.tsv").string()).code != 0);
  CHECK_FALSE(fs::exists(dir / "n.tsv"));
}

TEST_CASE("identical seeds give identical files") {
  auto dir = fresh_dir("determinism");
  REQUIRE(run("--seed 4 synth-gen --pairs 50 --out " + (dir / "a").string()).code == 0);
  REQUIRE(run("--seed 4 synth-gen --pairs 50 --out " + (dir / "b").string()).code == 0);
  REQUIRE(run("--seed 5 synth-gen --pairs 50 --out " + (dir / "c").string()).code == 0);
  CHECK(slurp(dir / "a/l1.txt") == slurp(dir / "b/l1.txt"));
  CHECK(slurp(dir / "a/factors.tsv") == slurp(dir / "b/factors.tsv"));
  CHECK(slurp(dir / "a/l1.txt") != slurp(dir / "c/l1.txt"));
}

TEST_CASE("sts-eval end to end") {
  auto dir = fresh_dir("sts");
  const std::vector<std::pair<std::string, std::string>> pairs{{"a cat sat", "the cat sat"},
                                                               {"dogs run fast", "a dog is running"},
                                                               {"it rains", "the sun is out"},
                                                               {"she reads", "she is reading a book"},
                                                               {"cold water", "hot tea"}};
  const std::vector<double> golds{4.8, 3.5, 0.4, 3.9, 1.2};
  fs::create_directories(dir / "sts/2016");
  {
    std::ofstream os(dir / "sts/2016/toy.tsv");
    for (std::size_t i = 0; i < pairs.size(); ++i)
      os << golds[i] << '\t' << pairs[i].first << '\t' << pairs[i].second << '\n';
  }
  std::vector<std::string> text;
  for (const auto& [a, b] : pairs) {
    text.push_back(a);
    text.push_back(b);
  }
  auto tok = corpus::Tokenizer::train(text, 60);
  model::ModelConfig cfg;
  cfg.model_dim = 8;
  cfg.ffn_dim = 8;
  cfg.heads = 2;
  cfg.latent_dim = 6;
  cfg.enc_layers = 1;
  cfg.vocab_size = tok.vocab_size();
  model::BgtModel m(cfg);
  fs::create_directories(dir / "model");
  tok.save(dir / "model/tokenizer.txt");
  model::save_checkpoint(dir / "model/last.ckpt", m, tok.fingerprint(), model::TrainingCursor{1, 1, 0});

  auto res = run("sts-eval " + (dir / "sts").string() + " " + (dir / "model/last.ckpt").string() + " --out " +
                 (dir / "report.json").string());
  REQUIRE(res.code == 0);
  CHECK(res.out.find("toy") != std::string::npos);

  std::vector<double> cos;
  for (const auto& [a, b] : pairs) {
    const Eigen::VectorXd u = inference::embed(m, tok.encode(a)).vector;
    const Eigen::VectorXd v = inference::embed(m, tok.encode(b)).vector;
    cos.push_back(u.dot(v) / (u.norm() * v.norm()));
  }
  const double expected = oracle::pearson(cos, golds);
  auto report = nlohmann::json::parse(slurp(dir / "report.json"));
  const double r = report["datasets"][0]["r"].get<double>();
  CHECK(r == doctest::Approx(expected).epsilon(1e-12));
  CHECK(report["overall"].get<double>() == doctest::Approx(expected).epsilon(1e-12));

  // A tokenizer that does not match the checkpoint is refused.
  corpus::Tokenizer::train(text, 40).save(dir / "other.txt");
  CHECK(run("sts-eval " + (dir / "sts").string() + " " + (dir / "model/last.ckpt").string() + " --tokenizer " +
            (dir / "other.txt").string())
            .code != 0);
}

TEST_CASE("grad-check subcommand") {
  auto res = run("grad-check");
  CHECK(res.code == 0);
  CHECK(res.out.find("max relative error") != std::string::npos);
}
