#include "doctest.h"

#include "bgt/corpus.hpp"

#include <filesystem>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

using namespace bgt::corpus;

namespace {

const std::string M{kWordMarker};

std::vector<std::string> sample_corpus() {
  return {"the cat sat on the mat", "the dog sat on the log", "a cat and a dog",
          "hello world", "the world is round", "cats and dogs sat together"};
}

std::filesystem::path temp_file(const std::string& name, const std::string& content) {
  auto dir = std::filesystem::temp_directory_path() / "bgt_test_corpus";
  std::filesystem::create_directories(dir);
  auto p = dir / name;
  std::ofstream(p) << content;
  return p;
}

}  // namespace

TEST_CASE("hand-simulated merges on a two-word corpus") {
  // Words become [▁ a a a b] and [▁ a a b]. Pair counts: (a,a)=3, (▁,a)=2, (a,b)=2.
  // After merging (a,a): [▁ aa a b], [▁ aa b] -> (▁,aa)=2 and every other pair once.
  // After merging (▁,aa): no pair occurs twice, so training stops.
  std::vector<std::string> corpus{"aaab", "aab"};
  Tokenizer tok = Tokenizer::train(corpus, 100);
  REQUIRE(tok.merges().size() == 2);
  CHECK(tok.merges()[0].left == "a");
  CHECK(tok.merges()[0].right == "a");
  CHECK(tok.merges()[0].frequency == 3);
  CHECK(tok.merges()[1].left == M);
  CHECK(tok.merges()[1].right == "aa");
  CHECK(tok.merges()[1].frequency == 2);

  auto ids = tok.encode("aaab");
  std::vector<std::string> pieces;
  for (int id : ids) pieces.push_back(tok.piece(id));
  CHECK(pieces == std::vector<std::string>{M + "aa", "a", "b"});
  CHECK(tok.decode(ids) == "aaab");

  SUBCASE("vocabulary budget stops merging early") {
    // specials + {▁, a, b} + one merge
    Tokenizer small = Tokenizer::train(corpus, kNumSpecials + 3 + 1);
    CHECK(small.merges().size() == 1);
    CHECK(small.vocab_size() == 8);
  }
}

TEST_CASE("equal-frequency pairs break ties lexicographically") {
  std::vector<std::string> corpus{"xy xy zw zw"};
  Tokenizer tok = Tokenizer::train(corpus, kNumSpecials + 5 + 1);
  REQUIRE(tok.merges().size() == 1);
  // (▁,x), (x,y), (▁,z), (z,w) all occur twice; "x" < "z" < "▁" in byte order.
  CHECK(tok.merges()[0].left == "x");
  CHECK(tok.merges()[0].right == "y");
}

TEST_CASE("training preconditions") {
  std::vector<std::string> empty;
  CHECK_THROWS_AS(Tokenizer::train(empty, 100), CorpusError);
  std::vector<std::string> blank{"   ", ""};
  CHECK_THROWS_AS(Tokenizer::train(blank, 100), CorpusError);
  std::vector<std::string> corpus{"abc def"};
  try {
    Tokenizer::train(corpus, 5);
    FAIL("expected an error");
  } catch (const CorpusError& e) {
    CHECK(std::string(e.what()).find(std::to_string(Tokenizer::minimum_vocab_size(corpus))) != std::string::npos);
  }
}

TEST_CASE("round trip over the training character set") {
  auto corpus = sample_corpus();
  Tokenizer tok = Tokenizer::train(corpus, 60);
  for (const auto& line : corpus) CHECK(tok.decode(tok.encode(line)) == line);
  CHECK(tok.decode(tok.encode("hello world")) == "hello world");
  CHECK(tok.decode(tok.encode("  dog   cat\t")) == "dog cat");

  // Random strings over the training alphabet.
  std::string alphabet = "acdeghilmnorstuw";
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    std::string text;
    int words = std::uniform_int_distribution<int>(1, 5)(rng);
    for (int w = 0; w < words; ++w) {
      if (w > 0) text += ' ';
      int len = std::uniform_int_distribution<int>(1, 7)(rng);
      for (int i = 0; i < len; ++i) text += alphabet[std::uniform_int_distribution<std::size_t>(0, alphabet.size() - 1)(rng)];
    }
    auto ids = tok.encode(text);
    CHECK(tok.decode(ids) == text);
    CHECK(tok.encode(tok.decode(ids)) == ids);
  }
}

TEST_CASE("unknown characters map to UNK and bad ids raise") {
  Tokenizer tok = Tokenizer::train(sample_corpus(), 60);
  auto ids = tok.encode("cat Q");
  CHECK(std::find(ids.begin(), ids.end(), kUnk) != ids.end());
  std::vector<int> bad{tok.vocab_size()};
  CHECK_THROWS_AS(tok.decode(bad), CorpusError);
}

TEST_CASE("multibyte characters stay whole") {
  std::vector<std::string> corpus{"café crème", "été café"};
  Tokenizer tok = Tokenizer::train(corpus, 40);
  CHECK(tok.decode(tok.encode("café été")) == "café été");
}

TEST_CASE("tokenizer file round trip") {
  Tokenizer tok = Tokenizer::train(sample_corpus(), 60);
  std::stringstream ss;
  tok.save(ss);
  Tokenizer back = Tokenizer::load(ss);
  CHECK(back.vocab_size() == tok.vocab_size());
  CHECK(back.fingerprint() == tok.fingerprint());
  CHECK(back.encode("the cat sat") == tok.encode("the cat sat"));

  std::stringstream bad("not-a-tokenizer\n");
  CHECK_THROWS_AS(Tokenizer::load(bad), CorpusError);
}

TEST_CASE("length filter keeps boundaries and drops short sides") {
  // No pair repeats, so every character plus the word marker is one token.
  std::vector<std::string> corpus{"abcd"};
  Tokenizer tok = Tokenizer::train(corpus, Tokenizer::minimum_vocab_size(corpus));
  REQUIRE(tok.encode("abcd").size() == 5);
  std::vector<std::pair<std::string, std::string>> pairs{
      {"abcd", "dcba"},  // 5 and 5: kept
      {"ab", "abcd"},    // 3 tokens: dropped
      {"abcd", "abcdabcdabcd"},
  };
  auto pc = filter_pairs(pairs, tok, 5, 10);
  CHECK(pc.stats.kept == 1);
  CHECK(pc.stats.dropped == 2);
  CHECK(pc.pairs[0].index == 0);
}

TEST_CASE("parallel files must be line-aligned") {
  Tokenizer tok = Tokenizer::train(sample_corpus(), 60);
  auto a = temp_file("a.txt", "the cat sat on the mat\nhello world\n");
  auto b = temp_file("b.txt", "the dog sat on the log\n");
  try {
    load_parallel(a, b, tok, 1, 100);
    FAIL("expected an error");
  } catch (const CorpusError& e) {
    std::string msg = e.what();
    CHECK(msg.find("2 lines") != std::string::npos);
    CHECK_MESSAGE(msg.find("1 lines") != std::string::npos, msg);
  }
  auto c = temp_file("c.txt", "the dog sat on the log\nthe world\n");
  auto pc = load_parallel(a, c, tok, 1, 100);
  CHECK(pc.pairs.size() == 2);
  auto tsv = temp_file("d.tsv", "the cat\tthe dog\nhello\tworld\n");
  CHECK(load_parallel_tsv(tsv, tok, 1, 100).pairs.size() == 2);
}

TEST_CASE("greedy token-budget packing") {
  std::vector<ParallelPair> pairs;
  for (int i = 0; i < 3; ++i) pairs.push_back({std::vector<int>(5, 7), std::vector<int>(5, 8), i});
  auto batches = make_batches(pairs, 25, 1);
  REQUIRE(batches.size() == 2);
  CHECK(batches[0].size() == 2);
  CHECK(batches[1].size() == 1);
  CHECK(make_batches(pairs, 1000, 1).size() == 1);
  CHECK_THROWS_AS(make_batches(pairs, 9, 1), CorpusError);
}

TEST_CASE("batching invariants on random pairs") {
  std::mt19937_64 rng(12);
  std::uniform_int_distribution<int> len(1, 30);
  std::vector<ParallelPair> pairs;
  for (int i = 0; i < 101; ++i) {
    pairs.push_back({std::vector<int>(static_cast<std::size_t>(len(rng)), 9),
                     std::vector<int>(static_cast<std::size_t>(len(rng)), 10), i});
  }
  for (int budget : {60, 200, 1000}) {
    auto batches = make_batches(pairs, budget, 77);
    std::multiset<int> seen;
    int to_l1 = 0;
    for (const auto& b : batches) {
      int tokens = 0;
      for (std::size_t r = 0; r < b.size(); ++r) {
        tokens += b.src.lengths[r] + b.tgt.lengths[r];
        seen.insert(b.pair_indices[r]);
        if (b.semantic_side[r] == Side::L1) ++to_l1;
        CHECK(b.semantic_side[r] == parity_side(b.pair_indices[r]));
        // padding never touches the row's content
        const auto& p = pairs[static_cast<std::size_t>(b.pair_indices[r])];
        auto row = b.src.row(static_cast<int>(r));
        CHECK(std::vector<int>(row.begin(), row.end()) == p.src);
      }
      CHECK(tokens == b.total_tokens);
      CHECK(tokens <= budget);
    }
    CHECK(seen.size() == pairs.size());
    CHECK(std::set<int>(seen.begin(), seen.end()).size() == pairs.size());
    CHECK(to_l1 == 51);
    // determinism
    auto again = make_batches(pairs, budget, 77);
    REQUIRE(again.size() == batches.size());
    for (std::size_t i = 0; i < again.size(); ++i) CHECK(again[i].pair_indices == batches[i].pair_indices);
  }
}
