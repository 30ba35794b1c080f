#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace bgt::corpus {

class CorpusError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Side { L1 = 0, L2 = 1 };

inline constexpr int kPad = 0;
inline constexpr int kBos = 1;
inline constexpr int kEos = 2;
inline constexpr int kUnk = 3;
inline constexpr int kNumSpecials = 4;

// Word-initial boundary marker (U+2581). Every word is prefixed with it, so
// decoding is concatenation followed by marker -> space.
inline constexpr std::string_view kWordMarker = "\xE2\x96\x81";

// Splits UTF-8 text into code points; stray bytes become single-byte symbols.
std::vector<std::string> utf8_chars(std::string_view text);
std::vector<std::string> split_whitespace(std::string_view text);

struct Merge {
  std::string left;
  std::string right;
  long frequency = 0;
};

// Byte-pair-encoding subword model over a joint vocabulary.
//
// Ids 0..3 are PAD, BOS, EOS, UNK. Characters follow in byte order, then one
// piece per learned merge. Whitespace is normalized: runs collapse to a single
// space and leading/trailing whitespace is dropped.
class Tokenizer {
 public:
  // Greedy most-frequent-pair merges until vocab_size pieces exist or no pair
  // occurs at least twice. Ties go to the lexicographically smallest pair.
  static Tokenizer train(std::span<const std::string> corpus, int vocab_size);
  static int minimum_vocab_size(std::span<const std::string> corpus);

  std::vector<int> encode(std::string_view text) const;
  std::string decode(std::span<const int> ids) const;

  int vocab_size() const { return static_cast<int>(pieces_.size()); }
  const std::string& piece(int id) const;
  int id_of(const std::string& piece) const;  // kUnk when absent
  const std::vector<Merge>& merges() const { return merges_; }

  void save(std::ostream& os) const;
  void save(const std::filesystem::path& path) const;
  static Tokenizer load(std::istream& is);
  static Tokenizer load(const std::filesystem::path& path);
  // FNV-1a over the serialized form; checkpoints record it.
  std::uint64_t fingerprint() const;

 private:
  void rebuild_index();
  std::vector<std::string> apply_merges(std::vector<std::string> symbols) const;

  std::vector<std::string> pieces_;
  std::vector<std::pair<std::string, long>> chars_;
  std::vector<Merge> merges_;
  std::unordered_map<std::string, int> ids_;
  std::map<std::pair<std::string, std::string>, int> merge_rank_;
};

struct ParallelPair {
  std::vector<int> src;  // L1
  std::vector<int> tgt;  // L2
  int index = 0;

  const std::vector<int>& side(Side s) const { return s == Side::L1 ? src : tgt; }
};

struct LoadStats {
  std::size_t kept = 0;
  std::size_t dropped = 0;
};

struct ParallelCorpus {
  std::vector<ParallelPair> pairs;
  LoadStats stats;
};

std::vector<std::string> read_lines(const std::filesystem::path& path);

// Segments both sides and keeps pairs whose token counts lie in
// [min_len, max_len]. Pair indices number the kept pairs from 0.
ParallelCorpus filter_pairs(std::span<const std::pair<std::string, std::string>> text_pairs,
                            const Tokenizer& tok, int min_len = 5, int max_len = 100);
ParallelCorpus load_parallel(const std::filesystem::path& path_l1, const std::filesystem::path& path_l2,
                             const Tokenizer& tok, int min_len = 5, int max_len = 100);
ParallelCorpus load_parallel_tsv(const std::filesystem::path& path, const Tokenizer& tok,
                                 int min_len = 5, int max_len = 100);

struct PaddedIds {
  int rows = 0;
  int cols = 0;
  std::vector<int> ids;  // row-major, PAD filled
  std::vector<int> lengths;

  std::span<const int> row(int r) const {
    return {ids.data() + static_cast<std::ptrdiff_t>(r) * cols, static_cast<std::size_t>(lengths[static_cast<std::size_t>(r)])};
  }
  static PaddedIds from_rows(std::span<const std::vector<int>> rows);
};

struct TokenBatch {
  PaddedIds src;
  PaddedIds tgt;
  std::vector<int> pair_indices;
  // Which side of each pair feeds the semantic encoder: L1 for even pair indices.
  std::vector<Side> semantic_side;
  int total_tokens = 0;

  std::size_t size() const { return pair_indices.size(); }
  const PaddedIds& side(Side s) const { return s == Side::L1 ? src : tgt; }
};

Side parity_side(int pair_index);
int token_count(const ParallelPair& p);
TokenBatch make_batch(std::span<const ParallelPair* const> pairs);
TokenBatch make_batch(std::span<const ParallelPair> pairs);

// Seeded shuffle followed by greedy packing under max_tokens (sum of both sides).
std::vector<TokenBatch> make_batches(std::span<const ParallelPair> pairs, int max_tokens,
                                     std::uint64_t seed);

}  // namespace bgt::corpus
