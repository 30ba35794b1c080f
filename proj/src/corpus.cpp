#include "bgt/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <limits>
#include <random>
#include <set>
#include <sstream>

namespace bgt::corpus {

namespace {

constexpr std::string_view kHeader = "bgt-tokenizer 1";
const std::vector<std::string> kSpecialPieces{"<pad>", "<s>", "</s>", "<unk>"};

bool is_space(char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f'; }

std::vector<std::string> word_symbols(const std::string& word) {
  std::vector<std::string> out{std::string(kWordMarker)};
  for (auto& ch : utf8_chars(word)) out.push_back(std::move(ch));
  return out;
}

std::vector<std::string> merge_pair(const std::vector<std::string>& symbols, const std::string& a,
                                    const std::string& b) {
  std::vector<std::string> out;
  out.reserve(symbols.size());
  for (std::size_t i = 0; i < symbols.size(); ++i) {
    if (i + 1 < symbols.size() && symbols[i] == a && symbols[i + 1] == b) {
      out.push_back(a + b);
      ++i;
    } else {
      out.push_back(symbols[i]);
    }
  }
  return out;
}

std::map<std::string, long> count_words(std::span<const std::string> corpus) {
  std::map<std::string, long> words;
  for (const auto& line : corpus) {
    for (auto& w : split_whitespace(line)) ++words[w];
  }
  return words;
}

}  // namespace

std::vector<std::string> utf8_chars(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    auto lead = static_cast<unsigned char>(text[i]);
    std::size_t len = 1;
    if (lead >= 0xF0 && lead < 0xF8) len = 4;
    else if (lead >= 0xE0) len = 3;
    else if (lead >= 0xC0) len = 2;
    if (lead >= 0xF8 || i + len > text.size()) len = 1;
    for (std::size_t k = 1; k < len; ++k) {
      if ((static_cast<unsigned char>(text[i + k]) & 0xC0) != 0x80) {
        len = 1;
        break;
      }
    }
    out.emplace_back(text.substr(i, len));
    i += len;
  }
  return out;
}

std::vector<std::string> split_whitespace(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && is_space(text[i])) ++i;
    std::size_t j = i;
    while (j < text.size() && !is_space(text[j])) ++j;
    if (j > i) out.emplace_back(text.substr(i, j - i));
    i = j;
  }
  return out;
}

// ---- Tokenizer ---------------------------------------------------------------

int Tokenizer::minimum_vocab_size(std::span<const std::string> corpus) {
  std::set<std::string> chars{std::string(kWordMarker)};
  for (const auto& line : corpus) {
    for (auto& w : split_whitespace(line)) {
      for (auto& c : utf8_chars(w)) chars.insert(std::move(c));
    }
  }
  return kNumSpecials + static_cast<int>(chars.size()) + 1;
}

Tokenizer Tokenizer::train(std::span<const std::string> corpus, int vocab_size) {
  auto words = count_words(corpus);
  if (words.empty()) throw CorpusError("train_bpe: corpus is empty");
  const int minimum = minimum_vocab_size(corpus);
  if (vocab_size < minimum) {
    throw CorpusError("train_bpe: vocab_size " + std::to_string(vocab_size) +
                      " is too small; the minimum for this corpus is " + std::to_string(minimum));
  }

  Tokenizer tok;
  std::vector<std::pair<std::vector<std::string>, long>> segmented;
  std::map<std::string, long> char_freq;
  for (const auto& [w, f] : words) {
    auto syms = word_symbols(w);
    for (const auto& s : syms) char_freq[s] += f;
    segmented.emplace_back(std::move(syms), f);
  }
  tok.pieces_ = kSpecialPieces;
  for (const auto& [c, f] : char_freq) {
    tok.chars_.emplace_back(c, f);
    tok.pieces_.push_back(c);
  }

  while (static_cast<int>(tok.pieces_.size()) < vocab_size) {
    std::map<std::pair<std::string, std::string>, long> pair_freq;
    for (const auto& [syms, f] : segmented) {
      for (std::size_t i = 0; i + 1 < syms.size(); ++i) pair_freq[{syms[i], syms[i + 1]}] += f;
    }
    // std::map iterates pairs in lexicographic order, so the first maximum wins ties.
    const std::pair<std::string, std::string>* best = nullptr;
    long best_freq = 0;
    for (const auto& [p, f] : pair_freq) {
      if (f > best_freq) {
        best = &p;
        best_freq = f;
      }
    }
    if (best == nullptr || best_freq < 2) break;
    const std::string a = best->first, b = best->second;
    for (auto& entry : segmented) entry.first = merge_pair(entry.first, a, b);
    tok.merges_.push_back({a, b, best_freq});
    tok.pieces_.push_back(a + b);
  }
  tok.rebuild_index();
  return tok;
}

void Tokenizer::rebuild_index() {
  ids_.clear();
  merge_rank_.clear();
  for (std::size_t i = 0; i < pieces_.size(); ++i) {
    // A merged piece may coincide with an existing one; keep the first id.
    ids_.emplace(pieces_[i], static_cast<int>(i));
  }
  for (std::size_t r = 0; r < merges_.size(); ++r) {
    merge_rank_.emplace(std::make_pair(merges_[r].left, merges_[r].right), static_cast<int>(r));
  }
}

const std::string& Tokenizer::piece(int id) const {
  if (id < 0 || id >= vocab_size()) {
    throw CorpusError("token id " + std::to_string(id) + " outside vocabulary of size " +
                      std::to_string(vocab_size()));
  }
  return pieces_[static_cast<std::size_t>(id)];
}

int Tokenizer::id_of(const std::string& p) const {
  auto it = ids_.find(p);
  return it == ids_.end() ? kUnk : it->second;
}

std::vector<std::string> Tokenizer::apply_merges(std::vector<std::string> symbols) const {
  while (symbols.size() > 1) {
    int best_rank = std::numeric_limits<int>::max();
    for (std::size_t i = 0; i + 1 < symbols.size(); ++i) {
      auto it = merge_rank_.find({symbols[i], symbols[i + 1]});
      if (it != merge_rank_.end() && it->second < best_rank) best_rank = it->second;
    }
    if (best_rank == std::numeric_limits<int>::max()) break;
    const Merge& m = merges_[static_cast<std::size_t>(best_rank)];
    symbols = merge_pair(symbols, m.left, m.right);
  }
  return symbols;
}

std::vector<int> Tokenizer::encode(std::string_view text) const {
  if (pieces_.empty()) throw CorpusError("encode: tokenizer is not trained");
  std::vector<int> ids;
  for (const auto& w : split_whitespace(text)) {
    for (const auto& s : apply_merges(word_symbols(w))) ids.push_back(id_of(s));
  }
  return ids;
}

std::string Tokenizer::decode(std::span<const int> ids) const {
  std::string joined;
  for (int id : ids) {
    const std::string& p = piece(id);
    if (id == kPad || id == kBos || id == kEos) continue;
    joined += p;
  }
  std::string out;
  std::size_t i = 0;
  while (i < joined.size()) {
    if (joined.compare(i, kWordMarker.size(), kWordMarker) == 0) {
      if (!out.empty()) out.push_back(' ');
      i += kWordMarker.size();
    } else {
      out.push_back(joined[i++]);
    }
  }
  return out;
}

void Tokenizer::save(std::ostream& os) const {
  os << kHeader << "\n";
  os << "vocab_size " << pieces_.size() << "\n";
  os << "specials";
  for (const auto& s : kSpecialPieces) os << " " << s;
  os << "\n";
  os << "chars " << chars_.size() << "\n";
  for (const auto& [c, f] : chars_) os << c << " " << f << "\n";
  os << "merges " << merges_.size() << "\n";
  for (const auto& m : merges_) os << m.left << " " << m.right << " " << m.frequency << "\n";
}

void Tokenizer::save(const std::filesystem::path& path) const {
  std::ofstream os(path);
  if (!os) throw CorpusError("cannot write tokenizer to " + path.string());
  save(os);
}

Tokenizer Tokenizer::load(std::istream& is) {
  auto expect = [&](const std::string& key) {
    std::string k;
    if (!(is >> k) || k != key) throw CorpusError("tokenizer file: expected '" + key + "'");
  };
  std::string header;
  std::getline(is, header);
  if (header != kHeader) throw CorpusError("tokenizer file: unsupported header '" + header + "'");
  Tokenizer tok;
  std::size_t vocab = 0, nchars = 0, nmerges = 0;
  expect("vocab_size");
  is >> vocab;
  expect("specials");
  for (const auto& s : kSpecialPieces) {
    std::string got;
    is >> got;
    if (got != s) throw CorpusError("tokenizer file: unexpected special '" + got + "'");
  }
  expect("chars");
  is >> nchars;
  tok.pieces_ = kSpecialPieces;
  for (std::size_t i = 0; i < nchars; ++i) {
    std::string c;
    long f = 0;
    if (!(is >> c >> f)) throw CorpusError("tokenizer file: truncated character table");
    tok.chars_.emplace_back(c, f);
    tok.pieces_.push_back(c);
  }
  expect("merges");
  is >> nmerges;
  for (std::size_t i = 0; i < nmerges; ++i) {
    Merge m;
    if (!(is >> m.left >> m.right >> m.frequency)) throw CorpusError("tokenizer file: truncated merge table");
    tok.pieces_.push_back(m.left + m.right);
    tok.merges_.push_back(std::move(m));
  }
  if (tok.pieces_.size() != vocab) {
    throw CorpusError("tokenizer file: header says " + std::to_string(vocab) + " pieces, found " +
                      std::to_string(tok.pieces_.size()));
  }
  tok.rebuild_index();
  return tok;
}

Tokenizer Tokenizer::load(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw CorpusError("cannot read tokenizer from " + path.string());
  return load(is);
}

std::uint64_t Tokenizer::fingerprint() const {
  std::ostringstream os;
  save(os);
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : os.str()) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

// ---- loading -----------------------------------------------------------------

std::vector<std::string> read_lines(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw CorpusError("cannot read " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(std::move(line));
  }
  return lines;
}

ParallelCorpus filter_pairs(std::span<const std::pair<std::string, std::string>> text_pairs,
                            const Tokenizer& tok, int min_len, int max_len) {
  ParallelCorpus out;
  for (const auto& [l1, l2] : text_pairs) {
    auto a = tok.encode(l1);
    auto b = tok.encode(l2);
    auto ok = [&](const std::vector<int>& v) {
      return static_cast<int>(v.size()) >= min_len && static_cast<int>(v.size()) <= max_len;
    };
    if (ok(a) && ok(b)) {
      out.pairs.push_back({std::move(a), std::move(b), static_cast<int>(out.pairs.size())});
      ++out.stats.kept;
    } else {
      ++out.stats.dropped;
    }
  }
  return out;
}

ParallelCorpus load_parallel(const std::filesystem::path& path_l1, const std::filesystem::path& path_l2,
                             const Tokenizer& tok, int min_len, int max_len) {
  auto l1 = read_lines(path_l1);
  auto l2 = read_lines(path_l2);
  if (l1.size() != l2.size()) {
    throw CorpusError("parallel files are not line-aligned: " + path_l1.string() + " has " +
                      std::to_string(l1.size()) + " lines, " + path_l2.string() + " has " +
                      std::to_string(l2.size()) + " lines");
  }
  std::vector<std::pair<std::string, std::string>> pairs;
  pairs.reserve(l1.size());
  for (std::size_t i = 0; i < l1.size(); ++i) pairs.emplace_back(std::move(l1[i]), std::move(l2[i]));
  return filter_pairs(pairs, tok, min_len, max_len);
}

ParallelCorpus load_parallel_tsv(const std::filesystem::path& path, const Tokenizer& tok, int min_len,
                                 int max_len) {
  std::vector<std::pair<std::string, std::string>> pairs;
  std::size_t lineno = 0;
  for (auto& line : read_lines(path)) {
    ++lineno;
    auto tab = line.find('\t');
    if (tab == std::string::npos) {
      throw CorpusError(path.string() + ":" + std::to_string(lineno) + ": expected two tab-separated columns");
    }
    pairs.emplace_back(line.substr(0, tab), line.substr(tab + 1));
  }
  return filter_pairs(pairs, tok, min_len, max_len);
}

// ---- batching ----------------------------------------------------------------

PaddedIds PaddedIds::from_rows(std::span<const std::vector<int>> rows) {
  PaddedIds p;
  p.rows = static_cast<int>(rows.size());
  for (const auto& r : rows) p.cols = std::max(p.cols, static_cast<int>(r.size()));
  p.ids.assign(static_cast<std::size_t>(p.rows) * static_cast<std::size_t>(p.cols), kPad);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    std::copy(rows[i].begin(), rows[i].end(), p.ids.begin() + static_cast<std::ptrdiff_t>(i) * p.cols);
    p.lengths.push_back(static_cast<int>(rows[i].size()));
  }
  return p;
}

Side parity_side(int pair_index) { return pair_index % 2 == 0 ? Side::L1 : Side::L2; }

int token_count(const ParallelPair& p) { return static_cast<int>(p.src.size() + p.tgt.size()); }

TokenBatch make_batch(std::span<const ParallelPair* const> pairs) {
  TokenBatch b;
  std::vector<std::vector<int>> src, tgt;
  for (const ParallelPair* p : pairs) {
    src.push_back(p->src);
    tgt.push_back(p->tgt);
    b.pair_indices.push_back(p->index);
    b.semantic_side.push_back(parity_side(p->index));
    b.total_tokens += token_count(*p);
  }
  b.src = PaddedIds::from_rows(src);
  b.tgt = PaddedIds::from_rows(tgt);
  return b;
}

TokenBatch make_batch(std::span<const ParallelPair> pairs) {
  std::vector<const ParallelPair*> ptrs;
  for (const auto& p : pairs) ptrs.push_back(&p);
  return make_batch(ptrs);
}

std::vector<TokenBatch> make_batches(std::span<const ParallelPair> pairs, int max_tokens,
                                     std::uint64_t seed) {
  std::vector<const ParallelPair*> order;
  order.reserve(pairs.size());
  for (const auto& p : pairs) {
    if (token_count(p) > max_tokens) {
      throw CorpusError("pair " + std::to_string(p.index) + " has " + std::to_string(token_count(p)) +
                        " tokens, more than the batch budget of " + std::to_string(max_tokens));
    }
    order.push_back(&p);
  }
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);

  std::vector<TokenBatch> batches;
  std::vector<const ParallelPair*> current;
  int used = 0;
  for (const ParallelPair* p : order) {
    if (!current.empty() && used + token_count(*p) > max_tokens) {
      batches.push_back(make_batch(current));
      current.clear();
      used = 0;
    }
    current.push_back(p);
    used += token_count(*p);
  }
  if (!current.empty()) batches.push_back(make_batch(current));
  return batches;
}

}  // namespace bgt::corpus
