#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <tuple>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "wep/rng.hpp"

namespace wep {

using TokenId = std::int32_t;

/// Marks a corpus position whose token is out of vocabulary or subsampled away.
inline constexpr TokenId kNoToken = -1;

/// Sentences longer than this are split into chunks before windowing.
inline constexpr std::size_t kMaxSentenceLength = 1000;

/// Lowercases ASCII letters and splits on spaces, tabs and carriage returns.
/// Bytes outside ASCII are kept as-is, so UTF-8 passes through untouched.
std::vector<std::string> tokenize(std::string_view line);

/// Token <-> ID map. IDs are contiguous, ordered by descending count with ties
/// broken by first occurrence in the corpus.
class Vocabulary {
 public:
  Vocabulary() = default;

  /// Builds a vocabulary whose IDs follow the given order exactly.
  static Vocabulary from_counts(std::vector<std::pair<std::string, std::int64_t>> entries);

  std::size_t size() const { return tokens_.size(); }
  bool empty() const { return tokens_.empty(); }
  const std::string& token(TokenId id) const { return tokens_.at(static_cast<std::size_t>(id)); }
  std::int64_t count(TokenId id) const { return counts_.at(static_cast<std::size_t>(id)); }
  std::optional<TokenId> id_of(std::string_view token) const;
  std::int64_t total_tokens() const { return total_tokens_; }

  const std::vector<std::string>& tokens() const { return tokens_; }
  const std::vector<std::int64_t>& counts() const { return counts_; }

  bool operator==(const Vocabulary& other) const {
    return tokens_ == other.tokens_ && counts_ == other.counts_ &&
           total_tokens_ == other.total_tokens_;
  }

 private:
  std::vector<std::string> tokens_;
  std::vector<std::int64_t> counts_;
  std::unordered_map<std::string, TokenId> id_of_;
  std::int64_t total_tokens_ = 0;
};

/// Throws IoError if the file cannot be read and ConfigError if no token
/// survives the min_count filter.
Vocabulary build_vocabulary(const std::filesystem::path& corpus_path, std::int64_t min_count);
Vocabulary build_vocabulary(std::istream& corpus, std::int64_t min_count);

/// Encodes every corpus line. Positions are preserved: out-of-vocabulary
/// tokens become kNoToken so dependency-edge positions stay valid.
std::vector<std::vector<TokenId>> encode_corpus(const std::filesystem::path& corpus_path,
                                                const Vocabulary& vocab);
std::vector<std::vector<TokenId>> encode_corpus(std::istream& corpus, const Vocabulary& vocab);

/// One training draw: the masked center word and its observed context.
struct ContextSample {
  TokenId center = kNoToken;
  std::vector<TokenId> context;
  std::size_t sentence_index = 0;

  bool operator==(const ContextSample&) const = default;
};

/// Frequent-word keep probability min(1, sqrt(t/f) + t/f) with f = count/total.
double subsample_keep_prob(std::int64_t count, std::int64_t total, double t);

/// Replaces subsampled tokens by kNoToken. kNoToken inputs stay as they are.
void subsample_sentence(std::span<TokenId> sentence, const Vocabulary& vocab, double t, Rng& rng);

/// Sliding-window contexts {w_{k+j} : -c <= j <= c, j != 0}, truncated at the
/// sentence boundary. kNoToken entries are dropped before windowing. When
/// `shrink` is non-null each center draws its effective window from 1..c.
std::vector<ContextSample> window_contexts(std::span<const TokenId> sentence, int window,
                                           std::size_t sentence_index = 0,
                                           Rng* shrink = nullptr);

struct DependencyEdge {
  std::size_t sentence = 0;
  std::size_t head = 0;
  std::size_t dependent = 0;
  std::string label;
  std::size_t line = 0;  // 1-based line in the source file, 0 if added in code
};

/// Per-sentence labeled dependency edges. Duplicate (sentence, head,
/// dependent) triples are dropped on insertion.
class DependencyGraph {
 public:
  /// Reads `sentence<TAB>head<TAB>dependent<TAB>label` lines (0-based).
  static DependencyGraph load(const std::filesystem::path& path);
  static DependencyGraph parse(std::istream& in);

  /// Returns false when the edge was a duplicate.
  bool add_edge(DependencyEdge edge);

  const std::vector<DependencyEdge>& edges() const { return edges_; }
  std::span<const std::size_t> edges_of(std::size_t sentence) const;
  std::size_t size() const { return edges_.size(); }

  /// Throws FormatError (naming the source line) for any edge position past
  /// the end of its sentence or any sentence index past the corpus end.
  void validate(std::span<const std::vector<TokenId>> sentences) const;

 private:
  struct TripleHash {
    std::size_t operator()(const std::tuple<std::size_t, std::size_t, std::size_t>& t) const;
  };
  std::vector<DependencyEdge> edges_;
  std::unordered_map<std::size_t, std::vector<std::size_t>> by_sentence_;
  std::unordered_set<std::tuple<std::size_t, std::size_t, std::size_t>, TripleHash> seen_;
};

/// Graph contexts: the context of position k is the set of its neighbors,
/// edges taken as undirected and labels ignored. Self-edges and kNoToken
/// neighbors are skipped; positions without neighbors yield no sample.
std::vector<ContextSample> graph_contexts(std::span<const TokenId> sentence,
                                          const DependencyGraph& graph,
                                          std::size_t sentence_index);

/// Unigram^power negative sampler realized as a filled index table.
class NegativeTable {
 public:
  NegativeTable(std::span<const std::int64_t> counts, double power, std::size_t table_size);

  TokenId sample(Rng& rng) const { return table_[rng.index(table_.size())]; }

  /// count(w)^power / sum count^power.
  double target_probability(TokenId id) const { return target_.at(static_cast<std::size_t>(id)); }
  /// Share of table slots holding `id`.
  double table_probability(TokenId id) const;

  std::size_t size() const { return table_.size(); }
  std::size_t vocab_size() const { return target_.size(); }
  std::span<const TokenId> entries() const { return table_; }

 private:
  std::vector<TokenId> table_;
  std::vector<double> target_;
};

NegativeTable build_negative_table(const Vocabulary& vocab, double power, std::size_t table_size);

}  // namespace wep
