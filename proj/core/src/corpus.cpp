#include "wep/corpus.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <numeric>
#include <sstream>
#include <tuple>

#include "wep/error.hpp"

namespace wep {
namespace {

std::ifstream open_for_reading(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  return in;
}

bool parse_index(std::string_view field, std::size_t& out) {
  const char* first = field.data();
  const char* last = field.data() + field.size();
  auto [ptr, ec] = std::from_chars(first, last, out);
  return ec == std::errc{} && ptr == last;
}

std::vector<std::string_view> split_tabs(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  for (;;) {
    const std::size_t tab = line.find('\t', start);
    if (tab == std::string_view::npos) {
      fields.push_back(line.substr(start));
      return fields;
    }
    fields.push_back(line.substr(start, tab - start));
    start = tab + 1;
  }
}

}  // namespace

std::vector<std::string> tokenize(std::string_view line) {
  std::vector<std::string> tokens;
  std::string current;
  for (char ch : line) {
    if (ch == ' ' || ch == '\t' || ch == '\r' || ch == '\n') {
      if (!current.empty()) tokens.push_back(std::move(current));
      current.clear();
      continue;
    }
    if (ch >= 'A' && ch <= 'Z') ch = static_cast<char>(ch - 'A' + 'a');
    current.push_back(ch);
  }
  if (!current.empty()) tokens.push_back(std::move(current));
  return tokens;
}

Vocabulary Vocabulary::from_counts(std::vector<std::pair<std::string, std::int64_t>> entries) {
  Vocabulary v;
  v.tokens_.reserve(entries.size());
  v.counts_.reserve(entries.size());
  for (auto& [token, count] : entries) {
    if (count <= 0) throw DomainError("vocabulary count for '" + token + "' must be positive");
    const auto id = static_cast<TokenId>(v.tokens_.size());
    if (!v.id_of_.emplace(token, id).second)
      throw DomainError("duplicate vocabulary token '" + token + "'");
    v.tokens_.push_back(std::move(token));
    v.counts_.push_back(count);
    v.total_tokens_ += count;
  }
  return v;
}

std::optional<TokenId> Vocabulary::id_of(std::string_view token) const {
  // Heterogeneous lookup needs C++20 transparent hashing; a temporary is fine here.
  auto it = id_of_.find(std::string(token));
  if (it == id_of_.end()) return std::nullopt;
  return it->second;
}

Vocabulary build_vocabulary(std::istream& corpus, std::int64_t min_count) {
  if (min_count < 1) throw ConfigError("min_count must be >= 1");
  struct Entry {
    std::int64_t count = 0;
    std::size_t first_seen = 0;
  };
  std::unordered_map<std::string, Entry> stats;
  std::size_t position = 0;
  std::string line;
  while (std::getline(corpus, line)) {
    for (auto& token : tokenize(line)) {
      auto [it, inserted] = stats.try_emplace(std::move(token));
      if (inserted) it->second.first_seen = position;
      ++it->second.count;
      ++position;
    }
  }
  if (corpus.bad()) throw IoError("error while reading corpus");

  std::vector<std::pair<std::string, Entry>> kept;
  for (auto& [token, entry] : stats)
    if (entry.count >= min_count) kept.emplace_back(token, entry);
  if (kept.empty())
    throw ConfigError("vocabulary is empty after applying min_count=" + std::to_string(min_count));
  std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
    if (a.second.count != b.second.count) return a.second.count > b.second.count;
    return a.second.first_seen < b.second.first_seen;
  });

  std::vector<std::pair<std::string, std::int64_t>> entries;
  entries.reserve(kept.size());
  for (auto& [token, entry] : kept) entries.emplace_back(std::move(token), entry.count);
  return Vocabulary::from_counts(std::move(entries));
}

Vocabulary build_vocabulary(const std::filesystem::path& corpus_path, std::int64_t min_count) {
  auto in = open_for_reading(corpus_path);
  return build_vocabulary(in, min_count);
}

std::vector<std::vector<TokenId>> encode_corpus(std::istream& corpus, const Vocabulary& vocab) {
  std::vector<std::vector<TokenId>> sentences;
  std::string line;
  while (std::getline(corpus, line)) {
    std::vector<TokenId> ids;
    for (const auto& token : tokenize(line)) ids.push_back(vocab.id_of(token).value_or(kNoToken));
    sentences.push_back(std::move(ids));
  }
  if (corpus.bad()) throw IoError("error while reading corpus");
  return sentences;
}

std::vector<std::vector<TokenId>> encode_corpus(const std::filesystem::path& corpus_path,
                                                const Vocabulary& vocab) {
  auto in = open_for_reading(corpus_path);
  return encode_corpus(in, vocab);
}

double subsample_keep_prob(std::int64_t count, std::int64_t total, double t) {
  if (count <= 0 || count > total) throw DomainError("subsample_keep_prob: need 0 < count <= total");
  if (!(t > 0.0)) throw DomainError("subsample_keep_prob: t must be positive");
  const double ratio = t / (static_cast<double>(count) / static_cast<double>(total));
  return std::min(1.0, std::sqrt(ratio) + ratio);
}

void subsample_sentence(std::span<TokenId> sentence, const Vocabulary& vocab, double t, Rng& rng) {
  if (!(t > 0.0)) return;
  for (TokenId& id : sentence) {
    if (id == kNoToken) continue;
    const double keep = subsample_keep_prob(vocab.count(id), vocab.total_tokens(), t);
    // Draw even when keep == 1 so the stream position does not depend on frequencies.
    if (rng.uniform() >= keep) id = kNoToken;
  }
}

std::vector<ContextSample> window_contexts(std::span<const TokenId> sentence, int window,
                                           std::size_t sentence_index, Rng* shrink) {
  if (window < 1) throw DomainError("window size must be >= 1");
  std::vector<TokenId> kept;
  kept.reserve(sentence.size());
  for (TokenId id : sentence)
    if (id != kNoToken) kept.push_back(id);

  std::vector<ContextSample> samples;
  for (std::size_t begin = 0; begin < kept.size(); begin += kMaxSentenceLength) {
    const std::size_t end = std::min(kept.size(), begin + kMaxSentenceLength);
    if (end - begin < 2) continue;
    for (std::size_t k = begin; k < end; ++k) {
      const std::size_t c =
          shrink != nullptr ? 1 + shrink->index(static_cast<std::size_t>(window))
                            : static_cast<std::size_t>(window);
      ContextSample s;
      s.center = kept[k];
      s.sentence_index = sentence_index;
      const std::size_t lo = k - std::min(c, k - begin);
      const std::size_t hi = std::min(end - 1, k + c);
      for (std::size_t j = lo; j <= hi; ++j)
        if (j != k) s.context.push_back(kept[j]);
      if (!s.context.empty()) samples.push_back(std::move(s));
    }
  }
  return samples;
}

std::size_t DependencyGraph::TripleHash::operator()(
    const std::tuple<std::size_t, std::size_t, std::size_t>& t) const {
  std::size_t h = std::get<0>(t);
  h = h * 0x9e3779b97f4a7c15ULL ^ std::get<1>(t);
  h = h * 0x9e3779b97f4a7c15ULL ^ std::get<2>(t);
  return h;
}

bool DependencyGraph::add_edge(DependencyEdge edge) {
  if (!seen_.emplace(edge.sentence, edge.head, edge.dependent).second) return false;
  by_sentence_[edge.sentence].push_back(edges_.size());
  edges_.push_back(std::move(edge));
  return true;
}

std::span<const std::size_t> DependencyGraph::edges_of(std::size_t sentence) const {
  auto it = by_sentence_.find(sentence);
  if (it == by_sentence_.end()) return {};
  return it->second;
}

DependencyGraph DependencyGraph::parse(std::istream& in) {
  DependencyGraph graph;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto fields = split_tabs(line);
    if (fields.size() != 4) {
      throw FormatError("dependency file line " + std::to_string(line_no) +
                        ": expected 4 tab-separated fields, got " + std::to_string(fields.size()));
    }
    DependencyEdge edge;
    if (!parse_index(fields[0], edge.sentence) || !parse_index(fields[1], edge.head) ||
        !parse_index(fields[2], edge.dependent)) {
      throw FormatError("dependency file line " + std::to_string(line_no) +
                        ": indices must be non-negative integers");
    }
    edge.label = std::string(fields[3]);
    edge.line = line_no;
    graph.add_edge(std::move(edge));
  }
  if (in.bad()) throw IoError("error while reading dependency file");
  return graph;
}

DependencyGraph DependencyGraph::load(const std::filesystem::path& path) {
  auto in = open_for_reading(path);
  return parse(in);
}

namespace {

[[noreturn]] void throw_out_of_range(const DependencyEdge& e, std::size_t length) {
  throw FormatError("dependency file line " + std::to_string(e.line) + ": edge (" +
                    std::to_string(e.head) + ", " + std::to_string(e.dependent) +
                    ") out of range for sentence " + std::to_string(e.sentence) + " of length " +
                    std::to_string(length));
}

}  // namespace

void DependencyGraph::validate(std::span<const std::vector<TokenId>> sentences) const {
  for (const auto& e : edges_) {
    if (e.sentence >= sentences.size()) {
      throw FormatError("dependency file line " + std::to_string(e.line) + ": sentence index " +
                        std::to_string(e.sentence) + " past end of corpus (" +
                        std::to_string(sentences.size()) + " lines)");
    }
    const std::size_t n = sentences[e.sentence].size();
    if (e.head >= n || e.dependent >= n) throw_out_of_range(e, n);
  }
}

std::vector<ContextSample> graph_contexts(std::span<const TokenId> sentence,
                                          const DependencyGraph& graph,
                                          std::size_t sentence_index) {
  const std::size_t n = sentence.size();
  std::vector<std::vector<std::size_t>> neighbors(n);
  for (std::size_t idx : graph.edges_of(sentence_index)) {
    const DependencyEdge& e = graph.edges()[idx];
    if (e.head >= n || e.dependent >= n) throw_out_of_range(e, n);
    if (e.head == e.dependent) continue;
    neighbors[e.head].push_back(e.dependent);
    neighbors[e.dependent].push_back(e.head);
  }
  std::vector<ContextSample> samples;
  for (std::size_t k = 0; k < n; ++k) {
    if (sentence[k] == kNoToken) continue;
    auto& nb = neighbors[k];
    std::sort(nb.begin(), nb.end());
    nb.erase(std::unique(nb.begin(), nb.end()), nb.end());
    ContextSample s;
    s.center = sentence[k];
    s.sentence_index = sentence_index;
    for (std::size_t j : nb)
      if (sentence[j] != kNoToken) s.context.push_back(sentence[j]);
    if (!s.context.empty()) samples.push_back(std::move(s));
  }
  return samples;
}

NegativeTable::NegativeTable(std::span<const std::int64_t> counts, double power,
                             std::size_t table_size) {
  if (counts.empty()) throw DomainError("negative table needs a non-empty vocabulary");
  if (!(power > 0.0)) throw DomainError("negative table power must be positive");
  if (table_size < counts.size()) throw DomainError("negative table size must be >= vocabulary size");

  target_.resize(counts.size());
  double norm = 0.0;
  for (std::size_t i = 0; i < counts.size(); ++i) {
    target_[i] = std::pow(static_cast<double>(counts[i]), power);
    norm += target_[i];
  }
  for (double& p : target_) p /= norm;

  // Slot i goes to the first word whose cumulative mass exceeds the slot's midpoint.
  table_.resize(table_size);
  std::size_t word = 0;
  double cumulative = target_[0];
  const double size = static_cast<double>(table_size);
  for (std::size_t i = 0; i < table_size; ++i) {
    const double midpoint = (static_cast<double>(i) + 0.5) / size;
    while (midpoint > cumulative && word + 1 < target_.size()) cumulative += target_[++word];
    table_[i] = static_cast<TokenId>(word);
  }
}

double NegativeTable::table_probability(TokenId id) const {
  const auto n = std::count(table_.begin(), table_.end(), id);
  return static_cast<double>(n) / static_cast<double>(table_.size());
}

NegativeTable build_negative_table(const Vocabulary& vocab, double power, std::size_t table_size) {
  return NegativeTable(vocab.counts(), power, table_size);
}

}  // namespace wep
