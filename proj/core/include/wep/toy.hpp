#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "wep/embed.hpp"
#include "wep/eval.hpp"

// Synthetic topic corpus: every sentence draws all of its words uniformly
// from a single topic, so co-occurrence never crosses topic boundaries.

namespace wep {

struct TopicCorpusConfig {
  std::size_t topics = 5;
  std::size_t words_per_topic = 20;
  std::size_t sentences = 5000;
  std::size_t sentence_length = 10;
  std::uint64_t seed = 1;
};

struct TopicCorpus {
  std::vector<std::string> lines;
  std::vector<std::string> words;     // "t<topic>w<index>"
  std::vector<std::size_t> topic_of;  // parallel to `words`
};

TopicCorpus make_topic_corpus(const TopicCorpusConfig& config);
void save_lines(const std::vector<std::string>& lines, const std::filesystem::path& path);

/// Every unordered word pair, gold 1 for same topic and 0 otherwise.
SimilarityDataset topic_similarity_set(const TopicCorpus& corpus);

struct TopicSeparation {
  double intra = 0.0;  // mean cosine over same-topic pairs
  double inter = 0.0;  // mean cosine over cross-topic pairs
  double gap() const { return intra - inter; }
};

/// Words missing from `vectors` are ignored.
TopicSeparation topic_separation(const WordVectors& vectors, const TopicCorpus& corpus);

}  // namespace wep
