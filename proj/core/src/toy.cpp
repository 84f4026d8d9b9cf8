#include "wep/toy.hpp"

#include <fstream>

#include "wep/error.hpp"
#include "wep/rng.hpp"

namespace wep {

TopicCorpus make_topic_corpus(const TopicCorpusConfig& config) {
  if (config.topics == 0 || config.words_per_topic == 0 || config.sentence_length == 0)
    throw ConfigError("topic corpus: topics, words per topic and sentence length must be positive");
  TopicCorpus c;
  for (std::size_t t = 0; t < config.topics; ++t) {
    for (std::size_t w = 0; w < config.words_per_topic; ++w) {
      c.words.push_back("t" + std::to_string(t) + "w" + std::to_string(w));
      c.topic_of.push_back(t);
    }
  }
  Rng rng(config.seed, 7);
  c.lines.reserve(config.sentences);
  for (std::size_t s = 0; s < config.sentences; ++s) {
    const std::size_t topic = rng.index(config.topics);
    std::string line;
    for (std::size_t i = 0; i < config.sentence_length; ++i) {
      if (i > 0) line += ' ';
      line += c.words[topic * config.words_per_topic + rng.index(config.words_per_topic)];
    }
    c.lines.push_back(std::move(line));
  }
  return c;
}

void save_lines(const std::vector<std::string>& lines, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  for (const auto& line : lines) out << line << '\n';
  if (!out) throw IoError("error while writing '" + path.string() + "'");
}

SimilarityDataset topic_similarity_set(const TopicCorpus& corpus) {
  SimilarityDataset data;
  for (std::size_t i = 0; i < corpus.words.size(); ++i)
    for (std::size_t j = i + 1; j < corpus.words.size(); ++j)
      data.push_back({corpus.words[i], corpus.words[j], corpus.topic_of[i] == corpus.topic_of[j] ? 1.0 : 0.0});
  return data;
}

TopicSeparation topic_separation(const WordVectors& vectors, const TopicCorpus& corpus) {
  double intra = 0.0, inter = 0.0;
  std::size_t n_intra = 0, n_inter = 0;
  for (std::size_t i = 0; i < corpus.words.size(); ++i) {
    const auto a = vectors.id_of(corpus.words[i]);
    if (!a) continue;
    for (std::size_t j = i + 1; j < corpus.words.size(); ++j) {
      const auto b = vectors.id_of(corpus.words[j]);
      if (!b) continue;
      const double c = cosine(vectors.vectors.row(static_cast<std::size_t>(*a)),
                              vectors.vectors.row(static_cast<std::size_t>(*b)));
      if (corpus.topic_of[i] == corpus.topic_of[j]) {
        intra += c;
        ++n_intra;
      } else {
        inter += c;
        ++n_inter;
      }
    }
  }
  if (n_intra == 0 || n_inter == 0) throw EvaluationError("topic separation: not enough covered pairs");
  return {intra / static_cast<double>(n_intra), inter / static_cast<double>(n_inter)};
}

}  // namespace wep
