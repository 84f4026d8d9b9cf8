#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "wep/embed.hpp"
#include "wep/matrix.hpp"

namespace wep {

struct SimilarityItem {
  std::string word1;
  std::string word2;
  double score = 0.0;
};
using SimilarityDataset = std::vector<SimilarityItem>;

struct AnalogyItem {
  std::string a1, a2, b1, b2;
};
using AnalogyDataset = std::vector<AnalogyItem>;

struct CategorizationItem {
  std::string word;
  std::string category;
};
using CategorizationDataset = std::vector<CategorizationItem>;

// Loaders lowercase words so they match the corpus tokenizer.
/// `w1<TAB>w2<TAB>score`.
SimilarityDataset read_similarity_dataset(std::istream& in);
SimilarityDataset load_similarity_dataset(const std::filesystem::path& path);
/// Four whitespace-separated words per line; `:` section headers are skipped.
AnalogyDataset read_analogy_dataset(std::istream& in);
AnalogyDataset load_analogy_dataset(const std::filesystem::path& path);
/// `word<TAB>category`.
CategorizationDataset read_categorization_dataset(std::istream& in);
CategorizationDataset load_categorization_dataset(const std::filesystem::path& path);

/// Average ranks (1-based), ties share the mean of their positions.
std::vector<double> average_ranks(std::span<const double> xs);

/// Pearson correlation of average-tie ranks. Throws DomainError for fewer than
/// two points, unequal lengths, or a constant side.
double spearman(std::span<const double> xs, std::span<const double> ys);

double cosine(std::span<const double> a, std::span<const double> b);

struct MetricResult {
  std::string metric;
  double value = 0.0;
  double coverage = 0.0;  // covered items / all items
  std::size_t covered = 0;
  std::size_t total = 0;
};

/// Spearman between cosine similarity and human scores over in-vocabulary
/// pairs. Throws EvaluationError with fewer than two covered pairs.
MetricResult word_similarity_eval(const WordVectors& vectors, const SimilarityDataset& data);

/// 3CosAdd: argmax_e cos(e, e_a2 - e_a1 + e_b1) over the vocabulary minus the
/// three query words, ties to the lowest id. Throws EvaluationError if no item
/// is covered.
MetricResult analogy_eval(const WordVectors& vectors, const AnalogyDataset& data);

/// Answer id of one 3CosAdd query given unit-normalized rows.
TokenId analogy_answer(const Matrix& normalized, std::span<const double> query,
                       std::span<const TokenId> excluded);

struct KMeansResult {
  std::vector<std::size_t> assignments;
  Matrix centroids;
  /// Sum of squared distances after each assignment step.
  std::vector<double> objective_history;
  std::size_t iterations = 0;
};

/// Lloyd's algorithm with k-means++ seeding. Stops at max_iter or when the
/// assignment no longer changes. Throws DomainError if k == 0 or k > n.
KMeansResult kmeans(const Matrix& points, std::size_t k, std::uint64_t seed, std::size_t max_iter = 100);

/// (1/N) sum over clusters of the largest gold-label overlap.
double purity(std::span<const std::size_t> clusters, std::span<const std::size_t> labels);

/// k-means over unit-normalized vectors of the covered words with k equal to
/// the number of covered gold categories.
MetricResult categorization_eval(const WordVectors& vectors, const CategorizationDataset& data,
                                 std::uint64_t seed, std::size_t max_iter = 100);

struct ProbeHit {
  std::string word;
  double value = 0.0;
};

/// Every word whose value at `dim` lies in [lo, hi], ascending by value
/// (ties by id). Throws DomainError if dim is out of range or lo > hi.
std::vector<ProbeHit> dimension_probe(const WordVectors& vectors, std::size_t dim,
                                      double lo = -std::numeric_limits<double>::infinity(),
                                      double hi = std::numeric_limits<double>::infinity());

/// Optional evaluation sets scored once per training epoch.
struct EvalSuite {
  std::optional<SimilarityDataset> similarity;
  std::optional<AnalogyDataset> analogy;
  std::optional<CategorizationDataset> categorization;
  std::uint64_t seed = 1;
  TableChoice table = TableChoice::context;

  bool empty() const { return !similarity && !analogy && !categorization; }
};

/// Runs every configured task; keys are "similarity", "analogy", "categorization".
std::map<std::string, double> evaluate_suite(const WordVectors& vectors, const EvalSuite& suite);

}  // namespace wep
