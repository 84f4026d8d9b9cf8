#include "wep/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <numeric>
#include <sstream>
#include <unordered_map>

#include "wep/corpus.hpp"
#include "wep/error.hpp"
#include "wep/rng.hpp"

namespace wep {
namespace {

std::ifstream open_dataset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  return in;
}

std::string lower(std::string s) {
  for (char& c : s)
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
  return s;
}

std::vector<std::string> split_on_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream ls(line);
  while (std::getline(ls, field, '\t')) out.push_back(field);
  return out;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \r");
  return s.substr(b, e - b + 1);
}

bool blank(const std::string& line) { return line.find_first_not_of(" \t\r") == std::string::npos; }

Matrix normalized_rows(const Matrix& m) {
  Matrix out = m;
  for (std::size_t i = 0; i < out.rows(); ++i) {
    auto row = out.row(i);
    const double norm = std::sqrt(dot(row, row));
    for (double& x : row) x = norm > 0.0 ? x / norm : 0.0;
  }
  return out;
}

double squared_distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t j = 0; j < a.size(); ++j) {
    const double diff = a[j] - b[j];
    s += diff * diff;
  }
  return s;
}

}  // namespace

SimilarityDataset read_similarity_dataset(std::istream& in) {
  SimilarityDataset data;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (blank(line)) continue;
    const auto fields = split_on_tabs(line);
    if (fields.size() != 3)
      throw FormatError("similarity file line " + std::to_string(line_no) + ": expected w1<TAB>w2<TAB>score");
    SimilarityItem item{lower(trim(fields[0])), lower(trim(fields[1])), 0.0};
    try {
      std::size_t used = 0;
      const std::string score = trim(fields[2]);
      item.score = std::stod(score, &used);
      if (used != score.size()) throw std::invalid_argument("trailing characters");
    } catch (const std::exception&) {
      throw FormatError("similarity file line " + std::to_string(line_no) + ": score is not a number");
    }
    if (!std::isfinite(item.score))
      throw FormatError("similarity file line " + std::to_string(line_no) + ": score is not finite");
    data.push_back(std::move(item));
  }
  return data;
}

SimilarityDataset load_similarity_dataset(const std::filesystem::path& path) {
  auto in = open_dataset(path);
  return read_similarity_dataset(in);
}

AnalogyDataset read_analogy_dataset(std::istream& in) {
  AnalogyDataset data;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (blank(line)) continue;
    std::istringstream ls(line);
    std::vector<std::string> words;
    std::string w;
    while (ls >> w) words.push_back(lower(w));
    if (words.front().front() == ':') continue;
    if (words.size() != 4)
      throw FormatError("analogy file line " + std::to_string(line_no) + ": expected 4 words");
    std::vector<std::string> sorted = words;
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
      throw FormatError("analogy file line " + std::to_string(line_no) + ": words must be distinct");
    data.push_back({words[0], words[1], words[2], words[3]});
  }
  return data;
}

AnalogyDataset load_analogy_dataset(const std::filesystem::path& path) {
  auto in = open_dataset(path);
  return read_analogy_dataset(in);
}

CategorizationDataset read_categorization_dataset(std::istream& in) {
  CategorizationDataset data;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (blank(line)) continue;
    const auto fields = split_on_tabs(line);
    if (fields.size() != 2)
      throw FormatError("categorization file line " + std::to_string(line_no) + ": expected word<TAB>category");
    data.push_back({lower(trim(fields[0])), trim(fields[1])});
  }
  return data;
}

CategorizationDataset load_categorization_dataset(const std::filesystem::path& path) {
  auto in = open_dataset(path);
  return read_categorization_dataset(in);
}

std::vector<double> average_ranks(std::span<const double> xs) {
  std::vector<std::size_t> order(xs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return xs[a] < xs[b]; });
  std::vector<double> ranks(xs.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && xs[order[j + 1]] == xs[order[i]]) ++j;
    const double rank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = rank;
    i = j + 1;
  }
  return ranks;
}

double spearman(std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() != ys.size()) throw DomainError("spearman: inputs have different lengths");
  if (xs.size() < 2) throw DomainError("spearman: need at least two points");
  const auto rx = average_ranks(xs);
  const auto ry = average_ranks(ys);
  const double n = static_cast<double>(xs.size());
  const double mean = (n + 1.0) / 2.0;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    const double a = rx[i] - mean;
    const double b = ry[i] - mean;
    sxy += a * b;
    sxx += a * a;
    syy += b * b;
  }
  if (sxx == 0.0 || syy == 0.0) throw DomainError("spearman: correlation undefined for constant input");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

double cosine(std::span<const double> a, std::span<const double> b) {
  const double na = std::sqrt(dot(a, a));
  const double nb = std::sqrt(dot(b, b));
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot(a, b) / (na * nb);
}

MetricResult word_similarity_eval(const WordVectors& vectors, const SimilarityDataset& data) {
  std::vector<double> predicted, gold;
  for (const auto& item : data) {
    const auto a = vectors.id_of(item.word1);
    const auto b = vectors.id_of(item.word2);
    if (!a || !b) continue;
    predicted.push_back(cosine(vectors.vectors.row(static_cast<std::size_t>(*a)),
                               vectors.vectors.row(static_cast<std::size_t>(*b))));
    gold.push_back(item.score);
  }
  if (predicted.size() < 2)
    throw EvaluationError("word similarity: fewer than two in-vocabulary pairs");
  MetricResult r{"spearman", 0.0, 0.0, predicted.size(), data.size()};
  try {
    r.value = spearman(predicted, gold);
  } catch (const DomainError& e) {
    throw EvaluationError(std::string("word similarity: ") + e.what());
  }
  r.coverage = static_cast<double>(r.covered) / static_cast<double>(r.total);
  return r;
}

TokenId analogy_answer(const Matrix& normalized, std::span<const double> query,
                       std::span<const TokenId> excluded) {
  TokenId best = kNoToken;
  double best_score = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < normalized.rows(); ++i) {
    const auto id = static_cast<TokenId>(i);
    if (std::find(excluded.begin(), excluded.end(), id) != excluded.end()) continue;
    const double s = dot(normalized.row(i), query);
    if (s > best_score || best == kNoToken) {
      best = id;
      best_score = s;
    }
  }
  return best;
}

MetricResult analogy_eval(const WordVectors& vectors, const AnalogyDataset& data) {
  const Matrix normalized = normalized_rows(vectors.vectors);
  const std::size_t d = vectors.dim();
  std::size_t covered = 0, correct = 0;
  Vector query(d);
  for (const auto& item : data) {
    const auto a1 = vectors.id_of(item.a1);
    const auto a2 = vectors.id_of(item.a2);
    const auto b1 = vectors.id_of(item.b1);
    const auto b2 = vectors.id_of(item.b2);
    if (!a1 || !a2 || !b1 || !b2) continue;
    ++covered;
    auto r1 = vectors.vectors.row(static_cast<std::size_t>(*a1));
    auto r2 = vectors.vectors.row(static_cast<std::size_t>(*a2));
    auto r3 = vectors.vectors.row(static_cast<std::size_t>(*b1));
    for (std::size_t j = 0; j < d; ++j) query[j] = r2[j] - r1[j] + r3[j];
    const TokenId excluded[] = {*a1, *a2, *b1};
    if (analogy_answer(normalized, query, excluded) == *b2) ++correct;
  }
  if (covered == 0) throw EvaluationError("word analogy: no item has all four words in vocabulary");
  MetricResult r{"analogy_3cosadd", 0.0, 0.0, covered, data.size()};
  r.value = static_cast<double>(correct) / static_cast<double>(covered);
  r.coverage = static_cast<double>(covered) / static_cast<double>(data.size());
  return r;
}

KMeansResult kmeans(const Matrix& points, std::size_t k, std::uint64_t seed, std::size_t max_iter) {
  const std::size_t n = points.rows();
  const std::size_t d = points.cols();
  if (k == 0) throw DomainError("kmeans: k must be positive");
  if (k > n) throw DomainError("kmeans: k=" + std::to_string(k) + " exceeds n=" + std::to_string(n));

  Rng rng(seed, 0x6b6d);
  KMeansResult result;
  result.centroids = Matrix(k, d);

  // k-means++ seeding.
  std::vector<bool> chosen(n, false);
  std::vector<double> nearest(n, std::numeric_limits<double>::infinity());
  std::size_t first = rng.index(n);
  for (std::size_t c = 0; c < k; ++c) {
    std::size_t pick = first;
    if (c > 0) {
      double total = 0.0;
      for (std::size_t i = 0; i < n; ++i) total += chosen[i] ? 0.0 : nearest[i];
      if (total > 0.0) {
        double target = rng.uniform() * total;
        pick = n;
        for (std::size_t i = 0; i < n; ++i) {
          if (chosen[i]) continue;
          pick = i;
          target -= nearest[i];
          if (target < 0.0) break;
        }
      } else {
        // Every remaining point coincides with a centroid: choose uniformly among them.
        std::vector<std::size_t> rest;
        for (std::size_t i = 0; i < n; ++i)
          if (!chosen[i]) rest.push_back(i);
        pick = rest[rng.index(rest.size())];
      }
    }
    chosen[pick] = true;
    std::copy_n(points.row(pick).begin(), d, result.centroids.row(c).begin());
    for (std::size_t i = 0; i < n; ++i)
      nearest[i] = std::min(nearest[i], squared_distance(points.row(i), result.centroids.row(c)));
  }

  result.assignments.assign(n, 0);
  std::vector<std::size_t> previous;
  for (std::size_t iter = 0; iter < std::max<std::size_t>(max_iter, 1); ++iter) {
    double objective = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t best = 0;
      double best_dist = squared_distance(points.row(i), result.centroids.row(0));
      for (std::size_t c = 1; c < k; ++c) {
        const double dist = squared_distance(points.row(i), result.centroids.row(c));
        if (dist < best_dist) {
          best = c;
          best_dist = dist;
        }
      }
      result.assignments[i] = best;
      objective += best_dist;
    }
    result.objective_history.push_back(objective);
    result.iterations = iter + 1;
    if (result.assignments == previous) break;
    previous = result.assignments;

    Matrix sums(k, d);
    std::vector<std::size_t> sizes(k, 0);
    for (std::size_t i = 0; i < n; ++i) {
      auto s = sums.row(result.assignments[i]);
      auto p = points.row(i);
      for (std::size_t j = 0; j < d; ++j) s[j] += p[j];
      ++sizes[result.assignments[i]];
    }
    for (std::size_t c = 0; c < k; ++c) {
      if (sizes[c] == 0) continue;  // empty cluster keeps its centroid
      auto centroid = result.centroids.row(c);
      auto s = sums.row(c);
      for (std::size_t j = 0; j < d; ++j) centroid[j] = s[j] / static_cast<double>(sizes[c]);
    }
  }
  return result;
}

double purity(std::span<const std::size_t> clusters, std::span<const std::size_t> labels) {
  if (clusters.size() != labels.size()) throw DomainError("purity: length mismatch");
  if (clusters.empty()) throw DomainError("purity: no points");
  std::map<std::size_t, std::map<std::size_t, std::size_t>> overlap;
  for (std::size_t i = 0; i < clusters.size(); ++i) ++overlap[clusters[i]][labels[i]];
  std::size_t majority = 0;
  for (const auto& [cluster, counts] : overlap) {
    std::size_t best = 0;
    for (const auto& [label, count] : counts) best = std::max(best, count);
    majority += best;
  }
  return static_cast<double>(majority) / static_cast<double>(clusters.size());
}

MetricResult categorization_eval(const WordVectors& vectors, const CategorizationDataset& data,
                                 std::uint64_t seed, std::size_t max_iter) {
  std::vector<TokenId> ids;
  std::vector<std::size_t> labels;
  std::map<std::string, std::size_t> label_index;
  for (const auto& item : data) {
    const auto id = vectors.id_of(item.word);
    if (!id) continue;
    ids.push_back(*id);
    labels.push_back(label_index.try_emplace(item.category, label_index.size()).first->second);
  }
  if (label_index.size() < 2)
    throw EvaluationError("concept categorization: fewer than two covered categories");

  Matrix points(ids.size(), vectors.dim());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    auto src = vectors.vectors.row(static_cast<std::size_t>(ids[i]));
    std::copy(src.begin(), src.end(), points.row(i).begin());
  }
  points = normalized_rows(points);
  const auto clusters = kmeans(points, label_index.size(), seed, max_iter);
  MetricResult r{"purity", purity(clusters.assignments, labels), 0.0, ids.size(), data.size()};
  r.coverage = static_cast<double>(r.covered) / static_cast<double>(r.total);
  return r;
}

std::vector<ProbeHit> dimension_probe(const WordVectors& vectors, std::size_t dim, double lo, double hi) {
  if (dim >= vectors.dim())
    throw DomainError("dimension_probe: dimension " + std::to_string(dim) + " out of range for d=" +
                      std::to_string(vectors.dim()));
  if (!(lo <= hi)) throw DomainError("dimension_probe: need lo <= hi");
  std::vector<std::size_t> hits;
  for (std::size_t i = 0; i < vectors.size(); ++i) {
    const double v = vectors.vectors(i, dim);
    if (v >= lo && v <= hi) hits.push_back(i);
  }
  std::stable_sort(hits.begin(), hits.end(), [&](std::size_t a, std::size_t b) {
    return vectors.vectors(a, dim) < vectors.vectors(b, dim);
  });
  std::vector<ProbeHit> out;
  out.reserve(hits.size());
  for (std::size_t i : hits) out.push_back({vectors.tokens[i], vectors.vectors(i, dim)});
  return out;
}

std::map<std::string, double> evaluate_suite(const WordVectors& vectors, const EvalSuite& suite) {
  std::map<std::string, double> scores;
  if (suite.similarity) scores["similarity"] = word_similarity_eval(vectors, *suite.similarity).value;
  if (suite.analogy) scores["analogy"] = analogy_eval(vectors, *suite.analogy).value;
  if (suite.categorization)
    scores["categorization"] = categorization_eval(vectors, *suite.categorization, suite.seed).value;
  return scores;
}

}  // namespace wep
