#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <sstream>

#include "scratch.hpp"
#include "wep/error.hpp"
#include "wep/eval.hpp"
#include "wep/linalg.hpp"

namespace wep {
namespace {

WordVectors make_vectors(std::vector<std::string> tokens, const std::vector<Vector>& rows) {
  WordVectors w;
  w.tokens = std::move(tokens);
  w.vectors = Matrix(rows.size(), rows.empty() ? 0 : rows[0].size());
  for (std::size_t i = 0; i < rows.size(); ++i) std::copy(rows[i].begin(), rows[i].end(), w.vectors.row(i).begin());
  w.rebuild_index();
  return w;
}

// Brute-force Spearman without ties: 1 - 6 sum d^2 / (n (n^2 - 1)).
double spearman_no_ties(const Vector& xs, const Vector& ys) {
  const std::size_t n = xs.size();
  auto rank = [n](const Vector& v) {
    Vector r(n);
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t below = 0;
      for (std::size_t j = 0; j < n; ++j) below += v[j] < v[i];
      r[i] = static_cast<double>(below + 1);
    }
    return r;
  };
  const Vector rx = rank(xs), ry = rank(ys);
  double d2 = 0.0;
  for (std::size_t i = 0; i < n; ++i) d2 += (rx[i] - ry[i]) * (rx[i] - ry[i]);
  const double nn = static_cast<double>(n);
  return 1.0 - 6.0 * d2 / (nn * (nn * nn - 1.0));
}

TEST(Spearman, SpecExamples) {
  const Vector a{1, 2, 3, 4, 5};
  EXPECT_DOUBLE_EQ(spearman(a, Vector{10, 20, 30, 40, 50}), 1.0);
  EXPECT_DOUBLE_EQ(spearman(a, Vector{5, 4, 3, 2, 1}), -1.0);
  EXPECT_NEAR(spearman(Vector{1, 2, 3, 4}, Vector{1, 3, 2, 4}), 0.8, 1e-12);
}

TEST(Spearman, MatchesClosedFormWithoutTies) {
  Rng rng(1);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 3 + rng.index(30);
    Vector xs(n), ys(n);
    for (std::size_t i = 0; i < n; ++i) {
      xs[i] = rng.normal();
      ys[i] = rng.normal();
    }
    EXPECT_NEAR(spearman(xs, ys), spearman_no_ties(xs, ys), 1e-12);
  }
}

TEST(Spearman, AverageTieRanks) {
  EXPECT_EQ(average_ranks(Vector{10, 20, 20, 30}), (Vector{1, 2.5, 2.5, 4}));
  EXPECT_EQ(average_ranks(Vector{3, 3, 3}), (Vector{2, 2, 2}));
}

TEST(Spearman, Properties) {
  Rng rng(2);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 2 + rng.index(20);
    Vector xs(n), ys(n), tx(n);
    for (std::size_t i = 0; i < n; ++i) {
      xs[i] = std::round(rng.normal() * 3);  // ties on purpose
      ys[i] = rng.normal();
      tx[i] = std::exp(xs[i]) + 7;  // strictly increasing transform
    }
    double s = 0.0;
    try {
      s = spearman(xs, ys);
    } catch (const DomainError&) {
      continue;  // constant side
    }
    EXPECT_GE(s, -1.0 - 1e-12);
    EXPECT_LE(s, 1.0 + 1e-12);
    EXPECT_NEAR(s, spearman(ys, xs), 1e-14);
    EXPECT_NEAR(s, spearman(tx, ys), 1e-12);
  }
}

TEST(Spearman, Errors) {
  EXPECT_THROW(spearman(Vector{1, 1, 1}, Vector{1, 2, 3}), DomainError);
  EXPECT_THROW(spearman(Vector{1}, Vector{1}), DomainError);
  EXPECT_THROW(spearman(Vector{1, 2}, Vector{1, 2, 3}), DomainError);
}

TEST(WordSimilarity, PerfectRankAgreement) {
  const auto w = make_vectors({"a", "b", "c", "d"}, {{1, 0}, {1, 0.1}, {1, 1}, {0, 1}});
  const SimilarityDataset data{{"a", "b", 9}, {"a", "c", 5}, {"a", "d", 1}, {"a", "zzz", 3}};
  const MetricResult r = word_similarity_eval(w, data);
  EXPECT_DOUBLE_EQ(r.value, 1.0);
  EXPECT_EQ(r.covered, 3u);
  EXPECT_DOUBLE_EQ(r.coverage, 0.75);
}

TEST(WordSimilarity, MatchesBruteForce) {
  const auto w = make_vectors({"x", "y", "z"}, {{1, 2, 0}, {0, 1, 1}, {-1, 0, 3}});
  const SimilarityDataset data{{"x", "y", 3}, {"x", "z", 1}, {"y", "z", 2}};
  auto cos = [](const Vector& a, const Vector& b) {
    double ab = 0, aa = 0, bb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      ab += a[i] * b[i];
      aa += a[i] * a[i];
      bb += b[i] * b[i];
    }
    return ab / std::sqrt(aa * bb);
  };
  const Vector x{1, 2, 0}, y{0, 1, 1}, z{-1, 0, 3};  // cosines 0.632, -0.141, 0.671
  const Vector model{cos(x, y), cos(x, z), cos(y, z)};
  EXPECT_NEAR(word_similarity_eval(w, data).value, spearman_no_ties(model, Vector{3, 1, 2}), 1e-12);
}

TEST(WordSimilarity, AllOutOfVocabulary) {
  const auto w = make_vectors({"a", "b"}, {{1, 0}, {0, 1}});
  EXPECT_THROW(word_similarity_eval(w, SimilarityDataset{{"p", "q", 1}, {"r", "s", 2}}), EvaluationError);
}

TEST(Analogy, ExactIdentity) {
  // e_b2 = e_a2 - e_a1 + e_b1; distractors point elsewhere
  const auto w = make_vectors({"a1", "a2", "b1", "b2", "far1", "far2"},
                              {{1, 0, 0}, {1, 1, 0}, {0, 0, 1}, {0, 1, 1}, {-1, -1, 0}, {0, -1, -1}});
  const MetricResult r = analogy_eval(w, AnalogyDataset{{"a1", "a2", "b1", "b2"}});
  EXPECT_DOUBLE_EQ(r.value, 1.0);
}

TEST(Analogy, QueryWordsExcluded) {
  // query = a2 - a1 + b1 = (0.1, 0, 1) is nearest to b1 itself, which is
  // excluded, so b2 wins over the distractor.
  const auto w = make_vectors({"a1", "a2", "b1", "b2", "c"},
                              {{1, 0, 0}, {1.1, 0, 0}, {0, 0, 1}, {0.4, 0, 1}, {0, 1, 0}});
  const MetricResult r = analogy_eval(w, AnalogyDataset{{"a1", "a2", "b1", "b2"}});
  EXPECT_DOUBLE_EQ(r.value, 1.0);
}

TEST(Analogy, TiesGoToLowestId) {
  const auto w = make_vectors({"a", "b", "c"}, {{1, 0}, {1, 0}, {0, 1}});
  const Matrix n = w.vectors;
  const TokenId none[] = {2};
  EXPECT_EQ(analogy_answer(n, Vector{1, 0}, none), 0);
}

TEST(Analogy, EmptyAfterOovFilter) {
  const auto w = make_vectors({"a", "b"}, {{1, 0}, {0, 1}});
  EXPECT_THROW(analogy_eval(w, AnalogyDataset{{"a", "b", "c", "d"}}), EvaluationError);
}

// Brute-force 3CosAdd straight from the definition.
double brute_analogy(const WordVectors& w, const AnalogyDataset& data) {
  std::size_t correct = 0;
  for (const auto& it : data) {
    const auto a1 = *w.id_of(it.a1), a2 = *w.id_of(it.a2), b1 = *w.id_of(it.b1), b2 = *w.id_of(it.b2);
    Vector q(w.dim());
    for (std::size_t j = 0; j < w.dim(); ++j)
      q[j] = w.vectors(a2, j) - w.vectors(a1, j) + w.vectors(b1, j);
    TokenId best = -1;
    double best_cos = -2.0;
    for (std::size_t i = 0; i < w.size(); ++i) {
      const auto id = static_cast<TokenId>(i);
      if (id == a1 || id == a2 || id == b1) continue;
      const double c = cosine(w.vectors.row(i), q);
      if (c > best_cos) {
        best_cos = c;
        best = id;
      }
    }
    correct += best == b2;
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

TEST(Analogy, RotationInvarianceAndBruteForce) {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t v = 12, d = 3 + rng.index(3);
    std::vector<std::string> tokens;
    std::vector<Vector> rows;
    for (std::size_t i = 0; i < v; ++i) {
      tokens.push_back("w" + std::to_string(i));
      Vector r(d);
      for (double& x : r) x = rng.normal();
      rows.push_back(r);
    }
    const WordVectors w = make_vectors(tokens, rows);
    AnalogyDataset data;
    for (int q = 0; q < 30; ++q) {
      std::vector<std::size_t> pick(v);
      std::iota(pick.begin(), pick.end(), 0);
      for (std::size_t k = 0; k < 4; ++k) std::swap(pick[k], pick[k + rng.index(v - k)]);
      data.push_back({tokens[pick[0]], tokens[pick[1]], tokens[pick[2]], tokens[pick[3]]});
    }
    const Matrix rot = linalg::random_orthogonal(d, rng);
    WordVectors rotated = w;
    rotated.vectors = linalg::multiply(w.vectors, rot);
    const double base = analogy_eval(w, data).value;
    EXPECT_NEAR(base, brute_analogy(w, data), 1e-12);
    EXPECT_EQ(base, analogy_eval(rotated, data).value);
    // per item argmax agreement, not just the aggregate
    for (const auto& item : data) {
      const AnalogyDataset one{item};
      EXPECT_EQ(analogy_eval(w, one).value, analogy_eval(rotated, one).value);
    }
  }
}

TEST(KMeans, SeparatedBlobs) {
  Rng rng(4);
  Matrix pts(200, 2);
  std::vector<std::size_t> labels(200);
  for (std::size_t i = 0; i < 200; ++i) {
    labels[i] = i % 2;
    pts(i, 0) = (labels[i] ? 50.0 : -50.0) + rng.normal();
    pts(i, 1) = rng.normal();
  }
  const KMeansResult r = kmeans(pts, 2, 9);
  EXPECT_DOUBLE_EQ(purity(r.assignments, labels), 1.0);
}

TEST(KMeans, KEqualsN) {
  Rng rng(5);
  Matrix pts(7, 3);
  for (double& x : pts.values()) x = rng.normal();
  const KMeansResult r = kmeans(pts, 7, 1);
  std::vector<std::size_t> sorted = r.assignments;
  std::sort(sorted.begin(), sorted.end());
  EXPECT_EQ(std::unique(sorted.begin(), sorted.end()) - sorted.begin(), 7);
}

TEST(KMeans, LloydObjectiveMonotone) {
  Rng rng(6);
  for (int trial = 0; trial < 30; ++trial) {
    Matrix pts(150, 4);
    for (double& x : pts.values()) x = rng.normal();
    const KMeansResult r = kmeans(pts, 2 + rng.index(8), 100 + trial);
    ASSERT_FALSE(r.objective_history.empty());
    for (std::size_t i = 1; i < r.objective_history.size(); ++i)
      EXPECT_LE(r.objective_history[i], r.objective_history[i - 1] * (1 + 1e-12));
  }
}

TEST(KMeans, Errors) {
  Matrix pts(3, 2);
  EXPECT_THROW(kmeans(pts, 4, 1), DomainError);
  EXPECT_THROW(kmeans(pts, 0, 1), DomainError);
}

TEST(Purity, SpecExamples) {
  const std::vector<std::size_t> gold{0, 0, 1, 1, 2, 2};
  EXPECT_DOUBLE_EQ(purity(gold, gold), 1.0);
  const std::vector<std::size_t> one(6, 0);
  EXPECT_DOUBLE_EQ(purity(one, gold), 1.0 / 3);
  // {3A + 1B}, {2B}
  const std::vector<std::size_t> clusters{0, 0, 0, 0, 1, 1};
  const std::vector<std::size_t> labels{0, 0, 0, 1, 1, 1};
  EXPECT_NEAR(purity(clusters, labels), 5.0 / 6, 1e-15);
}

TEST(Purity, RefinementIsPureAndRangeHolds) {
  Rng rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 1 + rng.index(40);
    std::vector<std::size_t> labels(n), clusters(n), refine(n);
    for (std::size_t i = 0; i < n; ++i) {
      labels[i] = rng.index(4);
      clusters[i] = rng.index(5);
      refine[i] = labels[i] * 10 + rng.index(3);
    }
    const double p = purity(clusters, labels);
    EXPECT_GT(p, 0.0);
    EXPECT_LE(p, 1.0);
    EXPECT_DOUBLE_EQ(purity(refine, labels), 1.0);
  }
}

TEST(Categorization, CleanClustersAndCoverage) {
  const auto w = make_vectors({"cat", "dog", "car", "bus"}, {{1, 0.1}, {1, -0.1}, {-0.1, 1}, {0.1, 1}});
  const CategorizationDataset data{{"cat", "animal"}, {"dog", "animal"}, {"car", "vehicle"},
                                   {"bus", "vehicle"}, {"yak", "animal"}};
  const MetricResult r = categorization_eval(w, data, 1);
  EXPECT_DOUBLE_EQ(r.value, 1.0);
  EXPECT_EQ(r.covered, 4u);
  EXPECT_THROW(categorization_eval(w, CategorizationDataset{{"cat", "a"}, {"dog", "a"}}, 1), EvaluationError);
}

TEST(Probe, SpecExamples) {
  const auto w = make_vectors({"w0", "w1", "w2", "w3"}, {{-1, 9}, {0, 9}, {0.5, 9}, {2, 9}});
  const auto hits = dimension_probe(w, 0, 0.0, 1.0);
  ASSERT_EQ(hits.size(), 2u);
  EXPECT_EQ(hits[0].word, "w1");
  EXPECT_EQ(hits[1].word, "w2");
  EXPECT_TRUE(dimension_probe(w, 0, 0.25, 0.25).empty());
  EXPECT_EQ(dimension_probe(w, 0).size(), 4u);
  EXPECT_THROW(dimension_probe(w, 2), DomainError);
  EXPECT_THROW(dimension_probe(w, 0, 1.0, 0.0), DomainError);
}

TEST(Probe, SortedAndComplete) {
  Rng rng(8);
  std::vector<std::string> tokens;
  std::vector<Vector> rows;
  for (int i = 0; i < 300; ++i) {
    tokens.push_back("t" + std::to_string(i));
    rows.push_back({rng.normal(), rng.normal()});
  }
  const auto w = make_vectors(tokens, rows);
  const auto hits = dimension_probe(w, 1, -0.5, 0.7);
  std::size_t expected = 0;
  for (const auto& r : rows) expected += r[1] >= -0.5 && r[1] <= 0.7;
  EXPECT_EQ(hits.size(), expected);
  for (std::size_t i = 1; i < hits.size(); ++i) EXPECT_LE(hits[i - 1].value, hits[i].value);
}

TEST(Datasets, Parsers) {
  std::istringstream sim("Cat\tdog\t7.5\n\nA\tb\t1\n");
  const auto s = read_similarity_dataset(sim);
  ASSERT_EQ(s.size(), 2u);
  EXPECT_EQ(s[0].word1, "cat");
  EXPECT_DOUBLE_EQ(s[0].score, 7.5);
  std::istringstream bad("a\tb\tnope\n");
  EXPECT_THROW(read_similarity_dataset(bad), FormatError);

  std::istringstream an(": capital\nathens greece berlin germany\n");
  const auto a = read_analogy_dataset(an);
  ASSERT_EQ(a.size(), 1u);
  EXPECT_EQ(a[0].b2, "germany");
  std::istringstream dup("a a b c\n");
  EXPECT_THROW(read_analogy_dataset(dup), FormatError);

  std::istringstream cat("apple\tfruit\nbus\tvehicle\n");
  EXPECT_EQ(read_categorization_dataset(cat).size(), 2u);
  EXPECT_THROW(load_similarity_dataset("/nonexistent/sim.tsv"), IoError);
}

}  // namespace
}  // namespace wep
