#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "scratch.hpp"
#include "wep/error.hpp"
#include "wep/toy.hpp"
#include "wep/train.hpp"

namespace wep {
namespace {

std::string join_lines(const std::vector<std::string>& lines) {
  std::string s;
  for (const auto& l : lines) s += l + "\n";
  return s;
}

TrainingCorpus corpus_from(const std::string& text, std::int64_t min_count = 1) {
  TrainingCorpus c;
  std::istringstream a(text), b(text);
  c.vocab = build_vocabulary(a, min_count);
  c.sentences = encode_corpus(b, c.vocab);
  return c;
}

const TopicCorpus& small_topics() {
  static const TopicCorpus t = make_topic_corpus({5, 20, 800, 10, 3});
  return t;
}

TrainConfig small_config() {
  TrainConfig c;
  c.dim = 8;
  c.epochs = 3;
  c.min_count = 1;
  c.subsample_t = 0.0;
  c.negative_table_size = 100000;
  return c;
}

TEST(TrainConfig, Validation) {
  EXPECT_NO_THROW(TrainConfig{}.validate());
  auto bad = [](auto mutate) {
    TrainConfig c;
    mutate(c);
    EXPECT_THROW(c.validate(), ConfigError);
  };
  bad([](TrainConfig& c) { c.alpha = -1; });
  bad([](TrainConfig& c) { c.alpha = std::nan(""); });
  bad([](TrainConfig& c) { c.epochs = 0; });
  bad([](TrainConfig& c) { c.min_lr = 0; });
  bad([](TrainConfig& c) { c.min_lr = 1.0; });
  bad([](TrainConfig& c) { c.dim = 0; });
  bad([](TrainConfig& c) { c.window = 0; });
  bad([](TrainConfig& c) { c.id_scale = 0.0; });
  bad([](TrainConfig& c) { c.prior_lr_scale = 0.0; });
}

TEST(TrainConfig, AlphaGrid) {
  EXPECT_EQ(std::size(kAlphaGrid), 4u);
  for (double a : kAlphaGrid) {
    TrainConfig c;
    c.alpha = a;
    EXPECT_NO_THROW(c.validate());
  }
}

TEST(LearningRate, LinearDecayWithFloor) {
  TrainConfig c;
  c.initial_lr = 0.05;
  c.min_lr = 0.001;
  for (double p : {0.0, 0.1, 0.5, 0.9, 0.97, 0.99, 1.0})
    EXPECT_DOUBLE_EQ(learning_rate(c, p), std::max(0.001, 0.05 * (1 - p)));
  EXPECT_DOUBLE_EQ(learning_rate(c, 2.0), 0.001);
}

TEST(SgdApply, SpecExamples) {
  EmbeddingModel m;
  m.context = Matrix(3, 2, 1.0);
  m.target = Matrix(3, 2, 1.0);
  const EmbeddingModel before = m;
  GradientSet zero;
  zero.context_rows.push_back({1, {0.0, 0.0}});
  sgd_apply(m, nullptr, zero, 0.1);
  EXPECT_EQ(m.context, before.context);

  GradientSet g;
  g.context_rows.push_back({0, {2.0, 0.0}});
  sgd_apply(m, nullptr, g, 0.1);
  EXPECT_DOUBLE_EQ(m.context(0, 0), 0.8);
  EXPECT_DOUBLE_EQ(m.context(0, 1), 1.0);
}

TEST(SgdApply, DisjointRowsCompose) {
  Rng rng(2);
  EmbeddingModel a;
  a.context = Matrix(6, 3);
  a.target = Matrix(6, 3);
  for (double& x : a.context.values()) x = rng.normal();
  for (double& x : a.target.values()) x = rng.normal();
  EmbeddingModel b = a;
  auto row = [&] { return Vector{rng.normal(), rng.normal(), rng.normal()}; };
  GradientSet g1, g2, both;
  g1.context_rows.push_back({1, row()});
  g1.target_rows.push_back({2, row()});
  g2.context_rows.push_back({4, row()});
  g2.target_rows.push_back({5, row()});
  for (auto* g : {&g1, &g2}) {
    both.context_rows.insert(both.context_rows.end(), g->context_rows.begin(), g->context_rows.end());
    both.target_rows.insert(both.target_rows.end(), g->target_rows.begin(), g->target_rows.end());
  }
  sgd_apply(a, nullptr, g1, 0.3);
  sgd_apply(a, nullptr, g2, 0.3);
  sgd_apply(b, nullptr, both, 0.3);
  EXPECT_EQ(a.context, b.context);
  EXPECT_EQ(a.target, b.target);
}

TEST(SgdApply, PriorOnlyWhenRequested) {
  EmbeddingModel m;
  m.context = Matrix(2, 1);
  m.target = Matrix(2, 1);
  PriorNetParams p = PriorNetParams::zeros(1, 1, 1, 1.0);
  GradientSet g;
  g.prior = PriorGradients::zeros_like(p);
  g.prior->b2 = {1.0, -1.0};
  sgd_apply(m, nullptr, g, 0.5);
  EXPECT_EQ(p.b2, (Vector{0, 0}));
  sgd_apply(m, &p, g, 0.5);
  EXPECT_EQ(p.b2, (Vector{-0.5, 0.5}));
  EXPECT_GT(p.version, 0u);
}

TEST(SgdApply, NonFiniteAborts) {
  EmbeddingModel m;
  m.context = Matrix(2, 1);
  m.target = Matrix(2, 1);
  GradientSet g;
  g.target_rows.push_back({0, {std::nan("")}});
  EXPECT_THROW(sgd_apply(m, nullptr, g, 0.1), NumericalError);
  GradientSet ok;
  EXPECT_THROW(sgd_apply(m, nullptr, ok, 0.0), DomainError);
}

TEST(Train, SerialRunsAreBitIdentical) {
  const TrainingCorpus c = corpus_from(join_lines(small_topics().lines));
  TrainConfig cfg = small_config();
  cfg.alpha = 0.1;
  cfg.dynamic_window = true;
  cfg.subsample_t = 1e-3;
  const TrainResult a = train(cfg, c);
  const TrainResult b = train(cfg, c);
  EXPECT_EQ(a.model.context, b.model.context);
  EXPECT_EQ(a.model.target, b.model.target);
  EXPECT_EQ(a.prior.w1, b.prior.w1);
  EXPECT_EQ(a.prior.b2, b.prior.b2);
  cfg.seed = 2;
  const TrainResult other = train(cfg, c);
  EXPECT_NE(a.model.context, other.model.context);
}

TEST(Train, AlphaZeroMatchesPlainPath) {
  const TrainingCorpus c = corpus_from(join_lines(small_topics().lines));
  for (Backbone bb : {Backbone::cbow, Backbone::skipgram}) {
    TrainConfig cfg = small_config();
    cfg.backbone = bb;
    cfg.alpha = 0.0;
    const TrainResult wep = train(cfg, c);
    cfg.use_prior = false;
    const TrainResult plain = train(cfg, c);
    EXPECT_EQ(wep.model.context, plain.model.context);
    EXPECT_EQ(wep.model.target, plain.model.target);
  }
}

TEST(Train, ReportsAndLossDecrease) {
  const TrainingCorpus c = corpus_from(join_lines(small_topics().lines));
  TrainConfig cfg = small_config();
  cfg.epochs = 4;
  cfg.alpha = 0.0;
  int callbacks = 0;
  const TrainResult r = train(cfg, c, nullptr, [&](const EpochReport&) { ++callbacks; });
  ASSERT_EQ(r.reports.size(), 4u);
  EXPECT_EQ(callbacks, 4);
  EXPECT_LT(r.reports.back().mean_total, r.reports.front().mean_total);
  for (const auto& rep : r.reports) {
    EXPECT_GT(rep.samples, 0u);
    EXPECT_DOUBLE_EQ(rep.mean_total, rep.mean_reconstruction);
  }
  EXPECT_GE(r.reports.back().final_lr, cfg.min_lr);
  EXPECT_LT(r.reports.back().final_lr, 0.05 * cfg.initial_lr);
}

TEST(Train, ReportDecomposition) {
  const TrainingCorpus c = corpus_from(join_lines(small_topics().lines));
  TrainConfig cfg = small_config();
  cfg.epochs = 1;
  cfg.alpha = 0.5;
  cfg.prior_init = PriorInit::zero;
  cfg.freeze_prior = true;
  const TrainResult r = train(cfg, c);
  const auto& rep = r.reports.front();
  EXPECT_NEAR(rep.mean_total, rep.mean_reconstruction + 0.5 * rep.mean_prior_penalty,
              1e-9 * std::abs(rep.mean_total));
  // frozen zero prior stays zero
  for (double x : r.prior.w2.values()) EXPECT_EQ(x, 0.0);
}

double mean_sq_norm(const Matrix& m) {
  double s = 0.0;
  for (double x : m.values()) s += x * x;
  return s / static_cast<double>(m.rows());
}

TEST(Train, FrozenZeroPriorShrinksContextRows) {
  const TrainingCorpus c = corpus_from(join_lines(small_topics().lines));
  TrainConfig cfg = small_config();
  cfg.prior_init = PriorInit::zero;
  cfg.freeze_prior = true;
  cfg.alpha = 0.0;
  const double free_norm = mean_sq_norm(train(cfg, c).model.context);
  cfg.alpha = 0.5;
  const double pulled = mean_sq_norm(train(cfg, c).model.context);
  EXPECT_LT(pulled, free_norm);
}

TEST(Train, ParallelModeProducesFiniteModel) {
  const TrainingCorpus c = corpus_from(join_lines(small_topics().lines));
  TrainConfig cfg = small_config();
  cfg.threads = 3;
  cfg.alpha = 0.1;
  cfg.average_prior = true;
  const TrainResult r = train(cfg, c);
  EXPECT_NO_THROW(r.model.validate());
  EXPECT_NO_THROW(r.prior.validate());
  EXPECT_EQ(r.reports.size(), 3u);
}

TEST(Train, GraphModeUsesEdges) {
  TrainingCorpus c = corpus_from("a b c d\nb c a\n");
  std::istringstream edges("0\t0\t1\tx\n0\t1\t2\ty\n1\t0\t2\tz\n");
  c.graph = DependencyGraph::parse(edges);
  TrainConfig cfg = small_config();
  cfg.context_mode = ContextMode::graph;
  cfg.epochs = 2;
  const TrainResult r = train(cfg, c);
  // sentence 0: 3 samples (d isolated), sentence 1: 2 samples (a isolated)
  EXPECT_EQ(r.reports.front().samples, 5u);
}

TEST(Train, ModeAndGraphMustAgree) {
  TrainingCorpus c = corpus_from("a b c\n");
  TrainConfig cfg = small_config();
  cfg.context_mode = ContextMode::graph;
  EXPECT_THROW(train(cfg, c), ConfigError);
  std::istringstream edges("0\t0\t1\tx\n");
  c.graph = DependencyGraph::parse(edges);
  cfg.context_mode = ContextMode::window;
  EXPECT_THROW(train(cfg, c), ConfigError);
  std::istringstream bad("0\t0\t7\tx\n");
  c.graph = DependencyGraph::parse(bad);
  cfg.context_mode = ContextMode::graph;
  EXPECT_THROW(train(cfg, c), FormatError);
}

TEST(Train, SingleWordVocabularyRejected) {
  EXPECT_THROW(train(small_config(), corpus_from("a a a\n")), ConfigError);
}

TEST(Train, DivergenceAbortsWithStep) {
  const TrainingCorpus c = corpus_from(join_lines(small_topics().lines));
  TrainConfig cfg = small_config();
  cfg.initial_lr = 1e300;
  cfg.min_lr = 1e300;
  cfg.nan_check_interval = 50;
  try {
    train(cfg, c);
    FAIL() << "expected NumericalError";
  } catch (const NumericalError& e) {
    EXPECT_NE(std::string(e.what()).find("step"), std::string::npos) << e.what();
  }
}

TEST(StabilityCurve, AveragesTasks) {
  std::vector<EpochReport> reports(3);
  for (int i = 0; i < 3; ++i) reports[i].epoch = i + 1;
  reports[0].scores = {{"similarity", 0.2}, {"analogy", 0.4}};
  reports[1].scores = {{"similarity", 0.5}};
  const auto curve = stability_curve(reports);
  ASSERT_EQ(curve.size(), 2u);
  EXPECT_NEAR(curve[0].score, 0.3, 1e-15);
  EXPECT_EQ(curve[1].epoch, 2);
  EXPECT_DOUBLE_EQ(curve[1].score, 0.5);
}

TEST(StabilityCurve, ConstantScoresGiveConstantCurve) {
  std::vector<EpochReport> reports(4);
  for (int i = 0; i < 4; ++i) {
    reports[i].epoch = i + 1;
    reports[i].scores = {{"categorization", 0.7}};
  }
  for (const auto& p : stability_curve(reports)) EXPECT_DOUBLE_EQ(p.score, 0.7);
}

TEST(StabilityCurve, RequiresScores) {
  EXPECT_THROW(stability_curve(std::vector<EpochReport>(2)), ConfigError);
}

TEST(StabilityCurve, OneRowPerEpochOnToyRun) {
  const TopicCorpus& t = small_topics();
  const TrainingCorpus c = corpus_from(join_lines(t.lines));
  TrainConfig cfg = small_config();
  cfg.alpha = 0.5;
  EvalSuite suite;
  suite.similarity = topic_similarity_set(t);
  const TrainResult r = train(cfg, c, &suite);
  const auto curve = stability_curve(r.reports);
  ASSERT_EQ(curve.size(), 3u);
  testing::ScratchDir dir("curve");
  write_stability_curve(curve, dir / "curve.tsv");
  std::istringstream in(testing::slurp(dir / "curve.tsv"));
  std::string line;
  int rows = 0;
  while (std::getline(in, line)) {
    ++rows;
    int epoch = 0;
    double score = 0;
    char tab = 0;
    std::istringstream ls(line);
    ls >> epoch;
    ls.get(tab);
    ls >> score;
    EXPECT_EQ(epoch, rows);
    EXPECT_EQ(tab, '\t');
    EXPECT_TRUE(std::isfinite(score));
  }
  EXPECT_EQ(rows, 3);
  write_epoch_reports(r.reports, dir / "epochs.tsv");
  EXPECT_TRUE(testing::slurp(dir / "epochs.tsv")
                  .starts_with("epoch\tsamples\tmean_total\tmean_reconstruction\tmean_prior_penalty\tlr\tsimilarity\n"));
}

TEST(Checkpoint, RoundTrip) {
  const TrainingCorpus c = corpus_from(join_lines(small_topics().lines));
  TrainConfig cfg = small_config();
  cfg.epochs = 1;
  cfg.alpha = 0.1;
  const TrainResult r = train(cfg, c);
  testing::ScratchDir dir("ckpt");
  const auto paths = CheckpointPaths::from_prefix(dir / "emb.txt");
  EXPECT_EQ(paths.target, dir / "emb.txt.target");
  EXPECT_EQ(paths.prior, dir / "emb.txt.prior");
  checkpoint_save(paths, c.vocab, r.model, r.prior);
  const Checkpoint back = checkpoint_load(paths);
  EXPECT_EQ(back.tokens, c.vocab.tokens());
  double worst = 0.0;
  for (std::size_t i = 0; i < r.model.context.size(); ++i) {
    worst = std::max(worst, std::abs(back.model.context.values()[i] - r.model.context.values()[i]));
    worst = std::max(worst, std::abs(back.model.target.values()[i] - r.model.target.values()[i]));
  }
  for (std::size_t i = 0; i < r.prior.w1.size(); ++i)
    worst = std::max(worst, std::abs(back.prior.w1.values()[i] - r.prior.w1.values()[i]));
  EXPECT_LE(worst, 1e-6);
}

TEST(Checkpoint, TruncatedAndMismatchedFiles) {
  testing::ScratchDir dir("ckpt-bad");
  const auto paths = CheckpointPaths::from_prefix(dir / "m");
  const Vocabulary v = Vocabulary::from_counts({{"a", 2}, {"b", 1}});
  EmbeddingModel m;
  m.context = Matrix(2, 3, 0.5);
  m.target = Matrix(2, 3, -0.5);
  checkpoint_save(paths, v, m, PriorNetParams::zeros(4, 4, 3, 0.5));
  EXPECT_NO_THROW(checkpoint_load(paths));

  const std::string full = testing::slurp(paths.context);
  dir.write("m", full.substr(0, full.size() - 6));
  EXPECT_THROW(checkpoint_load(paths), FormatError);
  dir.write("m", full);

  save_prior(PriorNetParams::zeros(4, 4, 2, 0.5), paths.prior);
  EXPECT_THROW(checkpoint_load(paths), FormatError);
  save_prior(PriorNetParams::zeros(4, 4, 3, 0.5), paths.prior);

  dir.write("m.target", "3 3\na 0 0 0\nb 0 0 0\nc 0 0 0\n");
  EXPECT_THROW(checkpoint_load(paths), FormatError);
}

}  // namespace
}  // namespace wep
