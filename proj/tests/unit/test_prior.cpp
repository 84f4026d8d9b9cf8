#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "scratch.hpp"
#include "wep/error.hpp"
#include "wep/prior.hpp"

namespace wep {
namespace {

PriorNetParams tiny(double w1, double w2_mu, double w2_ls) {
  PriorNetParams p = PriorNetParams::zeros(1, 1, 1, 1.0);
  p.w1(0, 0) = w1;
  p.w2(0, 0) = w2_mu;
  p.w2(1, 0) = w2_ls;
  return p;
}

PriorOutput output(Vector mu, Vector log_sigma) { return {std::move(mu), std::move(log_sigma)}; }

TEST(PriorForward, ZeroNetwork) {
  const PriorNetParams p = PriorNetParams::zeros(32, 64, 8, 0.01);
  for (TokenId t : {0, 5, 99}) {
    const PriorOutput out = prior_forward(t, p, 100);
    EXPECT_EQ(out.mu, Vector(8, 0.0));
    EXPECT_EQ(out.log_sigma, Vector(8, 0.0));
  }
}

TEST(PriorForward, HandArithmetic) {
  const PriorOutput out = prior_forward(2, tiny(1, 2, 3), 10);
  EXPECT_DOUBLE_EQ(out.mu[0], 4.0);
  EXPECT_DOUBLE_EQ(out.log_sigma[0], 6.0);
}

TEST(PriorForward, DeadReluUnit) {
  PriorNetParams p = tiny(-1, 2, 3);
  p.b2 = {0.25, -0.5};
  const PriorOutput out = prior_forward(2, p, 10);
  EXPECT_DOUBLE_EQ(out.mu[0], 0.25);
  EXPECT_DOUBLE_EQ(out.log_sigma[0], -0.5);
}

TEST(PriorForward, LogSigmaClamped) {
  const PriorOutput hi = prior_forward(2, tiny(1, 0, 100), 10);
  EXPECT_DOUBLE_EQ(hi.log_sigma[0], kLogSigmaMax);
  const PriorOutput lo = prior_forward(2, tiny(1, 0, -100), 10);
  EXPECT_DOUBLE_EQ(lo.log_sigma[0], kLogSigmaMin);
}

TEST(PriorForward, TokenOutOfRange) {
  const PriorNetParams p = PriorNetParams::zeros(4, 4, 2, 0.1);
  EXPECT_THROW(prior_forward(-1, p, 10), DomainError);
  EXPECT_THROW(prior_forward(10, p, 10), DomainError);
}

TEST(PriorForward, InputIsDuplicatedScaledId) {
  Rng rng(2);
  const PriorNetParams p = PriorNetParams::glorot(32, 64, 4, 1.0 / 50, rng);
  PriorCache cache;
  prior_forward(7, p, 50, &cache);
  EXPECT_EQ(cache.input, Vector(32, 7.0 / 50));
}

TEST(PriorForward, WeightSharing) {
  // Same network, same scaled input => same output, regardless of the token
  // the input came from.
  Rng rng(4);
  const PriorNetParams a = PriorNetParams::glorot(32, 64, 6, 0.5, rng);
  PriorNetParams b = a;
  b.id_scale = 0.25;
  const PriorOutput x = prior_forward(3, a, 10);  // 3 * 0.5
  const PriorOutput y = prior_forward(6, b, 10);  // 6 * 0.25
  EXPECT_EQ(x.mu, y.mu);
  EXPECT_EQ(x.log_sigma, y.log_sigma);
}

TEST(PriorPenalty, SpecExamples) {
  EXPECT_DOUBLE_EQ(prior_penalty(Vector{0.3, -1}, output({0.3, -1}, {0, 0})), 0.0);
  EXPECT_DOUBLE_EQ(prior_penalty(Vector{2}, output({0}, {0})), 2.0);
  const double ln2 = std::log(2.0);
  EXPECT_NEAR(prior_penalty(Vector{1, 1}, output({0, 0}, {ln2, ln2})), 2 * (0.125 + ln2), 1e-15);
  EXPECT_NEAR(2 * (0.125 + ln2), 1.63629, 1e-5);
}

TEST(PriorPenalty, DimensionMismatch) {
  EXPECT_THROW(prior_penalty(Vector{1, 2}, output({0}, {0})), DomainError);
}

TEST(PriorPenalty, TranslationInvarianceAndLowerBound) {
  Rng rng(8);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t d = 1 + rng.index(16);
    Vector h(d), mu(d), ls(d), h2(d), mu2(d);
    double floor = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      h[j] = rng.uniform(-3, 3);
      mu[j] = rng.uniform(-3, 3);
      ls[j] = rng.uniform(-2, 2);
      const double delta = rng.uniform(-50, 50);
      h2[j] = h[j] + delta;
      mu2[j] = mu[j] + delta;
      floor += ls[j];
    }
    const double p1 = prior_penalty(h, output(mu, ls));
    const double p2 = prior_penalty(h2, output(mu2, ls));
    EXPECT_LE(std::abs(p1 - p2), 1e-10 * std::max(1.0, std::abs(p1)));
    EXPECT_GE(p1, floor);
    EXPECT_DOUBLE_EQ(prior_penalty(mu, output(mu, ls)), floor);
  }
}

TEST(PriorGradientsTest, StationaryResidual) {
  const PriorNetParams p = PriorNetParams::zeros(2, 3, 2, 1.0);
  PriorCache cache;
  const PriorOutput out = prior_forward(1, p, 4, &cache);
  const PriorGradients g = prior_penalty_gradients(out.mu, out, cache, p);
  EXPECT_EQ(g.h, Vector(2, 0.0));
  // d/d b2 is d/d raw output: 0 for the mu half, 1 for the log sigma half
  EXPECT_EQ(g.b2, (Vector{0, 0, 1, 1}));
}

TEST(PriorGradientsTest, ScalarAnalytic) {
  const PriorNetParams p = PriorNetParams::zeros(1, 1, 1, 1.0);
  PriorCache cache;
  const PriorOutput out = prior_forward(0, p, 1, &cache);
  const PriorGradients g = prior_penalty_gradients(Vector{2}, out, cache, p);
  EXPECT_DOUBLE_EQ(g.h[0], 2.0);
  EXPECT_DOUBLE_EQ(g.b2[0], -2.0);  // d/d mu
  EXPECT_DOUBLE_EQ(g.b2[1], -3.0);  // d/d log sigma
}

TEST(PriorGradientsTest, StaleCacheRejected) {
  PriorNetParams p = PriorNetParams::zeros(2, 2, 1, 1.0);
  PriorCache cache;
  const PriorOutput out = prior_forward(0, p, 1, &cache);
  p.version += 1;
  EXPECT_THROW(prior_penalty_gradients(Vector{1}, out, cache, p), ContractError);
  PriorNetParams other = p;
  PriorCache fresh;
  const PriorOutput o2 = prior_forward(0, p, 1, &fresh);
  EXPECT_THROW(prior_penalty_gradients(Vector{1}, o2, fresh, other), ContractError);
}

double penalty_at(const Vector& h, TokenId t, const PriorNetParams& p, std::size_t vocab) {
  return prior_penalty(h, prior_forward(t, p, vocab));
}

double rel(double a, double b) { return std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)}); }

TEST(PriorGradientsTest, MatchesCentralDifferences) {
  Rng rng(21);
  const double step = 1e-4;
  int checked = 0;
  for (int trial = 0; trial < 25; ++trial) {
    const std::size_t d = 1 + rng.index(4);
    const std::size_t vocab = 20;
    PriorNetParams p = PriorNetParams::glorot(4, 6, d, 1.0 / vocab, rng);
    for (double& b : p.b1) b = 0.3 * rng.normal();
    for (double& b : p.b2) b = 0.3 * rng.normal();
    const TokenId t = static_cast<TokenId>(1 + rng.index(vocab - 1));
    Vector h(d);
    for (double& x : h) x = rng.normal();

    PriorCache cache;
    const PriorOutput out = prior_forward(t, p, vocab, &cache);
    bool near_kink = false;
    for (double a : cache.pre_activation) near_kink |= std::abs(a) < 1e-2;
    if (near_kink) continue;
    const PriorGradients g = prior_penalty_gradients(h, out, cache, p);

    auto check = [&](double& param, double analytic) {
      const double saved = param;
      param = saved + step;
      const double up = penalty_at(h, t, p, vocab);
      param = saved - step;
      const double down = penalty_at(h, t, p, vocab);
      param = saved;
      EXPECT_LE(rel(analytic, (up - down) / (2 * step)), 1e-4);
      ++checked;
    };
    for (std::size_t j = 0; j < d; ++j) check(h[j], g.h[j]);
    for (std::size_t i = 0; i < p.w1.size(); ++i) check(p.w1.values()[i], g.w1.values()[i]);
    for (std::size_t i = 0; i < p.b1.size(); ++i) check(p.b1[i], g.b1[i]);
    for (std::size_t i = 0; i < p.w2.size(); ++i) check(p.w2.values()[i], g.w2.values()[i]);
    for (std::size_t i = 0; i < p.b2.size(); ++i) check(p.b2[i], g.b2[i]);
  }
  EXPECT_GT(checked, 500);
}

TEST(PriorGradientsTest, ClampedLogSigmaHasNoGradient) {
  PriorNetParams p = PriorNetParams::zeros(1, 1, 1, 1.0);
  p.b2[1] = 20.0;
  PriorCache cache;
  const PriorOutput out = prior_forward(0, p, 1, &cache);
  const PriorGradients g = prior_penalty_gradients(Vector{1}, out, cache, p);
  EXPECT_EQ(g.b2[1], 0.0);
}

TEST(PriorInit, GlorotBoundsAndZeroBiases) {
  Rng rng(1);
  const PriorNetParams p = PriorNetParams::glorot(32, 64, 10, 0.01, rng);
  const double s1 = std::sqrt(6.0 / (32 + 64));
  const double s2 = std::sqrt(6.0 / (64 + 20));
  for (double w : p.w1.values()) EXPECT_LE(std::abs(w), s1);
  for (double w : p.w2.values()) EXPECT_LE(std::abs(w), s2);
  EXPECT_EQ(p.b1, Vector(64, 0.0));
  EXPECT_EQ(p.b2, Vector(20, 0.0));
  EXPECT_EQ(p.out_dim, 20u);
  EXPECT_NO_THROW(p.validate());
}

TEST(PriorCheckpoint, RoundTrip) {
  Rng rng(6);
  PriorNetParams p = PriorNetParams::glorot(32, 64, 5, 1.0 / 37, rng);
  for (double& b : p.b2) b = rng.normal();
  testing::ScratchDir dir("prior");
  save_prior(p, dir / "p.prior");
  const PriorNetParams q = load_prior(dir / "p.prior");
  ASSERT_EQ(q.in_dim, 32u);
  ASSERT_EQ(q.hidden_dim, 64u);
  ASSERT_EQ(q.out_dim, 10u);
  EXPECT_NEAR(q.id_scale, p.id_scale, 1e-12);
  double worst = 0.0;
  for (std::size_t i = 0; i < p.w1.size(); ++i) worst = std::max(worst, std::abs(p.w1.values()[i] - q.w1.values()[i]));
  for (std::size_t i = 0; i < p.w2.size(); ++i) worst = std::max(worst, std::abs(p.w2.values()[i] - q.w2.values()[i]));
  for (std::size_t i = 0; i < p.b2.size(); ++i) worst = std::max(worst, std::abs(p.b2[i] - q.b2[i]));
  EXPECT_LE(worst, 1e-6);
  EXPECT_TRUE(testing::slurp(dir / "p.prior").starts_with("WEP-PRIOR 1 32 64 10 "));
}

TEST(PriorCheckpoint, MalformedInputs) {
  auto read = [](const std::string& s) {
    std::istringstream in(s);
    return read_prior(in);
  };
  EXPECT_THROW(read(""), FormatError);
  EXPECT_THROW(read("WEP-PRIOR 2 1 1 2 1\n"), FormatError);
  EXPECT_THROW(read("WEP-PRIOR 1 1 1 3 1\n0 0 0 0 0 0\n"), FormatError);
  // 1 + 1 + 2 + 2 = 6 values expected
  EXPECT_THROW(read("WEP-PRIOR 1 1 1 2 1\n0 0 0 0 0\n"), FormatError);
  EXPECT_THROW(read("WEP-PRIOR 1 1 1 2 1\n0 0 0 0 0 0 0\n"), FormatError);
  EXPECT_NO_THROW(read("WEP-PRIOR 1 1 1 2 1\n0 0 0 0 0 0\n"));
  EXPECT_THROW(load_prior("/nonexistent/p.prior"), IoError);
}

}  // namespace
}  // namespace wep
