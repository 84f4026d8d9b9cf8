#include "wep/icalab.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>

#include "wep/error.hpp"
#include "wep/linalg.hpp"
#include "wep/rng.hpp"

namespace wep {
namespace {

double leaky(double x, double slope) { return x > 0.0 ? x : slope * x; }

// Estimator activation: leaky ReLU when beta == 0, otherwise the smooth
// slope*x + (1 - slope) * softplus(beta x) / beta, whose log-derivative has a
// usable gradient with respect to where the bend sits.
struct Activation {
  double slope = kMixingSlope;
  double beta = 0.0;

  double value(double x) const {
    if (beta == 0.0) return leaky(x, slope);
    const double bx = beta * x;
    const double sp = bx > 30.0 ? bx : std::log1p(std::exp(bx));
    return slope * x + (1.0 - slope) * sp / beta;
  }
  double grad(double x) const {
    if (beta == 0.0) return x > 0.0 ? 1.0 : slope;
    return slope + (1.0 - slope) / (1.0 + std::exp(-beta * x));
  }
  // d/dx log grad(x)
  double log_grad_grad(double x) const {
    if (beta == 0.0) return 0.0;
    const double sig = 1.0 / (1.0 + std::exp(-beta * x));
    return (1.0 - slope) * beta * sig * (1.0 - sig) / grad(x);
  }
};

Vector affine(const DenseLayer& layer, std::span<const double> x) {
  Vector y = layer.b;
  for (std::size_t r = 0; r < layer.w.rows(); ++r) y[r] += dot(layer.w.row(r), x);
  return y;
}

DenseLayer zeros_like(const DenseLayer& layer) {
  return {Matrix(layer.w.rows(), layer.w.cols()), Vector(layer.b.size(), 0.0)};
}

// Forward through a stack of square layers with the activation between them,
// keeping inputs and pre-activations for backprop.
struct StackTrace {
  std::vector<Vector> inputs;
  std::vector<Vector> pre;
  Vector output;
};

StackTrace run_stack(const std::vector<DenseLayer>& layers, std::span<const double> x, const Activation& act) {
  StackTrace t;
  Vector a(x.begin(), x.end());
  for (std::size_t k = 0; k < layers.size(); ++k) {
    t.inputs.push_back(a);
    Vector p = affine(layers[k], a);
    a = p;
    if (k + 1 < layers.size())
      for (double& z : a) z = act.value(z);
    t.pre.push_back(std::move(p));
  }
  t.output = std::move(a);
  return t;
}

// Accumulates parameter gradients and returns d/d(input). `pre_scale`, when
// non-zero, adds pre_scale * d(log activation')/d(pre) at every hidden layer.
Vector backprop_stack(const std::vector<DenseLayer>& layers, const StackTrace& t, Vector d_out,
                      const Activation& act, std::vector<DenseLayer>& grads, double pre_scale = 0.0) {
  Vector d = std::move(d_out);
  for (std::size_t k = layers.size(); k-- > 0;) {
    if (k + 1 < layers.size()) {
      for (std::size_t i = 0; i < d.size(); ++i) {
        d[i] *= act.grad(t.pre[k][i]);
        if (pre_scale != 0.0) d[i] += pre_scale * act.log_grad_grad(t.pre[k][i]);
      }
    }
    const Matrix& w = layers[k].w;
    Vector d_in(w.cols(), 0.0);
    for (std::size_t r = 0; r < w.rows(); ++r) {
      grads[k].b[r] += d[r];
      auto gw = grads[k].w.row(r);
      auto wr = w.row(r);
      for (std::size_t c = 0; c < w.cols(); ++c) {
        gw[c] += d[r] * t.inputs[k][c];
        d_in[c] += d[r] * wr[c];
      }
    }
    d = std::move(d_in);
  }
  return d;
}

Matrix well_conditioned(std::size_t rows, std::size_t cols, Rng& rng) {
  const Matrix q1 = linalg::random_orthogonal(rows, rng);
  const Matrix q2 = linalg::random_orthogonal(cols, rng);
  Matrix m(rows, cols);
  const std::size_t k = std::min(rows, cols);
  Vector s(k);
  for (double& x : s) x = rng.uniform(0.5, 1.5);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) {
      double acc = 0.0;
      for (std::size_t j = 0; j < k; ++j) acc += q1(r, j) * s[j] * q2(j, c);
      m(r, c) = acc;
    }
  return m;
}

bool next_combination(std::vector<std::size_t>& idx, std::size_t n) {
  const std::size_t k = idx.size();
  for (std::size_t i = k; i-- > 0;) {
    if (idx[i] < n - k + i) {
      ++idx[i];
      for (std::size_t j = i + 1; j < k; ++j) idx[j] = idx[j - 1] + 1;
      return true;
    }
  }
  return false;
}

Matrix condition_matrix(const Matrix& lambdas, const std::vector<std::size_t>& selected) {
  const std::size_t lv = lambdas.cols();
  Matrix l(lv, lv);
  for (std::size_t k = 1; k < selected.size(); ++k)
    for (std::size_t r = 0; r < lv; ++r) l(r, k - 1) = lambdas(selected[k], r) - lambdas(selected[0], r);
  return l;
}

Matrix select_rows(const Matrix& m, std::span<const std::size_t> rows) {
  Matrix out(rows.size(), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) std::copy_n(m.row(rows[i]).begin(), m.cols(), out.row(i).begin());
  return out;
}

}  // namespace

void ICAConfig::validate() const {
  if (l < 1) throw ConfigError("ica: l must be >= 1");
  if (v != 2) throw ConfigError("ica: only v = 2 (Gaussian sufficient statistics) is supported");
  if (n_conditions < l * v + 1)
    throw ConfigError("ica: n_conditions must be >= l*v + 1 = " + std::to_string(l * v + 1));
  if (samples_per_condition < 1) throw ConfigError("ica: samples_per_condition must be >= 1");
  if (observation_dim < l) throw ConfigError("ica: observation_dim must be >= l");
  if (mixing_depth == 0 && observation_dim != l)
    throw ConfigError("ica: identity mixing requires observation_dim == l");
  if (!(noise_std >= 0.0) || !std::isfinite(noise_std)) throw ConfigError("ica: noise_std must be >= 0");
}

GaussianNatural gaussian_natural(double mean, double variance) {
  if (!(variance > 0.0)) throw DomainError("gaussian: variance must be positive");
  return {mean / variance, -1.0 / (2.0 * variance)};
}

void gaussian_moments(const GaussianNatural& lambda, double& mean, double& variance) {
  if (!(lambda.lambda2 < 0.0)) throw DomainError("gaussian: lambda2 must be negative");
  variance = -1.0 / (2.0 * lambda.lambda2);
  mean = lambda.lambda1 * variance;
}

Vector apply_mixing(const std::vector<Matrix>& mixing, std::span<const double> h) {
  Vector x(h.begin(), h.end());
  for (std::size_t k = 0; k < mixing.size(); ++k) {
    const Matrix& m = mixing[k];
    Vector y(m.rows(), 0.0);
    for (std::size_t r = 0; r < m.rows(); ++r) y[r] = dot(m.row(r), x);
    if (k + 1 < mixing.size())
      for (double& z : y) z = leaky(z, kMixingSlope);
    x = std::move(y);
  }
  return x;
}

SyntheticICADataset generate_synthetic(const ICAConfig& config) {
  config.validate();
  Rng lambda_rng(config.seed, 11);
  Rng sample_rng(config.seed, 12);
  Rng mixing_rng(config.seed, 13);
  Rng noise_rng(config.seed, 14);

  SyntheticICADataset d;
  d.config = config;
  const std::size_t l = config.l, v = config.v;
  d.lambdas = Matrix(config.n_conditions, l * v);
  for (std::size_t w = 0; w < config.n_conditions; ++w) {
    for (std::size_t i = 0; i < l; ++i) {
      const double mean = lambda_rng.uniform(-3.0, 3.0);
      const double variance = lambda_rng.uniform(0.3, 3.0);
      const GaussianNatural nat = gaussian_natural(mean, variance);
      d.lambdas(w, i * v) = nat.lambda1;
      d.lambdas(w, i * v + 1) = nat.lambda2;
    }
  }

  for (std::size_t k = 0; k < config.mixing_depth; ++k) {
    const std::size_t cols = k == 0 ? l : config.observation_dim;
    d.mixing.push_back(well_conditioned(config.observation_dim, cols, mixing_rng));
  }

  const std::size_t n = config.n_conditions * config.samples_per_condition;
  d.true_latents = Matrix(n, l);
  d.observations = Matrix(n, config.observation_dim);
  d.conditions.reserve(n);
  std::size_t row = 0;
  for (std::size_t w = 0; w < config.n_conditions; ++w) {
    for (std::size_t s = 0; s < config.samples_per_condition; ++s, ++row) {
      d.conditions.push_back(w);
      for (std::size_t i = 0; i < l; ++i) {
        double mean = 0.0, variance = 0.0;
        gaussian_moments({d.lambdas(w, i * v), d.lambdas(w, i * v + 1)}, mean, variance);
        d.true_latents(row, i) = mean + std::sqrt(variance) * sample_rng.normal();
      }
      const Vector x = apply_mixing(d.mixing, d.true_latents.row(row));
      for (std::size_t j = 0; j < x.size(); ++j) {
        const double noise = config.noise_std > 0.0 ? config.noise_std * noise_rng.normal() : 0.0;
        d.observations(row, j) = x[j] + noise;
      }
    }
  }
  return d;
}

ConditionCheck check_condition_b(const Matrix& lambdas, std::size_t subset_budget) {
  const std::size_t lv = lambdas.cols();
  if (lv == 0 || lambdas.rows() < lv + 1)
    throw ConfigError("condition (b) needs at least l*v + 1 = " + std::to_string(lv + 1) + " conditions");
  std::vector<std::size_t> idx(lv + 1);
  std::iota(idx.begin(), idx.end(), std::size_t{0});

  ConditionCheck first;
  std::size_t tried = 0;
  do {
    ++tried;
    ConditionCheck c;
    c.selected = idx;
    c.L = condition_matrix(lambdas, idx);
    c.invertible = linalg::rank(c.L, 1e-8) == lv;
    if (c.invertible) {
      c.subsets_tried = tried;
      return c;
    }
    if (tried == 1) first = std::move(c);
  } while (tried < subset_budget && next_combination(idx, lambdas.rows()));
  first.subsets_tried = tried;
  return first;
}

LeastSquaresFit least_squares_fit(const Matrix& x, const Matrix& y) {
  const std::size_t n = x.rows(), p = x.cols(), q = y.cols();
  if (y.rows() != n) throw DomainError("least squares: X and Y row counts differ");
  if (n <= p) throw DomainError("least squares: need more rows than columns");
  const auto finite = [](const Matrix& m) {
    const auto vals = m.values();
    return std::all_of(vals.begin(), vals.end(), [](double z) { return std::isfinite(z); });
  };
  if (!finite(x) || !finite(y)) throw DomainError("least squares: non-finite input");

  Vector mx(p, 0.0), my(q, 0.0);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t j = 0; j < p; ++j) mx[j] += x(r, j);
    for (std::size_t j = 0; j < q; ++j) my[j] += y(r, j);
  }
  for (double& m : mx) m /= static_cast<double>(n);
  for (double& m : my) m /= static_cast<double>(n);

  // Center, then scale columns to unit norm so the normal matrix has unit diagonal.
  Matrix xs(n, p), yc(n, q);
  Vector norm(p, 0.0);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t j = 0; j < p; ++j) {
      xs(r, j) = x(r, j) - mx[j];
      norm[j] += xs(r, j) * xs(r, j);
    }
    for (std::size_t j = 0; j < q; ++j) yc(r, j) = y(r, j) - my[j];
  }
  for (std::size_t j = 0; j < p; ++j) {
    norm[j] = std::sqrt(norm[j]);
    if (!(norm[j] > 0.0)) throw RankDeficiencyError("least squares: column " + std::to_string(j) + " is constant");
  }
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t j = 0; j < p; ++j) xs(r, j) /= norm[j];

  const Matrix xt = linalg::transpose(xs);
  const Matrix gram = linalg::multiply(xt, xs);
  const Matrix chol = linalg::cholesky(gram, 1e-12);
  Matrix b = linalg::cholesky_solve(chol, linalg::multiply(xt, yc));

  // One step of iterative refinement on the residual.
  Matrix resid = yc;
  const Matrix fitted = linalg::multiply(xs, b);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t j = 0; j < q; ++j) resid(r, j) -= fitted(r, j);
  const Matrix correction = linalg::cholesky_solve(chol, linalg::multiply(xt, resid));
  for (std::size_t i = 0; i < p; ++i)
    for (std::size_t j = 0; j < q; ++j) b(i, j) += correction(i, j);

  LeastSquaresFit fit;
  fit.coefficients = Matrix(p, q);
  for (std::size_t i = 0; i < p; ++i)
    for (std::size_t j = 0; j < q; ++j) fit.coefficients(i, j) = b(i, j) / norm[i];
  fit.offset = my;
  for (std::size_t j = 0; j < q; ++j)
    for (std::size_t i = 0; i < p; ++i) fit.offset[j] -= mx[i] * fit.coefficients(i, j);
  return fit;
}

std::vector<std::size_t> hungarian_max(const Matrix& weights) {
  const std::size_t n = weights.rows();
  if (weights.cols() != n) throw DomainError("hungarian: matrix must be square");
  if (n == 0) return {};
  double top = -std::numeric_limits<double>::infinity();
  for (double w : weights.values()) top = std::max(top, w);
  // Minimize top - w with the classic potentials formulation (1-based).
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<std::size_t> p(n + 1, 0), way(n + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<bool> used(n + 1, false);
    do {
      used[j0] = true;
      const std::size_t i0 = p[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = (top - weights(i0 - 1, j - 1)) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<std::size_t> assignment(n);
  for (std::size_t j = 1; j <= n; ++j) assignment[p[j] - 1] = j - 1;
  return assignment;
}

double pearson(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.empty()) throw DomainError("pearson: lengths differ or are zero");
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (!(saa > 0.0) || !(sbb > 0.0)) return 0.0;
  return sab / std::sqrt(saa * sbb);
}

Matrix sufficient_statistics(const Matrix& latents) {
  Matrix t(latents.rows(), latents.cols() * 2);
  for (std::size_t r = 0; r < latents.rows(); ++r)
    for (std::size_t i = 0; i < latents.cols(); ++i) {
      t(r, 2 * i) = latents(r, i);
      t(r, 2 * i + 1) = latents(r, i) * latents(r, i);
    }
  return t;
}

void split_indices(std::size_t n, double test_fraction, std::uint64_t seed, std::vector<std::size_t>& train,
                   std::vector<std::size_t>& test) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) throw ConfigError("test fraction must lie in (0, 1)");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed, 21);
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);
  const auto n_test = static_cast<std::size_t>(std::llround(static_cast<double>(n) * test_fraction));
  train.assign(order.begin(), order.end() - static_cast<std::ptrdiff_t>(n_test));
  test.assign(order.end() - static_cast<std::ptrdiff_t>(n_test), order.end());
}

IdentifiabilityReport affine_identifiability_score(const Matrix& true_latents, const Matrix& est_latents,
                                                   std::span<const std::size_t> train,
                                                   std::span<const std::size_t> test) {
  if (true_latents.rows() != est_latents.rows()) throw DomainError("score: latent row counts differ");
  const std::size_t l = true_latents.cols();
  const std::size_t lv = 2 * l;
  if (test.size() < 10 * lv)
    throw DomainError("score: need at least " + std::to_string(10 * lv) + " held-out samples");

  const Matrix t = sufficient_statistics(true_latents);
  const Matrix t_hat = sufficient_statistics(est_latents);
  IdentifiabilityReport rep;
  rep.r_squared.assign(lv, 0.0);

  try {
    const LeastSquaresFit fit = least_squares_fit(select_rows(t_hat, train), select_rows(t, train));
    rep.affine_matrix = linalg::transpose(fit.coefficients);
    rep.offset = fit.offset;
    const Matrix x_test = select_rows(t_hat, test);
    const Matrix y_test = select_rows(t, test);
    const Matrix pred = linalg::multiply(x_test, fit.coefficients);
    double clamped_sum = 0.0;
    for (std::size_t j = 0; j < lv; ++j) {
      double mean = 0.0;
      for (std::size_t r = 0; r < y_test.rows(); ++r) mean += y_test(r, j);
      mean /= static_cast<double>(y_test.rows());
      double ss_res = 0.0, ss_tot = 0.0;
      for (std::size_t r = 0; r < y_test.rows(); ++r) {
        const double e = y_test(r, j) - pred(r, j) - fit.offset[j];
        ss_res += e * e;
        ss_tot += (y_test(r, j) - mean) * (y_test(r, j) - mean);
      }
      rep.r_squared[j] = ss_tot > 0.0 ? 1.0 - ss_res / ss_tot : 0.0;
      clamped_sum += std::clamp(rep.r_squared[j], 0.0, 1.0);
    }
    rep.r2_overall = clamped_sum / static_cast<double>(lv);
  } catch (const RankDeficiencyError&) {
    rep.rank_deficient = true;
  }

  // MCC on the held-out rows; a narrower estimate is padded with zero columns.
  const std::size_t m = std::max(l, est_latents.cols());
  Matrix corr(m, m, 0.0);
  std::vector<Vector> truth(l), est(est_latents.cols());
  for (std::size_t i = 0; i < l; ++i)
    for (std::size_t r : test) truth[i].push_back(true_latents(r, i));
  for (std::size_t j = 0; j < est.size(); ++j)
    for (std::size_t r : test) est[j].push_back(est_latents(r, j));
  for (std::size_t i = 0; i < l; ++i)
    for (std::size_t j = 0; j < est.size(); ++j) corr(i, j) = std::abs(pearson(truth[i], est[j]));
  const auto match = hungarian_max(corr);
  double total = 0.0;
  for (std::size_t i = 0; i < l; ++i) total += corr(i, match[i]);
  rep.mcc = total / static_cast<double>(l);
  return rep;
}

void EstimatorConfig::validate() const {
  if (encoder_depth < 1) throw ConfigError("estimator: encoder depth must be >= 1");
  if (!(leaky_slope > 0.0 && leaky_slope <= 1.0)) throw ConfigError("estimator: leaky slope must lie in (0, 1]");
  if (!(smooth_beta >= 0.0) || !std::isfinite(smooth_beta)) throw ConfigError("estimator: smooth_beta must be >= 0");
  if (prior_hidden_dim < 1) throw ConfigError("estimator: prior hidden dim must be >= 1");
  if (batch_size < 1) throw ConfigError("estimator: batch size must be >= 1");
  if (!(lr > 0.0)) throw ConfigError("estimator: lr must be positive");
  if (!(alpha >= 0.0) || !(recon_weight >= 0.0)) throw ConfigError("estimator: loss weights must be >= 0");
  if (!(max_grad_norm >= 0.0)) throw ConfigError("estimator: max grad norm must be >= 0");
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) throw ConfigError("estimator: test fraction must lie in (0, 1)");
}

Vector Estimator::encode(std::span<const double> observation) const {
  Vector z(observation.begin(), observation.end());
  for (std::size_t j = 0; j < z.size(); ++j) z[j] = (z[j] - shift[j]) / scale[j];
  return run_stack(encoder, z, Activation{leaky_slope, smooth_beta}).output;
}

Matrix Estimator::encode_all(const Matrix& observations) const {
  Matrix out(observations.rows(), latent_dim);
  for (std::size_t r = 0; r < observations.rows(); ++r) {
    const Vector h = encode(observations.row(r));
    std::copy(h.begin(), h.end(), out.row(r).begin());
  }
  return out;
}

Estimator make_estimator(const SyntheticICADataset& data, const EstimatorConfig& config,
                         std::span<const std::size_t> rows) {
  config.validate();
  const std::size_t l = data.config.l;
  const std::size_t dim = data.observations.cols();
  if (dim != l) throw ConfigError("estimator: the flow encoder needs observation_dim == l");
  if (rows.empty()) throw ConfigError("estimator: no training rows");

  Estimator est;
  est.latent_dim = l;
  est.n_conditions = data.config.n_conditions;
  est.leaky_slope = config.leaky_slope;
  est.smooth_beta = config.smooth_beta;
  est.shift.assign(dim, 0.0);
  est.scale.assign(dim, 1.0);
  if (config.standardize) {
    for (std::size_t j = 0; j < dim; ++j) {
      double mean = 0.0, sq = 0.0;
      for (std::size_t r : rows) mean += data.observations(r, j);
      mean /= static_cast<double>(rows.size());
      for (std::size_t r : rows) sq += (data.observations(r, j) - mean) * (data.observations(r, j) - mean);
      const double sd = std::sqrt(sq / static_cast<double>(rows.size()));
      est.shift[j] = mean;
      est.scale[j] = sd > 0.0 ? sd : 1.0;
    }
  }

  Rng rng(config.seed, 31);
  for (std::size_t k = 0; k < config.encoder_depth; ++k) {
    DenseLayer layer{config.identity_init ? linalg::identity(l) : linalg::random_orthogonal(l, rng),
                     Vector(l, 0.0)};
    est.encoder.push_back(std::move(layer));
  }
  for (std::size_t k = config.encoder_depth; k-- > 0;)
    est.decoder.push_back({linalg::transpose(est.encoder[k].w), Vector(l, 0.0)});
  est.prior = PriorNetParams::glorot(est.n_conditions, config.prior_hidden_dim, l, 1.0, rng);
  return est;
}

EstimatorGradients EstimatorGradients::zeros_like(const Estimator& est) {
  EstimatorGradients g;
  for (const auto& layer : est.encoder) g.encoder.push_back(wep::zeros_like(layer));
  for (const auto& layer : est.decoder) g.decoder.push_back(wep::zeros_like(layer));
  g.prior = PriorGradients::zeros_like(est.prior);
  return g;
}

EstimatorLoss estimator_loss(const Estimator& est, const SyntheticICADataset& data,
                             std::span<const std::size_t> batch, const EstimatorConfig& config,
                             EstimatorGradients* grads) {
  if (batch.empty()) throw DomainError("estimator loss: empty batch");
  const std::size_t l = est.latent_dim;
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  const Activation act{est.leaky_slope, est.smooth_beta};
  const double alpha = config.alpha;
  const double rho = config.recon_weight;

  double layer_log_det = 0.0;
  for (const auto& layer : est.encoder) layer_log_det += std::log(std::abs(linalg::determinant(layer.w)));

  EstimatorLoss out;
  Vector onehot(est.n_conditions, 0.0);
  for (std::size_t r : batch) {
    Vector z(l);
    for (std::size_t j = 0; j < l; ++j) z[j] = (data.observations(r, j) - est.shift[j]) / est.scale[j];
    const StackTrace enc = run_stack(est.encoder, z, act);
    const Vector& h = enc.output;

    double log_det = layer_log_det;
    for (std::size_t k = 0; k + 1 < enc.pre.size(); ++k)
      for (double p : enc.pre[k]) log_det += std::log(act.grad(p));

    const std::size_t w = data.conditions[r];
    onehot[w] = 1.0;
    PriorCache cache;
    const PriorOutput prior = prior_forward_input(onehot, est.prior, &cache);
    onehot[w] = 0.0;
    const double penalty = prior_penalty(h, prior);

    const StackTrace dec = run_stack(est.decoder, h, act);
    double mse = 0.0;
    Vector d_recon(l);
    for (std::size_t j = 0; j < l; ++j) {
      const double e = dec.output[j] - z[j];
      mse += e * e;
      d_recon[j] = rho * inv_b * 2.0 * e / static_cast<double>(l);
    }
    mse /= static_cast<double>(l);

    out.penalty += penalty * inv_b;
    out.log_det += log_det * inv_b;
    out.recon += mse * inv_b;

    if (grads != nullptr) {
      Vector dh = backprop_stack(est.decoder, dec, d_recon, act, grads->decoder);
      accumulate_prior_gradients(h, prior, cache, est.prior, alpha * inv_b, grads->prior, dh);
      backprop_stack(est.encoder, enc, dh, act, grads->encoder, -alpha * inv_b);
    }
  }
  out.total = alpha * (out.penalty - out.log_det) + rho * out.recon;

  if (grads != nullptr && alpha != 0.0) {
    // d log|det W| / dW = W^{-T}
    for (std::size_t k = 0; k < est.encoder.size(); ++k) {
      const Matrix inv = linalg::inverse(est.encoder[k].w);
      for (std::size_t i = 0; i < l; ++i)
        for (std::size_t j = 0; j < l; ++j) grads->encoder[k].w(i, j) -= alpha * inv(j, i);
    }
  }
  return out;
}

namespace {

template <typename F>
void for_each_parameter(Estimator& est, EstimatorGradients& g, F&& f) {
  auto layers = [&](std::vector<DenseLayer>& ps, std::vector<DenseLayer>& gs, const std::string& name) {
    for (std::size_t k = 0; k < ps.size(); ++k) {
      auto pw = ps[k].w.values();
      auto gw = gs[k].w.values();
      for (std::size_t i = 0; i < pw.size(); ++i) f(pw[i], gw[i], name + std::to_string(k) + ".w[" + std::to_string(i) + "]");
      for (std::size_t i = 0; i < ps[k].b.size(); ++i)
        f(ps[k].b[i], gs[k].b[i], name + std::to_string(k) + ".b[" + std::to_string(i) + "]");
    }
  };
  layers(est.encoder, g.encoder, "encoder");
  layers(est.decoder, g.decoder, "decoder");
  auto dense = [&](std::span<double> ps, std::span<double> gs, const std::string& name) {
    for (std::size_t i = 0; i < ps.size(); ++i) f(ps[i], gs[i], name + "[" + std::to_string(i) + "]");
  };
  dense(est.prior.w1.values(), g.prior.w1.values(), "prior.w1");
  dense(est.prior.b1, g.prior.b1, "prior.b1");
  dense(est.prior.w2.values(), g.prior.w2.values(), "prior.w2");
  dense(est.prior.b2, g.prior.b2, "prior.b2");
}

}  // namespace

FiniteDiffReport estimator_gradient_check(const Estimator& est, const SyntheticICADataset& data,
                                          std::span<const std::size_t> batch, const EstimatorConfig& config,
                                          double step) {
  Estimator work = est;
  EstimatorGradients g = EstimatorGradients::zeros_like(work);
  estimator_loss(work, data, batch, config, &g);
  std::vector<GradientProbe> probes;
  for_each_parameter(work, g, [&](double& p, double& grad, const std::string& label) {
    probes.push_back({&p, grad, label});
  });
  return finite_diff_probe(probes, [&] { return estimator_loss(work, data, batch, config).total; }, step);
}

TrainedEstimator train_estimator(const SyntheticICADataset& data, const EstimatorConfig& config,
                                 std::span<const std::size_t> rows) {
  TrainedEstimator result{make_estimator(data, config, rows), {}};
  Estimator& est = result.estimator;
  std::vector<std::size_t> order(rows.begin(), rows.end());
  Rng rng(config.seed, 32);

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      const std::span<const std::size_t> batch(order.data() + start, end - start);
      EstimatorGradients g = EstimatorGradients::zeros_like(est);
      const EstimatorLoss loss = estimator_loss(est, data, batch, config, &g);

      double norm_sq = 0.0;
      for_each_parameter(est, g, [&](double&, double& grad, const std::string&) { norm_sq += grad * grad; });
      if (!std::isfinite(loss.total) || !std::isfinite(norm_sq)) {
        throw NumericalError("estimator: non-finite loss or gradient in epoch " + std::to_string(epoch) +
                             " at batch " + std::to_string(batches + 1));
      }
      const double norm = std::sqrt(norm_sq);
      const double clip = config.max_grad_norm > 0.0 && norm > config.max_grad_norm ? config.max_grad_norm / norm : 1.0;
      const double lr = config.lr * clip;
      for_each_parameter(est, g, [&](double& p, double& grad, const std::string&) { p -= lr * grad; });
      ++est.prior.version;
      loss_sum += loss.total;
      ++batches;
    }
    result.epoch_loss.push_back(loss_sum / static_cast<double>(batches));
  }
  return result;
}

IcaLabResult run_ica_lab(const ICAConfig& config, const EstimatorConfig& estimator) {
  const SyntheticICADataset data = generate_synthetic(config);
  IcaLabResult result;
  result.condition = check_condition_b(data.lambdas);
  std::vector<std::size_t> train, test;
  split_indices(data.size(), estimator.test_fraction, config.seed, train, test);
  TrainedEstimator trained = train_estimator(data, estimator, train);
  result.epoch_loss = std::move(trained.epoch_loss);
  const Matrix h_hat = trained.estimator.encode_all(data.observations);
  result.report = affine_identifiability_score(data.true_latents, h_hat, train, test);
  result.report.L_rank_ok = result.condition.invertible;
  return result;
}

void write_ica_report(const ICAConfig& config, const IcaLabResult& result, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << "l\tv\tn_conditions\tnoise_std\tseed\tL_rank_ok\tR2_overall\tMCC\n";
  out << std::setprecision(10) << config.l << '\t' << config.v << '\t' << config.n_conditions << '\t'
      << config.noise_std << '\t' << config.seed << '\t' << (result.report.L_rank_ok ? "true" : "false") << '\t'
      << result.report.r2_overall << '\t' << result.report.mcc << '\n';
  if (!out) throw IoError("error while writing '" + path.string() + "'");
}

}  // namespace wep
