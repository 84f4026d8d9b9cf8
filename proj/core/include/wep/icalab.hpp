#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "wep/gradcheck.hpp"
#include "wep/matrix.hpp"
#include "wep/prior.hpp"

// Synthetic identifiability lab: conditional Gaussian latents pushed through
// an invertible nonlinear mixing, recovered by a conditional flow estimator,
// and scored by how well T(h) = (h, h^2) is an affine function of T(h_hat).

namespace wep {

struct ICAConfig {
  std::size_t l = 2;  // latent dimension
  std::size_t v = 2;  // sufficient statistics per component; only 2 is supported
  std::size_t n_conditions = 8;
  std::size_t samples_per_condition = 2500;
  std::size_t mixing_depth = 0;
  std::size_t observation_dim = 2;
  double noise_std = 0.0;
  std::uint64_t seed = 1;

  /// Throws ConfigError; n_conditions >= l*v + 1 is required.
  void validate() const;
};

/// Natural parameters of N(mean, variance) for T(h) = (h, h^2).
struct GaussianNatural {
  double lambda1 = 0.0;  // mean / variance
  double lambda2 = 0.0;  // -1 / (2 variance)
};
GaussianNatural gaussian_natural(double mean, double variance);
/// Inverse map; throws DomainError unless lambda2 < 0.
void gaussian_moments(const GaussianNatural& lambda, double& mean, double& variance);

struct SyntheticICADataset {
  ICAConfig config;
  Matrix true_latents;                 // samples x l
  std::vector<std::size_t> conditions;  // per sample
  /// n_conditions x (l*v); component i occupies columns i*v .. i*v+v-1.
  Matrix lambdas;
  std::vector<Matrix> mixing;  // applied in order, leaky ReLU between layers
  Matrix observations;         // samples x observation_dim

  std::size_t size() const { return conditions.size(); }
};

inline constexpr double kMixingSlope = 0.2;

SyntheticICADataset generate_synthetic(const ICAConfig& config);

/// Applies the dataset's mixing (without noise) to one latent vector.
Vector apply_mixing(const std::vector<Matrix>& mixing, std::span<const double> h);

struct ConditionCheck {
  Matrix L;                               // (l v) x (l v), column k = lambda(w_k) - lambda(w_0)
  std::vector<std::size_t> selected;      // w_0, w_1, ..., w_{lv}
  bool invertible = false;
  std::size_t subsets_tried = 0;
};

/// Full-rank check on L under pivot tolerance 1e-8 * max|entry|. Tries the
/// first lv+1 conditions, then other subsets up to `subset_budget`.
ConditionCheck check_condition_b(const Matrix& lambdas, std::size_t subset_budget = 10000);

struct LeastSquaresFit {
  Matrix coefficients;  // p x q
  Vector offset;        // q
};

/// Minimizes ||Y - X A - 1 c^T||^2 via centered, column-equilibrated normal
/// equations and a Cholesky solve. Throws RankDeficiencyError when singular.
LeastSquaresFit least_squares_fit(const Matrix& x, const Matrix& y);

/// Maximum-weight perfect matching on a square matrix; result[row] = column.
std::vector<std::size_t> hungarian_max(const Matrix& weights);

/// Pearson correlation of two columns; 0 when either side is constant.
double pearson(std::span<const double> a, std::span<const double> b);

/// (h_1, h_1^2, h_2, h_2^2, ...) per row.
Matrix sufficient_statistics(const Matrix& latents);

struct IdentifiabilityReport {
  Matrix affine_matrix;  // A with T = A T_hat + c
  Vector offset;
  Vector r_squared;      // held-out, per statistic, unclamped
  double r2_overall = 0.0;  // mean of the per-statistic values clamped to [0, 1]
  double mcc = 0.0;
  bool L_rank_ok = false;
  bool rank_deficient = false;
};

/// Fits on the `train` rows and scores on the `test` rows. Needs at least
/// 10*lv test rows. A rank-deficient fit is flagged, not thrown.
IdentifiabilityReport affine_identifiability_score(const Matrix& true_latents, const Matrix& est_latents,
                                                   std::span<const std::size_t> train,
                                                   std::span<const std::size_t> test);

/// Deterministic shuffled split; the first (1 - test_fraction) go to train.
void split_indices(std::size_t n, double test_fraction, std::uint64_t seed, std::vector<std::size_t>& train,
                   std::vector<std::size_t>& test);

struct EstimatorConfig {
  std::size_t encoder_depth = 2;  // square linear layers, leaky ReLU between
  bool identity_init = false;     // otherwise random orthogonal layers
  bool standardize = true;        // z-score observations before the encoder
  double leaky_slope = kMixingSlope;
  /// Sharpness of the smoothed leaky activation; 0 uses the exact leaky ReLU.
  double smooth_beta = 4.0;
  std::size_t prior_hidden_dim = 64;
  std::size_t epochs = 40;
  std::size_t batch_size = 64;
  double lr = 0.01;
  double alpha = 1.0;         // weight of the prior penalty and log-det term
  double recon_weight = 0.1;  // weight of the decoder reconstruction MSE
  double max_grad_norm = 10.0;  // 0 disables clipping
  double test_fraction = 0.3;
  std::uint64_t seed = 1;

  void validate() const;
};

struct DenseLayer {
  Matrix w;
  Vector b;
};

/// Flow encoder h_hat = g(x) with square layers, per-condition Gaussian prior
/// head fed a one-hot condition, and a decoder MLP back to x.
struct Estimator {
  std::size_t latent_dim = 0;
  std::size_t n_conditions = 0;
  double leaky_slope = kMixingSlope;
  double smooth_beta = 0.0;
  Vector shift;  // standardization
  Vector scale;
  std::vector<DenseLayer> encoder;
  std::vector<DenseLayer> decoder;
  PriorNetParams prior;

  Vector encode(std::span<const double> observation) const;
  Matrix encode_all(const Matrix& observations) const;
};

Estimator make_estimator(const SyntheticICADataset& data, const EstimatorConfig& config,
                         std::span<const std::size_t> rows);

struct EstimatorGradients {
  std::vector<DenseLayer> encoder;
  std::vector<DenseLayer> decoder;
  PriorGradients prior;

  static EstimatorGradients zeros_like(const Estimator& est);
};

struct EstimatorLoss {
  double total = 0.0;
  double penalty = 0.0;   // mean prior penalty
  double log_det = 0.0;   // mean log |det J|
  double recon = 0.0;     // mean reconstruction MSE
};

/// Mean over `batch` of alpha * (penalty - log|det J|) + recon_weight * MSE.
/// Adds exact gradients into `grads` when non-null.
EstimatorLoss estimator_loss(const Estimator& est, const SyntheticICADataset& data,
                             std::span<const std::size_t> batch, const EstimatorConfig& config,
                             EstimatorGradients* grads = nullptr);

/// Central-difference check of estimator_loss over every parameter.
FiniteDiffReport estimator_gradient_check(const Estimator& est, const SyntheticICADataset& data,
                                          std::span<const std::size_t> batch, const EstimatorConfig& config,
                                          double step = 1e-6);

struct TrainedEstimator {
  Estimator estimator;
  std::vector<double> epoch_loss;  // mean batch loss per epoch
};

/// Minibatch SGD over `rows`. Throws NumericalError on a non-finite loss.
TrainedEstimator train_estimator(const SyntheticICADataset& data, const EstimatorConfig& config,
                                 std::span<const std::size_t> rows);

struct IcaLabResult {
  ConditionCheck condition;
  IdentifiabilityReport report;
  std::vector<double> epoch_loss;
};

IcaLabResult run_ica_lab(const ICAConfig& config, const EstimatorConfig& estimator);

/// TSV with header l, v, n_conditions, noise_std, seed, L_rank_ok, R2_overall, MCC.
void write_ica_report(const ICAConfig& config, const IcaLabResult& result, const std::filesystem::path& path);

}  // namespace wep
