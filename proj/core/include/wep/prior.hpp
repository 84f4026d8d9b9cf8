#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <vector>

#include "wep/corpus.hpp"
#include "wep/matrix.hpp"
#include "wep/rng.hpp"

namespace wep {

/// log sigma is clamped to this range before exponentiation.
inline constexpr double kLogSigmaMin = -8.0;
inline constexpr double kLogSigmaMax = 8.0;

/// Shared prior network: input -> FC(hidden, ReLU) -> FC(2d) split into
/// (mu, log sigma). One network serves every word.
struct PriorNetParams {
  std::size_t in_dim = 32;
  std::size_t hidden_dim = 64;
  std::size_t out_dim = 0;  // 2 * embedding dimension
  double id_scale = 1.0;
  Matrix w1;  // hidden_dim x in_dim
  Vector b1;  // hidden_dim
  Matrix w2;  // out_dim x hidden_dim
  Vector b2;  // out_dim
  /// Bumped by every optimizer update; caches record it to detect staleness.
  std::uint64_t version = 0;

  std::size_t embedding_dim() const { return out_dim / 2; }
  std::size_t parameter_count() const { return w1.size() + b1.size() + w2.size() + b2.size(); }

  /// All weights and biases zero: mu = 0 and log sigma = 0 for every input.
  static PriorNetParams zeros(std::size_t in_dim, std::size_t hidden_dim, std::size_t embedding_dim,
                              double id_scale);
  /// Glorot-uniform weights, zero biases.
  static PriorNetParams glorot(std::size_t in_dim, std::size_t hidden_dim,
                               std::size_t embedding_dim, double id_scale, Rng& rng);

  /// Throws DomainError on inconsistent shapes or non-finite entries.
  void validate() const;
};

struct PriorOutput {
  Vector mu;
  Vector log_sigma;  // already clamped
};

/// Activations kept by a forward pass for backprop.
struct PriorCache {
  const PriorNetParams* params = nullptr;
  std::uint64_t version = 0;
  Vector input;
  Vector pre_activation;
  Vector hidden;
  Vector raw_output;
};

/// Forward pass on an explicit input vector of size in_dim.
PriorOutput prior_forward_input(std::span<const double> input, const PriorNetParams& params,
                                PriorCache* cache = nullptr);

/// Forward pass on a token: the input is in_dim copies of token_id * id_scale.
/// Throws DomainError unless 0 <= token_id < vocab_size.
PriorOutput prior_forward(TokenId token_id, const PriorNetParams& params, std::size_t vocab_size,
                          PriorCache* cache = nullptr);

/// sum_j 1/2 ((h_j - mu_j) / sigma_j)^2 + log sigma_j.
double prior_penalty(std::span<const double> h, const PriorOutput& out);

/// Dense gradient buffers shaped like a PriorNetParams.
struct PriorGradients {
  Vector h;
  Matrix w1;
  Vector b1;
  Matrix w2;
  Vector b2;

  static PriorGradients zeros_like(const PriorNetParams& params);
  void set_zero();
};

/// Gradients of prior_penalty w.r.t. h and every network parameter.
/// Throws ContractError if `cache` does not belong to the current `params`.
PriorGradients prior_penalty_gradients(std::span<const double> h, const PriorOutput& out,
                                       const PriorCache& cache, const PriorNetParams& params);

/// Accumulating form used by the trainers: adds scale * d(penalty)/d(params)
/// into `acc` (its `h` member is untouched) and scale * d(penalty)/dh into `dh`.
void accumulate_prior_gradients(std::span<const double> h, const PriorOutput& out,
                                const PriorCache& cache, const PriorNetParams& params,
                                double scale, PriorGradients& acc, std::span<double> dh);

/// Text checkpoint: `WEP-PRIOR 1 <in> <hidden> <out> <id_scale>` followed by
/// W1 (row-major), b1, W2 (row-major), b2.
void save_prior(const PriorNetParams& params, const std::filesystem::path& path);
void write_prior(const PriorNetParams& params, std::ostream& out);
PriorNetParams load_prior(const std::filesystem::path& path);
PriorNetParams read_prior(std::istream& in);

}  // namespace wep
