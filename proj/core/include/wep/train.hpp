#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "wep/corpus.hpp"
#include "wep/embed.hpp"
#include "wep/eval.hpp"
#include "wep/prior.hpp"

namespace wep {

enum class ContextMode { window, graph };

/// How the prior network starts. `zero` gives mu = 0, log sigma = 0.
enum class PriorInit { glorot, zero };

/// The α values swept in the experiments: 0.5, 0.1, 1e-4, 1e-6.
inline constexpr double kAlphaGrid[] = {0.5, 0.1, 1.0e-4, 1.0e-6};

struct TrainConfig {
  std::size_t dim = 100;
  int window = 5;
  double alpha = 0.1;
  int epochs = 5;
  double initial_lr = 0.05;
  double min_lr = 0.05 * 1e-4;
  int negatives = 5;
  std::int64_t min_count = 5;
  double subsample_t = 1e-4;  // 0 disables subsampling
  std::uint64_t seed = 1;
  int threads = 1;
  ContextMode context_mode = ContextMode::window;
  Backbone backbone = Backbone::cbow;
  std::optional<double> id_scale;  // default 1 / V

  bool dynamic_window = false;
  bool average_prior = false;
  /// false runs the plain reconstruction path that never touches the prior.
  bool use_prior = true;
  bool freeze_prior = false;
  /// Prior-network step is lr * prior_lr_scale.
  double prior_lr_scale = 1.0;
  PriorInit prior_init = PriorInit::glorot;
  std::size_t prior_in_dim = 32;
  std::size_t prior_hidden_dim = 64;
  double unigram_power = 0.75;
  std::size_t negative_table_size = 10'000'000;
  std::uint64_t nan_check_interval = 100'000;

  /// Throws ConfigError naming the first violated invariant.
  void validate() const;
};

struct EpochReport {
  int epoch = 0;  // 1-based
  std::size_t samples = 0;
  double mean_total = 0.0;
  double mean_reconstruction = 0.0;
  double mean_prior_penalty = 0.0;
  double final_lr = 0.0;
  std::map<std::string, double> scores;
};

struct TrainingCorpus {
  Vocabulary vocab;
  std::vector<std::vector<TokenId>> sentences;
  std::optional<DependencyGraph> graph;

  /// Builds the vocabulary and encodes the corpus; loads the graph when given.
  static TrainingCorpus load(const std::filesystem::path& corpus_path, std::int64_t min_count,
                             const std::optional<std::filesystem::path>& graph_path = std::nullopt);
};

struct TrainResult {
  EmbeddingModel model;
  PriorNetParams prior;
  std::vector<EpochReport> reports;
};

/// max(min_lr, initial_lr * (1 - progress)), progress in [0, 1].
double learning_rate(const TrainConfig& config, double progress);

/// p <- p - lr * g for every emitted gradient; prior gradients are applied
/// only when `prior` is non-null. Throws NumericalError on a non-finite gradient.
void sgd_apply(EmbeddingModel& model, PriorNetParams* prior, const GradientSet& grads, double lr);

/// Trains embeddings and the prior jointly with SGD. With threads == 1 the
/// result is bit-deterministic for a fixed seed. Throws NumericalError if a
/// parameter becomes non-finite.
TrainResult train(const TrainConfig& config, const TrainingCorpus& corpus,
                  const EvalSuite* eval = nullptr,
                  const std::function<void(const EpochReport&)>& on_epoch = {});

struct CurvePoint {
  int epoch = 0;
  double score = 0.0;
};

/// Per-epoch mean of the configured task scores. Throws ConfigError when no
/// report carries scores.
std::vector<CurvePoint> stability_curve(const std::vector<EpochReport>& reports);
void write_stability_curve(const std::vector<CurvePoint>& curve, const std::filesystem::path& path);
void write_epoch_reports(const std::vector<EpochReport>& reports, const std::filesystem::path& path);

/// Checkpoint files: `<prefix>` holds the context table, `<prefix>.target`
/// the target table (both word2vec text), `<prefix>.prior` the prior network.
struct CheckpointPaths {
  std::filesystem::path context;
  std::filesystem::path target;
  std::filesystem::path prior;

  static CheckpointPaths from_prefix(const std::filesystem::path& prefix);
};

void checkpoint_save(const CheckpointPaths& paths, const Vocabulary& vocab, const EmbeddingModel& model,
                     const PriorNetParams& prior);

struct Checkpoint {
  std::vector<std::string> tokens;
  EmbeddingModel model;
  PriorNetParams prior;
};

/// Throws FormatError on malformed files or when V or d disagree between
/// the tables and the prior header.
Checkpoint checkpoint_load(const CheckpointPaths& paths);

}  // namespace wep
