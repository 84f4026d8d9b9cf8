#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "wep/corpus.hpp"
#include "wep/gradcheck.hpp"
#include "wep/matrix.hpp"
#include "wep/prior.hpp"
#include "wep/rng.hpp"

namespace wep {

enum class Backbone { cbow, skipgram };

/// Context (input) and target (output) embedding tables, both V x d.
/// Row t of `context` is the latent h_t of word t.
struct EmbeddingModel {
  Matrix context;
  Matrix target;
  std::uint64_t version = 0;

  std::size_t vocab_size() const { return context.rows(); }
  std::size_t dim() const { return context.cols(); }

  /// word2vec initialization: context ~ U(-0.5/d, 0.5/d), target = 0.
  static EmbeddingModel init(std::size_t vocab_size, std::size_t dim, Rng& rng);
  void validate() const;
};

struct ObjectiveOptions {
  Backbone backbone = Backbone::cbow;
  /// Divide the summed prior penalty by |context|.
  bool average_prior = false;
};

struct ObjectiveBreakdown {
  double reconstruction_loss = 0.0;
  double prior_penalty_total = 0.0;
  double alpha = 0.0;
  double total = 0.0;
};

struct ReconstructionCache {
  const EmbeddingModel* model = nullptr;
  std::uint64_t version = 0;
  Backbone backbone = Backbone::cbow;
  TokenId center = kNoToken;
  std::vector<TokenId> context;
  std::vector<TokenId> negatives;
  Vector hidden;  // CBOW: mean of the context rows
  /// CBOW: [center, negatives...]. Skip-gram: the same block per context word.
  Vector scores;
};

struct ObjectiveCache {
  ReconstructionCache reconstruction;
  const PriorNetParams* prior = nullptr;
  bool average_prior = false;
  std::vector<PriorOutput> prior_outputs;  // one per context position
  std::vector<PriorCache> prior_caches;
};

/// -log s(u_center . hbar) - sum_n log s(-u_n . hbar), hbar = mean context row.
double cbow_loss(const ContextSample& sample, std::span<const TokenId> negatives,
                 const EmbeddingModel& model, ReconstructionCache* cache = nullptr);

/// Each context row predicts the center independently with shared negatives.
double skipgram_loss(const ContextSample& sample, std::span<const TokenId> negatives,
                     const EmbeddingModel& model, ReconstructionCache* cache = nullptr);

double reconstruction_loss(const ContextSample& sample, std::span<const TokenId> negatives,
                           const EmbeddingModel& model, Backbone backbone,
                           ReconstructionCache* cache = nullptr);

/// Reconstruction loss plus alpha times the prior penalty summed over the
/// context words (the center word carries no prior term).
ObjectiveBreakdown objective(const ContextSample& sample, std::span<const TokenId> negatives,
                             const EmbeddingModel& model, const PriorNetParams& prior, double alpha,
                             const ObjectiveOptions& options = {}, ObjectiveCache* cache = nullptr);

struct RowGradient {
  TokenId id = kNoToken;
  Vector grad;
};

/// Gradients for the touched rows only. `prior` is absent on the plain
/// reconstruction path.
struct GradientSet {
  std::vector<RowGradient> context_rows;
  std::vector<RowGradient> target_rows;
  std::optional<PriorGradients> prior;
};

GradientSet reconstruction_backward(const ReconstructionCache& cache, const EmbeddingModel& model);

/// Exact gradient of the objective total. Throws ContractError on stale caches.
GradientSet backward(const ObjectiveCache& cache, const EmbeddingModel& model,
                     const PriorNetParams& prior, double alpha);

/// Central-difference check of backward() over every touched parameter
/// (context rows of the context words, target rows of center and negatives,
/// all prior weights).
FiniteDiffReport finite_diff_check(const ContextSample& sample, std::span<const TokenId> negatives,
                                   const EmbeddingModel& model, const PriorNetParams& prior,
                                   double alpha, double step, const ObjectiveOptions& options = {});

/// Same, but against caller-supplied gradients (for fault-injection checks).
FiniteDiffReport finite_diff_compare(const ContextSample& sample,
                                     std::span<const TokenId> negatives,
                                     const EmbeddingModel& model, const PriorNetParams& prior,
                                     double alpha, double step, const GradientSet& analytic,
                                     const ObjectiveOptions& options = {});

struct RandomCheckSummary {
  std::size_t instances = 0;
  double max_relative_error = 0.0;
  std::string worst;  // instance description and parameter label
};

/// Finite-difference checks on randomized instances: d in {4, 8}, 1-4 context
/// words, 1-5 negatives, alpha in {0, 1e-4, 0.5}, alternating backbones.
/// Instances with a prior ReLU pre-activation within 1e-3 of the kink are
/// redrawn, since central differences are invalid there.
RandomCheckSummary random_gradient_checks(std::size_t instances, std::uint64_t seed, double step = 1e-6);

/// Word-indexed view over one embedding table.
struct WordVectors {
  std::vector<std::string> tokens;
  Matrix vectors;

  std::size_t size() const { return tokens.size(); }
  std::size_t dim() const { return vectors.cols(); }
  std::optional<TokenId> id_of(std::string_view word) const;

  void rebuild_index();

 private:
  std::unordered_map<std::string, TokenId> index_;
};

enum class TableChoice { context, target, sum };

WordVectors word_vectors(const EmbeddingModel& model, const Vocabulary& vocab,
                         TableChoice table = TableChoice::context);

/// word2vec text format: `V d` header, then `token v1 ... vd` per line.
void write_word2vec_text(std::ostream& out, std::span<const std::string> tokens, const Matrix& vectors);
void save_word2vec_text(const std::filesystem::path& path, std::span<const std::string> tokens,
                        const Matrix& vectors);
WordVectors read_word2vec_text(std::istream& in);
WordVectors load_word2vec_text(const std::filesystem::path& path);

}  // namespace wep
