#include "wep/train.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <shared_mutex>
#include <thread>

#include "wep/error.hpp"

namespace wep {
namespace {

bool finite(std::span<const double> xs) {
  return std::all_of(xs.begin(), xs.end(), [](double x) { return std::isfinite(x); });
}

bool finite_row_grads(const std::vector<RowGradient>& rows) {
  return std::all_of(rows.begin(), rows.end(), [](const RowGradient& r) { return finite(r.grad); });
}

void axpy(std::span<double> p, std::span<const double> g, double lr) {
  for (std::size_t i = 0; i < p.size(); ++i) p[i] -= lr * g[i];
}

void apply_rows(Matrix& table, const std::vector<RowGradient>& rows, double lr) {
  for (const auto& r : rows) axpy(table.row(static_cast<std::size_t>(r.id)), r.grad, lr);
}

void apply_prior(PriorNetParams& prior, const PriorGradients& g, double lr) {
  axpy(prior.w1.values(), g.w1.values(), lr);
  axpy(prior.b1, g.b1, lr);
  axpy(prior.w2.values(), g.w2.values(), lr);
  axpy(prior.b2, g.b2, lr);
  ++prior.version;
}

void check_gradients(const GradientSet& g) {
  bool ok = finite_row_grads(g.context_rows) && finite_row_grads(g.target_rows);
  if (ok && g.prior) {
    ok = finite(g.prior->w1.values()) && finite(g.prior->b1) && finite(g.prior->w2.values()) &&
         finite(g.prior->b2);
  }
  if (!ok) throw NumericalError("non-finite gradient");
}

void check_parameters(const EmbeddingModel& model, const PriorNetParams& prior, std::uint64_t step,
                      int epoch) {
  const bool ok = finite(model.context.values()) && finite(model.target.values()) &&
                  finite(prior.w1.values()) && finite(prior.b1) && finite(prior.w2.values()) &&
                  finite(prior.b2);
  if (!ok) {
    throw NumericalError("non-finite parameter detected at step " + std::to_string(step) +
                         " (epoch " + std::to_string(epoch) + ")");
  }
}

struct Accumulator {
  std::size_t samples = 0;
  double total = 0.0;
  double reconstruction = 0.0;
  double penalty = 0.0;

  void merge(const Accumulator& o) {
    samples += o.samples;
    total += o.total;
    reconstruction += o.reconstruction;
    penalty += o.penalty;
  }
};

// Everything a worker needs to process sentences. Serial mode runs one of
// these; parallel mode runs one per thread over a shard of sentences.
class Worker {
 public:
  Worker(const TrainConfig& config, const TrainingCorpus& corpus, const NegativeTable& table,
         TrainResult& state, Rng rng, std::shared_mutex* prior_lock)
      : config_(config),
        corpus_(corpus),
        table_(table),
        state_(state),
        rng_(std::move(rng)),
        prior_lock_(prior_lock) {
    options_.backbone = config.backbone;
    options_.average_prior = config.average_prior;
  }

  // Returns the number of corpus positions consumed (before subsampling).
  std::size_t process_sentence(std::size_t index, double lr, Accumulator& acc) {
    std::vector<TokenId> ids = corpus_.sentences[index];
    const auto positions = static_cast<std::size_t>(
        std::count_if(ids.begin(), ids.end(), [](TokenId t) { return t != kNoToken; }));
    subsample_sentence(ids, corpus_.vocab, config_.subsample_t, rng_);

    std::vector<ContextSample> samples;
    if (config_.context_mode == ContextMode::window) {
      samples = window_contexts(ids, config_.window, index, config_.dynamic_window ? &rng_ : nullptr);
    } else {
      samples = graph_contexts(ids, *corpus_.graph, index);
    }
    for (const auto& sample : samples) {
      draw_negatives(sample.center);
      step(sample, lr, acc);
    }
    return positions;
  }

  std::uint64_t steps() const { return steps_; }

 private:
  void draw_negatives(TokenId center) {
    negatives_.clear();
    for (int i = 0; i < config_.negatives; ++i) {
      TokenId n = table_.sample(rng_);
      for (int tries = 0; n == center; ++tries) {
        if (tries >= 64) {
          // Degenerate table dominated by the center: fall back to a uniform non-center word.
          const std::size_t pick = rng_.index(table_.vocab_size() - 1);
          n = static_cast<TokenId>(pick >= static_cast<std::size_t>(center) ? pick + 1 : pick);
          break;
        }
        n = table_.sample(rng_);
      }
      negatives_.push_back(n);
    }
  }

  void step(const ContextSample& sample, double lr, Accumulator& acc) {
    EmbeddingModel& model = state_.model;
    GradientSet grads;
    if (!config_.use_prior) {
      ReconstructionCache cache;
      const double loss = reconstruction_loss(sample, negatives_, model, options_.backbone, &cache);
      grads = reconstruction_backward(cache, model);
      acc.total += loss;
      acc.reconstruction += loss;
    } else {
      ObjectiveBreakdown b;
      {
        std::shared_lock<std::shared_mutex> lock;
        if (prior_lock_ != nullptr) lock = std::shared_lock(*prior_lock_);
        ObjectiveCache cache;
        b = objective(sample, negatives_, model, state_.prior, config_.alpha, options_, &cache);
        grads = backward(cache, model, state_.prior, config_.alpha);
      }
      acc.total += b.total;
      acc.reconstruction += b.reconstruction_loss;
      acc.penalty += b.prior_penalty_total;
    }
    ++acc.samples;
    ++steps_;

    try {
      check_gradients(grads);
    } catch (const NumericalError&) {
      throw NumericalError("non-finite gradient at step " + std::to_string(steps_) +
                           " (sentence " + std::to_string(sample.sentence_index) + ")");
    }
    apply_rows(model.context, grads.context_rows, lr);
    apply_rows(model.target, grads.target_rows, lr);
    // Hogwild workers leave the version alone; the model is only consistent between epochs.
    if (prior_lock_ == nullptr) ++model.version;
    if (grads.prior && !config_.freeze_prior) {
      std::unique_lock<std::shared_mutex> lock;
      if (prior_lock_ != nullptr) lock = std::unique_lock(*prior_lock_);
      apply_prior(state_.prior, *grads.prior, lr * config_.prior_lr_scale);
    }
  }

  const TrainConfig& config_;
  const TrainingCorpus& corpus_;
  const NegativeTable& table_;
  TrainResult& state_;
  Rng rng_;
  std::shared_mutex* prior_lock_;
  ObjectiveOptions options_;
  std::vector<TokenId> negatives_;
  std::uint64_t steps_ = 0;
};

EpochReport make_report(int epoch, const Accumulator& acc, double lr) {
  EpochReport r;
  r.epoch = epoch;
  r.samples = acc.samples;
  r.final_lr = lr;
  if (acc.samples > 0) {
    const double n = static_cast<double>(acc.samples);
    r.mean_total = acc.total / n;
    r.mean_reconstruction = acc.reconstruction / n;
    r.mean_prior_penalty = acc.penalty / n;
  }
  return r;
}

}  // namespace

void TrainConfig::validate() const {
  if (dim < 1) throw ConfigError("dim must be >= 1");
  if (window < 1) throw ConfigError("window must be >= 1");
  if (!(alpha >= 0.0) || !std::isfinite(alpha)) throw ConfigError("alpha must be a finite value >= 0");
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (!(min_lr > 0.0) || !(min_lr <= initial_lr) || !std::isfinite(initial_lr))
    throw ConfigError("learning rates must satisfy 0 < min_lr <= lr");
  if (negatives < 1) throw ConfigError("negatives must be >= 1");
  if (min_count < 1) throw ConfigError("min_count must be >= 1");
  if (!(subsample_t >= 0.0)) throw ConfigError("subsample must be >= 0");
  if (threads < 1) throw ConfigError("threads must be >= 1");
  if (id_scale && !(*id_scale > 0.0 && std::isfinite(*id_scale)))
    throw ConfigError("id_scale must be a positive finite number");
  if (prior_in_dim < 1 || prior_hidden_dim < 1) throw ConfigError("prior dimensions must be >= 1");
  if (!(unigram_power > 0.0)) throw ConfigError("unigram power must be positive");
  if (negative_table_size < 1) throw ConfigError("negative table size must be >= 1");
  if (!(prior_lr_scale > 0.0) || !std::isfinite(prior_lr_scale)) throw ConfigError("prior_lr_scale must be positive");
  if (nan_check_interval < 1) throw ConfigError("NaN check interval must be >= 1");
}

TrainingCorpus TrainingCorpus::load(const std::filesystem::path& corpus_path, std::int64_t min_count,
                                    const std::optional<std::filesystem::path>& graph_path) {
  TrainingCorpus c;
  c.vocab = build_vocabulary(corpus_path, min_count);
  c.sentences = encode_corpus(corpus_path, c.vocab);
  if (graph_path) {
    c.graph = DependencyGraph::load(*graph_path);
    c.graph->validate(c.sentences);
  }
  return c;
}

double learning_rate(const TrainConfig& config, double progress) {
  const double p = std::clamp(progress, 0.0, 1.0);
  return std::max(config.min_lr, config.initial_lr * (1.0 - p));
}

void sgd_apply(EmbeddingModel& model, PriorNetParams* prior, const GradientSet& grads, double lr) {
  if (!(lr > 0.0)) throw DomainError("learning rate must be positive");
  check_gradients(grads);
  apply_rows(model.context, grads.context_rows, lr);
  apply_rows(model.target, grads.target_rows, lr);
  ++model.version;
  if (prior != nullptr && grads.prior) apply_prior(*prior, *grads.prior, lr);
}

TrainResult train(const TrainConfig& config, const TrainingCorpus& corpus, const EvalSuite* eval,
                  const std::function<void(const EpochReport&)>& on_epoch) {
  config.validate();
  const std::size_t vocab_size = corpus.vocab.size();
  if (vocab_size == 0) throw ConfigError("vocabulary is empty");
  if (vocab_size < 2) throw ConfigError("negative sampling needs a vocabulary of at least two words");
  if (config.context_mode == ContextMode::graph) {
    if (!corpus.graph) throw ConfigError("graph context mode requires a dependency graph");
    corpus.graph->validate(corpus.sentences);
  } else if (corpus.graph) {
    throw ConfigError("a dependency graph was given but the context mode is window");
  }

  Rng init_rng(config.seed, 1);
  Rng prior_rng(config.seed, 2);
  TrainResult state;
  state.model = EmbeddingModel::init(vocab_size, config.dim, init_rng);
  const double id_scale = config.id_scale.value_or(1.0 / static_cast<double>(vocab_size));
  state.prior = config.prior_init == PriorInit::zero
                    ? PriorNetParams::zeros(config.prior_in_dim, config.prior_hidden_dim, config.dim, id_scale)
                    : PriorNetParams::glorot(config.prior_in_dim, config.prior_hidden_dim, config.dim,
                                             id_scale, prior_rng);

  const NegativeTable table(corpus.vocab.counts(), config.unigram_power,
                            std::max(config.negative_table_size, vocab_size));

  std::size_t positions_per_epoch = 0;
  for (const auto& s : corpus.sentences)
    positions_per_epoch += static_cast<std::size_t>(
        std::count_if(s.begin(), s.end(), [](TokenId t) { return t != kNoToken; }));
  const double total_positions =
      std::max(1.0, static_cast<double>(positions_per_epoch) * static_cast<double>(config.epochs));

  std::size_t processed = 0;
  std::uint64_t steps_done = 0;
  std::uint64_t next_nan_check = config.nan_check_interval;

  const std::size_t n_threads =
      std::min<std::size_t>(static_cast<std::size_t>(config.threads), std::max<std::size_t>(corpus.sentences.size(), 1));
  std::vector<Worker> workers;
  std::shared_mutex prior_lock;
  if (n_threads == 1) {
    workers.emplace_back(config, corpus, table, state, Rng(config.seed, 3), nullptr);
  } else {
    for (std::size_t t = 0; t < n_threads; ++t)
      workers.emplace_back(config, corpus, table, state, Rng(config.seed, 100 + t), &prior_lock);
  }

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    Accumulator acc;
    double lr = learning_rate(config, static_cast<double>(processed) / total_positions);
    if (n_threads == 1) {
      Worker& w = workers.front();
      for (std::size_t i = 0; i < corpus.sentences.size(); ++i) {
        lr = learning_rate(config, static_cast<double>(processed) / total_positions);
        processed += w.process_sentence(i, lr, acc);
        if (w.steps() >= next_nan_check) {
          check_parameters(state.model, state.prior, w.steps(), epoch);
          next_nan_check = w.steps() + config.nan_check_interval;
        }
      }
      steps_done = w.steps();
    } else {
      std::atomic<std::size_t> shared_processed{processed};
      std::vector<Accumulator> partial(n_threads);
      std::vector<std::exception_ptr> errors(n_threads);
      std::vector<std::thread> pool;
      const std::size_t n = corpus.sentences.size();
      for (std::size_t t = 0; t < n_threads; ++t) {
        pool.emplace_back([&, t] {
          try {
            const std::size_t begin = n * t / n_threads;
            const std::size_t end = n * (t + 1) / n_threads;
            for (std::size_t i = begin; i < end; ++i) {
              const double rate = learning_rate(
                  config, static_cast<double>(shared_processed.load(std::memory_order_relaxed)) / total_positions);
              shared_processed.fetch_add(workers[t].process_sentence(i, rate, partial[t]),
                                         std::memory_order_relaxed);
            }
          } catch (...) {
            errors[t] = std::current_exception();
          }
        });
      }
      for (auto& th : pool) th.join();
      for (auto& e : errors)
        if (e) std::rethrow_exception(e);
      for (const auto& p : partial) acc.merge(p);
      processed = shared_processed.load();
      steps_done = 0;
      for (const auto& w : workers) steps_done += w.steps();
      ++state.model.version;
      lr = learning_rate(config, static_cast<double>(processed) / total_positions);
    }
    check_parameters(state.model, state.prior, steps_done, epoch);

    EpochReport report = make_report(epoch, acc, lr);
    if (eval != nullptr && !eval->empty())
      report.scores = evaluate_suite(word_vectors(state.model, corpus.vocab, eval->table), *eval);
    if (on_epoch) on_epoch(report);
    state.reports.push_back(std::move(report));
  }
  return state;
}

std::vector<CurvePoint> stability_curve(const std::vector<EpochReport>& reports) {
  std::vector<CurvePoint> curve;
  for (const auto& r : reports) {
    if (r.scores.empty()) continue;
    double sum = 0.0;
    for (const auto& [task, score] : r.scores) sum += score;
    curve.push_back({r.epoch, sum / static_cast<double>(r.scores.size())});
  }
  if (curve.empty()) throw ConfigError("stability curve requires at least one evaluation set");
  return curve;
}

void write_stability_curve(const std::vector<CurvePoint>& curve, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << std::setprecision(10);
  for (const auto& p : curve) out << p.epoch << '\t' << p.score << '\n';
  if (!out) throw IoError("error while writing '" + path.string() + "'");
}

void write_epoch_reports(const std::vector<EpochReport>& reports, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  std::vector<std::string> tasks;
  for (const auto& r : reports)
    for (const auto& [task, score] : r.scores)
      if (std::find(tasks.begin(), tasks.end(), task) == tasks.end()) tasks.push_back(task);
  out << "epoch\tsamples\tmean_total\tmean_reconstruction\tmean_prior_penalty\tlr";
  for (const auto& t : tasks) out << '\t' << t;
  out << '\n' << std::setprecision(10);
  for (const auto& r : reports) {
    out << r.epoch << '\t' << r.samples << '\t' << r.mean_total << '\t' << r.mean_reconstruction << '\t'
        << r.mean_prior_penalty << '\t' << r.final_lr;
    for (const auto& t : tasks) {
      auto it = r.scores.find(t);
      out << '\t';
      if (it != r.scores.end()) out << it->second;
    }
    out << '\n';
  }
  if (!out) throw IoError("error while writing '" + path.string() + "'");
}

CheckpointPaths CheckpointPaths::from_prefix(const std::filesystem::path& prefix) {
  return {prefix, std::filesystem::path(prefix.string() + ".target"),
          std::filesystem::path(prefix.string() + ".prior")};
}

void checkpoint_save(const CheckpointPaths& paths, const Vocabulary& vocab, const EmbeddingModel& model,
                     const PriorNetParams& prior) {
  if (vocab.size() != model.vocab_size()) throw DomainError("vocabulary does not match the model");
  save_word2vec_text(paths.context, vocab.tokens(), model.context);
  save_word2vec_text(paths.target, vocab.tokens(), model.target);
  save_prior(prior, paths.prior);
}

Checkpoint checkpoint_load(const CheckpointPaths& paths) {
  WordVectors context = load_word2vec_text(paths.context);
  WordVectors target = load_word2vec_text(paths.target);
  if (context.size() != target.size() || context.dim() != target.dim())
    throw FormatError("checkpoint: context and target tables disagree on V or d");
  if (context.tokens != target.tokens) throw FormatError("checkpoint: context and target vocabularies differ");
  Checkpoint c;
  c.prior = load_prior(paths.prior);
  if (c.prior.embedding_dim() != context.dim())
    throw FormatError("checkpoint: prior output dimension " + std::to_string(c.prior.out_dim) +
                      " does not match d=" + std::to_string(context.dim()));
  c.tokens = std::move(context.tokens);
  c.model.context = std::move(context.vectors);
  c.model.target = std::move(target.vectors);
  return c;
}

}  // namespace wep
