#include "wep/embed.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <istream>
#include <ostream>
#include <sstream>

#include "wep/error.hpp"

namespace wep {
namespace {

// log(1 + e^x) without overflow.
double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

void check_row(TokenId id, const EmbeddingModel& model, const char* what) {
  if (id < 0 || static_cast<std::size_t>(id) >= model.vocab_size())
    throw DomainError(std::string(what) + " token id " + std::to_string(id) + " out of range");
}

void check_inputs(const ContextSample& sample, std::span<const TokenId> negatives,
                  const EmbeddingModel& model) {
  if (sample.context.empty()) throw ContractError("context sample has an empty context");
  if (negatives.empty()) throw ContractError("at least one negative sample is required");
  check_row(sample.center, model, "center");
  for (TokenId c : sample.context) check_row(c, model, "context");
  for (TokenId n : negatives) {
    check_row(n, model, "negative");
    if (n == sample.center) throw ContractError("negative samples must exclude the center word");
  }
}

void fill_cache(ReconstructionCache* cache, const ContextSample& sample,
                std::span<const TokenId> negatives, const EmbeddingModel& model, Backbone backbone) {
  cache->model = &model;
  cache->version = model.version;
  cache->backbone = backbone;
  cache->center = sample.center;
  cache->context = sample.context;
  cache->negatives.assign(negatives.begin(), negatives.end());
}

// Returns the gradient slot for `id`, appending a zero row on first touch.
Vector& row_slot(std::vector<RowGradient>& rows, TokenId id, std::size_t dim) {
  for (auto& r : rows)
    if (r.id == id) return r.grad;
  rows.push_back({id, Vector(dim, 0.0)});
  return rows.back().grad;
}

}  // namespace

EmbeddingModel EmbeddingModel::init(std::size_t vocab_size, std::size_t dim, Rng& rng) {
  if (vocab_size == 0 || dim == 0) throw DomainError("embedding tables need V >= 1 and d >= 1");
  EmbeddingModel m;
  m.context = Matrix(vocab_size, dim);
  m.target = Matrix(vocab_size, dim);
  const double half = 0.5 / static_cast<double>(dim);
  for (double& v : m.context.values()) v = rng.uniform(-half, half);
  return m;
}

void EmbeddingModel::validate() const {
  if (context.rows() != target.rows() || context.cols() != target.cols())
    throw DomainError("context and target tables must have the same shape");
  auto finite = [](std::span<const double> xs) {
    return std::all_of(xs.begin(), xs.end(), [](double x) { return std::isfinite(x); });
  };
  if (!finite(context.values()) || !finite(target.values()))
    throw NumericalError("embedding tables contain non-finite values");
}

double cbow_loss(const ContextSample& sample, std::span<const TokenId> negatives,
                 const EmbeddingModel& model, ReconstructionCache* cache) {
  check_inputs(sample, negatives, model);
  const std::size_t d = model.dim();
  Vector hidden(d, 0.0);
  for (TokenId c : sample.context) {
    auto row = model.context.row(static_cast<std::size_t>(c));
    for (std::size_t j = 0; j < d; ++j) hidden[j] += row[j];
  }
  const double inv = 1.0 / static_cast<double>(sample.context.size());
  for (double& x : hidden) x *= inv;

  Vector scores(1 + negatives.size());
  scores[0] = dot(model.target.row(static_cast<std::size_t>(sample.center)), hidden);
  double loss = softplus(-scores[0]);
  for (std::size_t n = 0; n < negatives.size(); ++n) {
    scores[n + 1] = dot(model.target.row(static_cast<std::size_t>(negatives[n])), hidden);
    loss += softplus(scores[n + 1]);
  }
  if (cache != nullptr) {
    fill_cache(cache, sample, negatives, model, Backbone::cbow);
    cache->hidden = std::move(hidden);
    cache->scores = std::move(scores);
  }
  return loss;
}

double skipgram_loss(const ContextSample& sample, std::span<const TokenId> negatives,
                     const EmbeddingModel& model, ReconstructionCache* cache) {
  check_inputs(sample, negatives, model);
  const std::size_t block = 1 + negatives.size();
  Vector scores(sample.context.size() * block);
  double loss = 0.0;
  for (std::size_t i = 0; i < sample.context.size(); ++i) {
    auto h = model.context.row(static_cast<std::size_t>(sample.context[i]));
    double* s = scores.data() + i * block;
    s[0] = dot(model.target.row(static_cast<std::size_t>(sample.center)), h);
    loss += softplus(-s[0]);
    for (std::size_t n = 0; n < negatives.size(); ++n) {
      s[n + 1] = dot(model.target.row(static_cast<std::size_t>(negatives[n])), h);
      loss += softplus(s[n + 1]);
    }
  }
  if (cache != nullptr) {
    fill_cache(cache, sample, negatives, model, Backbone::skipgram);
    cache->hidden.clear();
    cache->scores = std::move(scores);
  }
  return loss;
}

double reconstruction_loss(const ContextSample& sample, std::span<const TokenId> negatives,
                           const EmbeddingModel& model, Backbone backbone,
                           ReconstructionCache* cache) {
  return backbone == Backbone::cbow ? cbow_loss(sample, negatives, model, cache)
                                    : skipgram_loss(sample, negatives, model, cache);
}

ObjectiveBreakdown objective(const ContextSample& sample, std::span<const TokenId> negatives,
                             const EmbeddingModel& model, const PriorNetParams& prior, double alpha,
                             const ObjectiveOptions& options, ObjectiveCache* cache) {
  if (!(alpha >= 0.0)) throw DomainError("alpha must be non-negative");
  if (prior.embedding_dim() != model.dim())
    throw DomainError("prior output dimension does not match the embedding dimension");

  ObjectiveBreakdown b;
  b.alpha = alpha;
  b.reconstruction_loss = reconstruction_loss(sample, negatives, model, options.backbone,
                                              cache != nullptr ? &cache->reconstruction : nullptr);
  if (cache != nullptr) {
    cache->prior = &prior;
    cache->average_prior = options.average_prior;
    cache->prior_outputs.resize(sample.context.size());
    cache->prior_caches.resize(sample.context.size());
  }
  double penalty = 0.0;
  for (std::size_t i = 0; i < sample.context.size(); ++i) {
    const TokenId w = sample.context[i];
    PriorCache* pc = cache != nullptr ? &cache->prior_caches[i] : nullptr;
    PriorOutput out = prior_forward(w, prior, model.vocab_size(), pc);
    penalty += prior_penalty(model.context.row(static_cast<std::size_t>(w)), out);
    if (cache != nullptr) cache->prior_outputs[i] = std::move(out);
  }
  if (options.average_prior) penalty /= static_cast<double>(sample.context.size());
  b.prior_penalty_total = penalty;
  b.total = b.reconstruction_loss + alpha * penalty;
  return b;
}

GradientSet reconstruction_backward(const ReconstructionCache& c, const EmbeddingModel& model) {
  if (c.model != &model || c.version != model.version)
    throw ContractError("reconstruction cache is stale: model changed since the forward pass");
  const std::size_t d = model.dim();
  GradientSet g;

  if (c.backbone == Backbone::cbow) {
    Vector d_hidden(d, 0.0);
    const double g_center = sigmoid(c.scores[0]) - 1.0;
    {
      Vector& slot = row_slot(g.target_rows, c.center, d);
      auto u = model.target.row(static_cast<std::size_t>(c.center));
      for (std::size_t j = 0; j < d; ++j) {
        slot[j] += g_center * c.hidden[j];
        d_hidden[j] += g_center * u[j];
      }
    }
    for (std::size_t n = 0; n < c.negatives.size(); ++n) {
      const double g_neg = sigmoid(c.scores[n + 1]);
      Vector& slot = row_slot(g.target_rows, c.negatives[n], d);
      auto u = model.target.row(static_cast<std::size_t>(c.negatives[n]));
      for (std::size_t j = 0; j < d; ++j) {
        slot[j] += g_neg * c.hidden[j];
        d_hidden[j] += g_neg * u[j];
      }
    }
    const double inv = 1.0 / static_cast<double>(c.context.size());
    for (TokenId w : c.context) {
      Vector& slot = row_slot(g.context_rows, w, d);
      for (std::size_t j = 0; j < d; ++j) slot[j] += d_hidden[j] * inv;
    }
    return g;
  }

  // Skip-gram: every context position is its own logistic problem.
  const std::size_t block = 1 + c.negatives.size();
  row_slot(g.target_rows, c.center, d);
  for (TokenId n : c.negatives) row_slot(g.target_rows, n, d);
  for (std::size_t i = 0; i < c.context.size(); ++i) {
    const TokenId w = c.context[i];
    auto h = model.context.row(static_cast<std::size_t>(w));
    const double* s = c.scores.data() + i * block;
    Vector& dh = row_slot(g.context_rows, w, d);
    auto touch = [&](TokenId id, double coeff) {
      Vector& slot = row_slot(g.target_rows, id, d);
      auto u = model.target.row(static_cast<std::size_t>(id));
      for (std::size_t j = 0; j < d; ++j) {
        slot[j] += coeff * h[j];
        dh[j] += coeff * u[j];
      }
    };
    touch(c.center, sigmoid(s[0]) - 1.0);
    for (std::size_t n = 0; n < c.negatives.size(); ++n) touch(c.negatives[n], sigmoid(s[n + 1]));
  }
  return g;
}

GradientSet backward(const ObjectiveCache& cache, const EmbeddingModel& model,
                     const PriorNetParams& prior, double alpha) {
  if (cache.prior != &prior) throw ContractError("objective cache was built for a different prior");
  GradientSet g = reconstruction_backward(cache.reconstruction, model);
  g.prior = PriorGradients::zeros_like(prior);

  const auto& context = cache.reconstruction.context;
  if (cache.prior_caches.size() != context.size())
    throw ContractError("objective cache is missing prior activations");
  double weight = alpha;
  if (cache.average_prior) weight /= static_cast<double>(context.size());
  for (std::size_t i = 0; i < context.size(); ++i) {
    const TokenId w = context[i];
    Vector& dh = row_slot(g.context_rows, w, model.dim());
    accumulate_prior_gradients(model.context.row(static_cast<std::size_t>(w)),
                               cache.prior_outputs[i], cache.prior_caches[i], prior, weight,
                               *g.prior, dh);
  }
  return g;
}

namespace {

std::vector<GradientProbe> make_probes(EmbeddingModel& model, PriorNetParams& prior,
                                       const GradientSet& analytic) {
  std::vector<GradientProbe> probes;
  const std::size_t d = model.dim();
  for (const auto& r : analytic.context_rows) {
    auto row = model.context.row(static_cast<std::size_t>(r.id));
    for (std::size_t j = 0; j < d; ++j)
      probes.push_back({&row[j], r.grad[j], "context[" + std::to_string(r.id) + "][" + std::to_string(j) + "]"});
  }
  for (const auto& r : analytic.target_rows) {
    auto row = model.target.row(static_cast<std::size_t>(r.id));
    for (std::size_t j = 0; j < d; ++j)
      probes.push_back({&row[j], r.grad[j], "target[" + std::to_string(r.id) + "][" + std::to_string(j) + "]"});
  }
  if (analytic.prior) {
    const PriorGradients& pg = *analytic.prior;
    auto add = [&probes](std::span<double> params, std::span<const double> grads, const char* name) {
      for (std::size_t i = 0; i < params.size(); ++i)
        probes.push_back({&params[i], grads[i], std::string(name) + "[" + std::to_string(i) + "]"});
    };
    add(prior.w1.values(), pg.w1.values(), "prior.W1");
    add(prior.b1, pg.b1, "prior.b1");
    add(prior.w2.values(), pg.w2.values(), "prior.W2");
    add(prior.b2, pg.b2, "prior.b2");
  }
  return probes;
}

}  // namespace

FiniteDiffReport finite_diff_compare(const ContextSample& sample,
                                     std::span<const TokenId> negatives,
                                     const EmbeddingModel& model, const PriorNetParams& prior,
                                     double alpha, double step, const GradientSet& analytic,
                                     const ObjectiveOptions& options) {
  EmbeddingModel m = model;
  PriorNetParams p = prior;
  const auto probes = make_probes(m, p, analytic);
  return finite_diff_probe(
      probes, [&] { return objective(sample, negatives, m, p, alpha, options).total; }, step);
}

FiniteDiffReport finite_diff_check(const ContextSample& sample, std::span<const TokenId> negatives,
                                   const EmbeddingModel& model, const PriorNetParams& prior,
                                   double alpha, double step, const ObjectiveOptions& options) {
  ObjectiveCache cache;
  objective(sample, negatives, model, prior, alpha, options, &cache);
  const GradientSet analytic = backward(cache, model, prior, alpha);
  return finite_diff_compare(sample, negatives, model, prior, alpha, step, analytic, options);
}

RandomCheckSummary random_gradient_checks(std::size_t instances, std::uint64_t seed, double step) {
  static constexpr std::size_t kDims[] = {4, 8};
  static constexpr double kAlphas[] = {0.0, 1e-4, 0.5};
  Rng rng(seed, 41);
  RandomCheckSummary summary;
  while (summary.instances < instances) {
    const std::size_t d = kDims[rng.index(2)];
    const std::size_t vocab = 12;
    const std::size_t n_context = 1 + rng.index(4);
    const std::size_t n_neg = 1 + rng.index(5);
    const double alpha = kAlphas[rng.index(3)];
    ObjectiveOptions options;
    options.backbone = summary.instances % 2 == 0 ? Backbone::cbow : Backbone::skipgram;

    EmbeddingModel model;
    model.context = Matrix(vocab, d);
    model.target = Matrix(vocab, d);
    for (double& x : model.context.values()) x = 0.5 * rng.normal();
    for (double& x : model.target.values()) x = 0.5 * rng.normal();
    PriorNetParams prior = PriorNetParams::glorot(32, 64, d, 1.0 / static_cast<double>(vocab), rng);
    for (double& x : prior.b1) x = 0.1 * rng.normal();
    for (double& x : prior.b2) x = 0.1 * rng.normal();

    ContextSample sample;
    sample.center = static_cast<TokenId>(rng.index(vocab));
    for (std::size_t i = 0; i < n_context; ++i) sample.context.push_back(static_cast<TokenId>(rng.index(vocab)));
    std::vector<TokenId> negatives;
    while (negatives.size() < n_neg) {
      const auto n = static_cast<TokenId>(rng.index(vocab));
      if (n != sample.center) negatives.push_back(n);
    }

    bool near_kink = false;
    for (TokenId w : sample.context) {
      PriorCache cache;
      prior_forward(w, prior, vocab, &cache);
      for (double pre : cache.pre_activation) near_kink = near_kink || std::abs(pre) < 1e-3;
    }
    if (near_kink) continue;

    const FiniteDiffReport r = finite_diff_check(sample, negatives, model, prior, alpha, step, options);
    ++summary.instances;
    if (r.max_relative_error >= summary.max_relative_error) {
      summary.max_relative_error = r.max_relative_error;
      summary.worst = "instance " + std::to_string(summary.instances) + " (d=" + std::to_string(d) +
                      ", context=" + std::to_string(n_context) + ", k=" + std::to_string(n_neg) +
                      ", alpha=" + std::to_string(alpha) + "): " + r.worst_label;
    }
  }
  return summary;
}

std::optional<TokenId> WordVectors::id_of(std::string_view word) const {
  auto it = index_.find(std::string(word));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

void WordVectors::rebuild_index() {
  if (vectors.rows() != tokens.size()) throw DomainError("word vectors: token count does not match rows");
  index_.clear();
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (!index_.emplace(tokens[i], static_cast<TokenId>(i)).second)
      throw DomainError("word vectors: duplicate token '" + tokens[i] + "'");
  }
}

WordVectors word_vectors(const EmbeddingModel& model, const Vocabulary& vocab, TableChoice table) {
  if (vocab.size() != model.vocab_size()) throw DomainError("vocabulary size does not match the model");
  WordVectors wv;
  wv.tokens = vocab.tokens();
  switch (table) {
    case TableChoice::context:
      wv.vectors = model.context;
      break;
    case TableChoice::target:
      wv.vectors = model.target;
      break;
    case TableChoice::sum:
      wv.vectors = model.context;
      for (std::size_t i = 0; i < wv.vectors.size(); ++i)
        wv.vectors.values()[i] += model.target.values()[i];
      break;
  }
  wv.rebuild_index();
  return wv;
}

void write_word2vec_text(std::ostream& out, std::span<const std::string> tokens, const Matrix& vectors) {
  if (tokens.size() != vectors.rows()) throw DomainError("token count does not match embedding rows");
  out << tokens.size() << ' ' << vectors.cols() << '\n';
  out << std::setprecision(9);
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    out << tokens[i];
    for (double v : vectors.row(i)) out << ' ' << v;
    out << '\n';
  }
}

void save_word2vec_text(const std::filesystem::path& path, std::span<const std::string> tokens,
                        const Matrix& vectors) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  write_word2vec_text(out, tokens, vectors);
  if (!out) throw IoError("error while writing '" + path.string() + "'");
}

WordVectors read_word2vec_text(std::istream& in) {
  std::string header;
  if (!std::getline(in, header)) throw FormatError("embedding file: missing header");
  std::istringstream hs(header);
  std::size_t v = 0, d = 0;
  std::string extra;
  if (!(hs >> v >> d) || (hs >> extra) || d == 0)
    throw FormatError("embedding file: malformed header '" + header + "'");

  WordVectors wv;
  wv.tokens.reserve(v);
  wv.vectors = Matrix(v, d);
  std::string line;
  for (std::size_t i = 0; i < v; ++i) {
    if (!std::getline(in, line))
      throw FormatError("embedding file: header declares " + std::to_string(v) + " words, found " +
                        std::to_string(i));
    std::istringstream ls(line);
    std::string token;
    if (!(ls >> token)) throw FormatError("embedding file line " + std::to_string(i + 2) + ": empty line");
    auto row = wv.vectors.row(i);
    for (std::size_t j = 0; j < d; ++j) {
      if (!(ls >> row[j]))
        throw FormatError("embedding file line " + std::to_string(i + 2) + ": expected " +
                          std::to_string(d) + " values");
    }
    if (ls >> extra)
      throw FormatError("embedding file line " + std::to_string(i + 2) + ": more than " +
                        std::to_string(d) + " values");
    wv.tokens.push_back(std::move(token));
  }
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") != std::string::npos)
      throw FormatError("embedding file: more rows than the header declares");
  }
  try {
    wv.rebuild_index();
  } catch (const DomainError& e) {
    throw FormatError(std::string("embedding file: ") + e.what());
  }
  return wv;
}

WordVectors load_word2vec_text(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  return read_word2vec_text(in);
}

}  // namespace wep
