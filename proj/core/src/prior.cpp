#include "wep/prior.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>
#include <string>

#include "wep/error.hpp"

namespace wep {
namespace {

void glorot_fill(Matrix& m, Rng& rng) {
  const double s = std::sqrt(6.0 / static_cast<double>(m.rows() + m.cols()));
  for (double& v : m.values()) v = rng.uniform(-s, s);
}

bool all_finite(std::span<const double> xs) {
  return std::all_of(xs.begin(), xs.end(), [](double x) { return std::isfinite(x); });
}

}  // namespace

PriorNetParams PriorNetParams::zeros(std::size_t in_dim, std::size_t hidden_dim,
                                     std::size_t embedding_dim, double id_scale) {
  if (in_dim == 0 || hidden_dim == 0 || embedding_dim == 0)
    throw DomainError("prior network dimensions must be positive");
  if (!(id_scale > 0.0) || !std::isfinite(id_scale))
    throw DomainError("prior id_scale must be a positive finite number");
  PriorNetParams p;
  p.in_dim = in_dim;
  p.hidden_dim = hidden_dim;
  p.out_dim = 2 * embedding_dim;
  p.id_scale = id_scale;
  p.w1 = Matrix(hidden_dim, in_dim);
  p.b1 = Vector(hidden_dim, 0.0);
  p.w2 = Matrix(p.out_dim, hidden_dim);
  p.b2 = Vector(p.out_dim, 0.0);
  return p;
}

PriorNetParams PriorNetParams::glorot(std::size_t in_dim, std::size_t hidden_dim,
                                      std::size_t embedding_dim, double id_scale, Rng& rng) {
  PriorNetParams p = zeros(in_dim, hidden_dim, embedding_dim, id_scale);
  glorot_fill(p.w1, rng);
  glorot_fill(p.w2, rng);
  return p;
}

void PriorNetParams::validate() const {
  if (out_dim == 0 || out_dim % 2 != 0) throw DomainError("prior out_dim must be even and positive");
  if (w1.rows() != hidden_dim || w1.cols() != in_dim || b1.size() != hidden_dim ||
      w2.rows() != out_dim || w2.cols() != hidden_dim || b2.size() != out_dim) {
    throw DomainError("prior parameter shapes are inconsistent");
  }
  if (!(id_scale > 0.0) || !std::isfinite(id_scale)) throw DomainError("prior id_scale must be positive");
  if (!all_finite(w1.values()) || !all_finite(b1) || !all_finite(w2.values()) || !all_finite(b2))
    throw DomainError("prior parameters contain non-finite values");
}

PriorOutput prior_forward_input(std::span<const double> input, const PriorNetParams& params,
                                PriorCache* cache) {
  if (input.size() != params.in_dim) throw DomainError("prior input has the wrong dimension");
  const std::size_t d = params.embedding_dim();

  Vector pre(params.hidden_dim);
  Vector hidden(params.hidden_dim);
  for (std::size_t k = 0; k < params.hidden_dim; ++k) {
    pre[k] = params.b1[k] + dot(params.w1.row(k), input);
    hidden[k] = pre[k] > 0.0 ? pre[k] : 0.0;
  }
  Vector raw(params.out_dim);
  for (std::size_t o = 0; o < params.out_dim; ++o) raw[o] = params.b2[o] + dot(params.w2.row(o), hidden);

  PriorOutput out;
  out.mu.assign(raw.begin(), raw.begin() + static_cast<std::ptrdiff_t>(d));
  out.log_sigma.resize(d);
  for (std::size_t j = 0; j < d; ++j) out.log_sigma[j] = std::clamp(raw[d + j], kLogSigmaMin, kLogSigmaMax);

  if (cache != nullptr) {
    cache->params = &params;
    cache->version = params.version;
    cache->input.assign(input.begin(), input.end());
    cache->pre_activation = std::move(pre);
    cache->hidden = std::move(hidden);
    cache->raw_output = std::move(raw);
  }
  return out;
}

PriorOutput prior_forward(TokenId token_id, const PriorNetParams& params, std::size_t vocab_size,
                          PriorCache* cache) {
  if (token_id < 0 || static_cast<std::size_t>(token_id) >= vocab_size) {
    throw DomainError("prior_forward: token id " + std::to_string(token_id) +
                      " outside vocabulary of size " + std::to_string(vocab_size));
  }
  const Vector input(params.in_dim, static_cast<double>(token_id) * params.id_scale);
  return prior_forward_input(input, params, cache);
}

double prior_penalty(std::span<const double> h, const PriorOutput& out) {
  if (h.size() != out.mu.size() || h.size() != out.log_sigma.size())
    throw DomainError("prior_penalty: dimension mismatch");
  double total = 0.0;
  for (std::size_t j = 0; j < h.size(); ++j) {
    const double z = (h[j] - out.mu[j]) * std::exp(-out.log_sigma[j]);
    total += 0.5 * z * z + out.log_sigma[j];
  }
  return total;
}

PriorGradients PriorGradients::zeros_like(const PriorNetParams& params) {
  PriorGradients g;
  g.h = Vector(params.embedding_dim(), 0.0);
  g.w1 = Matrix(params.hidden_dim, params.in_dim);
  g.b1 = Vector(params.hidden_dim, 0.0);
  g.w2 = Matrix(params.out_dim, params.hidden_dim);
  g.b2 = Vector(params.out_dim, 0.0);
  return g;
}

void PriorGradients::set_zero() {
  std::fill(h.begin(), h.end(), 0.0);
  w1.fill(0.0);
  std::fill(b1.begin(), b1.end(), 0.0);
  w2.fill(0.0);
  std::fill(b2.begin(), b2.end(), 0.0);
}

void accumulate_prior_gradients(std::span<const double> h, const PriorOutput& out,
                                const PriorCache& cache, const PriorNetParams& params,
                                double scale, PriorGradients& acc, std::span<double> dh) {
  if (cache.params != &params || cache.version != params.version)
    throw ContractError("prior cache is stale: parameters changed since the forward pass");
  const std::size_t d = params.embedding_dim();
  if (h.size() != d || dh.size() != d) throw DomainError("prior gradient: dimension mismatch");

  // d/d(raw output): mu part is -r/sigma^2, log sigma part is 1 - (r/sigma)^2
  // (zero where the clamp is active).
  Vector d_raw(params.out_dim);
  for (std::size_t j = 0; j < d; ++j) {
    const double inv_var = std::exp(-2.0 * out.log_sigma[j]);
    const double r = h[j] - out.mu[j];
    const double g_h = r * inv_var;
    dh[j] += scale * g_h;
    d_raw[j] = -scale * g_h;
    const double raw_ls = cache.raw_output[d + j];
    const bool clamped = raw_ls < kLogSigmaMin || raw_ls > kLogSigmaMax;
    d_raw[d + j] = clamped ? 0.0 : scale * (1.0 - r * r * inv_var);
  }

  Vector d_hidden(params.hidden_dim, 0.0);
  for (std::size_t o = 0; o < params.out_dim; ++o) {
    const double g = d_raw[o];
    if (g == 0.0) continue;
    acc.b2[o] += g;
    auto w2_row = params.w2.row(o);
    auto gw2_row = acc.w2.row(o);
    for (std::size_t k = 0; k < params.hidden_dim; ++k) {
      gw2_row[k] += g * cache.hidden[k];
      d_hidden[k] += g * w2_row[k];
    }
  }
  for (std::size_t k = 0; k < params.hidden_dim; ++k) {
    if (!(cache.pre_activation[k] > 0.0)) continue;
    const double g = d_hidden[k];
    acc.b1[k] += g;
    auto gw1_row = acc.w1.row(k);
    for (std::size_t m = 0; m < params.in_dim; ++m) gw1_row[m] += g * cache.input[m];
  }
}

PriorGradients prior_penalty_gradients(std::span<const double> h, const PriorOutput& out,
                                       const PriorCache& cache, const PriorNetParams& params) {
  PriorGradients g = PriorGradients::zeros_like(params);
  accumulate_prior_gradients(h, out, cache, params, 1.0, g, g.h);
  return g;
}

void write_prior(const PriorNetParams& params, std::ostream& out) {
  params.validate();
  out << std::setprecision(std::numeric_limits<double>::max_digits10);
  out << "WEP-PRIOR 1 " << params.in_dim << ' ' << params.hidden_dim << ' ' << params.out_dim << ' '
      << params.id_scale << '\n';
  auto write_values = [&out](std::span<const double> xs, std::size_t per_line) {
    for (std::size_t i = 0; i < xs.size(); ++i)
      out << xs[i] << ((i + 1) % per_line == 0 || i + 1 == xs.size() ? '\n' : ' ');
  };
  write_values(params.w1.values(), params.in_dim);
  write_values(params.b1, params.hidden_dim);
  write_values(params.w2.values(), params.hidden_dim);
  write_values(params.b2, params.out_dim);
}

void save_prior(const PriorNetParams& params, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  write_prior(params, out);
  if (!out) throw IoError("error while writing '" + path.string() + "'");
}

PriorNetParams read_prior(std::istream& in) {
  std::string header;
  if (!std::getline(in, header)) throw FormatError("prior checkpoint: missing header");
  std::istringstream hs(header);
  std::string magic;
  int format_version = 0;
  std::size_t in_dim = 0, hidden_dim = 0, out_dim = 0;
  double id_scale = 0.0;
  if (!(hs >> magic >> format_version >> in_dim >> hidden_dim >> out_dim >> id_scale) ||
      magic != "WEP-PRIOR" || format_version != 1) {
    throw FormatError("prior checkpoint: malformed header '" + header + "'");
  }
  std::string trailing;
  if (hs >> trailing) throw FormatError("prior checkpoint: trailing data in header");
  if (out_dim == 0 || out_dim % 2 != 0 || in_dim == 0 || hidden_dim == 0 || !(id_scale > 0.0))
    throw FormatError("prior checkpoint: invalid dimensions in header");

  PriorNetParams p = PriorNetParams::zeros(in_dim, hidden_dim, out_dim / 2, id_scale);
  auto read_values = [&in](std::span<double> xs, const char* what) {
    for (double& x : xs) {
      if (!(in >> x)) throw FormatError(std::string("prior checkpoint: truncated while reading ") + what);
    }
  };
  read_values(p.w1.values(), "W1");
  read_values(p.b1, "b1");
  read_values(p.w2.values(), "W2");
  read_values(p.b2, "b2");
  std::string extra;
  if (in >> extra) throw FormatError("prior checkpoint: more values than the header declares");
  try {
    p.validate();
  } catch (const DomainError& e) {
    throw FormatError(std::string("prior checkpoint: ") + e.what());
  }
  return p;
}

PriorNetParams load_prior(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  return read_prior(in);
}

}  // namespace wep
