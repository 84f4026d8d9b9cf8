#include "cli.hpp"

#include <CLI11.hpp>

#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "wep/error.hpp"
#include "wep/eval.hpp"

namespace wep::cli {
namespace {

std::string format_double(double x) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, res.ptr);
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string normalize_key(std::string key) {
  for (char& c : key)
    if (c == '_') c = '-';
  return key;
}

const std::vector<KeySpec>& train_keys() {
  static const std::vector<KeySpec> keys = [] {
    const TrainConfig d;
    return std::vector<KeySpec>{
        {"corpus", "", "training corpus, one sentence per line (required)"},
        {"graph-file", "", "dependency edges for --context graph"},
        {"context", "window", "context source: window or graph"},
        {"backbone", "cbow", "cbow or skipgram"},
        {"dim", std::to_string(d.dim), "embedding dimension"},
        {"window", std::to_string(d.window), "context half-width"},
        {"alpha", format_double(d.alpha), "prior weight (>= 0)"},
        {"epochs", std::to_string(d.epochs), "passes over the corpus"},
        {"lr", format_double(d.initial_lr), "initial learning rate"},
        {"min-lr", format_double(d.min_lr), "learning-rate floor"},
        {"negatives", std::to_string(d.negatives), "negative samples per target"},
        {"min-count", std::to_string(d.min_count), "drop words rarer than this"},
        {"subsample", format_double(d.subsample_t), "frequent-word subsampling threshold (0 disables)"},
        {"seed", std::to_string(d.seed), "random seed"},
        {"threads", std::to_string(d.threads), "worker threads (1 is deterministic)"},
        {"id-scale", "", "prior input scale (default 1/V)"},
        {"output", "", "embedding output path (required)"},
        {"eval-sim", "", "similarity set scored every epoch"},
        {"eval-analogy", "", "analogy set scored every epoch"},
        {"eval-categ", "", "categorization set scored every epoch"},
        {"eval-table", "context", "table used for evaluation: context, target or sum"},
        {"use-prior", "true", "false runs the plain reconstruction path"},
        {"freeze-prior", "false", "keep the prior network fixed", true},
        {"prior-init", "glorot", "glorot or zero (mu = 0, log sigma = 0)"},
        {"prior-lr-scale", format_double(d.prior_lr_scale), "prior network step = lr * this"},
        {"prior-in-dim", std::to_string(d.prior_in_dim), "prior input width"},
        {"prior-hidden-dim", std::to_string(d.prior_hidden_dim), "prior hidden width"},
        {"average-prior", "false", "divide the prior penalty by the context size", true},
        {"dynamic-window", "false", "shrink the window randomly per position", true},
        {"unigram-power", format_double(d.unigram_power), "negative sampling exponent"},
        {"negative-table-size", std::to_string(d.negative_table_size), "negative table slots"},
        {"manifest", "", "run-manifest path (default <output>.run-manifest)"},
    };
  }();
  return keys;
}

const std::vector<KeySpec>& ica_keys() {
  static const std::vector<KeySpec> keys = [] {
    const ICAConfig c;
    const EstimatorConfig e;
    return std::vector<KeySpec>{
        {"l", std::to_string(c.l), "latent dimension"},
        {"v", std::to_string(c.v), "sufficient statistics per component (2)"},
        {"conditions", std::to_string(c.n_conditions), "number of conditions (>= l*v + 1)"},
        {"samples-per-condition", std::to_string(c.samples_per_condition), "samples drawn per condition"},
        {"mixing-depth", std::to_string(c.mixing_depth), "invertible mixing layers (0 = identity)"},
        {"observation-dim", std::to_string(c.observation_dim), "observation dimension"},
        {"noise", format_double(c.noise_std), "observation noise std"},
        {"seed", std::to_string(c.seed), "random seed"},
        {"encoder-depth", std::to_string(e.encoder_depth), "estimator layers"},
        {"identity-init", "false", "start the encoder at the identity", true},
        {"standardize", "true", "z-score observations before encoding"},
        {"smooth-beta", format_double(e.smooth_beta), "activation sharpness (0 = leaky ReLU)"},
        {"prior-hidden-dim", std::to_string(e.prior_hidden_dim), "prior head hidden width"},
        {"epochs", std::to_string(e.epochs), "estimator epochs"},
        {"batch-size", std::to_string(e.batch_size), "minibatch size"},
        {"lr", format_double(e.lr), "SGD learning rate"},
        {"alpha", format_double(e.alpha), "prior penalty weight"},
        {"recon-weight", format_double(e.recon_weight), "reconstruction weight"},
        {"max-grad-norm", format_double(e.max_grad_norm), "gradient clipping norm (0 disables)"},
        {"test-fraction", format_double(e.test_fraction), "held-out fraction for scoring"},
        {"output", "ica-report.tsv", "report TSV path"},
        {"manifest", "", "run-manifest path (default <output>.run-manifest)"},
    };
  }();
  return keys;
}

const std::vector<KeySpec>& eval_keys(bool with_seed) {
  static const std::vector<KeySpec> plain = {
      {"model", "", "word2vec text embeddings (required)"},
      {"data", "", "evaluation set (required)"},
      {"manifest", "run-manifest", "run-manifest path"},
  };
  static const std::vector<KeySpec> seeded = {
      {"model", "", "word2vec text embeddings (required)"},
      {"data", "", "evaluation set (required)"},
      {"seed", "1", "k-means seed"},
      {"manifest", "run-manifest", "run-manifest path"},
  };
  return with_seed ? seeded : plain;
}

const std::vector<KeySpec>& probe_keys() {
  static const std::vector<KeySpec> keys = {
      {"model", "", "word2vec text embeddings (required)"},
      {"dim", "", "embedding dimension to sort by (required)"},
      {"lo", "-inf", "lower bound of the value range"},
      {"hi", "inf", "upper bound of the value range"},
      {"manifest", "run-manifest", "run-manifest path"},
  };
  return keys;
}

const std::vector<KeySpec>& gradcheck_keys() {
  static const std::vector<KeySpec> keys = {
      {"instances", "100", "randomized instances"},
      {"seed", "1", "random seed"},
      {"step", "1e-06", "central-difference step"},
      {"tolerance", "0.0001", "maximum allowed relative error"},
      {"manifest", "run-manifest", "run-manifest path"},
  };
  return keys;
}

const std::vector<std::pair<std::string, std::string>>& subcommands() {
  static const std::vector<std::pair<std::string, std::string>> subs = {
      {"train", "train embeddings with the prior"},
      {"eval-sim", "word similarity (Spearman)"},
      {"eval-analogy", "analogy accuracy (3CosAdd)"},
      {"eval-categ", "concept categorization (k-means purity)"},
      {"probe", "list words whose value on one dimension lies in a range"},
      {"ica-lab", "synthetic identifiability experiment"},
      {"grad-check", "finite-difference check of the objective gradients"},
  };
  return subs;
}

// Typed accessors over resolved settings.
class Reader {
 public:
  explicit Reader(const Settings& s) : s_(s) {}

  const std::string& raw(const std::string& key) const {
    auto it = s_.find(key);
    if (it == s_.end()) throw ConfigError("missing key '" + key + "'");
    return it->second;
  }
  bool has(const std::string& key) const { return !raw(key).empty(); }
  std::string required(const std::string& key) const {
    if (!has(key)) throw ConfigError("key '" + key + "' is required");
    return raw(key);
  }
  std::optional<std::filesystem::path> path(const std::string& key) const {
    if (!has(key)) return std::nullopt;
    return std::filesystem::path(raw(key));
  }

  double real(const std::string& key) const {
    const std::string& v = raw(key);
    try {
      std::size_t pos = 0;
      const double x = std::stod(v, &pos);
      if (pos == v.size()) return x;
    } catch (const std::exception&) {
    }
    throw ConfigError("key '" + key + "': expected a number, got '" + v + "'");
  }
  long long integer(const std::string& key) const {
    const std::string& v = raw(key);
    long long x = 0;
    const auto res = std::from_chars(v.data(), v.data() + v.size(), x);
    if (res.ec != std::errc() || res.ptr != v.data() + v.size())
      throw ConfigError("key '" + key + "': expected an integer, got '" + v + "'");
    return x;
  }
  std::size_t count(const std::string& key, long long min = 0) const {
    const long long x = integer(key);
    if (x < min) throw ConfigError("key '" + key + "' must be >= " + std::to_string(min));
    return static_cast<std::size_t>(x);
  }
  std::uint64_t seed(const std::string& key) const {
    const std::string& v = raw(key);
    std::uint64_t x = 0;
    const auto res = std::from_chars(v.data(), v.data() + v.size(), x);
    if (res.ec != std::errc() || res.ptr != v.data() + v.size())
      throw ConfigError("key '" + key + "': expected a non-negative integer, got '" + v + "'");
    return x;
  }
  bool boolean(const std::string& key) const {
    const std::string& v = raw(key);
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw ConfigError("key '" + key + "': expected true or false, got '" + v + "'");
  }
  std::string choice(const std::string& key, std::initializer_list<const char*> allowed) const {
    const std::string& v = raw(key);
    for (const char* a : allowed)
      if (v == a) return v;
    std::string list;
    for (const char* a : allowed) list += (list.empty() ? "" : ", ") + std::string(a);
    throw ConfigError("key '" + key + "': expected one of " + list + ", got '" + v + "'");
  }

 private:
  const Settings& s_;
};

// Re-throws invariant violations with the key that caused them.
template <typename F>
void with_key(const std::string& key, F&& f) {
  try {
    f();
  } catch (const ConfigError& e) {
    const std::string what = e.what();
    if (what.find(key) != std::string::npos) throw;
    throw ConfigError("key '" + key + "': " + what);
  }
}

TableChoice table_choice(const std::string& name) {
  if (name == "target") return TableChoice::target;
  if (name == "sum") return TableChoice::sum;
  return TableChoice::context;
}

void print_metric(std::ostream& out, const MetricResult& r) {
  out << std::setprecision(10) << r.metric << '\t' << r.value << '\t' << r.coverage << '\n';
}

WordVectors load_model(const Reader& r) { return load_word2vec_text(r.required("model")); }

std::filesystem::path manifest_path(const std::string& sub, const Settings& resolved) {
  const auto it = resolved.find("manifest");
  if (it != resolved.end() && !it->second.empty()) return it->second;
  if (sub == "train" || sub == "ica-lab") return resolved.at("output") + ".run-manifest";
  return "run-manifest";
}

void run_train(const Settings& resolved, std::ostream& out) {
  const TrainJob job = resolve_train(resolved);
  const TrainingCorpus corpus = TrainingCorpus::load(job.corpus, job.config.min_count, job.graph_file);
  out << "# vocabulary " << corpus.vocab.size() << " words, " << corpus.vocab.total_tokens() << " tokens\n";

  EvalSuite suite;
  suite.seed = job.config.seed;
  suite.table = job.table;
  if (job.eval_sim) suite.similarity = load_similarity_dataset(*job.eval_sim);
  if (job.eval_analogy) suite.analogy = load_analogy_dataset(*job.eval_analogy);
  if (job.eval_categ) suite.categorization = load_categorization_dataset(*job.eval_categ);

  const TrainResult result = train(job.config, corpus, suite.empty() ? nullptr : &suite, [&out](const EpochReport& r) {
    out << std::setprecision(8) << "epoch\t" << r.epoch << "\tloss\t" << r.mean_total << "\treconstruction\t"
        << r.mean_reconstruction << "\tprior\t" << r.mean_prior_penalty << "\tlr\t" << r.final_lr;
    for (const auto& [task, score] : r.scores) out << '\t' << task << '\t' << score;
    out << '\n';
  });

  checkpoint_save(CheckpointPaths::from_prefix(job.output), corpus.vocab, result.model, result.prior);
  write_epoch_reports(result.reports, job.output.string() + ".epochs.tsv");
  if (!suite.empty()) write_stability_curve(stability_curve(result.reports), job.output.string() + ".curve.tsv");
  out << "wrote\t" << job.output.string() << '\n';
}

void run_ica(const Settings& resolved, std::ostream& out) {
  const IcaJob job = resolve_ica(resolved);
  const IcaLabResult result = run_ica_lab(job.ica, job.estimator);
  write_ica_report(job.ica, result, job.output);
  out << std::setprecision(6) << "L_rank_ok\t" << (result.report.L_rank_ok ? "true" : "false") << '\n'
      << "R2_overall\t" << result.report.r2_overall << '\n'
      << "MCC\t" << result.report.mcc << '\n';
  for (std::size_t j = 0; j < result.report.r_squared.size(); ++j)
    out << "R2[" << j << "]\t" << result.report.r_squared[j] << '\n';
  if (result.report.rank_deficient) out << "rank_deficient\ttrue\n";
  out << "wrote\t" << job.output.string() << '\n';
}

int run_gradcheck(const Settings& resolved, std::ostream& out) {
  const Reader r(resolved);
  const std::size_t instances = r.count("instances", 1);
  const double step = r.real("step");
  const double tolerance = r.real("tolerance");
  if (!(step > 0.0)) throw ConfigError("key 'step' must be positive");
  const RandomCheckSummary s = random_gradient_checks(instances, r.seed("seed"), step);
  out << std::setprecision(6) << "instances\t" << s.instances << "\nmax_relative_error\t" << s.max_relative_error
      << "\nworst\t" << s.worst << '\n';
  if (!(s.max_relative_error <= tolerance)) {
    throw NumericalError("gradient check failed: max relative error " + format_double(s.max_relative_error) +
                         " > " + format_double(tolerance));
  }
  return kExitOk;
}

void dispatch(const std::string& sub, const Settings& resolved, std::ostream& out) {
  const Reader r(resolved);
  if (sub == "train") {
    run_train(resolved, out);
  } else if (sub == "ica-lab") {
    run_ica(resolved, out);
  } else if (sub == "grad-check") {
    run_gradcheck(resolved, out);
  } else if (sub == "eval-sim") {
    const WordVectors model = load_model(r);
    print_metric(out, word_similarity_eval(model, load_similarity_dataset(r.required("data"))));
  } else if (sub == "eval-analogy") {
    const WordVectors model = load_model(r);
    print_metric(out, analogy_eval(model, load_analogy_dataset(r.required("data"))));
  } else if (sub == "eval-categ") {
    const WordVectors model = load_model(r);
    print_metric(out, categorization_eval(model, load_categorization_dataset(r.required("data")), r.seed("seed")));
  } else if (sub == "probe") {
    const WordVectors model = load_model(r);
    r.required("dim");
    const std::size_t dim = r.count("dim");
    const auto hits = dimension_probe(model, dim, r.real("lo"), r.real("hi"));
    out << std::setprecision(8);
    for (const auto& h : hits) out << h.word << '\t' << h.value << '\n';
  }
}

const char* error_kind(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e)) return "config";
  if (dynamic_cast<const NumericalError*>(&e)) return "numerical";
  if (dynamic_cast<const FormatError*>(&e)) return "format";
  if (dynamic_cast<const IoError*>(&e)) return "io";
  if (dynamic_cast<const EvaluationError*>(&e)) return "evaluation";
  if (dynamic_cast<const RankDeficiencyError*>(&e)) return "rank";
  if (dynamic_cast<const DomainError*>(&e)) return "domain";
  if (dynamic_cast<const ContractError*>(&e)) return "contract";
  return "internal";
}

std::string one_line(std::string s) {
  for (char& c : s)
    if (c == '\n' || c == '\t') c = ' ';
  return s;
}

}  // namespace

Settings parse_config(std::istream& in, const std::string& source) {
  Settings s;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(source + ":" + std::to_string(lineno) + ": expected 'key = value'");
    const std::string key = normalize_key(trim(line.substr(0, eq)));
    if (key.empty()) throw ConfigError(source + ":" + std::to_string(lineno) + ": empty key");
    s[key] = trim(line.substr(eq + 1));
  }
  return s;
}

Settings load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file '" + path.string() + "'");
  return parse_config(in, path.string());
}

const std::vector<KeySpec>& keys_for(const std::string& subcommand) {
  if (subcommand == "train") return train_keys();
  if (subcommand == "ica-lab") return ica_keys();
  if (subcommand == "eval-sim" || subcommand == "eval-analogy") return eval_keys(false);
  if (subcommand == "eval-categ") return eval_keys(true);
  if (subcommand == "probe") return probe_keys();
  if (subcommand == "grad-check") return gradcheck_keys();
  throw ConfigError("unknown subcommand '" + subcommand + "'");
}

Settings resolve_settings(const std::string& subcommand, const Settings& config, const Settings& flags) {
  const auto& keys = keys_for(subcommand);
  Settings resolved;
  for (const auto& k : keys) resolved[k.name] = k.default_value;
  for (const Settings* layer : {&config, &flags}) {
    for (const auto& [key, value] : *layer) {
      if (!resolved.count(key)) throw ConfigError("unknown key '" + key + "' for " + subcommand);
      resolved[key] = value;
    }
  }
  return resolved;
}

TrainJob resolve_train(const Settings& s) {
  const Reader r(s);
  TrainJob job;
  TrainConfig& c = job.config;
  job.corpus = r.required("corpus");
  job.output = r.required("output");
  job.graph_file = r.path("graph-file");
  job.eval_sim = r.path("eval-sim");
  job.eval_analogy = r.path("eval-analogy");
  job.eval_categ = r.path("eval-categ");
  job.table = table_choice(r.choice("eval-table", {"context", "target", "sum"}));

  c.context_mode = r.choice("context", {"window", "graph"}) == "graph" ? ContextMode::graph : ContextMode::window;
  c.backbone = r.choice("backbone", {"cbow", "skipgram"}) == "skipgram" ? Backbone::skipgram : Backbone::cbow;
  c.dim = r.count("dim", 1);
  c.window = static_cast<int>(r.count("window", 1));
  c.alpha = r.real("alpha");
  c.epochs = static_cast<int>(r.count("epochs", 1));
  c.initial_lr = r.real("lr");
  c.min_lr = r.real("min-lr");
  c.negatives = static_cast<int>(r.count("negatives", 1));
  c.min_count = static_cast<std::int64_t>(r.count("min-count", 1));
  c.subsample_t = r.real("subsample");
  c.seed = r.seed("seed");
  c.threads = static_cast<int>(r.count("threads", 1));
  if (r.has("id-scale")) c.id_scale = r.real("id-scale");
  c.use_prior = r.boolean("use-prior");
  c.freeze_prior = r.boolean("freeze-prior");
  c.prior_init = r.choice("prior-init", {"glorot", "zero"}) == "zero" ? PriorInit::zero : PriorInit::glorot;
  c.prior_lr_scale = r.real("prior-lr-scale");
  c.prior_in_dim = r.count("prior-in-dim", 1);
  c.prior_hidden_dim = r.count("prior-hidden-dim", 1);
  c.average_prior = r.boolean("average-prior");
  c.dynamic_window = r.boolean("dynamic-window");
  c.unigram_power = r.real("unigram-power");
  c.negative_table_size = r.count("negative-table-size", 1);

  if (c.context_mode == ContextMode::graph && !job.graph_file)
    throw ConfigError("key 'graph-file' is required with context = graph");
  if (c.context_mode == ContextMode::window && job.graph_file)
    throw ConfigError("key 'graph-file' needs context = graph");
  c.validate();
  return job;
}

IcaJob resolve_ica(const Settings& s) {
  const Reader r(s);
  IcaJob job;
  ICAConfig& c = job.ica;
  EstimatorConfig& e = job.estimator;
  c.l = r.count("l", 1);
  c.v = r.count("v", 1);
  c.n_conditions = r.count("conditions", 1);
  c.samples_per_condition = r.count("samples-per-condition", 1);
  c.mixing_depth = r.count("mixing-depth", 0);
  c.observation_dim = r.count("observation-dim", 1);
  c.noise_std = r.real("noise");
  c.seed = r.seed("seed");
  e.encoder_depth = r.count("encoder-depth", 1);
  e.identity_init = r.boolean("identity-init");
  e.standardize = r.boolean("standardize");
  e.smooth_beta = r.real("smooth-beta");
  e.prior_hidden_dim = r.count("prior-hidden-dim", 1);
  e.epochs = r.count("epochs", 0);
  e.batch_size = r.count("batch-size", 1);
  e.lr = r.real("lr");
  e.alpha = r.real("alpha");
  e.recon_weight = r.real("recon-weight");
  e.max_grad_norm = r.real("max-grad-norm");
  e.test_fraction = r.real("test-fraction");
  e.seed = c.seed;
  job.output = r.required("output");
  with_key("conditions", [&] { c.validate(); });
  e.validate();
  return job;
}

void write_manifest(std::ostream& out, const std::string& subcommand, const Settings& resolved) {
  out << "# wep run-manifest\n# command: " << subcommand << '\n';
  for (const auto& [key, value] : resolved)
    if (key != "manifest") out << key << " = " << value << '\n';
}

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e)) return kExitUsage;
  if (dynamic_cast<const NumericalError*>(&e)) return kExitNumerical;
  return kExitData;
}

int parse_and_dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"wep: word embeddings with a neural prior, evaluation and identifiability lab"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "show help for every subcommand");

  struct SubState {
    CLI::App* app = nullptr;
    std::map<std::string, std::string> values;
    std::map<std::string, bool> flags;
    std::map<std::string, CLI::Option*> options;
    std::string config;
  };
  std::map<std::string, SubState> states;
  for (const auto& [name, description] : subcommands()) {
    SubState& st = states[name];
    st.app = app.add_subcommand(name, description);
    st.app->add_option("--config", st.config, "flat 'key = value' config file; flags override it");
    for (const auto& k : keys_for(name)) {
      const std::string flag = "--" + k.name;
      if (k.flag) {
        st.options[k.name] = st.app->add_flag(flag, st.flags[k.name], k.help);
      } else {
        st.options[k.name] = st.app->add_option(flag, st.values[k.name], k.help)->default_str(k.default_value);
      }
    }
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    err << "error\tusage\t" << one_line(e.what()) << '\n';
    err << "run 'wep --help' or 'wep <command> --help' for usage\n";
    return kExitUsage;
  }

  std::string sub;
  for (auto& [name, st] : states)
    if (st.app->parsed()) sub = name;
  SubState& st = states.at(sub);

  try {
    Settings config;
    if (!st.config.empty()) config = load_config(st.config);
    Settings flags;
    for (const auto& [key, opt] : st.options) {
      if (opt->count() == 0) continue;
      flags[key] = st.flags.count(key) ? (st.flags[key] ? "true" : "false") : st.values[key];
    }
    const Settings resolved = resolve_settings(sub, config, flags);
    for (const auto& [key, value] : resolved) out << "# " << key << " = " << value << '\n';

    dispatch(sub, resolved, out);

    const auto path = manifest_path(sub, resolved);
    std::ofstream manifest(path);
    if (!manifest) throw IoError("cannot write run-manifest '" + path.string() + "'");
    write_manifest(manifest, sub, resolved);
    return kExitOk;
  } catch (const std::exception& e) {
    err << "error\t" << error_kind(e) << '\t' << one_line(e.what()) << '\n';
    return exit_code_for(e);
  }
}

}  // namespace wep::cli
