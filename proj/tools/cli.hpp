#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "wep/icalab.hpp"
#include "wep/train.hpp"

namespace wep::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;
inline constexpr int kExitNumerical = 3;

/// Flat key -> raw value map. Keys use the long flag spelling ("min-lr").
using Settings = std::map<std::string, std::string>;

/// `key = value` lines, `#` starts a comment. Underscores in keys are read as
/// dashes. Throws ConfigError naming the line on malformed input.
Settings parse_config(std::istream& in, const std::string& source = "config");
/// Throws ConfigError if the file cannot be read.
Settings load_config(const std::filesystem::path& path);

struct KeySpec {
  std::string name;
  std::string default_value;  // empty means unset
  std::string help;
  bool flag = false;
};

/// Keys accepted by a subcommand (config file and flags share them).
const std::vector<KeySpec>& keys_for(const std::string& subcommand);

/// default < config file < command line. Throws ConfigError on unknown keys.
Settings resolve_settings(const std::string& subcommand, const Settings& config, const Settings& flags);

struct TrainJob {
  TrainConfig config;
  std::filesystem::path corpus;
  std::optional<std::filesystem::path> graph_file;
  std::filesystem::path output;
  std::optional<std::filesystem::path> eval_sim;
  std::optional<std::filesystem::path> eval_analogy;
  std::optional<std::filesystem::path> eval_categ;
  TableChoice table = TableChoice::context;
};

/// Typed, validated view of resolved train settings. Throws ConfigError with
/// the offending key on type mismatch or invariant violation.
TrainJob resolve_train(const Settings& settings);

struct IcaJob {
  ICAConfig ica;
  EstimatorConfig estimator;
  std::filesystem::path output;
};

IcaJob resolve_ica(const Settings& settings);

/// `# ` prefixed key = value lines, usable again as a config file.
void write_manifest(std::ostream& out, const std::string& subcommand, const Settings& resolved);

/// Maps an exception to the process exit code.
int exit_code_for(const std::exception& e);

/// Entry point: 0 ok, 1 usage/config, 2 data/format/io, 3 numerical.
/// Errors print `error<TAB>kind<TAB>message` to `err`.
int parse_and_dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace wep::cli
