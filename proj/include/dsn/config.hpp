#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "dsn/metadata.hpp"
#include "dsn/pipeline.hpp"

namespace dsn {

enum class Provenance { kDefault, kEnv, kFile, kFlag };
const char* to_string(Provenance p);

/// Fully resolved run settings. Paths live in the CLI, not here.
struct RunConfig {
  std::string command;
  BenchmarkConfig bench;   // synth + train + split/itq knobs
  std::size_t seeds = 5;   // ablate: seeds seed, seed+1, ...
  Metric metric = Metric::kHamming;
  std::map<std::string, Provenance> provenance;

  std::uint64_t seed() const { return bench.train.seed; }
  /// Every key with its value and where it came from.
  Metadata metadata() const;
};

using KeyValues = std::vector<std::pair<std::string, std::string>>;

/// All recognised keys, in echo order.
const std::vector<std::string>& config_keys();

/// key=value lines; '#' starts a comment, blank lines are skipped.
KeyValues parse_config_text(const std::string& text);

/// Precedence: flag > file > DSN_SEED (seed only) > default. Unknown keys
/// and unparsable values throw kConfig; a near-miss key gets a suggestion.
RunConfig load_config(const KeyValues& file_values, const KeyValues& flag_values,
                      const std::optional<std::string>& env_seed = std::nullopt);
RunConfig load_config(const std::optional<std::filesystem::path>& file, const KeyValues& flag_values,
                      const std::optional<std::string>& env_seed = std::nullopt);

/// Closest known key within edit distance 2, if any.
std::optional<std::string> suggest_key(const std::string& key);

}  // namespace dsn
