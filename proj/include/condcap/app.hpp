#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "condcap/condenser.hpp"
#include "condcap/kernel.hpp"
#include "condcap/solver.hpp"

namespace condcap {

inline constexpr const char* kToolVersion = "0.1.0";
inline constexpr int kSchemaVersion = 1;
inline constexpr const char* kOutDirEnv = "CONDCAP_OUT_DIR";

enum class Mode { solve, dual, exhaust, oracle_compare, escape };

std::string to_string(Mode mode);
/// Throws ConfigError for unknown names.
Mode parse_mode(const std::string& name);

struct PlateConfig {
  int sign = 1;
  Generator generator;
  Index count = 0;  // nodes, or nodes per layer for layered shells
  std::uint64_t seed = 0;
};

struct RunConfig {
  int schema_version = kSchemaVersion;
  Mode mode = Mode::solve;
  KernelSpec kernel = KernelSpec::newton(3);
  DiagonalRule diagonal_rule;
  std::vector<PlateConfig> plates;
  std::optional<double> g_constant;
  std::optional<std::string> g_table_file;
  std::vector<double> a;
  SolverOptions solver;
  /// Per-stage node counts (exhaust and escape modes).
  std::vector<std::vector<Index>> stages;
  /// "prefix": farthest-point prefixes of the final stage (always nested);
  /// "regenerate": every stage generated on its own and checked for nesting.
  std::string nesting = "prefix";
  std::optional<double> reference_radius;  // escape
  std::optional<std::string> output_dir;
  std::vector<std::string> formats = {"json"};
  /// Directory that relative table_file paths are resolved against.
  std::filesystem::path base_dir;
};

/// Parses and schema-checks a config document. Unknown keys, wrong types and
/// inconsistent sizes throw ConfigError naming the key and its location.
RunConfig config_from_json(const nlohmann::json& doc,
                           const std::filesystem::path& base_dir = {});

/// Throws IoError when the file cannot be read, ConfigError otherwise.
RunConfig load_config(const std::filesystem::path& path);

/// Canonical form: every field explicit, keys sorted. Feeds the config hash.
nlohmann::json config_to_json(const RunConfig& config);

/// FNV-1a 64 of the canonical config without its output section, hex.
std::string config_hash(const RunConfig& config);

/// Plate seeds become seed, seed + 1, ...; the solver seed becomes seed.
void apply_seed_override(RunConfig& config, std::uint64_t seed);

/// Builds the condenser described by the config.
Condenser build_condenser(const RunConfig& config);
WeightSpec build_weights(const RunConfig& config, const Condenser& condenser);

struct RunReport {
  std::string tool_version = kToolVersion;
  std::string config_hash;
  nlohmann::json config;   // canonical echo
  nlohmann::json results;  // mode-specific sections, deterministic
  nlohmann::json timings;  // wall-clock seconds, excluded from determinism
  /// Per-node table of the final solve: plate_index, coordinates, weight,
  /// potential kappa(x, lambda), residual alpha_i a_i kappa(x, gamma) - C_i g(x).
  nlohmann::json nodes;

  bool operator==(const RunReport&) const = default;
};

nlohmann::json report_to_json(const RunReport& report);
RunReport report_from_json(const nlohmann::json& doc);

/// Executes the configured mode end to end. Module errors propagate with
/// their category and the mode prepended to the message.
RunReport run(const RunConfig& config);

struct ExportedFiles {
  std::vector<std::filesystem::path> paths;
};

/// Writes <mode>_<hash>.json and, for csv, <mode>_<hash>_nodes.csv plus
/// <mode>_<hash>_trace.csv (energy per iteration). Writes are atomic.
ExportedFiles export_report(const RunReport& report, const std::vector<std::string>& formats,
                            const std::filesystem::path& dir);

/// Output directory: explicit override, else config, else $CONDCAP_OUT_DIR, else ".".
std::filesystem::path resolve_output_dir(const RunConfig& config,
                                         const std::optional<std::string>& override_dir);

}  // namespace condcap
