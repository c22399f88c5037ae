#pragma once

// Scenario runner behind the tdwo command line: builtin manifest, config
// files, and the output writers.

#include "tdwo/errors.hpp"
#include "tdwo/models.hpp"
#include "tdwo/propagators.hpp"

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace tdwo::app {

enum class ModelKind { TwoLevel, Dvr, ThreeLevel };
enum class OutputFormat { Csv, Json };

std::string to_string(ModelKind k);

struct ScenarioConfig {
  std::string name;
  std::string source = "builtin"; // config path or "builtin"
  ModelKind kind = ModelKind::TwoLevel;

  // [model]
  double hbar = 1.0;
  double gamma = 0.5;
  int n_points = 100;
  double r_max = 12.0;
  double reduced_mass = 911.389;
  DvrPotentialParams potentials;
  std::vector<int> levels{8, 9}; // followed and limbo vibrational levels

  // [path]
  double duration = 50.0;
  double w0 = 0.105;
  double omega_star = 0.10242;
  double d_omega = 0.0005;
  int initial_sheet = +1;
  std::vector<SheetSwitch> sheet_schedule{{0.5, -1}, {1.0, +1}}; // times as fractions of T

  // [plan]
  int steps = 1000;
  std::optional<int> reference_steps;
  Scheme reference_scheme = Scheme::SplitSOD;
  Scheme waveop_scheme = Scheme::FOD;
  int record_every = 1;
  std::vector<int> convergence_steps; // non-empty: convergence study

  // [outputs]
  std::set<std::string> representations{"reference", "adiabatic", "almost_adiabatic"};
  OutputFormat format = OutputFormat::Csv;

  int effective_reference_steps() const;
  void validate() const;
};

struct ManifestEntry {
  std::string name;
  std::string reproduces;
  double expected_seconds;
};

const std::vector<ManifestEntry>& builtin_manifest();
std::optional<ScenarioConfig> builtin_scenario(const std::string& name);

ScenarioConfig parse_config(std::istream& in, const std::string& name, const std::string& source);
ScenarioConfig load_config(const std::filesystem::path& path);
ScenarioConfig resolve_scenario(const std::string& name_or_path);

// Writes the scenario's files under out_dir/name. Throws ConfigError or
// NumericalError.
void run_scenario(const ScenarioConfig& cfg, const std::filesystem::path& out_dir);

void write_file_atomic(const std::filesystem::path& path, const std::string& content);

std::string manifest_text();
std::string manifest_json();

// Full command line; returns the process exit status.
int main_entry(int argc, char** argv);

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitNumerical = 3;

} // namespace tdwo::app
