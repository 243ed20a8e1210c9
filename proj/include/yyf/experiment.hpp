#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "yyf/filters.hpp"
#include "yyf/grid.hpp"
#include "yyf/pca.hpp"
#include "yyf/pinn.hpp"
#include "yyf/rom.hpp"

namespace yyf {

enum class Preset { Desk, Paper };
Preset parse_preset(const std::string& name);
std::string to_string(Preset preset);

struct ExperimentConfig {
  std::string model = "example1";
  Preset preset = Preset::Desk;
  GridSpec grid;
  double dt = 0.01;
  int n_steps = 500;
  int runs = 5;
  int train_trajectories = 8;
  /// Length of training trajectories; 0 means n_steps.
  int train_steps = 0;
  std::uint64_t seed = 1;
  double initial_variance = 0.2;  // x0 ~ N(0, initial_variance I)
  PinnTrainConfig pinn;
  int pinn_hidden_layers = 4;
  int pinn_width = 40;
  PcaOptions pca;
  RomTrainConfig rom;
  int pf_particles = 100;
  std::vector<FilterKind> filters{FilterKind::Ekf, FilterKind::Pf, FilterKind::Yyf};
  std::filesystem::path out = "out";

  void validate() const;
  /// Settings that determine the trajectories, archives and ROM bundle, one
  /// "section.key=value" per line. Filters, run count and output path are
  /// left out so they can change without invalidating artifacts.
  std::string canonical() const;
  /// 16 hex digits of FNV-1a over canonical().
  std::string hash() const;

  Vec initial_mean() const;
  Mat initial_cov() const;
};

/// Defaults for a builtin example at the given scale.
ExperimentConfig preset_config(const std::string& model, Preset preset);

/// INI-style text with sections [experiment], [grid], [pinn], [rom]. A
/// `preset` key (or the override) selects the defaults the other keys modify.
/// Throws ConfigError naming the offending key.
ExperimentConfig parse_config(std::istream& in, std::optional<Preset> preset_override = {});
ExperimentConfig load_config(const std::filesystem::path& path,
                             std::optional<Preset> preset_override = {});

/// Output layout below cfg.out.
struct ExperimentPaths {
  std::filesystem::path root;
  std::filesystem::path trajectories() const { return root / "trajectories"; }
  std::filesystem::path train_trajectory(int i) const;
  std::filesystem::path test_trajectory(int i) const;
  std::filesystem::path stage_ia() const { return root / "stage_ia"; }
  std::filesystem::path archive(int i) const;
  std::filesystem::path rom_bundle() const { return root / "rom"; }
  std::filesystem::path rom_report() const { return root / "rom_report.json"; }
  std::filesystem::path run_dir() const { return root / "run"; }
  std::filesystem::path summary() const { return run_dir() / "summary.json"; }
};

/// Progress sink for long commands; defaults to silence.
struct Progress {
  std::ostream* log = nullptr;
};

void cmd_simulate(const ExperimentConfig& cfg, const Progress& progress = {});
/// A trajectory whose training fails keeps a partial archive with a failure
/// note; TrainingError is thrown once every archive is written.
void cmd_train_fke(const ExperimentConfig& cfg, const Progress& progress = {});
void cmd_build_rom(const ExperimentConfig& cfg, const Progress& progress = {});
void cmd_run(const ExperimentConfig& cfg, bool force = false, const Progress& progress = {});
/// Rebuilds report.md / report.json from the artifacts on disk.
void cmd_report(const ExperimentConfig& cfg, const Progress& progress = {});

}  // namespace yyf
