// yyf: offline training, reduced-order solver construction and filter runs.

#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "yyf/errors.hpp"
#include "yyf/experiment.hpp"

namespace {

struct Options {
  std::string config;
  std::string preset;
  std::string model;
  std::string filters;
  std::optional<std::uint64_t> seed;
  std::string out;
  bool force = false;
  bool quiet = false;
};

void add_common(CLI::App* cmd, Options& o) {
  cmd->add_option("--config", o.config, "Experiment config file (INI)");
  cmd->add_option("--preset", o.preset, "Scale preset")->check(CLI::IsMember({"desk", "paper"}));
  cmd->add_option("--model", o.model, "Builtin example when no config file is given");
  cmd->add_option("--filters", o.filters, "Comma-separated filters: ekf,pf,yyf");
  cmd->add_option("--seed", o.seed, "Base seed");
  cmd->add_option("--out", o.out, "Output directory");
  cmd->add_flag("-q,--quiet", o.quiet, "No progress output");
}

yyf::ExperimentConfig resolve(const Options& o) {
  std::optional<yyf::Preset> preset;
  if (!o.preset.empty()) preset = yyf::parse_preset(o.preset);
  yyf::ExperimentConfig cfg;
  if (!o.config.empty()) {
    if (!o.model.empty()) throw yyf::ConfigError("--model cannot be combined with --config");
    cfg = yyf::load_config(o.config, preset);
  } else {
    cfg = yyf::preset_config(o.model.empty() ? "example1" : o.model, preset.value_or(yyf::Preset::Desk));
  }
  if (o.seed) cfg.seed = *o.seed;
  if (!o.out.empty()) cfg.out = o.out;
  if (!o.filters.empty()) {
    cfg.filters.clear();
    std::string item;
    std::istringstream in(o.filters);
    while (std::getline(in, item, ','))
      if (!item.empty()) cfg.filters.push_back(yyf::parse_filter_kind(item));
  }
  cfg.validate();
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Yau-Yau filtering with a physics-informed FKE solver and a reduced-order online stage"};
  app.require_subcommand(1);
  Options o;
  auto* sim = app.add_subcommand("simulate", "Simulate training and test trajectories");
  auto* train = app.add_subcommand("train-fke", "Stage IA: PINN solve over every training trajectory");
  auto* rom = app.add_subcommand("build-rom", "Stage IB: PCA basis and reduced-order solver");
  auto* run = app.add_subcommand("run", "Run filters on the test trajectories");
  auto* report = app.add_subcommand("report", "Write report.md and report.json from saved results");
  for (auto* c : {sim, train, rom, run, report}) add_common(c, o);
  run->add_flag("--force", o.force, "Accept artifacts produced with a different config hash");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    const yyf::ExperimentConfig cfg = resolve(o);
    const yyf::Progress progress{o.quiet ? nullptr : &std::cerr};
    if (sim->parsed()) yyf::cmd_simulate(cfg, progress);
    if (train->parsed()) yyf::cmd_train_fke(cfg, progress);
    if (rom->parsed()) yyf::cmd_build_rom(cfg, progress);
    if (run->parsed()) yyf::cmd_run(cfg, o.force, progress);
    if (report->parsed()) yyf::cmd_report(cfg, progress);
  } catch (const yyf::ConfigError& e) {
    std::cerr << "yyf: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "yyf: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
