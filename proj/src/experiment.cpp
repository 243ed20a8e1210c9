#include "yyf/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iomanip>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "json.hpp"
#include "yyf/errors.hpp"
#include "yyf/model.hpp"

namespace yyf {

using nlohmann::json;

Preset parse_preset(const std::string& name) {
  if (name == "desk") return Preset::Desk;
  if (name == "paper") return Preset::Paper;
  throw ConfigError("unknown preset '" + name + "' (expected desk or paper)");
}

std::string to_string(Preset preset) { return preset == Preset::Desk ? "desk" : "paper"; }

// ---------------------------------------------------------------------------
// Presets

ExperimentConfig preset_config(const std::string& model, Preset preset) {
  ExperimentConfig c;
  c.model = model;
  c.preset = preset;
  if (model == "example1" || model == "example3") {
    c.grid = GridSpec::uniform(2, -2.2, 2.2, 50);
    c.pinn.epsilon = 1e-3;
  } else if (model == "example2") {
    c.grid = GridSpec::uniform(2, -3.0, 3.0, 50);
    c.pinn.epsilon = 2e-4;
  } else {
    throw ConfigError("unknown model '" + model + "'");
  }
  if (preset == Preset::Paper) {
    c.n_steps = 5000;
    c.runs = 20;
    c.train_trajectories = 8;
    c.pinn.max_epochs = 10000;
    c.rom.epochs = 20000;
    c.rom.n_train = 32000;
    c.rom.n_test = 8000;
  } else {
    // Desk scale: fits a single-core machine in a few hours end to end.
    c.n_steps = model == "example1" ? 500 : 200;
    c.runs = 5;
    c.train_steps = 500;
    c.train_trajectories = 8;
    c.pinn.first_max_epochs = 3000;
    c.pinn.max_epochs = 50;
    c.pinn.n_fke = 1000;
    c.pinn.n_ic = 500;
    c.pinn.n_bc = 200;
    c.rom.epochs = 2000;
    c.rom.n_train = 3200;
    c.rom.n_test = 800;
  }
  return c;
}

void ExperimentConfig::validate() const {
  make_example(model);  // throws on unknown names
  grid.validate();
  if (grid.dims() != 2) throw ConfigError("grid: builtin examples are two-dimensional");
  if (!(dt > 0.0)) throw ConfigError("experiment.dt must be positive");
  if (n_steps < 1) throw ConfigError("experiment.n_steps must be >= 1");
  if (runs < 1) throw ConfigError("experiment.runs must be >= 1");
  if (train_trajectories < 1) throw ConfigError("experiment.train_trajectories must be >= 1");
  if (train_steps < 0) throw ConfigError("experiment.train_steps must be >= 0");
  if (!(initial_variance > 0.0)) throw ConfigError("experiment.initial_variance must be positive");
  if (pf_particles < 1) throw ConfigError("experiment.pf_particles must be >= 1");
  if (pinn_hidden_layers < 1 || pinn_width < 1) throw ConfigError("pinn: invalid network size");
  if (filters.empty()) throw ConfigError("experiment.filters is empty");
  pinn.validate();
  rom.validate();
  if (pca.k < 1) throw ConfigError("rom.K must be >= 1");
}

Vec ExperimentConfig::initial_mean() const { return Vec::Zero(grid.dims()); }
Mat ExperimentConfig::initial_cov() const {
  return initial_variance * Mat::Identity(grid.dims(), grid.dims());
}

namespace {

std::string num(double v) {
  std::ostringstream s;
  s << std::setprecision(17) << v;
  return s.str();
}

std::string join_numbers(const std::vector<double>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + num(v[i]);
  return out;
}

}  // namespace

std::string ExperimentConfig::canonical() const {
  std::ostringstream s;
  std::vector<double> n_nodes(grid.n.begin(), grid.n.end());
  s << "experiment.model=" << model << '\n'
    << "experiment.dt=" << num(dt) << '\n'
    << "experiment.n_steps=" << n_steps << '\n'
    << "experiment.train_trajectories=" << train_trajectories << '\n'
    << "experiment.train_steps=" << train_steps << '\n'
    << "experiment.seed=" << seed << '\n'
    << "experiment.initial_variance=" << num(initial_variance) << '\n'
    << "grid.lo=" << join_numbers(grid.lo) << '\n'
    << "grid.hi=" << join_numbers(grid.hi) << '\n'
    << "grid.nodes=" << join_numbers(n_nodes) << '\n'
    << "pinn.epsilon=" << num(pinn.epsilon) << '\n'
    << "pinn.max_epochs=" << pinn.max_epochs << '\n'
    << "pinn.first_max_epochs=" << pinn.first_max_epochs << '\n'
    << "pinn.n_fke=" << pinn.n_fke << '\n'
    << "pinn.n_ic=" << pinn.n_ic << '\n'
    << "pinn.n_bc=" << pinn.n_bc << '\n'
    << "pinn.lambda_ic=" << num(pinn.lambda_ic) << '\n'
    << "pinn.lambda_bc=" << num(pinn.lambda_bc) << '\n'
    << "pinn.learning_rate=" << num(pinn.learning_rate) << '\n'
    << "pinn.carry_optimizer_state=" << pinn.carry_optimizer_state << '\n'
    << "pinn.hidden_layers=" << pinn_hidden_layers << '\n'
    << "pinn.width=" << pinn_width << '\n'
    << "rom.K=" << pca.k << '\n'
    << "rom.M=" << rom.m_samples << '\n'
    << "rom.epochs=" << rom.epochs << '\n'
    << "rom.batch_size=" << rom.batch_size << '\n'
    << "rom.learning_rate=" << num(rom.learning_rate) << '\n'
    << "rom.n_train=" << rom.n_train << '\n'
    << "rom.n_test=" << rom.n_test << '\n'
    << "rom.blocks=" << rom.n_blocks << '\n'
    << "rom.width=" << rom.width << '\n';
  return s.str();
}

std::string ExperimentConfig::hash() const {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (const unsigned char c : canonical()) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

// ---------------------------------------------------------------------------
// Config file

namespace {

template <class T>
T parse_value(const std::string& key, const std::string& text) {
  std::istringstream in(text);
  T value{};
  in >> value;
  if (in.fail() || !(in >> std::ws).eof()) {
    throw ConfigError("config key '" + key + "': cannot parse '" + text + "'");
  }
  return value;
}

bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1" || text == "yes") return true;
  if (text == "false" || text == "0" || text == "no") return false;
  throw ConfigError("config key '" + key + "': expected true or false, got '" + text + "'");
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(text);
  while (std::getline(in, item, ',')) {
    item.erase(0, item.find_first_not_of(" \t"));
    item.erase(item.find_last_not_of(" \t") + 1);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

// One value per grid dimension; a single value applies to every dimension.
template <class T>
std::vector<T> per_dim(const std::string& key, const std::string& text, int dims) {
  std::vector<T> out;
  for (const auto& item : split_list(text)) out.push_back(parse_value<T>(key, item));
  if (out.size() == 1) out.assign(static_cast<std::size_t>(dims), out.front());
  if (static_cast<int>(out.size()) != dims) {
    throw ConfigError("config key '" + key + "': expected 1 or " + std::to_string(dims) + " values");
  }
  return out;
}

using Setter = std::function<void(ExperimentConfig&, const std::string& key, const std::string& value)>;

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = [] {
    std::map<std::string, Setter> t;
    auto dbl = [](double ExperimentConfig::*m) {
      return [m](ExperimentConfig& c, const std::string& k, const std::string& v) { c.*m = parse_value<double>(k, v); };
    };
    auto integer = [](int ExperimentConfig::*m) {
      return [m](ExperimentConfig& c, const std::string& k, const std::string& v) { c.*m = parse_value<int>(k, v); };
    };
    t["experiment.dt"] = dbl(&ExperimentConfig::dt);
    t["experiment.n_steps"] = integer(&ExperimentConfig::n_steps);
    t["experiment.runs"] = integer(&ExperimentConfig::runs);
    t["experiment.train_trajectories"] = integer(&ExperimentConfig::train_trajectories);
    t["experiment.train_steps"] = integer(&ExperimentConfig::train_steps);
    t["experiment.initial_variance"] = dbl(&ExperimentConfig::initial_variance);
    t["experiment.pf_particles"] = integer(&ExperimentConfig::pf_particles);
    t["experiment.seed"] = [](ExperimentConfig& c, const std::string& k, const std::string& v) {
      c.seed = parse_value<std::uint64_t>(k, v);
    };
    t["experiment.out"] = [](ExperimentConfig& c, const std::string&, const std::string& v) { c.out = v; };
    t["experiment.filters"] = [](ExperimentConfig& c, const std::string& k, const std::string& v) {
      c.filters.clear();
      try {
        for (const auto& name : split_list(v)) c.filters.push_back(parse_filter_kind(name));
      } catch (const ConfigError& e) {
        throw ConfigError("config key '" + k + "': " + e.what());
      }
    };
    t["grid.lo"] = [](ExperimentConfig& c, const std::string& k, const std::string& v) {
      c.grid.lo = per_dim<double>(k, v, c.grid.dims());
    };
    t["grid.hi"] = [](ExperimentConfig& c, const std::string& k, const std::string& v) {
      c.grid.hi = per_dim<double>(k, v, c.grid.dims());
    };
    t["grid.nodes"] = [](ExperimentConfig& c, const std::string& k, const std::string& v) {
      c.grid.n = per_dim<int>(k, v, c.grid.dims());
    };
    t["pinn.epsilon"] = [](ExperimentConfig& c, const std::string& k, const std::string& v) {
      c.pinn.epsilon = parse_value<double>(k, v);
    };
    t["pinn.max_epochs"] = [](ExperimentConfig& c, const std::string& k, const std::string& v) {
      c.pinn.max_epochs = parse_value<int>(k, v);
    };
    t["pinn.first_max_epochs"] = [](ExperimentConfig& c, const std::string& k, const std::string& v) {
      c.pinn.first_max_epochs = parse_value<int>(k, v);
    };
    t["pinn.n_fke"] = [](ExperimentConfig& c, const std::string& k, const std::string& v) {
      c.pinn.n_fke = parse_value<int>(k, v);
    };
    t["pinn.n_ic"] = [](ExperimentConfig& c, const std::string& k, const std::string& v) {
      c.pinn.n_ic = parse_value<int>(k, v);
    };
    t["pinn.n_bc"] = [](ExperimentConfig& c, const std::string& k, const std::string& v) {
      c.pinn.n_bc = parse_value<int>(k, v);
    };
    t["pinn.lambda_ic"] = [](ExperimentConfig& c, const std::string& k, const std::string& v) {
      c.pinn.lambda_ic = parse_value<double>(k, v);
    };
    t["pinn.lambda_bc"] = [](ExperimentConfig& c, const std::string& k, const std::string& v) {
      c.pinn.lambda_bc = parse_value<double>(k, v);
    };
    t["pinn.learning_rate"] = [](ExperimentConfig& c, const std::string& k, const std::string& v) {
      c.pinn.learning_rate = parse_value<double>(k, v);
    };
    t["pinn.carry_optimizer_state"] = [](ExperimentConfig& c, const std::string& k, const std::string& v) {
      c.pinn.carry_optimizer_state = parse_bool(k, v);
    };
    t["pinn.hidden_layers"] = integer(&ExperimentConfig::pinn_hidden_layers);
    t["pinn.width"] = integer(&ExperimentConfig::pinn_width);
    t["rom.K"] = [](ExperimentConfig& c, const std::string& k, const std::string& v) {
      c.pca.k = parse_value<int>(k, v);
    };
    t["rom.M"] = [](ExperimentConfig& c, const std::string& k, const std::string& v) {
      c.rom.m_samples = parse_value<int>(k, v);
    };
    t["rom.epochs"] = [](ExperimentConfig& c, const std::string& k, const std::string& v) {
      c.rom.epochs = parse_value<int>(k, v);
    };
    t["rom.batch_size"] = [](ExperimentConfig& c, const std::string& k, const std::string& v) {
      c.rom.batch_size = parse_value<int>(k, v);
    };
    t["rom.learning_rate"] = [](ExperimentConfig& c, const std::string& k, const std::string& v) {
      c.rom.learning_rate = parse_value<double>(k, v);
    };
    t["rom.n_train"] = [](ExperimentConfig& c, const std::string& k, const std::string& v) {
      c.rom.n_train = parse_value<int>(k, v);
    };
    t["rom.n_test"] = [](ExperimentConfig& c, const std::string& k, const std::string& v) {
      c.rom.n_test = parse_value<int>(k, v);
    };
    t["rom.blocks"] = [](ExperimentConfig& c, const std::string& k, const std::string& v) {
      c.rom.n_blocks = parse_value<int>(k, v);
    };
    t["rom.width"] = [](ExperimentConfig& c, const std::string& k, const std::string& v) {
      c.rom.width = parse_value<int>(k, v);
    };
    return t;
  }();
  return table;
}

}  // namespace

ExperimentConfig parse_config(std::istream& in, std::optional<Preset> preset_override) {
  boost::property_tree::ptree tree;
  try {
    boost::property_tree::ini_parser::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  for (const auto& [name, section] : tree) {
    if (section.empty() && !section.data().empty()) {
      throw ConfigError("config key '" + name + "' must be inside a section");
    }
  }

  const std::string model = tree.get<std::string>("experiment.model", "example1");
  Preset preset = Preset::Desk;
  if (const auto p = tree.get_optional<std::string>("experiment.preset")) {
    try {
      preset = parse_preset(*p);
    } catch (const ConfigError& e) {
      throw ConfigError(std::string("config key 'experiment.preset': ") + e.what());
    }
  }
  if (preset_override) preset = *preset_override;

  ExperimentConfig cfg;
  try {
    cfg = preset_config(model, preset);
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("config key 'experiment.model': ") + e.what());
  }
  for (const auto& [section_name, section] : tree) {
    for (const auto& [key, node] : section) {
      const std::string full = section_name + "." + key;
      if (full == "experiment.model" || full == "experiment.preset") continue;
      const auto it = setters().find(full);
      if (it == setters().end()) throw ConfigError("unknown config key '" + full + "'");
      it->second(cfg, full, node.data());
    }
  }
  cfg.validate();
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path, std::optional<Preset> preset_override) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  return parse_config(in, preset_override);
}

// ---------------------------------------------------------------------------
// Pipeline

std::filesystem::path ExperimentPaths::train_trajectory(int i) const {
  char name[32];
  std::snprintf(name, sizeof name, "train_%03d.csv", i);
  return trajectories() / name;
}

std::filesystem::path ExperimentPaths::test_trajectory(int i) const {
  char name[32];
  std::snprintf(name, sizeof name, "test_%03d.csv", i);
  return trajectories() / name;
}

std::filesystem::path ExperimentPaths::archive(int i) const {
  char name[32];
  std::snprintf(name, sizeof name, "train_%03d", i);
  return stage_ia() / name;
}

namespace {

// RNG stream ids per purpose; the seed is the config seed.
constexpr std::uint64_t kTrainStream = 0x100;
constexpr std::uint64_t kTestStream = 0x200;
constexpr std::uint64_t kStageIaStream = 0x300;
constexpr std::uint64_t kRomStream = 0x400;
constexpr std::uint64_t kPfStream = 0x500;

void log(const Progress& p, const std::string& line) {
  if (p.log) *p.log << line << std::endl;
}

json read_json(const std::filesystem::path& path, const std::string& missing_hint) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path.string() + " not found; " + missing_hint);
  try {
    json j;
    in >> j;
    return j;
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void write_json(const json& j, const std::filesystem::path& path) {
  std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

void check_hash(const std::string& found, const ExperimentConfig& cfg, const std::string& what,
                bool force) {
  if (found == cfg.hash() || force) return;
  throw ConfigError(what + " was produced with config hash " + found + " but the current config hashes to " +
                    cfg.hash() + "; rerun that stage or pass --force");
}

std::vector<double> to_std(const Vec& v) { return {v.data(), v.data() + v.size()}; }

}  // namespace

void cmd_simulate(const ExperimentConfig& cfg, const Progress& progress) {
  cfg.validate();
  const ExperimentPaths paths{cfg.out};
  std::filesystem::create_directories(paths.trajectories());
  const StateSpaceModel model = make_example(cfg.model);
  SimulationConfig sim;
  sim.dt = cfg.dt;
  sim.n_steps = cfg.n_steps;
  sim.seed = cfg.seed;
  sim.initial_mean = cfg.initial_mean();
  sim.initial_cov = cfg.initial_cov();
  SimulationConfig train_sim = sim;
  train_sim.n_steps = cfg.train_steps > 0 ? cfg.train_steps : cfg.n_steps;
  for (int i = 0; i < cfg.train_trajectories; ++i) {
    RandomStream rng(cfg.seed, kTrainStream + static_cast<std::uint64_t>(i));
    write_trajectory_csv(simulate_path(model, train_sim, rng), paths.train_trajectory(i));
  }
  for (int i = 0; i < cfg.runs; ++i) {
    RandomStream rng(cfg.seed, kTestStream + static_cast<std::uint64_t>(i));
    write_trajectory_csv(simulate_path(model, sim, rng), paths.test_trajectory(i));
  }
  write_json({{"format", "yyf-trajectories"},
              {"config_hash", cfg.hash()},
              {"model", cfg.model},
              {"dt", cfg.dt},
              {"n_steps", cfg.n_steps},
              {"train", cfg.train_trajectories},
              {"train_steps", train_sim.n_steps},
              {"test", cfg.runs}},
             paths.trajectories() / "manifest.json");
  log(progress, "simulate: wrote " + std::to_string(cfg.train_trajectories) + " training and " +
                    std::to_string(cfg.runs) + " test trajectories to " + paths.trajectories().string());
}

void cmd_train_fke(const ExperimentConfig& cfg, const Progress& progress) {
  cfg.validate();
  const ExperimentPaths paths{cfg.out};
  const json traj_manifest = read_json(paths.trajectories() / "manifest.json", "run `yyf simulate` first");
  check_hash(traj_manifest.at("config_hash").get<std::string>(), cfg, "trajectories", false);
  const StateSpaceModel model = make_example(cfg.model);
  const DensityField sigma0 = standard_initial_density(cfg.grid);

  // The first interval starts from sigma_0 for every trajectory, so it is
  // trained once and refined per trajectory.
  const auto first_started = std::chrono::steady_clock::now();
  RandomStream first_rng(cfg.seed, kStageIaStream + 0xff);
  const FirstInterval first = train_first_interval(model, cfg.pinn, sigma0, cfg.dt, first_rng,
                                                   cfg.pinn_hidden_layers, cfg.pinn_width);
  const double first_s =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - first_started).count();
  {
    char line[160];
    std::snprintf(line, sizeof line, "train-fke: first interval epochs %d loss %.3g in %.0fs",
                  first.result.epochs_used, first.result.final_loss, first_s);
    log(progress, line);
  }
  std::filesystem::create_directories(paths.stage_ia());
  write_json({{"epochs_used", first.result.epochs_used},
              {"final_loss", first.result.final_loss},
              {"wall_s", first_s}},
             paths.stage_ia() / "first_interval.json");

  std::string failures;
  for (int i = 0; i < cfg.train_trajectories; ++i) {
    const Trajectory traj = read_trajectory_csv(paths.train_trajectory(i));
    RandomStream rng(cfg.seed, kStageIaStream + static_cast<std::uint64_t>(i));
    StageIaOptions opt;
    opt.hidden_layers = cfg.pinn_hidden_layers;
    opt.width = cfg.pinn_width;
    opt.throw_on_failure = false;
    opt.initial_net = &first.net;
    opt.initial_optimizer = &first.optimizer;
    const auto started = std::chrono::steady_clock::now();
    opt.on_step = [&](const StepStats& s) {
      if (s.step % 50 == 0 || s.step == traj.n_steps()) {
        const double el = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
        char line[160];
        std::snprintf(line, sizeof line, "train-fke: trajectory %d step %d/%d epochs %d loss %.3g elapsed %.0fs",
                      i, s.step, traj.n_steps(), s.epochs_used, s.final_loss, el);
        log(progress, line);
      }
    };
    const StageIaResult r = run_stage_ia(model, traj, cfg.pinn, sigma0, rng, opt);

    ArchiveManifest m;
    m.model = cfg.model;
    m.grid = cfg.grid;
    m.dt = cfg.dt;
    m.n_steps = traj.n_steps();
    m.config_hash = cfg.hash();
    m.pair_count = static_cast<int>(r.pairs.size());
    m.failure = r.failure;
    write_snapshot_archive(paths.archive(i), m, r.pairs);
    write_step_stats_csv(r.stats, paths.archive(i) / "steps.csv");
    if (!r.failure.empty()) {
      log(progress, "train-fke: trajectory " + std::to_string(i) + " stopped: " + r.failure);
      failures += (failures.empty() ? "" : "; ") + r.failure;
    }
  }
  if (!failures.empty()) throw TrainingError(failures);
}

void cmd_build_rom(const ExperimentConfig& cfg, const Progress& progress) {
  cfg.validate();
  const ExperimentPaths paths{cfg.out};
  const StateSpaceModel model = make_example(cfg.model);

  std::vector<SnapshotPair> pairs;
  for (int i = 0; i < cfg.train_trajectories; ++i) {
    if (!std::filesystem::exists(paths.archive(i) / "manifest.json")) {
      throw ConfigError("snapshot archive " + paths.archive(i).string() + " not found; run `yyf train-fke` first");
    }
    ArchiveManifest m;
    auto p = read_snapshot_archive(paths.archive(i), &m);
    check_hash(m.config_hash, cfg, "snapshot archive " + paths.archive(i).string(), false);
    if (!m.failure.empty()) log(progress, "build-rom: using partial archive " + std::to_string(i) + " (" + m.failure + ")");
    for (auto& pair : p) pairs.push_back(std::move(pair));
  }
  if (pairs.empty()) throw ConfigError("build-rom: no snapshot pairs available");

  std::vector<DensityField> snapshots;
  snapshots.reserve(2 * pairs.size());
  for (const auto& p : pairs) {
    snapshots.push_back(p.initial);
    snapshots.push_back(p.terminal);
  }
  if (static_cast<int>(snapshots.size()) < cfg.pca.k) {
    throw ConfigError("build-rom: " + std::to_string(snapshots.size()) + " snapshots is fewer than K = " +
                      std::to_string(cfg.pca.k));
  }
  const PcaBasis basis = fit_pca(snapshots, cfg.pca);
  snapshots.clear();
  log(progress, "build-rom: K = " + std::to_string(basis.k()) + " explains " +
                    num(basis.explained_variance_ratio.sum()) + " of the variance");

  const RomDataset data = build_rom_dataset(pairs, basis, model, cfg.dt, cfg.rom.m_samples);
  RandomStream rng(cfg.seed, kRomStream);
  const int every = std::max(1, cfg.rom.epochs / 20);
  RomTrainResult trained = train_rom(data, cfg.rom, rng, [&](int epoch, double loss) {
    if (epoch % every == 0) {
      char line[128];
      std::snprintf(line, sizeof line, "build-rom: epoch %d/%d train loss %.4g", epoch, cfg.rom.epochs, loss);
      log(progress, line);
    }
  });

  RomBundle bundle;
  bundle.basis = basis;
  bundle.net = trained.net;
  bundle.manifest = {cfg.model, basis.k(), cfg.rom.m_samples, cfg.dt, cfg.hash(), trained.train_loss, trained.test_loss};
  write_rom_bundle(bundle, paths.rom_bundle());

  // Held-out quality: ROM terminal fields vs Stage IA ones, and the basis alone.
  std::vector<double> rom_err, pca_err;
  for (const Eigen::Index j : trained.test_index) {
    const SnapshotPair& p = pairs[static_cast<std::size_t>(j)];
    const Vec beta = rom_forward(trained.net, Vec(data.alpha.col(j)), Vec(data.features.col(j)));
    rom_err.push_back(relative_l2(reconstruct(basis, beta), p.terminal));
    pca_err.push_back(relative_l2(reconstruct(basis, project(basis, p.terminal)), p.terminal));
  }
  auto stats = [](const std::vector<double>& v) {
    return json{{"mean", mean(v)},
                {"median", median(v)},
                {"max", v.empty() ? 0.0 : *std::max_element(v.begin(), v.end())}};
  };
  const Vec cumulative = [&] {
    Vec c = basis.explained_variance_ratio;
    for (Eigen::Index i = 1; i < c.size(); ++i) c[i] += c[i - 1];
    return c;
  }();
  write_json({{"config_hash", cfg.hash()},
              {"K", basis.k()},
              {"explained_variance_ratio", to_std(basis.explained_variance_ratio)},
              {"cumulative_variance", to_std(cumulative)},
              {"snapshot_pairs", static_cast<int>(pairs.size())},
              {"n_train", cfg.rom.n_train},
              {"n_test", cfg.rom.n_test},
              {"train_loss", trained.train_loss},
              {"test_loss", trained.test_loss},
              {"heldout_rom_rel_l2", stats(rom_err)},
              {"heldout_pca_rel_l2", stats(pca_err)},
              {"bundle_bytes", bundle_size_bytes(paths.rom_bundle())}},
             paths.rom_report());

  {
    std::ofstream h(cfg.out / "rom_history.csv");
    h << "epoch,train_loss,test_loss\n" << std::setprecision(17);
    std::size_t t = 0;
    for (std::size_t e = 0; e < trained.train_history.size(); ++e) {
      h << e + 1 << ',' << trained.train_history[e] << ',';
      if (t < trained.test_history.size() && trained.test_history[t].first == static_cast<int>(e + 1)) {
        h << trained.test_history[t++].second;
      }
      h << '\n';
    }
  }

  // A few held-out fields for plotting: Stage IA terminal next to the ROM one.
  const std::filesystem::path fields = cfg.out / "fields";
  std::filesystem::create_directories(fields);
  for (std::size_t n = 0; n < std::min<std::size_t>(3, trained.test_index.size()); ++n) {
    const Eigen::Index j = trained.test_index[n];
    const SnapshotPair& p = pairs[static_cast<std::size_t>(j)];
    char stem[64];
    std::snprintf(stem, sizeof stem, "heldout_%d_step_%05d", static_cast<int>(n), p.step);
    write_field_csv(p.terminal, fields / (std::string(stem) + "_stage_ia.csv"));
    const Vec beta = rom_forward(trained.net, Vec(data.alpha.col(j)), Vec(data.features.col(j)));
    write_field_csv(reconstruct(basis, beta), fields / (std::string(stem) + "_rom.csv"));
  }
  for (int j = 0; j < std::min(6, basis.k()); ++j) {
    write_field_csv(basis.component(j), fields / ("component_" + std::to_string(j + 1) + ".csv"));
  }

  log(progress, "build-rom: train loss " + num(trained.train_loss) + ", test loss " + num(trained.test_loss) +
                    ", held-out median rel L2 " + num(median(rom_err)));
}

namespace {

struct FilterSummary {
  std::vector<Vec> mse;  // per run
  std::vector<double> wall_ms;
  std::vector<double> rom_ms;
  std::int64_t degeneracy = 0;
  std::int64_t clamped = 0;
};

std::string fmt(double v, int prec) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", prec, v);
  return buf;
}

std::string filter_label(const std::string& kind) {
  if (kind == "ekf") return "EKF";
  if (kind == "pf") return "PF";
  return "PINNYYF";
}

std::string markdown_table(const json& summary) {
  const int d = summary.at("dim_x").get<int>();
  std::ostringstream s;
  s << "| Method |";
  for (int k = 1; k <= d; ++k) s << " MSE x" << k << " |";
  s << " CPU time per step (ms, median) | mean (ms) | Storage (kb) |\n|---|";
  for (int k = 0; k < d; ++k) s << "---|";
  s << "---|---|---|\n";
  for (const auto& [kind, f] : summary.at("filters").items()) {
    s << "| " << filter_label(kind) << " |";
    for (const double m : f.at("mean_mse")) s << ' ' << fmt(m, 3) << " |";
    s << ' ' << fmt(f.at("median_wall_ms").get<double>(), 3) << " | " << fmt(f.at("mean_wall_ms").get<double>(), 3)
      << " | ";
    const auto bytes = f.at("storage_bytes").get<std::uint64_t>();
    s << (bytes ? fmt(static_cast<double>(bytes) / 1000.0, 0) : std::string("-")) << " |\n";
  }
  return s.str();
}

}  // namespace

void cmd_run(const ExperimentConfig& cfg, bool force, const Progress& progress) {
  cfg.validate();
  const ExperimentPaths paths{cfg.out};
  const json traj_manifest = read_json(paths.trajectories() / "manifest.json", "run `yyf simulate` first");
  check_hash(traj_manifest.at("config_hash").get<std::string>(), cfg, "trajectories", force);
  if (traj_manifest.at("test").get<int>() < cfg.runs) {
    throw ConfigError("only " + std::to_string(traj_manifest.at("test").get<int>()) +
                      " test trajectories exist; rerun `yyf simulate`");
  }
  const StateSpaceModel model = make_example(cfg.model);
  const bool want_yyf = std::find(cfg.filters.begin(), cfg.filters.end(), FilterKind::Yyf) != cfg.filters.end();

  RomBundle bundle;
  std::uintmax_t bundle_bytes = 0;
  if (want_yyf) {
    if (!std::filesystem::exists(paths.rom_bundle() / "manifest.json")) {
      throw ConfigError("ROM bundle " + paths.rom_bundle().string() + " not found; run `yyf build-rom` first");
    }
    bundle = read_rom_bundle(paths.rom_bundle());
    check_hash(bundle.manifest.config_hash, cfg, "ROM bundle", force);
    bundle_bytes = bundle_size_bytes(paths.rom_bundle());
  }

  std::vector<Trajectory> trajs;
  for (int r = 0; r < cfg.runs; ++r) trajs.push_back(read_trajectory_csv(paths.test_trajectory(r)));
  std::filesystem::create_directories(paths.run_dir());

  json summary;
  summary["format"] = "yyf-run-summary";
  summary["config_hash"] = cfg.hash();
  summary["model"] = cfg.model;
  summary["preset"] = to_string(cfg.preset);
  summary["n_steps"] = cfg.n_steps;
  summary["runs"] = cfg.runs;
  summary["dim_x"] = model.dim_x;

  for (const FilterKind kind : cfg.filters) {
    const std::string name = to_string(kind);
    std::vector<FilterOutput> outputs(static_cast<std::size_t>(cfg.runs));
    std::vector<std::string> errors(static_cast<std::size_t>(cfg.runs));
    // Monte Carlo runs are independent; each owns its filter state and stream.
#pragma omp parallel for schedule(dynamic)
    for (int r = 0; r < cfg.runs; ++r) {
      FilterSetup setup;
      setup.kind = kind;
      setup.model = &model;
      setup.initial_mean = cfg.initial_mean();
      setup.initial_cov = cfg.initial_cov();
      setup.pf_particles = cfg.pf_particles;
      setup.pf_seed = RandomStream(cfg.seed, kPfStream + static_cast<std::uint64_t>(r)).next_u64();
      if (kind == FilterKind::Yyf) {
        setup.basis = &bundle.basis;
        setup.rom = &bundle.net;
        setup.m_samples = bundle.manifest.m_samples;
        setup.sigma0 = standard_initial_density(bundle.basis.grid);
      }
      try {
        outputs[static_cast<std::size_t>(r)] = run_filter(setup, trajs[static_cast<std::size_t>(r)]);
      } catch (const std::exception& e) {
        errors[static_cast<std::size_t>(r)] = e.what();
      }
    }
    for (int r = 0; r < cfg.runs; ++r) {
      if (!errors[static_cast<std::size_t>(r)].empty()) {
        throw FilterDivergence("run " + std::to_string(r) + ": " + errors[static_cast<std::size_t>(r)]);
      }
    }

    FilterSummary fs;
    json runs = json::array();
    for (int r = 0; r < cfg.runs; ++r) {
      const FilterOutput& o = outputs[static_cast<std::size_t>(r)];
      char file[64];
      std::snprintf(file, sizeof file, "%s_run_%03d.csv", name.c_str(), r);
      write_filter_csv(o, paths.run_dir() / file);
      fs.mse.push_back(o.mse);
      fs.wall_ms.insert(fs.wall_ms.end(), o.wall_ms.begin(), o.wall_ms.end());
      fs.rom_ms.insert(fs.rom_ms.end(), o.rom_ms.begin(), o.rom_ms.end());
      fs.degeneracy += o.degeneracy_events;
      fs.clamped += o.clamped_exponents;
      runs.push_back({{"file", file},
                      {"mse", to_std(o.mse)},
                      {"median_wall_ms", median(o.wall_ms)},
                      {"mean_wall_ms", mean(o.wall_ms)}});
    }
    Vec mean_mse = Vec::Zero(model.dim_x);
    for (const Vec& m : fs.mse) mean_mse += m;
    mean_mse /= static_cast<double>(fs.mse.size());

    json f;
    f["runs"] = runs;
    f["mean_mse"] = to_std(mean_mse);
    f["median_wall_ms"] = median(fs.wall_ms);
    f["mean_wall_ms"] = mean(fs.wall_ms);
    if (kind == FilterKind::Yyf) {
      f["median_rom_ms"] = median(fs.rom_ms);
      f["mean_rom_ms"] = mean(fs.rom_ms);
      f["clamped_exponents"] = fs.clamped;
    }
    if (kind == FilterKind::Pf) {
      f["particles"] = cfg.pf_particles;
      f["degeneracy_events"] = fs.degeneracy;
    }
    f["storage_bytes"] = kind == FilterKind::Yyf ? static_cast<std::uint64_t>(bundle_bytes) : 0;
    summary["filters"][name] = f;

    std::string line = "run: " + name + " mean MSE";
    for (Eigen::Index k = 0; k < mean_mse.size(); ++k) line += " " + fmt(mean_mse[k], 3);
    log(progress, line + ", median " + fmt(median(fs.wall_ms), 3) + " ms/step");
  }

  write_json(summary, paths.summary());
  std::ofstream(paths.run_dir() / "table.md") << markdown_table(summary);
}

void cmd_report(const ExperimentConfig& cfg, const Progress& progress) {
  const ExperimentPaths paths{cfg.out};
  const json summary = read_json(paths.summary(), "run `yyf run` first");
  json report;
  report["config_hash"] = summary.at("config_hash");
  report["model"] = summary.at("model");
  report["filters"] = summary.at("filters");

  std::ostringstream md;
  md << "# " << summary.at("model").get<std::string>() << " (" << summary.value("preset", std::string("?"))
     << " preset, " << summary.at("runs").get<int>() << " runs of " << summary.at("n_steps").get<int>()
     << " steps)\n\nConfig hash `" << summary.at("config_hash").get<std::string>() << "`\n\n"
     << markdown_table(summary);

  // Stage IA epoch statistics, when archives are present.
  std::vector<double> epochs, first10, wall;
  for (int i = 0; std::filesystem::exists(paths.archive(i) / "steps.csv"); ++i) {
    std::ifstream in(paths.archive(i) / "steps.csv");
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
      int step = 0, ep = 0;
      double loss = 0.0, ms = 0.0;
      if (std::sscanf(line.c_str(), "%d,%d,%lf,%lf", &step, &ep, &loss, &ms) != 4) {
        throw FormatError("malformed line in " + (paths.archive(i) / "steps.csv").string());
      }
      epochs.push_back(ep);
      wall.push_back(ms);
      if (step <= 10) first10.push_back(ep);
    }
  }
  if (!epochs.empty()) {
    const double total_s = mean(wall) * static_cast<double>(wall.size()) / 1000.0;
    report["stage_ia"] = {{"steps", epochs.size()},
                          {"mean_epochs_per_step", mean(epochs)},
                          {"mean_epochs_first_10_steps", mean(first10)},
                          {"total_seconds", total_s}};
    md << "\n## Stage IA\n\n" << epochs.size() << " intervals, " << fmt(mean(epochs), 1)
       << " epochs per interval on average (" << fmt(mean(first10), 1) << " over the first 10), "
       << fmt(total_s / 60.0, 1) << " min in total.\n";
  }
  if (std::filesystem::exists(paths.rom_report())) {
    const json rom = read_json(paths.rom_report(), "");
    report["rom"] = rom;
    const auto cum = rom.at("cumulative_variance").get<std::vector<double>>();
    md << "\n## Reduced-order solver\n\nK = " << rom.at("K").get<int>() << " components explain "
       << fmt(100.0 * (cum.empty() ? 0.0 : cum.back()), 2) << "% of the snapshot variance. Coefficient MSE: train "
       << rom.at("train_loss").get<double>() << ", test " << rom.at("test_loss").get<double>()
       << ". Held-out terminal fields: median relative L2 "
       << fmt(rom.at("heldout_rom_rel_l2").at("median").get<double>(), 4) << " (basis alone "
       << fmt(rom.at("heldout_pca_rel_l2").at("median").get<double>(), 4) << ").\n";
  }
  write_json(report, cfg.out / "report.json");
  std::ofstream(cfg.out / "report.md") << md.str();
  log(progress, "report: wrote " + (cfg.out / "report.md").string());
}

}  // namespace yyf
