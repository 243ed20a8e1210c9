#include "yyf/rom.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "json.hpp"
#include "yyf/adam.hpp"
#include "yyf/errors.hpp"
#include "yyf/net_io.hpp"

namespace yyf {

int time_feature_dim(const StateSpaceModel& model, int m_samples) {
  return static_cast<int>(model.time_variant_features.size()) * (m_samples + 1);
}

Vec time_features(const StateSpaceModel& model, double t_start, double dt, int m_samples) {
  if (m_samples < 1) throw ConfigError("time features: M must be >= 1");
  Vec out(time_feature_dim(model, m_samples));
  Eigen::Index k = 0;
  for (const auto& f : model.time_variant_features)
    for (int m = 0; m <= m_samples; ++m) out[k++] = f(t_start + dt * m / m_samples);
  return out;
}

RomDataset build_rom_dataset(const std::vector<SnapshotPair>& pairs, const PcaBasis& basis,
                             const StateSpaceModel& model, double dt, int m_samples) {
  const auto n = static_cast<Eigen::Index>(pairs.size());
  RomDataset d;
  d.alpha.resize(basis.k(), n);
  d.beta.resize(basis.k(), n);
  d.features.resize(time_feature_dim(model, m_samples), n);
  for (Eigen::Index j = 0; j < n; ++j) {
    const SnapshotPair& p = pairs[static_cast<std::size_t>(j)];
    d.alpha.col(j) = project(basis, p.initial);
    d.beta.col(j) = project(basis, p.terminal);
    d.features.col(j) = time_features(model, (p.step - 1) * dt, dt, m_samples);
    d.steps.push_back(p.step);
  }
  return d;
}

void RomTrainConfig::validate() const {
  if (m_samples < 1) throw ConfigError("rom: M must be >= 1");
  if (epochs < 1) throw ConfigError("rom: epochs must be >= 1");
  if (n_train < 1 || n_test < 0) throw ConfigError("rom: invalid train/test sizes");
  if (batch_size < 1 || batch_size > n_train) throw ConfigError("rom: batch size must be in [1, n_train]");
  if (!(learning_rate > 0.0)) throw ConfigError("rom: learning rate must be positive");
  if (test_every < 1) throw ConfigError("rom: test_every must be >= 1");
}

RomNet rom_identity_init(int coeff_dim, int feature_dim, RandomStream& rng, int n_blocks, int width) {
  RomNet net = RomNet::glorot(coeff_dim, feature_dim, rng, n_blocks, width);
  for (int b = 0; b < n_blocks; ++b) net.weight(b, RomNet::kBlockLayers).setZero();
  return net;
}

Mat columns(const Mat& m, const std::vector<Eigen::Index>& idx) {
  Mat out(m.rows(), static_cast<Eigen::Index>(idx.size()));
  for (std::size_t j = 0; j < idx.size(); ++j) out.col(static_cast<Eigen::Index>(j)) = m.col(idx[j]);
  return out;
}

namespace {

double rom_loss(const RomNet& net, const Mat& alpha, const Mat& features, const Mat& beta) {
  if (alpha.cols() == 0) return 0.0;
  return (rom_forward(net, alpha, features) - beta).colwise().squaredNorm().mean() /
         static_cast<double>(alpha.rows());
}

}  // namespace

RomTrainResult train_rom(const RomDataset& data, const RomTrainConfig& cfg, RandomStream& rng,
                         const std::function<void(int, double)>& on_epoch) {
  cfg.validate();
  if (data.size() < cfg.n_train + cfg.n_test) {
    throw ConfigError("rom: dataset has " + std::to_string(data.size()) + " pairs, split needs " +
                      std::to_string(cfg.n_train + cfg.n_test));
  }
  const auto k = static_cast<int>(data.alpha.rows());
  const auto f = static_cast<int>(data.features.rows());

  RomTrainResult r;
  std::vector<Eigen::Index> order(static_cast<std::size_t>(data.size()));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::shuffle(order.begin(), order.end(), rng);
  r.train_index.assign(order.begin(), order.begin() + cfg.n_train);
  r.test_index.assign(order.begin() + cfg.n_train, order.begin() + cfg.n_train + cfg.n_test);

  const Mat a_train = columns(data.alpha, r.train_index);
  const Mat f_train = columns(data.features, r.train_index);
  const Mat b_train = columns(data.beta, r.train_index);
  const Mat a_test = columns(data.alpha, r.test_index);
  const Mat f_test = columns(data.features, r.test_index);
  const Mat b_test = columns(data.beta, r.test_index);

  RandomStream init_rng = rng.split(0x2a);
  r.net = rom_identity_init(k, f, init_rng, cfg.n_blocks, cfg.width);
  AdamState adam = AdamState::for_params(static_cast<Eigen::Index>(r.net.param_count()), cfg.learning_rate);

  std::vector<Eigen::Index> perm(static_cast<std::size_t>(cfg.n_train));
  std::iota(perm.begin(), perm.end(), Eigen::Index{0});
  Mat ab, fb, bb;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(perm.begin(), perm.end(), rng);
    double sum = 0.0;
    int batches = 0;
    for (std::size_t start = 0; start < perm.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(perm.size(), start + static_cast<std::size_t>(cfg.batch_size));
      const std::vector<Eigen::Index> idx(perm.begin() + static_cast<std::ptrdiff_t>(start),
                                          perm.begin() + static_cast<std::ptrdiff_t>(end));
      ab = columns(a_train, idx);
      fb = columns(f_train, idx);
      bb = columns(b_train, idx);
      LossAndGrad lg = rom_mse_grad(r.net, ab, fb, bb);
      if (!std::isfinite(lg.loss)) {
        std::string trace;
        const std::size_t from = r.train_history.size() > 5 ? r.train_history.size() - 5 : 0;
        for (std::size_t i = from; i < r.train_history.size(); ++i)
          trace += " " + std::to_string(r.train_history[i]);
        throw TrainingError("rom: loss became non-finite at epoch " + std::to_string(epoch) +
                            "; recent losses:" + trace);
      }
      adam_step(r.net.params(), lg.grad, adam);
      sum += lg.loss;
      ++batches;
    }
    r.train_history.push_back(sum / batches);
    if (epoch % cfg.test_every == 0 || epoch == cfg.epochs) {
      r.test_history.emplace_back(epoch, rom_loss(r.net, a_test, f_test, b_test));
    }
    if (on_epoch) on_epoch(epoch, r.train_history.back());
  }
  r.train_loss = rom_loss(r.net, a_train, f_train, b_train);
  r.test_loss = rom_loss(r.net, a_test, f_test, b_test);
  return r;
}

void write_rom_bundle(const RomBundle& bundle, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_pca_basis(bundle.basis, dir / "basis.pca");
  write_rom_net(bundle.net, dir / "rom.net");
  const RomBundleManifest& m = bundle.manifest;
  nlohmann::json j;
  j["format"] = "yyf-rom-bundle";
  j["version"] = 1;
  j["model"] = m.model;
  j["K"] = m.k;
  j["M"] = m.m_samples;
  j["dt"] = m.dt;
  j["config_hash"] = m.config_hash;
  j["train_loss"] = m.train_loss;
  j["test_loss"] = m.test_loss;
  j["explained_variance_ratio"] =
      std::vector<double>(bundle.basis.explained_variance_ratio.data(),
                          bundle.basis.explained_variance_ratio.data() + bundle.basis.k());
  std::ofstream out(dir / "manifest.json");
  if (!out) throw ConfigError("cannot write manifest in " + dir.string());
  out << j.dump(2) << '\n';
}

RomBundle read_rom_bundle(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw FormatError("missing ROM bundle manifest in " + dir.string());
  RomBundle b;
  try {
    nlohmann::json j;
    in >> j;
    if (j.at("format") != "yyf-rom-bundle") throw FormatError("not a ROM bundle");
    b.manifest.model = j.at("model").get<std::string>();
    b.manifest.k = j.at("K").get<int>();
    b.manifest.m_samples = j.at("M").get<int>();
    b.manifest.dt = j.at("dt").get<double>();
    b.manifest.config_hash = j.at("config_hash").get<std::string>();
    b.manifest.train_loss = j.value("train_loss", 0.0);
    b.manifest.test_loss = j.value("test_loss", 0.0);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(dir.string() + "/manifest.json: " + e.what());
  }
  b.basis = read_pca_basis(dir / "basis.pca");
  b.net = read_rom_net(dir / "rom.net");
  if (b.basis.k() != b.manifest.k || b.net.coeff_dim() != b.manifest.k) {
    throw FormatError("ROM bundle: K disagrees between manifest, basis and network");
  }
  return b;
}

std::uintmax_t bundle_size_bytes(const std::filesystem::path& dir) {
  std::uintmax_t total = 0;
  for (const auto& e : std::filesystem::directory_iterator(dir))
    if (e.is_regular_file()) total += e.file_size();
  return total;
}

}  // namespace yyf
