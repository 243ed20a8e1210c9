#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "yyf/model.hpp"
#include "yyf/pca.hpp"
#include "yyf/pinn.hpp"
#include "yyf/rng.hpp"
#include "yyf/rom_net.hpp"

namespace yyf {

/// Values of each time-variant feature of the model at t_start + m/M * dt,
/// m = 0..M, feature-major. Empty for time-invariant models.
Vec time_features(const StateSpaceModel& model, double t_start, double dt, int m_samples);
int time_feature_dim(const StateSpaceModel& model, int m_samples);

/// Projected snapshot pairs, one column per pair.
struct RomDataset {
  Mat alpha;     // K x n
  Mat features;  // F x n
  Mat beta;      // K x n
  std::vector<int> steps;

  Eigen::Index size() const { return alpha.cols(); }
};

/// Pair with step i covers [(i - 1) dt, i dt].
RomDataset build_rom_dataset(const std::vector<SnapshotPair>& pairs, const PcaBasis& basis,
                             const StateSpaceModel& model, double dt, int m_samples);

struct RomTrainConfig {
  int m_samples = 4;
  int epochs = 20000;
  int batch_size = 512;
  double learning_rate = 1e-3;
  int n_train = 3200;
  int n_test = 800;
  int n_blocks = 3;
  int width = 64;
  /// Record the test loss every this many epochs (and at the end).
  int test_every = 100;

  void validate() const;
};

struct RomTrainResult {
  RomNet net;
  double train_loss = 0.0;
  double test_loss = 0.0;
  std::vector<double> train_history;  // per epoch, mean over batches
  std::vector<std::pair<int, double>> test_history;
  std::vector<Eigen::Index> train_index;
  std::vector<Eigen::Index> test_index;
};

/// Glorot weights with every block's output projection zeroed, so the
/// untrained network is the identity map on alpha.
RomNet rom_identity_init(int coeff_dim, int feature_dim, RandomStream& rng, int n_blocks, int width);

/// Adam on minibatches of a random train/test split. Throws ConfigError when
/// the dataset is smaller than n_train + n_test and TrainingError on a
/// non-finite loss.
RomTrainResult train_rom(const RomDataset& data, const RomTrainConfig& cfg, RandomStream& rng,
                         const std::function<void(int, double)>& on_epoch = {});

Mat columns(const Mat& m, const std::vector<Eigen::Index>& idx);

struct RomBundleManifest {
  std::string model;
  int k = 0;
  int m_samples = 0;
  double dt = 0.0;
  std::string config_hash;
  double train_loss = 0.0;
  double test_loss = 0.0;
};

struct RomBundle {
  RomBundleManifest manifest;
  PcaBasis basis;
  RomNet net;
};

/// Directory with basis.pca, rom.net and manifest.json.
void write_rom_bundle(const RomBundle& bundle, const std::filesystem::path& dir);
RomBundle read_rom_bundle(const std::filesystem::path& dir);
/// Total size of the regular files in the bundle directory.
std::uintmax_t bundle_size_bytes(const std::filesystem::path& dir);

}  // namespace yyf
