#pragma once

#include <cstddef>

#include "yyf/dense_net.hpp"
#include "yyf/linalg.hpp"
#include "yyf/rng.hpp"

namespace yyf {

/// Residual coefficient predictor. Each block maps [z; tau] through two
/// tanh layers and a linear projection back to K outputs, which are added to
/// z. Time features tau are fed to every block.
class RomNet {
 public:
  static constexpr int kBlockLayers = 2;

  RomNet() = default;
  RomNet(int coeff_dim, int time_feature_dim, int n_blocks = 3, int width = 64);

  static RomNet glorot(int coeff_dim, int time_feature_dim, RandomStream& rng, int n_blocks = 3,
                       int width = 64);

  int coeff_dim() const { return coeff_dim_; }
  int time_feature_dim() const { return feature_dim_; }
  int n_blocks() const { return n_blocks_; }
  int width() const { return width_; }
  std::size_t param_count() const { return static_cast<std::size_t>(params_.size()); }
  static std::size_t param_count(int coeff_dim, int time_feature_dim, int n_blocks, int width);

  Vec& params() { return params_; }
  const Vec& params() const { return params_; }

  /// Layer `layer` (0..2) of block `b`: weight (out x in) and bias.
  Eigen::Map<const Mat> weight(int b, int layer) const;
  Eigen::Map<const Vec> bias(int b, int layer) const;
  Eigen::Map<Mat> weight(int b, int layer);
  Eigen::Map<Vec> bias(int b, int layer);

  int layer_in(int layer) const { return layer == 0 ? coeff_dim_ + feature_dim_ : width_; }
  int layer_out(int layer) const { return layer == kBlockLayers ? coeff_dim_ : width_; }

  bool same_shape(const RomNet& o) const {
    return coeff_dim_ == o.coeff_dim_ && feature_dim_ == o.feature_dim_ &&
           n_blocks_ == o.n_blocks_ && width_ == o.width_;
  }

 private:
  std::size_t offset(int b, int layer) const;

  int coeff_dim_ = 0;
  int feature_dim_ = 0;
  int n_blocks_ = 0;
  int width_ = 0;
  Vec params_;
};

/// beta_hat = alpha + learned residual. Throws ConfigError on dimension mismatch.
Vec rom_forward(const RomNet& net, const Vec& alpha, const Vec& time_features);

/// Batched: alpha (K x n), features (F x n).
Mat rom_forward(const RomNet& net, const Mat& alpha, const Mat& features);

/// Mean over columns of |beta_hat - beta|^2 / K, with its parameter gradient.
LossAndGrad rom_mse_grad(const RomNet& net, const Mat& alpha, const Mat& features,
                         const Mat& beta);

}  // namespace yyf
