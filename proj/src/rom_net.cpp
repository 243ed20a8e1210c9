#include "yyf/rom_net.hpp"

#include <cmath>

#include "yyf/errors.hpp"

namespace yyf {

RomNet::RomNet(int coeff_dim, int time_feature_dim, int n_blocks, int width)
    : coeff_dim_(coeff_dim), feature_dim_(time_feature_dim), n_blocks_(n_blocks), width_(width) {
  if (coeff_dim < 1 || time_feature_dim < 0 || n_blocks < 1 || width < 1) {
    throw ConfigError("RomNet: invalid architecture");
  }
  params_ = Vec::Zero(static_cast<Eigen::Index>(
      param_count(coeff_dim, time_feature_dim, n_blocks, width)));
}

std::size_t RomNet::param_count(int coeff_dim, int time_feature_dim, int n_blocks, int width) {
  const auto k = static_cast<std::size_t>(coeff_dim);
  const auto f = static_cast<std::size_t>(time_feature_dim);
  const auto w = static_cast<std::size_t>(width);
  const std::size_t per_block = w * (k + f + 1) + w * (w + 1) + k * (w + 1);
  return per_block * static_cast<std::size_t>(n_blocks);
}

RomNet RomNet::glorot(int coeff_dim, int time_feature_dim, RandomStream& rng, int n_blocks,
                      int width) {
  RomNet net(coeff_dim, time_feature_dim, n_blocks, width);
  for (int b = 0; b < n_blocks; ++b)
    for (int l = 0; l <= kBlockLayers; ++l) {
      auto w = net.weight(b, l);
      const double limit = std::sqrt(6.0 / static_cast<double>(w.rows() + w.cols()));
      for (Eigen::Index j = 0; j < w.cols(); ++j)
        for (Eigen::Index i = 0; i < w.rows(); ++i) w(i, j) = rng.uniform(-limit, limit);
    }
  return net;
}

std::size_t RomNet::offset(int b, int layer) const {
  const std::size_t per_block =
      param_count(coeff_dim_, feature_dim_, 1, width_);
  std::size_t off = per_block * static_cast<std::size_t>(b);
  for (int l = 0; l < layer; ++l)
    off += static_cast<std::size_t>(layer_out(l)) * (layer_in(l) + 1);
  return off;
}

Eigen::Map<const Mat> RomNet::weight(int b, int layer) const {
  return {params_.data() + offset(b, layer), layer_out(layer), layer_in(layer)};
}
Eigen::Map<const Vec> RomNet::bias(int b, int layer) const {
  return {params_.data() + offset(b, layer) +
              static_cast<std::size_t>(layer_out(layer)) * layer_in(layer),
          layer_out(layer)};
}
Eigen::Map<Mat> RomNet::weight(int b, int layer) {
  return {params_.data() + offset(b, layer), layer_out(layer), layer_in(layer)};
}
Eigen::Map<Vec> RomNet::bias(int b, int layer) {
  return {params_.data() + offset(b, layer) +
              static_cast<std::size_t>(layer_out(layer)) * layer_in(layer),
          layer_out(layer)};
}

namespace {

struct BlockTape {
  Mat x;   // [z; tau]
  Mat h1;
  Mat h2;
};

Mat run_forward(const RomNet& net, const Mat& alpha, const Mat& features,
                std::vector<BlockTape>* tapes) {
  const int k = net.coeff_dim();
  const int f = net.time_feature_dim();
  if (alpha.rows() != k) throw ConfigError("rom_forward: coefficient dimension mismatch");
  if (features.rows() != f || (f > 0 && features.cols() != alpha.cols())) {
    throw ConfigError("rom_forward: time feature dimension mismatch");
  }
  Mat z = alpha;
  const Eigen::Index n = alpha.cols();
  for (int b = 0; b < net.n_blocks(); ++b) {
    BlockTape tape;
    tape.x.resize(k + f, n);
    tape.x.topRows(k) = z;
    if (f > 0) tape.x.bottomRows(f) = features;
    tape.h1 = ((net.weight(b, 0) * tape.x).colwise() + net.bias(b, 0)).array().tanh();
    tape.h2 = ((net.weight(b, 1) * tape.h1).colwise() + net.bias(b, 1)).array().tanh();
    z += (net.weight(b, 2) * tape.h2).colwise() + net.bias(b, 2);
    if (tapes) tapes->push_back(std::move(tape));
  }
  return z;
}

}  // namespace

Vec rom_forward(const RomNet& net, const Vec& alpha, const Vec& time_features) {
  return run_forward(net, alpha, time_features, nullptr).col(0);
}

Mat rom_forward(const RomNet& net, const Mat& alpha, const Mat& features) {
  return run_forward(net, alpha, features, nullptr);
}

LossAndGrad rom_mse_grad(const RomNet& net, const Mat& alpha, const Mat& features,
                         const Mat& beta) {
  std::vector<BlockTape> tapes;
  const Mat pred = run_forward(net, alpha, features, &tapes);
  if (beta.rows() != pred.rows() || beta.cols() != pred.cols()) {
    throw ConfigError("rom_mse_grad: target shape mismatch");
  }
  const double scale = 1.0 / static_cast<double>(net.coeff_dim() * std::max<Eigen::Index>(1, alpha.cols()));
  const Mat diff = pred - beta;
  LossAndGrad out;
  out.loss = diff.squaredNorm() * scale;
  out.grad = Vec::Zero(net.params().size());

  const int k = net.coeff_dim();
  Mat gz = 2.0 * scale * diff;
  RomNet grad_view(net.coeff_dim(), net.time_feature_dim(), net.n_blocks(), net.width());
  for (int b = net.n_blocks() - 1; b >= 0; --b) {
    const BlockTape& t = tapes[static_cast<std::size_t>(b)];
    grad_view.weight(b, 2) += gz * t.h2.transpose();
    grad_view.bias(b, 2) += gz.rowwise().sum();
    const Mat ga2 = ((net.weight(b, 2).transpose() * gz).array() * (1.0 - t.h2.array().square())).matrix();
    grad_view.weight(b, 1) += ga2 * t.h1.transpose();
    grad_view.bias(b, 1) += ga2.rowwise().sum();
    const Mat ga1 = ((net.weight(b, 1).transpose() * ga2).array() * (1.0 - t.h1.array().square())).matrix();
    grad_view.weight(b, 0) += ga1 * t.x.transpose();
    grad_view.bias(b, 0) += ga1.rowwise().sum();
    gz += (net.weight(b, 0).transpose() * ga1).topRows(k);
  }
  out.grad = std::move(grad_view.params());
  return out;
}

}  // namespace yyf
