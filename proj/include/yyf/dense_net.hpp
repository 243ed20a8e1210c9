#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include "yyf/linalg.hpp"
#include "yyf/rng.hpp"

namespace yyf {

enum class Activation { Tanh, Identity };

/// Fully connected scalar-output network: `hidden_layers` layers of `width`
/// units with a shared activation, followed by a linear output unit.
///
/// Parameters live in one flat vector, layer by layer; each layer stores its
/// weight matrix column-major (out x in) followed by its bias.
class DenseNet {
 public:
  DenseNet() = default;
  DenseNet(int input_dim, int hidden_layers, int width, Activation activation = Activation::Tanh);

  /// Glorot-uniform weights, zero biases.
  static DenseNet glorot(int input_dim, int hidden_layers, int width, RandomStream& rng,
                         Activation activation = Activation::Tanh);

  static std::size_t param_count(int input_dim, int hidden_layers, int width);

  int input_dim() const { return input_dim_; }
  int hidden_layers() const { return hidden_layers_; }
  int width() const { return width_; }
  Activation activation() const { return activation_; }
  int num_layers() const { return hidden_layers_ + 1; }
  int layer_in(int layer) const { return layer == 0 ? input_dim_ : width_; }
  int layer_out(int layer) const { return layer == hidden_layers_ ? 1 : width_; }

  Vec& params() { return params_; }
  const Vec& params() const { return params_; }

  Eigen::Map<const Mat> weight(int layer) const;
  Eigen::Map<const Vec> bias(int layer) const;
  Eigen::Map<Mat> weight(int layer);
  Eigen::Map<Vec> bias(int layer);
  /// Offset of a layer's weight block in the flat parameter vector.
  std::size_t weight_offset(int layer) const { return offsets_[layer]; }
  std::size_t bias_offset(int layer) const {
    return offsets_[layer] + static_cast<std::size_t>(layer_out(layer)) * layer_in(layer);
  }

  bool same_shape(const DenseNet& other) const {
    return input_dim_ == other.input_dim_ && hidden_layers_ == other.hidden_layers_ &&
           width_ == other.width_ && activation_ == other.activation_;
  }

 private:
  int input_dim_ = 0;
  int hidden_layers_ = 0;
  int width_ = 0;
  Activation activation_ = Activation::Tanh;
  std::vector<std::size_t> offsets_;
  Vec params_;
};

/// Which derivatives of the network output to carry alongside its value.
///
/// Order 0 carries the value only. Order 2 carries the value, first
/// derivatives along every input coordinate and second derivatives for each
/// pair (i <= j) among the first `second_dims` inputs.
struct JetSpec {
  int order = 0;
  int second_dims = 0;

  static JetSpec value_only() { return {0, 0}; }
  static JetSpec with_hessian(int second_dims) { return {2, second_dims}; }

  int channels(int input_dim) const;
  int first_channel(int k) const { return 1 + k; }
  /// Channel of d^2 / dx_i dx_j, i <= j < second_dims.
  int second_channel(int input_dim, int i, int j) const;
  /// Pairs (i, j) in channel order.
  std::vector<std::pair<int, int>> pairs() const;
};

/// Input derivatives of a network whose last input coordinate is time.
struct InputDerivatives {
  double value = 0.0;
  double du_dt = 0.0;
  Vec du_dx;
  Mat d2u_dx2;
};

double forward(const DenseNet& net, const Vec& input);

/// Exact first and second derivatives with respect to the inputs, computed by
/// forward propagation of second-order jets.
InputDerivatives input_derivatives(const DenseNet& net, const Vec& input);

/// Loss over a contiguous slice of points. `outputs` holds the jet outputs
/// (channels x n) of points [first, first + n). The callback writes
/// dloss/doutputs into `grad` (same shape, zeroed) and returns the slice's
/// contribution; the total loss is the sum over slices, so the loss must be
/// separable over points.
using JetLoss = std::function<double(Eigen::Index first, const Mat& outputs, Mat& grad)>;

struct LossAndGrad {
  double loss = 0.0;
  Vec grad;
};

/// Batched jet evaluation. Inputs are (input_dim x points), processed in
/// fixed-size chunks in parallel. For gradients each chunk runs forward, loss
/// and backward while its tape is still in cache. Chunk results are combined
/// with a fixed-shape tree, so results do not depend on the thread count.
class JetKernel {
 public:
  static constexpr int kChunk = 32;

  /// Outputs (channels x points).
  const Mat& forward(const DenseNet& net, const Mat& inputs, JetSpec spec);
  LossAndGrad loss_and_grad(const DenseNet& net, const Mat& inputs, JetSpec spec,
                            const JetLoss& loss);

  /// Per-thread scratch.
  struct Tape {
    std::vector<Mat> layer_inputs;             // per layer: in x (C * n)
    std::vector<Mat> preacts;                  // per hidden layer: width x (C * n)
    std::vector<Eigen::ArrayXXd> activations;  // per hidden layer: tanh of value channel
    Mat out, gout, ga, gh;
  };

 private:
  std::vector<Tape> tapes_;  // one per thread
  std::vector<Vec> chunk_grads_;
  std::vector<double> chunk_loss_;
  Mat outputs_;
};

/// Batched outputs only.
Mat forward_jet(const DenseNet& net, const Mat& inputs, JetSpec spec);

/// Reverse-mode gradient of a loss defined on jet outputs at `inputs`.
LossAndGrad grad_params(const DenseNet& net, const Mat& inputs, JetSpec spec,
                        const JetLoss& loss);

namespace serial {

/// Point-at-a-time reference of forward_jet, kept for testing the batched kernel.
Vec forward_jet_point(const DenseNet& net, const Vec& input, JetSpec spec);
Mat forward_jet(const DenseNet& net, const Mat& inputs, JetSpec spec);
LossAndGrad grad_params(const DenseNet& net, const Mat& inputs, JetSpec spec,
                        const JetLoss& loss);

}  // namespace serial

}  // namespace yyf
