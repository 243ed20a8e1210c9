#include "yyf/dense_net.hpp"

#include <cassert>
#include <cmath>

#include <omp.h>

#include "yyf/errors.hpp"

namespace yyf {

// ---------------------------------------------------------------------------
// DenseNet

DenseNet::DenseNet(int input_dim, int hidden_layers, int width, Activation activation)
    : input_dim_(input_dim), hidden_layers_(hidden_layers), width_(width), activation_(activation) {
  if (input_dim < 1 || hidden_layers < 0 || (hidden_layers > 0 && width < 1)) {
    throw ConfigError("DenseNet: invalid architecture");
  }
  if (hidden_layers == 0) width_ = input_dim;
  std::size_t offset = 0;
  for (int l = 0; l < num_layers(); ++l) {
    offsets_.push_back(offset);
    offset += static_cast<std::size_t>(layer_out(l)) * (layer_in(l) + 1);
  }
  params_ = Vec::Zero(static_cast<Eigen::Index>(offset));
}

std::size_t DenseNet::param_count(int input_dim, int hidden_layers, int width) {
  if (hidden_layers == 0) return static_cast<std::size_t>(input_dim) + 1;
  const auto in = static_cast<std::size_t>(input_dim);
  const auto w = static_cast<std::size_t>(width);
  return w * (in + 1) + static_cast<std::size_t>(hidden_layers - 1) * w * (w + 1) + w + 1;
}

DenseNet DenseNet::glorot(int input_dim, int hidden_layers, int width, RandomStream& rng,
                          Activation activation) {
  DenseNet net(input_dim, hidden_layers, width, activation);
  for (int l = 0; l < net.num_layers(); ++l) {
    const double limit = std::sqrt(6.0 / (net.layer_in(l) + net.layer_out(l)));
    auto w = net.weight(l);
    for (Eigen::Index j = 0; j < w.cols(); ++j)
      for (Eigen::Index i = 0; i < w.rows(); ++i) w(i, j) = rng.uniform(-limit, limit);
  }
  return net;
}

Eigen::Map<const Mat> DenseNet::weight(int layer) const {
  return {params_.data() + weight_offset(layer), layer_out(layer), layer_in(layer)};
}
Eigen::Map<const Vec> DenseNet::bias(int layer) const {
  return {params_.data() + bias_offset(layer), layer_out(layer)};
}
Eigen::Map<Mat> DenseNet::weight(int layer) {
  return {params_.data() + weight_offset(layer), layer_out(layer), layer_in(layer)};
}
Eigen::Map<Vec> DenseNet::bias(int layer) {
  return {params_.data() + bias_offset(layer), layer_out(layer)};
}

// ---------------------------------------------------------------------------
// JetSpec

int JetSpec::channels(int input_dim) const {
  if (order == 0) return 1;
  return 1 + input_dim + second_dims * (second_dims + 1) / 2;
}

int JetSpec::second_channel(int input_dim, int i, int j) const {
  if (i > j) std::swap(i, j);
  // Pairs enumerated row by row: (0,0) (0,1) .. (0,s-1) (1,1) ..
  int idx = 0;
  for (int r = 0; r < i; ++r) idx += second_dims - r;
  return 1 + input_dim + idx + (j - i);
}

std::vector<std::pair<int, int>> JetSpec::pairs() const {
  std::vector<std::pair<int, int>> out;
  if (order < 2) return out;
  for (int i = 0; i < second_dims; ++i)
    for (int j = i; j < second_dims; ++j) out.emplace_back(i, j);
  return out;
}

namespace {

void check_inputs(const DenseNet& net, Eigen::Index rows, JetSpec spec) {
  if (rows != net.input_dim()) throw ConfigError("network input dimension mismatch");
  if (spec.order != 0 && spec.order != 2) throw ConfigError("jet order must be 0 or 2");
  if (spec.second_dims < 0 || spec.second_dims > net.input_dim()) {
    throw ConfigError("jet second_dims out of range");
  }
}

// tanh through exp, which Eigen vectorizes; saturates cleanly to +-1.
Eigen::ArrayXXd fast_tanh(const Eigen::ArrayXXd& a) {
  return 1.0 - 2.0 / ((2.0 * a).exp() + 1.0);
}

// Columns of channel c in a (rows x C*n) block matrix.
template <class M>
auto block(M& m, int c, Eigen::Index n) {
  return m.middleCols(c * n, n).array();
}

using Tape = JetKernel::Tape;

// ---------------------------------------------------------------------------
// Batched kernel

void chunk_forward(const DenseNet& net, const Mat& inputs, Eigen::Index start, Eigen::Index n,
                   JetSpec spec, Tape& tape) {
  const int in_dim = net.input_dim();
  const int channels = spec.channels(in_dim);
  const auto pairs = spec.pairs();
  const bool tanh_act = net.activation() == Activation::Tanh;
  tape.layer_inputs.resize(net.num_layers());
  tape.preacts.resize(net.hidden_layers());
  tape.activations.resize(net.hidden_layers());

  Mat& h0 = tape.layer_inputs[0];
  h0.resize(in_dim, channels * n);
  h0.setZero();
  h0.leftCols(n) = inputs.middleCols(start, n);
  if (spec.order > 0) {
    for (int k = 0; k < in_dim; ++k) h0.row(k).segment((1 + k) * n, n).setOnes();
  }

  for (int l = 0; l < net.hidden_layers(); ++l) {
    const Mat& h = tape.layer_inputs[l];
    Mat& a = tape.preacts[l];
    a.resize(net.layer_out(l), h.cols());
    a.noalias() = net.weight(l) * h;
    a.leftCols(n).colwise() += net.bias(l);
    Mat& next = tape.layer_inputs[l + 1];
    next.resize(a.rows(), a.cols());
    if (!tanh_act) {
      next = a;
      continue;
    }
    Eigen::ArrayXXd& t = tape.activations[l];
    t = fast_tanh(block(a, 0, n));
    block(next, 0, n) = t;
    if (spec.order > 0) {
      const Eigen::ArrayXXd s1 = 1.0 - t.square();
      const Eigen::ArrayXXd s2 = -2.0 * t * s1;
      for (int k = 0; k < in_dim; ++k) block(next, 1 + k, n) = s1 * block(a, 1 + k, n);
      for (const auto& [i, j] : pairs) {
        const int c = spec.second_channel(in_dim, i, j);
        block(next, c, n) = s2 * block(a, 1 + i, n) * block(a, 1 + j, n) + s1 * block(a, c, n);
      }
    }
  }
  const int last = net.hidden_layers();
  const Eigen::RowVectorXd out = net.weight(last) * tape.layer_inputs[last];
  tape.out.resize(channels, n);
  for (int c = 0; c < channels; ++c) tape.out.row(c) = out.segment(c * n, n);
  tape.out.row(0).array() += net.bias(last)[0];
}

// Adds the parameter gradient of sum(tape.gout .* tape.out) to `grad`.
void chunk_backward(const DenseNet& net, Eigen::Index n, JetSpec spec, Tape& tape, Vec& grad) {
  const int in_dim = net.input_dim();
  const int channels = spec.channels(in_dim);
  const auto pairs = spec.pairs();
  const bool tanh_act = net.activation() == Activation::Tanh;

  Eigen::RowVectorXd g(channels * n);
  for (int c = 0; c < channels; ++c) g.segment(c * n, n) = tape.gout.row(c);

  const int last = net.hidden_layers();
  Eigen::Map<Mat>(grad.data() + net.weight_offset(last), 1, net.layer_in(last)).noalias() +=
      g * tape.layer_inputs[last].transpose();
  grad[static_cast<Eigen::Index>(net.bias_offset(last))] += g.head(n).sum();
  Mat& gh = tape.gh;
  gh.resize(net.layer_in(last), g.cols());
  gh.noalias() = net.weight(last).transpose() * g;
  Mat& ga = tape.ga;

  for (int l = last - 1; l >= 0; --l) {
    const Mat& a = tape.preacts[l];
    ga.resize(a.rows(), a.cols());
    if (tanh_act) {
      const Eigen::ArrayXXd& t = tape.activations[l];
      const Eigen::ArrayXXd s1 = 1.0 - t.square();
      Eigen::ArrayXXd gs1 = Eigen::ArrayXXd::Zero(a.rows(), n);
      Eigen::ArrayXXd gs2 = Eigen::ArrayXXd::Zero(a.rows(), n);
      if (spec.order > 0) {
        const Eigen::ArrayXXd s2 = -2.0 * t * s1;
        for (int k = 0; k < in_dim; ++k) {
          block(ga, 1 + k, n) = s1 * block(gh, 1 + k, n);
          gs1 += block(gh, 1 + k, n) * block(a, 1 + k, n);
        }
        for (const auto& [i, j] : pairs) {
          const int c = spec.second_channel(in_dim, i, j);
          const auto gp = block(gh, c, n);
          block(ga, c, n) = s1 * gp;
          block(ga, 1 + i, n) += s2 * block(a, 1 + j, n) * gp;
          block(ga, 1 + j, n) += s2 * block(a, 1 + i, n) * gp;
          gs1 += gp * block(a, c, n);
          gs2 += gp * block(a, 1 + i, n) * block(a, 1 + j, n);
        }
      }
      block(ga, 0, n) = s1 * (block(gh, 0, n) - 2.0 * t * gs1 + (6.0 * t.square() - 2.0) * gs2);
    } else {
      ga = gh;
    }
    Eigen::Map<Mat>(grad.data() + net.weight_offset(l), net.layer_out(l), net.layer_in(l))
        .noalias() += ga * tape.layer_inputs[l].transpose();
    Eigen::Map<Vec>(grad.data() + net.bias_offset(l), net.layer_out(l)) +=
        ga.leftCols(n).rowwise().sum();
    if (l > 0) {
      gh.resize(net.layer_in(l), ga.cols());
      gh.noalias() = net.weight(l).transpose() * ga;
    }
  }
}

}  // namespace

const Mat& JetKernel::forward(const DenseNet& net, const Mat& inputs, JetSpec spec) {
  check_inputs(net, inputs.rows(), spec);
  const Eigen::Index points = inputs.cols();
  const Eigen::Index n_chunks = (points + kChunk - 1) / kChunk;
  tapes_.resize(static_cast<std::size_t>(std::max(1, omp_get_max_threads())));
  outputs_.resize(spec.channels(net.input_dim()), points);

#pragma omp parallel for schedule(static)
  for (Eigen::Index chunk = 0; chunk < n_chunks; ++chunk) {
    const Eigen::Index start = chunk * kChunk;
    const Eigen::Index n = std::min<Eigen::Index>(kChunk, points - start);
    Tape& tape = tapes_[static_cast<std::size_t>(omp_get_thread_num())];
    chunk_forward(net, inputs, start, n, spec, tape);
    outputs_.middleCols(start, n) = tape.out;
  }
  return outputs_;
}

LossAndGrad JetKernel::loss_and_grad(const DenseNet& net, const Mat& inputs, JetSpec spec,
                                     const JetLoss& loss) {
  check_inputs(net, inputs.rows(), spec);
  const Eigen::Index points = inputs.cols();
  const Eigen::Index n_chunks = (points + kChunk - 1) / kChunk;
  const auto np = net.params().size();
  tapes_.resize(static_cast<std::size_t>(std::max(1, omp_get_max_threads())));
  if (static_cast<Eigen::Index>(chunk_grads_.size()) < n_chunks) {
    chunk_grads_.resize(static_cast<std::size_t>(n_chunks));
  }
  chunk_loss_.assign(static_cast<std::size_t>(n_chunks), 0.0);

#pragma omp parallel for schedule(static)
  for (Eigen::Index chunk = 0; chunk < n_chunks; ++chunk) {
    const Eigen::Index start = chunk * kChunk;
    const Eigen::Index n = std::min<Eigen::Index>(kChunk, points - start);
    Tape& tape = tapes_[static_cast<std::size_t>(omp_get_thread_num())];
    chunk_forward(net, inputs, start, n, spec, tape);
    tape.gout.setZero(tape.out.rows(), n);
    chunk_loss_[static_cast<std::size_t>(chunk)] = loss(start, tape.out, tape.gout);
    Vec& grad = chunk_grads_[static_cast<std::size_t>(chunk)];
    grad.setZero(np);
    chunk_backward(net, n, spec, tape, grad);
  }

  LossAndGrad result;
  if (n_chunks == 0) {
    result.grad = Vec::Zero(np);
    return result;
  }
  // Fixed pairwise tree over chunk results.
  for (Eigen::Index stride = 1; stride < n_chunks; stride *= 2) {
    for (Eigen::Index i = 0; i + stride < n_chunks; i += 2 * stride) {
      chunk_grads_[static_cast<std::size_t>(i)] += chunk_grads_[static_cast<std::size_t>(i + stride)];
      chunk_loss_[static_cast<std::size_t>(i)] += chunk_loss_[static_cast<std::size_t>(i + stride)];
    }
  }
  result.loss = chunk_loss_.front();
  result.grad = chunk_grads_.front();
  return result;
}

Mat forward_jet(const DenseNet& net, const Mat& inputs, JetSpec spec) {
  JetKernel kernel;
  return kernel.forward(net, inputs, spec);
}

LossAndGrad grad_params(const DenseNet& net, const Mat& inputs, JetSpec spec,
                        const JetLoss& loss) {
  JetKernel kernel;
  return kernel.loss_and_grad(net, inputs, spec, loss);
}

double forward(const DenseNet& net, const Vec& input) {
  return forward_jet(net, input, JetSpec::value_only())(0, 0);
}

InputDerivatives input_derivatives(const DenseNet& net, const Vec& input) {
  const int in_dim = net.input_dim();
  const int d = in_dim - 1;
  if (d < 1) throw ConfigError("input_derivatives: network needs space and time inputs");
  const JetSpec spec = JetSpec::with_hessian(d);
  const Mat out = forward_jet(net, input, spec);
  InputDerivatives r;
  r.value = out(0, 0);
  r.du_dt = out(spec.first_channel(d), 0);
  r.du_dx.resize(d);
  r.d2u_dx2.resize(d, d);
  for (int i = 0; i < d; ++i) {
    r.du_dx[i] = out(spec.first_channel(i), 0);
    for (int j = 0; j < d; ++j) r.d2u_dx2(i, j) = out(spec.second_channel(in_dim, i, j), 0);
  }
  return r;
}

// ---------------------------------------------------------------------------
// Serial reference: plain loops, one point at a time.

namespace serial {

namespace {

struct PointTape {
  // [layer][channel][unit]
  std::vector<std::vector<std::vector<double>>> inputs;
  std::vector<std::vector<std::vector<double>>> preacts;
};

double act_value(Activation act, double a) { return act == Activation::Tanh ? std::tanh(a) : a; }

std::vector<double> point_forward(const DenseNet& net, const Vec& z, JetSpec spec, PointTape* tape) {
  const int in_dim = net.input_dim();
  const int channels = spec.channels(in_dim);
  const auto pairs = spec.pairs();
  std::vector<std::vector<double>> h(channels, std::vector<double>(in_dim, 0.0));
  for (int k = 0; k < in_dim; ++k) h[0][k] = z[k];
  if (spec.order > 0)
    for (int k = 0; k < in_dim; ++k) h[1 + k][k] = 1.0;

  for (int l = 0; l < net.num_layers(); ++l) {
    const auto w = net.weight(l);
    const auto b = net.bias(l);
    const int out = net.layer_out(l);
    const int in = net.layer_in(l);
    std::vector<std::vector<double>> a(channels, std::vector<double>(out, 0.0));
    for (int c = 0; c < channels; ++c)
      for (int o = 0; o < out; ++o) {
        double s = c == 0 ? b[o] : 0.0;
        for (int i = 0; i < in; ++i) s += w(o, i) * h[c][i];
        a[c][o] = s;
      }
    if (tape) tape->inputs.push_back(h);
    if (l == net.hidden_layers()) {
      std::vector<double> result(channels);
      for (int c = 0; c < channels; ++c) result[c] = a[c][0];
      return result;
    }
    if (tape) tape->preacts.push_back(a);
    std::vector<std::vector<double>> next(channels, std::vector<double>(out, 0.0));
    for (int o = 0; o < out; ++o) {
      const double t = act_value(net.activation(), a[0][o]);
      const bool is_tanh = net.activation() == Activation::Tanh;
      const double s1 = is_tanh ? 1.0 - t * t : 1.0;
      const double s2 = is_tanh ? -2.0 * t * s1 : 0.0;
      next[0][o] = t;
      if (spec.order > 0) {
        for (int k = 0; k < in_dim; ++k) next[1 + k][o] = s1 * a[1 + k][o];
        for (const auto& [i, j] : pairs) {
          const int c = spec.second_channel(in_dim, i, j);
          next[c][o] = s2 * a[1 + i][o] * a[1 + j][o] + s1 * a[c][o];
        }
      }
    }
    h = std::move(next);
  }
  return {};
}

void point_backward(const DenseNet& net, JetSpec spec, const PointTape& tape,
                    const std::vector<double>& g_out, Vec& grad) {
  const int in_dim = net.input_dim();
  const int channels = spec.channels(in_dim);
  const auto pairs = spec.pairs();
  const bool is_tanh = net.activation() == Activation::Tanh;

  std::vector<std::vector<double>> ga(channels, std::vector<double>(1));
  for (int c = 0; c < channels; ++c) ga[c][0] = g_out[c];

  for (int l = net.hidden_layers(); l >= 0; --l) {
    const auto w = net.weight(l);
    const int out = net.layer_out(l);
    const int in = net.layer_in(l);
    const auto& h = tape.inputs[l];
    for (int o = 0; o < out; ++o) {
      grad[static_cast<Eigen::Index>(net.bias_offset(l)) + o] += ga[0][o];
      for (int i = 0; i < in; ++i) {
        double s = 0.0;
        for (int c = 0; c < channels; ++c) s += ga[c][o] * h[c][i];
        grad[static_cast<Eigen::Index>(net.weight_offset(l)) + static_cast<Eigen::Index>(i) * out + o] += s;
      }
    }
    if (l == 0) break;
    std::vector<std::vector<double>> gh(channels, std::vector<double>(in, 0.0));
    for (int c = 0; c < channels; ++c)
      for (int i = 0; i < in; ++i)
        for (int o = 0; o < out; ++o) gh[c][i] += w(o, i) * ga[c][o];

    const auto& a = tape.preacts[l - 1];
    std::vector<std::vector<double>> next(channels, std::vector<double>(in, 0.0));
    for (int u = 0; u < in; ++u) {
      if (!is_tanh) {
        for (int c = 0; c < channels; ++c) next[c][u] = gh[c][u];
        continue;
      }
      const double t = std::tanh(a[0][u]);
      const double s1 = 1.0 - t * t;
      const double s2 = -2.0 * t * s1;
      double gs1 = 0.0, gs2 = 0.0;
      if (spec.order > 0) {
        for (int k = 0; k < in_dim; ++k) {
          next[1 + k][u] += s1 * gh[1 + k][u];
          gs1 += gh[1 + k][u] * a[1 + k][u];
        }
        for (const auto& [i, j] : pairs) {
          const int c = spec.second_channel(in_dim, i, j);
          next[c][u] = s1 * gh[c][u];
          next[1 + i][u] += s2 * a[1 + j][u] * gh[c][u];
          next[1 + j][u] += s2 * a[1 + i][u] * gh[c][u];
          gs1 += gh[c][u] * a[c][u];
          gs2 += gh[c][u] * a[1 + i][u] * a[1 + j][u];
        }
      }
      const double gt = gh[0][u] - 2.0 * t * gs1 + (6.0 * t * t - 2.0) * gs2;
      next[0][u] = s1 * gt;
    }
    ga = std::move(next);
  }
}

}  // namespace

Vec forward_jet_point(const DenseNet& net, const Vec& input, JetSpec spec) {
  check_inputs(net, input.size(), spec);
  const auto r = point_forward(net, input, spec, nullptr);
  return Eigen::Map<const Vec>(r.data(), static_cast<Eigen::Index>(r.size()));
}

Mat forward_jet(const DenseNet& net, const Mat& inputs, JetSpec spec) {
  check_inputs(net, inputs.rows(), spec);
  Mat out(spec.channels(net.input_dim()), inputs.cols());
  for (Eigen::Index p = 0; p < inputs.cols(); ++p)
    out.col(p) = forward_jet_point(net, inputs.col(p), spec);
  return out;
}

LossAndGrad grad_params(const DenseNet& net, const Mat& inputs, JetSpec spec,
                        const JetLoss& loss) {
  check_inputs(net, inputs.rows(), spec);
  const int channels = spec.channels(net.input_dim());
  std::vector<PointTape> tapes(static_cast<std::size_t>(inputs.cols()));
  Mat out(channels, inputs.cols());
  for (Eigen::Index p = 0; p < inputs.cols(); ++p) {
    const Vec z = inputs.col(p);
    const auto r = point_forward(net, z, spec, &tapes[static_cast<std::size_t>(p)]);
    for (int c = 0; c < channels; ++c) out(c, p) = r[c];
  }
  Mat g = Mat::Zero(channels, inputs.cols());
  LossAndGrad result;
  result.loss = loss(0, out, g);
  result.grad = Vec::Zero(net.params().size());
  for (Eigen::Index p = 0; p < inputs.cols(); ++p) {
    std::vector<double> gp(channels);
    for (int c = 0; c < channels; ++c) gp[c] = g(c, p);
    point_backward(net, spec, tapes[static_cast<std::size_t>(p)], gp, result.grad);
  }
  return result;
}

}  // namespace serial

}  // namespace yyf
