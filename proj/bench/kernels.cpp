// Serial reference kernels against their OpenMP counterparts.

#include <benchmark/benchmark.h>

#include "yyf/dense_net.hpp"
#include "yyf/grid.hpp"
#include "yyf/model.hpp"
#include "yyf/pinn.hpp"

using namespace yyf;

namespace {

DenseNet pinn_net() {
  RandomStream rng(1);
  return DenseNet::glorot(3, 4, 40, rng);
}

Mat points(int n) {
  RandomStream rng(2);
  Mat z(3, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    z(0, j) = rng.uniform(-2.2, 2.2);
    z(1, j) = rng.uniform(-2.2, 2.2);
    z(2, j) = rng.uniform(0.0, 0.01);
  }
  return z;
}

double square_loss(Eigen::Index, const Mat& out, Mat& grad) {
  grad = out;
  return 0.5 * out.squaredNorm();
}

void BM_JetForwardSerial(benchmark::State& state) {
  const DenseNet net = pinn_net();
  const Mat z = points(static_cast<int>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(serial::forward_jet(net, z, JetSpec::with_hessian(2)));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

void BM_JetForwardParallel(benchmark::State& state) {
  const DenseNet net = pinn_net();
  const Mat z = points(static_cast<int>(state.range(0)));
  JetKernel kernel;
  for (auto _ : state) benchmark::DoNotOptimize(kernel.forward(net, z, JetSpec::with_hessian(2)));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

void BM_JetGradSerial(benchmark::State& state) {
  const DenseNet net = pinn_net();
  const Mat z = points(static_cast<int>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(serial::grad_params(net, z, JetSpec::with_hessian(2), square_loss));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

void BM_JetGradParallel(benchmark::State& state) {
  const DenseNet net = pinn_net();
  const Mat z = points(static_cast<int>(state.range(0)));
  JetKernel kernel;
  for (auto _ : state) benchmark::DoNotOptimize(kernel.loss_and_grad(net, z, JetSpec::with_hessian(2), square_loss));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

void BM_NetOnGrid(benchmark::State& state) {
  const DenseNet net = pinn_net();
  const GridSpec grid = GridSpec::uniform(2, -2.2, 2.2, 50);
  for (auto _ : state) benchmark::DoNotOptimize(evaluate_net_on_grid(net, grid, 0.01));
}

void fd_step(benchmark::State& state, bool parallel) {
  const StateSpaceModel ex1 = make_example("example1");
  const DensityField u = standard_initial_density(GridSpec::uniform(2, -2.2, 2.2, static_cast<int>(state.range(0))));
  FdOptions opt;
  opt.parallel = parallel;
  for (auto _ : state) benchmark::DoNotOptimize(fd_fke_step(u, ex1, 0.0, 0.01, opt));
}

void BM_FdStepSerial(benchmark::State& state) { fd_step(state, false); }
void BM_FdStepParallel(benchmark::State& state) { fd_step(state, true); }

}  // namespace

BENCHMARK(BM_JetForwardSerial)->Arg(1000)->Arg(4000);
BENCHMARK(BM_JetForwardParallel)->Arg(1000)->Arg(4000);
BENCHMARK(BM_JetGradSerial)->Arg(1000)->Arg(4000);
BENCHMARK(BM_JetGradParallel)->Arg(1000)->Arg(4000);
BENCHMARK(BM_NetOnGrid);
BENCHMARK(BM_FdStepSerial)->Arg(50)->Arg(99)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_FdStepParallel)->Arg(50)->Arg(99)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
