#include <benchmark/benchmark.h>

#include "consurv/losses.hpp"
#include "consurv/metrics.hpp"
#include "consurv/model.hpp"
#include "consurv/synth.hpp"

namespace {

using namespace consurv;
using ad::Matrix;

Matrix random_matrix(std::size_t r, std::size_t c, std::uint64_t seed) {
  Rng rng(seed);
  Matrix m(r, c);
  for (double& v : m.data()) v = 2.0 * uniform01(rng) - 1.0;
  return m;
}

void labels(std::size_t m, int t_max, std::vector<int>& tau, std::vector<int>& delta) {
  Rng rng(7);
  tau.resize(m);
  delta.resize(m);
  for (std::size_t i = 0; i < m; ++i) {
    tau[i] = static_cast<int>(uniform_index(rng, static_cast<std::size_t>(t_max) + 1));
    delta[i] = uniform01(rng) < 0.6 ? 1 : 0;
  }
}

void BM_SnceForwardBackward(benchmark::State& state) {
  const auto m = static_cast<std::size_t>(state.range(0));
  std::vector<int> tau;
  std::vector<int> delta;
  labels(m, 100, tau, delta);
  const auto w = losses::build_pair_weights(tau, delta, 0.75, 7.0);
  const Matrix e = random_matrix(2 * m, 32, 1);
  for (auto _ : state) {
    ad::Tape t;
    const auto z = t.variable(e);
    const auto loss = losses::snce_loss(z, w, 0.07);
    t.backward(loss);
    benchmark::DoNotOptimize(z.grad().data().data());
  }
}
BENCHMARK(BM_SnceForwardBackward)->Arg(32)->Arg(128)->Arg(256);

void BM_NllForwardBackward(benchmark::State& state) {
  const auto m = static_cast<std::size_t>(state.range(0));
  std::vector<int> tau;
  std::vector<int> delta;
  labels(m, 100, tau, delta);
  Matrix h = random_matrix(m, 101, 2);
  for (double& v : h.data()) v = 0.3 + 0.2 * v;
  for (auto _ : state) {
    ad::Tape t;
    const auto z = t.variable(h);
    t.backward(losses::nll_loss(z, tau, delta));
    benchmark::DoNotOptimize(z.grad().data().data());
  }
}
BENCHMARK(BM_NllForwardBackward)->Arg(32)->Arg(256);

void BM_ModelForward(benchmark::State& state) {
  model::ModelConfig c;
  c.input_dim = 20;
  c.hidden_dim = static_cast<std::size_t>(state.range(0));
  c.t_max = 100;
  const auto model = model::init(c, 1);
  const Matrix x = random_matrix(256, 20, 3);
  for (auto _ : state) benchmark::DoNotOptimize(model::predict_survival(model, x).data().data());
}
BENCHMARK(BM_ModelForward)->Arg(32)->Arg(64);

void BM_CIndexIntegrated(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  std::vector<int> tau;
  std::vector<int> delta;
  labels(n, 100, tau, delta);
  Matrix r = random_matrix(n, 101, 4);
  for (auto _ : state) benchmark::DoNotOptimize(metrics::c_index_integrated(r, tau, delta));
}
BENCHMARK(BM_CIndexIntegrated)->Arg(400)->Arg(2000);

void BM_Evaluate(benchmark::State& state) {
  synth::OracleConfig c;
  c.n_samples = static_cast<std::size_t>(state.range(0));
  c.t_max = 100;
  const auto oracle = synth::generate_oracle(c);
  const Matrix s = oracle.survival_matrix();
  for (auto _ : state) {
    benchmark::DoNotOptimize(metrics::evaluate(s, oracle.data.tau, oracle.data.delta).ibs);
  }
}
BENCHMARK(BM_Evaluate)->Arg(400)->Arg(2000);

}  // namespace

BENCHMARK_MAIN();
