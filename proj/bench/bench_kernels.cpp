// SPDX-License-Identifier: Apache-2.0
//
// Serial and OpenMP versions of the two per-update kernels, timed on the toy
// linear-Gaussian chain. Arg 0 is the number of trajectories.
#include <benchmark/benchmark.h>

#include <vector>

#include "redloop/ddpo.hpp"
#include "redloop/toy.hpp"

namespace {

using redloop::Rng;
using redloop::ddpo::ContextId;
using redloop::ddpo::DenoisingTrajectory;
using redloop::toy::LinearGaussianPolicy;

LinearGaussianPolicy make_policy() {
  LinearGaussianPolicy p(2, 5, 0.3, 10.0);
  Rng rng(1);
  std::vector<double> theta(p.parameter_count());
  for (double& v : theta) v = 0.01 * rng.normal();
  p.set_parameters(theta);
  return p;
}

const std::vector<ContextId> kContexts = {0, 1, 2, 3};

template <auto Collect>
void collect(benchmark::State& state) {
  const auto policy = make_policy();
  const auto n = static_cast<std::size_t>(state.range(0));
  Rng rng(7);
  for (auto _ : state) benchmark::DoNotOptimize(Collect(policy, kContexts, 5, n, rng));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

template <auto Gradient>
void gradient(benchmark::State& state) {
  const auto policy = make_policy();
  Rng rng(7);
  auto trajs = redloop::ddpo::collect_trajectories_serial(policy, kContexts, 5,
                                                          static_cast<std::size_t>(state.range(0)), rng);
  for (std::size_t i = 0; i < trajs.size(); ++i) trajs[i].terminal_reward = 0.5 + 0.001 * static_cast<double>(i);
  auto moved = policy;
  std::vector<double> theta(policy.parameters().begin(), policy.parameters().end());
  for (double& v : theta) v += 1e-3;
  moved.set_parameters(theta);
  for (auto _ : state) benchmark::DoNotOptimize(Gradient(trajs, moved, {}));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

}  // namespace

BENCHMARK(collect<redloop::ddpo::collect_trajectories_serial>)->Name("collect_trajectories/serial")->Range(24, 6144);
BENCHMARK(collect<redloop::ddpo::collect_trajectories>)->Name("collect_trajectories/openmp")->Range(24, 6144);
BENCHMARK(gradient<redloop::ddpo::importance_weighted_gradient_serial>)
    ->Name("importance_weighted_gradient/serial")
    ->Range(24, 6144);
BENCHMARK(gradient<redloop::ddpo::importance_weighted_gradient>)
    ->Name("importance_weighted_gradient/openmp")
    ->Range(24, 6144);

BENCHMARK_MAIN();
