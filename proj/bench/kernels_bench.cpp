// Serial reference kernels against their OpenMP counterparts.

#include <benchmark/benchmark.h>

#include "hocrf/baselines.hpp"
#include "hocrf/instances.hpp"
#include "hocrf/policy.hpp"

using namespace hocrf;

namespace {

Sample grid(int nodes) {
  InstanceSpec s;
  s.width = nodes % 10 == 0 ? 10 : nodes;
  s.height = nodes % 10 == 0 ? nodes / 10 : 1;
  s.num_hop2 = 1;
  s.seed = 1;
  return generate(s);
}

void forward_pass(benchmark::State& state, Execution exec) {
  const Sample smp = grid(static_cast<int>(state.range(0)));
  const PolicyParams params = PolicyParams::initialize({3, 32, 3, 6}, 1);
  const Labeling empty(smp.instance.num_nodes(), kUnassigned);
  for (auto _ : state) {
    ForwardCache c = exec == Execution::kSerial ? forward_serial(params, smp.instance, empty)
                                                : forward(params, smp.instance, empty, exec);
    benchmark::DoNotOptimize(c.scores.data());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

void brute_force(benchmark::State& state, Execution exec) {
  InstanceSpec s;
  s.width = static_cast<int>(state.range(0));
  s.height = 2;
  s.num_hop2 = 1;
  s.seed = 2;
  const Sample smp = generate(s);
  for (auto _ : state) benchmark::DoNotOptimize(brute_force_map(smp.instance, kBruteForceCap, exec).energy);
}

}  // namespace

BENCHMARK_CAPTURE(forward_pass, serial, Execution::kSerial)->Arg(100)->Arg(1000)->Arg(10000);
BENCHMARK_CAPTURE(forward_pass, parallel, Execution::kParallel)->Arg(100)->Arg(1000)->Arg(10000);
BENCHMARK_CAPTURE(brute_force, serial, Execution::kSerial)->Arg(4)->Arg(5);
BENCHMARK_CAPTURE(brute_force, parallel, Execution::kParallel)->Arg(4)->Arg(5);

BENCHMARK_MAIN();
