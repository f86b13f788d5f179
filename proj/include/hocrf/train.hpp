#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "hocrf/env.hpp"
#include "hocrf/instances.hpp"
#include "hocrf/policy.hpp"

namespace hocrf {

// Linear ramp from `start` to `end` over the first `ramp_fraction` of training,
// constant afterwards. Epsilon weights exploitation.
struct EpsilonSchedule {
  double start = 0.3;
  double end = 0.95;
  double ramp_fraction = 0.5;

  double at(double progress) const;
};

// One record per epoch, shared by both trainers.
struct EpochLog {
  int epoch = 0;
  std::int64_t updates = 0;    // cumulative optimizer steps
  double epsilon = 0.0;        // dqn only
  double loss_mean = 0.0;
  double loss_var = 0.0;
  double td_abs_mean = 0.0;    // dqn only
  double td_abs_max = 0.0;     // dqn only
  double root_entropy = 0.0;   // mcts only: mean entropy of the root visit distribution
  double episode_energy = 0.0;     // mean final energy of the epoch's training episodes
  double episode_accuracy = 0.0;   // against ground truth, where available
  double validation_energy = 0.0;  // greedy rollouts on the validation split
  double validation_accuracy = 0.0;
  double seconds = 0.0;
};

struct TrainResult {
  PolicyParams params;
  OptimizerState optimizer;
  std::vector<EpochLog> log;
};

// Starting point for a trainer: either fresh parameters or a resumed run.
struct WarmStart {
  const PolicyParams* params = nullptr;
  const OptimizerState* optimizer = nullptr;
};

using EpochCallback = std::function<void(const EpochLog&)>;

// Wall-clock time is kept out of the main log so identical runs produce
// identical files; write_epoch_timing emits it separately.
void write_epoch_log(std::ostream& out, const EpochLog& row, const std::string& trainer);
void write_epoch_timing(std::ostream& out, const EpochLog& row);

struct GreedySummary {
  double mean_energy = 0.0;
  double mean_accuracy = 0.0;
};

// Greedy network rollouts over the listed samples.
GreedySummary evaluate_greedy(const PolicyParams& params, const Dataset& dataset,
                              std::span<const int> indices);

// Training-set indices, or every sample when the split is empty.
std::vector<int> training_indices(const Dataset& dataset);

// Mean and population variance; zeros for an empty input.
std::pair<double, double> mean_var(std::span<const double> values);

PolicyShape network_shape(const Dataset& dataset, int rounds, int embed_dim);

// Per-sample gradients computed independently and summed in sample order, so
// the result does not depend on the thread count.
void reduce_in_order(std::vector<PolicyParams>& parts, PolicyParams& total);

}  // namespace hocrf
