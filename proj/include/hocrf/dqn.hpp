#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "hocrf/env.hpp"
#include "hocrf/explore.hpp"
#include "hocrf/instances.hpp"
#include "hocrf/policy.hpp"
#include "hocrf/replay.hpp"
#include "hocrf/train.hpp"

namespace hocrf {

// s_t is stored as its assignment list; s_{t+1} is s_t followed by `action`.
struct Transition {
  int instance = 0;
  std::vector<Action> state;
  Action action;
  double reward = 0.0;
  bool terminal = false;  // s_{t+1} is complete
};

struct DqnConfig {
  int rounds = 3;
  int embed_dim = 32;
  RewardScheme scheme = RewardScheme::kSign;
  double gamma = 1.0;
  EpsilonSchedule epsilon;
  int batch_size = 64;
  std::size_t buffer_capacity = 100000;
  // 0 bootstraps targets from the current parameters; k > 0 refreshes a frozen
  // copy every k optimizer steps.
  int target_sync_interval = 0;
  int epochs = 10;
  int episodes_per_graph = 10;
  int train_every = 1;  // environment steps between optimizer steps
  AdamConfig adam;
  std::uint64_t seed = 0;
};

void validate(const DqnConfig& config);

enum class Branch { kGreedy, kAdjacent, kEntropy, kClique, kRandom };

struct TrainingChoice {
  Action action;
  Branch branch = Branch::kGreedy;
};

// With probability epsilon the greedy Q action; otherwise argmax M1, argmax M2,
// argmax M3 or a uniform legal action, each with probability (1-epsilon)/4.
// Ties inside an M branch go to the higher Q value, then the lowest (node, label).
TrainingChoice select_training_action(std::span<const double> q, const ExplorationContext& ctx,
                                      const CrfInstance& instance, const EpisodeState& state,
                                      double epsilon, std::mt19937_64& rng);
TrainingChoice select_training_action(const PolicyParams& params, const CrfInstance& instance,
                                      const EpisodeState& state, double epsilon,
                                      std::mt19937_64& rng);

// z = r for terminal transitions, r + gamma * max_a' Q(s_{t+1}, a') otherwise.
double q_target(const PolicyParams& params, const CrfInstance& instance,
                const Transition& transition, double gamma);

struct BatchLoss {
  double loss = 0.0;          // mean squared TD error
  std::vector<double> td;     // z - Q per sample
};

// Squared TD loss over a batch; accumulates d(loss)/d(params) into `grads`.
// Targets are evaluated with `target_params` and treated as constants.
BatchLoss td_loss(const PolicyParams& params, const PolicyParams& target_params,
                  const Dataset& dataset, std::span<const Transition* const> batch,
                  double gamma, PolicyParams& grads);

TrainResult train_dqn(const Dataset& dataset, const DqnConfig& config, WarmStart warm = {},
                      const EpochCallback& on_epoch = {});

}  // namespace hocrf
