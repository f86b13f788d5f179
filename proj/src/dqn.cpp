#include "hocrf/dqn.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>
#include <tuple>

#include "hocrf/errors.hpp"

namespace hocrf {

void validate(const DqnConfig& c) {
  if (!(c.gamma >= 0.0 && c.gamma <= 1.0)) throw ValidationError("dqn: gamma must be in [0, 1]");
  for (double e : {c.epsilon.start, c.epsilon.end})
    if (!(e >= 0.0 && e <= 1.0)) throw ValidationError("dqn: epsilon must be in [0, 1]");
  if (c.epsilon.ramp_fraction < 0.0) throw ValidationError("dqn: epsilon ramp must be >= 0");
  if (c.batch_size < 1) throw ValidationError("dqn: batch_size must be >= 1");
  if (c.buffer_capacity < 1) throw ValidationError("dqn: buffer_capacity must be >= 1");
  if (c.target_sync_interval < 0) throw ValidationError("dqn: target_sync_interval must be >= 0");
  if (c.epochs < 0) throw ValidationError("dqn: epochs must be >= 0");
  if (c.episodes_per_graph < 1) throw ValidationError("dqn: episodes_per_graph must be >= 1");
  if (c.train_every < 1) throw ValidationError("dqn: train_every must be >= 1");
  if (c.rounds < 1 || c.embed_dim < 1) throw ValidationError("dqn: network dimensions must be >= 1");
}

namespace {

// Lexicographic argmax of (primary, q) over legal actions; the first
// maximizer in (node, label) order wins.
template <typename Primary>
Action argmax_with_q(const EpisodeState& state, std::span<const double> q, Primary primary) {
  const int L = state.num_labels();
  Action best{-1, 0};
  double best_p = -std::numeric_limits<double>::infinity();
  double best_q = -std::numeric_limits<double>::infinity();
  for (int i = 0; i < state.num_nodes(); ++i) {
    if (state.assigned(i)) continue;
    for (Label y = 0; y < L; ++y) {
      const double p = primary(i, y);
      const double v = q[static_cast<std::size_t>(i) * L + y];
      if (best.node < 0 || p > best_p || (p == best_p && v > best_q)) {
        best = {i, y};
        best_p = p;
        best_q = v;
      }
    }
  }
  return best;
}

}  // namespace

TrainingChoice select_training_action(std::span<const double> q, const ExplorationContext& ctx,
                                      const CrfInstance& instance, const EpisodeState& state,
                                      double epsilon, std::mt19937_64& rng) {
  if (state.complete()) throw ContractError("select_training_action: terminal state");
  const int L = state.num_labels();
  const int legal = state.num_unassigned() * L;
  if (legal == 1) {
    for (int i = 0; i < state.num_nodes(); ++i)
      if (!state.assigned(i)) return {{i, 0}, Branch::kGreedy};
  }

  std::uniform_real_distribution<double> unit(0.0, 1.0);
  if (unit(rng) < epsilon)
    return {argmax_with_q(state, q, [](int, Label) { return 0.0; }), Branch::kGreedy};

  std::uniform_int_distribution<int> pick_branch(0, 3);
  switch (pick_branch(rng)) {
    case 0:
      return {argmax_with_q(state, q,
                            [&](int i, Label) { return ctx.m1(instance, state, i); }),
              Branch::kAdjacent};
    case 1: {
      const double z = ctx.m2_normalizer(state);
      return {argmax_with_q(state, q, [&](int i, Label) { return ctx.m2(i, z); }),
              Branch::kEntropy};
    }
    case 2: {
      std::vector<Label> major(state.num_nodes(), kUnassigned);
      for (int i = 0; i < state.num_nodes(); ++i)
        if (!state.assigned(i)) major[i] = ctx.m3_label(instance, state, i);
      return {argmax_with_q(state, q,
                            [&](int i, Label y) { return major[i] == y ? 1.0 : 0.0; }),
              Branch::kClique};
    }
    default: {
      std::uniform_int_distribution<int> pick(0, legal - 1);
      int k = pick(rng);
      for (int i = 0; i < state.num_nodes(); ++i) {
        if (state.assigned(i)) continue;
        if (k < L) return {{i, k}, Branch::kRandom};
        k -= L;
      }
      throw ContractError("select_training_action: random branch out of range");
    }
  }
}

TrainingChoice select_training_action(const PolicyParams& params, const CrfInstance& instance,
                                      const EpisodeState& state, double epsilon,
                                      std::mt19937_64& rng) {
  const ForwardCache cache = forward(params, instance, state.labels());
  const ExplorationContext ctx(instance);
  return select_training_action(cache.scores, ctx, instance, state, epsilon, rng);
}

double q_target(const PolicyParams& params, const CrfInstance& instance,
                const Transition& transition, double gamma) {
  if (transition.terminal || gamma == 0.0) return transition.reward;
  std::vector<Action> next = transition.state;
  next.push_back(transition.action);
  const EpisodeState s = EpisodeState::replay(instance, next);
  const ForwardCache cache = forward(params, instance, s.labels(), Execution::kSerial);
  const double best = cache.score(argmax_action(cache, s));
  return transition.reward + gamma * best;
}

BatchLoss td_loss(const PolicyParams& params, const PolicyParams& target_params,
                  const Dataset& dataset, std::span<const Transition* const> batch, double gamma,
                  PolicyParams& grads) {
  const int B = static_cast<int>(batch.size());
  BatchLoss out;
  out.td.assign(B, 0.0);
  if (B == 0) return out;
  std::vector<PolicyParams> parts(B, PolicyParams::zeros(params.shape));

#pragma omp parallel for schedule(dynamic)
  for (int b = 0; b < B; ++b) {
    const Transition& tr = *batch[b];
    const CrfInstance& instance = dataset.samples[tr.instance].instance;
    const EpisodeState s = EpisodeState::replay(instance, tr.state);
    const ForwardCache cache = forward(params, instance, s.labels(), Execution::kSerial);
    const double z = q_target(target_params, instance, tr, gamma);
    const double td = z - cache.score(tr.action);
    out.td[b] = td;
    std::vector<double> upstream(cache.scores.size(), 0.0);
    upstream[action_index(tr.action, params.shape.num_labels)] = -2.0 * td / B;
    backward(params, instance, cache, upstream, parts[b]);
  }

  reduce_in_order(parts, grads);
  for (double td : out.td) out.loss += td * td;
  out.loss /= B;
  return out;
}

TrainResult train_dqn(const Dataset& dataset, const DqnConfig& config, WarmStart warm,
                      const EpochCallback& on_epoch) {
  validate(config);
  const std::vector<int> indices = training_indices(dataset);
  const PolicyShape shape = network_shape(dataset, config.rounds, config.embed_dim);

  TrainResult result;
  if (warm.params != nullptr) {
    if (!(warm.params->shape == shape))
      throw ShapeError("dqn: warm-start parameters do not match the dataset");
    result.params = *warm.params;
  } else {
    result.params = PolicyParams::initialize(shape, config.seed);
  }
  result.optimizer = warm.optimizer != nullptr ? *warm.optimizer
                                               : OptimizerState::create(shape, config.adam);
  if (warm.optimizer != nullptr) result.optimizer.config = config.adam;
  PolicyParams& params = result.params;

  std::mt19937_64 rng(config.seed);
  ReplayBuffer<Transition> buffer(shape.num_labels, config.buffer_capacity);
  PolicyParams target = params;
  const bool frozen = config.target_sync_interval > 0;

  std::vector<ExplorationContext> contexts;
  contexts.reserve(dataset.size());
  for (const Sample& s : dataset.samples) contexts.emplace_back(s.instance);

  const double total_episodes = static_cast<double>(config.epochs) * indices.size() *
                                config.episodes_per_graph;
  std::int64_t episodes_done = 0;
  std::int64_t env_steps = 0;
  std::int64_t updates = 0;

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto started = std::chrono::steady_clock::now();
    std::vector<double> losses, td_abs, energies, accuracies;
    std::vector<int> order = indices;
    std::shuffle(order.begin(), order.end(), rng);
    double epsilon = config.epsilon.at(episodes_done / std::max(1.0, total_episodes));

    for (int k : order) {
      const Sample& sample = dataset.samples[k];
      const CrfInstance& instance = sample.instance;
      for (int e = 0; e < config.episodes_per_graph; ++e) {
        epsilon = config.epsilon.at(episodes_done / std::max(1.0, total_episodes));
        EpisodeState state(instance);
        while (!state.complete()) {
          const ForwardCache cache = forward(params, instance, state.labels());
          const TrainingChoice choice =
              select_training_action(cache.scores, contexts[k], instance, state, epsilon, rng);
          const Chunk chunk = route_chunk(instance, state, choice.action, config.scheme);
          Transition tr{k, state.order(), choice.action, 0.0, false};
          tr.reward = apply_action(instance, state, choice.action, config.scheme);
          tr.terminal = state.complete();
          buffer.insert(std::move(tr), chunk, choice.action.label);

          ++env_steps;
          if (env_steps % config.train_every != 0 ||
              buffer.size() < static_cast<std::size_t>(config.batch_size))
            continue;
          const auto batch = buffer.sample(config.batch_size, rng);
          PolicyParams grads = PolicyParams::zeros(shape);
          const BatchLoss bl =
              td_loss(params, frozen ? target : params, dataset, batch, config.gamma, grads);
          if (!std::isfinite(bl.loss)) throw TrainingError("dqn: non-finite loss");
          optimizer_step(result.optimizer, params, grads);
          ++updates;
          if (frozen && updates % config.target_sync_interval == 0) target = params;
          losses.push_back(bl.loss);
          for (double td : bl.td) td_abs.push_back(std::abs(td));
        }
        ++episodes_done;
        energies.push_back(state.energy());
        if (!sample.truth.empty()) accuracies.push_back(score(state.labels(), sample.truth).accuracy);
      }
    }

    EpochLog row;
    row.epoch = epoch;
    row.updates = result.optimizer.step;
    row.epsilon = epsilon;
    std::tie(row.loss_mean, row.loss_var) = mean_var(losses);
    row.td_abs_mean = mean_var(td_abs).first;
    row.td_abs_max = td_abs.empty() ? 0.0 : *std::max_element(td_abs.begin(), td_abs.end());
    row.episode_energy = mean_var(energies).first;
    row.episode_accuracy = mean_var(accuracies).first;
    const GreedySummary val = evaluate_greedy(params, dataset, dataset.validation);
    row.validation_energy = val.mean_energy;
    row.validation_accuracy = val.mean_accuracy;
    row.seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    result.log.push_back(row);
    if (on_epoch) on_epoch(row);
  }
  return result;
}

}  // namespace hocrf
