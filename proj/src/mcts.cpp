#include "hocrf/mcts.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <tuple>

#include "hocrf/errors.hpp"
#include "hocrf/replay.hpp"

namespace hocrf {

TreeNode* TreeNode::child(int action) const {
  const auto it = children.find(action);
  return it == children.end() ? nullptr : it->second.get();
}

double pucb(const TreeNode& node, int action) {
  const int n = node.action_visits[action];
  const double mean = n > 0 ? node.action_total[action] / n : 0.0;
  return mean + node.prior[action] * std::sqrt(static_cast<double>(node.visits)) / (1.0 + n);
}

Action select_action_in_simulation(const TreeNode& node, const CrfInstance& instance,
                                   const EpisodeState& state, const ExplorationContext& ctx,
                                   std::mt19937_64& rng) {
  if (!node.expanded) throw ContractError("select_action_in_simulation: node not expanded");
  if (state.complete()) throw ContractError("select_action_in_simulation: terminal state");
  const int L = state.num_labels();
  std::uniform_int_distribution<int> pick(1, 3);
  const int j = pick(rng);
  const double z = j == 2 ? ctx.m2_normalizer(state) : 1.0;

  Action best{-1, 0};
  double best_score = -std::numeric_limits<double>::infinity();
  for (int i = 0; i < state.num_nodes(); ++i) {
    if (state.assigned(i)) continue;
    double node_bonus = 0.0;
    Label major = kUnassigned;
    if (j == 1) node_bonus = ctx.m1(instance, state, i);
    if (j == 2) node_bonus = ctx.m2(i, z);
    if (j == 3) major = ctx.m3_label(instance, state, i);
    for (Label y = 0; y < L; ++y) {
      const double bonus = j == 3 ? (y == major ? 1.0 : 0.0) : node_bonus;
      const double u = pucb(node, i * L + y) + bonus;
      if (best.node < 0 || u > best_score) {
        best = {i, y};
        best_score = u;
      }
    }
  }
  return best;
}

double backup_mass(const std::vector<double>& rewards) {
  double mass = 0.0;
  for (std::size_t k = 0; k < rewards.size(); ++k) mass += static_cast<double>(k + 1) * rewards[k];
  return mass;
}

Search::Search(const CrfInstance& instance, const PolicyParams& params, SearchConfig config)
    : instance_(&instance),
      params_(&params),
      config_(config),
      ctx_(instance),
      scorer_(params, instance),
      state_(instance),
      root_(std::make_unique<TreeNode>()) {
  if (config.simulations < 1 || config.depth < 1)
    throw ValidationError("search: simulations and depth must be >= 1");
  scorer_.reset(state_.labels());
}

void Search::sync_scorer(const EpisodeState& state) {
  const auto& order = state.order();
  const std::size_t base = state_.order().size();
  for (std::size_t k = base + scorer_extra_.size(); k < order.size(); ++k) {
    scorer_.assign(order[k].node, order[k].label);
    scorer_extra_.push_back(order[k]);
  }
}

void Search::expand(TreeNode& node, const EpisodeState& state) {
  sync_scorer(state);
  const int N = state.num_nodes(), L = state.num_labels();
  const auto scores = scorer_.scores();
  node.prior.assign(static_cast<std::size_t>(N) * L, 0.0);
  node.action_visits.assign(node.prior.size(), 0);
  node.action_total.assign(node.prior.size(), 0.0);
  double peak = -std::numeric_limits<double>::infinity();
  for (int i = 0; i < N; ++i)
    if (!state.assigned(i))
      for (Label y = 0; y < L; ++y) peak = std::max(peak, scores[i * L + y]);
  double z = 0.0;
  for (int i = 0; i < N; ++i)
    if (!state.assigned(i))
      for (Label y = 0; y < L; ++y) z += node.prior[i * L + y] = std::exp(scores[i * L + y] - peak);
  for (double& p : node.prior) p /= z;
  node.expanded = true;
}

void Search::run_simulation(std::mt19937_64& rng) {
  if (state_.complete()) return;
  EpisodeState s = state_;
  TreeNode* v = root_.get();
  std::vector<TreeNode*> path;
  std::vector<int> edges;
  std::vector<double> rewards;
  const int L = s.num_labels();

  for (int d = 0; d < config_.depth && !s.complete(); ++d) {
    if (!v->expanded) expand(*v, s);
    const Action a = select_action_in_simulation(*v, *instance_, s, ctx_, rng);
    rewards.push_back(apply_action(*instance_, s, a, config_.scheme));
    const int idx = action_index(a, L);
    path.push_back(v);
    edges.push_back(idx);
    auto& slot = v->children[idx];
    if (!slot) slot = std::make_unique<TreeNode>();
    v = slot.get();
  }

  double ret = 0.0;
  for (std::size_t k = path.size(); k-- > 0;) {
    ret += rewards[k];
    path[k]->visits += 1;
    path[k]->action_visits[edges[k]] += 1;
    path[k]->action_total[edges[k]] += ret;
  }

  while (!scorer_extra_.empty()) {
    scorer_.unassign(scorer_extra_.back().node);
    scorer_extra_.pop_back();
  }
}

std::vector<double> Search::tree_policy() const {
  if (root_->visits < 1) throw ContractError("tree_policy: root has not been visited");
  const int L = state_.num_labels();
  std::vector<double> pi;
  pi.reserve(static_cast<std::size_t>(state_.num_unassigned()) * L);
  const double n = root_->visits;
  for (int i = 0; i < state_.num_nodes(); ++i) {
    if (state_.assigned(i)) continue;
    for (Label y = 0; y < L; ++y) pi.push_back(root_->action_visits[i * L + y] / n);
  }
  return pi;
}

void Search::advance(Action action) {
  if (!is_legal(state_, action)) throw ContractError("search: illegal committed action");
  const int idx = action_index(action, state_.num_labels());
  std::unique_ptr<TreeNode> next;
  const auto it = root_->children.find(idx);
  if (it != root_->children.end()) next = std::move(it->second);
  if (!next) next = std::make_unique<TreeNode>();
  root_ = std::move(next);
  apply_action(*instance_, state_, action, config_.scheme);
  scorer_.assign(action.node, action.label);
}

// ---------------------------------------------------------------------------
// Training

void validate(const MctsConfig& c) {
  if (c.simulations < 1 || c.infer_simulations < 1)
    throw ValidationError("mcts: simulations must be >= 1");
  if (c.depth < 1 || c.infer_depth < 1) throw ValidationError("mcts: depth must be >= 1");
  if (c.episodes_per_graph < 1) throw ValidationError("mcts: episodes_per_graph must be >= 1");
  if (c.batch_size < 1) throw ValidationError("mcts: batch_size must be >= 1");
  if (c.buffer_capacity < 1) throw ValidationError("mcts: buffer_capacity must be >= 1");
  if (c.updates_per_episode < 0) throw ValidationError("mcts: updates_per_episode must be >= 0");
  if (c.epochs < 0) throw ValidationError("mcts: epochs must be >= 0");
  if (c.rounds < 1 || c.embed_dim < 1) throw ValidationError("mcts: network dimensions must be >= 1");
}

double policy_loss(const PolicyParams& params, const Dataset& dataset,
                   std::span<const PolicySample* const> batch, PolicyParams& grads) {
  const int B = static_cast<int>(batch.size());
  if (B == 0) return 0.0;
  const int L = params.shape.num_labels;
  std::vector<PolicyParams> parts(B, PolicyParams::zeros(params.shape));
  std::vector<double> losses(B, 0.0);

#pragma omp parallel for schedule(dynamic)
  for (int b = 0; b < B; ++b) {
    const PolicySample& sample = *batch[b];
    const CrfInstance& instance = dataset.samples[sample.instance].instance;
    const EpisodeState s = EpisodeState::replay(instance, sample.state);
    const ForwardCache cache = forward(params, instance, s.labels(), Execution::kSerial);
    double peak = -std::numeric_limits<double>::infinity();
    for (int i = 0; i < s.num_nodes(); ++i)
      if (!s.assigned(i))
        for (Label y = 0; y < L; ++y) peak = std::max(peak, cache.scores[i * L + y]);
    double z = 0.0;
    for (int i = 0; i < s.num_nodes(); ++i)
      if (!s.assigned(i))
        for (Label y = 0; y < L; ++y) z += std::exp(cache.scores[i * L + y] - peak);
    const double log_z = peak + std::log(z);

    std::vector<double> upstream(cache.scores.size(), 0.0);
    for (int i = 0; i < s.num_nodes(); ++i)
      if (!s.assigned(i))
        for (Label y = 0; y < L; ++y)
          upstream[i * L + y] = std::exp(cache.scores[i * L + y] - log_z) / B;
    for (const auto& [idx, p] : sample.target) {
      losses[b] -= p * (cache.scores[idx] - log_z);
      upstream[idx] -= p / B;
    }
    backward(params, instance, cache, upstream, parts[b]);
  }

  reduce_in_order(parts, grads);
  double loss = 0.0;
  for (double l : losses) loss += l;
  return loss / B;
}

namespace {

std::size_t sample_index(const std::vector<double>& pi, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double u = unit(rng);
  double acc = 0.0;
  std::size_t last = 0;
  for (std::size_t k = 0; k < pi.size(); ++k) {
    if (pi[k] <= 0.0) continue;
    acc += pi[k];
    last = k;
    if (u < acc) return k;
  }
  return last;
}

double entropy(const std::vector<double>& pi) {
  double h = 0.0;
  for (double p : pi)
    if (p > 0.0) h -= p * std::log(p);
  return h;
}

}  // namespace

TrainResult mcts_train(const Dataset& dataset, const MctsConfig& config, WarmStart warm,
                       const EpochCallback& on_epoch) {
  validate(config);
  const std::vector<int> indices = training_indices(dataset);
  const PolicyShape shape = network_shape(dataset, config.rounds, config.embed_dim);

  TrainResult result;
  if (warm.params != nullptr) {
    if (!(warm.params->shape == shape))
      throw ShapeError("mcts: warm-start parameters do not match the dataset");
    result.params = *warm.params;
  } else {
    result.params = PolicyParams::initialize(shape, config.seed);
  }
  result.optimizer = warm.optimizer != nullptr ? *warm.optimizer
                                               : OptimizerState::create(shape, config.adam);
  if (warm.optimizer != nullptr) result.optimizer.config = config.adam;
  PolicyParams& params = result.params;

  std::mt19937_64 rng(config.seed);
  ReplayBuffer<PolicySample> buffer(shape.num_labels, config.buffer_capacity);
  const int L = shape.num_labels;

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto started = std::chrono::steady_clock::now();
    std::vector<double> losses, entropies, energies, accuracies;
    std::vector<int> order = indices;
    std::shuffle(order.begin(), order.end(), rng);

    for (int k : order) {
      const Sample& sample = dataset.samples[k];
      const CrfInstance& instance = sample.instance;
      for (int e = 0; e < config.episodes_per_graph; ++e) {
        Search search(instance, params, config.training_search());
        while (!search.state().complete()) {
          search.run(rng);
          const std::vector<double> pi = search.tree_policy();
          entropies.push_back(entropy(pi));
          const std::vector<Action> legal = legal_actions(search.state());
          const Action a = legal[sample_index(pi, rng)];

          PolicySample ps{k, search.state().order(), {}};
          for (std::size_t m = 0; m < pi.size(); ++m)
            if (pi[m] > 0.0) ps.target.emplace_back(action_index(legal[m], L), pi[m]);
          const Chunk chunk = route_chunk(instance, search.state(), a, config.scheme);
          buffer.insert(std::move(ps), chunk, a.label);
          search.advance(a);
        }
        energies.push_back(search.state().energy());
        if (!sample.truth.empty())
          accuracies.push_back(score(search.state().labels(), sample.truth).accuracy);

        for (int u = 0; u < config.updates_per_episode; ++u) {
          if (buffer.size() < static_cast<std::size_t>(config.batch_size)) break;
          const auto batch = buffer.sample(config.batch_size, rng);
          PolicyParams grads = PolicyParams::zeros(shape);
          const double loss = policy_loss(params, dataset, batch, grads);
          if (!std::isfinite(loss)) throw TrainingError("mcts: non-finite loss");
          optimizer_step(result.optimizer, params, grads);
          losses.push_back(loss);
        }
      }
    }

    EpochLog row;
    row.epoch = epoch;
    row.updates = result.optimizer.step;
    std::tie(row.loss_mean, row.loss_var) = mean_var(losses);
    row.root_entropy = mean_var(entropies).first;
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

// ---------------------------------------------------------------------------
// Inference

void MctsPolicy::begin(const CrfInstance& instance, const EpisodeState& state) {
  if (state.num_assigned() != 0) throw ContractError("mcts policy must start from the empty state");
  check_compatible(params_->shape, instance);
  search_ = std::make_unique<Search>(instance, *params_, config_);
  searched_ = false;
}

void MctsPolicy::ensure_searched() {
  if (!search_) throw ContractError("mcts policy used before begin()");
  if (searched_) return;
  search_->run(rng_);
  pi_ = search_->tree_policy();
  searched_ = true;
}

Action MctsPolicy::choose(const CrfInstance&, const EpisodeState&) {
  ensure_searched();
  const std::size_t best =
      static_cast<std::size_t>(std::max_element(pi_.begin(), pi_.end()) - pi_.begin());
  return legal_actions(search_->state())[best];
}

void MctsPolicy::observe(const CrfInstance&, const EpisodeState&, Action taken) {
  search_->advance(taken);
  searched_ = false;
}

std::vector<double> MctsPolicy::node_probabilities(const CrfInstance&, const EpisodeState& state) {
  ensure_searched();
  std::vector<double> p(state.num_nodes(), 0.0);
  const auto legal = legal_actions(search_->state());
  for (std::size_t k = 0; k < legal.size(); ++k) p[legal[k].node] += pi_[k];
  return p;
}

Labeling mcts_infer(const CrfInstance& instance, const PolicyParams& params,
                    const MctsConfig& config) {
  MctsPolicy policy(params, config.inference_search(), config.seed);
  return rollout(instance, policy).labeling;
}

}  // namespace hocrf
