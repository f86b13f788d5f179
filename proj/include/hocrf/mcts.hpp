#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <random>
#include <unordered_map>
#include <utility>
#include <vector>

#include "hocrf/env.hpp"
#include "hocrf/explore.hpp"
#include "hocrf/instances.hpp"
#include "hocrf/policy.hpp"
#include "hocrf/train.hpp"

namespace hocrf {

// Search-tree vertex for one partial labeling. Per-action statistics are dense
// over node * |L| + label; entries of labeled nodes stay zero.
struct TreeNode {
  bool expanded = false;
  int visits = 0;                    // N(s)
  std::vector<double> prior;         // pi_theta(a|s) over legal actions
  std::vector<int> action_visits;    // N(a|s)
  std::vector<double> action_total;  // W(s,a), cumulative backed-up return
  std::unordered_map<int, std::unique_ptr<TreeNode>> children;

  TreeNode* child(int action) const;
};

// PUCB score: W/N(a|s) (0 when unvisited) + prior * sqrt(N(s)) / (1 + N(a|s)).
double pucb(const TreeNode& node, int action);

// argmax over legal actions of pucb + M_j with j drawn uniformly from {1, 2, 3};
// ties go to the lowest (node, label). Throws ContractError if not expanded.
Action select_action_in_simulation(const TreeNode& node, const CrfInstance& instance,
                                   const EpisodeState& state, const ExplorationContext& ctx,
                                   std::mt19937_64& rng);

struct SearchConfig {
  int simulations = 50;
  int depth = 4;
  RewardScheme scheme = RewardScheme::kSign;
};

// One search tree rooted at the current episode state. The root advances with
// committed actions and keeps the matching subtree.
class Search {
 public:
  Search(const CrfInstance& instance, const PolicyParams& params, SearchConfig config);

  const EpisodeState& state() const { return state_; }
  const TreeNode& root() const { return *root_; }
  const SearchConfig& config() const { return config_; }

  // Descends up to `depth` selection steps from the root, expanding every
  // vertex it selects from, then adds to each traversed edge the sum of the
  // rewards from that edge to the end of the path.
  void run_simulation(std::mt19937_64& rng);
  void run(std::mt19937_64& rng) {
    for (int n = 0; n < config_.simulations; ++n) run_simulation(rng);
  }

  // N(a|root) / N(root) over legal actions in ascending (node, label) order.
  // Throws ContractError when the root has not been visited.
  std::vector<double> tree_policy() const;

  // Commits `action` at the root; its subtree becomes the new root.
  void advance(Action action);

 private:
  void expand(TreeNode& node, const EpisodeState& state);
  void sync_scorer(const EpisodeState& state);

  const CrfInstance* instance_;
  const PolicyParams* params_;
  SearchConfig config_;
  ExplorationContext ctx_;
  IncrementalScorer scorer_;
  std::vector<Action> scorer_extra_;  // assignments applied beyond the root
  EpisodeState state_;
  std::unique_ptr<TreeNode> root_;
};

// Sum over path edges of the return each received, i.e. sum_k (k + 1) * r_k for
// rewards r_0..r_{d-1}; equals the total W mass one simulation adds.
double backup_mass(const std::vector<double>& rewards);

struct MctsConfig {
  int rounds = 3;
  int embed_dim = 32;
  RewardScheme scheme = RewardScheme::kSign;
  int simulations = 50;
  int depth = 4;
  int infer_simulations = 20;
  int infer_depth = 4;
  int episodes_per_graph = 10;
  int batch_size = 64;
  std::size_t buffer_capacity = 100000;
  int updates_per_episode = 4;
  int epochs = 10;
  AdamConfig adam;
  std::uint64_t seed = 0;

  SearchConfig training_search() const { return {simulations, depth, scheme}; }
  SearchConfig inference_search() const { return {infer_simulations, infer_depth, scheme}; }
};

void validate(const MctsConfig& config);

// Replay entry: state as its assignment list plus the sparse visit distribution.
struct PolicySample {
  int instance = 0;
  std::vector<Action> state;
  std::vector<std::pair<int, double>> target;  // (action index, probability)
};

// Mean cross-entropy -sum_a pi_mcts(a) log softmax(scores)(a) over legal actions;
// accumulates its gradient into `grads`.
double policy_loss(const PolicyParams& params, const Dataset& dataset,
                   std::span<const PolicySample* const> batch, PolicyParams& grads);

TrainResult mcts_train(const Dataset& dataset, const MctsConfig& config, WarmStart warm = {},
                       const EpochCallback& on_epoch = {});

// Policy that runs the search before every move and commits argmax pi_mcts.
class MctsPolicy final : public Policy {
 public:
  MctsPolicy(const PolicyParams& params, SearchConfig config, std::uint64_t seed)
      : params_(&params), config_(config), rng_(seed) {}

  void begin(const CrfInstance& instance, const EpisodeState& state) override;
  Action choose(const CrfInstance& instance, const EpisodeState& state) override;
  void observe(const CrfInstance& instance, const EpisodeState& state, Action taken) override;
  // Per-node marginal of pi_mcts at the current root.
  std::vector<double> node_probabilities(const CrfInstance& instance,
                                         const EpisodeState& state) override;

 private:
  void ensure_searched();

  const PolicyParams* params_;
  SearchConfig config_;
  std::mt19937_64 rng_;
  std::unique_ptr<Search> search_;
  std::vector<double> pi_;
  bool searched_ = false;
};

Labeling mcts_infer(const CrfInstance& instance, const PolicyParams& params,
                    const MctsConfig& config);

}  // namespace hocrf
