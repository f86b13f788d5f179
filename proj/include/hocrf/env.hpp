#pragma once

#include <iosfwd>
#include <span>
#include <vector>

#include "hocrf/crf.hpp"

namespace hocrf {

struct Action {
  int node = 0;
  Label label = 0;
  bool operator==(const Action&) const = default;
  auto operator<=>(const Action&) const = default;
};

enum class RewardScheme {
  kEnergyDelta = 1,  // r_t = E_{t-1} - E_t
  kSign = 2,         // +1 iff the chosen label strictly minimizes E_t, else -1
};

RewardScheme reward_scheme_from_int(int scheme);

// Partial labeling built in selection order, with the running energy of every
// grounded term and per-clique label tallies for incremental updates.
class EpisodeState {
 public:
  EpisodeState() = default;
  explicit EpisodeState(const CrfInstance& instance);

  // Replays `order` from the empty state. Throws ContractError on illegal moves.
  static EpisodeState replay(const CrfInstance& instance, std::span<const Action> order);

  int num_nodes() const { return static_cast<int>(labels_.size()); }
  int num_labels() const { return num_labels_; }
  int num_assigned() const { return static_cast<int>(order_.size()); }
  int num_unassigned() const { return num_nodes() - num_assigned(); }
  bool complete() const { return num_assigned() == num_nodes(); }
  bool assigned(int node) const { return labels_[node] != kUnassigned; }

  const std::vector<Action>& order() const { return order_; }
  const Labeling& labels() const { return labels_; }
  double energy() const { return energy_; }

  int hop1_assigned(int c) const { return hop1_assigned_[c]; }
  int hop1_count(int c, Label y) const { return hop1_hist_[c * num_labels_ + y]; }
  int hop2_assigned(int c) const { return hop2_assigned_[c]; }
  int hop2_count(int c, Label y) const { return hop2_hist_[c * num_labels_ + y]; }

  // Energy added by grounding `node` with `label` (unary, edges to labeled
  // neighbors, cliques this assignment completes). State is not modified.
  double energy_delta(const CrfInstance& instance, int node, Label label) const;

  // Unchecked in-place transition; callers validate legality first.
  void assign(const CrfInstance& instance, Action action, double delta);

 private:
  int num_labels_ = 0;
  std::vector<Action> order_;
  Labeling labels_;
  double energy_ = 0.0;
  std::vector<int> hop1_assigned_, hop1_hist_;
  std::vector<int> hop2_assigned_, hop2_hist_;
};

bool is_legal(const EpisodeState& state, Action action);

// Every (unlabeled node, label) pair in ascending (node, label) order.
std::vector<Action> legal_actions(const EpisodeState& state);

inline int action_index(Action a, int num_labels) { return a.node * num_labels + a.label; }

// Reward for taking `action` in `state` under `scheme`, without transitioning.
double action_reward(const CrfInstance& instance, const EpisodeState& state, Action action,
                     RewardScheme scheme);

// In-place transition; returns the reward. Throws ContractError if illegal.
double apply_action(const CrfInstance& instance, EpisodeState& state, Action action,
                    RewardScheme scheme);

struct StepResult {
  EpisodeState state;
  double reward = 0.0;
};

StepResult step(const CrfInstance& instance, const EpisodeState& state, Action action,
                RewardScheme scheme);

// Sequential labeling policy driven by rollout(). `begin` is called on the empty
// state, `observe` after each committed action so implementations can keep
// incremental caches.
class Policy {
 public:
  virtual ~Policy() = default;
  virtual void begin(const CrfInstance& instance, const EpisodeState& state) = 0;
  virtual Action choose(const CrfInstance& instance, const EpisodeState& state) = 0;
  virtual void observe(const CrfInstance& /*instance*/, const EpisodeState& /*state*/,
                       Action /*taken*/) {}
  // Selection probability per node (zero for labeled nodes), for traces.
  virtual std::vector<double> node_probabilities(const CrfInstance& instance,
                                                 const EpisodeState& state);
};

// Labels the lowest-index unlabeled node with its unary argmin.
class UnaryArgminPolicy final : public Policy {
 public:
  void begin(const CrfInstance&, const EpisodeState&) override {}
  Action choose(const CrfInstance& instance, const EpisodeState& state) override;
};

struct TraceStep {
  int t = 0;  // 1-based
  Action action;
  double reward = 0.0;
  double energy = 0.0;
  std::vector<double> node_probability;
};

struct RolloutResult {
  Labeling labeling;
  double energy = 0.0;
  std::vector<TraceStep> trace;  // empty unless requested
};

// Runs exactly N steps of the policy (inference procedure) from the empty state.
RolloutResult rollout(const CrfInstance& instance, Policy& policy, bool record_trace = false,
                      RewardScheme scheme = RewardScheme::kEnergyDelta);

// One JSON object per line: {"t", "node", "label", "reward", "energy", "node_probability"}.
void write_trace(std::ostream& out, const std::vector<TraceStep>& trace);
std::vector<TraceStep> read_trace(std::istream& in);

}  // namespace hocrf
