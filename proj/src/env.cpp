#include "hocrf/env.hpp"

#include <istream>
#include <nlohmann/json.hpp>
#include <ostream>
#include <string>

#include "hocrf/errors.hpp"

namespace hocrf {

RewardScheme reward_scheme_from_int(int scheme) {
  if (scheme == 1) return RewardScheme::kEnergyDelta;
  if (scheme == 2) return RewardScheme::kSign;
  throw ValidationError("reward scheme must be 1 or 2, got " + std::to_string(scheme));
}

EpisodeState::EpisodeState(const CrfInstance& instance)
    : num_labels_(instance.num_labels()),
      labels_(instance.num_nodes(), kUnassigned),
      hop1_assigned_(instance.hop1().size(), 0),
      hop1_hist_(instance.hop1().size() * instance.num_labels(), 0),
      hop2_assigned_(instance.hop2().size(), 0),
      hop2_hist_(instance.hop2().size() * instance.num_labels(), 0) {
  order_.reserve(instance.num_nodes());
}

EpisodeState EpisodeState::replay(const CrfInstance& instance, std::span<const Action> order) {
  EpisodeState state(instance);
  for (const Action& a : order) {
    if (!is_legal(state, a)) throw ContractError("replay: illegal action in assignment list");
    state.assign(instance, a, state.energy_delta(instance, a.node, a.label));
  }
  return state;
}

double EpisodeState::energy_delta(const CrfInstance& instance, int node, Label label) const {
  double delta = instance.unary(node)[label];
  const PotentialMask& mask = instance.mask();
  if (mask.pairwise) {
    const auto nbrs = instance.neighbors(node);
    for (int s = 0; s < static_cast<int>(nbrs.size()); ++s) {
      const Label other = labels_[nbrs[s]];
      if (other != kUnassigned && other != label) delta += instance.gate_penalty_at(node, s);
    }
  }
  if (mask.hop1) {
    for (int c : instance.hop1_of(node)) {
      const Hop1Clique& clique = instance.hop1()[c];
      if (hop1_assigned_[c] + 1 != static_cast<int>(clique.members.size())) continue;
      const int matching = hop1_count(c, clique.label) + (label == clique.label ? 1 : 0);
      delta += hop1_energy_from_count(clique, matching);
    }
  }
  if (mask.hop2) {
    for (int c : instance.hop2_of(node)) {
      const Hop2Clique& clique = instance.hop2()[c];
      if (hop2_assigned_[c] + 1 != static_cast<int>(clique.members.size())) continue;
      const int matching = hop2_count(c, clique.label) + (label == clique.label ? 1 : 0);
      delta += hop2_energy_from_count(clique, matching);
    }
  }
  return delta;
}

void EpisodeState::assign(const CrfInstance& instance, Action action, double delta) {
  labels_[action.node] = action.label;
  order_.push_back(action);
  energy_ += delta;
  for (int c : instance.hop1_of(action.node)) {
    ++hop1_assigned_[c];
    ++hop1_hist_[c * num_labels_ + action.label];
  }
  for (int c : instance.hop2_of(action.node)) {
    ++hop2_assigned_[c];
    ++hop2_hist_[c * num_labels_ + action.label];
  }
}

bool is_legal(const EpisodeState& state, Action action) {
  return action.node >= 0 && action.node < state.num_nodes() && action.label >= 0 &&
         action.label < state.num_labels() && !state.assigned(action.node);
}

std::vector<Action> legal_actions(const EpisodeState& state) {
  std::vector<Action> actions;
  actions.reserve(static_cast<std::size_t>(state.num_unassigned()) * state.num_labels());
  for (int i = 0; i < state.num_nodes(); ++i) {
    if (state.assigned(i)) continue;
    for (Label y = 0; y < state.num_labels(); ++y) actions.push_back({i, y});
  }
  return actions;
}

namespace {

double sign_reward(const CrfInstance& instance, const EpisodeState& state, Action action,
                   double chosen_delta) {
  for (Label y = 0; y < state.num_labels(); ++y) {
    if (y == action.label) continue;
    if (!(chosen_delta < state.energy_delta(instance, action.node, y))) return -1.0;
  }
  return 1.0;
}

}  // namespace

double action_reward(const CrfInstance& instance, const EpisodeState& state, Action action,
                     RewardScheme scheme) {
  if (!is_legal(state, action)) throw ContractError("action_reward: illegal action");
  const double delta = state.energy_delta(instance, action.node, action.label);
  if (scheme == RewardScheme::kEnergyDelta) return -delta;
  return sign_reward(instance, state, action, delta);
}

double apply_action(const CrfInstance& instance, EpisodeState& state, Action action,
                    RewardScheme scheme) {
  if (!is_legal(state, action)) throw ContractError("step: illegal action");
  const double delta = state.energy_delta(instance, action.node, action.label);
  const double reward = scheme == RewardScheme::kEnergyDelta
                            ? -delta
                            : sign_reward(instance, state, action, delta);
  state.assign(instance, action, delta);
  return reward;
}

StepResult step(const CrfInstance& instance, const EpisodeState& state, Action action,
                RewardScheme scheme) {
  StepResult result{state, 0.0};
  result.reward = apply_action(instance, result.state, action, scheme);
  return result;
}

std::vector<double> Policy::node_probabilities(const CrfInstance&, const EpisodeState& state) {
  std::vector<double> p(state.num_nodes(), 0.0);
  const double u = state.num_unassigned() > 0 ? 1.0 / state.num_unassigned() : 0.0;
  for (int i = 0; i < state.num_nodes(); ++i)
    if (!state.assigned(i)) p[i] = u;
  return p;
}

Action UnaryArgminPolicy::choose(const CrfInstance& instance, const EpisodeState& state) {
  for (int i = 0; i < state.num_nodes(); ++i)
    if (!state.assigned(i)) return {i, instance.unary_argmin(i)};
  throw ContractError("choose called on a complete state");
}

RolloutResult rollout(const CrfInstance& instance, Policy& policy, bool record_trace,
                      RewardScheme scheme) {
  EpisodeState state(instance);
  policy.begin(instance, state);
  RolloutResult result;
  for (int t = 1; t <= instance.num_nodes(); ++t) {
    TraceStep row;
    if (record_trace) row.node_probability = policy.node_probabilities(instance, state);
    const Action a = policy.choose(instance, state);
    const double reward = apply_action(instance, state, a, scheme);
    policy.observe(instance, state, a);
    if (record_trace) {
      row.t = t;
      row.action = a;
      row.reward = reward;
      row.energy = state.energy();
      result.trace.push_back(std::move(row));
    }
  }
  result.labeling = state.labels();
  result.energy = state.energy();
  return result;
}

void write_trace(std::ostream& out, const std::vector<TraceStep>& trace) {
  for (const TraceStep& s : trace) {
    nlohmann::json j = {{"t", s.t},
                        {"node", s.action.node},
                        {"label", s.action.label},
                        {"reward", s.reward},
                        {"energy", s.energy},
                        {"node_probability", s.node_probability}};
    out << j.dump() << '\n';
  }
}

std::vector<TraceStep> read_trace(std::istream& in) {
  std::vector<TraceStep> trace;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(lineno, "<record>", e.what());
    }
    TraceStep s;
    try {
      s.t = j.at("t").get<int>();
      s.action.node = j.at("node").get<int>();
      s.action.label = j.at("label").get<int>();
      s.reward = j.at("reward").get<double>();
      s.energy = j.at("energy").get<double>();
      s.node_probability = j.at("node_probability").get<std::vector<double>>();
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(lineno, "trace", e.what());
    }
    trace.push_back(std::move(s));
  }
  return trace;
}

}  // namespace hocrf
