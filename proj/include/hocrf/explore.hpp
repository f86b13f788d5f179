#pragma once

#include <vector>

#include "hocrf/crf.hpp"
#include "hocrf/env.hpp"

namespace hocrf {

// Guided-exploration scores shared by both trainers.
//   M1: fraction of the node's neighbors that are still unlabeled (0 if isolated)
//   M2: softmax over unlabeled nodes of the negative unary entropy
//   M3: 1 iff the label equals the majority label among labeled clique-mates
class ExplorationContext {
 public:
  explicit ExplorationContext(const CrfInstance& instance);

  double entropy(int node) const { return entropy_[node]; }

  double m1(const CrfInstance& instance, const EpisodeState& state, int node) const;
  // Denominator of M2 for the current state.
  double m2_normalizer(const EpisodeState& state) const;
  double m2(int node, double normalizer) const { return neg_entropy_exp_[node] / normalizer; }
  // Majority label among labeled clique-mates (lowest label on ties), or
  // kUnassigned when the node has no labeled clique-mate.
  Label m3_label(const CrfInstance& instance, const EpisodeState& state, int node) const;

 private:
  std::vector<double> entropy_;
  std::vector<double> neg_entropy_exp_;
};

struct ExplorationScores {
  std::vector<Action> actions;  // legal actions, ascending (node, label)
  std::vector<double> m1, m2, m3;
};

ExplorationScores exploration_scores(const CrfInstance& instance, const EpisodeState& state);

// Entropy of softmax(-unary) for one node.
double unary_entropy(const CrfInstance& instance, int node);

}  // namespace hocrf
