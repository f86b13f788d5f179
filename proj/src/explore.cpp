#include "hocrf/explore.hpp"

#include <algorithm>
#include <cmath>

namespace hocrf {

double unary_entropy(const CrfInstance& instance, int node) {
  const auto f = instance.unary(node);
  const double low = *std::min_element(f.begin(), f.end());
  double z = 0.0;
  for (double v : f) z += std::exp(low - v);
  double h = 0.0;
  for (double v : f) {
    const double p = std::exp(low - v) / z;
    if (p > 0.0) h -= p * std::log(p);
  }
  return h;
}

ExplorationContext::ExplorationContext(const CrfInstance& instance)
    : entropy_(instance.num_nodes()), neg_entropy_exp_(instance.num_nodes()) {
  for (int i = 0; i < instance.num_nodes(); ++i) {
    entropy_[i] = unary_entropy(instance, i);
    neg_entropy_exp_[i] = std::exp(-entropy_[i]);
  }
}

double ExplorationContext::m1(const CrfInstance& instance, const EpisodeState& state,
                              int node) const {
  const auto nbrs = instance.neighbors(node);
  if (nbrs.empty()) return 0.0;
  int open = 0;
  for (int j : nbrs) open += state.assigned(j) ? 0 : 1;
  return static_cast<double>(open) / static_cast<double>(nbrs.size());
}

double ExplorationContext::m2_normalizer(const EpisodeState& state) const {
  double z = 0.0;
  for (int i = 0; i < state.num_nodes(); ++i)
    if (!state.assigned(i)) z += neg_entropy_exp_[i];
  return z;
}

Label ExplorationContext::m3_label(const CrfInstance& instance, const EpisodeState& state,
                                   int node) const {
  const int L = state.num_labels();
  std::vector<int> counts(L, 0);
  int total = 0;
  for (int c : instance.hop1_of(node))
    for (Label y = 0; y < L; ++y) {
      counts[y] += state.hop1_count(c, y);
      total += state.hop1_count(c, y);
    }
  for (int c : instance.hop2_of(node))
    for (Label y = 0; y < L; ++y) {
      counts[y] += state.hop2_count(c, y);
      total += state.hop2_count(c, y);
    }
  if (total == 0) return kUnassigned;
  return static_cast<Label>(std::max_element(counts.begin(), counts.end()) - counts.begin());
}

ExplorationScores exploration_scores(const CrfInstance& instance, const EpisodeState& state) {
  const ExplorationContext ctx(instance);
  ExplorationScores out;
  out.actions = legal_actions(state);
  const double z = ctx.m2_normalizer(state);
  int cached_node = -1;
  double m1 = 0.0, m2 = 0.0;
  Label major = kUnassigned;
  for (const Action& a : out.actions) {
    if (a.node != cached_node) {
      cached_node = a.node;
      m1 = ctx.m1(instance, state, a.node);
      m2 = ctx.m2(a.node, z);
      major = ctx.m3_label(instance, state, a.node);
    }
    out.m1.push_back(m1);
    out.m2.push_back(m2);
    out.m3.push_back(a.label == major ? 1.0 : 0.0);
  }
  return out;
}

}  // namespace hocrf
