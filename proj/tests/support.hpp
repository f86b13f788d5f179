#pragma once

// Test-only helpers: random instance builders and an energy oracle that works
// from the raw tables without touching CrfInstance's precomputed indices.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <vector>

#include "hocrf/crf.hpp"

namespace hocrf::testing {

inline double oracle_energy(const CrfData& d, const PotentialMask& mask, const Labeling& y) {
  double e = 0.0;
  for (int i = 0; i < d.num_nodes; ++i) e += d.unary[i * d.num_labels + y[i]];
  if (mask.pairwise)
    for (const Edge& edge : d.edges) {
      double g = 0.0;
      for (int k = 0; k < d.hypercolumn_dim; ++k)
        g += d.hypercolumns[edge.a * d.hypercolumn_dim + k] *
             d.hypercolumns[edge.b * d.hypercolumn_dim + k];
      if (y[edge.a] != y[edge.b] && std::abs(g) < d.beta_p) e += d.alpha_p;
    }
  if (mask.hop1)
    for (const Hop1Clique& c : d.hop1) {
      // Minimize out the binary validity variable explicitly.
      double z0 = 0.0, z1 = 0.0;
      for (int m : c.members) {
        if (y[m] == c.label) z0 += c.weight * c.confidence;
        else z1 += c.weight * c.confidence;
      }
      e += std::min(z0, z1);
    }
  if (mask.hop2)
    for (const Hop2Clique& c : d.hop2) {
      int count = 0;
      for (int m : c.members) count += y[m] == c.label;
      if (count * c.divisor < static_cast<double>(c.members.size())) e += c.penalty;
    }
  return e;
}

struct RandomShape {
  int nodes = 6;
  int labels = 3;
  double edge_prob = 0.4;
  int hop1 = 1;
  int hop2 = 1;
  int feature_dim = 4;
  int hypercolumn_dim = 3;
};

inline std::vector<int> random_subset(std::mt19937_64& rng, int n, int min_size) {
  std::vector<int> all(n);
  std::iota(all.begin(), all.end(), 0);
  std::shuffle(all.begin(), all.end(), rng);
  std::uniform_int_distribution<int> size(std::min(min_size, n), n);
  all.resize(size(rng));
  std::sort(all.begin(), all.end());
  return all;
}

inline void fill_tables(std::mt19937_64& rng, CrfData& d) {
  std::uniform_real_distribution<double> u(0.0, 3.0);
  std::normal_distribution<double> g(0.0, 0.7);
  d.unary.resize(static_cast<std::size_t>(d.num_nodes) * d.num_labels);
  for (double& v : d.unary) v = u(rng);
  d.node_features.resize(static_cast<std::size_t>(d.num_nodes) * d.feature_dim);
  for (double& v : d.node_features) v = g(rng);
  d.hypercolumns.resize(static_cast<std::size_t>(d.num_nodes) * d.hypercolumn_dim);
  for (double& v : d.hypercolumns) v = g(rng);
  d.alpha_p = std::uniform_real_distribution<double>(0.2, 2.0)(rng);
  d.beta_p = std::uniform_real_distribution<double>(0.2, 1.5)(rng);
}

inline CrfData random_data(std::mt19937_64& rng, const RandomShape& s) {
  CrfData d;
  d.num_nodes = s.nodes;
  d.num_labels = s.labels;
  d.feature_dim = s.feature_dim;
  d.hypercolumn_dim = s.hypercolumn_dim;
  std::bernoulli_distribution coin(s.edge_prob);
  for (int a = 0; a < s.nodes; ++a)
    for (int b = a + 1; b < s.nodes; ++b)
      if (coin(rng)) d.edges.push_back({a, b});
  fill_tables(rng, d);
  std::uniform_int_distribution<int> label(0, s.labels - 1);
  std::uniform_real_distribution<double> unit(0.05, 1.0);
  for (int c = 0; c < s.hop1; ++c)
    d.hop1.push_back({random_subset(rng, s.nodes, 1), label(rng), unit(rng), 2.0 * unit(rng)});
  for (int c = 0; c < s.hop2; ++c) {
    const double divisor = std::uniform_real_distribution<double>(1.5, 4.0)(rng);
    d.hop2.push_back({random_subset(rng, s.nodes, 1), label(rng), 3.0 * unit(rng), divisor});
  }
  return d;
}

// Pairwise edges plus HOP1 membership links form a single tree once every
// HOP1 clique is viewed as an extra vertex joined to its members.
inline CrfData random_tree_data(std::mt19937_64& rng, int nodes, int labels, int hop1) {
  CrfData d;
  d.num_nodes = nodes;
  d.num_labels = labels;
  d.feature_dim = 2;
  d.hypercolumn_dim = 3;
  fill_tables(rng, d);
  const int total = nodes + hop1;
  std::vector<int> order(total);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin() + 1, order.end(), rng);
  if (order[0] >= nodes) std::swap(order[0], *std::find_if(order.begin(), order.end(),
                                                          [&](int v) { return v < nodes; }));
  std::vector<std::vector<int>> members(hop1);
  std::vector<int> placed = {order[0]};
  for (int k = 1; k < total; ++k) {
    const int v = order[k];
    std::vector<int> choices;
    for (int p : placed)
      if (v < nodes || p < nodes) choices.push_back(p);
    const int parent = choices[std::uniform_int_distribution<int>(0, choices.size() - 1)(rng)];
    if (v < nodes && parent < nodes) d.edges.push_back({parent, v});
    else if (v >= nodes) members[v - nodes].push_back(parent);
    else members[parent - nodes].push_back(v);
    placed.push_back(v);
  }
  std::uniform_int_distribution<int> label(0, labels - 1);
  std::uniform_real_distribution<double> unit(0.05, 1.0);
  for (auto& m : members) {
    std::sort(m.begin(), m.end());
    d.hop1.push_back({m, label(rng), unit(rng), 2.0 * unit(rng)});
  }
  return d;
}

inline Labeling random_labeling(std::mt19937_64& rng, int nodes, int labels) {
  std::uniform_int_distribution<int> pick(0, labels - 1);
  Labeling y(nodes);
  for (Label& v : y) v = pick(rng);
  return y;
}

// Every labeling in lexicographic order.
template <typename F>
void for_each_labeling(int nodes, int labels, F&& f) {
  Labeling y(nodes, 0);
  while (true) {
    f(y);
    int i = nodes - 1;
    while (i >= 0 && ++y[i] == labels) y[i--] = 0;
    if (i < 0) return;
  }
}

}  // namespace hocrf::testing
