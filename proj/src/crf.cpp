#include "hocrf/crf.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <utility>

#include "hocrf/errors.hpp"

namespace hocrf {

PotentialMask PotentialMask::from_name(const std::string& name) {
  if (name == "U") return {false, false, false};
  if (name == "U+P") return {true, false, false};
  if (name == "U+P+HOP1") return {true, true, false};
  if (name == "U+P+HOP1+HOP2") return {true, true, true};
  throw ValidationError("unknown potential combination '" + name + "'");
}

std::string PotentialMask::name() const {
  std::string out = "U";
  if (pairwise) out += "+P";
  if (hop1) out += "+HOP1";
  if (hop2) out += "+HOP2";
  return out;
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) s += a[k] * b[k];
  return s;
}

namespace {

void check_members(const std::vector<int>& members, int n, const std::string& what) {
  if (members.empty()) throw ValidationError(what + ": empty member set");
  std::set<int> seen;
  for (int m : members) {
    if (m < 0 || m >= n) throw ValidationError(what + ": member index out of range");
    if (!seen.insert(m).second) throw ValidationError(what + ": duplicate member");
  }
}

// CSR adjacency with neighbors sorted ascending.
std::pair<std::vector<int>, std::vector<int>> build_adjacency(const CrfData& d) {
  std::vector<std::vector<int>> adj(d.num_nodes);
  for (const Edge& e : d.edges) {
    adj[e.a].push_back(e.b);
    adj[e.b].push_back(e.a);
  }
  std::vector<int> offsets(d.num_nodes + 1, 0);
  std::vector<int> targets;
  for (int i = 0; i < d.num_nodes; ++i) {
    std::sort(adj[i].begin(), adj[i].end());
    offsets[i + 1] = offsets[i] + static_cast<int>(adj[i].size());
    targets.insert(targets.end(), adj[i].begin(), adj[i].end());
  }
  return {std::move(offsets), std::move(targets)};
}

template <typename Clique>
void build_membership(const std::vector<Clique>& cliques, int n, std::vector<int>& offsets,
                      std::vector<int>& index) {
  std::vector<std::vector<int>> lists(n);
  for (int c = 0; c < static_cast<int>(cliques.size()); ++c)
    for (int m : cliques[c].members) lists[m].push_back(c);
  offsets.assign(n + 1, 0);
  index.clear();
  for (int i = 0; i < n; ++i) {
    offsets[i + 1] = offsets[i] + static_cast<int>(lists[i].size());
    index.insert(index.end(), lists[i].begin(), lists[i].end());
  }
}

}  // namespace

void validate(const CrfData& d) {
  if (d.num_nodes < 1) throw ValidationError("num_nodes must be >= 1");
  if (d.num_labels < 1) throw ValidationError("num_labels must be >= 1");
  if (d.feature_dim < 0 || d.hypercolumn_dim < 0) throw ValidationError("negative dimension");
  const auto n = static_cast<std::size_t>(d.num_nodes);
  if (d.unary.size() != n * d.num_labels) throw ValidationError("unary table is not N x |L|");
  if (d.node_features.size() != n * d.feature_dim)
    throw ValidationError("node feature table is not N x F");
  if (d.hypercolumns.size() != n * d.hypercolumn_dim)
    throw ValidationError("hypercolumn table is not N x G");
  for (double v : d.unary)
    if (!std::isfinite(v)) throw ValidationError("non-finite unary entry");
  for (double v : d.node_features)
    if (!std::isfinite(v)) throw ValidationError("non-finite node feature");
  for (double v : d.hypercolumns)
    if (!std::isfinite(v)) throw ValidationError("non-finite hypercolumn entry");
  if (!std::isfinite(d.alpha_p) || !std::isfinite(d.beta_p))
    throw ValidationError("non-finite pairwise gate parameter");

  std::set<std::pair<int, int>> pairs;
  for (const Edge& e : d.edges) {
    if (e.a < 0 || e.b < 0 || e.a >= d.num_nodes || e.b >= d.num_nodes)
      throw ValidationError("edge endpoint out of range");
    if (e.a == e.b) throw ValidationError("self-loop edge");
    if (!pairs.insert(std::minmax(e.a, e.b)).second) throw ValidationError("duplicate edge");
  }
  for (const Hop1Clique& c : d.hop1) {
    check_members(c.members, d.num_nodes, "hop1 clique");
    if (c.label < 0 || c.label >= d.num_labels) throw ValidationError("hop1 label out of range");
    if (!(c.confidence > 0.0 && c.confidence <= 1.0))
      throw ValidationError("hop1 confidence outside (0, 1]");
    if (!(c.weight >= 0.0) || !std::isfinite(c.weight))
      throw ValidationError("hop1 weight must be finite and >= 0");
  }
  for (const Hop2Clique& c : d.hop2) {
    check_members(c.members, d.num_nodes, "hop2 clique");
    if (c.label < 0 || c.label >= d.num_labels) throw ValidationError("hop2 label out of range");
    if (!(c.penalty >= 0.0) || !std::isfinite(c.penalty))
      throw ValidationError("hop2 penalty must be finite and >= 0");
    if (!(c.divisor > 1.0) || !std::isfinite(c.divisor))
      throw ValidationError("hop2 divisor must be > 1");
  }
}

EdgeWeights edge_weights(const CrfData& d) {
  EdgeWeights w;
  std::tie(w.offsets, w.targets) = build_adjacency(d);
  w.weights.resize(w.targets.size());
  const auto g = [&](int i) {
    return std::span<const double>(
        d.hypercolumns.data() + static_cast<std::size_t>(i) * d.hypercolumn_dim,
        static_cast<std::size_t>(d.hypercolumn_dim));
  };
  for (int i = 0; i < d.num_nodes; ++i) {
    const int begin = w.offsets[i], end = w.offsets[i + 1];
    if (begin == end) continue;
    double peak = -INFINITY;
    for (int s = begin; s < end; ++s) {
      w.weights[s] = std::abs(dot(g(i), g(w.targets[s])));
      peak = std::max(peak, w.weights[s]);
    }
    double z = 0.0;
    for (int s = begin; s < end; ++s) {
      w.weights[s] = std::exp(w.weights[s] - peak);
      z += w.weights[s];
    }
    for (int s = begin; s < end; ++s) w.weights[s] /= z;
  }
  return w;
}

CrfInstance::CrfInstance(CrfData data, PotentialMask mask) : data_(std::move(data)), mask_(mask) {
  validate(data_);
  weights_ = edge_weights(data_);
  similarity_.resize(weights_.targets.size());
  gate_.resize(weights_.targets.size());
  for (int i = 0; i < data_.num_nodes; ++i) {
    for (int s = weights_.offsets[i]; s < weights_.offsets[i + 1]; ++s) {
      similarity_[s] = std::abs(dot(hypercolumn(i), hypercolumn(weights_.targets[s])));
      gate_[s] = similarity_[s] < data_.beta_p ? data_.alpha_p : 0.0;
    }
  }
  build_membership(data_.hop1, data_.num_nodes, hop1_offsets_, hop1_index_);
  build_membership(data_.hop2, data_.num_nodes, hop2_offsets_, hop2_index_);
}

CrfInstance CrfInstance::masked(PotentialMask mask) const {
  CrfInstance copy = *this;
  copy.mask_ = mask;
  return copy;
}

Label CrfInstance::unary_argmin(int i) const {
  const auto row = unary(i);
  return static_cast<Label>(std::min_element(row.begin(), row.end()) - row.begin());
}

double pairwise_term(const CrfInstance& instance, int i, int j, Label yi, Label yj) {
  if (i < 0 || i >= instance.num_nodes() || j < 0 || j >= instance.num_nodes())
    throw ContractError("pairwise_term: node index out of range");
  const auto nbrs = instance.neighbors(i);
  const auto it = std::lower_bound(nbrs.begin(), nbrs.end(), j);
  if (it == nbrs.end() || *it != j) throw ContractError("pairwise_term: (i, j) is not an edge");
  if (yi == yj) return 0.0;
  return instance.gate_penalty_at(i, static_cast<int>(it - nbrs.begin()));
}

double hop1_energy_from_count(const Hop1Clique& clique, int matching) {
  const double wc = clique.weight * clique.confidence;
  const int size = static_cast<int>(clique.members.size());
  // z_b = 0 pays for members agreeing with the detection, z_b = 1 for the rest.
  return std::min(wc * matching, wc * (size - matching));
}

double hop2_energy_from_count(const Hop2Clique& clique, int matching) {
  const double threshold = static_cast<double>(clique.members.size()) / clique.divisor;
  return static_cast<double>(matching) < threshold ? clique.penalty : 0.0;
}

namespace {

template <typename Clique>
int count_matching(const Clique& clique, const Labeling& labeling, const char* what) {
  int matching = 0;
  for (int m : clique.members) {
    if (m >= static_cast<int>(labeling.size()) || labeling[m] == kUnassigned)
      throw ContractError(std::string(what) + ": clique member is unassigned");
    matching += labeling[m] == clique.label ? 1 : 0;
  }
  return matching;
}

template <typename Clique>
bool grounded(const Clique& clique, const Labeling& labeling) {
  return std::all_of(clique.members.begin(), clique.members.end(),
                     [&](int m) { return labeling[m] != kUnassigned; });
}

}  // namespace

double hop1_energy(const Hop1Clique& clique, const Labeling& labeling) {
  return hop1_energy_from_count(clique, count_matching(clique, labeling, "hop1_energy"));
}

double hop2_energy(const Hop2Clique& clique, const Labeling& labeling) {
  return hop2_energy_from_count(clique, count_matching(clique, labeling, "hop2_energy"));
}

bool is_complete(const Labeling& labeling) {
  return std::none_of(labeling.begin(), labeling.end(),
                      [](Label y) { return y == kUnassigned; });
}

double partial_energy(const CrfInstance& instance, const Labeling& labeling) {
  const int n = instance.num_nodes();
  if (static_cast<int>(labeling.size()) != n)
    throw ContractError("partial_energy: labeling length differs from N");
  double energy = 0.0;
  for (int i = 0; i < n; ++i) {
    if (labeling[i] == kUnassigned) continue;
    if (labeling[i] < 0 || labeling[i] >= instance.num_labels())
      throw ContractError("partial_energy: label out of range");
    energy += instance.unary(i)[labeling[i]];
  }
  const PotentialMask& mask = instance.mask();
  if (mask.pairwise) {
    for (const Edge& e : instance.data().edges) {
      if (labeling[e.a] == kUnassigned || labeling[e.b] == kUnassigned) continue;
      energy += pairwise_term(instance, e.a, e.b, labeling[e.a], labeling[e.b]);
    }
  }
  if (mask.hop1) {
    for (const Hop1Clique& c : instance.hop1())
      if (grounded(c, labeling)) energy += hop1_energy(c, labeling);
  }
  if (mask.hop2) {
    for (const Hop2Clique& c : instance.hop2())
      if (grounded(c, labeling)) energy += hop2_energy(c, labeling);
  }
  return energy;
}

double total_energy(const CrfInstance& instance, const Labeling& labeling) {
  if (static_cast<int>(labeling.size()) != instance.num_nodes() || !is_complete(labeling))
    throw ContractError("total_energy: labeling is incomplete");
  return partial_energy(instance, labeling);
}

}  // namespace hocrf
