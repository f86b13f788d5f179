#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace hocrf {

using Label = int;
inline constexpr Label kUnassigned = -1;

// Per-node label assignment; kUnassigned marks nodes not yet labeled.
using Labeling = std::vector<Label>;

struct Edge {
  int a = 0;
  int b = 0;
  bool operator==(const Edge&) const = default;
};

// Detection-style clique: members prefer `label`, with an auxiliary validity
// variable that is minimized out when the energy is evaluated.
struct Hop1Clique {
  std::vector<int> members;
  Label label = 0;
  double confidence = 1.0;
  double weight = 0.0;
  bool operator==(const Hop1Clique&) const = default;
};

// Count-threshold clique: `penalty` is paid when fewer than
// |members| / divisor members carry `label`.
struct Hop2Clique {
  std::vector<int> members;
  Label label = 0;
  double penalty = 0.0;
  double divisor = 2.0;
  bool operator==(const Hop2Clique&) const = default;
};

// Which potential families contribute to the energy. Unaries always do.
struct PotentialMask {
  bool pairwise = true;
  bool hop1 = true;
  bool hop2 = true;

  bool operator==(const PotentialMask&) const = default;

  // "U", "U+P", "U+P+HOP1", "U+P+HOP1+HOP2"
  static PotentialMask from_name(const std::string& name);
  std::string name() const;
};

// Raw, dimension-tagged description of an instance. Per-node tables are
// row-major: node i occupies [i*dim, (i+1)*dim).
struct CrfData {
  int num_nodes = 0;
  int num_labels = 0;
  int feature_dim = 0;
  int hypercolumn_dim = 0;
  std::vector<Edge> edges;
  std::vector<double> node_features;
  std::vector<double> hypercolumns;
  std::vector<double> unary;
  double alpha_p = 0.0;
  double beta_p = 0.0;
  std::vector<Hop1Clique> hop1;
  std::vector<Hop2Clique> hop2;

  bool operator==(const CrfData&) const = default;
};

// Directed, per-source softmax weights in CSR layout. Row i lists the
// neighbors of i; weights of a non-empty row sum to one.
struct EdgeWeights {
  std::vector<int> offsets;  // size N + 1
  std::vector<int> targets;
  std::vector<double> weights;

  std::span<const int> neighbors(int i) const {
    return {targets.data() + offsets[i], targets.data() + offsets[i + 1]};
  }
  std::span<const double> row(int i) const {
    return {weights.data() + offsets[i], weights.data() + offsets[i + 1]};
  }
};

EdgeWeights edge_weights(const CrfData& data);

// Immutable CRF instance with adjacency and clique-membership indices.
class CrfInstance {
 public:
  CrfInstance() = default;
  explicit CrfInstance(CrfData data, PotentialMask mask = {});

  const CrfData& data() const { return data_; }
  const PotentialMask& mask() const { return mask_; }
  CrfInstance masked(PotentialMask mask) const;

  int num_nodes() const { return data_.num_nodes; }
  int num_labels() const { return data_.num_labels; }
  int feature_dim() const { return data_.feature_dim; }

  std::span<const double> unary(int i) const {
    return {data_.unary.data() + static_cast<std::size_t>(i) * data_.num_labels,
            static_cast<std::size_t>(data_.num_labels)};
  }
  std::span<const double> features(int i) const {
    return {data_.node_features.data() + static_cast<std::size_t>(i) * data_.feature_dim,
            static_cast<std::size_t>(data_.feature_dim)};
  }
  std::span<const double> hypercolumn(int i) const {
    return {data_.hypercolumns.data() + static_cast<std::size_t>(i) * data_.hypercolumn_dim,
            static_cast<std::size_t>(data_.hypercolumn_dim)};
  }

  const EdgeWeights& weights() const { return weights_; }
  std::span<const int> neighbors(int i) const { return weights_.neighbors(i); }
  int degree(int i) const { return weights_.offsets[i + 1] - weights_.offsets[i]; }

  // Unnormalized |g_i . g_j| for the k-th neighbor slot of node i.
  double similarity_at(int i, int slot) const { return similarity_[weights_.offsets[i] + slot]; }
  // Potts penalty between i and its k-th neighbor when labels differ (0 if gate closed).
  double gate_penalty_at(int i, int slot) const { return gate_[weights_.offsets[i] + slot]; }

  std::span<const int> hop1_of(int i) const {
    return {hop1_index_.data() + hop1_offsets_[i], hop1_index_.data() + hop1_offsets_[i + 1]};
  }
  std::span<const int> hop2_of(int i) const {
    return {hop2_index_.data() + hop2_offsets_[i], hop2_index_.data() + hop2_offsets_[i + 1]};
  }
  const std::vector<Hop1Clique>& hop1() const { return data_.hop1; }
  const std::vector<Hop2Clique>& hop2() const { return data_.hop2; }

  Label unary_argmin(int i) const;

 private:
  CrfData data_;
  PotentialMask mask_;
  EdgeWeights weights_;
  std::vector<double> similarity_;
  std::vector<double> gate_;
  std::vector<int> hop1_offsets_, hop1_index_;
  std::vector<int> hop2_offsets_, hop2_index_;
};

// Throws ValidationError describing the first violated invariant.
void validate(const CrfData& data);

double dot(std::span<const double> a, std::span<const double> b);

// Pairwise Potts term for an existing edge; ContractError for non-edges.
double pairwise_term(const CrfInstance& instance, int i, int j, Label yi, Label yj);

// Closed forms used by both full and incremental evaluation.
double hop1_energy_from_count(const Hop1Clique& clique, int matching);
double hop2_energy_from_count(const Hop2Clique& clique, int matching);

double hop1_energy(const Hop1Clique& clique, const Labeling& labeling);
double hop2_energy(const Hop2Clique& clique, const Labeling& labeling);

// Sum of every term whose variables are all assigned.
double partial_energy(const CrfInstance& instance, const Labeling& labeling);
// Requires a complete labeling.
double total_energy(const CrfInstance& instance, const Labeling& labeling);

bool is_complete(const Labeling& labeling);

}  // namespace hocrf
