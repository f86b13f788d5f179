#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hocrf/crf.hpp"
#include "hocrf/instances.hpp"
#include "hocrf/policy.hpp"

namespace hocrf {

struct SolverResult {
  std::string solver;
  Labeling labeling;
  double energy = 0.0;  // total_energy(labeling) under the instance mask
  double seconds = 0.0;
  std::int64_t iterations = 0;
};

inline constexpr std::uint64_t kBruteForceCap = 2'000'000;

// Exhaustive search; the lexicographically smallest minimizer wins (node 0 is
// the most significant digit). Throws ValidationError when |L|^N > cap.
SolverResult brute_force_map(const CrfInstance& instance, std::uint64_t cap = kBruteForceCap,
                             Execution exec = Execution::kParallel);

// Coordinate descent in node order; a label changes only on strict improvement.
// Empty `init` starts from the unary argmin.
SolverResult icm(const CrfInstance& instance, Labeling init = {});

struct BpConfig {
  int max_iters = 100;
  double damping = 0.5;  // weight of the previous message
  double tolerance = 1e-6;
};

// Min-sum loopy belief propagation on the pairwise graph where every HOP1
// clique becomes a binary validity node joined to its members. Decoding walks
// each component breadth-first, conditioning on already decoded neighbors,
// which is exact on trees. Throws ValidationError if active HOP2 cliques exist.
SolverResult loopy_bp_map(const CrfInstance& instance, const BpConfig& config = {});

struct AnnealingSchedule {
  double t_start = 1.0;
  double t_end = 0.01;
  int sweeps = 200;  // each sweep proposes N single-site moves
};

// Metropolis single-site moves under a geometric temperature schedule; returns
// the best labeling visited. Empty `init` starts from the unary argmin.
SolverResult simulated_annealing(const CrfInstance& instance, const AnnealingSchedule& schedule,
                                 std::uint64_t seed, Labeling init = {});

SolverResult unary_argmin_solver(const CrfInstance& instance);

struct SupervisedConfig {
  int epochs = 300;
  double learning_rate = 0.5;
  double l2 = 1e-4;
};

// Multinomial logistic regression from node features to labels, fitted by
// full-batch gradient descent on the cross-entropy.
class SupervisedClassifier {
 public:
  static SupervisedClassifier fit(const Dataset& dataset, const SupervisedConfig& config = {});

  Label predict_node(const CrfInstance& instance, int node) const;
  SolverResult predict(const CrfInstance& instance) const;

  int num_labels() const { return num_labels_; }
  int feature_dim() const { return feature_dim_; }
  const std::vector<double>& weights() const { return weights_; }

 private:
  int num_labels_ = 0;
  int feature_dim_ = 0;
  std::vector<double> weights_;  // |L| x (F + 1), bias last
};

// E(y with y_node = label) - E(y) for a complete labeling.
double relabel_delta(const CrfInstance& instance, const Labeling& labeling, int node, Label label);

}  // namespace hocrf
