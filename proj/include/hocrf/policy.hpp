#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <memory>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "hocrf/crf.hpp"
#include "hocrf/env.hpp"

namespace hocrf {

// Dense row-major matrix.
struct Tensor {
  int rows = 0;
  int cols = 0;
  std::vector<double> data;

  Tensor() = default;
  Tensor(int r, int c) : rows(r), cols(c), data(static_cast<std::size_t>(r) * c, 0.0) {}

  double& operator()(int r, int c) { return data[static_cast<std::size_t>(r) * cols + c]; }
  double operator()(int r, int c) const { return data[static_cast<std::size_t>(r) * cols + c]; }
  const double* row(int r) const { return data.data() + static_cast<std::size_t>(r) * cols; }
  bool operator==(const Tensor&) const = default;
};

struct PolicyShape {
  int rounds = 3;      // K
  int embed_dim = 32;  // p
  int num_labels = 0;
  int feature_dim = 0;
  bool operator==(const PolicyShape&) const = default;
};

// Weights of one message-passing round.
struct RoundParams {
  Tensor node_tag;   // p x 1, multiplies h_i
  Tensor label;      // p x |L|, multiplies the one-hot label
  Tensor features;   // p x F
  Tensor neighbors;  // p x p, multiplies the weighted neighbor sum
  bool operator==(const RoundParams&) const = default;
};

// Graph-embedding network parameters; also used as the gradient container.
struct PolicyParams {
  PolicyShape shape;
  std::vector<RoundParams> rounds;
  Tensor output;  // |L| x p
  // Bumped by every optimizer step; forward caches record it.
  std::uint64_t revision = 0;

  static PolicyParams zeros(const PolicyShape& shape);
  // Uniform in [-1/sqrt(p), 1/sqrt(p)].
  static PolicyParams initialize(const PolicyShape& shape, std::uint64_t seed);

  // Named views in a fixed order: round<k>.node_tag, .label, .features, .neighbors, output.
  std::vector<std::pair<std::string, Tensor*>> tensors();
  std::vector<std::pair<std::string, const Tensor*>> tensors() const;
  std::size_t num_values() const;

  void set_zero();
  // this += scale * other (shapes must match).
  void add_scaled(const PolicyParams& other, double scale);

  bool same_values(const PolicyParams& other) const;
};

// Throws ShapeError when the network cannot score this instance.
void check_compatible(const PolicyShape& shape, const CrfInstance& instance);

enum class Execution { kSerial, kParallel };

// Intermediates of a forward pass, consumed by backward().
struct ForwardCache {
  PolicyShape shape;
  int num_nodes = 0;
  std::uint64_t revision = 0;
  Labeling labels;
  std::vector<double> embeddings;  // (K+1) x N x p, round 0 is all zeros
  std::vector<double> pre;         // K x N x p
  std::vector<double> aggregate;   // K x N x p
  std::vector<double> scores;      // N x |L|

  std::span<const double> embedding(int round, int node) const;
  std::span<const double> node_scores(int node) const;
  double score(Action a) const { return scores[static_cast<std::size_t>(a.node) * shape.num_labels + a.label]; }
};

ForwardCache forward(const PolicyParams& params, const CrfInstance& instance,
                     const Labeling& labels, Execution exec = Execution::kParallel);
// Reference implementation: one node at a time, no threading.
ForwardCache forward_serial(const PolicyParams& params, const CrfInstance& instance,
                            const Labeling& labels);

// Accumulates d(loss)/d(params) into `grads` given d(loss)/d(scores)
// (N x |L|, row-major). Throws ContractError when the cache is stale.
void backward(const PolicyParams& params, const CrfInstance& instance, const ForwardCache& cache,
              std::span<const double> upstream, PolicyParams& grads);

// Score view restricted to legal actions: labeled nodes map to -infinity.
std::vector<double> masked_scores(const ForwardCache& cache);

// Greedy argmax over legal actions; ties go to the lowest (node, label).
Action argmax_action(const ForwardCache& cache, const EpisodeState& state);

// Softmax over legal actions in ascending (node, label) order.
std::vector<double> legal_softmax(std::span<const double> scores, const EpisodeState& state);

// Forward pass kept up to date under single assignments: only nodes within
// K-1 hops of the changed node are recomputed, with the same per-node kernel
// as the full pass, so results are bit-identical to forward().
class IncrementalScorer {
 public:
  IncrementalScorer(const PolicyParams& params, const CrfInstance& instance);

  void reset(const Labeling& labels);
  void assign(int node, Label label);
  void unassign(int node);

  const Labeling& labels() const { return labels_; }
  std::span<const double> node_scores(int node) const;
  std::span<const double> scores() const { return scores_; }
  std::span<const double> embedding(int node) const;  // final round

  // Best legal action (lowest (node, label) on ties). Requires an unlabeled node.
  Action best_action() const;

 private:
  void refresh_ball(int node);
  void update_best(int node);

  const PolicyParams* params_;
  const CrfInstance* instance_;
  Labeling labels_;
  std::vector<double> embeddings_;  // (K+1) x N x p
  std::vector<double> scores_;
  std::vector<double> best_score_;
  std::vector<Label> best_label_;
  std::set<std::pair<double, int>> ranking_;  // (-best score, node) over unlabeled nodes
  std::vector<int> mark_;
  int stamp_ = 0;
};

// Greedy inference: argmax of the network scores at each step.
class GreedyNetworkPolicy final : public Policy {
 public:
  explicit GreedyNetworkPolicy(const PolicyParams& params) : params_(&params) {}

  void begin(const CrfInstance& instance, const EpisodeState& state) override;
  Action choose(const CrfInstance& instance, const EpisodeState& state) override;
  void observe(const CrfInstance& instance, const EpisodeState& state, Action taken) override;
  // Per-node sums of the legal-action softmax, zero on labeled nodes.
  std::vector<double> node_probabilities(const CrfInstance& instance,
                                         const EpisodeState& state) override;

 private:
  const PolicyParams* params_;
  std::unique_ptr<IncrementalScorer> scorer_;
};

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct OptimizerState {
  AdamConfig config;
  std::int64_t step = 0;
  PolicyParams first_moment;
  PolicyParams second_moment;

  static OptimizerState create(const PolicyShape& shape, AdamConfig config = {});
};

// Adaptive-moment update. Throws TrainingError naming the first tensor with a
// non-finite gradient; nothing is modified in that case.
void optimizer_step(OptimizerState& state, PolicyParams& params, const PolicyParams& grads);

inline constexpr int kPolicyFileVersion = 1;

// Versioned JSON container with named tensors and shape metadata. The
// optimizer state is optional and lets training resume.
void save_params(std::ostream& out, const PolicyParams& params,
                 const OptimizerState* optimizer = nullptr);
PolicyParams load_params(std::istream& in, OptimizerState* optimizer = nullptr);
void save_params_file(const std::string& path, const PolicyParams& params,
                      const OptimizerState* optimizer = nullptr);
PolicyParams load_params_file(const std::string& path, OptimizerState* optimizer = nullptr);

}  // namespace hocrf
