// Forward/backward passes of the graph-embedding network. The per-node kernels
// below are shared by the serial, OpenMP and incremental paths so every path
// produces identical bits.

#include <algorithm>
#include <cmath>
#include <limits>

#include "hocrf/errors.hpp"
#include "hocrf/policy.hpp"

namespace hocrf {

namespace {

// One message-passing round for node i. `prev` holds round-k embeddings (N x p).
inline void node_round(const RoundParams& rp, const CrfInstance& instance, const Labeling& labels,
                       int p, const double* prev, int i, double* agg, double* pre, double* out) {
  const auto nbrs = instance.neighbors(i);
  const auto w = instance.weights().row(i);
  std::fill(agg, agg + p, 0.0);
  for (std::size_t s = 0; s < nbrs.size(); ++s) {
    const double* mu = prev + static_cast<std::size_t>(nbrs[s]) * p;
    const double ws = w[s];
    for (int r = 0; r < p; ++r) agg[r] += ws * mu[r];
  }
  const auto b = instance.features(i);
  const int F = static_cast<int>(b.size());
  const Label y = labels[i];
  for (int r = 0; r < p; ++r) {
    double v = 0.0;
    if (y != kUnassigned) v += rp.node_tag.data[r] + rp.label(r, y);
    const double* tf = rp.features.row(r);
    for (int f = 0; f < F; ++f) v += tf[f] * b[f];
    const double* tn = rp.neighbors.row(r);
    for (int c = 0; c < p; ++c) v += tn[c] * agg[c];
    pre[r] = v;
    out[r] = v > 0.0 ? v : 0.0;
  }
}

inline void node_output(const Tensor& output, const double* mu, int p, double* scores) {
  for (int y = 0; y < output.rows; ++y) {
    const double* t = output.row(y);
    double v = 0.0;
    for (int r = 0; r < p; ++r) v += t[r] * mu[r];
    scores[y] = v;
  }
}

ForwardCache make_cache(const PolicyParams& params, const CrfInstance& instance,
                        const Labeling& labels) {
  check_compatible(params.shape, instance);
  if (static_cast<int>(labels.size()) != instance.num_nodes())
    throw ShapeError("forward: labeling length differs from N");
  ForwardCache c;
  c.shape = params.shape;
  c.num_nodes = instance.num_nodes();
  c.revision = params.revision;
  c.labels = labels;
  const std::size_t np = static_cast<std::size_t>(c.num_nodes) * params.shape.embed_dim;
  c.embeddings.assign((params.shape.rounds + 1) * np, 0.0);
  c.pre.assign(params.shape.rounds * np, 0.0);
  c.aggregate.assign(params.shape.rounds * np, 0.0);
  c.scores.assign(static_cast<std::size_t>(c.num_nodes) * params.shape.num_labels, 0.0);
  return c;
}

ForwardCache forward_impl(const PolicyParams& params, const CrfInstance& instance,
                          const Labeling& labels, bool parallel) {
  ForwardCache c = make_cache(params, instance, labels);
  const int n = c.num_nodes, p = params.shape.embed_dim, L = params.shape.num_labels;
  const std::size_t np = static_cast<std::size_t>(n) * p;
  for (int k = 0; k < params.shape.rounds; ++k) {
    const RoundParams& rp = params.rounds[k];
    const double* prev = c.embeddings.data() + k * np;
    double* next = c.embeddings.data() + (k + 1) * np;
    double* agg = c.aggregate.data() + k * np;
    double* pre = c.pre.data() + k * np;
#pragma omp parallel for schedule(static) if (parallel)
    for (int i = 0; i < n; ++i) {
      const std::size_t o = static_cast<std::size_t>(i) * p;
      node_round(rp, instance, labels, p, prev, i, agg + o, pre + o, next + o);
    }
  }
  const double* last = c.embeddings.data() + params.shape.rounds * np;
#pragma omp parallel for schedule(static) if (parallel)
  for (int i = 0; i < n; ++i)
    node_output(params.output, last + static_cast<std::size_t>(i) * p, p,
                c.scores.data() + static_cast<std::size_t>(i) * L);
  return c;
}

}  // namespace

std::span<const double> ForwardCache::embedding(int round, int node) const {
  const std::size_t p = shape.embed_dim;
  return {embeddings.data() + (static_cast<std::size_t>(round) * num_nodes + node) * p, p};
}

std::span<const double> ForwardCache::node_scores(int node) const {
  const std::size_t L = shape.num_labels;
  return {scores.data() + node * L, L};
}

ForwardCache forward(const PolicyParams& params, const CrfInstance& instance,
                     const Labeling& labels, Execution exec) {
  return forward_impl(params, instance, labels, exec == Execution::kParallel);
}

ForwardCache forward_serial(const PolicyParams& params, const CrfInstance& instance,
                            const Labeling& labels) {
  return forward_impl(params, instance, labels, false);
}

void backward(const PolicyParams& params, const CrfInstance& instance, const ForwardCache& cache,
              std::span<const double> upstream, PolicyParams& grads) {
  if (cache.revision != params.revision || !(cache.shape == params.shape) ||
      cache.num_nodes != instance.num_nodes())
    throw ContractError("backward: forward cache does not match these parameters");
  if (!(grads.shape == params.shape)) throw ShapeError("backward: gradient container shape");
  const int n = cache.num_nodes, p = params.shape.embed_dim, L = params.shape.num_labels;
  const int K = params.shape.rounds;
  if (upstream.size() != static_cast<std::size_t>(n) * L)
    throw ShapeError("backward: upstream gradient is not N x |L|");
  const std::size_t np = static_cast<std::size_t>(n) * p;

  std::vector<double> dmu(np, 0.0), dprev(np, 0.0), dpre(p), dagg(p);
  const double* last = cache.embeddings.data() + K * np;
  for (int i = 0; i < n; ++i) {
    const double* g = upstream.data() + static_cast<std::size_t>(i) * L;
    const double* mu = last + static_cast<std::size_t>(i) * p;
    double* d = dmu.data() + static_cast<std::size_t>(i) * p;
    for (int y = 0; y < L; ++y) {
      if (g[y] == 0.0) continue;
      for (int r = 0; r < p; ++r) {
        grads.output(y, r) += g[y] * mu[r];
        d[r] += params.output(y, r) * g[y];
      }
    }
  }

  for (int k = K - 1; k >= 0; --k) {
    const RoundParams& rp = params.rounds[k];
    RoundParams& gp = grads.rounds[k];
    const double* pre = cache.pre.data() + k * np;
    const double* agg = cache.aggregate.data() + k * np;
    std::fill(dprev.begin(), dprev.end(), 0.0);
    for (int i = 0; i < n; ++i) {
      const std::size_t o = static_cast<std::size_t>(i) * p;
      bool any = false;
      for (int r = 0; r < p; ++r) {
        dpre[r] = pre[o + r] > 0.0 ? dmu[o + r] : 0.0;
        any = any || dpre[r] != 0.0;
      }
      if (!any) continue;
      const Label y = cache.labels[i];
      const auto b = instance.features(i);
      for (int r = 0; r < p; ++r) {
        const double dr = dpre[r];
        if (dr == 0.0) continue;
        if (y != kUnassigned) {
          gp.node_tag.data[r] += dr;
          gp.label(r, y) += dr;
        }
        for (std::size_t f = 0; f < b.size(); ++f) gp.features(r, static_cast<int>(f)) += dr * b[f];
        for (int c = 0; c < p; ++c) gp.neighbors(r, c) += dr * agg[o + c];
      }
      if (k == 0) continue;  // round-0 embeddings are constant zeros
      std::fill(dagg.begin(), dagg.end(), 0.0);
      for (int r = 0; r < p; ++r) {
        const double dr = dpre[r];
        if (dr == 0.0) continue;
        const double* tn = rp.neighbors.row(r);
        for (int c = 0; c < p; ++c) dagg[c] += tn[c] * dr;
      }
      const auto nbrs = instance.neighbors(i);
      const auto w = instance.weights().row(i);
      for (std::size_t s = 0; s < nbrs.size(); ++s) {
        double* dj = dprev.data() + static_cast<std::size_t>(nbrs[s]) * p;
        for (int c = 0; c < p; ++c) dj[c] += w[s] * dagg[c];
      }
    }
    std::swap(dmu, dprev);
  }
}

std::vector<double> masked_scores(const ForwardCache& cache) {
  std::vector<double> out = cache.scores;
  const int L = cache.shape.num_labels;
  for (int i = 0; i < cache.num_nodes; ++i)
    if (cache.labels[i] != kUnassigned)
      std::fill_n(out.begin() + static_cast<std::ptrdiff_t>(i) * L, L,
                  -std::numeric_limits<double>::infinity());
  return out;
}

Action argmax_action(const ForwardCache& cache, const EpisodeState& state) {
  const int L = cache.shape.num_labels;
  Action best{-1, 0};
  double best_score = -std::numeric_limits<double>::infinity();
  for (int i = 0; i < state.num_nodes(); ++i) {
    if (state.assigned(i)) continue;
    for (Label y = 0; y < L; ++y) {
      const double s = cache.scores[static_cast<std::size_t>(i) * L + y];
      if (best.node < 0 || s > best_score) {
        best = {i, y};
        best_score = s;
      }
    }
  }
  if (best.node < 0) throw ContractError("argmax_action: no legal action");
  return best;
}

std::vector<double> legal_softmax(std::span<const double> scores, const EpisodeState& state) {
  const int L = state.num_labels();
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(state.num_unassigned()) * L);
  double peak = -std::numeric_limits<double>::infinity();
  for (int i = 0; i < state.num_nodes(); ++i)
    if (!state.assigned(i))
      for (Label y = 0; y < L; ++y) peak = std::max(peak, scores[static_cast<std::size_t>(i) * L + y]);
  double z = 0.0;
  for (int i = 0; i < state.num_nodes(); ++i) {
    if (state.assigned(i)) continue;
    for (Label y = 0; y < L; ++y) {
      out.push_back(std::exp(scores[static_cast<std::size_t>(i) * L + y] - peak));
      z += out.back();
    }
  }
  for (double& v : out) v /= z;
  return out;
}

// ---------------------------------------------------------------------------

IncrementalScorer::IncrementalScorer(const PolicyParams& params, const CrfInstance& instance)
    : params_(&params), instance_(&instance) {
  check_compatible(params.shape, instance);
}

void IncrementalScorer::reset(const Labeling& labels) {
  ForwardCache c = forward(*params_, *instance_, labels);
  labels_ = labels;
  embeddings_ = std::move(c.embeddings);
  scores_ = std::move(c.scores);
  const int n = instance_->num_nodes();
  best_score_.assign(n, 0.0);
  best_label_.assign(n, 0);
  ranking_.clear();
  mark_.assign(n, 0);
  stamp_ = 0;
  for (int i = 0; i < n; ++i) {
    best_label_[i] = -1;
    update_best(i);
  }
}

std::span<const double> IncrementalScorer::node_scores(int node) const {
  const std::size_t L = params_->shape.num_labels;
  return {scores_.data() + node * L, L};
}

std::span<const double> IncrementalScorer::embedding(int node) const {
  const std::size_t p = params_->shape.embed_dim;
  const std::size_t np = static_cast<std::size_t>(instance_->num_nodes()) * p;
  return {embeddings_.data() + params_->shape.rounds * np + node * p, p};
}

void IncrementalScorer::update_best(int node) {
  if (best_label_[node] >= 0) ranking_.erase({-best_score_[node], node});
  best_label_[node] = -1;
  if (labels_[node] != kUnassigned) return;
  const auto s = node_scores(node);
  Label arg = 0;
  for (Label y = 1; y < static_cast<Label>(s.size()); ++y)
    if (s[y] > s[arg]) arg = y;
  best_label_[node] = arg;
  best_score_[node] = s[arg];
  ranking_.insert({-s[arg], node});
}

void IncrementalScorer::refresh_ball(int node) {
  const int K = params_->shape.rounds, p = params_->shape.embed_dim;
  const int L = params_->shape.num_labels;
  const std::size_t np = static_cast<std::size_t>(instance_->num_nodes()) * p;
  // layers[d] = nodes at hop distance d from `node`, d < K.
  ++stamp_;
  std::vector<int> ball{node};
  std::vector<int> layer_end{1};
  mark_[node] = stamp_;
  for (int d = 1; d < K; ++d) {
    const int begin = d == 1 ? 0 : layer_end[d - 2];
    const int end = layer_end[d - 1];
    for (int q = begin; q < end; ++q)
      for (int j : instance_->neighbors(ball[q]))
        if (mark_[j] != stamp_) {
          mark_[j] = stamp_;
          ball.push_back(j);
        }
    layer_end.push_back(static_cast<int>(ball.size()));
  }
  std::vector<double> agg(p), pre(p);
  for (int k = 0; k < K; ++k) {
    const double* prev = embeddings_.data() + k * np;
    double* next = embeddings_.data() + (k + 1) * np;
    for (int q = 0; q < layer_end[k]; ++q) {
      const int i = ball[q];
      node_round(params_->rounds[k], *instance_, labels_, p, prev, i, agg.data(), pre.data(),
                 next + static_cast<std::size_t>(i) * p);
    }
  }
  const double* last = embeddings_.data() + K * np;
  const int touched = K == 0 ? 1 : layer_end[K - 1];
  for (int q = 0; q < touched; ++q) {
    const int i = ball[q];
    node_output(params_->output, last + static_cast<std::size_t>(i) * p, p,
                scores_.data() + static_cast<std::size_t>(i) * L);
    update_best(i);
  }
}

void IncrementalScorer::assign(int node, Label label) {
  labels_[node] = label;
  refresh_ball(node);
}

void IncrementalScorer::unassign(int node) {
  labels_[node] = kUnassigned;
  refresh_ball(node);
}

Action IncrementalScorer::best_action() const {
  if (ranking_.empty()) throw ContractError("best_action: no unlabeled node");
  const int node = ranking_.begin()->second;
  return {node, best_label_[node]};
}

// ---------------------------------------------------------------------------

void GreedyNetworkPolicy::begin(const CrfInstance& instance, const EpisodeState& state) {
  scorer_ = std::make_unique<IncrementalScorer>(*params_, instance);
  scorer_->reset(state.labels());
}

Action GreedyNetworkPolicy::choose(const CrfInstance&, const EpisodeState&) {
  return scorer_->best_action();
}

void GreedyNetworkPolicy::observe(const CrfInstance&, const EpisodeState&, Action taken) {
  scorer_->assign(taken.node, taken.label);
}

std::vector<double> GreedyNetworkPolicy::node_probabilities(const CrfInstance&,
                                                            const EpisodeState& state) {
  const std::vector<double> pi = legal_softmax(scorer_->scores(), state);
  std::vector<double> phi(state.num_nodes(), 0.0);
  std::size_t idx = 0;
  for (int i = 0; i < state.num_nodes(); ++i) {
    if (state.assigned(i)) continue;
    for (Label y = 0; y < state.num_labels(); ++y) phi[i] += pi[idx++];
  }
  return phi;
}

}  // namespace hocrf
