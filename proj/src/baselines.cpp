#include "hocrf/baselines.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <queue>
#include <random>

#include "hocrf/errors.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace hocrf {

namespace {

using Clock = std::chrono::steady_clock;

double elapsed(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

Labeling unary_labels(const CrfInstance& instance) {
  Labeling y(instance.num_nodes());
  for (int i = 0; i < instance.num_nodes(); ++i) y[i] = instance.unary_argmin(i);
  return y;
}

void check_init(const CrfInstance& instance, const Labeling& init) {
  if (static_cast<int>(init.size()) != instance.num_nodes())
    throw ValidationError("initial labeling has the wrong length");
  for (Label y : init)
    if (y < 0 || y >= instance.num_labels())
      throw ValidationError("initial labeling must be complete and in range");
}

// Complete labeling with per-clique match counts for O(degree) relabel deltas.
class LocalEnergy {
 public:
  LocalEnergy(const CrfInstance& instance, Labeling labels)
      : instance_(instance), labels_(std::move(labels)),
        hop1_match_(instance.hop1().size(), 0), hop2_match_(instance.hop2().size(), 0) {
    for (std::size_t c = 0; c < instance.hop1().size(); ++c)
      for (int m : instance.hop1()[c].members)
        hop1_match_[c] += labels_[m] == instance.hop1()[c].label;
    for (std::size_t c = 0; c < instance.hop2().size(); ++c)
      for (int m : instance.hop2()[c].members)
        hop2_match_[c] += labels_[m] == instance.hop2()[c].label;
  }

  const Labeling& labels() const { return labels_; }

  double delta(int i, Label to) const {
    const Label from = labels_[i];
    if (from == to) return 0.0;
    const auto u = instance_.unary(i);
    double d = u[to] - u[from];
    const PotentialMask& mask = instance_.mask();
    if (mask.pairwise) {
      const auto nbrs = instance_.neighbors(i);
      for (int s = 0; s < static_cast<int>(nbrs.size()); ++s) {
        const Label other = labels_[nbrs[s]];
        d += instance_.gate_penalty_at(i, s) * ((to != other) - (from != other));
      }
    }
    if (mask.hop1)
      for (int c : instance_.hop1_of(i)) {
        const Hop1Clique& k = instance_.hop1()[c];
        const int m = hop1_match_[c];
        const int m2 = m - (from == k.label) + (to == k.label);
        d += hop1_energy_from_count(k, m2) - hop1_energy_from_count(k, m);
      }
    if (mask.hop2)
      for (int c : instance_.hop2_of(i)) {
        const Hop2Clique& k = instance_.hop2()[c];
        const int m = hop2_match_[c];
        const int m2 = m - (from == k.label) + (to == k.label);
        d += hop2_energy_from_count(k, m2) - hop2_energy_from_count(k, m);
      }
    return d;
  }

  void set(int i, Label to) {
    const Label from = labels_[i];
    for (int c : instance_.hop1_of(i))
      hop1_match_[c] += (to == instance_.hop1()[c].label) - (from == instance_.hop1()[c].label);
    for (int c : instance_.hop2_of(i))
      hop2_match_[c] += (to == instance_.hop2()[c].label) - (from == instance_.hop2()[c].label);
    labels_[i] = to;
  }

 private:
  const CrfInstance& instance_;
  Labeling labels_;
  std::vector<int> hop1_match_, hop2_match_;
};

void decode_index(std::uint64_t index, int L, Labeling& y) {
  for (int i = static_cast<int>(y.size()) - 1; i >= 0; --i) {
    y[i] = static_cast<Label>(index % L);
    index /= L;
  }
}

// Odometer step in lexicographic order.
void increment(Labeling& y, int L) {
  for (int i = static_cast<int>(y.size()) - 1; i >= 0; --i) {
    if (++y[i] < L) return;
    y[i] = 0;
  }
}

}  // namespace

double relabel_delta(const CrfInstance& instance, const Labeling& labeling, int node, Label label) {
  check_init(instance, labeling);
  return LocalEnergy(instance, labeling).delta(node, label);
}

// ---------------------------------------------------------------------------

SolverResult brute_force_map(const CrfInstance& instance, std::uint64_t cap, Execution exec) {
  const auto start = Clock::now();
  const int N = instance.num_nodes(), L = instance.num_labels();
  std::uint64_t states = 1;
  for (int i = 0; i < N; ++i) {
    if (states > cap / static_cast<std::uint64_t>(L) + 1) {
      states = cap + 1;
      break;
    }
    states *= static_cast<std::uint64_t>(L);
  }
  if (states > cap)
    throw ValidationError("brute force: |L|^N exceeds the cap of " + std::to_string(cap) +
                          " states");

  double best_energy = std::numeric_limits<double>::infinity();
  std::uint64_t best_index = 0;
  const bool parallel = exec == Execution::kParallel;

#pragma omp parallel if (parallel)
  {
    double local_energy = std::numeric_limits<double>::infinity();
    std::uint64_t local_index = 0;
    int threads = 1, tid = 0;
#ifdef _OPENMP
    threads = omp_get_num_threads();
    tid = omp_get_thread_num();
#endif
    const std::uint64_t chunk = (states + threads - 1) / threads;
    const std::uint64_t lo = std::min(states, chunk * tid);
    const std::uint64_t hi = std::min(states, lo + chunk);
    Labeling y(N);
    if (lo < hi) decode_index(lo, L, y);
    for (std::uint64_t k = lo; k < hi; ++k) {
      const double e = total_energy(instance, y);
      if (e < local_energy) {
        local_energy = e;
        local_index = k;
      }
      increment(y, L);
    }
#pragma omp critical
    {
      if (local_energy < best_energy || (local_energy == best_energy && local_index < best_index)) {
        best_energy = local_energy;
        best_index = local_index;
      }
    }
  }

  SolverResult r;
  r.solver = "brute_force";
  r.labeling.assign(N, 0);
  decode_index(best_index, L, r.labeling);
  r.energy = total_energy(instance, r.labeling);
  r.iterations = static_cast<std::int64_t>(states);
  r.seconds = elapsed(start);
  return r;
}

// ---------------------------------------------------------------------------

SolverResult icm(const CrfInstance& instance, Labeling init) {
  const auto start = Clock::now();
  if (init.empty()) init = unary_labels(instance);
  check_init(instance, init);
  LocalEnergy state(instance, std::move(init));
  const int N = instance.num_nodes(), L = instance.num_labels();
  std::int64_t sweeps = 0;
  bool changed = true;
  while (changed) {
    changed = false;
    ++sweeps;
    for (int i = 0; i < N; ++i) {
      Label best = state.labels()[i];
      double best_delta = 0.0;
      for (Label y = 0; y < L; ++y) {
        const double d = state.delta(i, y);
        if (d < best_delta) {
          best_delta = d;
          best = y;
        }
      }
      if (best != state.labels()[i]) {
        // Guard against accepting a move whose gain is pure rounding noise.
        const Labeling before = state.labels();
        state.set(i, best);
        if (!(total_energy(instance, state.labels()) < total_energy(instance, before))) {
          state.set(i, before[i]);
          continue;
        }
        changed = true;
      }
    }
  }
  SolverResult r;
  r.solver = "icm";
  r.labeling = state.labels();
  r.energy = total_energy(instance, r.labeling);
  r.iterations = sweeps;
  r.seconds = elapsed(start);
  return r;
}

// ---------------------------------------------------------------------------

namespace {

// Pairwise min-sum model: original nodes first, then one binary node per HOP1 clique.
struct PairwiseModel {
  std::vector<int> states;
  std::vector<std::vector<double>> unary;
  struct Link {
    int a, b;
    std::vector<double> cost;  // states[a] x states[b], row-major
  };
  std::vector<Link> links;
  std::vector<std::vector<std::pair<int, bool>>> incident;  // (link, this node is `a`)

  double cost(const Link& l, int xa, int xb) const { return l.cost[xa * states[l.b] + xb]; }
};

PairwiseModel build_pairwise(const CrfInstance& instance) {
  const int N = instance.num_nodes(), L = instance.num_labels();
  const PotentialMask& mask = instance.mask();
  if (mask.hop2 && !instance.hop2().empty())
    throw ValidationError("loopy BP: HOP2 cliques cannot be reduced to pairwise terms");
  PairwiseModel m;
  const int Z = mask.hop1 ? static_cast<int>(instance.hop1().size()) : 0;
  m.states.assign(N, L);
  m.states.resize(N + Z, 2);
  m.unary.resize(N + Z);
  for (int i = 0; i < N; ++i) {
    const auto u = instance.unary(i);
    m.unary[i].assign(u.begin(), u.end());
  }
  for (int c = 0; c < Z; ++c) m.unary[N + c].assign(2, 0.0);

  if (mask.pairwise) {
    for (int i = 0; i < N; ++i) {
      const auto nbrs = instance.neighbors(i);
      for (int s = 0; s < static_cast<int>(nbrs.size()); ++s) {
        if (nbrs[s] < i) continue;
        PairwiseModel::Link l{i, nbrs[s], std::vector<double>(L * L, 0.0)};
        for (Label a = 0; a < L; ++a)
          for (Label b = 0; b < L; ++b)
            if (a != b) l.cost[a * L + b] = instance.gate_penalty_at(i, s);
        m.links.push_back(std::move(l));
      }
    }
  }
  for (int c = 0; c < Z; ++c) {
    const Hop1Clique& k = instance.hop1()[c];
    const double wc = k.weight * k.confidence;
    for (int member : k.members) {
      // z = 0 pays for members that agree with the detection, z = 1 for the rest.
      PairwiseModel::Link l{N + c, member, std::vector<double>(2 * L, 0.0)};
      for (Label y = 0; y < L; ++y) {
        l.cost[0 * L + y] = y == k.label ? wc : 0.0;
        l.cost[1 * L + y] = y == k.label ? 0.0 : wc;
      }
      m.links.push_back(std::move(l));
    }
  }
  m.incident.resize(N + Z);
  for (int e = 0; e < static_cast<int>(m.links.size()); ++e) {
    m.incident[m.links[e].a].push_back({e, true});
    m.incident[m.links[e].b].push_back({e, false});
  }
  return m;
}

}  // namespace

SolverResult loopy_bp_map(const CrfInstance& instance, const BpConfig& config) {
  const auto start = Clock::now();
  if (config.max_iters < 0 || config.damping < 0.0 || config.damping >= 1.0)
    throw ValidationError("loopy BP: need max_iters >= 0 and damping in [0, 1)");
  const PairwiseModel m = build_pairwise(instance);
  const int V = static_cast<int>(m.states.size());
  const int E = static_cast<int>(m.links.size());

  // msg[2e] flows a -> b (over b's states), msg[2e+1] flows b -> a.
  std::vector<std::vector<double>> msg(2 * E), next(2 * E);
  for (int e = 0; e < E; ++e) {
    msg[2 * e].assign(m.states[m.links[e].b], 0.0);
    msg[2 * e + 1].assign(m.states[m.links[e].a], 0.0);
  }
  const auto incoming = [&](int v, int x, int skip_link) {
    double s = m.unary[v][x];
    for (const auto& [e, is_a] : m.incident[v])
      if (e != skip_link) s += msg[2 * e + (is_a ? 1 : 0)][x];
    return s;
  };

  int iters = 0;
  for (; iters < config.max_iters; ++iters) {
    double change = 0.0;
    for (int e = 0; e < E; ++e) {
      const auto& l = m.links[e];
      for (int dir = 0; dir < 2; ++dir) {
        const int from = dir == 0 ? l.a : l.b;
        const int to = dir == 0 ? l.b : l.a;
        std::vector<double> out(m.states[to], std::numeric_limits<double>::infinity());
        for (int xf = 0; xf < m.states[from]; ++xf) {
          const double h = incoming(from, xf, e);
          for (int xt = 0; xt < m.states[to]; ++xt) {
            const double c = dir == 0 ? m.cost(l, xf, xt) : m.cost(l, xt, xf);
            out[xt] = std::min(out[xt], h + c);
          }
        }
        const double low = *std::min_element(out.begin(), out.end());
        for (int xt = 0; xt < m.states[to]; ++xt) {
          const double v =
              (1.0 - config.damping) * (out[xt] - low) + config.damping * msg[2 * e + dir][xt];
          change = std::max(change, std::abs(v - msg[2 * e + dir][xt]));
          out[xt] = v;
        }
        next[2 * e + dir] = std::move(out);
      }
    }
    std::swap(msg, next);
    if (change < config.tolerance) {
      ++iters;
      break;
    }
  }

  // Sequential decode in breadth-first order.
  std::vector<int> x(V, -1);
  for (int root = 0; root < V; ++root) {
    if (x[root] >= 0) continue;
    std::queue<int> queue;
    queue.push(root);
    std::vector<char> queued(V, 0);
    queued[root] = 1;
    while (!queue.empty()) {
      const int v = queue.front();
      queue.pop();
      double best = std::numeric_limits<double>::infinity();
      int arg = 0;
      for (int xv = 0; xv < m.states[v]; ++xv) {
        double s = m.unary[v][xv];
        for (const auto& [e, is_a] : m.incident[v]) {
          const auto& l = m.links[e];
          const int other = is_a ? l.b : l.a;
          if (x[other] >= 0)
            s += is_a ? m.cost(l, xv, x[other]) : m.cost(l, x[other], xv);
          else
            s += msg[2 * e + (is_a ? 1 : 0)][xv];
        }
        if (s < best) {
          best = s;
          arg = xv;
        }
      }
      x[v] = arg;
      for (const auto& [e, is_a] : m.incident[v]) {
        const int other = is_a ? m.links[e].b : m.links[e].a;
        if (x[other] < 0 && !queued[other]) {
          queued[other] = 1;
          queue.push(other);
        }
      }
    }
  }

  SolverResult r;
  r.solver = "loopy_bp";
  r.labeling.assign(x.begin(), x.begin() + instance.num_nodes());
  r.energy = total_energy(instance, r.labeling);
  r.iterations = iters;
  r.seconds = elapsed(start);
  return r;
}

// ---------------------------------------------------------------------------

SolverResult simulated_annealing(const CrfInstance& instance, const AnnealingSchedule& schedule,
                                 std::uint64_t seed, Labeling init) {
  const auto start = Clock::now();
  if (schedule.sweeps < 1 || !(schedule.t_start > 0.0) || !(schedule.t_end > 0.0))
    throw ValidationError("annealing: need sweeps >= 1 and positive temperatures");
  if (init.empty()) init = unary_labels(instance);
  check_init(instance, init);
  const int N = instance.num_nodes(), L = instance.num_labels();
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> pick_node(0, N - 1);
  std::uniform_int_distribution<int> pick_label(0, std::max(0, L - 2));
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  LocalEnergy state(instance, init);
  Labeling best = init;
  double best_energy = total_energy(instance, best);
  double current = best_energy;
  const double ratio =
      schedule.sweeps > 1 ? std::pow(schedule.t_end / schedule.t_start, 1.0 / (schedule.sweeps - 1))
                          : 1.0;
  double T = schedule.t_start;
  for (int sweep = 0; sweep < schedule.sweeps && L > 1; ++sweep, T *= ratio) {
    for (int move = 0; move < N; ++move) {
      const int i = pick_node(rng);
      Label y = pick_label(rng);
      if (y >= state.labels()[i]) ++y;
      const double d = state.delta(i, y);
      if (d <= 0.0 || unit(rng) < std::exp(-d / T)) {
        state.set(i, y);
        current += d;
        if (current < best_energy - 1e-12) {
          const double exact = total_energy(instance, state.labels());
          current = exact;
          if (exact < best_energy) {
            best_energy = exact;
            best = state.labels();
          }
        }
      }
    }
  }
  SolverResult r;
  r.solver = "annealing";
  r.labeling = std::move(best);
  r.energy = total_energy(instance, r.labeling);
  r.iterations = schedule.sweeps;
  r.seconds = elapsed(start);
  return r;
}

SolverResult unary_argmin_solver(const CrfInstance& instance) {
  const auto start = Clock::now();
  SolverResult r;
  r.solver = "unary_argmin";
  r.labeling = unary_labels(instance);
  r.energy = total_energy(instance, r.labeling);
  r.iterations = 1;
  r.seconds = elapsed(start);
  return r;
}

// ---------------------------------------------------------------------------

SupervisedClassifier SupervisedClassifier::fit(const Dataset& dataset,
                                               const SupervisedConfig& config) {
  std::vector<int> indices = dataset.train;
  if (indices.empty())
    for (std::size_t k = 0; k < dataset.size(); ++k) indices.push_back(static_cast<int>(k));
  std::vector<std::pair<const CrfInstance*, const Labeling*>> items;
  for (int k : indices)
    if (!dataset.samples[k].truth.empty())
      items.push_back({&dataset.samples[k].instance, &dataset.samples[k].truth});
  if (items.empty()) throw TrainingError("supervised baseline needs labeled training samples");

  SupervisedClassifier model;
  model.num_labels_ = items.front().first->num_labels();
  model.feature_dim_ = items.front().first->feature_dim();
  const int L = model.num_labels_, F = model.feature_dim_, D = F + 1;
  std::size_t count = 0;
  for (const auto& [inst, truth] : items) {
    if (inst->num_labels() != L || inst->feature_dim() != F)
      throw ShapeError("supervised baseline: training instances disagree on shape");
    count += truth->size();
  }
  model.weights_.assign(static_cast<std::size_t>(L) * D, 0.0);

  std::vector<double> grad(model.weights_.size());
  std::vector<double> logits(L);
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::fill(grad.begin(), grad.end(), 0.0);
    for (const auto& [inst, truth] : items) {
      for (int i = 0; i < inst->num_nodes(); ++i) {
        const auto f = inst->features(i);
        double peak = -std::numeric_limits<double>::infinity();
        for (Label y = 0; y < L; ++y) {
          double s = model.weights_[y * D + F];
          for (int k = 0; k < F; ++k) s += model.weights_[y * D + k] * f[k];
          logits[y] = s;
          peak = std::max(peak, s);
        }
        double z = 0.0;
        for (double& s : logits) z += (s = std::exp(s - peak));
        for (Label y = 0; y < L; ++y) {
          const double g = logits[y] / z - ((*truth)[i] == y ? 1.0 : 0.0);
          for (int k = 0; k < F; ++k) grad[y * D + k] += g * f[k];
          grad[y * D + F] += g;
        }
      }
    }
    for (std::size_t w = 0; w < grad.size(); ++w)
      model.weights_[w] -= config.learning_rate *
                           (grad[w] / static_cast<double>(count) + config.l2 * model.weights_[w]);
  }
  return model;
}

Label SupervisedClassifier::predict_node(const CrfInstance& instance, int node) const {
  const int D = feature_dim_ + 1;
  const auto f = instance.features(node);
  Label best = 0;
  double best_score = -std::numeric_limits<double>::infinity();
  for (Label y = 0; y < num_labels_; ++y) {
    double s = weights_[y * D + feature_dim_];
    for (int k = 0; k < feature_dim_; ++k) s += weights_[y * D + k] * f[k];
    if (s > best_score) {
      best_score = s;
      best = y;
    }
  }
  return best;
}

SolverResult SupervisedClassifier::predict(const CrfInstance& instance) const {
  if (instance.num_labels() != num_labels_ || instance.feature_dim() != feature_dim_)
    throw ShapeError("supervised baseline: instance shape does not match the model");
  const auto start = Clock::now();
  SolverResult r;
  r.solver = "supervised";
  r.labeling.resize(instance.num_nodes());
  for (int i = 0; i < instance.num_nodes(); ++i) r.labeling[i] = predict_node(instance, i);
  r.energy = total_energy(instance, r.labeling);
  r.iterations = 1;
  r.seconds = elapsed(start);
  return r;
}

}  // namespace hocrf
