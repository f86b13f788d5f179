#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

#include "hocrf/errors.hpp"
#include "hocrf/policy.hpp"
#include "support.hpp"

using namespace hocrf;

namespace {

PolicyShape shape_for(const CrfInstance& inst, int rounds, int p) {
  return {rounds, p, inst.num_labels(), inst.feature_dim()};
}

Labeling partial_labels(std::mt19937_64& rng, int n, int labels, double frac) {
  Labeling y = hocrf::testing::random_labeling(rng, n, labels);
  std::bernoulli_distribution keep(frac);
  for (Label& v : y)
    if (!keep(rng)) v = kUnassigned;
  return y;
}

double weighted_sum(const ForwardCache& c, const std::vector<double>& up) {
  double s = 0.0;
  for (std::size_t k = 0; k < up.size(); ++k) s += c.scores[k] * up[k];
  return s;
}

CrfInstance path_instance(int n, std::mt19937_64& rng) {
  CrfData d;
  d.num_nodes = n;
  d.num_labels = 2;
  d.feature_dim = 3;
  d.hypercolumn_dim = 2;
  for (int i = 0; i + 1 < n; ++i) d.edges.push_back({i, i + 1});
  hocrf::testing::fill_tables(rng, d);
  return CrfInstance(d);
}

}  // namespace

TEST_SUITE("policy") {

TEST_CASE("zero parameters and zero rounds give zero scores") {
  std::mt19937_64 rng(1);
  const CrfInstance inst(hocrf::testing::random_data(rng, {}));
  const Labeling y = partial_labels(rng, 6, 3, 0.5);
  const ForwardCache z = forward(PolicyParams::zeros(shape_for(inst, 3, 4)), inst, y);
  for (double v : z.scores) CHECK(v == 0.0);
  const ForwardCache k0 = forward(PolicyParams::initialize(shape_for(inst, 0, 4), 3), inst, y);
  for (double v : k0.scores) CHECK(v == 0.0);
}

TEST_CASE("single isolated node by hand") {
  CrfData d;
  d.num_nodes = 1;
  d.num_labels = 2;
  d.feature_dim = 1;
  d.node_features = {2.0};
  d.unary = {0.0, 0.0};
  const CrfInstance inst(d);
  PolicyParams p = PolicyParams::zeros({1, 2, 2, 1});
  auto& r = p.rounds[0];
  r.node_tag.data = {0.5, -1.0};
  r.label.data = {1.0, 0.0, 0.0, 2.0};  // rows: embedding dims, cols: labels
  r.features.data = {0.25, 1.0};
  r.neighbors.data = {9.0, 9.0, 9.0, 9.0};  // no neighbors, never used
  p.output.data = {1.0, 2.0, -1.0, 3.0};
  // unlabeled: mu = relu([0.5, 2.0]) = [0.5, 2.0]; pi = [0.5 + 4, -0.5 + 6]
  const ForwardCache a = forward(p, inst, {kUnassigned});
  CHECK(a.scores[0] == doctest::Approx(4.5));
  CHECK(a.scores[1] == doctest::Approx(5.5));
  // labeled with 1: pre = [0.5 + 0.5, -1 + 2 + 2] = [1, 3]; pi = [1 + 6, -1 + 9]
  const ForwardCache b = forward(p, inst, {1});
  CHECK(b.scores[0] == doctest::Approx(7.0));
  CHECK(b.scores[1] == doctest::Approx(8.0));
  // labeled with 0: pre = [0.5 + 1 + 0.5, -1 + 0 + 2] = [2, 1]
  const ForwardCache c = forward(p, inst, {0});
  CHECK(c.scores[0] == doctest::Approx(4.0));
  CHECK(c.scores[1] == doctest::Approx(1.0));
}

TEST_CASE("backward matches central finite differences") {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 5; ++trial) {
    const CrfInstance inst(hocrf::testing::random_data(rng, {.nodes = 6, .edge_prob = 0.5}));
    const PolicyParams params = PolicyParams::initialize(shape_for(inst, 2, 4), 100 + trial);
    const Labeling y = partial_labels(rng, 6, 3, 0.5);
    std::vector<double> up(18);
    std::normal_distribution<double> g;
    for (double& v : up) v = g(rng);

    const ForwardCache cache = forward(params, inst, y);
    PolicyParams grads = PolicyParams::zeros(params.shape);
    backward(params, inst, cache, up, grads);

    PolicyParams probe = params;
    const auto names = probe.tensors();
    const auto gt = grads.tensors();
    const double h = 1e-5;
    for (std::size_t t = 0; t < names.size(); ++t) {
      Tensor* w = names[t].second;
      for (std::size_t k = 0; k < w->data.size(); ++k) {
        const double keep = w->data[k];
        w->data[k] = keep + h;
        const double fp = weighted_sum(forward(probe, inst, y), up);
        w->data[k] = keep - h;
        const double fm = weighted_sum(forward(probe, inst, y), up);
        w->data[k] = keep;
        const double fd = (fp - fm) / (2 * h);
        const double an = gt[t].second->data[k];
        INFO(names[t].first << "[" << k << "]");
        CHECK(std::abs(fd - an) <= 1e-4 * std::max(1.0, std::abs(fd)));
      }
    }
  }
}

TEST_CASE("output layer gradient is upstream times final embeddings") {
  std::mt19937_64 rng(8);
  const CrfInstance inst(hocrf::testing::random_data(rng, {}));
  const PolicyParams params = PolicyParams::initialize(shape_for(inst, 2, 4), 5);
  const ForwardCache c = forward(params, inst, Labeling(6, kUnassigned));
  std::vector<double> up(18);
  for (double& v : up) v = std::uniform_real_distribution<double>(-1, 1)(rng);
  PolicyParams grads = PolicyParams::zeros(params.shape);
  backward(params, inst, c, up, grads);
  for (int l = 0; l < 3; ++l)
    for (int q = 0; q < 4; ++q) {
      double want = 0.0;
      for (int i = 0; i < 6; ++i) want += up[i * 3 + l] * c.embedding(2, i)[q];
      CHECK(grads.output(l, q) == doctest::Approx(want).epsilon(1e-12));
    }

  PolicyParams zero = PolicyParams::zeros(params.shape);
  backward(params, inst, c, std::vector<double>(18, 0.0), zero);
  for (const auto& [name, t] : zero.tensors())
    for (double v : t->data) CHECK(v == 0.0);
}

TEST_CASE("stale caches are rejected") {
  std::mt19937_64 rng(9);
  const CrfInstance inst(hocrf::testing::random_data(rng, {}));
  PolicyParams params = PolicyParams::initialize(shape_for(inst, 2, 4), 5);
  const ForwardCache c = forward(params, inst, Labeling(6, kUnassigned));
  OptimizerState opt = OptimizerState::create(params.shape);
  PolicyParams grads = PolicyParams::zeros(params.shape);
  optimizer_step(opt, params, grads);
  CHECK_THROWS_AS(backward(params, inst, c, std::vector<double>(18, 0.0), grads), ContractError);
}

TEST_CASE("serial, parallel and incremental scores are bit-identical") {
  std::mt19937_64 rng(10);
  for (int trial = 0; trial < 10; ++trial) {
    const CrfInstance inst(
        hocrf::testing::random_data(rng, {.nodes = 12, .labels = 3, .edge_prob = 0.25}));
    const PolicyParams params = PolicyParams::initialize(shape_for(inst, 3, 8), trial);
    IncrementalScorer inc(params, inst);
    inc.reset(Labeling(12, kUnassigned));
    std::vector<int> order(12);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    Labeling y(12, kUnassigned);
    for (int step = 0; step < 12; ++step) {
      const ForwardCache s = forward_serial(params, inst, y);
      const ForwardCache p = forward(params, inst, y, Execution::kParallel);
      CHECK(s.scores == p.scores);
      CHECK(std::vector<double>(inc.scores().begin(), inc.scores().end()) == s.scores);
      EpisodeState st = EpisodeState::replay(inst, [&] {
        std::vector<Action> acts;
        for (int i = 0; i < 12; ++i)
          if (y[i] != kUnassigned) acts.push_back({i, y[i]});
        return acts;
      }());
      CHECK(inc.best_action() == argmax_action(s, st));
      const int node = order[step];
      y[node] = std::uniform_int_distribution<int>(0, 2)(rng);
      inc.assign(node, y[node]);
    }
    // undo a few assignments
    for (int step = 0; step < 4; ++step) {
      y[order[step]] = kUnassigned;
      inc.unassign(order[step]);
    }
    const ForwardCache s = forward_serial(params, inst, y);
    CHECK(std::vector<double>(inc.scores().begin(), inc.scores().end()) == s.scores);
  }
}

TEST_CASE("scores are permutation equivariant") {
  std::mt19937_64 rng(11);
  const CrfData d = hocrf::testing::random_data(rng, {.nodes = 7, .edge_prob = 0.4});
  std::vector<int> perm(7);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);  // old i -> new perm[i]
  CrfData q = d;
  for (int i = 0; i < 7; ++i) {
    std::copy_n(&d.unary[i * 3], 3, &q.unary[perm[i] * 3]);
    std::copy_n(&d.node_features[i * 4], 4, &q.node_features[perm[i] * 4]);
    std::copy_n(&d.hypercolumns[i * 3], 3, &q.hypercolumns[perm[i] * 3]);
  }
  for (auto& e : q.edges) e = {perm[e.a], perm[e.b]};
  for (auto& c : q.hop1)
    for (int& m : c.members) m = perm[m];
  for (auto& c : q.hop2)
    for (int& m : c.members) m = perm[m];
  const CrfInstance a(d), b(q);
  const PolicyParams params = PolicyParams::initialize(shape_for(a, 3, 5), 1);
  Labeling ya = partial_labels(rng, 7, 3, 0.4), yb(7);
  for (int i = 0; i < 7; ++i) yb[perm[i]] = ya[i];
  const ForwardCache fa = forward(params, a, ya), fb = forward(params, b, yb);
  for (int i = 0; i < 7; ++i)
    for (int l = 0; l < 3; ++l)
      CHECK(fa.scores[i * 3 + l] == doctest::Approx(fb.scores[perm[i] * 3 + l]).epsilon(1e-12));
}

TEST_CASE("scores depend only on the K-hop neighborhood") {
  std::mt19937_64 rng(12);
  const CrfInstance inst = path_instance(10, rng);
  const PolicyParams params = PolicyParams::initialize(shape_for(inst, 3, 4), 2);
  Labeling y(10, kUnassigned);
  const ForwardCache base = forward(params, inst, y);
  CrfData d = inst.data();
  for (int k = 0; k < 3; ++k) d.node_features[9 * 3 + k] += 5.0;
  y[9] = 1;
  const ForwardCache moved = forward(params, CrfInstance(d), y);
  // after three rounds node 9 reaches nodes 7..9 only; hypercolumns are left
  // alone so the edge weights do not move either
  for (int i = 0; i <= 6; ++i)
    for (int l = 0; l < 2; ++l) CHECK(base.scores[i * 2 + l] == moved.scores[i * 2 + l]);
}

TEST_CASE("masked scores hide labeled nodes") {
  std::mt19937_64 rng(13);
  const CrfInstance inst(hocrf::testing::random_data(rng, {}));
  const PolicyParams params = PolicyParams::initialize(shape_for(inst, 2, 4), 2);
  const std::vector<Action> order = {{1, 0}, {4, 2}};
  const EpisodeState st = EpisodeState::replay(inst, order);
  const ForwardCache c = forward(params, inst, st.labels());
  const auto m = masked_scores(c);
  for (int i = 0; i < 6; ++i)
    for (int l = 0; l < 3; ++l) {
      if (st.assigned(i)) CHECK(m[i * 3 + l] == -std::numeric_limits<double>::infinity());
      else CHECK(m[i * 3 + l] == c.scores[i * 3 + l]);
    }
  const Action best = argmax_action(c, st);
  CHECK_FALSE(st.assigned(best.node));
  const auto probs = legal_softmax(c.scores, st);
  CHECK(probs.size() == 12);
  CHECK(std::accumulate(probs.begin(), probs.end(), 0.0) == doctest::Approx(1.0));
}

TEST_CASE("adam updates") {
  PolicyParams p = PolicyParams::zeros({0, 1, 1, 0});
  p.output.data = {0.5};
  OptimizerState opt = OptimizerState::create(p.shape);
  PolicyParams g = PolicyParams::zeros(p.shape);
  optimizer_step(opt, p, g);
  CHECK(p.output.data[0] == 0.5);
  CHECK(opt.step == 1);

  PolicyParams q = PolicyParams::zeros(p.shape);
  q.output.data = {0.5};
  OptimizerState o2 = OptimizerState::create(q.shape);
  g.output.data = {1.0};
  PolicyParams q2 = q;
  OptimizerState o3 = o2;
  optimizer_step(o2, q, g);
  optimizer_step(o3, q2, g);
  CHECK(q.output.data[0] == doctest::Approx(0.5 - 1e-3 * 1.0 / (1.0 + 1e-8)).epsilon(1e-12));
  CHECK(q.same_values(q2));

  g.output.data = {std::numeric_limits<double>::quiet_NaN()};
  const PolicyParams before = q;
  try {
    optimizer_step(o2, q, g);
    FAIL("expected a training error");
  } catch (const TrainingError& e) {
    CHECK(std::string(e.what()).find("output") != std::string::npos);
  }
  CHECK(q.same_values(before));
}

TEST_CASE("parameter files round trip") {
  const PolicyParams p = PolicyParams::initialize({2, 4, 3, 5}, 9);
  OptimizerState opt = OptimizerState::create(p.shape);
  PolicyParams g = PolicyParams::initialize(p.shape, 10);
  PolicyParams q = p;
  optimizer_step(opt, q, g);

  std::stringstream io;
  save_params(io, q, &opt);
  OptimizerState opt_back;
  const PolicyParams back = load_params(io, &opt_back);
  CHECK(back.shape == q.shape);
  CHECK(back.same_values(q));
  CHECK(opt_back.step == 1);
  CHECK(opt_back.first_moment.same_values(opt.first_moment));
  CHECK(opt_back.second_moment.same_values(opt.second_moment));

  std::mt19937_64 rng(1);
  const CrfInstance inst(hocrf::testing::random_data(rng, {.feature_dim = 4}));
  CHECK_THROWS_AS(check_compatible(back.shape, inst), ShapeError);
  CHECK_THROWS_AS(forward(back, inst, Labeling(6, kUnassigned)), ShapeError);

  std::stringstream out;
  save_params(out, p);
  std::string text = out.str();
  text.replace(text.find("\"version\":1"), 11, "\"version\":7");
  std::istringstream bad(text);
  CHECK_THROWS_AS(load_params(bad), ParseError);
}

TEST_CASE("greedy network policy matches a full forward argmax") {
  std::mt19937_64 rng(14);
  const CrfInstance inst(hocrf::testing::random_data(rng, {.nodes = 9, .edge_prob = 0.3}));
  const PolicyParams params = PolicyParams::initialize(shape_for(inst, 3, 6), 4);
  GreedyNetworkPolicy greedy(params);
  const RolloutResult r = rollout(inst, greedy, true);
  EpisodeState st(inst);
  for (const TraceStep& step : r.trace) {
    const ForwardCache c = forward(params, inst, st.labels());
    CHECK(step.action == argmax_action(c, st));
    double sum = 0.0;
    for (double v : step.node_probability) sum += v;
    CHECK(sum == doctest::Approx(1.0));
    apply_action(inst, st, step.action, RewardScheme::kEnergyDelta);
  }
}

}  // TEST_SUITE
