#include <doctest.h>

#include <cmath>
#include <limits>
#include <random>

#include "hocrf/baselines.hpp"
#include "hocrf/errors.hpp"
#include "support.hpp"

using namespace hocrf;
using hocrf::testing::for_each_labeling;

namespace {

double exhaustive_min(const CrfInstance& inst) {
  double best = std::numeric_limits<double>::infinity();
  for_each_labeling(inst.num_nodes(), inst.num_labels(), [&](const Labeling& y) {
    best = std::min(best, hocrf::testing::oracle_energy(inst.data(), inst.mask(), y));
  });
  return best;
}

void check_recompute(const CrfInstance& inst, const SolverResult& r) {
  REQUIRE(r.labeling.size() == static_cast<std::size_t>(inst.num_nodes()));
  CHECK(r.energy == total_energy(inst, r.labeling));
}

}  // namespace

TEST_SUITE("baselines") {

TEST_CASE("brute force examples") {
  CrfData d;
  d.num_nodes = 2;
  d.num_labels = 2;
  d.hypercolumn_dim = 1;
  d.hypercolumns = {0.0, 0.0};
  d.unary = {0.0, 1.0, 1.0, 0.0};
  d.edges = {{0, 1}};
  d.alpha_p = 10.0;
  d.beta_p = 1.0;
  const CrfInstance inst(d);
  const SolverResult r = brute_force_map(inst);
  CHECK(r.labeling == Labeling{0, 0});  // lexicographic tie with {1, 1}
  CHECK(r.energy == 1.0);
  check_recompute(inst, r);

  const CrfInstance unary = inst.masked({false, false, false});
  CHECK(brute_force_map(unary).labeling == Labeling{0, 1});
  CHECK_THROWS_AS(brute_force_map(inst, 3), ValidationError);
}

TEST_CASE("brute force serial and parallel agree with exhaustive search") {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 100; ++trial) {
    const CrfInstance inst(hocrf::testing::random_data(
        rng, {.nodes = 6, .labels = 3, .edge_prob = 0.4, .hop1 = 2, .hop2 = 2}));
    const SolverResult s = brute_force_map(inst, kBruteForceCap, Execution::kSerial);
    const SolverResult p = brute_force_map(inst, kBruteForceCap, Execution::kParallel);
    CHECK(s.labeling == p.labeling);
    CHECK(s.energy == p.energy);
    CHECK(s.energy == doctest::Approx(exhaustive_min(inst)).epsilon(1e-12));
  }
}

TEST_CASE("local search never beats the optimum and never worsens its start") {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 200; ++trial) {
    const int n = 4 + trial % 7;
    const int labels = 2 + trial % 2;
    const CrfInstance inst(hocrf::testing::random_data(
        rng, {.nodes = n, .labels = labels, .edge_prob = 0.35, .hop1 = 1, .hop2 = 1}));
    const double opt = brute_force_map(inst).energy;
    const Labeling init = hocrf::testing::random_labeling(rng, n, labels);
    const double e0 = total_energy(inst, init);
    const SolverResult i = icm(inst, init);
    const SolverResult a = simulated_annealing(inst, {1.0, 0.01, 50}, trial, init);
    check_recompute(inst, i);
    check_recompute(inst, a);
    CHECK(i.energy >= opt - 1e-12);
    CHECK(a.energy >= opt - 1e-12);
    CHECK(i.energy <= e0);
    CHECK(a.energy <= e0);
  }
}

TEST_CASE("icm fixed points") {
  std::mt19937_64 rng(3);
  const CrfInstance inst(hocrf::testing::random_data(rng, {.nodes = 7, .hop1 = 2, .hop2 = 1}));
  const SolverResult bf = brute_force_map(inst);
  CHECK(icm(inst, bf.labeling).labeling == bf.labeling);

  const CrfInstance unary = inst.masked({false, false, false});
  const SolverResult u = icm(unary);
  for (int i = 0; i < 7; ++i) CHECK(u.labeling[i] == unary.unary_argmin(i));

  const SolverResult r = icm(inst, hocrf::testing::random_labeling(rng, 7, 3));
  for (int i = 0; i < 7; ++i)
    for (Label l = 0; l < 3; ++l) CHECK(relabel_delta(inst, r.labeling, i, l) >= -1e-12);
}

TEST_CASE("relabel delta matches recomputation") {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    const CrfInstance inst(hocrf::testing::random_data(rng, {.nodes = 7, .hop1 = 2, .hop2 = 2}));
    Labeling y = hocrf::testing::random_labeling(rng, 7, 3);
    const double e = total_energy(inst, y);
    const int node = trial % 7;
    const Label l = (y[node] + 1) % 3;
    const double delta = relabel_delta(inst, y, node, l);
    y[node] = l;
    CHECK(delta == doctest::Approx(total_energy(inst, y) - e).epsilon(1e-12));
  }
}

TEST_CASE("annealing is seeded and cold annealing ends in a local minimum") {
  std::mt19937_64 rng(5);
  const CrfInstance inst(hocrf::testing::random_data(rng, {.nodes = 9, .hop1 = 2, .hop2 = 2}));
  const SolverResult a = simulated_annealing(inst, {}, 11);
  const SolverResult b = simulated_annealing(inst, {}, 11);
  CHECK(a.labeling == b.labeling);
  const SolverResult cold = simulated_annealing(inst, {1e-9, 1e-12, 100}, 3);
  for (int i = 0; i < 9; ++i)
    for (Label l = 0; l < 3; ++l) CHECK(relabel_delta(inst, cold.labeling, i, l) >= -1e-12);
}

TEST_CASE("annealing improves on its start for most instances") {
  std::mt19937_64 rng(6);
  int ok = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const CrfInstance inst(hocrf::testing::random_data(rng, {.nodes = 10, .hop1 = 2, .hop2 = 2}));
    const Labeling init = hocrf::testing::random_labeling(rng, 10, 3);
    ok += simulated_annealing(inst, {}, trial, init).energy <= total_energy(inst, init);
  }
  CHECK(ok >= 95);
}

TEST_CASE("belief propagation is exact on trees") {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 200; ++trial) {
    const int n = 2 + trial % 9;
    const int labels = 2 + trial % 2;
    const int hop1 = trial % 3;
    const CrfInstance inst(hocrf::testing::random_tree_data(rng, n, labels, hop1));
    const SolverResult bp = loopy_bp_map(inst);
    const SolverResult bf = brute_force_map(inst);
    check_recompute(inst, bp);
    INFO("trial " << trial);
    CHECK(bp.energy == doctest::Approx(bf.energy).epsilon(1e-9));
  }
}

TEST_CASE("belief propagation edge cases") {
  CrfData d;
  d.num_nodes = 1;
  d.num_labels = 3;
  d.unary = {2.0, 0.5, 1.0};
  CHECK(loopy_bp_map(CrfInstance(d)).labeling == Labeling{1});

  std::mt19937_64 rng(8);
  const CrfInstance tree(hocrf::testing::random_tree_data(rng, 8, 3, 2));
  const SolverResult undamped = loopy_bp_map(tree, {100, 0.0, 1e-9});
  CHECK(undamped.energy == doctest::Approx(brute_force_map(tree).energy));

  const CrfInstance with_hop2(hocrf::testing::random_data(rng, {.hop2 = 1}));
  CHECK_THROWS_AS(loopy_bp_map(with_hop2), ValidationError);
  CHECK_NOTHROW(loopy_bp_map(with_hop2.masked({true, true, false})));
}

TEST_CASE("unary argmin solver") {
  std::mt19937_64 rng(9);
  const CrfInstance inst(hocrf::testing::random_data(rng, {}));
  const SolverResult r = unary_argmin_solver(inst);
  for (int i = 0; i < 6; ++i) CHECK(r.labeling[i] == inst.unary_argmin(i));
  check_recompute(inst, r);
}

TEST_CASE("supervised classifier") {
  SUBCASE("separable features are learned exactly") {
    std::mt19937_64 rng(10);
    Dataset ds;
    for (int k = 0; k < 4; ++k) {
      CrfData d = hocrf::testing::random_data(rng, {.nodes = 8, .labels = 3, .feature_dim = 3});
      const Labeling truth = hocrf::testing::random_labeling(rng, 8, 3);
      for (int i = 0; i < 8; ++i)
        for (int f = 0; f < 3; ++f) d.node_features[i * 3 + f] = truth[i] == f ? 1.0 : 0.0;
      ds.samples.push_back({CrfInstance(d), truth});
    }
    const SupervisedClassifier clf = SupervisedClassifier::fit(ds);
    for (const Sample& s : ds.samples) {
      const SolverResult r = clf.predict(s.instance);
      CHECK(score(r.labeling, s.truth).accuracy == 1.0);
      // graph structure plays no part
      CrfData stripped = s.instance.data();
      stripped.edges.clear();
      stripped.hop1.clear();
      CHECK(clf.predict(CrfInstance(stripped)).labeling == r.labeling);
    }
  }
  SUBCASE("empty training data") {
    CHECK_THROWS(SupervisedClassifier::fit(Dataset{}));
  }
  SUBCASE("noiseless generator features") {
    int ok = 0;
    for (int k = 0; k < 20; ++k) {
      InstanceSpec spec;
      spec.width = 4;
      spec.height = 4;
      spec.unary_noise = 0.0;
      spec.seed = 500 + 10 * k;
      const Dataset ds = generate_dataset(spec, 6, 2);
      Dataset train;
      for (int idx : ds.train) train.samples.push_back(ds.samples[idx]);
      const SupervisedClassifier clf = SupervisedClassifier::fit(train);
      double sup = 0.0, arg = 0.0;
      for (int idx : ds.validation) {
        const Sample& s = ds.samples[idx];
        sup += score(clf.predict(s.instance).labeling, s.truth).accuracy;
        arg += score(unary_argmin_solver(s.instance).labeling, s.truth).accuracy;
      }
      ok += sup >= arg;
    }
    CHECK(ok == 20);
  }
}

}  // TEST_SUITE
