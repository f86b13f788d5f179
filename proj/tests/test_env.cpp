#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "hocrf/env.hpp"
#include "hocrf/errors.hpp"
#include "support.hpp"

using namespace hocrf;

namespace {

CrfInstance unary_only(std::vector<double> unary, int labels) {
  CrfData d;
  d.num_nodes = static_cast<int>(unary.size()) / labels;
  d.num_labels = labels;
  d.unary = std::move(unary);
  return CrfInstance(d);
}

// 3 fully connected nodes with open gates and one HOP1 clique over all of them.
CrfInstance triangle() {
  CrfData d;
  d.num_nodes = 3;
  d.num_labels = 2;
  d.hypercolumn_dim = 1;
  d.hypercolumns = {0.0, 0.0, 0.0};
  d.unary = {1.0, 2.0, 0.5, 0.25, 3.0, 4.0};
  d.edges = {{0, 1}, {1, 2}, {0, 2}};
  d.alpha_p = 1.5;
  d.beta_p = 1.0;
  d.hop1 = {{{0, 1, 2}, 0, 1.0, 0.75}};
  return CrfInstance(d);
}

std::vector<Action> random_order(std::mt19937_64& rng, const Labeling& y) {
  std::vector<Action> order;
  for (int i = 0; i < static_cast<int>(y.size()); ++i) order.push_back({i, y[i]});
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

class FixedOrderPolicy final : public Policy {
 public:
  explicit FixedOrderPolicy(std::vector<Action> order) : order_(std::move(order)) {}
  void begin(const CrfInstance&, const EpisodeState&) override {}
  Action choose(const CrfInstance&, const EpisodeState& s) override {
    return order_[s.num_assigned()];
  }

 private:
  std::vector<Action> order_;
};

}  // namespace

TEST_SUITE("env") {

TEST_CASE("legal action counts") {
  const CrfInstance inst = unary_only({1, 2, 3, 4, 5, 6}, 2);
  EpisodeState s(inst);
  CHECK(legal_actions(s).size() == 6);
  apply_action(inst, s, {1, 0}, RewardScheme::kEnergyDelta);
  apply_action(inst, s, {0, 1}, RewardScheme::kEnergyDelta);
  const auto last = legal_actions(s);
  REQUIRE(last.size() == 2);
  CHECK(last[0] == Action{2, 0});
  CHECK(last[1] == Action{2, 1});
  apply_action(inst, s, {2, 1}, RewardScheme::kEnergyDelta);
  CHECK(legal_actions(s).empty());
  CHECK(s.complete());
}

TEST_CASE("illegal actions are rejected") {
  const CrfInstance inst = unary_only({1, 2, 3, 4}, 2);
  EpisodeState s(inst);
  apply_action(inst, s, {0, 0}, RewardScheme::kSign);
  CHECK_THROWS_AS(apply_action(inst, s, {0, 1}, RewardScheme::kSign), ContractError);
  CHECK_THROWS_AS(apply_action(inst, s, {1, 2}, RewardScheme::kSign), ContractError);
  CHECK_THROWS_AS(apply_action(inst, s, {5, 0}, RewardScheme::kSign), ContractError);
}

TEST_CASE("rewards follow the grounding table") {
  const CrfInstance inst = triangle();
  EpisodeState s(inst);
  CHECK(s.energy() == 0.0);
  // t = 1: r = -f_1(y_1)
  CHECK(apply_action(inst, s, {0, 1}, RewardScheme::kEnergyDelta) == -2.0);
  CHECK(s.energy() == 2.0);
  // t = 2: r = -f_2(y_2) - f_12(y_1, y_2)
  CHECK(apply_action(inst, s, {1, 0}, RewardScheme::kEnergyDelta) == -(0.5 + 1.5));
  // t = 3: unary, two edges and the completed clique
  const double r3 = apply_action(inst, s, {2, 0}, RewardScheme::kEnergyDelta);
  CHECK(r3 == doctest::Approx(-(3.0 + 0.0 + 1.5 + 0.75)));
  CHECK(s.energy() == doctest::Approx(total_energy(inst, {1, 0, 0})));
}

TEST_CASE("unary-only rewards under both schemes") {
  const CrfInstance inst = unary_only({1.0, 3.0}, 2);
  const EpisodeState s(inst);
  CHECK(step(inst, s, {0, 1}, RewardScheme::kEnergyDelta).reward == -3.0);
  CHECK(step(inst, s, {0, 1}, RewardScheme::kSign).reward == -1.0);
  CHECK(step(inst, s, {0, 0}, RewardScheme::kSign).reward == 1.0);
}

TEST_CASE("sign reward ties go to -1") {
  const CrfInstance inst = unary_only({2.0, 2.0, 5.0}, 3);
  const EpisodeState s(inst);
  CHECK(action_reward(inst, s, {0, 0}, RewardScheme::kSign) == -1.0);
  CHECK(action_reward(inst, s, {0, 1}, RewardScheme::kSign) == -1.0);
  CHECK(action_reward(inst, s, {0, 2}, RewardScheme::kSign) == -1.0);
}

TEST_CASE("scheme-1 returns telescope to the negative energy") {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 200; ++trial) {
    const CrfInstance inst(hocrf::testing::random_data(
        rng, {.nodes = 8, .labels = 3, .edge_prob = 0.4, .hop1 = 2, .hop2 = 2}));
    const Labeling y = hocrf::testing::random_labeling(rng, 8, 3);
    EpisodeState s(inst);
    double total = 0.0;
    int steps = 0;
    for (Action a : random_order(rng, y)) {
      const double sign = action_reward(inst, s, a, RewardScheme::kSign);
      CHECK((sign == 1.0 || sign == -1.0));
      total += apply_action(inst, s, a, RewardScheme::kEnergyDelta);
      ++steps;
      CHECK(s.energy() == doctest::Approx(partial_energy(inst, s.labels())).epsilon(1e-12));
    }
    CHECK(steps == 8);
    CHECK(std::abs(total + total_energy(inst, y)) <= 1e-9);
  }
}

TEST_CASE("final return does not depend on the order") {
  std::mt19937_64 rng(22);
  const CrfInstance inst(hocrf::testing::random_data(rng, {.nodes = 7, .hop1 = 2, .hop2 = 2}));
  const Labeling y = hocrf::testing::random_labeling(rng, 7, 3);
  auto ret = [&](const std::vector<Action>& order) {
    EpisodeState s(inst);
    double r = 0.0;
    for (Action a : order) r += apply_action(inst, s, a, RewardScheme::kEnergyDelta);
    return r;
  };
  const double first = ret(random_order(rng, y));
  for (int k = 0; k < 10; ++k)
    CHECK(ret(random_order(rng, y)) == doctest::Approx(first).epsilon(1e-12));
}

TEST_CASE("sign reward compares every alternative label") {
  std::mt19937_64 rng(23);
  for (int trial = 0; trial < 100; ++trial) {
    const CrfInstance inst(hocrf::testing::random_data(rng, {.nodes = 6, .hop1 = 2, .hop2 = 2}));
    const Labeling y = hocrf::testing::random_labeling(rng, 6, 3);
    const auto order = random_order(rng, y);
    EpisodeState s(inst);
    for (Action a : order) {
      Labeling with = s.labels();
      bool strict = true;
      with[a.node] = a.label;
      const double mine = partial_energy(inst, with);
      for (Label alt = 0; alt < 3; ++alt) {
        if (alt == a.label) continue;
        with[a.node] = alt;
        strict = strict && mine < partial_energy(inst, with);
      }
      CHECK(action_reward(inst, s, a, RewardScheme::kSign) == (strict ? 1.0 : -1.0));
      apply_action(inst, s, a, RewardScheme::kSign);
    }
  }
}

TEST_CASE("rollout runs N steps of the policy") {
  const CrfInstance inst = unary_only({1.0, 0.5, 3.0, 0.0, 0.2, 0.1}, 2);
  UnaryArgminPolicy argmin;
  const RolloutResult r = rollout(inst, argmin, true);
  CHECK(r.labeling == Labeling{1, 1, 1});
  CHECK(r.trace.size() == 3);
  CHECK(r.energy == doctest::Approx(0.5 + 0.0 + 0.1));
  CHECK(rollout(inst, argmin).labeling == r.labeling);

  const CrfInstance single = unary_only({4.0, 1.0, 2.0}, 3);
  CHECK(rollout(single, argmin).labeling == Labeling{1});

  FixedOrderPolicy fixed({{2, 0}, {0, 0}, {1, 1}});
  const RolloutResult f = rollout(inst, fixed, true);
  CHECK(f.labeling == Labeling{0, 1, 0});
  CHECK(f.trace[0].action == Action{2, 0});
  CHECK(f.trace[2].t == 3);
}

TEST_CASE("trace round trip") {
  const CrfInstance inst = triangle();
  UnaryArgminPolicy argmin;
  const RolloutResult r = rollout(inst, argmin, true, RewardScheme::kSign);
  std::stringstream io;
  write_trace(io, r.trace);
  const auto back = read_trace(io);
  REQUIRE(back.size() == r.trace.size());
  for (std::size_t k = 0; k < back.size(); ++k) {
    CHECK(back[k].action == r.trace[k].action);
    CHECK(back[k].reward == r.trace[k].reward);
    CHECK(back[k].energy == r.trace[k].energy);
    CHECK(back[k].node_probability == r.trace[k].node_probability);
  }
}

TEST_CASE("replay reproduces the incremental state") {
  std::mt19937_64 rng(24);
  const CrfInstance inst(hocrf::testing::random_data(rng, {.nodes = 6, .hop1 = 2, .hop2 = 1}));
  const Labeling y = hocrf::testing::random_labeling(rng, 6, 3);
  const auto order = random_order(rng, y);
  EpisodeState s(inst);
  for (Action a : order) apply_action(inst, s, a, RewardScheme::kSign);
  const EpisodeState r = EpisodeState::replay(inst, order);
  CHECK(r.labels() == s.labels());
  CHECK(r.energy() == s.energy());
  for (int c = 0; c < 2; ++c)
    for (Label l = 0; l < 3; ++l) CHECK(r.hop1_count(c, l) == s.hop1_count(c, l));
}

}  // TEST_SUITE
