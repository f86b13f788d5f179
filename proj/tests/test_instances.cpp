#include <doctest.h>

#include <random>
#include <sstream>
#include <string>

#include "hocrf/errors.hpp"
#include "hocrf/instances.hpp"
#include "support.hpp"

using namespace hocrf;

namespace {

std::string dump(const Dataset& ds) {
  std::ostringstream out;
  save_dataset(out, ds);
  return out.str();
}

InstanceSpec busy_spec(std::uint64_t seed) {
  InstanceSpec s;
  s.width = 5;
  s.height = 4;
  s.num_labels = 4;
  s.num_regions = 3;
  s.num_hop1 = 2;
  s.num_hop2 = 2;
  s.seed = seed;
  return s;
}

}  // namespace

TEST_SUITE("instances") {

TEST_CASE("noiseless unaries are minimized by the ground truth") {
  InstanceSpec s = busy_spec(3);
  s.unary_noise = 0.0;
  s.hop2_missed = false;
  for (int k = 0; k < 10; ++k) {
    s.seed = k;
    const Sample smp = generate(s);
    for (int i = 0; i < smp.instance.num_nodes(); ++i)
      CHECK(smp.instance.unary_argmin(i) == smp.truth[i]);
  }
}

TEST_CASE("generation is deterministic in the seed") {
  const Dataset a = generate_dataset(busy_spec(7), 5, 2);
  const Dataset b = generate_dataset(busy_spec(7), 5, 2);
  CHECK(dump(a) == dump(b));
  const Dataset c = generate_dataset(busy_spec(8), 5, 2);
  CHECK(dump(a) != dump(c));
  CHECK(a.validation == std::vector<int>{3, 4});
  CHECK(a.train == std::vector<int>{0, 1, 2});
}

TEST_CASE("generated instances satisfy the structural invariants") {
  const InstanceSpec s = busy_spec(1);
  const Sample smp = generate(s);
  const CrfData& d = smp.instance.data();
  CHECK_NOTHROW(validate(d));
  CHECK(d.num_nodes == 20);
  CHECK(d.feature_dim == s.feature_dim());
  CHECK(d.edges.size() == 4 * 4 + 3 * 5);  // 4-connected 5 x 4 grid
  CHECK(d.hop1.size() == 2);
  CHECK(d.hop2.size() == 2);
  for (const auto& c : d.hop2) CHECK(c.label == s.num_labels - 1);
  CHECK(smp.truth.size() == 20);
}

TEST_CASE("zero cliques give a pairwise instance") {
  InstanceSpec s = busy_spec(2);
  s.num_hop1 = 0;
  s.num_hop2 = 0;
  const Sample smp = generate(s);
  CHECK(smp.instance.hop1().empty());
  CHECK(smp.instance.hop2().empty());
}

TEST_CASE("planted truth beats random labelings") {
  std::mt19937_64 rng(4);
  for (int k = 0; k < 5; ++k) {
    InstanceSpec s = busy_spec(100 + k);
    s.unary_noise = 0.3;
    const Sample smp = generate(s);
    const double e_truth = total_energy(smp.instance, smp.truth);
    int worse = 0;
    for (int t = 0; t < 1000; ++t)
      worse += total_energy(smp.instance, hocrf::testing::random_labeling(rng, 20, 4)) > e_truth;
    CHECK(worse >= 950);
  }
}

TEST_CASE("dataset round trip is lossless") {
  for (int k = 0; k < 100; ++k) {
    const Dataset ds = generate_dataset(busy_spec(1000 + k), 1, 0);
    std::istringstream in(dump(ds));
    const Dataset back = load_dataset(in);
    REQUIRE(back.size() == 1);
    CHECK(back.samples[0].instance.data() == ds.samples[0].instance.data());
    CHECK(back.samples[0].truth == ds.samples[0].truth);
    CHECK(dump(back) == dump(ds));
  }
}

TEST_CASE("single instance round trip") {
  const Sample smp = generate(busy_spec(5));
  std::ostringstream out;
  save_instance(out, smp.instance, &smp.truth);
  std::istringstream in(out.str());
  const Sample back = load_instance(in);
  CHECK(back.instance.data() == smp.instance.data());
  CHECK(back.truth == smp.truth);
}

TEST_CASE("malformed files are rejected") {
  const std::string text = dump(generate_dataset(busy_spec(6), 2, 1));

  SUBCASE("truncated") {
    std::istringstream in(text.substr(0, text.size() / 2));
    CHECK_THROWS_AS(load_dataset(in), ParseError);
  }
  SUBCASE("unknown field names the field and line") {
    std::string bad = text;
    const auto pos = bad.find("\"alpha_p\"");
    bad.insert(pos, "\"colour\":1,");
    std::istringstream in(bad);
    try {
      load_dataset(in);
      FAIL("expected a parse error");
    } catch (const ParseError& e) {
      CHECK(e.field() == "colour");
      CHECK(e.line() == 2);
    }
  }
  SUBCASE("label out of range") {
    std::string bad = text;
    const auto pos = bad.find("\"labels\":[");
    bad.replace(pos + 10, 1, "9");
    std::istringstream in(bad);
    CHECK_THROWS_AS(load_dataset(in), ValidationError);
  }
  SUBCASE("bad json") {
    std::istringstream in("{\"record\":\"dataset\"\n");
    CHECK_THROWS_AS(load_dataset(in), ParseError);
  }
  SUBCASE("empty") {
    std::istringstream in("");
    CHECK_THROWS_AS(load_dataset(in), ParseError);
  }
}

TEST_CASE("score") {
  const Metrics same = score({0, 1, 2}, {0, 1, 2});
  CHECK(same.accuracy == 1.0);
  CHECK(same.mean_iou == 1.0);

  const Metrics disjoint = score({1, 1}, {0, 0});
  CHECK(disjoint.accuracy == 0.0);
  CHECK(disjoint.mean_iou == 0.0);

  const Metrics m = score({0, 1, 1, 1}, {0, 0, 1, 1});
  CHECK(m.accuracy == doctest::Approx(0.75));
  CHECK(m.mean_iou == doctest::Approx((0.5 + 2.0 / 3.0) / 2.0));

  CHECK_THROWS(score({0, 1}, {0, 1, 1}));
}

TEST_CASE("labelings round trip") {
  std::vector<LabelingRecord> recs = {{0, {0, 1, 2}, 1.25}, {3, {2, 2}, 0.1}};
  std::ostringstream out;
  save_labelings(out, recs);
  std::istringstream in(out.str());
  const auto back = load_labelings(in);
  REQUIRE(back.size() == 2);
  CHECK(back[1].instance == 3);
  CHECK(back[1].labels == Labeling{2, 2});
  CHECK(back[0].energy == 1.25);
}

TEST_CASE("spec validation") {
  InstanceSpec s;
  s.num_labels = 1;
  CHECK_THROWS_AS(validate(s), ValidationError);
  s = {};
  s.unary_noise = 1.5;
  CHECK_THROWS_AS(validate(s), ValidationError);
  s = {};
  s.hop2_divisor = {1.0, 2.0};
  CHECK_THROWS_AS(validate(s), ValidationError);
  CHECK_THROWS_AS(generate(s), ValidationError);
}

}  // TEST_SUITE
