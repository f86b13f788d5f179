#pragma once

#include <cstdint>
#include <exception>
#include <functional>
#include <iosfwd>
#include <map>
#include <nlohmann/json.hpp>
#include <optional>
#include <string>
#include <vector>

#include "hocrf/baselines.hpp"
#include "hocrf/dqn.hpp"
#include "hocrf/instances.hpp"
#include "hocrf/mcts.hpp"

namespace hocrf::cli {

enum ExitCode : int {
  kOk = 0,
  kFailure = 1,     // unexpected internal error
  kUsage = 2,       // bad command line
  kInvalid = 3,     // invalid configuration or input values
  kParse = 4,       // malformed input file
  kShape = 5,       // parameters and instances disagree
  kTraining = 6,    // trainer failure
  kIo = 7,          // file could not be opened or written
};

// Maps an exception to its exit code and a "<category>: message" line.
std::pair<int, std::string> classify(const std::exception& e);

// Entry point shared by the executable and the tests.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

// ---------------------------------------------------------------------------
// Configuration. Every reader rejects unknown keys and names the offending field.

struct GenerateConfig {
  InstanceSpec spec;
  int count = 100;
  int validation = 0;
};
// width, height and num_labels are required; everything else has a default.
GenerateConfig generate_config_from_json(const nlohmann::json& j);

struct TrainConfig {
  std::string trainer = "dqn";  // "dqn" or "mcts"
  DqnConfig dqn;
  MctsConfig mcts;
};
TrainConfig train_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const TrainConfig& config);

// ---------------------------------------------------------------------------
// Evaluation

struct EvalRow {
  std::string solver;
  std::string potentials;  // "U", "U+P", "U+P+HOP1", "U+P+HOP1+HOP2"
  int instances = 0;       // instances the solver could handle
  int unsupported = 0;
  double accuracy = 0.0;
  double mean_iou = 0.0;
  double mean_energy = 0.0;
  int gap_instances = 0;       // instances where brute force was feasible
  double mean_gap = 0.0;       // mean of E - E_map over gap_instances
  double relative_gap = 0.0;   // (mean E - mean E_map) / |mean E_map| over gap_instances
};

// Named labeling source evaluated on each masked instance.
struct EvalSource {
  std::string name;
  // Returns nullopt when the source cannot handle the instance.
  std::function<std::optional<Labeling>(int index, const CrfInstance& masked)> solve;
};

std::vector<EvalRow> evaluate(const Dataset& dataset, const std::vector<int>& indices,
                              const std::vector<EvalSource>& sources,
                              const std::vector<PotentialMask>& columns,
                              std::uint64_t brute_force_cap = kBruteForceCap);

void write_eval_csv(std::ostream& out, const std::vector<EvalRow>& rows);
nlohmann::json eval_to_json(const std::vector<EvalRow>& rows);

struct RewardHistogram {
  std::vector<double> edges;  // bins + 1
  std::vector<int> correct;
  std::vector<int> incorrect;
};

// Scheme-1 rewards of a policy's rollouts, split by whether the chosen label
// matches the ground truth.
RewardHistogram reward_histogram(const Dataset& dataset, const std::vector<int>& indices,
                                 Policy& policy, int bins);

// ---------------------------------------------------------------------------
// Benchmark

struct LinearFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r2 = 0.0;
};
LinearFit fit_line(const std::vector<double>& x, const std::vector<double>& y);

struct BenchRow {
  int nodes = 0;
  double greedy_seconds = 0.0;
  double mcts_seconds = 0.0;
};

// Instance with `nodes` cells on a 10-wide grid (a 1-wide strip when 10 does
// not divide `nodes`), using `base` for everything except the grid size.
InstanceSpec bench_spec(const InstanceSpec& base, int nodes);

// Times both engines on one generated instance per size; each time is the
// median of `repeats` runs.
std::vector<BenchRow> run_bench(const PolicyParams& params, const InstanceSpec& base,
                                const std::vector<int>& sizes, const SearchConfig& search,
                                int repeats, std::uint64_t seed);

// N x p final-round embeddings of the fully unlabeled state.
std::vector<std::vector<double>> export_embeddings(const PolicyParams& params,
                                                   const CrfInstance& instance);

}  // namespace hocrf::cli
