#include "hocrf/commands.hpp"

#include <CLI11.hpp>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <ostream>
#include <set>
#include <sstream>

#include "hocrf/errors.hpp"

namespace hocrf::cli {

using nlohmann::json;
namespace fs = std::filesystem;

std::pair<int, std::string> classify(const std::exception& e) {
  if (dynamic_cast<const ParseError*>(&e)) return {kParse, std::string("parse error: ") + e.what()};
  if (dynamic_cast<const ShapeError*>(&e)) return {kShape, std::string("shape error: ") + e.what()};
  if (dynamic_cast<const ValidationError*>(&e) || dynamic_cast<const ContractError*>(&e))
    return {kInvalid, std::string("invalid input: ") + e.what()};
  if (dynamic_cast<const TrainingError*>(&e))
    return {kTraining, std::string("training error: ") + e.what()};
  if (dynamic_cast<const IoError*>(&e)) return {kIo, std::string("io error: ") + e.what()};
  return {kFailure, std::string("internal error: ") + e.what()};
}

// ---------------------------------------------------------------------------
// Strict JSON field reader

namespace {

class Fields {
 public:
  Fields(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw ValidationError(where_ + ": expected a JSON object");
  }

  template <typename T>
  bool get(const std::string& key, T& out) {
    if (!j_.contains(key)) return false;
    used_.insert(key);
    const json& v = j_.at(key);
    try {
      if constexpr (std::is_same_v<T, bool>) {
        if (!v.is_boolean()) throw std::invalid_argument("boolean");
      } else if constexpr (std::is_integral_v<T>) {
        if (!v.is_number_integer()) throw std::invalid_argument("integer");
      } else if constexpr (std::is_floating_point_v<T>) {
        if (!v.is_number()) throw std::invalid_argument("number");
      } else if constexpr (std::is_same_v<T, std::string>) {
        if (!v.is_string()) throw std::invalid_argument("string");
      }
      out = v.get<T>();
    } catch (const std::exception& e) {
      throw ValidationError(where_ + ": field '" + key + "' has the wrong type (expected " +
                            e.what() + ")");
    }
    return true;
  }

  void get_range(const std::string& key, Range& out) {
    std::vector<double> v;
    if (!j_.contains(key)) return;
    used_.insert(key);
    const json& x = j_.at(key);
    if (!x.is_array() || x.size() != 2 || !x[0].is_number() || !x[1].is_number())
      throw ValidationError(where_ + ": field '" + key + "' must be [min, max]");
    out = {x[0].get<double>(), x[1].get<double>()};
  }

  template <typename T>
  void require(const std::string& key, T& out) {
    if (!get(key, out)) throw ValidationError(where_ + ": missing required field '" + key + "'");
  }

  std::optional<json> object(const std::string& key) {
    if (!j_.contains(key)) return std::nullopt;
    used_.insert(key);
    return std::optional<json>(std::in_place, j_.at(key));
  }

  void finish() const {
    for (const auto& item : j_.items())
      if (!used_.count(item.key()))
        throw ValidationError(where_ + ": unknown field '" + item.key() + "'");
  }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string> used_;
};

}  // namespace

GenerateConfig generate_config_from_json(const json& j) {
  GenerateConfig c;
  InstanceSpec& s = c.spec;
  Fields f(j, "spec");
  f.require("width", s.width);
  f.require("height", s.height);
  f.require("num_labels", s.num_labels);
  f.get("unary_noise", s.unary_noise);
  f.get("unary_scale", s.unary_scale);
  f.get("feature_noise", s.feature_noise);
  f.get("hypercolumn_dim", s.hypercolumn_dim);
  f.get("num_regions", s.num_regions);
  f.get("num_hop1", s.num_hop1);
  f.get("num_hop2", s.num_hop2);
  f.get_range("hop1_confidence", s.hop1_confidence);
  f.get_range("hop1_weight", s.hop1_weight);
  f.get_range("hop2_penalty", s.hop2_penalty);
  f.get_range("hop2_divisor", s.hop2_divisor);
  f.get_range("hop2_size", s.hop2_size);
  f.get("hop2_label", s.hop2_label);
  f.get("hop2_missed", s.hop2_missed);
  f.get("alpha_p", s.alpha_p);
  f.get("beta_p", s.beta_p);
  f.get("seed", s.seed);
  f.get("count", c.count);
  f.get("validation", c.validation);
  f.finish();
  validate(s);
  if (c.count < 1) throw ValidationError("spec: count must be >= 1");
  if (c.validation < 0 || c.validation > c.count)
    throw ValidationError("spec: validation must be in [0, count]");
  return c;
}

TrainConfig train_config_from_json(const json& j) {
  TrainConfig c;
  Fields f(j, "config");
  f.get("trainer", c.trainer);
  if (c.trainer != "dqn" && c.trainer != "mcts")
    throw ValidationError("config: field 'trainer' must be \"dqn\" or \"mcts\"");

  // Shared keys apply to both trainers.
  int scheme = 2;
  f.get("scheme", scheme);
  std::uint64_t seed = 0;
  const bool has_seed = f.get("seed", seed);
  int epochs = 10, rounds = 3, embed = 32, batch = 64, episodes = 10;
  std::size_t capacity = 100000;
  double lr = 1e-3;
  const bool has_epochs = f.get("epochs", epochs);
  const bool has_rounds = f.get("rounds", rounds);
  const bool has_embed = f.get("embed_dim", embed);
  const bool has_batch = f.get("batch_size", batch);
  const bool has_episodes = f.get("episodes_per_graph", episodes);
  const bool has_capacity = f.get("buffer_capacity", capacity);
  const bool has_lr = f.get("learning_rate", lr);

  c.dqn.scheme = c.mcts.scheme = reward_scheme_from_int(scheme);
  if (has_seed) c.dqn.seed = c.mcts.seed = seed;
  if (has_epochs) c.dqn.epochs = c.mcts.epochs = epochs;
  if (has_rounds) c.dqn.rounds = c.mcts.rounds = rounds;
  if (has_embed) c.dqn.embed_dim = c.mcts.embed_dim = embed;
  if (has_batch) c.dqn.batch_size = c.mcts.batch_size = batch;
  if (has_episodes) c.dqn.episodes_per_graph = c.mcts.episodes_per_graph = episodes;
  if (has_capacity) c.dqn.buffer_capacity = c.mcts.buffer_capacity = capacity;
  if (has_lr) c.dqn.adam.learning_rate = c.mcts.adam.learning_rate = lr;

  if (auto d = f.object("dqn")) {
    Fields g(*d, "config.dqn");
    g.get("gamma", c.dqn.gamma);
    g.get("epsilon_start", c.dqn.epsilon.start);
    g.get("epsilon_end", c.dqn.epsilon.end);
    g.get("epsilon_ramp", c.dqn.epsilon.ramp_fraction);
    g.get("target_sync_interval", c.dqn.target_sync_interval);
    g.get("train_every", c.dqn.train_every);
    g.finish();
  }
  if (auto m = f.object("mcts")) {
    Fields g(*m, "config.mcts");
    g.get("simulations", c.mcts.simulations);
    g.get("depth", c.mcts.depth);
    g.get("infer_simulations", c.mcts.infer_simulations);
    g.get("infer_depth", c.mcts.infer_depth);
    g.get("updates_per_episode", c.mcts.updates_per_episode);
    g.finish();
  }
  f.finish();
  validate(c.dqn);
  validate(c.mcts);
  return c;
}

json to_json(const TrainConfig& c) {
  const DqnConfig& d = c.dqn;
  const MctsConfig& m = c.mcts;
  const bool dqn = c.trainer == "dqn";
  return {{"trainer", c.trainer},
          {"scheme", static_cast<int>(dqn ? d.scheme : m.scheme)},
          {"seed", dqn ? d.seed : m.seed},
          {"epochs", dqn ? d.epochs : m.epochs},
          {"rounds", dqn ? d.rounds : m.rounds},
          {"embed_dim", dqn ? d.embed_dim : m.embed_dim},
          {"batch_size", dqn ? d.batch_size : m.batch_size},
          {"episodes_per_graph", dqn ? d.episodes_per_graph : m.episodes_per_graph},
          {"buffer_capacity", dqn ? d.buffer_capacity : m.buffer_capacity},
          {"learning_rate", dqn ? d.adam.learning_rate : m.adam.learning_rate},
          {"dqn",
           {{"gamma", d.gamma},
            {"epsilon_start", d.epsilon.start},
            {"epsilon_end", d.epsilon.end},
            {"epsilon_ramp", d.epsilon.ramp_fraction},
            {"target_sync_interval", d.target_sync_interval},
            {"train_every", d.train_every}}},
          {"mcts",
           {{"simulations", m.simulations},
            {"depth", m.depth},
            {"infer_simulations", m.infer_simulations},
            {"infer_depth", m.infer_depth},
            {"updates_per_episode", m.updates_per_episode}}}};
}

// ---------------------------------------------------------------------------
// Evaluation

std::vector<EvalRow> evaluate(const Dataset& dataset, const std::vector<int>& indices,
                              const std::vector<EvalSource>& sources,
                              const std::vector<PotentialMask>& columns,
                              std::uint64_t brute_force_cap) {
  std::vector<EvalRow> rows;
  for (const PotentialMask& mask : columns) {
    // Brute-force reference per instance, when feasible.
    std::vector<std::optional<double>> reference(indices.size());
    for (std::size_t k = 0; k < indices.size(); ++k) {
      const CrfInstance masked = dataset.samples[indices[k]].instance.masked(mask);
      const double states = std::pow(static_cast<double>(masked.num_labels()), masked.num_nodes());
      if (states <= static_cast<double>(brute_force_cap))
        reference[k] = brute_force_map(masked, brute_force_cap).energy;
    }
    for (const EvalSource& source : sources) {
      EvalRow row;
      row.solver = source.name;
      row.potentials = mask.name();
      double ref_sum = 0.0, gap_energy_sum = 0.0;
      int with_truth = 0;
      for (std::size_t k = 0; k < indices.size(); ++k) {
        const Sample& sample = dataset.samples[indices[k]];
        const CrfInstance masked = sample.instance.masked(mask);
        const std::optional<Labeling> y = source.solve(indices[k], masked);
        if (!y) {
          ++row.unsupported;
          continue;
        }
        ++row.instances;
        const double e = total_energy(masked, *y);
        row.mean_energy += e;
        if (!sample.truth.empty()) {
          const Metrics m = score(*y, sample.truth);
          row.accuracy += m.accuracy;
          row.mean_iou += m.mean_iou;
          ++with_truth;
        }
        if (reference[k]) {
          ++row.gap_instances;
          row.mean_gap += e - *reference[k];
          ref_sum += *reference[k];
          gap_energy_sum += e;
        }
      }
      if (row.instances > 0) row.mean_energy /= row.instances;
      if (with_truth > 0) {
        row.accuracy /= with_truth;
        row.mean_iou /= with_truth;
      }
      if (row.gap_instances > 0) {
        row.mean_gap /= row.gap_instances;
        const double denom = std::abs(ref_sum);
        row.relative_gap = denom > 0.0 ? (gap_energy_sum - ref_sum) / denom : 0.0;
      }
      rows.push_back(row);
    }
  }
  return rows;
}

namespace {

std::string num(double v) {
  std::ostringstream s;
  s << std::setprecision(12) << v;
  return s.str();
}

}  // namespace

void write_eval_csv(std::ostream& out, const std::vector<EvalRow>& rows) {
  out << "solver,potentials,instances,unsupported,accuracy,mean_iou,mean_energy,gap_instances,"
         "mean_gap,relative_gap\n";
  for (const EvalRow& r : rows) {
    out << r.solver << ',' << r.potentials << ',' << r.instances << ',' << r.unsupported << ',';
    if (r.instances > 0)
      out << num(r.accuracy) << ',' << num(r.mean_iou) << ',' << num(r.mean_energy);
    else
      out << ",,";
    out << ',' << r.gap_instances << ',';
    if (r.gap_instances > 0) out << num(r.mean_gap) << ',' << num(r.relative_gap);
    else out << ',';
    out << '\n';
  }
}

json eval_to_json(const std::vector<EvalRow>& rows) {
  json out = json::array();
  for (const EvalRow& r : rows) {
    json j = {{"solver", r.solver},         {"potentials", r.potentials},
              {"instances", r.instances},   {"unsupported", r.unsupported},
              {"gap_instances", r.gap_instances}};
    const bool any = r.instances > 0, gap = r.gap_instances > 0;
    j["accuracy"] = any ? json(r.accuracy) : json(nullptr);
    j["mean_iou"] = any ? json(r.mean_iou) : json(nullptr);
    j["mean_energy"] = any ? json(r.mean_energy) : json(nullptr);
    j["mean_gap"] = gap ? json(r.mean_gap) : json(nullptr);
    j["relative_gap"] = gap ? json(r.relative_gap) : json(nullptr);
    out.push_back(std::move(j));
  }
  return out;
}

RewardHistogram reward_histogram(const Dataset& dataset, const std::vector<int>& indices,
                                 Policy& policy, int bins) {
  if (bins < 1) throw ValidationError("histogram: bins must be >= 1");
  std::vector<std::pair<double, bool>> rewards;
  for (int k : indices) {
    const Sample& sample = dataset.samples[k];
    if (sample.truth.empty()) throw ValidationError("histogram: sample without ground truth");
    const RolloutResult r =
        rollout(sample.instance, policy, /*record_trace=*/true, RewardScheme::kEnergyDelta);
    for (const TraceStep& s : r.trace)
      rewards.push_back({s.reward, sample.truth[s.action.node] == s.action.label});
  }
  RewardHistogram h;
  h.correct.assign(bins, 0);
  h.incorrect.assign(bins, 0);
  double lo = 0.0, hi = 1.0;
  if (!rewards.empty()) {
    lo = hi = rewards.front().first;
    for (const auto& [r, ok] : rewards) {
      lo = std::min(lo, r);
      hi = std::max(hi, r);
    }
    if (hi == lo) hi = lo + 1.0;
  }
  for (int b = 0; b <= bins; ++b) h.edges.push_back(lo + (hi - lo) * b / bins);
  for (const auto& [r, ok] : rewards) {
    int b = static_cast<int>((r - lo) / (hi - lo) * bins);
    b = std::clamp(b, 0, bins - 1);
    (ok ? h.correct : h.incorrect)[b] += 1;
  }
  return h;
}

// ---------------------------------------------------------------------------
// Benchmark and export

LinearFit fit_line(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw ValidationError("fit_line: need >= 2 points");
  const double n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t k = 0; k < x.size(); ++k) {
    mx += x[k];
    my += y[k];
  }
  mx /= n;
  my /= n;
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (std::size_t k = 0; k < x.size(); ++k) {
    sxx += (x[k] - mx) * (x[k] - mx);
    sxy += (x[k] - mx) * (y[k] - my);
    syy += (y[k] - my) * (y[k] - my);
  }
  if (sxx == 0.0) throw ValidationError("fit_line: x values are all equal");
  LinearFit fit;
  fit.slope = sxy / sxx;
  fit.intercept = my - fit.slope * mx;
  double ss_res = 0.0;
  for (std::size_t k = 0; k < x.size(); ++k) {
    const double r = y[k] - (fit.intercept + fit.slope * x[k]);
    ss_res += r * r;
  }
  fit.r2 = syy > 0.0 ? 1.0 - ss_res / syy : 1.0;
  return fit;
}

InstanceSpec bench_spec(const InstanceSpec& base, int nodes) {
  if (nodes < 1) throw ValidationError("bench: sizes must be >= 1");
  InstanceSpec s = base;
  if (nodes % 10 == 0) {
    s.width = 10;
    s.height = nodes / 10;
  } else {
    s.width = nodes;
    s.height = 1;
  }
  return s;
}

namespace {

template <typename F>
double median_seconds(int repeats, F&& body) {
  std::vector<double> t;
  for (int r = 0; r < repeats; ++r) {
    const auto start = std::chrono::steady_clock::now();
    body();
    t.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
  }
  std::sort(t.begin(), t.end());
  return t[t.size() / 2];
}

}  // namespace

std::vector<BenchRow> run_bench(const PolicyParams& params, const InstanceSpec& base,
                                const std::vector<int>& sizes, const SearchConfig& search,
                                int repeats, std::uint64_t seed) {
  if (repeats < 1) throw ValidationError("bench: repeats must be >= 1");
  std::vector<BenchRow> rows;
  for (int n : sizes) {
    InstanceSpec s = bench_spec(base, n);
    s.seed = seed + static_cast<std::uint64_t>(n);
    const CrfInstance instance = generate(s).instance;
    check_compatible(params.shape, instance);
    BenchRow row;
    row.nodes = n;
    row.greedy_seconds = median_seconds(repeats, [&] {
      GreedyNetworkPolicy policy(params);
      rollout(instance, policy);
    });
    row.mcts_seconds = median_seconds(repeats, [&] {
      MctsPolicy policy(params, search, seed);
      rollout(instance, policy);
    });
    rows.push_back(row);
  }
  return rows;
}

std::vector<std::vector<double>> export_embeddings(const PolicyParams& params,
                                                   const CrfInstance& instance) {
  check_compatible(params.shape, instance);
  const Labeling empty(instance.num_nodes(), kUnassigned);
  const ForwardCache cache = forward(params, instance, empty, Execution::kSerial);
  std::vector<std::vector<double>> rows;
  for (int i = 0; i < instance.num_nodes(); ++i) {
    const auto e = cache.embedding(params.shape.rounds, i);
    rows.emplace_back(e.begin(), e.end());
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Command line

namespace {

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "'");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError(1, path, e.what());
  }
}

std::ofstream open_out(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  return out;
}

std::vector<int> split_indices(const Dataset& ds, const std::string& split) {
  if (split == "train") return ds.train;
  if (split == "validation") return ds.validation;
  if (split == "all") {
    std::vector<int> all(ds.size());
    for (std::size_t k = 0; k < all.size(); ++k) all[k] = static_cast<int>(k);
    return all;
  }
  throw ValidationError("split must be train, validation or all");
}

std::pair<std::string, std::string> name_value(const std::string& arg) {
  const auto eq = arg.find('=');
  if (eq == std::string::npos || eq == 0 || eq + 1 == arg.size())
    throw ValidationError("expected name=path, got '" + arg + "'");
  return {arg.substr(0, eq), arg.substr(eq + 1)};
}

struct GenerateArgs {
  std::string spec, out;
  std::optional<int> count, validation;
  std::optional<std::uint64_t> seed;
};

int cmd_generate(const GenerateArgs& a, std::ostream& out) {
  json j = read_json_file(a.spec);
  if (a.count) j["count"] = *a.count;
  if (a.validation) j["validation"] = *a.validation;
  if (a.seed) j["seed"] = *a.seed;
  const GenerateConfig c = generate_config_from_json(j);
  const Dataset ds = generate_dataset(c.spec, c.count, c.validation);
  {
    auto f = open_out(a.out);
    save_dataset(f, ds);
  }
  // Round-trip check of what was written.
  const Dataset back = load_dataset_file(a.out);
  std::size_t hop1 = 0, hop2 = 0;
  for (const Sample& s : back.samples) {
    hop1 += s.instance.hop1().size();
    hop2 += s.instance.hop2().size();
  }
  out << "generated " << back.size() << " instances (" << back.train.size() << " train, "
      << back.validation.size() << " validation): N=" << c.spec.num_nodes()
      << " |L|=" << c.spec.num_labels << " hop1=" << hop1 << " hop2=" << hop2 << '\n';
  return kOk;
}

struct TrainArgs {
  std::string config, data, out, resume;
  std::optional<std::string> trainer;
  std::optional<int> scheme, epochs, episodes;
  std::optional<std::uint64_t> seed;
};

int cmd_train(const TrainArgs& a, std::ostream& out) {
  json j = a.config.empty() ? json::object() : read_json_file(a.config);
  if (a.trainer) j["trainer"] = *a.trainer;
  if (a.scheme) j["scheme"] = *a.scheme;
  if (a.epochs) j["epochs"] = *a.epochs;
  if (a.episodes) j["episodes_per_graph"] = *a.episodes;
  if (a.seed) j["seed"] = *a.seed;
  const TrainConfig c = train_config_from_json(j);
  const Dataset ds = load_dataset_file(a.data);

  // A params file without optimizer state resumes with fresh moments.
  PolicyParams init;
  OptimizerState opt;
  WarmStart warm;
  if (!a.resume.empty()) {
    init = load_params_file(a.resume, &opt);
    warm = {&init, &opt};
  }

  const fs::path dir(a.out);
  fs::create_directories(dir);
  auto log = open_out(dir / "train_log.jsonl");
  auto timing = open_out(dir / "timing.jsonl");
  const EpochCallback on_epoch = [&](const EpochLog& row) {
    write_epoch_log(log, row, c.trainer);
    write_epoch_timing(timing, row);
    log.flush();
    timing.flush();
  };
  const TrainResult r = c.trainer == "dqn" ? train_dqn(ds, c.dqn, warm, on_epoch)
                                           : mcts_train(ds, c.mcts, warm, on_epoch);
  save_params_file((dir / "params.json").string(), r.params, &r.optimizer);
  {
    auto f = open_out(dir / "config.json");
    f << to_json(c).dump(2) << '\n';
  }
  out << "trained " << c.trainer << " for " << r.log.size() << " epochs, "
      << r.optimizer.step << " optimizer steps; params written to "
      << (dir / "params.json").string() << '\n';
  return kOk;
}

struct InferArgs {
  std::string params, data, out, engine = "greedy", split = "all", trace_dir;
  int simulations = 20, depth = 4, scheme = 2;
  std::uint64_t seed = 0;
};

int cmd_infer(const InferArgs& a, std::ostream& out) {
  const PolicyParams params = load_params_file(a.params);
  const Dataset ds = load_dataset_file(a.data);
  const std::vector<int> indices = split_indices(ds, a.split);
  if (a.engine != "greedy" && a.engine != "mcts")
    throw ValidationError("engine must be greedy or mcts");
  const SearchConfig search{a.simulations, a.depth, reward_scheme_from_int(a.scheme)};
  if (search.simulations < 1 || search.depth < 1)
    throw ValidationError("simulations and depth must be >= 1");

  std::vector<LabelingRecord> records;
  double total = 0.0;
  for (int k : indices) {
    const CrfInstance& instance = ds.samples[k].instance;
    check_compatible(params.shape, instance);
    const bool trace = !a.trace_dir.empty();
    RolloutResult r;
    if (a.engine == "greedy") {
      GreedyNetworkPolicy policy(params);
      r = rollout(instance, policy, trace, search.scheme);
    } else {
      MctsPolicy policy(params, search, a.seed + static_cast<std::uint64_t>(k));
      r = rollout(instance, policy, trace, search.scheme);
    }
    if (trace) {
      auto f = open_out(fs::path(a.trace_dir) / ("trace_" + std::to_string(k) + ".jsonl"));
      write_trace(f, r.trace);
    }
    records.push_back({k, r.labeling, r.energy});
    total += r.energy;
  }
  {
    auto f = open_out(a.out);
    save_labelings(f, records);
  }
  out << "labeled " << records.size() << " instances with the " << a.engine
      << " engine; mean energy " << num(records.empty() ? 0.0 : total / records.size()) << '\n';
  return kOk;
}

struct EvalArgs {
  std::string data, out, split = "validation", solvers = "unary,icm,bp,annealing,brute_force";
  std::string potentials = "U,U+P,U+P+HOP1,U+P+HOP1+HOP2";
  std::vector<std::string> labelings, policies, mcts;
  bool histogram = false;
  int bins = 20, simulations = 20, depth = 4, scheme = 2;
  std::uint64_t seed = 0, cap = kBruteForceCap;
};

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

int cmd_eval(const EvalArgs& a, std::ostream& out) {
  const Dataset ds = load_dataset_file(a.data);
  const std::vector<int> indices = split_indices(ds, a.split);
  std::vector<PotentialMask> columns;
  for (const std::string& p : split_list(a.potentials)) columns.push_back(PotentialMask::from_name(p));
  if (columns.empty()) throw ValidationError("eval: no potential columns selected");

  // Owned state captured by the sources.
  auto params_store = std::make_shared<std::map<std::string, PolicyParams>>();
  std::vector<EvalSource> sources;
  std::optional<SupervisedClassifier> supervised;

  for (const std::string& name : split_list(a.solvers)) {
    if (name == "unary") {
      sources.push_back({name, [](int, const CrfInstance& m) -> std::optional<Labeling> {
                           return unary_argmin_solver(m).labeling;
                         }});
    } else if (name == "icm") {
      sources.push_back({name, [](int, const CrfInstance& m) -> std::optional<Labeling> {
                           return icm(m).labeling;
                         }});
    } else if (name == "bp") {
      sources.push_back({name, [](int, const CrfInstance& m) -> std::optional<Labeling> {
                           if (m.mask().hop2 && !m.hop2().empty()) return std::nullopt;
                           return loopy_bp_map(m).labeling;
                         }});
    } else if (name == "annealing") {
      const std::uint64_t seed = a.seed;
      sources.push_back({name, [seed](int k, const CrfInstance& m) -> std::optional<Labeling> {
                           return simulated_annealing(m, {}, seed + static_cast<std::uint64_t>(k))
                               .labeling;
                         }});
    } else if (name == "brute_force") {
      const std::uint64_t cap = a.cap;
      sources.push_back({name, [cap](int, const CrfInstance& m) -> std::optional<Labeling> {
                           const double states = std::pow(static_cast<double>(m.num_labels()),
                                                          m.num_nodes());
                           if (states > static_cast<double>(cap)) return std::nullopt;
                           return brute_force_map(m, cap).labeling;
                         }});
    } else if (name == "supervised") {
      supervised = SupervisedClassifier::fit(ds);
      const SupervisedClassifier model = *supervised;
      sources.push_back({name, [model](int, const CrfInstance& m) -> std::optional<Labeling> {
                           return model.predict(m).labeling;
                         }});
    } else if (name == "truth") {
      sources.push_back({name, [&ds](int k, const CrfInstance&) -> std::optional<Labeling> {
                           if (ds.samples[k].truth.empty()) return std::nullopt;
                           return ds.samples[k].truth;
                         }});
    } else {
      throw ValidationError("eval: unknown solver '" + name + "'");
    }
  }
  for (const std::string& arg : a.labelings) {
    const auto [name, path] = name_value(arg);
    std::ifstream in(path);
    if (!in) throw IoError("cannot open '" + path + "'");
    auto table = std::make_shared<std::map<int, Labeling>>();
    for (LabelingRecord& r : load_labelings(in)) {
      if (r.instance < 0 || r.instance >= static_cast<int>(ds.size()) ||
          static_cast<int>(r.labels.size()) != ds.samples[r.instance].instance.num_nodes())
        throw ValidationError("eval: labelings in '" + path + "' do not match the dataset");
      (*table)[r.instance] = std::move(r.labels);
    }
    for (int k : indices)
      if (!table->count(k))
        throw ValidationError("eval: labelings in '" + path + "' miss instance " +
                              std::to_string(k));
    sources.push_back({name, [table](int k, const CrfInstance&) -> std::optional<Labeling> {
                         return table->at(k);
                       }});
  }
  for (const std::string& arg : a.policies) {
    const auto [name, path] = name_value(arg);
    (*params_store)[name] = load_params_file(path);
    const PolicyParams* p = &(*params_store)[name];
    sources.push_back({name, [p, params_store](int, const CrfInstance& m) -> std::optional<Labeling> {
                         GreedyNetworkPolicy policy(*p);
                         return rollout(m, policy).labeling;
                       }});
  }
  const SearchConfig search{a.simulations, a.depth, reward_scheme_from_int(a.scheme)};
  for (const std::string& arg : a.mcts) {
    const auto [name, path] = name_value(arg);
    (*params_store)[name] = load_params_file(path);
    const PolicyParams* p = &(*params_store)[name];
    const std::uint64_t seed = a.seed;
    sources.push_back(
        {name, [p, params_store, search, seed](int k, const CrfInstance& m) -> std::optional<Labeling> {
           MctsPolicy policy(*p, search, seed + static_cast<std::uint64_t>(k));
           return rollout(m, policy).labeling;
         }});
  }
  if (sources.empty()) throw ValidationError("eval: nothing to evaluate");

  const std::vector<EvalRow> rows = evaluate(ds, indices, sources, columns, a.cap);
  const fs::path dir(a.out);
  fs::create_directories(dir);
  {
    auto f = open_out(dir / "metrics.csv");
    write_eval_csv(f, rows);
  }
  json report = {{"split", a.split}, {"instances", indices.size()}, {"rows", eval_to_json(rows)}};

  if (a.histogram) {
    std::unique_ptr<Policy> policy;
    if (!a.policies.empty())
      policy = std::make_unique<GreedyNetworkPolicy>(
          params_store->at(name_value(a.policies.front()).first));
    else
      policy = std::make_unique<UnaryArgminPolicy>();
    const RewardHistogram h = reward_histogram(ds, indices, *policy, a.bins);
    auto f = open_out(dir / "reward_histogram.csv");
    f << "lo,hi,correct,incorrect\n";
    for (int b = 0; b < a.bins; ++b)
      f << num(h.edges[b]) << ',' << num(h.edges[b + 1]) << ',' << h.correct[b] << ','
        << h.incorrect[b] << '\n';
    report["reward_histogram"] = {{"edges", h.edges}, {"correct", h.correct},
                                  {"incorrect", h.incorrect}};
  }
  {
    auto f = open_out(dir / "metrics.json");
    f << report.dump(2) << '\n';
  }
  write_eval_csv(out, rows);
  return kOk;
}

struct BenchArgs {
  std::string params, spec, out;
  std::string sizes = "50,250,500,1000,2000";
  int simulations = 20, depth = 4, scheme = 2, repeats = 3;
  std::uint64_t seed = 0;
};

int cmd_bench(const BenchArgs& a, std::ostream& out) {
  const PolicyParams params = load_params_file(a.params);
  InstanceSpec base;
  if (!a.spec.empty()) {
    json j = read_json_file(a.spec);
    j["width"] = j.value("width", 10);
    j["height"] = j.value("height", 1);
    j["num_labels"] = j.value("num_labels", params.shape.num_labels);
    base = generate_config_from_json(j).spec;
  }
  base.num_labels = params.shape.num_labels;
  std::vector<int> sizes;
  for (const std::string& s : split_list(a.sizes)) {
    try {
      sizes.push_back(std::stoi(s));
    } catch (const std::exception&) {
      throw ValidationError("bench: bad size '" + s + "'");
    }
  }
  const SearchConfig search{a.simulations, a.depth, reward_scheme_from_int(a.scheme)};
  const std::vector<BenchRow> rows = run_bench(params, base, sizes, search, a.repeats, a.seed);
  std::vector<double> x, y;
  for (const BenchRow& r : rows) {
    x.push_back(r.nodes);
    y.push_back(r.greedy_seconds);
  }
  const LinearFit fit = rows.size() >= 2 ? fit_line(x, y) : LinearFit{};

  const fs::path dir(a.out);
  fs::create_directories(dir);
  std::ostringstream csv;
  csv << "nodes,greedy_seconds,mcts_seconds\n";
  json jr = json::array();
  for (const BenchRow& r : rows) {
    csv << r.nodes << ',' << num(r.greedy_seconds) << ',' << num(r.mcts_seconds) << '\n';
    jr.push_back({{"nodes", r.nodes}, {"greedy_seconds", r.greedy_seconds},
                  {"mcts_seconds", r.mcts_seconds}});
  }
  {
    auto f = open_out(dir / "bench.csv");
    f << csv.str();
  }
  {
    auto f = open_out(dir / "bench.json");
    f << json{{"rows", jr},
              {"greedy_fit", {{"slope", fit.slope}, {"intercept", fit.intercept}, {"r2", fit.r2}}}}
             .dump(2)
      << '\n';
  }
  out << csv.str() << "greedy fit: slope=" << num(fit.slope) << " intercept=" << num(fit.intercept)
      << " r2=" << num(fit.r2) << '\n';
  return kOk;
}

struct ExportArgs {
  std::string params, data, out;
  int instance = 0;
};

int cmd_export(const ExportArgs& a, std::ostream& out) {
  const PolicyParams params = load_params_file(a.params);
  const Dataset ds = load_dataset_file(a.data);
  if (a.instance < 0 || a.instance >= static_cast<int>(ds.size()))
    throw ValidationError("export-embeddings: instance index out of range");
  const auto rows = export_embeddings(params, ds.samples[a.instance].instance);
  auto f = open_out(a.out);
  f << std::setprecision(17);
  for (const auto& row : rows) {
    for (std::size_t c = 0; c < row.size(); ++c) f << (c ? "," : "") << row[c];
    f << '\n';
  }
  out << "wrote " << rows.size() << " x " << params.shape.embed_dim << " embeddings to " << a.out
      << '\n';
  return kOk;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Sequential MAP labeling of higher-order CRFs with learned policies"};
  app.require_subcommand(1);

  GenerateArgs gen;
  auto* g = app.add_subcommand("generate", "Generate a synthetic dataset from a spec file");
  g->add_option("--spec", gen.spec, "Instance spec (JSON)")->required();
  g->add_option("--out", gen.out, "Output dataset file (JSON Lines)")->required();
  g->add_option("--count", gen.count, "Number of instances (overrides the spec)");
  g->add_option("--validation", gen.validation, "Validation instances (overrides the spec)");
  g->add_option("--seed", gen.seed, "Base seed (overrides the spec)");

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Train a policy with dqn or mcts");
  t->add_option("--config", tr.config, "Training config (JSON)");
  t->add_option("--data", tr.data, "Dataset file")->required();
  t->add_option("--out", tr.out, "Output directory")->required();
  t->add_option("--resume", tr.resume, "Continue from a params file");
  t->add_option("--trainer", tr.trainer, "dqn or mcts");
  t->add_option("--scheme", tr.scheme, "Reward scheme 1 or 2");
  t->add_option("--epochs", tr.epochs, "Training epochs");
  t->add_option("--episodes", tr.episodes, "Episodes per graph");
  t->add_option("--seed", tr.seed, "Seed");

  InferArgs in;
  auto* i = app.add_subcommand("infer", "Label instances with a trained policy");
  i->add_option("--params", in.params, "Params file")->required();
  i->add_option("--data", in.data, "Dataset file")->required();
  i->add_option("--out", in.out, "Output labelings (JSON Lines)")->required();
  i->add_option("--engine", in.engine, "greedy or mcts")->capture_default_str();
  i->add_option("--split", in.split, "train, validation or all")->capture_default_str();
  i->add_option("--trace-dir", in.trace_dir, "Write per-instance selection traces here");
  i->add_option("--simulations", in.simulations, "MCTS simulations per move")->capture_default_str();
  i->add_option("--depth", in.depth, "MCTS simulation depth")->capture_default_str();
  i->add_option("--scheme", in.scheme, "Reward scheme used by the search")->capture_default_str();
  i->add_option("--seed", in.seed, "Seed")->capture_default_str();

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Metrics table over solvers and potential combinations");
  e->add_option("--data", ev.data, "Dataset file")->required();
  e->add_option("--out", ev.out, "Output directory")->required();
  e->add_option("--split", ev.split, "train, validation or all")->capture_default_str();
  e->add_option("--solvers", ev.solvers,
                "Comma list of unary, icm, bp, annealing, brute_force, supervised, truth")
      ->capture_default_str();
  e->add_option("--potentials", ev.potentials, "Comma list of potential columns")
      ->capture_default_str();
  e->add_option("--labelings", ev.labelings, "name=path of a labelings file (repeatable)");
  e->add_option("--policy", ev.policies, "name=params for greedy rollouts (repeatable)");
  e->add_option("--mcts", ev.mcts, "name=params for mcts inference (repeatable)");
  e->add_flag("--reward-histogram", ev.histogram, "Also write the scheme-1 reward histogram");
  e->add_option("--bins", ev.bins, "Histogram bins")->capture_default_str();
  e->add_option("--simulations", ev.simulations, "MCTS simulations per move")->capture_default_str();
  e->add_option("--depth", ev.depth, "MCTS simulation depth")->capture_default_str();
  e->add_option("--scheme", ev.scheme, "Reward scheme used by the search")->capture_default_str();
  e->add_option("--seed", ev.seed, "Seed")->capture_default_str();
  e->add_option("--cap", ev.cap, "Brute-force state cap")->capture_default_str();

  BenchArgs be;
  auto* b = app.add_subcommand("bench", "Inference runtime versus graph size");
  b->add_option("--params", be.params, "Params file")->required();
  b->add_option("--out", be.out, "Output directory")->required();
  b->add_option("--spec", be.spec, "Instance spec used for the generated graphs");
  b->add_option("--sizes", be.sizes, "Comma list of node counts")->capture_default_str();
  b->add_option("--simulations", be.simulations, "MCTS simulations per move")->capture_default_str();
  b->add_option("--depth", be.depth, "MCTS simulation depth")->capture_default_str();
  b->add_option("--scheme", be.scheme, "Reward scheme used by the search")->capture_default_str();
  b->add_option("--repeats", be.repeats, "Timed repeats per size")->capture_default_str();
  b->add_option("--seed", be.seed, "Seed")->capture_default_str();

  ExportArgs ex;
  auto* x = app.add_subcommand("export-embeddings", "Write final-round node embeddings as CSV");
  x->add_option("--params", ex.params, "Params file")->required();
  x->add_option("--data", ex.data, "Dataset file")->required();
  x->add_option("--instance", ex.instance, "Instance index")->capture_default_str();
  x->add_option("--out", ex.out, "Output CSV")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& pe) {
    return app.exit(pe, out, err) == 0 ? kOk : kUsage;
  }

  try {
    if (g->parsed()) return cmd_generate(gen, out);
    if (t->parsed()) return cmd_train(tr, out);
    if (i->parsed()) return cmd_infer(in, out);
    if (e->parsed()) return cmd_eval(ev, out);
    if (b->parsed()) return cmd_bench(be, out);
    if (x->parsed()) return cmd_export(ex, out);
  } catch (const std::exception& ex_) {
    const auto [code, message] = classify(ex_);
    err << message << '\n';
    return code;
  }
  return kUsage;
}

}  // namespace hocrf::cli
