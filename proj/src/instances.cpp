#include "hocrf/instances.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <map>
#include <nlohmann/json.hpp>
#include <ostream>
#include <random>
#include <set>

#include "hocrf/errors.hpp"

namespace hocrf {

namespace {

struct Rect {
  int x0, y0, w, h;
  bool contains(int x, int y) const { return x >= x0 && x < x0 + w && y >= y0 && y < y0 + h; }
};

void check_range(const Range& r, const char* name) {
  if (!(r.min <= r.max) || !std::isfinite(r.min) || !std::isfinite(r.max))
    throw ValidationError(std::string("spec range '") + name + "' must satisfy min <= max");
}

double draw(std::mt19937_64& rng, const Range& r) {
  if (r.min == r.max) return r.min;
  return std::uniform_real_distribution<double>(r.min, r.max)(rng);
}

int draw_int(std::mt19937_64& rng, int lo, int hi) {
  return std::uniform_int_distribution<int>(lo, hi)(rng);
}

}  // namespace

void validate(const InstanceSpec& s) {
  if (s.width < 1 || s.height < 1) throw ValidationError("spec: width and height must be >= 1");
  if (s.num_labels < 2) throw ValidationError("spec: num_labels must be >= 2");
  if (!(s.unary_noise >= 0.0 && s.unary_noise <= 1.0))
    throw ValidationError("spec: unary_noise must lie in [0, 1]");
  if (!(s.feature_noise >= 0.0)) throw ValidationError("spec: feature_noise must be >= 0");
  if (!(s.unary_scale > 0.0)) throw ValidationError("spec: unary_scale must be > 0");
  if (s.hypercolumn_dim < 1) throw ValidationError("spec: hypercolumn_dim must be >= 1");
  if (s.num_regions < 0 || s.num_hop1 < 0 || s.num_hop2 < 0)
    throw ValidationError("spec: clique and region counts must be >= 0");
  check_range(s.hop1_confidence, "hop1_confidence");
  check_range(s.hop1_weight, "hop1_weight");
  check_range(s.hop2_penalty, "hop2_penalty");
  check_range(s.hop2_divisor, "hop2_divisor");
  check_range(s.hop2_size, "hop2_size");
  if (!(s.hop1_confidence.min > 0.0 && s.hop1_confidence.max <= 1.0))
    throw ValidationError("spec: hop1_confidence must lie in (0, 1]");
  if (s.hop1_weight.min < 0.0 || s.hop2_penalty.min < 0.0)
    throw ValidationError("spec: clique weights must be >= 0");
  if (!(s.hop2_divisor.min > 1.0)) throw ValidationError("spec: hop2_divisor must be > 1");
  if (s.hop2_size.min < 1.0) throw ValidationError("spec: hop2_size must be >= 1");
  if (s.hop2_label >= s.num_labels) throw ValidationError("spec: hop2_label out of range");
}

Sample generate(const InstanceSpec& spec) {
  validate(spec);
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const int W = spec.width, H = spec.height, L = spec.num_labels, N = W * H;
  const auto cell = [W](int x, int y) { return y * W + x; };

  // Ground truth: background plus painted rectangles.
  const Label background = draw_int(rng, 0, L - 1);
  Labeling truth(N, background);
  struct Region {
    Rect rect;
    Label label;
  };
  std::vector<Region> regions;
  const int num_regions = std::max(spec.num_regions, spec.num_hop1);
  // Regions avoid the nested-clique label when another choice exists, so every
  // nested rectangle is a genuinely missed object.
  std::vector<Label> region_labels;
  for (Label y = 0; y < L; ++y)
    if (y != background && !(spec.num_hop2 > 0 && L > 2 && y == spec.resolved_hop2_label()))
      region_labels.push_back(y);
  if (region_labels.empty()) region_labels.push_back(background);
  for (int r = 0; r < num_regions; ++r) {
    const int w = draw_int(rng, std::max(1, W / 3), std::max(1, (3 * W + 3) / 4));
    const int h = draw_int(rng, std::max(1, H / 3), std::max(1, (3 * H + 3) / 4));
    Rect rect{draw_int(rng, 0, W - std::min(w, W)), draw_int(rng, 0, H - std::min(h, H)),
              std::min(w, W), std::min(h, H)};
    regions.push_back({rect, region_labels[draw_int(rng, 0, static_cast<int>(region_labels.size()) - 1)]});
  }
  // Painted back to front so the detected (HOP1) regions stay on top.
  for (int r = num_regions - 1; r >= 0; --r) {
    const Rect& rect = regions[r].rect;
    for (int y = rect.y0; y < rect.y0 + rect.h; ++y)
      for (int x = rect.x0; x < rect.x0 + rect.w; ++x) truth[cell(x, y)] = regions[r].label;
  }

  // Nested small rectangles carrying the HOP2 label; the unary is taken from the
  // enclosing region when hop2_missed is set.
  Labeling unary_source = truth;
  std::vector<Hop2Clique> hop2;
  const Label small_label = spec.resolved_hop2_label();
  for (int c = 0; c < spec.num_hop2; ++c) {
    Region container{{0, 0, W, H}, background};
    std::vector<Region> hosts;
    for (const Region& r : regions)
      if (r.label != small_label) hosts.push_back(r);
    if (!hosts.empty()) container = hosts[draw_int(rng, 0, static_cast<int>(hosts.size()) - 1)];
    const int max_side_w = std::min(container.rect.w, static_cast<int>(spec.hop2_size.max));
    const int max_side_h = std::min(container.rect.h, static_cast<int>(spec.hop2_size.max));
    const int min_side = static_cast<int>(spec.hop2_size.min);
    const int w = draw_int(rng, std::min(min_side, max_side_w), max_side_w);
    const int h = draw_int(rng, std::min(min_side, max_side_h), max_side_h);
    const Rect rect{container.rect.x0 + draw_int(rng, 0, container.rect.w - w),
                    container.rect.y0 + draw_int(rng, 0, container.rect.h - h), w, h};
    Hop2Clique clique;
    for (int y = rect.y0; y < rect.y0 + rect.h; ++y)
      for (int x = rect.x0; x < rect.x0 + rect.w; ++x) {
        const int i = cell(x, y);
        if (std::find(clique.members.begin(), clique.members.end(), i) != clique.members.end())
          continue;
        clique.members.push_back(i);
        if (spec.hop2_missed) unary_source[i] = truth[i];
        truth[i] = small_label;
        if (!spec.hop2_missed) unary_source[i] = small_label;
      }
    clique.label = small_label;
    clique.penalty = draw(rng, spec.hop2_penalty);
    clique.divisor = draw(rng, spec.hop2_divisor);
    hop2.push_back(std::move(clique));
  }

  // HOP1: the box of each of the first num_hop1 regions, like a detection.
  std::vector<Hop1Clique> hop1;
  for (int c = 0; c < spec.num_hop1; ++c) {
    const Region& r = regions[c];
    Hop1Clique clique;
    for (int y = r.rect.y0; y < r.rect.y0 + r.rect.h; ++y)
      for (int x = r.rect.x0; x < r.rect.x0 + r.rect.w; ++x) clique.members.push_back(cell(x, y));
    std::sort(clique.members.begin(), clique.members.end());
    clique.label = r.label;
    clique.confidence = draw(rng, spec.hop1_confidence);
    clique.weight = draw(rng, spec.hop1_weight);
    hop1.push_back(std::move(clique));
  }

  CrfData d;
  d.num_nodes = N;
  d.num_labels = L;
  d.feature_dim = spec.feature_dim();
  d.hypercolumn_dim = spec.hypercolumn_dim;
  d.alpha_p = spec.alpha_p;
  d.beta_p = spec.beta_p;
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      if (x + 1 < W) d.edges.push_back({cell(x, y), cell(x + 1, y)});
      if (y + 1 < H) d.edges.push_back({cell(x, y), cell(x, y + 1)});
    }

  // Unaries: -log of a noisy softmax peaked at the unary source label.
  d.unary.resize(static_cast<std::size_t>(N) * L);
  std::vector<double> dist(static_cast<std::size_t>(N) * L);
  for (int i = 0; i < N; ++i) {
    std::vector<double> logit(L);
    double peak = -INFINITY;
    for (int y = 0; y < L; ++y) {
      logit[y] = spec.unary_scale * ((1.0 - spec.unary_noise) * (y == unary_source[i] ? 1.0 : 0.0) +
                                     spec.unary_noise * normal(rng));
      peak = std::max(peak, logit[y]);
    }
    double z = 0.0;
    for (int y = 0; y < L; ++y) z += std::exp(logit[y] - peak);
    for (int y = 0; y < L; ++y) {
      const double log_p = logit[y] - peak - std::log(z);
      d.unary[static_cast<std::size_t>(i) * L + y] = -log_p;
      dist[static_cast<std::size_t>(i) * L + y] = std::exp(log_p);
    }
  }

  // Hypercolumns: class prototype plus isotropic noise.
  const int G = spec.hypercolumn_dim;
  const double unit = 1.0 / std::sqrt(static_cast<double>(G));
  std::vector<double> prototypes(static_cast<std::size_t>(L) * G);
  for (double& v : prototypes) v = unit * normal(rng);
  d.hypercolumns.resize(static_cast<std::size_t>(N) * G);
  for (int i = 0; i < N; ++i)
    for (int k = 0; k < G; ++k)
      d.hypercolumns[static_cast<std::size_t>(i) * G + k] =
          prototypes[static_cast<std::size_t>(truth[i]) * G + k] +
          spec.feature_noise * unit * normal(rng);

  // Features: unary distribution, its normalized entropy, clique indicators.
  const int F = d.feature_dim;
  d.node_features.assign(static_cast<std::size_t>(N) * F, 0.0);
  for (int i = 0; i < N; ++i) {
    double* b = d.node_features.data() + static_cast<std::size_t>(i) * F;
    double entropy = 0.0;
    for (int y = 0; y < L; ++y) {
      const double p = dist[static_cast<std::size_t>(i) * L + y];
      b[y] = p;
      if (p > 0.0) entropy -= p * std::log(p);
    }
    b[L] = entropy / std::log(static_cast<double>(L));
  }
  for (const Hop1Clique& c : hop1)
    for (int m : c.members) {
      double& f = d.node_features[static_cast<std::size_t>(m) * F + L + 1];
      f = std::max(f, c.confidence);
    }
  for (const Hop2Clique& c : hop2)
    for (int m : c.members) d.node_features[static_cast<std::size_t>(m) * F + L + 2] = 1.0;

  d.hop1 = std::move(hop1);
  d.hop2 = std::move(hop2);
  return {CrfInstance(std::move(d)), std::move(truth)};
}

Dataset generate_dataset(const InstanceSpec& spec, int count, int num_validation) {
  if (count < 0 || num_validation < 0 || num_validation > count)
    throw ValidationError("dataset: invalid count or validation size");
  Dataset ds;
  for (int k = 0; k < count; ++k) {
    InstanceSpec s = spec;
    s.seed = spec.seed + static_cast<std::uint64_t>(k);
    ds.samples.push_back(generate(s));
    (k < count - num_validation ? ds.train : ds.validation).push_back(k);
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Interchange format

namespace {

using nlohmann::json;

constexpr int kFormatVersion = 1;

json header_record(const CrfData& d) {
  return {{"record", "header"},     {"version", kFormatVersion},
          {"num_nodes", d.num_nodes}, {"num_labels", d.num_labels},
          {"feature_dim", d.feature_dim}, {"hypercolumn_dim", d.hypercolumn_dim},
          {"alpha_p", d.alpha_p},   {"beta_p", d.beta_p}};
}

void write_instance_block(std::ostream& out, const CrfInstance& instance, const Labeling* truth) {
  const CrfData& d = instance.data();
  out << header_record(d).dump() << '\n';
  for (int i = 0; i < d.num_nodes; ++i) {
    const auto f = instance.features(i);
    const auto g = instance.hypercolumn(i);
    const auto u = instance.unary(i);
    json rec = {{"record", "node"},
                {"id", i},
                {"features", std::vector<double>(f.begin(), f.end())},
                {"hypercolumn", std::vector<double>(g.begin(), g.end())},
                {"unary", std::vector<double>(u.begin(), u.end())}};
    out << rec.dump() << '\n';
  }
  for (const Edge& e : d.edges)
    out << json{{"record", "edge"}, {"a", e.a}, {"b", e.b}}.dump() << '\n';
  for (const Hop1Clique& c : d.hop1)
    out << json{{"record", "hop1"},
                {"members", c.members},
                {"label", c.label},
                {"confidence", c.confidence},
                {"weight", c.weight}}
               .dump()
        << '\n';
  for (const Hop2Clique& c : d.hop2)
    out << json{{"record", "hop2"},
                {"members", c.members},
                {"label", c.label},
                {"penalty", c.penalty},
                {"divisor", c.divisor}}
               .dump()
        << '\n';
  if (truth != nullptr && !truth->empty())
    out << json{{"record", "truth"}, {"labels", *truth}}.dump() << '\n';
  out << json{{"record", "end"}}.dump() << '\n';
}

class RecordReader {
 public:
  explicit RecordReader(std::istream& in) : in_(in) {}

  // Next non-empty record, or nullopt at end of stream.
  bool next(json& rec) {
    std::string text;
    while (std::getline(in_, text)) {
      ++line_;
      if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
      try {
        rec = json::parse(text);
      } catch (const json::exception& e) {
        throw ParseError(line_, "<record>", std::string("malformed JSON: ") + e.what());
      }
      if (!rec.is_object() || !rec.contains("record") || !rec.at("record").is_string())
        throw ParseError(line_, "record", "missing record type");
      return true;
    }
    return false;
  }

  std::size_t line() const { return line_; }

  void expect_fields(const json& rec, std::initializer_list<const char*> fields) const {
    std::set<std::string> allowed{"record"};
    for (const char* f : fields) {
      allowed.insert(f);
      if (!rec.contains(f)) throw ParseError(line_, f, "missing field");
    }
    for (const auto& [key, value] : rec.items())
      if (!allowed.count(key)) throw ParseError(line_, key, "unknown field");
  }

  template <typename T>
  T get(const json& rec, const char* field) const {
    try {
      return rec.at(field).get<T>();
    } catch (const json::exception& e) {
      throw ParseError(line_, field, e.what());
    }
  }

 private:
  std::istream& in_;
  std::size_t line_ = 0;
};

// Parses one header..end block; the header record has already been read.
Sample read_instance_block(RecordReader& reader, const json& header) {
  reader.expect_fields(header, {"version", "num_nodes", "num_labels", "feature_dim",
                                "hypercolumn_dim", "alpha_p", "beta_p"});
  if (reader.get<int>(header, "version") != kFormatVersion)
    throw ParseError(reader.line(), "version", "unsupported format version");
  CrfData d;
  d.num_nodes = reader.get<int>(header, "num_nodes");
  d.num_labels = reader.get<int>(header, "num_labels");
  d.feature_dim = reader.get<int>(header, "feature_dim");
  d.hypercolumn_dim = reader.get<int>(header, "hypercolumn_dim");
  d.alpha_p = reader.get<double>(header, "alpha_p");
  d.beta_p = reader.get<double>(header, "beta_p");
  if (d.num_nodes < 1 || d.num_labels < 1 || d.feature_dim < 0 || d.hypercolumn_dim < 0)
    throw ParseError(reader.line(), "num_nodes", "invalid dimensions");

  Labeling truth;
  int nodes_seen = 0;
  json rec;
  while (reader.next(rec)) {
    const std::string type = rec.at("record").get<std::string>();
    if (type == "node") {
      reader.expect_fields(rec, {"id", "features", "hypercolumn", "unary"});
      if (reader.get<int>(rec, "id") != nodes_seen)
        throw ParseError(reader.line(), "id", "node records must be in order 0..N-1");
      if (nodes_seen >= d.num_nodes) throw ParseError(reader.line(), "id", "too many nodes");
      const auto f = reader.get<std::vector<double>>(rec, "features");
      const auto g = reader.get<std::vector<double>>(rec, "hypercolumn");
      const auto u = reader.get<std::vector<double>>(rec, "unary");
      if (static_cast<int>(f.size()) != d.feature_dim)
        throw ParseError(reader.line(), "features", "length differs from feature_dim");
      if (static_cast<int>(g.size()) != d.hypercolumn_dim)
        throw ParseError(reader.line(), "hypercolumn", "length differs from hypercolumn_dim");
      if (static_cast<int>(u.size()) != d.num_labels)
        throw ParseError(reader.line(), "unary", "length differs from num_labels");
      d.node_features.insert(d.node_features.end(), f.begin(), f.end());
      d.hypercolumns.insert(d.hypercolumns.end(), g.begin(), g.end());
      d.unary.insert(d.unary.end(), u.begin(), u.end());
      ++nodes_seen;
    } else if (type == "edge") {
      reader.expect_fields(rec, {"a", "b"});
      d.edges.push_back({reader.get<int>(rec, "a"), reader.get<int>(rec, "b")});
    } else if (type == "hop1") {
      reader.expect_fields(rec, {"members", "label", "confidence", "weight"});
      d.hop1.push_back({reader.get<std::vector<int>>(rec, "members"), reader.get<int>(rec, "label"),
                        reader.get<double>(rec, "confidence"), reader.get<double>(rec, "weight")});
    } else if (type == "hop2") {
      reader.expect_fields(rec, {"members", "label", "penalty", "divisor"});
      d.hop2.push_back({reader.get<std::vector<int>>(rec, "members"), reader.get<int>(rec, "label"),
                        reader.get<double>(rec, "penalty"), reader.get<double>(rec, "divisor")});
    } else if (type == "truth") {
      reader.expect_fields(rec, {"labels"});
      truth = reader.get<std::vector<int>>(rec, "labels");
      if (static_cast<int>(truth.size()) != d.num_nodes)
        throw ParseError(reader.line(), "labels", "ground truth length differs from num_nodes");
      for (Label y : truth)
        if (y < 0 || y >= d.num_labels)
          throw ValidationError("line " + std::to_string(reader.line()) +
                                ": ground-truth label out of range");
    } else if (type == "end") {
      reader.expect_fields(rec, {});
      if (nodes_seen != d.num_nodes)
        throw ParseError(reader.line(), "node", "fewer node records than num_nodes");
      try {
        return {CrfInstance(std::move(d)), std::move(truth)};
      } catch (const ValidationError& e) {
        throw ValidationError("instance ending at line " + std::to_string(reader.line()) + ": " +
                              e.what());
      }
    } else {
      throw ParseError(reader.line(), "record", "unknown record type '" + type + "'");
    }
  }
  throw ParseError(reader.line(), "end", "truncated instance: missing end record");
}

}  // namespace

void save_instance(std::ostream& out, const CrfInstance& instance, const Labeling* truth) {
  write_instance_block(out, instance, truth);
}

Sample load_instance(std::istream& in) {
  RecordReader reader(in);
  json rec;
  if (!reader.next(rec)) throw ParseError(reader.line(), "header", "empty file");
  if (rec.at("record") != "header") throw ParseError(reader.line(), "record", "expected header");
  Sample s = read_instance_block(reader, rec);
  if (reader.next(rec)) throw ParseError(reader.line(), "record", "trailing records after end");
  return s;
}

void save_dataset(std::ostream& out, const Dataset& ds) {
  out << json{{"record", "dataset"},
              {"version", kFormatVersion},
              {"instances", ds.samples.size()},
              {"train", ds.train},
              {"validation", ds.validation}}
             .dump()
      << '\n';
  for (const Sample& s : ds.samples) write_instance_block(out, s.instance, &s.truth);
}

Dataset load_dataset(std::istream& in) {
  RecordReader reader(in);
  json rec;
  if (!reader.next(rec)) throw ParseError(reader.line(), "dataset", "empty file");
  Dataset ds;
  if (rec.at("record") == "header") {
    // A bare instance file is a one-sample dataset.
    ds.samples.push_back(read_instance_block(reader, rec));
    ds.train = {0};
  } else if (rec.at("record") == "dataset") {
    reader.expect_fields(rec, {"version", "instances", "train", "validation"});
    if (reader.get<int>(rec, "version") != kFormatVersion)
      throw ParseError(reader.line(), "version", "unsupported format version");
    const int count = reader.get<int>(rec, "instances");
    ds.train = reader.get<std::vector<int>>(rec, "train");
    ds.validation = reader.get<std::vector<int>>(rec, "validation");
    for (int k = 0; k < count; ++k) {
      if (!reader.next(rec))
        throw ParseError(reader.line(), "header", "truncated dataset: missing instances");
      if (rec.at("record") != "header")
        throw ParseError(reader.line(), "record", "expected instance header");
      ds.samples.push_back(read_instance_block(reader, rec));
    }
    for (int idx : ds.train)
      if (idx < 0 || idx >= count) throw ValidationError("dataset: train index out of range");
    for (int idx : ds.validation)
      if (idx < 0 || idx >= count) throw ValidationError("dataset: validation index out of range");
  } else {
    throw ParseError(reader.line(), "record", "expected dataset or header record");
  }
  if (reader.next(rec)) throw ParseError(reader.line(), "record", "trailing records");
  return ds;
}

void save_dataset_file(const std::string& path, const Dataset& ds) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  save_dataset(out, ds);
}

Dataset load_dataset_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "'");
  return load_dataset(in);
}

void save_labelings(std::ostream& out, const std::vector<LabelingRecord>& records) {
  for (const LabelingRecord& r : records)
    out << json{{"record", "labeling"},
                {"instance", r.instance},
                {"labels", r.labels},
                {"energy", r.energy}}
               .dump()
        << '\n';
}

std::vector<LabelingRecord> load_labelings(std::istream& in) {
  RecordReader reader(in);
  std::vector<LabelingRecord> out;
  json rec;
  while (reader.next(rec)) {
    if (rec.at("record") != "labeling")
      throw ParseError(reader.line(), "record", "expected labeling record");
    reader.expect_fields(rec, {"instance", "labels", "energy"});
    out.push_back({reader.get<int>(rec, "instance"), reader.get<std::vector<int>>(rec, "labels"),
                   reader.get<double>(rec, "energy")});
  }
  return out;
}

Metrics score(const Labeling& prediction, const Labeling& truth) {
  if (prediction.size() != truth.size())
    throw ValidationError("score: prediction and truth lengths differ");
  if (truth.empty()) return {1.0, 1.0};
  std::map<Label, std::pair<int, int>> tally;  // label -> (intersection, union)
  int correct = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (prediction[i] == truth[i]) {
      ++correct;
      ++tally[truth[i]].first;
      ++tally[truth[i]].second;
    } else {
      ++tally[truth[i]].second;
      ++tally[prediction[i]].second;
    }
  }
  double iou = 0.0;
  for (const auto& [label, iu] : tally) iou += static_cast<double>(iu.first) / iu.second;
  return {static_cast<double>(correct) / truth.size(), iou / tally.size()};
}

}  // namespace hocrf
