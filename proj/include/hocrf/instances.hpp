#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "hocrf/crf.hpp"

namespace hocrf {

struct Range {
  double min = 0.0;
  double max = 0.0;
};

// Synthetic grid instance recipe. Nodes are cells of a 4-connected grid.
struct InstanceSpec {
  int width = 3;
  int height = 3;
  int num_labels = 3;
  double unary_noise = 0.3;     // sigma_u in [0, 1]
  double unary_scale = 3.0;     // logit margin of the planted label
  double feature_noise = 0.3;   // sigma_f
  int hypercolumn_dim = 8;
  int num_regions = 2;          // planted rectangles painted over a background label
  int num_hop1 = 1;             // regions that also emit a HOP1 clique
  int num_hop2 = 0;             // small rectangles nested inside regions
  Range hop1_confidence{0.5, 1.0};
  Range hop1_weight{0.5, 1.0};
  Range hop2_penalty{2.0, 4.0};
  Range hop2_divisor{2.0, 2.0};
  Range hop2_size{1.0, 2.0};    // side lengths of nested rectangles
  int hop2_label = -1;          // target label of nested cliques; -1 selects |L|-1
  bool hop2_missed = true;      // unaries inside nested rectangles follow the enclosing label
  double alpha_p = 0.5;
  double beta_p = 1.0;
  std::uint64_t seed = 0;

  int num_nodes() const { return width * height; }
  int feature_dim() const { return num_labels + 3; }
  int resolved_hop2_label() const { return hop2_label < 0 ? num_labels - 1 : hop2_label; }
};

void validate(const InstanceSpec& spec);

struct Sample {
  CrfInstance instance;
  Labeling truth;  // empty when unknown
};

struct Dataset {
  std::vector<Sample> samples;
  std::vector<int> train;
  std::vector<int> validation;

  std::size_t size() const { return samples.size(); }
};

// Deterministic in spec.seed.
Sample generate(const InstanceSpec& spec);

// Instance k uses seed spec.seed + k. The last `num_validation` samples form the
// validation split.
Dataset generate_dataset(const InstanceSpec& spec, int count, int num_validation);

// Line-delimited JSON interchange format (see README). Parsing is strict: unknown
// records or fields, truncation and out-of-range labels are rejected.
void save_dataset(std::ostream& out, const Dataset& dataset);
Dataset load_dataset(std::istream& in);
void save_dataset_file(const std::string& path, const Dataset& dataset);
Dataset load_dataset_file(const std::string& path);

void save_instance(std::ostream& out, const CrfInstance& instance, const Labeling* truth = nullptr);
Sample load_instance(std::istream& in);

struct LabelingRecord {
  int instance = 0;
  Labeling labels;
  double energy = 0.0;
};

void save_labelings(std::ostream& out, const std::vector<LabelingRecord>& records);
std::vector<LabelingRecord> load_labelings(std::istream& in);

struct Metrics {
  double accuracy = 0.0;
  double mean_iou = 0.0;
};

// Accuracy and mean IoU over labels present in either labeling.
Metrics score(const Labeling& prediction, const Labeling& truth);

}  // namespace hocrf
