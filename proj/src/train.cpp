#include "hocrf/train.hpp"

#include <algorithm>
#include <nlohmann/json.hpp>
#include <ostream>

#include "hocrf/errors.hpp"

namespace hocrf {

double EpsilonSchedule::at(double progress) const {
  if (ramp_fraction <= 0.0) return end;
  const double f = std::clamp(progress / ramp_fraction, 0.0, 1.0);
  return start + (end - start) * f;
}

void write_epoch_log(std::ostream& out, const EpochLog& row, const std::string& trainer) {
  nlohmann::json j = {{"trainer", trainer},
                      {"epoch", row.epoch},
                      {"updates", row.updates},
                      {"loss_mean", row.loss_mean},
                      {"loss_var", row.loss_var},
                      {"episode_energy", row.episode_energy},
                      {"episode_accuracy", row.episode_accuracy},
                      {"validation_energy", row.validation_energy},
                      {"validation_accuracy", row.validation_accuracy}};
  if (trainer == "dqn") {
    j["epsilon"] = row.epsilon;
    j["td_abs_mean"] = row.td_abs_mean;
    j["td_abs_max"] = row.td_abs_max;
  } else {
    j["root_entropy"] = row.root_entropy;
  }
  out << j.dump() << '\n';
}

void write_epoch_timing(std::ostream& out, const EpochLog& row) {
  out << nlohmann::json{{"epoch", row.epoch}, {"seconds", row.seconds}}.dump() << '\n';
}

GreedySummary evaluate_greedy(const PolicyParams& params, const Dataset& dataset,
                              std::span<const int> indices) {
  GreedySummary s;
  if (indices.empty()) return s;
  int with_truth = 0;
  for (int k : indices) {
    const Sample& sample = dataset.samples[k];
    GreedyNetworkPolicy policy(params);
    const RolloutResult r = rollout(sample.instance, policy);
    s.mean_energy += r.energy;
    if (!sample.truth.empty()) {
      s.mean_accuracy += score(r.labeling, sample.truth).accuracy;
      ++with_truth;
    }
  }
  s.mean_energy /= static_cast<double>(indices.size());
  if (with_truth > 0) s.mean_accuracy /= with_truth;
  return s;
}

std::vector<int> training_indices(const Dataset& dataset) {
  if (!dataset.train.empty()) return dataset.train;
  std::vector<int> all(dataset.size());
  for (std::size_t k = 0; k < all.size(); ++k) all[k] = static_cast<int>(k);
  return all;
}

std::pair<double, double> mean_var(std::span<const double> values) {
  if (values.empty()) return {0.0, 0.0};
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= static_cast<double>(values.size());
  double var = 0.0;
  for (double v : values) var += (v - mean) * (v - mean);
  return {mean, var / static_cast<double>(values.size())};
}

PolicyShape network_shape(const Dataset& dataset, int rounds, int embed_dim) {
  if (dataset.samples.empty()) throw TrainingError("training needs a non-empty dataset");
  const CrfInstance& first = dataset.samples.front().instance;
  PolicyShape shape{rounds, embed_dim, first.num_labels(), first.feature_dim()};
  for (const Sample& s : dataset.samples) check_compatible(shape, s.instance);
  return shape;
}

void reduce_in_order(std::vector<PolicyParams>& parts, PolicyParams& total) {
  for (const PolicyParams& p : parts) total.add_scaled(p, 1.0);
}

}  // namespace hocrf
