#pragma once

#include <cstddef>
#include <deque>
#include <random>
#include <stdexcept>
#include <vector>

#include "hocrf/crf.hpp"
#include "hocrf/env.hpp"

namespace hocrf {

// Chunk 0 holds experiences whose reward does not beat the unary-argmin
// relabeling of the same node; chunk 1 holds those that do.
enum class Chunk { kUnary = 0, kOverall = 1 };

// kOverall iff the action's reward exceeds the reward of labeling the same
// node with its unary argmin in the same state.
Chunk route_chunk(const CrfInstance& instance, const EpisodeState& state, Action action,
                  RewardScheme scheme);

// Two chunks x |L| label categories of bounded FIFO queues. Sampling is
// balanced: a non-empty cell is drawn uniformly, then an entry within it.
template <typename Entry>
class ReplayBuffer {
 public:
  ReplayBuffer(int num_labels, std::size_t total_capacity)
      : num_labels_(num_labels),
        cell_capacity_(std::max<std::size_t>(1, total_capacity / (2 * num_labels))),
        cells_(2 * static_cast<std::size_t>(num_labels)) {
    if (num_labels < 1) throw std::invalid_argument("replay buffer needs >= 1 label");
  }

  void insert(Entry entry, Chunk chunk, Label category) {
    auto& cell = cells_[index(chunk, category)];
    if (cell.size() == cell_capacity_) cell.pop_front();
    cell.push_back(std::move(entry));
  }

  std::size_t size() const {
    std::size_t n = 0;
    for (const auto& c : cells_) n += c.size();
    return n;
  }
  std::size_t cell_size(Chunk chunk, Label category) const {
    return cells_[index(chunk, category)].size();
  }
  const std::deque<Entry>& cell(Chunk chunk, Label category) const {
    return cells_[index(chunk, category)];
  }
  std::size_t cell_capacity() const { return cell_capacity_; }
  int num_labels() const { return num_labels_; }

  // Draws with replacement. Returns an empty batch when the buffer is empty.
  std::vector<const Entry*> sample(std::size_t batch, std::mt19937_64& rng) const {
    std::vector<std::size_t> live;
    for (std::size_t c = 0; c < cells_.size(); ++c)
      if (!cells_[c].empty()) live.push_back(c);
    std::vector<const Entry*> out;
    if (live.empty()) return out;
    out.reserve(batch);
    std::uniform_int_distribution<std::size_t> pick_cell(0, live.size() - 1);
    for (std::size_t b = 0; b < batch; ++b) {
      const auto& cell = cells_[live[pick_cell(rng)]];
      std::uniform_int_distribution<std::size_t> pick(0, cell.size() - 1);
      out.push_back(&cell[pick(rng)]);
    }
    return out;
  }

 private:
  std::size_t index(Chunk chunk, Label category) const {
    if (category < 0 || category >= num_labels_)
      throw std::out_of_range("replay buffer category out of range");
    return static_cast<std::size_t>(chunk) * num_labels_ + category;
  }

  int num_labels_;
  std::size_t cell_capacity_;
  std::vector<std::deque<Entry>> cells_;
};

}  // namespace hocrf
