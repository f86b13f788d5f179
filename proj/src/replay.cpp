#include "hocrf/replay.hpp"

namespace hocrf {

Chunk route_chunk(const CrfInstance& instance, const EpisodeState& state, Action action,
                  RewardScheme scheme) {
  const double taken = action_reward(instance, state, action, scheme);
  const double reference =
      action_reward(instance, state, {action.node, instance.unary_argmin(action.node)}, scheme);
  return taken > reference ? Chunk::kOverall : Chunk::kUnary;
}

}  // namespace hocrf
