#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <random>
#include <vector>

#include "packer/bin_core.hpp"
#include "packer/placement_gen.hpp"

namespace packer {

using Rng = std::mt19937_64;

enum class RewardMode { StepWise, Terminal };

const char* to_string(RewardMode m);
RewardMode reward_mode_from_string(const std::string& s);

// Each dimension uniform on {1..5} * min_side / 10. Requires every bin
// dimension to be divisible by 10.
ItemDims sample_item(Rng& rng, const BinDims& bin);

// Uniform pick from `types` when non-null, sample_item otherwise.
ItemDims draw_item(Rng& rng, const BinDims& bin, const std::vector<ItemDims>* types);

// The full RS item-type set for `bin`, lexicographically ordered.
std::vector<ItemDims> rs_item_types(const BinDims& bin);

// Item observation: rows (l, w, h) and (w, l, h), each divided by (L, W, H).
using ItemObs = Eigen::Matrix<double, 2, 3>;
ItemObs item_observation(ItemDims item, const BinDims& bin);

struct PackState {
  ItemDims item;
  ItemObs item_obs;
  BinState bin;

  const ActionMask& mask() const { return bin.mask; }
  const EmsSet& ems() const { return bin.ems; }
};

// Training episodes draw items i.i.d. (uniformly from `item_types` when given,
// otherwise via sample_item); evaluation episodes replay `sequence`.
struct EpisodeConfig {
  BinDims bin{10, 10, 10};
  int ems_capacity = kDefaultEmsCapacity;
  RewardMode reward = RewardMode::StepWise;
  std::uint64_t seed = 0;
  std::optional<std::vector<ItemDims>> item_types;
  std::optional<std::vector<ItemDims>> sequence;
};

struct StepResult {
  double reward = 0.0;
  bool done = false;
};

class PackEnv {
 public:
  explicit PackEnv(EpisodeConfig config);

  // Starts a new episode, continuing the environment's random stream.
  const PackState& reset();
  // Re-seeds and starts a new episode.
  const PackState& reset(std::uint64_t seed);

  // Throws std::domain_error for mask-invalid actions; state is unchanged then.
  StepResult step(int action);
  // Free placement (grid baselines). Must pass place_item; termination still
  // follows the action mask of the next item.
  StepResult step(const Placement& p);

  const PackState& state() const { return state_; }
  const Heightmap& heightmap() const { return hm_; }
  const EpisodeConfig& config() const { return config_; }
  const std::vector<Placement>& placements() const { return placements_; }
  bool done() const { return done_; }

  double utilization() const;
  int packed_count() const { return static_cast<int>(placements_.size()); }
  std::int64_t packed_volume() const { return packed_volume_; }

 private:
  std::optional<ItemDims> next_item();
  void observe(ItemDims item);

  EpisodeConfig config_;
  Rng rng_;
  Heightmap hm_;
  PackState state_;
  std::vector<Placement> placements_;
  std::int64_t packed_volume_ = 0;
  std::size_t cursor_ = 0;
  bool done_ = false;
};

}  // namespace packer
