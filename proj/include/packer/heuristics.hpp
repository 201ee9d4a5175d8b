#pragma once

#include <memory>
#include <optional>
#include <string>

#include "packer/pack_env.hpp"

namespace packer {

struct NoFeasibleAction : std::domain_error {
  NoFeasibleAction() : std::domain_error("no feasible action") {}
};

// Common decision interface for heuristics and the neural policy. Returns a
// placement that passes place_item, or throws NoFeasibleAction.
class Policy {
 public:
  virtual ~Policy() = default;
  virtual std::string name() const = 0;
  virtual Placement choose(const PackState& state, const Heightmap& hm, Rng& rng) const = 0;
};

// Decision rules over the (orientation, EMS) action space. Each returns a
// mask-valid action index; ties go to the lowest index.

// Smallest summed margin between EMS and oriented item extents.
int online_bph(const PackState& state, const Heightmap& hm);
// Lowest resulting placement, then smallest (x, y), then 0 degrees.
int best_fit_ep(const PackState& state, const Heightmap& hm);
// Smallest increase of the heightmap sum.
int heightmap_min(const PackState& state, const Heightmap& hm);
// Uniform over mask-valid actions.
int random_masked(const PackState& state, Rng& rng);

// The same rules over every stable grid position (x, y, orientation) resting at
// its drop height, in the candidate scheme of the original baselines.
// heightmap_min_grid prefers the lower resting height among equal increases;
// remaining ties go to (x, y) lexicographic, then orientation.
std::optional<Placement> best_fit_grid(const Heightmap& hm, ItemDims item);
std::optional<Placement> heightmap_min_grid(const Heightmap& hm, ItemDims item);

enum class HeuristicKind { OnlineBph, BestFitEp, HeightmapMin, RandomMasked, BestFitGrid, HeightmapMinGrid };

class HeuristicPolicy final : public Policy {
 public:
  explicit HeuristicPolicy(HeuristicKind kind) : kind_(kind) {}
  std::string name() const override;
  Placement choose(const PackState& state, const Heightmap& hm, Rng& rng) const override;
  HeuristicKind kind() const { return kind_; }
  bool uses_action_space() const;

 private:
  HeuristicKind kind_;
};

// Names: "bph", "bestfit", "hm", "random" (bestfit and hm use grid candidates),
// "bestfit-ems", "hm-ems" (restricted to the EMS action space).
std::unique_ptr<HeuristicPolicy> make_heuristic(const std::string& name);

}  // namespace packer
