#include "packer/placement_gen.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

namespace packer {

int ActionMask::count() const { return static_cast<int>(std::count(bits_.begin(), bits_.end(), 1)); }

std::vector<Ems> rank_ems(std::vector<Ems> spaces) {
  std::sort(spaces.begin(), spaces.end(), [](const Ems& a, const Ems& b) {
    if (a.flb.z != b.flb.z) return a.flb.z < b.flb.z;
    if (a.flb.x != b.flb.x) return a.flb.x < b.flb.x;
    if (a.flb.y != b.flb.y) return a.flb.y < b.flb.y;
    if (a.volume() != b.volume()) return a.volume() > b.volume();
    return a < b;
  });
  return spaces;
}

BinState build_bin_state(const Heightmap& hm, ItemDims item, int capacity) {
  if (capacity < 1) throw std::invalid_argument("EMS capacity must be at least 1");
  const BinDims& d = hm.dims();
  std::vector<Ems> spaces = rank_ems(generate_ems(hm));
  if (static_cast<int>(spaces.size()) > capacity) spaces.resize(static_cast<std::size_t>(capacity));

  BinState s;
  s.ems.rows = Eigen::MatrixXd::Zero(capacity, 6);
  s.ems.valid.assign(static_cast<std::size_t>(capacity), 0);
  s.mask = ActionMask(capacity);
  const double L = d.L, W = d.W, H = d.H;
  for (std::size_t i = 0; i < spaces.size(); ++i) {
    const Ems& e = spaces[i];
    const int r = static_cast<int>(i);
    s.ems.rows.row(r) << e.flb.x / L, e.flb.y / W, e.flb.z / H, e.opp.x / L, e.opp.y / W, e.opp.z / H;
    s.ems.valid[i] = 1;
    s.mask.set(0, r, check_feasible(hm, e, item, Orientation::Deg0));
    s.mask.set(1, r, check_feasible(hm, e, item, Orientation::Deg90));
  }
  s.ems.spaces = std::move(spaces);
  return s;
}

Placement action_to_placement(int action, const BinState& state, ItemDims item) {
  const int n = state.ems.capacity();
  if (action < 0 || action >= 2 * n) throw std::domain_error("action index out of range");
  if (!state.mask.at(action)) throw std::domain_error("action is masked");
  const auto o = static_cast<Orientation>(action / n);
  const Ems& e = state.ems.spaces[static_cast<std::size_t>(action % n)];
  return Placement(e.flb.x, e.flb.y, e.flb.z, item, o);
}

}  // namespace packer
