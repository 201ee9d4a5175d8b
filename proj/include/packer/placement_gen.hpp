#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

#include "packer/bin_core.hpp"

namespace packer {

inline constexpr int kDefaultEmsCapacity = 80;

// Fixed-capacity candidate set. `rows` holds unit-normalized
// (x1, y1, z1, x2, y2, z2); padding rows are zero with valid = false.
struct EmsSet {
  Eigen::MatrixXd rows;
  std::vector<std::uint8_t> valid;
  std::vector<Ems> spaces;  // integer EMSs backing the valid rows, same order

  int capacity() const { return static_cast<int>(valid.size()); }
  int valid_count() const { return static_cast<int>(spaces.size()); }
};

// 2 x N feasibility matrix, orientation major: action a = o * N + i.
class ActionMask {
 public:
  ActionMask() = default;
  explicit ActionMask(int capacity) : capacity_(capacity), bits_(2 * static_cast<std::size_t>(capacity), 0) {}

  int capacity() const { return capacity_; }
  int size() const { return 2 * capacity_; }
  bool operator()(int o, int i) const { return bits_[static_cast<std::size_t>(o) * capacity_ + i] != 0; }
  bool at(int action) const { return bits_[static_cast<std::size_t>(action)] != 0; }
  void set(int o, int i, bool v) { bits_[static_cast<std::size_t>(o) * capacity_ + i] = v; }
  int count() const;
  bool any() const { return count() > 0; }
  const std::vector<std::uint8_t>& bits() const { return bits_; }

  friend bool operator==(const ActionMask&, const ActionMask&) = default;

 private:
  int capacity_ = 0;
  std::vector<std::uint8_t> bits_;
};

struct BinState {
  EmsSet ems;
  ActionMask mask;
};

// Sort key (z asc, x asc, y asc, volume desc); the lowest `capacity` EMSs are kept.
std::vector<Ems> rank_ems(std::vector<Ems> spaces);

BinState build_bin_state(const Heightmap& hm, ItemDims item, int capacity = kDefaultEmsCapacity);

// Decodes an action into a placement. Throws std::domain_error for indices
// outside [0, 2N) or masked entries.
Placement action_to_placement(int action, const BinState& state, ItemDims item);

inline int action_index(Orientation o, int ems_index, int capacity) {
  return static_cast<int>(o) * capacity + ems_index;
}

}  // namespace packer
