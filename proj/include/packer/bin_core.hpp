#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace packer {

// Bin extent in cells along X (length), Y (width) and Z (height).
struct BinDims {
  int L = 0;
  int W = 0;
  int H = 0;

  BinDims() = default;
  BinDims(int l, int w, int h);

  std::int64_t volume() const { return std::int64_t{L} * W * H; }
  int min_side() const;
  BinDims scaled(int k) const { return {L * k, W * k, H * k}; }
  friend bool operator==(const BinDims&, const BinDims&) = default;
};

// "LxWxH", e.g. "10x10x10". Throws std::invalid_argument on malformed text.
BinDims parse_bin_dims(const std::string& text);
std::string format_bin_dims(const BinDims& b);

struct ItemDims {
  int l = 0;
  int w = 0;
  int h = 0;

  ItemDims() = default;
  ItemDims(int l_, int w_, int h_);

  std::int64_t volume() const { return std::int64_t{l} * w * h; }
  ItemDims scaled(int k) const { return {l * k, w * k, h * k}; }
  friend bool operator==(const ItemDims&, const ItemDims&) = default;
  friend auto operator<=>(const ItemDims&, const ItemDims&) = default;
};

// The two upright in-plane orientations. Deg90 swaps length and width.
enum class Orientation : int { Deg0 = 0, Deg90 = 1 };

ItemDims oriented(ItemDims item, Orientation o);

struct Vec3i {
  int x = 0;
  int y = 0;
  int z = 0;
  friend bool operator==(const Vec3i&, const Vec3i&) = default;
  friend auto operator<=>(const Vec3i&, const Vec3i&) = default;
};

// Empty maximal space. `opp` is the exclusive upper corner.
struct Ems {
  Vec3i flb;
  Vec3i opp;

  int dx() const { return opp.x - flb.x; }
  int dy() const { return opp.y - flb.y; }
  int dz() const { return opp.z - flb.z; }
  std::int64_t volume() const { return std::int64_t{dx()} * dy() * dz(); }
  friend bool operator==(const Ems&, const Ems&) = default;
  friend auto operator<=>(const Ems&, const Ems&) = default;
};

struct Placement {
  int x = 0;
  int y = 0;
  int z = 0;
  Orientation orientation = Orientation::Deg0;
  ItemDims dims;  // already oriented

  Placement() = default;
  Placement(int x_, int y_, int z_, ItemDims item, Orientation o)
      : x(x_), y(y_), z(z_), orientation(o), dims(oriented(item, o)) {}

  friend bool operator==(const Placement&, const Placement&) = default;
};

class Heightmap {
 public:
  Heightmap() = default;
  explicit Heightmap(BinDims dims);
  Heightmap(BinDims dims, std::vector<int> cells);  // x-major: cells[x * W + y]

  const BinDims& dims() const { return dims_; }
  int at(int x, int y) const { return cells_[static_cast<std::size_t>(x) * dims_.W + y]; }
  void set(int x, int y, int v) { cells_[static_cast<std::size_t>(x) * dims_.W + y] = v; }
  const std::vector<int>& cells() const { return cells_; }

  // Sum of all cell heights (volume under the height surface).
  std::int64_t total() const;

  // Each cell becomes a k x k block and every height is multiplied by k.
  Heightmap scaled(int k) const;

  // One line per Y row (y = 0 first), heights space separated.
  std::string dump() const;
  static Heightmap parse(BinDims dims, const std::string& text);

  friend bool operator==(const Heightmap&, const Heightmap&) = default;

 private:
  BinDims dims_;
  std::vector<int> cells_;
};

// Resting elevation of a l x w footprint at (x, y). Throws std::domain_error
// when the footprint leaves the grid.
int drop_height(const Heightmap& hm, int x, int y, int l, int w);

// Returns the heightmap after placing `p`. Throws std::domain_error and leaves
// `hm` untouched unless the placement is in bounds, rests at its drop height
// and is statically stable.
Heightmap place_item(const Heightmap& hm, const Placement& p);

// Cells below the ceiling whose height differs from both the -X and the -Y
// neighbour (walls count as different).
std::vector<Vec3i> find_corner_points(const Heightmap& hm);

// For each corner (x, y, z): every rectangle with FLB (x, y) whose cells are all
// at most z and which cannot grow towards +X or +Y. Each yields
// Ems{(x, y, z), (x2, y2, H)}. Sorted, without duplicates.
std::vector<Ems> generate_ems(const Heightmap& hm);

bool check_stability(const Heightmap& hm, const Placement& p);
bool check_feasible(const Heightmap& hm, const Ems& e, ItemDims item, Orientation o);

}  // namespace packer
