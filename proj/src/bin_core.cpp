#include "packer/bin_core.hpp"

#include <algorithm>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace packer {

BinDims::BinDims(int l, int w, int h) : L(l), W(w), H(h) {
  if (l < 1 || w < 1 || h < 1) throw std::invalid_argument("bin dimensions must be positive");
}

int BinDims::min_side() const { return std::min({L, W, H}); }

BinDims parse_bin_dims(const std::string& text) {
  int v[3];
  std::size_t pos = 0;
  for (int i = 0; i < 3; ++i) {
    std::size_t used = 0;
    try {
      v[i] = std::stoi(text.substr(pos), &used);
    } catch (const std::exception&) {
      throw std::invalid_argument("bin dimensions must look like LxWxH, got '" + text + "'");
    }
    pos += used;
    const bool last = i == 2;
    if (last ? pos != text.size() : (pos >= text.size() || (text[pos] != 'x' && text[pos] != 'X')))
      throw std::invalid_argument("bin dimensions must look like LxWxH, got '" + text + "'");
    ++pos;
  }
  return {v[0], v[1], v[2]};
}

std::string format_bin_dims(const BinDims& b) {
  return std::to_string(b.L) + "x" + std::to_string(b.W) + "x" + std::to_string(b.H);
}

ItemDims::ItemDims(int l_, int w_, int h_) : l(l_), w(w_), h(h_) {
  if (l_ < 1 || w_ < 1 || h_ < 1) throw std::invalid_argument("item dimensions must be positive");
}

ItemDims oriented(ItemDims item, Orientation o) {
  if (o == Orientation::Deg90) std::swap(item.l, item.w);
  return item;
}

Heightmap::Heightmap(BinDims dims)
    : dims_(dims), cells_(static_cast<std::size_t>(dims.L) * dims.W, 0) {}

Heightmap::Heightmap(BinDims dims, std::vector<int> cells) : dims_(dims), cells_(std::move(cells)) {
  if (cells_.size() != static_cast<std::size_t>(dims.L) * dims.W)
    throw std::invalid_argument("heightmap cell count does not match bin footprint");
  for (int v : cells_)
    if (v < 0 || v > dims.H) throw std::invalid_argument("heightmap cell outside [0, H]");
}

std::int64_t Heightmap::total() const {
  std::int64_t s = 0;
  for (int v : cells_) s += v;
  return s;
}

Heightmap Heightmap::scaled(int k) const {
  Heightmap out(dims_.scaled(k));
  for (int x = 0; x < out.dims_.L; ++x)
    for (int y = 0; y < out.dims_.W; ++y) out.set(x, y, at(x / k, y / k) * k);
  return out;
}

std::string Heightmap::dump() const {
  std::ostringstream os;
  for (int y = 0; y < dims_.W; ++y) {
    for (int x = 0; x < dims_.L; ++x) {
      if (x) os << ' ';
      os << at(x, y);
    }
    os << '\n';
  }
  return os.str();
}

Heightmap Heightmap::parse(BinDims dims, const std::string& text) {
  Heightmap hm(dims);
  std::istringstream is(text);
  for (int y = 0; y < dims.W; ++y)
    for (int x = 0; x < dims.L; ++x) {
      int v;
      if (!(is >> v)) throw std::invalid_argument("heightmap dump truncated");
      if (v < 0 || v > dims.H) throw std::invalid_argument("heightmap cell outside [0, H]");
      hm.set(x, y, v);
    }
  return hm;
}

int drop_height(const Heightmap& hm, int x, int y, int l, int w) {
  const BinDims& d = hm.dims();
  if (l < 1 || w < 1 || x < 0 || y < 0 || x + l > d.L || y + w > d.W)
    throw std::domain_error("footprint out of bounds");
  int z = 0;
  for (int i = x; i < x + l; ++i)
    for (int j = y; j < y + w; ++j) z = std::max(z, hm.at(i, j));
  return z;
}

namespace {

bool in_bounds(const BinDims& d, const Placement& p) {
  return p.x >= 0 && p.y >= 0 && p.z >= 0 && p.x + p.dims.l <= d.L && p.y + p.dims.w <= d.W &&
         p.z + p.dims.h <= d.H;
}

using P2 = std::array<std::int64_t, 2>;

std::int64_t cross(const P2& o, const P2& a, const P2& b) {
  return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0]);
}

// Andrew's monotone chain; returns the hull counter-clockwise without
// collinear vertices.
std::vector<P2> convex_hull(std::vector<P2> pts) {
  std::sort(pts.begin(), pts.end());
  pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
  if (pts.size() < 3) return pts;
  std::vector<P2> hull(2 * pts.size());
  std::size_t k = 0;
  for (const auto& p : pts) {
    while (k >= 2 && cross(hull[k - 2], hull[k - 1], p) <= 0) --k;
    hull[k++] = p;
  }
  for (std::size_t i = pts.size() - 1, t = k + 1; i-- > 0;) {
    while (k >= t && cross(hull[k - 2], hull[k - 1], pts[i]) <= 0) --k;
    hull[k++] = pts[i];
  }
  hull.resize(k - 1);
  return hull;
}

}  // namespace

bool check_stability(const Heightmap& hm, const Placement& p) {
  if (p.z == 0) return true;
  // Coordinates are doubled so the bottom centre is integral.
  std::vector<P2> pts;
  for (int j = p.y; j < p.y + p.dims.w; ++j) {
    int lo = -1, hi = -1;
    for (int i = p.x; i < p.x + p.dims.l; ++i) {
      if (hm.at(i, j) != p.z) continue;
      if (lo < 0) lo = i;
      hi = i;
    }
    if (lo < 0) continue;
    pts.push_back({2 * lo, 2 * j});
    pts.push_back({2 * lo, 2 * (j + 1)});
    pts.push_back({2 * (hi + 1), 2 * j});
    pts.push_back({2 * (hi + 1), 2 * (j + 1)});
  }
  const auto hull = convex_hull(std::move(pts));
  if (hull.size() < 3) return false;
  std::int64_t area2 = 0;
  for (std::size_t i = 0; i < hull.size(); ++i) {
    const auto& a = hull[i];
    const auto& b = hull[(i + 1) % hull.size()];
    area2 += a[0] * b[1] - a[1] * b[0];
  }
  if (area2 <= 0) return false;
  const P2 c{2 * p.x + p.dims.l, 2 * p.y + p.dims.w};
  for (std::size_t i = 0; i < hull.size(); ++i)
    if (cross(hull[i], hull[(i + 1) % hull.size()], c) < 0) return false;
  return true;
}

Heightmap place_item(const Heightmap& hm, const Placement& p) {
  if (!in_bounds(hm.dims(), p)) throw std::domain_error("placement out of bounds");
  if (drop_height(hm, p.x, p.y, p.dims.l, p.dims.w) != p.z)
    throw std::domain_error("placement does not rest at its drop height");
  if (!check_stability(hm, p)) throw std::domain_error("placement is not statically stable");
  Heightmap out = hm;
  const int top = p.z + p.dims.h;
  for (int i = p.x; i < p.x + p.dims.l; ++i)
    for (int j = p.y; j < p.y + p.dims.w; ++j) out.set(i, j, top);
  return out;
}

std::vector<Vec3i> find_corner_points(const Heightmap& hm) {
  const BinDims& d = hm.dims();
  constexpr int wall = std::numeric_limits<int>::max();
  std::vector<Vec3i> out;
  for (int x = 0; x < d.L; ++x)
    for (int y = 0; y < d.W; ++y) {
      const int z = hm.at(x, y);
      if (z >= d.H) continue;
      const int left = x == 0 ? wall : hm.at(x - 1, y);
      const int front = y == 0 ? wall : hm.at(x, y - 1);
      if (left != z && front != z) out.push_back({x, y, z});
    }
  return out;
}

// Rectangles are anchored at the corner cell and grow towards +X and +Y over
// cells no higher than the corner. For every +Y extent the +X extent is the
// tightest per-row run; a rectangle is kept when the next row cannot take the
// whole span.
std::vector<Ems> generate_ems(const Heightmap& hm) {
  const BinDims& d = hm.dims();
  std::vector<Ems> out;
  for (const Vec3i& c : find_corner_points(hm)) {
    int x2 = d.L;
    for (int y = c.y; y < d.W; ++y) {
      int run = c.x;
      while (run < x2 && hm.at(run, y) <= c.z) ++run;
      if (run == c.x) break;
      x2 = run;
      // Maximal unless the next row admits the whole [c.x, x2) span.
      bool extendable = false;
      if (y + 1 < d.W) {
        extendable = true;
        for (int x = c.x; x < x2; ++x)
          if (hm.at(x, y + 1) > c.z) {
            extendable = false;
            break;
          }
      }
      if (!extendable) out.push_back(Ems{{c.x, c.y, c.z}, {x2, y + 1, d.H}});
    }
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

bool check_feasible(const Heightmap& hm, const Ems& e, ItemDims item, Orientation o) {
  const ItemDims r = oriented(item, o);
  if (r.l > e.dx() || r.w > e.dy() || r.h > hm.dims().H - e.flb.z) return false;
  return check_stability(hm, Placement(e.flb.x, e.flb.y, e.flb.z, item, o));
}

}  // namespace packer
