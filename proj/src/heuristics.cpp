#include "packer/heuristics.hpp"

#include <algorithm>
#include <deque>
#include <tuple>

namespace packer {

namespace {

template <typename Score>
int argmin_valid(const PackState& s, Score score) {
  const ActionMask& m = s.mask();
  int best = -1;
  decltype(score(0)) best_v{};
  for (int a = 0; a < m.size(); ++a) {
    if (!m.at(a)) continue;
    auto v = score(a);
    if (best < 0 || v < best_v) {
      best = a;
      best_v = v;
    }
  }
  if (best < 0) throw NoFeasibleAction();
  return best;
}

// Sliding-window maximum along one axis of a row-major grid.
std::vector<int> window_max(const std::vector<int>& in, int rows, int cols, int win) {
  const int out_cols = cols - win + 1;
  std::vector<int> out(static_cast<std::size_t>(rows) * out_cols);
  std::deque<int> q;
  for (int r = 0; r < rows; ++r) {
    const int* row = in.data() + static_cast<std::ptrdiff_t>(r) * cols;
    q.clear();
    for (int c = 0; c < cols; ++c) {
      while (!q.empty() && row[q.back()] <= row[c]) q.pop_back();
      q.push_back(c);
      if (q.front() <= c - win) q.pop_front();
      if (c >= win - 1) out[static_cast<std::size_t>(r) * out_cols + (c - win + 1)] = row[q.front()];
    }
  }
  return out;
}

struct GridCandidate {
  std::int64_t key;
  int x, y, z;
  Orientation o;
};

// All in-bounds grid positions with their drop height, for both orientations.
template <typename Key>
std::vector<GridCandidate> grid_candidates(const Heightmap& hm, ItemDims item, Key key) {
  const BinDims& d = hm.dims();
  std::vector<GridCandidate> out;
  for (int oi = 0; oi < 2; ++oi) {
    const auto o = static_cast<Orientation>(oi);
    const ItemDims r = oriented(item, o);
    if (r.l > d.L || r.w > d.W || r.h > d.H) continue;
    // cells are x-major: rows = x, cols = y
    const auto along_y = window_max(hm.cells(), d.L, d.W, r.w);
    const int ny = d.W - r.w + 1;
    std::vector<int> transposed(static_cast<std::size_t>(ny) * d.L);
    for (int x = 0; x < d.L; ++x)
      for (int y = 0; y < ny; ++y)
        transposed[static_cast<std::size_t>(y) * d.L + x] = along_y[static_cast<std::size_t>(x) * ny + y];
    const auto drop = window_max(transposed, ny, d.L, r.l);  // rows = y, cols = x
    const int nx = d.L - r.l + 1;
    for (int x = 0; x < nx; ++x)
      for (int y = 0; y < ny; ++y) {
        const int z = drop[static_cast<std::size_t>(y) * nx + x];
        if (z + r.h > d.H) continue;
        out.push_back({key(x, y, z, r), x, y, z, o});
      }
  }
  return out;
}

std::optional<Placement> first_stable(const Heightmap& hm, ItemDims item, std::vector<GridCandidate> cands) {
  std::sort(cands.begin(), cands.end(), [](const GridCandidate& a, const GridCandidate& b) {
    return std::tie(a.key, a.x, a.y, a.o) < std::tie(b.key, b.x, b.y, b.o);
  });
  for (const auto& c : cands) {
    Placement p(c.x, c.y, c.z, item, c.o);
    if (check_stability(hm, p)) return p;
  }
  return std::nullopt;
}

}  // namespace

int online_bph(const PackState& s, const Heightmap& hm) {
  const int n = s.mask().capacity();
  const int H = hm.dims().H;
  return argmin_valid(s, [&](int a) {
    const Ems& e = s.ems().spaces[static_cast<std::size_t>(a % n)];
    const ItemDims r = oriented(s.item, static_cast<Orientation>(a / n));
    return (e.dx() - r.l) + (e.dy() - r.w) + (H - e.flb.z - r.h);
  });
}

int best_fit_ep(const PackState& s, const Heightmap&) {
  const int n = s.mask().capacity();
  return argmin_valid(s, [&](int a) {
    const Ems& e = s.ems().spaces[static_cast<std::size_t>(a % n)];
    return std::make_tuple(e.flb.z, e.flb.x, e.flb.y, a / n);
  });
}

int heightmap_min(const PackState& s, const Heightmap& hm) {
  const int n = s.mask().capacity();
  return argmin_valid(s, [&](int a) {
    const Ems& e = s.ems().spaces[static_cast<std::size_t>(a % n)];
    const ItemDims r = oriented(s.item, static_cast<Orientation>(a / n));
    const std::int64_t top = e.flb.z + r.h;
    std::int64_t inc = 0;
    for (int x = e.flb.x; x < e.flb.x + r.l; ++x)
      for (int y = e.flb.y; y < e.flb.y + r.w; ++y) inc += top - hm.at(x, y);
    return inc;
  });
}

int random_masked(const PackState& s, Rng& rng) {
  const ActionMask& m = s.mask();
  const int k = m.count();
  if (k == 0) throw NoFeasibleAction();
  std::uniform_int_distribution<int> pick(0, k - 1);
  int target = pick(rng);
  for (int a = 0; a < m.size(); ++a)
    if (m.at(a) && target-- == 0) return a;
  throw NoFeasibleAction();
}

std::optional<Placement> best_fit_grid(const Heightmap& hm, ItemDims item) {
  return first_stable(hm, item, grid_candidates(hm, item, [](int, int, int z, ItemDims) { return std::int64_t{z}; }));
}

std::optional<Placement> heightmap_min_grid(const Heightmap& hm, ItemDims item) {
  // Footprint sums via a 2D prefix table.
  const BinDims& d = hm.dims();
  std::vector<std::int64_t> pre(static_cast<std::size_t>(d.L + 1) * (d.W + 1), 0);
  auto P = [&](int x, int y) -> std::int64_t& { return pre[static_cast<std::size_t>(x) * (d.W + 1) + y]; };
  for (int x = 0; x < d.L; ++x)
    for (int y = 0; y < d.W; ++y) P(x + 1, y + 1) = hm.at(x, y) + P(x, y + 1) + P(x + 1, y) - P(x, y);
  return first_stable(hm, item, grid_candidates(hm, item, [&](int x, int y, int z, ItemDims r) {
                        const std::int64_t under = P(x + r.l, y + r.w) - P(x, y + r.w) - P(x + r.l, y) + P(x, y);
                        const std::int64_t inc = std::int64_t{r.l} * r.w * (z + r.h) - under;
                        return inc * (d.H + 1) + z;  // lower resting height breaks ties
                      }));
}

std::string HeuristicPolicy::name() const {
  switch (kind_) {
    case HeuristicKind::OnlineBph: return "online_bph";
    case HeuristicKind::BestFitEp: return "best_fit_ems";
    case HeuristicKind::HeightmapMin: return "heightmap_min_ems";
    case HeuristicKind::RandomMasked: return "random";
    case HeuristicKind::BestFitGrid: return "best_fit";
    case HeuristicKind::HeightmapMinGrid: return "heightmap_min";
  }
  return "?";
}

bool HeuristicPolicy::uses_action_space() const {
  return kind_ != HeuristicKind::BestFitGrid && kind_ != HeuristicKind::HeightmapMinGrid;
}

Placement HeuristicPolicy::choose(const PackState& s, const Heightmap& hm, Rng& rng) const {
  auto from_action = [&](int a) { return action_to_placement(a, s.bin, s.item); };
  auto or_throw = [](std::optional<Placement> p) {
    if (!p) throw NoFeasibleAction();
    return *p;
  };
  switch (kind_) {
    case HeuristicKind::OnlineBph: return from_action(online_bph(s, hm));
    case HeuristicKind::BestFitEp: return from_action(best_fit_ep(s, hm));
    case HeuristicKind::HeightmapMin: return from_action(heightmap_min(s, hm));
    case HeuristicKind::RandomMasked: return from_action(random_masked(s, rng));
    case HeuristicKind::BestFitGrid: return or_throw(best_fit_grid(hm, s.item));
    case HeuristicKind::HeightmapMinGrid: return or_throw(heightmap_min_grid(hm, s.item));
  }
  throw NoFeasibleAction();
}

std::unique_ptr<HeuristicPolicy> make_heuristic(const std::string& name) {
  auto make = [](HeuristicKind k) { return std::make_unique<HeuristicPolicy>(k); };
  if (name == "bph" || name == "online_bph") return make(HeuristicKind::OnlineBph);
  if (name == "bestfit" || name == "best_fit") return make(HeuristicKind::BestFitGrid);
  if (name == "hm" || name == "heightmap_min") return make(HeuristicKind::HeightmapMinGrid);
  if (name == "bestfit-ems" || name == "best_fit_ems") return make(HeuristicKind::BestFitEp);
  if (name == "hm-ems" || name == "heightmap_min_ems") return make(HeuristicKind::HeightmapMin);
  if (name == "random" || name == "random_masked") return make(HeuristicKind::RandomMasked);
  return nullptr;
}

}  // namespace packer
