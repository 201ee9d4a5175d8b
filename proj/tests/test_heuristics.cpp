#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "packer/evaluate.hpp"
#include "packer/heuristics.hpp"

using namespace packer;

namespace {

const BinDims kBin10{10, 10, 10};

PackState state_of(const Heightmap& hm, ItemDims item) {
  PackState s;
  s.item = item;
  s.item_obs = item_observation(item, hm.dims());
  s.bin = build_bin_state(hm, item);
  return s;
}

Heightmap block(int l, int w, int h) {
  return place_item(Heightmap(kBin10), Placement(0, 0, 0, {l, w, h}, Orientation::Deg0));
}

// Two hand-made candidate spaces, both feasible in both orientations unless masked.
PackState synthetic(ItemDims item, std::vector<Ems> spaces, std::vector<std::pair<int, int>> valid) {
  PackState s;
  s.item = item;
  const int n = 4;
  s.bin.ems.rows = Eigen::MatrixXd::Zero(n, 6);
  s.bin.ems.valid.assign(n, 0);
  for (std::size_t i = 0; i < spaces.size(); ++i) s.bin.ems.valid[i] = 1;
  s.bin.ems.spaces = std::move(spaces);
  s.bin.mask = ActionMask(n);
  for (auto [o, i] : valid) s.bin.mask.set(o, i, true);
  return s;
}

}  // namespace

TEST_CASE("online BPH minimises the summed margin") {
  const Heightmap empty(kBin10);
  CHECK(online_bph(state_of(empty, {3, 3, 3}), empty) == 0);
  const PackState s = synthetic({4, 2, 3}, {{{0, 0, 0}, {9, 9, 10}}, {{5, 5, 0}, {9, 7, 10}}},
                                {{0, 0}, {1, 0}, {0, 1}});
  CHECK(online_bph(s, empty) == 1);  // margins 19 vs 7
  const PackState single = synthetic({4, 2, 3}, {{{0, 0, 0}, {9, 9, 10}}}, {{1, 0}});
  CHECK(online_bph(single, empty) == 4);
}

TEST_CASE("best fit over spaces takes the lowest, then smallest (x, y)") {
  const Heightmap empty(kBin10);
  CHECK(best_fit_ep(state_of(empty, {2, 2, 2}), empty) == 0);
  const Heightmap hm = block(3, 3, 2);
  const PackState s = state_of(hm, {2, 2, 2});
  const Placement p = action_to_placement(best_fit_ep(s, hm), s.bin, s.item);
  CHECK(Vec3i{p.x, p.y, p.z} == Vec3i{0, 3, 0});
  CHECK(p.orientation == Orientation::Deg0);
}

TEST_CASE("heightmap-min over spaces avoids voids and breaks ties by index") {
  const Heightmap hm = block(3, 3, 2);
  const PackState s = state_of(hm, {2, 2, 2});
  CHECK(heightmap_min(s, hm) == 0);  // beside and on top both add 8
  const Heightmap low = block(2, 2, 1);
  const PackState t = state_of(low, {3, 3, 1});
  const Placement p = action_to_placement(heightmap_min(t, low), t.bin, t.item);
  CHECK(p.z == 0);  // on top of the 2x2 step would add 14 instead of 9
}

TEST_CASE("random masked policy") {
  Rng rng(1);
  const PackState one = synthetic({1, 1, 1}, {{{0, 0, 0}, {9, 9, 10}}}, {{1, 0}});
  for (int i = 0; i < 20; ++i) CHECK(random_masked(one, rng) == 4);
  const PackState two = synthetic({1, 1, 1}, {{{0, 0, 0}, {9, 9, 10}}, {{1, 0, 0}, {9, 9, 10}}}, {{0, 1}, {1, 0}});
  const int n = 100000;
  int first = 0;
  for (int i = 0; i < n; ++i) first += random_masked(two, rng) == 1;
  CHECK(std::abs(first / double(n) - 0.5) < 3 * std::sqrt(0.25 / n));
  Rng a(4), b(4);
  for (int i = 0; i < 50; ++i) CHECK(random_masked(two, a) == random_masked(two, b));
  CHECK_THROWS_AS(random_masked(synthetic({1, 1, 1}, {}, {}), rng), NoFeasibleAction);
}

TEST_CASE("grid baselines") {
  const Heightmap empty(kBin10);
  CHECK(best_fit_grid(empty, {3, 4, 2}) == Placement(0, 0, 0, {3, 4, 2}, Orientation::Deg0));
  CHECK(heightmap_min_grid(empty, {3, 4, 2}) == Placement(0, 0, 0, {3, 4, 2}, Orientation::Deg0));
  const Heightmap full = block(10, 10, 9);
  CHECK_FALSE(best_fit_grid(full, {1, 1, 2}).has_value());
  // A grid position off every EMS corner: next to a 3x3 block the lowest spot is the floor.
  const Heightmap hm = block(3, 3, 2);
  const auto p = best_fit_grid(hm, {2, 2, 2});
  REQUIRE(p.has_value());
  CHECK(p->z == 0);
}

TEST_CASE("every heuristic only emits applicable placements and is deterministic") {
  for (const char* name : {"bph", "bestfit", "hm", "random", "bestfit-ems", "hm-ems"}) {
    CAPTURE(std::string(name));
    const auto policy = make_heuristic(name);
    REQUIRE(policy);
    EpisodeConfig cfg;
    cfg.seed = 13;
    for (int ep = 0; ep < 10; ++ep) {
      PackEnv a(cfg), b(cfg);
      a.reset(100 + static_cast<std::uint64_t>(ep));
      b.reset(100 + static_cast<std::uint64_t>(ep));
      Rng ra(ep), rb(ep);
      while (!a.done()) {
        const Placement pa = policy->choose(a.state(), a.heightmap(), ra);
        const Placement pb = policy->choose(b.state(), b.heightmap(), rb);
        CHECK(pa == pb);
        if (policy->uses_action_space()) {
          const auto& spaces = a.state().ems().spaces;
          CHECK(std::any_of(spaces.begin(), spaces.end(),
                            [&](const Ems& e) { return e.flb == Vec3i{pa.x, pa.y, pa.z}; }));
        }
        CHECK_NOTHROW(a.step(pa));
        b.step(pb);
      }
    }
  }
  CHECK(make_heuristic("nope") == nullptr);
}

TEST_CASE("parallel evaluation equals the serial reference") {
  const RsDataset ds = generate_dataset(kBin10, 24, 5, 100);
  for (const char* name : {"bph", "random", "hm"}) {
    const auto policy = make_heuristic(name);
    EvalOptions opt;
    opt.seed = 3;
    const BenchResult s = evaluate_serial(*policy, ds, opt);
    for (int threads : {1, 3}) {
      opt.threads = threads;
      const BenchResult p = evaluate(*policy, ds, opt);
      CHECK(p.uti == s.uti);
      CHECK(p.sta == s.sta);
      for (std::size_t i = 0; i < s.per_instance.size(); ++i) {
        CHECK(p.per_instance[i].utilization == s.per_instance[i].utilization);
        CHECK(p.per_instance[i].placements == s.per_instance[i].placements);
      }
    }
    for (const auto& r : s.per_instance) CHECK(std::abs(r.reward_sum - r.utilization) < 1e-12);
  }
}

TEST_CASE("summary statistics") {
  BenchResult r;
  r.per_instance = {{0.5, 10, 0.5, {}}, {0.7, 14, 0.7, {}}};
  summarize(r);
  CHECK(r.instances == 2);
  CHECK(r.uti == doctest::Approx(0.6));
  CHECK(r.num == doctest::Approx(12.0));
  CHECK(r.sta == doctest::Approx(0.1));
}
