#include <doctest.h>

#include <cmath>
#include <map>

#include "packer/heuristics.hpp"
#include "packer/pack_env.hpp"

using namespace packer;

namespace {

EpisodeConfig sequence_config(std::vector<ItemDims> seq, RewardMode mode = RewardMode::StepWise) {
  EpisodeConfig c;
  c.sequence = std::move(seq);
  c.reward = mode;
  return c;
}

}  // namespace

TEST_CASE("RS item sampling") {
  Rng rng(1);
  std::map<ItemDims, int> freq;
  const int n = 1000000;
  for (int i = 0; i < n; ++i) ++freq[sample_item(rng, {10, 10, 10})];
  CHECK(freq.size() == 125);
  const double p = 1.0 / 125, sigma = std::sqrt(p * (1 - p) / n);
  int outside = 0;
  for (const auto& [it, c] : freq) {
    CHECK(it.l >= 1);
    CHECK(it.l <= 5);
    if (std::abs(c / double(n) - p) > 3 * sigma) ++outside;
  }
  // About 0.3% of types may fall outside 3 sigma by chance.
  CHECK(outside <= 2);

  for (int i = 0; i < 1000; ++i) {
    const ItemDims it = sample_item(rng, {30, 30, 30});
    for (int d : {it.l, it.w, it.h}) {
      CHECK(d % 3 == 0);
      CHECK(d >= 3);
      CHECK(d <= 15);
    }
  }
  CHECK(rs_item_types({10, 10, 10}).size() == 125);
  CHECK(rs_item_types({30, 30, 30}).back() == ItemDims{15, 15, 15});
  CHECK_THROWS_AS(sample_item(rng, {15, 10, 10}), std::invalid_argument);
}

TEST_CASE("item observation") {
  const ItemObs o = item_observation({2, 4, 5}, {10, 20, 10});
  CHECK(o(0, 0) == 0.2);
  CHECK(o(0, 1) == 0.2);
  CHECK(o(0, 2) == 0.5);
  CHECK(o(1, 0) == 0.4);
  CHECK(o(1, 1) == 0.1);
}

TEST_CASE("reset") {
  PackEnv env(sequence_config({{3, 2, 1}, {1, 1, 1}}));
  const PackState& s = env.reset();
  CHECK(s.ems().valid_count() == 1);
  CHECK(s.item == ItemDims{3, 2, 1});
  CHECK(s.item_obs(0, 0) == doctest::Approx(0.3));
  CHECK(env.utilization() == 0.0);
  CHECK(env.packed_count() == 0);

  EpisodeConfig c;
  PackEnv a(c), b(c);
  a.reset(77);
  b.reset(77);
  CHECK(a.state().item == b.state().item);
  CHECK(a.state().ems().rows == b.state().ems().rows);
}

TEST_CASE("step rewards") {
  PackEnv env(sequence_config({{2, 3, 4}, {5, 5, 5}}));
  env.reset();
  const StepResult r = env.step(0);
  CHECK(r.reward == doctest::Approx(0.024));
  CHECK_FALSE(r.done);

  PackEnv one(sequence_config({{5, 5, 5}}));
  one.reset();
  const StepResult last = one.step(0);
  CHECK(last.done);  // the sequence ran out
  CHECK(one.utilization() == 0.125);
  CHECK(one.packed_count() == 1);
}

TEST_CASE("invalid actions are rejected without changing the state") {
  PackEnv env(sequence_config({{2, 2, 2}, {2, 2, 2}}));
  env.reset();
  const auto before = env.heightmap();
  CHECK_THROWS_AS(env.step(1), std::domain_error);
  CHECK_THROWS_AS(env.step(-3), std::domain_error);
  CHECK(env.heightmap() == before);
  CHECK(env.packed_count() == 0);
}

TEST_CASE("episodes: reward identity, termination and determinism") {
  for (RewardMode mode : {RewardMode::StepWise, RewardMode::Terminal}) {
    EpisodeConfig c;
    c.reward = mode;
    c.seed = 5;
    PackEnv env(c);
    Rng rng(9);
    for (int ep = 0; ep < 50; ++ep) {
      env.reset();
      double sum = 0.0;
      int steps = 0;
      bool done = false;
      while (!done) {
        REQUIRE(env.state().mask().any());
        const StepResult r = env.step(random_masked(env.state(), rng));
        if (mode == RewardMode::Terminal && !r.done) CHECK(r.reward == 0.0);
        sum += r.reward;
        done = r.done;
        ++steps;
      }
      CHECK_FALSE(env.state().mask().any());
      CHECK(env.done());
      CHECK(steps == env.packed_count());
      CHECK(steps >= 1);
      CHECK(std::abs(sum - env.utilization()) < 1e-12);
      CHECK(env.utilization() <= 1.0);
      CHECK(env.heightmap().total() >= env.packed_volume());
    }
  }

  EpisodeConfig c;
  c.seed = 11;
  PackEnv a(c), b(c);
  a.reset();
  b.reset();
  Rng ra(1), rb(1);
  while (!a.done()) {
    a.step(random_masked(a.state(), ra));
    b.step(random_masked(b.state(), rb));
    CHECK(a.heightmap() == b.heightmap());
    CHECK(a.state().ems().rows == b.state().ems().rows);
  }
  CHECK(b.done());
}

TEST_CASE("training episodes draw only from the given item types") {
  EpisodeConfig c;
  c.item_types = std::vector<ItemDims>{{1, 2, 3}, {2, 2, 2}};
  c.seed = 3;
  PackEnv env(c);
  env.reset();
  Rng rng(0);
  for (int i = 0; i < 200; ++i) {
    CHECK((env.state().item == ItemDims{1, 2, 3} || env.state().item == ItemDims{2, 2, 2}));
    if (env.step(random_masked(env.state(), rng)).done) env.reset();
  }
}

TEST_CASE("reward mode names") {
  CHECK(reward_mode_from_string("terminal") == RewardMode::Terminal);
  CHECK(std::string(to_string(RewardMode::StepWise)) == "step_wise");
  CHECK_THROWS_AS(reward_mode_from_string("dense"), std::invalid_argument);
}
