#include "packer/pack_env.hpp"

#include <stdexcept>
#include <string>

namespace packer {

const char* to_string(RewardMode m) { return m == RewardMode::StepWise ? "step_wise" : "terminal"; }

RewardMode reward_mode_from_string(const std::string& s) {
  if (s == "step_wise") return RewardMode::StepWise;
  if (s == "terminal") return RewardMode::Terminal;
  throw std::invalid_argument("unknown reward mode: " + s);
}

namespace {

// Item sides are multiples of min_side / 10 up to min_side / 2, so every bin
// size has the same 125 types, scaled.
int rs_step(const BinDims& bin) {
  if (bin.L % 10 || bin.W % 10 || bin.H % 10)
    throw std::invalid_argument("RS items need bin dimensions divisible by 10");
  return bin.min_side() / 10;
}

}  // namespace

ItemDims sample_item(Rng& rng, const BinDims& bin) {
  const int step = rs_step(bin);
  std::uniform_int_distribution<int> dist(1, 5);
  const int l = dist(rng);
  const int w = dist(rng);
  const int h = dist(rng);
  return {l * step, w * step, h * step};
}

ItemDims draw_item(Rng& rng, const BinDims& bin, const std::vector<ItemDims>* types) {
  if (!types) return sample_item(rng, bin);
  std::uniform_int_distribution<std::size_t> pick(0, types->size() - 1);
  return (*types)[pick(rng)];
}

std::vector<ItemDims> rs_item_types(const BinDims& bin) {
  const int step = rs_step(bin);
  std::vector<ItemDims> out;
  for (int l = 1; l <= 5; ++l)
    for (int w = 1; w <= 5; ++w)
      for (int h = 1; h <= 5; ++h) out.emplace_back(l * step, w * step, h * step);
  return out;
}

ItemObs item_observation(ItemDims item, const BinDims& bin) {
  const double L = bin.L, W = bin.W, H = bin.H;
  ItemObs m;
  m << item.l / L, item.w / W, item.h / H, item.w / L, item.l / W, item.h / H;
  return m;
}

PackEnv::PackEnv(EpisodeConfig config) : config_(std::move(config)), rng_(config_.seed), hm_(config_.bin) {
  if (config_.ems_capacity < 1) throw std::invalid_argument("EMS capacity must be at least 1");
  if (config_.item_types && config_.item_types->empty()) throw std::invalid_argument("empty item type set");
  reset();
}

const PackState& PackEnv::reset(std::uint64_t seed) {
  rng_.seed(seed);
  return reset();
}

const PackState& PackEnv::reset() {
  hm_ = Heightmap(config_.bin);
  placements_.clear();
  packed_volume_ = 0;
  cursor_ = 0;
  done_ = false;
  if (auto item = next_item()) {
    observe(*item);
  } else {
    observe(state_.item.l > 0 ? state_.item : ItemDims{1, 1, 1});
    state_.bin.mask = ActionMask(config_.ems_capacity);
    done_ = true;
  }
  return state_;
}

std::optional<ItemDims> PackEnv::next_item() {
  if (config_.sequence) {
    if (cursor_ >= config_.sequence->size()) return std::nullopt;
    return (*config_.sequence)[cursor_++];
  }
  return draw_item(rng_, config_.bin, config_.item_types ? &*config_.item_types : nullptr);
}

void PackEnv::observe(ItemDims item) {
  state_.item = item;
  state_.item_obs = item_observation(item, config_.bin);
  state_.bin = build_bin_state(hm_, item, config_.ems_capacity);
}

StepResult PackEnv::step(int action) {
  if (done_) throw std::domain_error("step called on a finished episode");
  return step(action_to_placement(action, state_.bin, state_.item));
}

StepResult PackEnv::step(const Placement& p) {
  if (done_) throw std::domain_error("step called on a finished episode");
  if (oriented(state_.item, p.orientation) != p.dims) throw std::domain_error("placement is for a different item");
  hm_ = place_item(hm_, p);
  placements_.push_back(p);
  packed_volume_ += p.dims.volume();

  StepResult r;
  if (auto item = next_item()) {
    observe(*item);
    r.done = !state_.bin.mask.any();
  } else {
    observe(state_.item);
    state_.bin.mask = ActionMask(config_.ems_capacity);
    r.done = true;
  }
  done_ = r.done;
  if (config_.reward == RewardMode::StepWise)
    r.reward = static_cast<double>(p.dims.volume()) / static_cast<double>(config_.bin.volume());
  else
    r.reward = r.done ? utilization() : 0.0;
  return r;
}

double PackEnv::utilization() const {
  return static_cast<double>(packed_volume_) / static_cast<double>(config_.bin.volume());
}

}  // namespace packer
