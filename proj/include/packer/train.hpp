#pragma once

#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "packer/ppo.hpp"

namespace packer::ppo {

// Named presets: "ci" (8 envs, 2M steps) and "paper" (128 envs x 5 steps, 40M steps).
TrainConfig preset(const std::string& name);

// Every TrainConfig field is addressable by a key. Keys match the CLI flags.
std::vector<std::string> config_keys();
void set_config_value(TrainConfig& c, const std::string& key, const std::string& value);
std::string get_config_value(const TrainConfig& c, const std::string& key);

// key = value lines; '#' starts a comment. Unknown keys are errors.
void apply_config_text(TrainConfig& c, const std::string& text);
void apply_config_file(TrainConfig& c, const std::string& path);
std::string config_to_text(const TrainConfig& c);

struct UpdateMetrics {
  std::int64_t update = 0;
  std::int64_t steps = 0;  // env steps collected so far
  double lr = 0.0;
  int episodes = 0;         // finished during this update's rollouts
  std::optional<double> ep_uti, ep_num, ep_return;  // means over the last 100 episodes
  double policy_loss = 0.0;  // -mean clipped surrogate
  double value_loss = 0.0;
  double entropy = 0.0;
  double approx_kl = 0.0;
  double clip_fraction = 0.0;
  double grad_norm = 0.0;  // mean pre-clip norm over minibatches
  double seconds = 0.0;
};

std::string metrics_header();
std::string metrics_row(const UpdateMetrics& m);

struct TrainingDiverged : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct TrainOptions {
  std::string out_dir;  // checkpoints, metrics.csv and config.txt; empty = keep in memory
  std::function<void(const UpdateMetrics&)> on_update;
  // Start from these parameters instead of a fresh initialisation; their
  // config must equal config.policy.
  std::optional<PolicyParams> initial;
};

struct TrainResult {
  PolicyParams params;
  std::vector<UpdateMetrics> metrics;
};

// Alternates rollout collection and PPO updates until total_steps env steps
// are collected. On a non-finite loss or gradient the parameters from before
// that update are written to last_good.ckpt and TrainingDiverged is thrown.
TrainResult train(const TrainConfig& config, const TrainOptions& options = {});

}  // namespace packer::ppo
