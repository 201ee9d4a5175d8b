#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "packer/pack_env.hpp"
#include "packer/policy.hpp"

namespace packer::ppo {

using nn::Gradients;
using nn::PolicyParams;
using ad::Matrix;

struct TrainConfig {
  int n_envs = 8;
  int steps_per_env = 80;  // transitions per env between updates
  int batch_size = 128;
  int ppo_epochs = 4;
  std::int64_t total_steps = 2'000'000;
  double lr = 7e-5;  // decays linearly to 0 over total_steps
  double gamma = 1.0;
  double gae_lambda = 0.96;
  double clip = 0.3;
  double value_coef = 0.5;
  double entropy_coef = 0.001;
  double max_grad_norm = 0.5;
  bool normalize_advantages = true;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  int grad_chunk = 32;  // samples per gradient work unit; fixes the summation order
  std::uint64_t seed = 0;
  RewardMode reward = RewardMode::StepWise;
  BinDims bin{10, 10, 10};
  int ems_capacity = kDefaultEmsCapacity;
  std::string item_types;  // optional types file restricting training items
  nn::PolicyConfig policy;
  int checkpoint_every = 0;  // updates between periodic checkpoints, 0 = off
  int threads = 0;

  int transitions_per_update() const { return n_envs * steps_per_env; }
  std::int64_t updates() const;
  // Throws std::invalid_argument naming the first bad field.
  void validate() const;
};

// Linear decay: lr at `steps_done` of total_steps.
double learning_rate(const TrainConfig& c, std::int64_t steps_done);

struct Transition {
  PackState state;
  int action = -1;
  double log_prob = 0.0;
  double reward = 0.0;
  double value = 0.0;
  bool done = false;
};

// Consecutive transitions of one environment. `bootstrap` is V of the state
// after the last transition; it is ignored when that transition ended an episode.
struct Trajectory {
  std::vector<Transition> steps;
  double bootstrap = 0.0;
};

struct Advantages {
  std::vector<double> advantages;
  std::vector<double> returns;
};

// delta_t = r_t + gamma V_{t+1} (1 - done_t) - V_t,
// A_t = delta_t + gamma lambda (1 - done_t) A_{t+1}, returns = A + V.
// Throws std::invalid_argument on an empty trajectory.
Advantages compute_gae(const Trajectory& traj, double gamma, double lambda);

// In place zero-mean, unit-variance rescaling (no-op for fewer than two entries).
void normalize(std::vector<double>& v);

struct LossSample {
  int action = -1;  // full-layout action index
  double old_log_prob = 0.0;
  double advantage = 0.0;
  double ret = 0.0;
};

struct LossCoefs {
  double clip = 0.3;
  double value_coef = 0.5;
  double entropy_coef = 0.001;
};

// Sums of per-sample terms; divide by the sample count for means.
struct LossStats {
  double surrogate = 0.0;  // sum of min(p A, clip(p) A)
  double value_err = 0.0;  // sum of (V - R)^2
  double entropy = 0.0;
  double approx_kl = 0.0;  // sum of old_lp - new_lp
  double clipped = 0.0;    // count of |p - 1| > clip
  int samples = 0;
  LossStats& operator+=(const LossStats& o);
};

// Scalar -sum(min(p A, clip(p) A)) + c1 sum (V - R)^2 - c2 sum H, divided by
// `denom`. Probabilities, ratios and entropy use only mask-valid actions.
// The gradient w.r.t. scores and values is analytic.
ad::Var ppo_loss(ad::Var scores, ad::Var values, const nn::Batch& batch, const std::vector<LossSample>& samples,
                 const LossCoefs& coefs, double denom, LossStats* stats = nullptr);

struct MinibatchItem {
  const PackState* state = nullptr;
  LossSample sample;
};

// Loss gradient of a minibatch, split into fixed chunks of `chunk` samples
// that are evaluated in parallel and summed in chunk order. The result does
// not depend on the thread count.
Gradients minibatch_gradient(const PolicyParams& params, const std::vector<MinibatchItem>& items,
                             const LossCoefs& coefs, int chunk, LossStats* stats = nullptr);
// Single-threaded reference with the same chunking.
Gradients minibatch_gradient_serial(const PolicyParams& params, const std::vector<MinibatchItem>& items,
                                    const LossCoefs& coefs, int chunk, LossStats* stats = nullptr);

double global_norm(const Gradients& g);
// Rescales so the global norm is at most max_norm; returns the norm before clipping.
double clip_global_norm(Gradients& g, double max_norm);

class Adam {
 public:
  Adam(const PolicyParams& params, double beta1, double beta2, double eps);
  void step(PolicyParams& params, const Gradients& grads, double lr);
  std::int64_t steps() const { return t_; }

 private:
  double beta1_, beta2_, eps_;
  std::int64_t t_ = 0;
  Gradients m_, v_;
};

struct EpisodeStats {
  double utilization = 0.0;
  int packed = 0;
  double reward_sum = 0.0;
};

// A fixed set of training environments, each with its own item stream and
// action sampler.
class RolloutWorkers {
 public:
  RolloutWorkers(const TrainConfig& config, const std::vector<ItemDims>* item_types);

  // `steps` transitions per env with sampled actions; finished episodes are
  // reset and reported through `finished` in env order.
  std::vector<Trajectory> collect(const PolicyParams& params, int steps, std::vector<EpisodeStats>* finished);
  // Single-threaded reference with identical results.
  std::vector<Trajectory> collect_serial(const PolicyParams& params, int steps, std::vector<EpisodeStats>* finished);

  int size() const { return static_cast<int>(envs_.size()); }

 private:
  std::vector<Trajectory> run(const PolicyParams& params, int steps, std::vector<EpisodeStats>* finished,
                              bool parallel);

  std::vector<PackEnv> envs_;
  std::vector<Rng> samplers_;
  std::vector<double> returns_;
};

}  // namespace packer::ppo
