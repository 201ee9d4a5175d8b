#include "packer/ppo.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace packer::ppo {

std::int64_t TrainConfig::updates() const {
  const std::int64_t per = transitions_per_update();
  return (total_steps + per - 1) / per;
}

void TrainConfig::validate() const {
  auto need = [](bool ok, const char* field) {
    if (!ok) throw std::invalid_argument(std::string("invalid training config: ") + field);
  };
  need(n_envs >= 1, "n_envs");
  need(steps_per_env >= 1, "steps_per_env");
  need(batch_size >= 1, "batch_size");
  need(ppo_epochs >= 1, "ppo_epochs");
  need(total_steps >= 1, "total_steps");
  need(lr > 0, "lr");
  need(gamma > 0 && gamma <= 1, "gamma");
  need(gae_lambda >= 0 && gae_lambda <= 1, "gae_lambda");
  need(clip > 0 && clip < 1, "clip");
  need(value_coef >= 0, "value_coef");
  need(entropy_coef >= 0, "entropy_coef");
  need(max_grad_norm > 0, "max_grad_norm");
  need(adam_beta1 >= 0 && adam_beta1 < 1, "adam_beta1");
  need(adam_beta2 >= 0 && adam_beta2 < 1, "adam_beta2");
  need(adam_eps > 0, "adam_eps");
  need(grad_chunk >= 1, "grad_chunk");
  need(ems_capacity >= 1, "ems_capacity");
  need(checkpoint_every >= 0, "checkpoint_every");
  need(threads >= 0, "threads");
}

double learning_rate(const TrainConfig& c, std::int64_t steps_done) {
  const double frac = static_cast<double>(steps_done) / static_cast<double>(c.total_steps);
  return c.lr * std::max(0.0, 1.0 - frac);
}

Advantages compute_gae(const Trajectory& traj, double gamma, double lambda) {
  const auto n = traj.steps.size();
  if (n == 0) throw std::invalid_argument("compute_gae: empty trajectory");
  Advantages out;
  out.advantages.assign(n, 0.0);
  out.returns.assign(n, 0.0);
  double next_value = traj.bootstrap, next_adv = 0.0;
  for (std::size_t i = n; i-- > 0;) {
    const Transition& t = traj.steps[i];
    const double live = t.done ? 0.0 : 1.0;
    const double delta = t.reward + gamma * next_value * live - t.value;
    out.advantages[i] = delta + gamma * lambda * live * next_adv;
    out.returns[i] = out.advantages[i] + t.value;
    next_value = t.value;
    next_adv = out.advantages[i];
  }
  return out;
}

void normalize(std::vector<double>& v) {
  if (v.size() < 2) return;
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  double var = 0.0;
  for (double x : v) var += (x - mean) * (x - mean);
  const double sd = std::sqrt(var / static_cast<double>(v.size()));
  for (double& x : v) x = (x - mean) / (sd + 1e-8);
}

LossStats& LossStats::operator+=(const LossStats& o) {
  surrogate += o.surrogate;
  value_err += o.value_err;
  entropy += o.entropy;
  approx_kl += o.approx_kl;
  clipped += o.clipped;
  samples += o.samples;
  return *this;
}

ad::Var ppo_loss(ad::Var scores, ad::Var values, const nn::Batch& batch, const std::vector<LossSample>& samples,
                 const LossCoefs& coefs, double denom, LossStats* stats) {
  ad::Tape& t = *scores.tape;
  const int n = batch.size();
  if (static_cast<int>(samples.size()) != n || values.rows() != n || values.cols() != 1 ||
      scores.cols() != batch.score_off.back())
    throw std::invalid_argument("ppo_loss: batch shape mismatch");
  if (!(denom > 0)) throw std::invalid_argument("ppo_loss: denominator must be positive");
  const Matrix& sv = scores.value();
  const Matrix& vv = values.value();
  Matrix d_scores = Matrix::Zero(1, sv.cols());
  Matrix d_values(n, 1);
  LossStats st;
  double loss = 0.0;
  for (int s = 0; s < n; ++s) {
    const LossSample& smp = samples[static_cast<std::size_t>(s)];
    const int base = batch.score_off[static_cast<std::size_t>(s)];
    const int end = batch.score_off[static_cast<std::size_t>(s) + 1];
    const int chosen = batch.score_index(s, smp.action);
    if (chosen < 0 || !batch.mask[static_cast<std::size_t>(chosen)])
      throw std::domain_error("ppo_loss: sample action is not mask-valid");
    double mx = -std::numeric_limits<double>::infinity();
    for (int f = base; f < end; ++f)
      if (batch.mask[static_cast<std::size_t>(f)]) mx = std::max(mx, sv(0, f));
    double z = 0.0;
    for (int f = base; f < end; ++f)
      if (batch.mask[static_cast<std::size_t>(f)]) z += std::exp(sv(0, f) - mx);
    const double log_z = mx + std::log(z);
    double entropy = 0.0;
    for (int f = base; f < end; ++f) {
      if (!batch.mask[static_cast<std::size_t>(f)]) continue;
      const double lp = sv(0, f) - log_z;
      entropy -= std::exp(lp) * lp;
    }
    const double new_lp = sv(0, chosen) - log_z;
    const double ratio = std::exp(new_lp - smp.old_log_prob);
    const double a = smp.advantage;
    const double unclipped = ratio * a;
    const double clipped = std::clamp(ratio, 1.0 - coefs.clip, 1.0 + coefs.clip) * a;
    const double surrogate = std::min(unclipped, clipped);
    // d(-surrogate)/d(new_lp) is -ratio * A on the unclipped branch, 0 otherwise.
    const double g_lp = unclipped <= clipped ? -unclipped : 0.0;
    const double verr = vv(s, 0) - smp.ret;
    loss += -surrogate + coefs.value_coef * verr * verr - coefs.entropy_coef * entropy;
    for (int f = base; f < end; ++f) {
      if (!batch.mask[static_cast<std::size_t>(f)]) continue;
      const double lp = sv(0, f) - log_z;
      const double p = std::exp(lp);
      double g = -g_lp * p;              // through log-sum-exp
      g += coefs.entropy_coef * p * (lp + entropy);  // -c2 dH/dl = c2 p (lp + H)
      d_scores(0, f) = g / denom;
    }
    d_scores(0, chosen) += g_lp / denom;
    d_values(s, 0) = 2.0 * coefs.value_coef * verr / denom;
    st.surrogate += surrogate;
    st.value_err += verr * verr;
    st.entropy += entropy;
    st.approx_kl += smp.old_log_prob - new_lp;
    st.clipped += std::abs(ratio - 1.0) > coefs.clip ? 1.0 : 0.0;
    ++st.samples;
  }
  if (stats) *stats += st;
  Matrix out(1, 1);
  out(0, 0) = loss / denom;
  return t.record(std::move(out), {scores, values},
                  [scores, values, d_scores = std::move(d_scores), d_values = std::move(d_values)](
                      ad::Tape& t, const Matrix& g) {
                    t.accumulate_expr(scores.id, d_scores * g(0, 0));
                    t.accumulate_expr(values.id, d_values * g(0, 0));
                  });
}

namespace {

void add_into(Gradients& acc, const Gradients& g) {
  for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += g[i];
}

Gradients chunk_gradient(const PolicyParams& params, const std::vector<MinibatchItem>& items, std::size_t begin,
                         std::size_t end, const LossCoefs& coefs, LossStats* stats) {
  std::vector<const PackState*> states;
  std::vector<LossSample> samples;
  for (std::size_t i = begin; i < end; ++i) {
    states.push_back(items[i].state);
    samples.push_back(items[i].sample);
  }
  const nn::Batch b = nn::make_batch(states);
  Gradients g = nn::zero_gradients(params);
  ad::Tape t;
  nn::Network net(t, params, &g);
  const nn::BatchForward f = nn::forward(net, b);
  t.backward(ppo_loss(f.scores, f.values, b, samples, coefs, static_cast<double>(items.size()), stats));
  return g;
}

Gradients gradient_impl(const PolicyParams& params, const std::vector<MinibatchItem>& items, const LossCoefs& coefs,
                        int chunk, LossStats* stats, bool parallel) {
  if (items.empty()) throw std::invalid_argument("minibatch_gradient: empty minibatch");
  if (chunk < 1) throw std::invalid_argument("minibatch_gradient: chunk must be positive");
  const std::size_t step = static_cast<std::size_t>(chunk);
  const std::size_t chunks = (items.size() + step - 1) / step;
  std::vector<Gradients> parts(chunks);
  std::vector<LossStats> part_stats(chunks);
  std::exception_ptr error;
#pragma omp parallel for schedule(static) if (parallel)
  for (std::size_t c = 0; c < chunks; ++c) {
    try {
      parts[c] = chunk_gradient(params, items, c * step, std::min(items.size(), (c + 1) * step), coefs, &part_stats[c]);
    } catch (...) {
#pragma omp critical
      if (!error) error = std::current_exception();
    }
  }
  if (error) std::rethrow_exception(error);
  Gradients total = std::move(parts[0]);
  for (std::size_t c = 1; c < chunks; ++c) add_into(total, parts[c]);
  if (stats)
    for (const auto& s : part_stats) *stats += s;
  return total;
}

}  // namespace

Gradients minibatch_gradient(const PolicyParams& params, const std::vector<MinibatchItem>& items,
                             const LossCoefs& coefs, int chunk, LossStats* stats) {
  return gradient_impl(params, items, coefs, chunk, stats, true);
}

Gradients minibatch_gradient_serial(const PolicyParams& params, const std::vector<MinibatchItem>& items,
                                    const LossCoefs& coefs, int chunk, LossStats* stats) {
  return gradient_impl(params, items, coefs, chunk, stats, false);
}

double global_norm(const Gradients& g) {
  double sq = 0.0;
  for (const auto& m : g) sq += m.squaredNorm();
  return std::sqrt(sq);
}

double clip_global_norm(Gradients& g, double max_norm) {
  const double norm = global_norm(g);
  if (norm > max_norm) {
    const double k = max_norm / (norm + 1e-6);
    for (auto& m : g) m *= k;
  }
  return norm;
}

Adam::Adam(const PolicyParams& params, double beta1, double beta2, double eps)
    : beta1_(beta1), beta2_(beta2), eps_(eps), m_(nn::zero_gradients(params)), v_(nn::zero_gradients(params)) {}

void Adam::step(PolicyParams& params, const Gradients& grads, double lr) {
  if (grads.size() != params.size() || m_.size() != params.size())
    throw std::invalid_argument("Adam: gradient count does not match the parameters");
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * grads[i];
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * grads[i].cwiseProduct(grads[i]);
    params.tensor(i).array() -= lr * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + eps_);
  }
}

RolloutWorkers::RolloutWorkers(const TrainConfig& config, const std::vector<ItemDims>* item_types) {
  config.validate();
  Rng seeder(config.seed);
  for (int e = 0; e < config.n_envs; ++e) {
    EpisodeConfig ec;
    ec.bin = config.bin;
    ec.ems_capacity = config.ems_capacity;
    ec.reward = config.reward;
    ec.seed = seeder();
    if (item_types) ec.item_types = *item_types;
    envs_.emplace_back(ec);
    envs_.back().reset();
    samplers_.emplace_back(seeder());
    returns_.push_back(0.0);
  }
}

std::vector<Trajectory> RolloutWorkers::collect(const PolicyParams& params, int steps,
                                                std::vector<EpisodeStats>* finished) {
  return run(params, steps, finished, true);
}

std::vector<Trajectory> RolloutWorkers::collect_serial(const PolicyParams& params, int steps,
                                                       std::vector<EpisodeStats>* finished) {
  return run(params, steps, finished, false);
}

std::vector<Trajectory> RolloutWorkers::run(const PolicyParams& params, int steps,
                                            std::vector<EpisodeStats>* finished, bool parallel) {
  // Forward passes go in fixed groups so the arithmetic never depends on the
  // thread count.
  constexpr int kGroup = 8;
  const int n = size();
  const int groups = (n + kGroup - 1) / kGroup;
  std::vector<Trajectory> trajs(static_cast<std::size_t>(n));
  std::vector<std::vector<EpisodeStats>> done_eps(static_cast<std::size_t>(n));
  std::vector<nn::PolicyOutput> outs(static_cast<std::size_t>(n));
  auto forward_group = [&](int g) {
    std::vector<const PackState*> states;
    for (int e = g * kGroup; e < std::min(n, (g + 1) * kGroup); ++e) states.push_back(&envs_[e].state());
    auto res = nn::evaluate(states, params);
    for (std::size_t i = 0; i < res.size(); ++i) outs[static_cast<std::size_t>(g * kGroup) + i] = std::move(res[i]);
  };
  std::exception_ptr error;
  auto guarded = [&](auto&& fn) {
    try {
      fn();
    } catch (...) {
#pragma omp critical
      if (!error) error = std::current_exception();
    }
  };
  for (int t = 0; t < steps; ++t) {
#pragma omp parallel for schedule(static) if (parallel)
    for (int g = 0; g < groups; ++g) guarded([&] { forward_group(g); });
    if (error) std::rethrow_exception(error);
#pragma omp parallel for schedule(static) if (parallel)
    for (int e = 0; e < n; ++e) {
      guarded([&] {
        PackEnv& env = envs_[static_cast<std::size_t>(e)];
        const nn::ActResult r =
            nn::choose_action(outs[static_cast<std::size_t>(e)], env.state().mask(), nn::ActMode::Sample,
                              samplers_[static_cast<std::size_t>(e)]);
        Transition tr;
        tr.state = env.state();
        tr.action = r.action;
        tr.log_prob = r.log_prob;
        tr.value = r.value;
        const StepResult sr = env.step(r.action);
        tr.reward = sr.reward;
        tr.done = sr.done;
        returns_[static_cast<std::size_t>(e)] += sr.reward;
        if (sr.done) {
          done_eps[static_cast<std::size_t>(e)].push_back(
              {env.utilization(), env.packed_count(), returns_[static_cast<std::size_t>(e)]});
          returns_[static_cast<std::size_t>(e)] = 0.0;
          env.reset();
        }
        trajs[static_cast<std::size_t>(e)].steps.push_back(std::move(tr));
      });
    }
    if (error) std::rethrow_exception(error);
  }
#pragma omp parallel for schedule(static) if (parallel)
  for (int g = 0; g < groups; ++g) guarded([&] { forward_group(g); });
  if (error) std::rethrow_exception(error);
  for (int e = 0; e < n; ++e) trajs[static_cast<std::size_t>(e)].bootstrap = outs[static_cast<std::size_t>(e)].value;
  if (finished)
    for (const auto& v : done_eps) finished->insert(finished->end(), v.begin(), v.end());
  return trajs;
}

}  // namespace packer::ppo
