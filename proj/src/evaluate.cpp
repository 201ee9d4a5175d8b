#include "packer/evaluate.hpp"

#include <omp.h>

#include <chrono>
#include <cmath>
#include <exception>

namespace packer {

std::uint64_t instance_seed(std::uint64_t seed, std::size_t index) {
  // splitmix64 finaliser over (seed, index)
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

InstanceResult run_instance(const Policy& policy, const BinDims& bin, const std::vector<ItemDims>& sequence,
                            int ems_capacity, std::uint64_t seed) {
  EpisodeConfig cfg;
  cfg.bin = bin;
  cfg.ems_capacity = ems_capacity;
  cfg.reward = RewardMode::StepWise;
  cfg.sequence = sequence;
  PackEnv env(cfg);
  Rng rng(seed);
  InstanceResult r;
  while (!env.done()) {
    r.reward_sum += env.step(policy.choose(env.state(), env.heightmap(), rng)).reward;
  }
  r.utilization = env.utilization();
  r.packed = env.packed_count();
  r.placements = env.placements();
  return r;
}

void summarize(BenchResult& r) {
  r.instances = static_cast<int>(r.per_instance.size());
  if (r.instances == 0) {
    r.uti = r.num = r.sta = 0.0;
    return;
  }
  double su = 0.0, sn = 0.0;
  for (const auto& x : r.per_instance) {
    su += x.utilization;
    sn += x.packed;
  }
  r.uti = su / r.instances;
  r.num = sn / r.instances;
  double ss = 0.0;
  for (const auto& x : r.per_instance) ss += (x.utilization - r.uti) * (x.utilization - r.uti);
  r.sta = std::sqrt(ss / r.instances);
}

namespace {

BenchResult finish(const Policy& policy, const RsDataset& ds, std::vector<InstanceResult> results,
                   const EvalOptions& opt, std::chrono::steady_clock::time_point t0) {
  BenchResult r;
  r.method = policy.name();
  r.environment = "Bin-" + std::to_string(ds.bin.L);
  r.per_instance = std::move(results);
  if (!opt.keep_placements)
    for (auto& x : r.per_instance) x.placements.clear();
  summarize(r);
  r.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

}  // namespace

BenchResult evaluate_serial(const Policy& policy, const RsDataset& ds, const EvalOptions& opt) {
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<InstanceResult> results(ds.sequences.size());
  for (std::size_t i = 0; i < ds.sequences.size(); ++i)
    results[i] = run_instance(policy, ds.bin, ds.sequences[i], opt.ems_capacity, instance_seed(opt.seed, i));
  return finish(policy, ds, std::move(results), opt, t0);
}

BenchResult evaluate(const Policy& policy, const RsDataset& ds, const EvalOptions& opt) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto n = static_cast<std::ptrdiff_t>(ds.sequences.size());
  std::vector<InstanceResult> results(ds.sequences.size());
  std::exception_ptr failure;
  const int threads = opt.threads > 0 ? opt.threads : omp_get_max_threads();
#pragma omp parallel for schedule(dynamic) num_threads(threads)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    try {
      const auto u = static_cast<std::size_t>(i);
      results[u] = run_instance(policy, ds.bin, ds.sequences[u], opt.ems_capacity, instance_seed(opt.seed, u));
    } catch (...) {
#pragma omp critical
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);
  return finish(policy, ds, std::move(results), opt, t0);
}

}  // namespace packer
