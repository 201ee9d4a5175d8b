#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "packer/dataset.hpp"
#include "packer/heuristics.hpp"

namespace packer {

struct InstanceResult {
  double utilization = 0.0;
  int packed = 0;
  double reward_sum = 0.0;  // step_wise rewards accumulated in order
  std::vector<Placement> placements;
};

struct BenchResult {
  std::string method;
  std::string environment;
  double uti = 0.0;  // mean utilization
  double num = 0.0;  // mean packed count
  double sta = 0.0;  // population standard deviation of utilization
  int instances = 0;
  double wall_seconds = 0.0;
  std::vector<InstanceResult> per_instance;
};

struct EvalOptions {
  int ems_capacity = kDefaultEmsCapacity;
  std::uint64_t seed = 0;  // only consumed by stochastic policies
  int threads = 0;         // 0: OpenMP default
  bool keep_placements = true;
};

// Runs `policy` on every sequence of `ds`. Instance i uses its own generator
// seeded from (seed, i), so results do not depend on the worker count.
BenchResult evaluate(const Policy& policy, const RsDataset& ds, const EvalOptions& opt = {});

// Single-threaded reference with identical semantics.
BenchResult evaluate_serial(const Policy& policy, const RsDataset& ds, const EvalOptions& opt = {});

InstanceResult run_instance(const Policy& policy, const BinDims& bin, const std::vector<ItemDims>& sequence,
                            int ems_capacity, std::uint64_t seed);

std::uint64_t instance_seed(std::uint64_t seed, std::size_t index);

// Recomputes uti/num/sta from per_instance.
void summarize(BenchResult& r);

}  // namespace packer
