#pragma once

#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "packer/evaluate.hpp"

namespace packer {

// "bph", "bestfit", "hm", "random", "bestfit-ems", "hm-ems", or a checkpoint
// given as "label=path" or a bare path ending in ".ckpt".
std::unique_ptr<Policy> make_policy(const std::string& spec);

struct BenchEnvironment {
  std::string name;  // e.g. "Bin-10"
  RsDataset data;
};

// "Bin-L" for cubic bins, "Bin-LxWxH" otherwise.
std::string environment_name(const BinDims& bin);

struct BenchCell {
  std::string method;
  std::string environment;
  std::optional<BenchResult> result;
  std::string error;  // set when the cell failed
};

// Cross product of methods and environments in row-major order (methods
// outer). Failing cells are kept with their error message.
std::vector<BenchCell> run_bench(const std::vector<std::string>& methods, const std::vector<BenchEnvironment>& envs,
                                 const EvalOptions& opt);

void write_bench_csv(std::ostream& os, const std::vector<BenchCell>& cells);
// Aligned table: Uti in percent with one decimal, Num with one decimal, Sta.
std::string format_bench_table(const std::vector<BenchCell>& cells);

// instance,utilization,packed,reward_sum
void write_instances_csv(std::ostream& os, const BenchResult& r);
void write_result_json(std::ostream& os, const BenchResult& r);

// Ordered placements of one episode as JSON:
// {"bin":[L,W,H],"utilization":u,"packed":n,"placements":[{"item":[l,w,h],"pos":[x,y,z],"orientation":0|90},...]}
// `items` holds the unrotated item of each placement.
std::string scene_to_json(const BinDims& bin, const std::vector<ItemDims>& items,
                          const std::vector<Placement>& placements);
// Replays a scene through place_item and returns the resulting utilization.
// Throws std::domain_error if any placement is rejected.
double replay_scene(const std::string& json);

}  // namespace packer
