#include "packer/bench.hpp"

#include <cmath>
#include <cstdio>
#include <iomanip>
#include <json.hpp>
#include <ostream>
#include <sstream>

#include "packer/checkpoint.hpp"
#include "packer/policy.hpp"

namespace packer {

using nlohmann::json;

std::unique_ptr<Policy> make_policy(const std::string& spec) {
  if (auto h = make_heuristic(spec)) return h;
  std::string label = "gopt", path = spec;
  if (const auto eq = spec.find('='); eq != std::string::npos) {
    label = spec.substr(0, eq);
    path = spec.substr(eq + 1);
  } else if (spec.size() < 5 || spec.substr(spec.size() - 5) != ".ckpt") {
    throw std::invalid_argument("unknown method '" + spec + "' (expected a heuristic name or a .ckpt path)");
  }
  return std::make_unique<nn::NeuralPolicy>(nn::load_params(path), label);
}

std::string environment_name(const BinDims& bin) {
  if (bin.L == bin.W && bin.W == bin.H) return "Bin-" + std::to_string(bin.L);
  return "Bin-" + format_bin_dims(bin);
}

std::vector<BenchCell> run_bench(const std::vector<std::string>& methods, const std::vector<BenchEnvironment>& envs,
                                 const EvalOptions& opt) {
  std::vector<BenchCell> cells;
  for (const auto& m : methods) {
    std::unique_ptr<Policy> policy;
    std::string load_error;
    try {
      policy = make_policy(m);
    } catch (const std::exception& e) {
      load_error = e.what();
    }
    for (const auto& env : envs) {
      BenchCell c{policy ? policy->name() : m, env.name, std::nullopt, load_error};
      if (policy) {
        try {
          BenchResult r = evaluate(*policy, env.data, opt);
          r.environment = env.name;
          c.result = std::move(r);
        } catch (const std::exception& e) {
          c.error = e.what();
        }
      }
      cells.push_back(std::move(c));
    }
  }
  return cells;
}

namespace {

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char ch : s) out += ch == '"' ? std::string("\"\"") : std::string(1, ch);
  return out + "\"";
}

std::string fixed(double v, int digits) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

std::string exact(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

}  // namespace

void write_bench_csv(std::ostream& os, const std::vector<BenchCell>& cells) {
  os << "method,environment,uti,num,sta,instances,wall_seconds,error\n";
  for (const auto& c : cells) {
    os << csv_field(c.method) << ',' << csv_field(c.environment) << ',';
    if (c.result) {
      const auto& r = *c.result;
      os << exact(r.uti) << ',' << exact(r.num) << ',' << exact(r.sta) << ',' << r.instances << ','
         << fixed(r.wall_seconds, 3) << ',';
    } else {
      os << ",,,,,";
    }
    os << csv_field(c.error) << '\n';
  }
}

std::string format_bench_table(const std::vector<BenchCell>& cells) {
  std::vector<std::array<std::string, 5>> rows{{"Method", "Env", "Uti", "Num", "Sta"}};
  for (const auto& c : cells) {
    if (c.result)
      rows.push_back({c.method, c.environment, fixed(100.0 * c.result->uti, 1) + "%", fixed(c.result->num, 1),
                      fixed(c.result->sta, 3)});
    else
      rows.push_back({c.method, c.environment, "FAILED", "-", "-"});
  }
  std::array<std::size_t, 5> width{};
  for (const auto& r : rows)
    for (std::size_t i = 0; i < 5; ++i) width[i] = std::max(width[i], r[i].size());
  std::ostringstream os;
  for (std::size_t k = 0; k < rows.size(); ++k) {
    for (std::size_t i = 0; i < 5; ++i) {
      if (i < 2)
        os << std::left << std::setw(static_cast<int>(width[i])) << rows[k][i];
      else
        os << std::right << std::setw(static_cast<int>(width[i])) << rows[k][i];
      os << (i + 1 < 5 ? "  " : "\n");
    }
  }
  for (const auto& c : cells)
    if (!c.result) os << "# " << c.method << " on " << c.environment << " failed: " << c.error << '\n';
  return os.str();
}

void write_instances_csv(std::ostream& os, const BenchResult& r) {
  os << "instance,utilization,packed,reward_sum\n";
  for (std::size_t i = 0; i < r.per_instance.size(); ++i) {
    const auto& x = r.per_instance[i];
    os << i << ',' << exact(x.utilization) << ',' << x.packed << ',' << exact(x.reward_sum) << '\n';
  }
}

void write_result_json(std::ostream& os, const BenchResult& r) {
  json j = {{"method", r.method}, {"environment", r.environment}, {"uti", r.uti},
            {"num", r.num},       {"sta", r.sta},                 {"instances", r.instances}};
  os << j.dump() << '\n';
}

std::string scene_to_json(const BinDims& bin, const std::vector<ItemDims>& items,
                          const std::vector<Placement>& placements) {
  if (items.size() < placements.size()) throw std::invalid_argument("scene_to_json: fewer items than placements");
  json pl = json::array();
  std::int64_t vol = 0;
  for (std::size_t i = 0; i < placements.size(); ++i) {
    const auto& p = placements[i];
    const auto& it = items[i];
    vol += it.volume();
    pl.push_back({{"item", {it.l, it.w, it.h}},
                  {"pos", {p.x, p.y, p.z}},
                  {"orientation", p.orientation == Orientation::Deg0 ? 0 : 90}});
  }
  json j = {{"bin", {bin.L, bin.W, bin.H}},
            {"utilization", static_cast<double>(vol) / static_cast<double>(bin.volume())},
            {"packed", placements.size()},
            {"placements", pl}};
  return j.dump();
}

double replay_scene(const std::string& text) {
  const json j = json::parse(text);
  const auto& b = j.at("bin");
  const BinDims bin(b.at(0).get<int>(), b.at(1).get<int>(), b.at(2).get<int>());
  Heightmap hm(bin);
  std::int64_t vol = 0;
  for (const auto& p : j.at("placements")) {
    const auto& it = p.at("item");
    const ItemDims item(it.at(0).get<int>(), it.at(1).get<int>(), it.at(2).get<int>());
    const int deg = p.at("orientation").get<int>();
    if (deg != 0 && deg != 90) throw std::domain_error("scene: orientation must be 0 or 90");
    const auto& pos = p.at("pos");
    hm = place_item(hm, Placement(pos.at(0).get<int>(), pos.at(1).get<int>(), pos.at(2).get<int>(), item,
                                  deg == 0 ? Orientation::Deg0 : Orientation::Deg90));
    vol += item.volume();
  }
  return static_cast<double>(vol) / static_cast<double>(bin.volume());
}

}  // namespace packer
