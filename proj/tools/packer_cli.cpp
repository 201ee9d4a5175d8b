#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "packer/bench.hpp"
#include "packer/checkpoint.hpp"
#include "packer/dataset.hpp"
#include "packer/train.hpp"

using namespace packer;
namespace fs = std::filesystem;

namespace {

// Thrown for bad command-line usage; reported with exit code 2.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void fail_line(const std::string& kind, const std::string& message) {
  std::cerr << "error: " << nlohmann::json{{"error", kind}, {"message", message}}.dump() << '\n';
}

std::string flag_for(const std::string& key) {
  std::string f = key;
  for (char& c : f)
    if (c == '_') c = '-';
  return f;
}

// key = value lines become "--key=value" arguments placed before the user's
// own flags, so explicit flags win.
std::vector<std::string> config_args(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw UsageError("cannot open config file " + path);
  std::vector<std::string> out;
  std::string line;
  while (std::getline(is, line)) {
    line = line.substr(0, line.find('#'));
    const auto eq = line.find('=');
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      if (b == std::string::npos) return std::string();
      return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
    };
    if (trim(line).empty()) continue;
    if (eq == std::string::npos) throw UsageError("config file " + path + ": expected key = value, got '" + line + "'");
    out.push_back("--" + flag_for(trim(line.substr(0, eq))) + "=" + trim(line.substr(eq + 1)));
  }
  return out;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

void ensure_parent(const std::string& path) {
  const fs::path p(path);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
}

std::ofstream open_out(const std::string& path) {
  ensure_parent(path);
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write " + path);
  return os;
}

struct Shared {
  std::uint64_t seed = 42;
  std::string bin = "10x10x10";
  int ems_cap = kDefaultEmsCapacity;
  std::string config;
  std::string out;
};

void add_shared(CLI::App* cmd, Shared& s, bool out_required) {
  cmd->add_option("--seed", s.seed, "random seed")->capture_default_str();
  cmd->add_option("--bin", s.bin, "bin dimensions LxWxH")->capture_default_str();
  cmd->add_option("--ems-cap", s.ems_cap, "EMS capacity N")->capture_default_str()->check(CLI::PositiveNumber);
  cmd->add_option("--config", s.config, "key = value file with defaults for this command's flags");
  auto* o = cmd->add_option("--out", s.out, "output path");
  if (out_required) o->required();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Online 3D bin packing: datasets, training, evaluation and benchmarks"};
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all");

  // gen-dataset
  Shared gen;
  int gen_count = 1000, gen_length = kDefaultSequenceLength;
  std::string gen_scale_from, gen_types;
  auto* gen_cmd = app.add_subcommand("gen-dataset", "write a frozen evaluation dataset (JSONL)");
  add_shared(gen_cmd, gen, true);
  gen_cmd->add_option("--count", gen_count, "number of sequences")->capture_default_str()->check(CLI::PositiveNumber);
  gen_cmd->add_option("--length", gen_length, "items per sequence")->capture_default_str()->check(CLI::PositiveNumber);
  gen_cmd->add_option("--scale-from", gen_scale_from, "scale an existing dataset up to --bin instead of sampling");
  gen_cmd->add_option("--types", gen_types, "restrict items to a types file");

  // split-dataset
  Shared split;
  int split_exclude = 25, split_count = 1000, split_length = kDefaultSequenceLength;
  auto* split_cmd = app.add_subcommand("split-dataset", "partition item types and write RS / sub / exc eval sets");
  add_shared(split_cmd, split, true);
  split_cmd->add_option("--exclude", split_exclude, "item types to exclude")->capture_default_str();
  split_cmd->add_option("--count", split_count, "sequences per eval set")->capture_default_str();
  split_cmd->add_option("--length", split_length, "items per sequence")->capture_default_str();

  // train
  Shared tr;
  std::string tr_preset = "ci";
  int tr_log_every = 10;
  auto* train_cmd = app.add_subcommand("train", "PPO training; writes policy.ckpt, metrics.csv, config.txt to --out");
  train_cmd->add_option("--seed", tr.seed, "random seed");
  train_cmd->add_option("--bin", tr.bin, "bin dimensions LxWxH");
  train_cmd->add_option("--ems-cap", tr.ems_cap, "EMS capacity N");
  train_cmd->add_option("--config", tr.config, "key = value file (keys as the flags below)");
  train_cmd->add_option("--out", tr.out, "output directory")->required();
  train_cmd->add_option("--preset", tr_preset, "ci or paper")->capture_default_str();
  train_cmd->add_option("--log-every", tr_log_every, "progress line every N updates (0 = quiet)")->capture_default_str();
  std::map<std::string, std::string> tr_values;
  for (const auto& key : ppo::config_keys()) {
    if (key == "seed" || key == "bin" || key == "ems_cap") continue;
    train_cmd->add_option("--" + flag_for(key), tr_values[key]);
  }

  // eval
  Shared ev;
  std::string ev_policy, ev_dataset, ev_instances, ev_scenes;
  int ev_threads = 0;
  auto* eval_cmd = app.add_subcommand("eval", "greedy evaluation of one method on one dataset");
  add_shared(eval_cmd, ev, false);
  eval_cmd->add_option("--policy", ev_policy, "heuristic name or checkpoint (label=path or *.ckpt)")->required();
  eval_cmd->add_option("--dataset", ev_dataset, "dataset JSONL")->required();
  eval_cmd->add_option("--instances-csv", ev_instances, "per-instance CSV path");
  eval_cmd->add_option("--scenes", ev_scenes, "directory for one scene JSON per instance");
  eval_cmd->add_option("--threads", ev_threads, "worker threads (0 = all)");

  // bench
  Shared bn;
  std::string bn_methods = "bph,bestfit,hm,random", bn_datasets;
  int bn_threads = 0;
  auto* bench_cmd = app.add_subcommand("bench", "methods x datasets table with Uti / Num / Sta");
  add_shared(bench_cmd, bn, true);
  bench_cmd->add_option("--methods", bn_methods, "comma-separated methods")->capture_default_str();
  bench_cmd->add_option("--datasets", bn_datasets, "comma-separated dataset files")->required();
  bench_cmd->add_option("--threads", bn_threads, "worker threads (0 = all)");

  // export-scenes
  Shared ex;
  std::string ex_policy, ex_dataset, ex_indices = "0";
  auto* export_cmd = app.add_subcommand("export-scenes", "write placement JSON for selected instances");
  add_shared(export_cmd, ex, true);
  export_cmd->add_option("--policy", ex_policy, "heuristic name or checkpoint")->required();
  export_cmd->add_option("--dataset", ex_dataset, "dataset JSONL")->required();
  export_cmd->add_option("--indices", ex_indices, "comma-separated instance indices")->capture_default_str();

  // Expand --config before parsing so explicit flags override file values.
  std::vector<std::string> args(argv + 1, argv + argc);
  try {
    for (std::size_t i = 0; i < args.size(); ++i) {
      std::string path;
      if (args[i] == "--config" && i + 1 < args.size()) path = args[i + 1];
      else if (args[i].rfind("--config=", 0) == 0) path = args[i].substr(9);
      if (path.empty()) continue;
      const auto extra = config_args(path);
      args.insert(args.begin() + 1, extra.begin(), extra.end());
      break;
    }
    std::reverse(args.begin(), args.end());  // CLI11 consumes a reversed vector
    app.parse(args);
  } catch (const CLI::CallForHelp&) {
    std::cout << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    std::cout << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    fail_line("usage", e.what());
    return 2;
  } catch (const UsageError& e) {
    fail_line("usage", e.what());
    return 2;
  }

  try {
    if (*gen_cmd) {
      const BinDims bin = parse_bin_dims(gen.bin);
      RsDataset ds;
      if (!gen_scale_from.empty()) {
        const RsDataset src = load_dataset(gen_scale_from);
        const int k = bin.L / src.bin.L;
        if (k < 1 || src.bin.scaled(k) != bin)
          throw std::invalid_argument("--bin " + gen.bin + " is not an integer multiple of the source bin " +
                                      format_bin_dims(src.bin));
        ds = scale_dataset(src, k);
      } else {
        std::vector<ItemDims> types;
        if (!gen_types.empty()) types = load_types(gen_types);
        ds = generate_dataset(bin, gen_count, gen.seed, gen_length, gen_types.empty() ? nullptr : &types);
      }
      ensure_parent(gen.out);
      save_dataset(ds, gen.out);
      std::cout << nlohmann::json{{"out", gen.out}, {"sequences", ds.sequences.size()}, {"bin", format_bin_dims(ds.bin)}}
                       .dump()
                << '\n';
    } else if (*split_cmd) {
      const BinDims bin = parse_bin_dims(split.bin);
      const auto all = rs_item_types(bin);
      if (split_exclude < 0 || split_exclude >= static_cast<int>(all.size()))
        throw std::invalid_argument("--exclude must be in [0, " + std::to_string(all.size()) + ")");
      const TypeSplit ts = split_types(all, split_exclude, split.seed);
      fs::create_directories(split.out);
      const fs::path dir(split.out);
      open_out((dir / "types_sub.json").string()) << types_to_json(ts.sub) << '\n';
      open_out((dir / "types_exc.json").string()) << types_to_json(ts.exc) << '\n';
      // Distinct seeds per set; each set is reproducible from --seed alone.
      save_dataset(generate_dataset(bin, split_count, split.seed + 1, split_length), (dir / "eval_rs.jsonl").string());
      save_dataset(generate_dataset(bin, split_count, split.seed + 2, split_length, &ts.sub),
                   (dir / "eval_sub.jsonl").string());
      save_dataset(generate_dataset(bin, split_count, split.seed + 3, split_length, &ts.exc),
                   (dir / "eval_exc.jsonl").string());
      std::cout << nlohmann::json{{"out", split.out}, {"sub_types", ts.sub.size()}, {"exc_types", ts.exc.size()}}.dump()
                << '\n';
    } else if (*train_cmd) {
      ppo::TrainConfig cfg = ppo::preset(tr_preset);
      for (const auto& [key, value] : tr_values)
        if (train_cmd->get_option("--" + flag_for(key))->count() > 0) ppo::set_config_value(cfg, key, value);
      if (train_cmd->get_option("--seed")->count() > 0) cfg.seed = tr.seed;
      if (train_cmd->get_option("--bin")->count() > 0) cfg.bin = parse_bin_dims(tr.bin);
      if (train_cmd->get_option("--ems-cap")->count() > 0) cfg.ems_capacity = tr.ems_cap;
      ppo::TrainOptions opt;
      opt.out_dir = tr.out;
      opt.on_update = [&](const ppo::UpdateMetrics& m) {
        if (tr_log_every > 0 && (m.update % tr_log_every == 0 || m.steps >= cfg.total_steps))
          std::cerr << "update " << m.update << " steps " << m.steps << " ep_uti "
                    << (m.ep_uti ? std::to_string(*m.ep_uti) : std::string("-")) << " entropy " << m.entropy
                    << " elapsed " << static_cast<long>(m.seconds) << "s\n";
      };
      const auto res = ppo::train(cfg, opt);
      std::cout << nlohmann::json{{"out", tr.out},
                                  {"updates", res.metrics.size()},
                                  {"steps", res.metrics.empty() ? 0 : res.metrics.back().steps}}
                       .dump()
                << '\n';
    } else if (*eval_cmd) {
      const auto policy = make_policy(ev_policy);
      const RsDataset ds = load_dataset(ev_dataset);
      EvalOptions opt;
      opt.ems_capacity = ev.ems_cap;
      opt.seed = ev.seed;
      opt.threads = ev_threads;
      opt.keep_placements = !ev_scenes.empty();
      BenchResult r = evaluate(*policy, ds, opt);
      r.environment = environment_name(ds.bin);
      write_result_json(std::cout, r);
      if (!ev.out.empty()) {
        auto os = open_out(ev.out);
        write_result_json(os, r);
      }
      if (!ev_instances.empty()) {
        auto os = open_out(ev_instances);
        write_instances_csv(os, r);
      }
      if (!ev_scenes.empty()) {
        fs::create_directories(ev_scenes);
        for (std::size_t i = 0; i < r.per_instance.size(); ++i)
          open_out((fs::path(ev_scenes) / ("scene_" + std::to_string(i) + ".json")).string())
              << scene_to_json(ds.bin, ds.sequences[i], r.per_instance[i].placements) << '\n';
      }
    } else if (*bench_cmd) {
      std::vector<BenchEnvironment> envs;
      for (const auto& path : split_list(bn_datasets)) {
        RsDataset ds = load_dataset(path);
        envs.push_back({environment_name(ds.bin), std::move(ds)});
      }
      EvalOptions opt;
      opt.ems_capacity = bn.ems_cap;
      opt.seed = bn.seed;
      opt.threads = bn_threads;
      opt.keep_placements = false;
      const auto cells = run_bench(split_list(bn_methods), envs, opt);
      const std::string table = format_bench_table(cells);
      std::cout << table;
      {
        auto os = open_out(bn.out + ".csv");
        write_bench_csv(os, cells);
      }
      open_out(bn.out + ".txt") << table;
      for (const auto& c : cells)
        if (!c.result) return 3;
    } else if (*export_cmd) {
      const auto policy = make_policy(ex_policy);
      const RsDataset ds = load_dataset(ex_dataset);
      fs::create_directories(ex.out);
      for (const auto& s : split_list(ex_indices)) {
        const std::size_t i = std::stoul(s);
        if (i >= ds.sequences.size()) throw std::out_of_range("instance index " + s + " is outside the dataset");
        const InstanceResult r = run_instance(*policy, ds.bin, ds.sequences[i], ex.ems_cap, instance_seed(ex.seed, i));
        const std::string path = (fs::path(ex.out) / ("scene_" + s + ".json")).string();
        open_out(path) << scene_to_json(ds.bin, ds.sequences[i], r.placements) << '\n';
        std::cout << path << '\n';
      }
    }
  } catch (const nn::CheckpointError& e) {
    fail_line("checkpoint", e.what());
    return 1;
  } catch (const std::invalid_argument& e) {
    fail_line("invalid_argument", e.what());
    return 1;
  } catch (const std::exception& e) {
    fail_line("runtime", e.what());
    return 1;
  }
  return 0;
}
