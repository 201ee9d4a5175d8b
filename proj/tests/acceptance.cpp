// Acceptance suite. Prints one PASS/FAIL line per criterion and exits nonzero
// if any criterion fails. Trained checkpoints and the frozen evaluation sets
// are read from --artifacts (prepared by the ctest fixtures).

#include <CLI11.hpp>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "ems_oracle.hpp"
#include "fd_check.hpp"
#include "packer/bench.hpp"
#include "packer/checkpoint.hpp"
#include "packer/ppo.hpp"

using namespace packer;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string pct(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f%%", 100.0 * v);
  return buf;
}

std::string num(double v, int digits = 3) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string sci(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2e", v);
  return buf;
}

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string read_file(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  if (!is) throw std::runtime_error("cannot read " + p.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

class Suite {
 public:
  Suite(fs::path artifacts, std::string cli) : dir_(std::move(artifacts)), cli_(std::move(cli)) {}

  int run() {
    check(1, "heuristic reproduction", [&] { return heuristics(); });
    check(2, "EMS oracle equivalence", [&] { return ems_oracle(); });
    check(3, "gradient suite", [&] { return gradients(); });
    check(4, "mask and feasibility safety", [&] { return mask_safety(); });
    check(5, "reward identity", [&] { return reward_identity(); });
    check(6, "scale invariance", [&] { return scale_invariance(); });
    check(7, "desk-scale learning signal", [&] { return learning_signal(); });
    check(8, "reward-mode ordering", [&] { return reward_ordering(); });
    check(9, "evaluation determinism", [&] { return determinism(); });
    return failures_ == 0 ? 0 : 1;
  }

 private:
  void check(int id, const char* title, const std::function<Outcome()>& fn) {
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    if (!o.pass) ++failures_;
    std::printf("%s criterion %d (%s): %s [%.1fs]\n", o.pass ? "PASS" : "FAIL", id, title, o.detail.c_str(),
                seconds_since(t0));
    std::fflush(stdout);
  }

  const RsDataset& eval_set() {
    if (!eval_) eval_ = load_dataset((dir_ / "eval_bin10.jsonl").string());
    return *eval_;
  }

  fs::path checkpoint(const std::string& run) const {
    const fs::path p = dir_ / run / "policy.ckpt";
    if (!fs::exists(p)) throw std::runtime_error("missing checkpoint " + p.string());
    return p;
  }

  // Cached evaluation of `spec` on the frozen Bin-10 set.
  const BenchResult& result(const std::string& spec) {
    auto it = results_.find(spec);
    if (it != results_.end()) return it->second;
    EvalOptions opt;
    opt.seed = 42;
    const auto policy = make_policy(spec);
    return results_.emplace(spec, evaluate(*policy, eval_set(), opt)).first->second;
  }

  Outcome heuristics() {
    const RsDataset& ds = eval_set();
    if (ds.sequences.size() != 1000 || !(ds.bin == BinDims{10, 10, 10}))
      return {false, "evaluation set is not 1000 Bin-10 sequences"};
    const BenchResult& bf = result("bestfit");
    const BenchResult& hm = result("hm");
    const BenchResult& bph = result("bph");
    const bool ok = std::abs(bf.uti - 0.579) <= 0.03 && std::abs(bf.num - 22.9) <= 1.5 &&
                    std::abs(hm.uti - 0.565) <= 0.03 && std::abs(bph.uti - 0.516) <= 0.03;
    return {ok, "best_fit " + pct(bf.uti) + " num " + num(bf.num, 2) + " (57.9% +-3, 22.9 +-1.5); heightmap_min " +
                    pct(hm.uti) + " (56.5% +-3); online_bph " + pct(bph.uti) + " (51.6% +-3)"};
  }

  Outcome ems_oracle() {
    const auto t0 = Clock::now();
    std::mt19937_64 rng(7);
    int mismatches = 0;
    const int trials = 2000;
    for (int t = 0; t < trials; ++t) {
      const Heightmap hm = emsoracle::random_heightmap(rng);
      const auto fast = generate_ems(hm);
      if (std::set<Ems>(fast.begin(), fast.end()) != emsoracle::oracle_ems(hm) ||
          fast.size() != emsoracle::oracle_ems(hm).size())
        ++mismatches;
    }
    const double secs = seconds_since(t0);
    return {mismatches == 0 && secs < 60.0, std::to_string(trials) + " heightmaps up to 6x6, heights 0..4, " +
                                                std::to_string(mismatches) + " mismatches, " + num(secs, 1) + "s"};
  }

  Outcome gradients() {
    using fdcheck::max_rel_error;
    using fdcheck::random_matrix;
    using ad::Tape;
    using ad::Var;
    const auto t0 = Clock::now();
    std::mt19937_64 rng(3);
    std::map<std::string, double> err;
    auto probe = [](Tape& t, Var y) {
      std::mt19937_64 r(99);
      return ad::sum_all(
          ad::mul_elem(y, t.constant(random_matrix(r, static_cast<int>(y.rows()), static_cast<int>(y.cols())))));
    };

    const ad::Matrix q = random_matrix(rng, 5, 8), k = random_matrix(rng, 8, 8), v = random_matrix(rng, 8, 8);
    const std::vector<std::uint8_t> valid{1, 1, 0, 1, 1, 1, 0, 1};
    double attn = 0.0;
    for (int heads : {1, 2})
      attn = std::max(attn, max_rel_error([&](Tape& t, auto& x) { return probe(t, nn::attention(x[0], x[1], x[2], &valid, heads)); },
                                          {q, k, v}));
    const ad::Offsets qo{0, 2, 5}, ko{0, 3, 8};
    attn = std::max(attn, max_rel_error([&](Tape& t, auto& x) { return probe(t, nn::attention(x[0], x[1], x[2], qo, ko, 2)); },
                                        {q, k, v}));
    err["attention"] = attn;

    const ad::Matrix g = random_matrix(rng, 1, 8), b = random_matrix(rng, 1, 8);
    err["layer_norm"] = max_rel_error([&](Tape& t, auto& x) { return probe(t, ad::layer_norm(x[0], x[1], x[2], 1e-5)); },
                                      {q, g, b});

    const ad::Matrix w1 = random_matrix(rng, 8, 8), b1 = random_matrix(rng, 1, 8), w2 = random_matrix(rng, 8, 4),
                     b2 = random_matrix(rng, 1, 4);
    err["mlp"] = max_rel_error(
        [&](Tape& t, auto& x) {
          return probe(t, ad::linear(ad::leaky_relu(ad::linear(x[0], x[1], x[2]), 0.01), x[3], x[4]));
        },
        {q, w1, b1, w2, b2});

    // Network pieces over real states with EMS capacity 8.
    nn::PolicyConfig cfg;
    cfg.embed_dim = 8;
    cfg.blocks = 1;
    cfg.heads = 2;
    std::vector<PackState> states;
    {
      EpisodeConfig ec;
      ec.ems_capacity = 8;
      ec.seed = 5;
      PackEnv env(ec);
      env.reset();
      Rng r(1);
      while (states.size() < 12) {
        states.push_back(env.state());
        if (env.step(random_masked(env.state(), r)).done) env.reset();
      }
    }
    const nn::Batch batch = nn::make_batch({&states[3], &states[7], &states[11]});
    nn::PolicyParams params = nn::PolicyParams::initialize(cfg, 2);
    for (std::size_t i = 0; i < params.size(); ++i)
      params.tensor(i) += random_matrix(rng, static_cast<int>(params.tensor(i).rows()),
                                        static_cast<int>(params.tensor(i).cols()), 0.3);
    const ad::Matrix ems_feat = random_matrix(rng, batch.seg.ems.back(), 8);
    const ad::Matrix item_feat = random_matrix(rng, batch.seg.item.back(), 8);
    err["actor"] = max_rel_error(
        [&](Tape& t, auto& x) {
          nn::Network net(t, params);
          return probe(t, net.actor_scores(x[0], x[1], batch.seg));
        },
        {ems_feat, item_feat});
    err["critic"] = max_rel_error(
        [&](Tape& t, auto& x) {
          nn::Network net(t, params);
          return probe(t, net.critic_value(x[0], x[1], batch.seg));
        },
        {ems_feat, item_feat});

    // Full PPO loss, first w.r.t. scores and values, then end to end w.r.t. every parameter.
    std::vector<ppo::LossSample> samples;
    {
      Tape t;
      nn::Network net(t, params);
      const nn::BatchForward f = nn::forward(net, batch);
      const double shifts[] = {0.1, -0.9, 0.02};
      const double adv[] = {1.1, -0.6, 0.5};
      for (int s = 0; s < batch.size(); ++s) {
        const Eigen::VectorXd logits = nn::full_logits(batch, f.scores.value(), s);
        const Eigen::VectorXd probs = nn::masked_softmax(logits, states[std::size_t(s == 0 ? 3 : s == 1 ? 7 : 11)].mask());
        int a = 0;
        while (probs[a] == 0.0) ++a;
        samples.push_back({a, std::log(probs[a]) + shifts[s], adv[s], 0.3 * s});
      }
    }
    const ppo::LossCoefs coefs{0.3, 0.5, 0.01};
    {
      Tape t;
      nn::Network net(t, params);
      const nn::BatchForward f = nn::forward(net, batch);
      err["ppo_loss"] = max_rel_error(
          [&](Tape&, auto& x) { return ppo::ppo_loss(x[0], x[1], batch, samples, coefs, 3.0); },
          {f.scores.value(), f.values.value()});
    }
    err["ppo_loss_params"] = fdcheck::param_rel_error(params, [&](const nn::PolicyParams& p, nn::Gradients* sinks) {
      Tape t;
      nn::Network net(t, p, sinks);
      const nn::BatchForward f = nn::forward(net, batch);
      ad::Var loss = ppo::ppo_loss(f.scores, f.values, batch, samples, coefs, 3.0);
      if (sinks) t.backward(loss);
      return loss.scalar();
    });

    double worst = 0.0;
    std::string detail;
    for (const auto& [name, e] : err) {
      worst = std::max(worst, e);
      detail += (detail.empty() ? "" : ", ") + name + " " + sci(e);
    }
    const double secs = seconds_since(t0);
    return {worst < 1e-4 && secs < 60.0, "max rel err " + sci(worst) + " (" + detail + "), " + num(secs, 1) + "s"};
  }

  Outcome mask_safety() {
    // Sampled (not greedy) actions of the trained policy across many episodes.
    const nn::PolicyParams params = nn::load_params(checkpoint("ci_step_wise").string());
    constexpr int kEnvs = 16;
    const std::int64_t target = 100000;
    std::vector<PackEnv> envs;
    std::vector<Rng> rngs;
    std::vector<std::vector<std::uint8_t>> voxels(kEnvs, std::vector<std::uint8_t>(1000, 0));
    for (int e = 0; e < kEnvs; ++e) {
      EpisodeConfig ec;
      ec.seed = 1000 + static_cast<std::uint64_t>(e);
      envs.emplace_back(ec);
      envs.back().reset();
      rngs.emplace_back(77 + e);
    }
    std::int64_t actions = 0, invalid = 0, infeasible = 0, overlaps = 0, episodes = 0;
    while (actions < target) {
      std::vector<const PackState*> ptrs;
      for (auto& env : envs) ptrs.push_back(&env.state());
      const auto outs = nn::evaluate(ptrs, params);
      for (int e = 0; e < kEnvs; ++e) {
        PackEnv& env = envs[static_cast<std::size_t>(e)];
        const PackState& s = env.state();
        const nn::ActResult r = nn::choose_action(outs[static_cast<std::size_t>(e)], s.mask(), nn::ActMode::Sample,
                                                  rngs[static_cast<std::size_t>(e)]);
        ++actions;
        if (!s.mask().at(r.action)) {
          ++invalid;
          env.reset();
          continue;
        }
        const int n = s.mask().capacity();
        const Ems& space = s.ems().spaces[static_cast<std::size_t>(r.action % n)];
        if (!check_feasible(env.heightmap(), space, s.item, static_cast<Orientation>(r.action / n))) ++infeasible;
        const bool done = env.step(r.action).done;
        const Placement& p = env.placements().back();
        auto& vox = voxels[static_cast<std::size_t>(e)];
        for (int x = p.x; x < p.x + p.dims.l; ++x)
          for (int y = p.y; y < p.y + p.dims.w; ++y)
            for (int z = p.z; z < p.z + p.dims.h; ++z) {
              auto& cell = vox[static_cast<std::size_t>((x * 10 + y) * 10 + z)];
              if (cell) ++overlaps;
              cell = 1;
            }
        if (done) {
          ++episodes;
          env.reset();
          std::fill(vox.begin(), vox.end(), 0);
        }
      }
    }
    return {invalid == 0 && infeasible == 0 && overlaps == 0,
            std::to_string(actions) + " sampled actions over " + std::to_string(episodes) + " episodes: " +
                std::to_string(invalid) + " mask-invalid, " + std::to_string(infeasible) + " infeasible, " +
                std::to_string(overlaps) + " voxel overlaps"};
  }

  Outcome reward_identity() {
    double worst = 0.0;
    std::size_t episodes = 0;
    for (const std::string& spec : std::vector<std::string>{"bestfit", "hm", "bph", "random", checkpoint("ci_step_wise").string()}) {
      for (const auto& r : result(spec).per_instance) {
        worst = std::max(worst, std::abs(r.reward_sum - r.utilization));
        ++episodes;
      }
    }
    return {worst <= 1e-12, std::to_string(episodes) + " evaluation episodes over 5 policies, max |sum r - uti| = " +
                                sci(worst)};
  }

  Outcome scale_invariance() {
    const nn::NeuralPolicy policy(nn::load_params(checkpoint("ci_step_wise").string()));
    RsDataset base = eval_set();
    base.sequences.resize(100);
    EvalOptions opt;
    const BenchResult ref = evaluate(policy, base, opt);
    int diverged = 0;
    std::string detail;
    for (int k : {3, 5, 10}) {
      const BenchResult r = evaluate(policy, scale_dataset(base, k), opt);
      int bad = 0;
      for (std::size_t i = 0; i < ref.per_instance.size(); ++i) {
        const auto& a = ref.per_instance[i];
        const auto& b = r.per_instance[i];
        bool same = a.utilization == b.utilization && a.placements.size() == b.placements.size();
        for (std::size_t j = 0; same && j < a.placements.size(); ++j) {
          const Placement& pa = a.placements[j];
          const Placement& pb = b.placements[j];
          same = pb.x == k * pa.x && pb.y == k * pa.y && pb.z == k * pa.z && pb.orientation == pa.orientation;
        }
        if (!same) ++bad;
      }
      diverged += bad;
      detail += (detail.empty() ? "" : ", ") + std::string("x") + std::to_string(k) + " " +
                std::to_string(100 - bad) + "/100 identical (uti " + pct(r.uti) + ")";
    }
    return {diverged == 0, "Bin-10 uti " + pct(ref.uti) + "; " + detail};
  }

  Outcome learning_signal() {
    const BenchResult& rnd = result("random");
    const BenchResult& gopt = result(checkpoint("ci_step_wise").string());
    const bool ok = gopt.uti - rnd.uti >= 0.10 && gopt.uti > 0.55;
    return {ok, "CI checkpoint " + pct(gopt.uti) + " (num " + num(gopt.num, 1) + ", sta " + num(gopt.sta) +
                    ") vs random_masked " + pct(rnd.uti) + "; needs >= random + 10 pp and > 55%"};
  }

  Outcome reward_ordering() {
    const BenchResult& sw = result(checkpoint("cmp_step_wise").string());
    const BenchResult& term = result(checkpoint("cmp_terminal").string());
    return {sw.uti >= term.uti, "identical budgets: step_wise " + pct(sw.uti) + " vs terminal " + pct(term.uti)};
  }

  Outcome determinism() {
    const fs::path work = dir_ / "determinism";
    fs::create_directories(work);
    const std::string data = (dir_ / "eval_small.jsonl").string();
    int differing = 0, runs = 0;
    for (const std::string& policy : std::vector<std::string>{"random", checkpoint("ci_step_wise").string()}) {
      std::string first_json, first_csv;
      int idx = 0;
      for (int threads : {1, 4, 1, 2}) {
        const fs::path json = work / ("run" + std::to_string(idx) + ".json");
        const fs::path csv = work / ("run" + std::to_string(idx) + ".csv");
        ++idx;
        const std::string cmd = "\"" + cli_ + "\" eval --policy \"" + policy + "\" --dataset \"" + data +
                                "\" --seed 5 --threads " + std::to_string(threads) + " --out \"" + json.string() +
                                "\" --instances-csv \"" + csv.string() + "\" > /dev/null";
        if (std::system(cmd.c_str()) != 0) throw std::runtime_error("eval command failed: " + cmd);
        ++runs;
        const std::string j = read_file(json), c = read_file(csv);
        if (first_json.empty()) {
          first_json = j;
          first_csv = c;
        } else if (j != first_json || c != first_csv) {
          ++differing;
        }
      }
    }
    return {differing == 0, std::to_string(runs) + " eval runs (random and checkpoint; 1, 4, 1, 2 threads), " +
                                std::to_string(differing) + " differ from the first"};
  }

  fs::path dir_;
  std::string cli_;
  int failures_ = 0;
  std::optional<RsDataset> eval_;
  std::map<std::string, BenchResult> results_;
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance checks"};
  std::string artifacts, cli;
  app.add_option("--artifacts", artifacts, "directory with evaluation sets and trained runs")->required();
  app.add_option("--cli", cli, "packer_cli executable")->required();
  CLI11_PARSE(app, argc, argv);
  return Suite(artifacts, cli).run();
}
