#include "packer/train.hpp"

#include <omp.h>

#include <charconv>
#include <chrono>
#include <cmath>
#include <deque>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "packer/checkpoint.hpp"
#include "packer/dataset.hpp"

namespace packer::ppo {

namespace {

struct Field {
  const char* key;
  std::function<void(TrainConfig&, const std::string&)> set;
  std::function<std::string(const TrainConfig&)> get;
};

// Shortest text that reads back to the same double.
std::string fmt(double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

template <typename T>
T parse_number(const std::string& key, const std::string& v) {
  std::istringstream is(v);
  T out{};
  if (!(is >> out) || !(is >> std::ws).eof()) throw std::invalid_argument("bad value for " + key + ": '" + v + "'");
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw std::invalid_argument("bad value for " + key + ": '" + v + "'");
}

#define INT_FIELD(name)                                                                              \
  Field {                                                                                            \
    #name, [](TrainConfig& c, const std::string& v) { c.name = parse_number<decltype(c.name)>(#name, v); }, \
        [](const TrainConfig& c) { return std::to_string(c.name); }                                  \
  }
#define REAL_FIELD(name)                                                                  \
  Field {                                                                                 \
    #name, [](TrainConfig& c, const std::string& v) { c.name = parse_number<double>(#name, v); }, \
        [](const TrainConfig& c) { return fmt(c.name); }                                  \
  }

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      INT_FIELD(n_envs),
      INT_FIELD(steps_per_env),
      INT_FIELD(batch_size),
      INT_FIELD(ppo_epochs),
      INT_FIELD(total_steps),
      REAL_FIELD(lr),
      REAL_FIELD(gamma),
      REAL_FIELD(gae_lambda),
      REAL_FIELD(clip),
      REAL_FIELD(value_coef),
      REAL_FIELD(entropy_coef),
      REAL_FIELD(max_grad_norm),
      {"normalize_advantages",
       [](TrainConfig& c, const std::string& v) { c.normalize_advantages = parse_bool("normalize_advantages", v); },
       [](const TrainConfig& c) { return std::string(c.normalize_advantages ? "true" : "false"); }},
      REAL_FIELD(adam_beta1),
      REAL_FIELD(adam_beta2),
      REAL_FIELD(adam_eps),
      INT_FIELD(grad_chunk),
      INT_FIELD(seed),
      {"reward", [](TrainConfig& c, const std::string& v) { c.reward = reward_mode_from_string(v); },
       [](const TrainConfig& c) { return std::string(to_string(c.reward)); }},
      {"bin", [](TrainConfig& c, const std::string& v) { c.bin = parse_bin_dims(v); },
       [](const TrainConfig& c) { return format_bin_dims(c.bin); }},
      {"ems_cap", [](TrainConfig& c, const std::string& v) { c.ems_capacity = parse_number<int>("ems_cap", v); },
       [](const TrainConfig& c) { return std::to_string(c.ems_capacity); }},
      {"item_types", [](TrainConfig& c, const std::string& v) { c.item_types = v; },
       [](const TrainConfig& c) { return c.item_types; }},
      {"embed_dim", [](TrainConfig& c, const std::string& v) { c.policy.embed_dim = parse_number<int>("embed_dim", v); },
       [](const TrainConfig& c) { return std::to_string(c.policy.embed_dim); }},
      {"blocks", [](TrainConfig& c, const std::string& v) { c.policy.blocks = parse_number<int>("blocks", v); },
       [](const TrainConfig& c) { return std::to_string(c.policy.blocks); }},
      {"heads", [](TrainConfig& c, const std::string& v) { c.policy.heads = parse_number<int>("heads", v); },
       [](const TrainConfig& c) { return std::to_string(c.policy.heads); }},
      {"ablation", [](TrainConfig& c, const std::string& v) { c.policy.ablation = nn::ablation_from_string(v); },
       [](const TrainConfig& c) { return std::string(nn::to_string(c.policy.ablation)); }},
      INT_FIELD(checkpoint_every),
      INT_FIELD(threads),
  };
  return table;
}

#undef INT_FIELD
#undef REAL_FIELD

const Field& field(const std::string& key) {
  for (const Field& f : fields())
    if (key == f.key) return f;
  throw std::invalid_argument("unknown training config key: " + key);
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

}  // namespace

TrainConfig preset(const std::string& name) {
  TrainConfig c;
  if (name == "ci") return c;
  if (name == "paper") {
    c.n_envs = 128;
    c.steps_per_env = 5;
    c.total_steps = 40'000'000;
    return c;
  }
  throw std::invalid_argument("unknown training preset: " + name);
}

std::vector<std::string> config_keys() {
  std::vector<std::string> out;
  for (const Field& f : fields()) out.emplace_back(f.key);
  return out;
}

void set_config_value(TrainConfig& c, const std::string& key, const std::string& value) {
  field(key).set(c, value);
}

std::string get_config_value(const TrainConfig& c, const std::string& key) { return field(key).get(c); }

void apply_config_text(TrainConfig& c, const std::string& text) {
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    line = trim(line.substr(0, line.find('#')));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config line " + std::to_string(lineno) + ": expected key = value");
    set_config_value(c, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
}

void apply_config_file(TrainConfig& c, const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open config file " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  apply_config_text(c, ss.str());
}

std::string config_to_text(const TrainConfig& c) {
  std::string out;
  for (const Field& f : fields()) out += std::string(f.key) + " = " + f.get(c) + "\n";
  return out;
}

std::string metrics_header() {
  return "update,steps,lr,episodes,ep_uti,ep_num,ep_return,policy_loss,value_loss,entropy,approx_kl,clip_fraction,"
         "grad_norm,seconds";
}

std::string metrics_row(const UpdateMetrics& m) {
  auto opt = [](const std::optional<double>& v) { return v ? fmt(*v) : std::string(); };
  std::ostringstream os;
  os << m.update << ',' << m.steps << ',' << fmt(m.lr) << ',' << m.episodes << ',' << opt(m.ep_uti) << ','
     << opt(m.ep_num) << ',' << opt(m.ep_return) << ',' << fmt(m.policy_loss) << ',' << fmt(m.value_loss) << ','
     << fmt(m.entropy) << ',' << fmt(m.approx_kl) << ',' << fmt(m.clip_fraction) << ',' << fmt(m.grad_norm) << ','
     << fmt(m.seconds);
  return os.str();
}

TrainResult train(const TrainConfig& config, const TrainOptions& options) {
  config.validate();
  if (config.threads > 0) omp_set_num_threads(config.threads);
  namespace fs = std::filesystem;
  const bool on_disk = !options.out_dir.empty();
  std::ofstream metrics_csv;
  if (on_disk) {
    fs::create_directories(options.out_dir);
    std::ofstream(fs::path(options.out_dir) / "config.txt") << config_to_text(config);
    metrics_csv.open(fs::path(options.out_dir) / "metrics.csv", std::ios::trunc);
    if (!metrics_csv) throw std::runtime_error("cannot write metrics in " + options.out_dir);
    metrics_csv << metrics_header() << '\n';
  }
  auto ckpt_path = [&](const std::string& name) { return (fs::path(options.out_dir) / name).string(); };

  std::optional<std::vector<ItemDims>> types;
  if (!config.item_types.empty()) types = load_types(config.item_types);

  Rng rng(config.seed);
  TrainResult result{nn::PolicyParams::initialize(config.policy, rng()), {}};
  if (options.initial) {
    if (!(options.initial->config() == config.policy))
      throw std::invalid_argument("initial parameters do not match the policy config");
    result.params = *options.initial;
  }
  PolicyParams& params = result.params;
  RolloutWorkers workers(config, types ? &*types : nullptr);
  Adam adam(params, config.adam_beta1, config.adam_beta2, config.adam_eps);
  const LossCoefs coefs{config.clip, config.value_coef, config.entropy_coef};
  std::deque<EpisodeStats> recent;
  std::int64_t steps_done = 0;
  const auto t0 = std::chrono::steady_clock::now();

  for (std::int64_t u = 1; steps_done < config.total_steps; ++u) {
    UpdateMetrics m;
    m.update = u;
    m.lr = learning_rate(config, steps_done);

    std::vector<EpisodeStats> finished;
    std::vector<Trajectory> trajs = workers.collect(params, config.steps_per_env, &finished);
    steps_done += config.transitions_per_update();
    m.steps = steps_done;
    m.episodes = static_cast<int>(finished.size());
    for (const auto& e : finished) {
      recent.push_back(e);
      if (recent.size() > 100) recent.pop_front();
    }
    if (!recent.empty()) {
      double uti = 0, num = 0, ret = 0;
      for (const auto& e : recent) {
        uti += e.utilization;
        num += e.packed;
        ret += e.reward_sum;
      }
      const double n = static_cast<double>(recent.size());
      m.ep_uti = uti / n;
      m.ep_num = num / n;
      m.ep_return = ret / n;
    }

    std::vector<MinibatchItem> items;
    std::vector<double> adv;
    for (const Trajectory& tr : trajs) {
      const Advantages a = compute_gae(tr, config.gamma, config.gae_lambda);
      for (std::size_t i = 0; i < tr.steps.size(); ++i) {
        const Transition& t = tr.steps[i];
        items.push_back({&t.state, {t.action, t.log_prob, a.advantages[i], a.returns[i]}});
        adv.push_back(a.advantages[i]);
      }
    }
    if (config.normalize_advantages) normalize(adv);
    for (std::size_t i = 0; i < items.size(); ++i) items[i].sample.advantage = adv[i];

    const PolicyParams before = params;
    LossStats stats;
    double norm_sum = 0.0;
    int minibatches = 0;
    std::vector<std::size_t> order(items.size());
    for (int epoch = 0; epoch < config.ppo_epochs; ++epoch) {
      for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
      for (std::size_t i = order.size(); i > 1; --i)
        std::swap(order[i - 1], order[std::uniform_int_distribution<std::size_t>(0, i - 1)(rng)]);
      for (std::size_t b = 0; b < order.size(); b += static_cast<std::size_t>(config.batch_size)) {
        std::vector<MinibatchItem> mb;
        for (std::size_t i = b; i < std::min(order.size(), b + static_cast<std::size_t>(config.batch_size)); ++i)
          mb.push_back(items[order[i]]);
        LossStats mb_stats;
        Gradients g = minibatch_gradient(params, mb, coefs, config.grad_chunk, &mb_stats);
        const double norm = clip_global_norm(g, config.max_grad_norm);
        const double mb_loss = (-mb_stats.surrogate + coefs.value_coef * mb_stats.value_err -
                                coefs.entropy_coef * mb_stats.entropy) /
                               mb_stats.samples;
        if (!std::isfinite(norm) || !std::isfinite(mb_loss)) {
          std::string where;
          if (on_disk) {
            nn::save_params(before, ckpt_path("last_good.ckpt"));
            where = "; parameters before this update saved to " + ckpt_path("last_good.ckpt");
          }
          throw TrainingDiverged("non-finite loss or gradient at update " + std::to_string(u) + " (loss " +
                                 fmt(mb_loss) + ", grad norm " + fmt(norm) + ")" + where);
        }
        adam.step(params, g, m.lr);
        stats += mb_stats;
        norm_sum += norm;
        ++minibatches;
      }
    }
    const double n = stats.samples;
    m.policy_loss = -stats.surrogate / n;
    m.value_loss = stats.value_err / n;
    m.entropy = stats.entropy / n;
    m.approx_kl = stats.approx_kl / n;
    m.clip_fraction = stats.clipped / n;
    m.grad_norm = norm_sum / minibatches;
    m.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    result.metrics.push_back(m);
    if (on_disk) {
      metrics_csv << metrics_row(m) << '\n' << std::flush;
      if (config.checkpoint_every > 0 && u % config.checkpoint_every == 0) {
        nn::save_params(params, ckpt_path("policy_u" + std::to_string(u) + ".ckpt"));
      }
    }
    if (options.on_update) options.on_update(m);
  }
  if (on_disk) nn::save_params(params, ckpt_path("policy.ckpt"));
  return result;
}

}  // namespace packer::ppo
