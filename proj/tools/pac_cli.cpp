// Copyright 2026 The PAC Authors
// SPDX-License-Identifier: Apache-2.0

// pac_cli: train, eval, improve, scaling-fit, flops and gen-data.
// Exit codes: 0 success, 1 runtime failure, 2 usage error.

#include "pac/datasets.hpp"
#include "pac/envs.hpp"
#include "pac/errors.hpp"
#include "pac/model.hpp"
#include "pac/scaling.hpp"
#include "pac/training.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Typed access to a flat config map; every key must be read once.
class ConfigReader {
 public:
  explicit ConfigReader(std::map<std::string, std::string> kv) : kv_(std::move(kv)) {}

  bool has(const std::string& key) const { return kv_.count(key) != 0; }

  std::string str(const std::string& key, const std::string& fallback) {
    used_.insert(key);
    const auto it = kv_.find(key);
    return it == kv_.end() ? fallback : it->second;
  }

  double number(const std::string& key, double fallback) {
    if (!has(key)) return used_.insert(key), fallback;
    const std::string s = str(key, "");
    try {
      std::size_t n = 0;
      const double v = std::stod(s, &n);
      if (n != s.size()) throw std::invalid_argument(s);
      return v;
    } catch (const std::exception&) {
      throw pac::ConfigError("config key " + key + ": not a number: " + s);
    }
  }

  std::int64_t integer(const std::string& key, std::int64_t fallback) {
    if (!has(key)) return used_.insert(key), fallback;
    const std::string s = str(key, "");
    try {
      std::size_t n = 0;
      const long long v = std::stoll(s, &n);
      if (n != s.size()) throw std::invalid_argument(s);
      return v;
    } catch (const std::exception&) {
      throw pac::ConfigError("config key " + key + ": not an integer: " + s);
    }
  }

  std::vector<std::string> list(const std::string& key) {
    std::vector<std::string> out;
    std::stringstream ss(str(key, ""));
    std::string item;
    while (std::getline(ss, item, ',')) {
      if (!item.empty()) out.push_back(item);
    }
    return out;
  }

  /// Keys starting with `prefix`, with the prefix removed.
  std::map<std::string, std::string> with_prefix(const std::string& prefix) {
    std::map<std::string, std::string> out;
    for (const auto& [k, v] : kv_) {
      if (k.rfind(prefix, 0) == 0) {
        used_.insert(k);
        out[k.substr(prefix.size())] = v;
      }
    }
    return out;
  }

  void finish() const {
    for (const auto& [k, v] : kv_) {
      if (used_.count(k) == 0) throw pac::ConfigError("unknown config key: " + k);
    }
  }

 private:
  std::map<std::string, std::string> kv_;
  std::set<std::string> used_;
};

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

void require_file(const std::string& path) {
  if (!fs::exists(path)) throw UsageError("file not found: " + path);
}

std::unique_ptr<pac::ActorCritic> model_for_env(const pac::Environment& env, ConfigReader& cfg, int value_bins) {
  const std::string kind = cfg.str("model", dynamic_cast<const pac::TabularEnv*>(&env) ? "tabular" : "perceiver");
  if (kind == "tabular") {
    const auto* t = dynamic_cast<const pac::TabularEnv*>(&env);
    if (t == nullptr) throw pac::ConfigError("model = tabular needs a tabular environment");
    return std::make_unique<pac::TabularActorCritic>(t->mdp().n_states, t->mdp().n_actions, value_bins);
  }
  if (kind == "perceiver") {
    const auto* p = dynamic_cast<const pac::PointMassEnv*>(&env);
    if (p == nullptr) throw pac::ConfigError("model = perceiver is only wired for point_mass");
    pac::ArchConfig arch;
    arch.n_latents = int(cfg.integer("model.n_latents", arch.n_latents));
    arch.latent_dim = int(cfg.integer("model.latent_dim", arch.latent_dim));
    arch.n_blocks = int(cfg.integer("model.n_blocks", arch.n_blocks));
    arch.widening = int(cfg.integer("model.widening", arch.widening));
    arch.n_heads = int(cfg.integer("model.n_heads", arch.n_heads));
    arch.n_action_bins = int(cfg.integer("model.action_bins", arch.n_action_bins));
    arch.n_value_bins = value_bins;
    const int embed = int(cfg.integer("model.embed_dim", 16));
    return std::make_unique<pac::PerceiverActorCritic>(arch, p->modality_spec(embed),
                                                       p->action_codec(arch.n_action_bins));
  }
  throw pac::ConfigError("unknown model: " + kind);
}

pac::Policy default_behavior(const pac::Environment& env) {
  if (const auto* t = dynamic_cast<const pac::TabularEnv*>(&env)) {
    if (env.name() == "lure_chain") return pac::tabular_policy(pac::lure_behavior(t->mdp()));
    return pac::tabular_policy(pac::uniform_policy(t->mdp()));
  }
  return pac::epsilon_optimal_policy(env, 0.5);
}

std::vector<pac::EpisodeRecord> generate(const pac::Environment& env, std::optional<double> success_rate,
                                         int episodes, std::uint64_t seed, double* epsilon) {
  if (success_rate) {
    if (*success_rate < 0.0 || *success_rate > 1.0) throw UsageError("--success-rate must be in [0, 1]");
    const double eps = pac::tune_epsilon(env, *success_rate);
    if (epsilon != nullptr) *epsilon = eps;
    return pac::make_behavior_dataset(env, pac::epsilon_optimal_policy(env, eps), episodes, seed);
  }
  return pac::make_behavior_dataset(env, default_behavior(env), episodes, seed);
}

void apply_train_keys(ConfigReader& c, pac::TrainConfig& t) {
  auto& o = t.optim;
  o.lr_init = c.number("lr_init", o.lr_init);
  o.lr_peak = c.number("lr_peak", o.lr_peak);
  o.lr_end = c.number("lr_end", o.lr_end);
  o.warmup_steps = c.integer("warmup_steps", o.warmup_steps);
  o.decay_steps = c.integer("decay_steps", o.decay_steps);
  o.beta1 = c.number("beta1", o.beta1);
  o.beta2 = c.number("beta2", o.beta2);
  o.weight_decay = c.number("weight_decay", o.weight_decay);
  o.clip_norm = c.number("clip_norm", o.clip_norm);
  o.batch_size = int(c.integer("batch_size", o.batch_size));
  o.traj_len = int(c.integer("traj_len", o.traj_len));
  auto& l = t.loss;
  l.alpha = c.number("alpha", l.alpha);
  l.beta = c.number("beta", l.beta);
  l.eta = c.number("eta", l.eta);
  l.n_samples = int(c.integer("n_samples", l.n_samples));
  l.n_next_samples = int(c.integer("n_next_samples", l.n_next_samples));
  l.target_period = int(c.integer("target_period", l.target_period));
  l.gamma = c.number("gamma", l.gamma);
  const std::string ref = c.str("reference", l.reference == pac::ReferencePolicy::frozen ? "frozen" : "target");
  if (ref != "frozen" && ref != "target") throw pac::ConfigError("reference must be target or frozen");
  l.reference = ref == "frozen" ? pac::ReferencePolicy::frozen : pac::ReferencePolicy::target;
  const std::string bm = c.str("behavior_mode", l.behavior_mode == pac::BehaviorMode::learned ? "learned" : "constant");
  if (bm != "learned" && bm != "constant") throw pac::ConfigError("behavior_mode must be constant or learned");
  l.behavior_mode = bm == "learned" ? pac::BehaviorMode::learned : pac::BehaviorMode::constant;
  t.bins.q_min = c.number("q_min", t.bins.q_min);
  t.bins.q_max = c.number("q_max", t.bins.q_max);
  t.dropout.p_vision_goal = c.number("p_vision_goal", t.dropout.p_vision_goal);
  t.dropout.p_language_goal = c.number("p_language_goal", t.dropout.p_language_goal);
  for (const auto& [g, w] : c.with_prefix("group_weight.")) {
    try {
      t.group_weights[g] = std::stod(w);
    } catch (const std::exception&) {
      throw pac::ConfigError("group_weight." + g + ": not a number");
    }
  }
}

const char* kTrainConfigHelp =
    "Config file keys (key = value): env, model, model.{n_latents,latent_dim,n_blocks,widening,n_heads,"
    "action_bins,embed_dim}, data, data.episodes, data.success_rate, data.seed, steps, value_bins, q_min, q_max, "
    "lr_init, lr_peak, lr_end, warmup_steps, decay_steps, beta1, beta2, weight_decay, clip_norm, batch_size, "
    "traj_len, alpha, beta, eta, n_samples, n_next_samples, target_period, gamma, reference, behavior_mode, "
    "p_vision_goal, p_language_goal, low_quality_groups, group_weight.<group>. Loss keys given in the file "
    "override the preset.";

struct TrainArgs {
  std::string config;
  std::string preset = "pac";
  std::uint64_t seed = 0;
  std::string out;
  std::optional<std::int64_t> steps;
};

int run_train(const TrainArgs& a) {
  std::map<std::string, std::string> kv;
  if (!a.config.empty()) {
    require_file(a.config);
    kv = pac::parse_config_file(a.config);
  }
  ConfigReader c(std::move(kv));
  const auto names = pac::preset_names();
  if (std::find(names.begin(), names.end(), a.preset) == names.end()) throw UsageError("unknown preset: " + a.preset);
  const std::string env_name = c.str("env", "bandit");
  const auto envs = pac::env_names();
  if (std::find(envs.begin(), envs.end(), env_name) == envs.end()) throw pac::ConfigError("unknown env: " + env_name);
  auto env = pac::make_env(env_name);

  pac::TrainConfig t;
  t.seed = a.seed;
  t.bins.count = int(c.integer("value_bins", t.bins.count));
  if (const auto* te = dynamic_cast<const pac::TabularEnv*>(env.get())) t.loss.gamma = te->mdp().gamma;
  t.low_quality_groups = c.list("low_quality_groups");
  auto model = model_for_env(*env, c, t.bins.count);

  std::vector<pac::EpisodeRecord> episodes;
  const std::string data = c.str("data", "");
  const int n_episodes = int(c.integer("data.episodes", 200));
  const std::uint64_t data_seed = std::uint64_t(c.integer("data.seed", 7));
  std::optional<double> rate;
  if (c.has("data.success_rate")) rate = c.number("data.success_rate", 0.0);
  else c.str("data.success_rate", "");
  if (!data.empty()) {
    require_file(data + ".manifest.jsonl");
    episodes = pac::read_store(data);
  } else {
    episodes = generate(*env, rate, n_episodes, data_seed, nullptr);
  }
  pac::EpisodeStore store(episodes);
  pac::apply_preset(a.preset, t, store);
  apply_train_keys(c, t);
  t.steps = a.steps ? *a.steps : c.integer("steps", t.steps);
  if (a.steps) c.str("steps", "");
  c.finish();
  t.validate();

  fs::create_directories(a.out);
  const fs::path out(a.out);
  pac::write_store(out / "data", store.episodes());
  pac::TrainingRun run = pac::make_training_run(*model, a.seed);
  std::vector<pac::MetricsRecord> log;
  {
    std::ofstream metrics(out / "metrics.jsonl", std::ios::trunc);
    if (!metrics) throw std::runtime_error("cannot write metrics.jsonl");
    if (t.steps > 0) {
      const pac::TrajectorySampler sampler = pac::make_sampler(store, t);
      log = pac::train(*model, run, sampler, t, t.steps, &metrics);
    }
  }
  pac::Checkpoint ckpt{model->config_json(), pac::to_json(t),
                       {{"env", env_name}, {"data", fs::absolute(out / "data").string()}}, std::move(run)};
  pac::save_checkpoint(out / "checkpoint.pac", ckpt);
  json report = {{"preset", a.preset}, {"env", env_name}, {"steps", t.steps}, {"episodes", store.size()},
                 {"config", pac::to_json(t)}};
  if (!log.empty()) report["final"] = log.back().to_json();
  write_json(out / "train.json", report);
  return 0;
}

struct EvalArgs {
  std::string checkpoint;
  std::string env;
  int trials = 100;
  std::uint64_t seed = 1234;
  std::string mode = "greedy";
  std::string out;
};

pac::EvalMode parse_mode(const std::string& m) {
  if (m == "greedy") return pac::EvalMode::greedy;
  if (m == "sample") return pac::EvalMode::sample;
  throw UsageError("--mode must be greedy or sample");
}

int run_eval(const EvalArgs& a) {
  require_file(a.checkpoint);
  const pac::EvalMode mode = parse_mode(a.mode);
  if (a.trials < 1) throw UsageError("--trials must be >= 1");
  const pac::Checkpoint ckpt = pac::load_checkpoint(a.checkpoint);
  auto model = pac::make_model(ckpt.model_config);
  const std::string env_name = a.env.empty() ? ckpt.extra.value("env", std::string("bandit")) : a.env;
  auto env = pac::make_env(env_name);
  const pac::EvalReport rep = pac::evaluate(pac::model_policy(*model, ckpt.run.model.params, mode), *env, a.trials, a.seed);
  json j = rep.to_json();
  j["env"] = env_name;
  j["seed"] = a.seed;
  j["mode"] = a.mode;
  std::cout << j.dump() << '\n';
  if (!a.out.empty()) {
    fs::create_directories(a.out);
    write_json(fs::path(a.out) / "eval.json", j);
  }
  return 0;
}

struct ImproveArgs {
  std::string checkpoint;
  std::string env;
  std::string data;
  std::string preset;
  int rounds = 3;
  int episodes_per_round = 200;
  std::int64_t finetune_steps = 500;
  int eval_trials = 400;
  std::uint64_t eval_seed = 1234;
  std::uint64_t collect_seed = 5678;
  std::string mode = "greedy";
  std::string out;
};

int run_improve(const ImproveArgs& a) {
  require_file(a.checkpoint);
  if (a.rounds < 0 || a.episodes_per_round < 1 || a.finetune_steps < 0 || a.eval_trials < 1) {
    throw UsageError("improve: rounds >= 0, episodes-per-round >= 1, finetune-steps >= 0, eval-trials >= 1");
  }
  pac::ImproveConfig ic;
  ic.rounds = a.rounds;
  ic.episodes_per_round = a.episodes_per_round;
  ic.finetune_steps = a.finetune_steps;
  ic.eval_trials = a.eval_trials;
  ic.eval_seed = a.eval_seed;
  ic.collect_seed = a.collect_seed;
  ic.eval_mode = parse_mode(a.mode);
  pac::Checkpoint ckpt = pac::load_checkpoint(a.checkpoint);
  auto model = pac::make_model(ckpt.model_config);
  pac::TrainConfig t = pac::train_config_from_json(ckpt.train_config);
  const std::string env_name = a.env.empty() ? ckpt.extra.value("env", std::string("bandit")) : a.env;
  auto env = pac::make_env(env_name);
  const std::string data = a.data.empty() ? ckpt.extra.value("data", std::string()) : a.data;
  if (data.empty()) throw UsageError("improve: no dataset recorded in the checkpoint; pass --data");
  require_file(data + ".manifest.jsonl");
  pac::EpisodeStore store(pac::read_store(data));
  if (!a.preset.empty()) pac::apply_preset(a.preset, t, store);
  const auto reports = pac::self_improve(*model, ckpt.run, *env, store, t, ic);

  fs::create_directories(a.out);
  const fs::path out(a.out);
  pac::write_store(out / "data", store.episodes());
  ckpt.train_config = pac::to_json(t);
  ckpt.extra["env"] = env_name;
  ckpt.extra["data"] = fs::absolute(out / "data").string();
  pac::save_checkpoint(out / "checkpoint.pac", ckpt);
  json rounds = json::array();
  for (std::size_t i = 0; i < reports.size(); ++i) {
    json r = reports[i].to_json();
    r["round"] = i;
    rounds.push_back(r);
  }
  write_json(out / "improve.json", {{"env", env_name}, {"rounds", rounds}});
  return 0;
}

std::pair<double, double> parse_range(const std::string& s, const char* flag) {
  const auto colon = s.find(':');
  if (colon == std::string::npos) throw UsageError(std::string(flag) + " expects lo:hi");
  try {
    const double lo = std::stod(s.substr(0, colon));
    const double hi = std::stod(s.substr(colon + 1));
    if (!(lo > 0.0 && hi >= lo)) throw std::invalid_argument(s);
    return {lo, hi};
  } catch (const std::exception&) {
    throw UsageError(std::string(flag) + ": need 0 < lo <= hi, got " + s);
  }
}

struct ScalingArgs {
  std::string profiles;
  std::string envelope;
  std::string flop_range;
  std::string param_range;
  std::vector<double> levels;
  int points = 100;
  std::string out;
};

std::vector<pac::ComputePoint> read_envelope_csv(const std::string& path) {
  require_file(path);
  std::ifstream in(path);
  std::string line;
  std::getline(in, line);
  if (line.rfind("C,N,D", 0) != 0) throw UsageError(path + ": header must be C,N,D");
  std::vector<pac::ComputePoint> pts;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string c;
    std::string n;
    std::string d;
    if (!std::getline(ss, c, ',') || !std::getline(ss, n, ',') || !std::getline(ss, d)) {
      throw UsageError(path + ": malformed row: " + line);
    }
    try {
      pts.push_back({std::stod(c), std::stod(n), std::stod(d)});
    } catch (const std::exception&) {
      throw UsageError(path + ": malformed row: " + line);
    }
  }
  return pts;
}

int run_scaling(const ScalingArgs& a) {
  if (a.profiles.empty() == a.envelope.empty()) throw UsageError("scaling-fit: pass exactly one of --profiles or --envelope");
  if (a.points < 2) throw UsageError("--points must be >= 2");
  fs::create_directories(a.out);
  const fs::path out(a.out);
  json report;
  if (!a.envelope.empty()) {
    const auto pts = read_envelope_csv(a.envelope);
    report["power_law"] = pac::fit_power_laws(pts).to_json();
  } else {
    if (!fs::is_directory(a.profiles)) throw UsageError("profile directory not found: " + a.profiles);
    if (a.flop_range.empty()) throw UsageError("scaling-fit --profiles needs --flop-range");
    const auto range = parse_range(a.flop_range, "--flop-range");
    const auto profiles = pac::load_profiles(a.profiles);
    json pj = json::array();
    for (const auto& p : profiles) pj.push_back(p.to_json());
    report["profiles"] = pj;
    const auto env = pac::envelope(profiles, range, a.points);
    json ej = json::array();
    std::vector<pac::ComputePoint> cps;
    for (const auto& e : env) {
      ej.push_back({{"flops", e.flops}, {"best_return", e.best_return}, {"best_model", profiles[std::size_t(e.best_model)].name},
                    {"params", e.params}, {"tokens", e.tokens}, {"steps", e.steps}});
      cps.push_back({e.flops, e.params, e.tokens > 0.0 ? e.tokens : e.steps});
    }
    report["envelope"] = ej;
    report["power_law"] = pac::fit_power_laws(cps).to_json();
    if (!a.levels.empty()) {
      double pmin = profiles.front().model_params;
      double pmax = pmin;
      for (const auto& p : profiles) {
        pmin = std::min(pmin, p.model_params);
        pmax = std::max(pmax, p.model_params);
      }
      const auto prange = a.param_range.empty() ? std::pair{pmin, pmax} : parse_range(a.param_range, "--param-range");
      const auto grid = pac::iso_return_grid(profiles, prange, range, a.levels, 50, a.points);
      write_text(out / "iso_return.csv", grid.to_csv());
      report["iso_return"] = grid.to_json();
    }
  }
  write_json(out / "scaling_fit.json", report);
  std::cout << report["power_law"].dump() << '\n';
  return 0;
}

struct FlopsArgs {
  std::string scale = "XXS";
  std::string arch;
  int batch = 512;
  int target_period = 100;
  std::optional<double> fwd;
  std::string out;
};

int run_flops(const FlopsArgs& a) {
  if (a.batch < 1 || a.target_period < 1) throw UsageError("--batch and --target-period must be >= 1");
  pac::FlopArch arch;
  json j;
  if (a.scale == "custom") {
    if (a.arch.empty() && !a.fwd) throw UsageError("--scale custom needs --arch or --fwd");
    if (!a.arch.empty()) {
      require_file(a.arch);
      ConfigReader c(pac::parse_config_file(a.arch));
      arch.n_proprio = int(c.integer("n_proprio", arch.n_proprio));
      arch.n_images = int(c.integer("n_images", arch.n_images));
      arch.n_goal_images = int(c.integer("n_goal_images", arch.n_goal_images));
      arch.n_text_tokens = int(c.integer("n_text_tokens", arch.n_text_tokens));
      arch.n_action_dims = int(c.integer("n_action_dims", arch.n_action_dims));
      arch.n_gains = int(c.integer("n_gains", arch.n_gains));
      arch.visual_tokens = int(c.integer("visual_tokens", arch.visual_tokens));
      arch.vocab_size = int(c.integer("vocab_size", arch.vocab_size));
      arch.n_latents = int(c.integer("n_latents", arch.n_latents));
      arch.latent_dim = int(c.integer("latent_dim", arch.latent_dim));
      arch.n_blocks = int(c.integer("n_blocks", arch.n_blocks));
      arch.widening = int(c.integer("widening", arch.widening));
      arch.n_heads = int(c.integer("n_heads", arch.n_heads));
      arch.n_action_bins = int(c.integer("n_action_bins", arch.n_action_bins));
      arch.n_value_bins = int(c.integer("n_value_bins", arch.n_value_bins));
      arch.embed_dim = int(c.integer("embed_dim", arch.embed_dim));
      c.finish();
    }
    j["computed"] = pac::count_flops(arch, a.batch, a.target_period, a.fwd).to_json();
  } else {
    const auto scales = pac::scale_names();
    if (std::find(scales.begin(), scales.end(), a.scale) == scales.end()) throw UsageError("unknown scale: " + a.scale);
    if (!a.arch.empty()) throw UsageError("--arch only applies to --scale custom");
    arch = pac::FlopArch::scale(a.scale);
    j["computed"] = pac::count_flops(arch, a.batch, a.target_period, a.fwd).to_json();
    j["published"] = pac::count_flops(arch, a.batch, a.target_period, pac::published_fwd(a.scale)).to_json();
  }
  j["scale"] = a.scale;
  const auto& ref = j.contains("published") ? j["published"] : j["computed"];
  j["FWD"] = ref["FWD"];
  j["BWD"] = ref["BWD"];
  j["UPDATE"] = ref["UPDATE"];
  j["BWD_over_FWD"] = ref["BWD"].get<double>() / ref["FWD"].get<double>();
  std::cout << j.dump() << '\n';
  if (!a.out.empty()) {
    fs::create_directories(a.out);
    write_json(fs::path(a.out) / "flops.json", j);
  }
  return 0;
}

struct GenArgs {
  std::string env;
  std::optional<double> success_rate;
  int episodes = 200;
  std::uint64_t seed = 7;
  std::string out;
};

int run_gen(const GenArgs& a) {
  if (a.episodes < 1) throw UsageError("--episodes must be >= 1");
  const auto envs = pac::env_names();
  if (std::find(envs.begin(), envs.end(), a.env) == envs.end()) throw UsageError("unknown env: " + a.env);
  auto env = pac::make_env(a.env);
  double eps = -1.0;
  const auto episodes = generate(*env, a.success_rate, a.episodes, a.seed, &eps);
  fs::create_directories(a.out);
  const fs::path out(a.out);
  pac::write_store(out / "data", episodes);
  std::size_t wins = 0;
  for (const auto& e : episodes) wins += e.success ? 1 : 0;
  json j = {{"env", a.env}, {"episodes", episodes.size()}, {"successes", wins},
            {"success_rate", double(wins) / double(episodes.size())}, {"seed", a.seed}};
  if (eps >= 0.0) j["epsilon"] = eps;
  write_json(out / "gen_data.json", j);
  std::cout << j.dump() << '\n';
  return 0;
}

void print_error(const char* kind, const std::string& msg) {
  std::cerr << json{{"error", kind}, {"message", msg}}.dump() << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"PAC actor-critic training and analysis"};
  app.require_subcommand(1, 1);

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "Train a model on an offline dataset")->footer(kTrainConfigHelp);
  train->add_option("--config", ta.config, "Flat key = value config file");
  train->add_option("--preset", ta.preset, "Objective variant: bc+q, filteredbc, pac, alpha-pac or pac+v")
      ->capture_default_str();
  train->add_option("--seed", ta.seed, "Seed of initialisation and sampling")->capture_default_str();
  train->add_option("--out", ta.out, "Output directory")->required();
  train->add_option("--steps", ta.steps, "Number of updates; overrides the config");

  EvalArgs ea;
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint");
  eval->add_option("--checkpoint", ea.checkpoint, "Checkpoint file")->required();
  eval->add_option("--env", ea.env, "Environment; defaults to the one recorded in the checkpoint");
  eval->add_option("--trials", ea.trials, "Number of episodes")->capture_default_str();
  eval->add_option("--seed", ea.seed, "Evaluation seed")->capture_default_str();
  eval->add_option("--mode", ea.mode, "greedy or sample")->capture_default_str();
  eval->add_option("--out", ea.out, "Output directory for eval.json");

  ImproveArgs ia;
  auto* improve = app.add_subcommand("improve", "Self-improvement rounds from a checkpoint");
  improve->add_option("--checkpoint", ia.checkpoint, "Checkpoint file")->required();
  improve->add_option("--env", ia.env, "Environment; defaults to the one recorded in the checkpoint");
  improve->add_option("--data", ia.data, "Dataset prefix; defaults to the one recorded in the checkpoint");
  improve->add_option("--preset", ia.preset, "Re-apply an objective preset to the loaded dataset");
  improve->add_option("--rounds", ia.rounds, "Improvement rounds")->capture_default_str();
  improve->add_option("--episodes-per-round", ia.episodes_per_round, "Episodes collected per round")
      ->capture_default_str();
  improve->add_option("--finetune-steps", ia.finetune_steps, "Updates per round")->capture_default_str();
  improve->add_option("--eval-trials", ia.eval_trials, "Evaluation episodes per round")->capture_default_str();
  improve->add_option("--eval-seed", ia.eval_seed, "Evaluation seed")->capture_default_str();
  improve->add_option("--collect-seed", ia.collect_seed, "Collection seed")->capture_default_str();
  improve->add_option("--mode", ia.mode, "greedy or sample")->capture_default_str();
  improve->add_option("--out", ia.out, "Output directory")->required();

  ScalingArgs sa;
  auto* scaling = app.add_subcommand("scaling-fit", "Return profiles, compute envelope and power-law fit");
  scaling->add_option("--profiles", sa.profiles, "Directory with manifest.csv and <model>.csv return profiles");
  scaling->add_option("--envelope", sa.envelope, "CSV with header C,N,D to fit power laws directly");
  scaling->add_option("--flop-range", sa.flop_range, "Compute range lo:hi of the envelope");
  scaling->add_option("--points", sa.points, "Log-spaced envelope points")->capture_default_str();
  scaling->add_option("--levels", sa.levels, "Iso-return levels; writes iso_return.csv");
  scaling->add_option("--param-range", sa.param_range, "Parameter range lo:hi of the iso-return grid");
  scaling->add_option("--out", sa.out, "Output directory")->required();

  FlopsArgs fa;
  auto* flops = app.add_subcommand("flops", "FLOP accounting of a model scale");
  flops->add_option("--scale", fa.scale, "XXS, XS, S, M, L or custom")->capture_default_str();
  flops->add_option("--arch", fa.arch, "Shape config for --scale custom");
  flops->add_option("--batch", fa.batch, "Batch size B")->capture_default_str();
  flops->add_option("--target-period", fa.target_period, "Target update period f")->capture_default_str();
  flops->add_option("--fwd", fa.fwd, "Override the forward cost");
  flops->add_option("--out", fa.out, "Output directory for flops.json");

  GenArgs ga;
  auto* gen = app.add_subcommand("gen-data", "Generate a behaviour dataset");
  gen->add_option("--env", ga.env, "Environment name")->required();
  gen->add_option("--success-rate", ga.success_rate, "Target success rate of an epsilon-optimal behaviour");
  gen->add_option("--episodes", ga.episodes, "Number of episodes")->capture_default_str();
  gen->add_option("--seed", ga.seed, "Seed")->capture_default_str();
  gen->add_option("--out", ga.out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    print_error("usage", e.what());
    return 2;
  }

  try {
    if (*train) return run_train(ta);
    if (*eval) return run_eval(ea);
    if (*improve) return run_improve(ia);
    if (*scaling) return run_scaling(sa);
    if (*flops) return run_flops(fa);
    if (*gen) return run_gen(ga);
  } catch (const UsageError& e) {
    print_error("usage", e.what());
    return 2;
  } catch (const pac::ConfigError& e) {
    print_error("config", e.what());
    return 2;
  } catch (const std::exception& e) {
    print_error("runtime", e.what());
    return 1;
  }
  return 2;
}
