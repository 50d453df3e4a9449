// Copyright 2026 The PAC Authors
// SPDX-License-Identifier: Apache-2.0

#include "pac/training.hpp"

#include "pac/errors.hpp"
#include "pac/logging.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace pac {

void OptimConfig::validate() const {
  if (!(lr_init >= 0.0 && lr_init <= lr_peak)) throw ConfigError("OptimConfig: require 0 <= lr_init <= lr_peak");
  if (!(lr_end >= 0.0)) throw ConfigError("OptimConfig: lr_end must be >= 0");
  if (warmup_steps < 0 || !(warmup_steps < decay_steps)) throw ConfigError("OptimConfig: require warmup_steps < decay_steps");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("OptimConfig: betas must be in [0, 1)");
  if (!(eps > 0.0)) throw ConfigError("OptimConfig: eps must be positive");
  if (!(weight_decay >= 0.0)) throw ConfigError("OptimConfig: weight_decay must be >= 0");
  if (batch_size < 1 || traj_len < 1) throw ConfigError("OptimConfig: batch_size and traj_len must be >= 1");
}

OptimConfig OptimConfig::scale_preset(const std::string& scale) {
  OptimConfig c;
  c.warmup_steps = 15000;
  c.decay_steps = 2700000;
  c.beta1 = 0.9;
  c.beta2 = 0.95;
  c.weight_decay = 1e-3;
  c.batch_size = 512;
  c.traj_len = 5;
  if (scale == "XXS" || scale == "XS") {
    c.lr_init = 1e-6, c.lr_peak = 1e-4, c.lr_end = 1e-5;
  } else if (scale == "S") {
    c.lr_init = 1e-7, c.lr_peak = 5e-5, c.lr_end = 5e-6;
  } else if (scale == "M" || scale == "L") {
    c.lr_init = 1e-7, c.lr_peak = 3e-5, c.lr_end = 3e-6;
  } else {
    throw ConfigError("unknown model scale: " + scale);
  }
  return c;
}

double lr_at(std::int64_t step, const OptimConfig& cfg) {
  if (step < 0) throw std::invalid_argument("lr_at: negative step");
  if (step < cfg.warmup_steps) {
    return cfg.lr_init + (cfg.lr_peak - cfg.lr_init) * double(step) / double(cfg.warmup_steps);
  }
  if (step >= cfg.decay_steps) return cfg.lr_end;
  const double progress = double(step - cfg.warmup_steps) / double(cfg.decay_steps - cfg.warmup_steps);
  return cfg.lr_end + (cfg.lr_peak - cfg.lr_end) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

AdamState AdamState::zeros_like(const ad::ParamSet& params) {
  AdamState s;
  s.m = params.zeros_like();
  s.v = params.zeros_like();
  return s;
}

bool optimizer_step(ad::ParamSet& params, const ad::ParamSet& grads, AdamState& adam, double lr,
                    const OptimConfig& cfg) {
  if (!params.same_structure(grads) || !params.same_structure(adam.m) || !params.same_structure(adam.v)) {
    throw std::invalid_argument("optimizer_step: shape mismatch");
  }
  if (!grads.all_finite()) {
    log_warning("optimizer_step: non-finite gradient, step rejected at t=" + std::to_string(adam.t));
    return false;
  }
  adam.t += 1;
  const double c1 = 1.0 - std::pow(cfg.beta1, double(adam.t));
  const double c2 = 1.0 - std::pow(cfg.beta2, double(adam.t));
  const double decay = 1.0 - lr * cfg.weight_decay;
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& m = adam.m.value(i);
    auto& v = adam.v.value(i);
    const auto& g = grads.value(i);
    m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
    v = (cfg.beta2 * v.array() + (1.0 - cfg.beta2) * g.array().square()).matrix();
    auto& p = params.value(i);
    p = (decay * p.array() - lr * (m.array() / c1) / ((v.array() / c2).sqrt() + cfg.eps)).matrix();
  }
  return true;
}

double global_norm(const ad::ParamSet& grads) {
  double s = 0.0;
  for (std::size_t i = 0; i < grads.size(); ++i) s += grads.value(i).squaredNorm();
  return std::sqrt(s);
}

double clip_by_global_norm(ad::ParamSet& grads, double max_norm) {
  const double norm = global_norm(grads);
  if (max_norm > 0.0 && norm > max_norm && std::isfinite(norm)) {
    const double s = max_norm / norm;
    for (std::size_t i = 0; i < grads.size(); ++i) grads.value(i) *= s;
  }
  return norm;
}

void DropoutConfig::validate() const {
  if (!(p_vision_goal >= 0.0 && p_vision_goal <= 1.0) || !(p_language_goal >= 0.0 && p_language_goal <= 1.0)) {
    throw ConfigError("DropoutConfig: probabilities must be in [0, 1]");
  }
}

TaskKeep draw_task_keep(const DropoutConfig& cfg, Rng& rng) {
  TaskKeep k;
  k.vision = cfg.p_vision_goal >= 1.0 ? true : rng.bernoulli(cfg.p_vision_goal);
  k.language = cfg.p_language_goal >= 1.0 ? true : rng.bernoulli(cfg.p_language_goal);
  return k;
}

void apply_task_keep(Observation& obs, TaskKeep keep) {
  if (!keep.vision) obs.goal_images.clear();
  if (!keep.language) obs.text_tokens.clear();
}

TaskKeep apply_modality_dropout(std::vector<Transition>& window, const DropoutConfig& cfg, Rng& rng) {
  const TaskKeep keep = draw_task_keep(cfg, rng);
  for (auto& t : window) {
    apply_task_keep(t.obs, keep);
    apply_task_keep(t.next_obs, keep);
  }
  return keep;
}

void TrainConfig::validate() const {
  optim.validate();
  loss.validate();
  bins.validate();
  dropout.validate();
  if (steps < 0) throw ConfigError("TrainConfig: steps must be >= 0");
}

namespace {

const char* objective_name(Objective o) { return o == Objective::q ? "q" : "v"; }

Objective objective_from(const std::string& s) {
  if (s == "q") return Objective::q;
  if (s == "v") return Objective::v;
  throw ConfigError("unknown objective: " + s);
}

}  // namespace

nlohmann::json to_json(const TrainConfig& c) {
  nlohmann::json overrides = nlohmann::json::object();
  for (const auto& [g, ab] : c.loss.group_overrides) overrides[g] = {ab.first, ab.second};
  return {{"optim",
           {{"lr_init", c.optim.lr_init},
            {"lr_peak", c.optim.lr_peak},
            {"lr_end", c.optim.lr_end},
            {"warmup_steps", c.optim.warmup_steps},
            {"decay_steps", c.optim.decay_steps},
            {"beta1", c.optim.beta1},
            {"beta2", c.optim.beta2},
            {"eps", c.optim.eps},
            {"weight_decay", c.optim.weight_decay},
            {"clip_norm", c.optim.clip_norm},
            {"batch_size", c.optim.batch_size},
            {"traj_len", c.optim.traj_len}}},
          {"loss",
           {{"alpha", c.loss.alpha},
            {"beta", c.loss.beta},
            {"eta", c.loss.eta},
            {"n_samples", c.loss.n_samples},
            {"n_next_samples", c.loss.n_next_samples},
            {"target_period", c.loss.target_period},
            {"gamma", c.loss.gamma},
            {"group_overrides", overrides},
            {"reference", c.loss.reference == ReferencePolicy::frozen ? "frozen" : "target"},
            {"behavior_mode", c.loss.behavior_mode == BehaviorMode::learned ? "learned" : "constant"},
            {"max_advantage_weight", c.loss.max_advantage_weight},
            {"max_importance_ratio", c.loss.max_importance_ratio}}},
          {"bins", {{"q_min", c.bins.q_min}, {"q_max", c.bins.q_max}, {"count", c.bins.count}}},
          {"dropout", {{"p_vision_goal", c.dropout.p_vision_goal}, {"p_language_goal", c.dropout.p_language_goal}}},
          {"objective", objective_name(c.objective)},
          {"group_weights", c.group_weights},
          {"filter_success", c.filter_success},
          {"preset", c.preset},
          {"low_quality_groups", c.low_quality_groups},
          {"seed", c.seed},
          {"steps", c.steps},
          {"schedule_origin", c.schedule_origin}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  try {
    TrainConfig c;
    const auto& o = j.at("optim");
    c.optim.lr_init = o.at("lr_init");
    c.optim.lr_peak = o.at("lr_peak");
    c.optim.lr_end = o.at("lr_end");
    c.optim.warmup_steps = o.at("warmup_steps");
    c.optim.decay_steps = o.at("decay_steps");
    c.optim.beta1 = o.at("beta1");
    c.optim.beta2 = o.at("beta2");
    c.optim.eps = o.at("eps");
    c.optim.weight_decay = o.at("weight_decay");
    c.optim.clip_norm = o.at("clip_norm");
    c.optim.batch_size = o.at("batch_size");
    c.optim.traj_len = o.at("traj_len");
    const auto& l = j.at("loss");
    c.loss.alpha = l.at("alpha");
    c.loss.beta = l.at("beta");
    c.loss.eta = l.at("eta");
    c.loss.n_samples = l.at("n_samples");
    c.loss.n_next_samples = l.at("n_next_samples");
    c.loss.target_period = l.at("target_period");
    c.loss.gamma = l.at("gamma");
    for (const auto& [g, ab] : l.at("group_overrides").items()) {
      c.loss.group_overrides[g] = {ab.at(0).get<double>(), ab.at(1).get<double>()};
    }
    c.loss.reference = l.at("reference") == "frozen" ? ReferencePolicy::frozen : ReferencePolicy::target;
    c.loss.behavior_mode = l.at("behavior_mode") == "learned" ? BehaviorMode::learned : BehaviorMode::constant;
    c.loss.max_advantage_weight = l.at("max_advantage_weight");
    c.loss.max_importance_ratio = l.at("max_importance_ratio");
    const auto& b = j.at("bins");
    c.bins.q_min = b.at("q_min");
    c.bins.q_max = b.at("q_max");
    c.bins.count = b.at("count");
    c.dropout.p_vision_goal = j.at("dropout").at("p_vision_goal");
    c.dropout.p_language_goal = j.at("dropout").at("p_language_goal");
    c.objective = objective_from(j.at("objective"));
    c.group_weights = j.at("group_weights").get<GroupWeights>();
    c.filter_success = j.at("filter_success");
    c.preset = j.at("preset");
    c.low_quality_groups = j.at("low_quality_groups").get<std::vector<std::string>>();
    c.seed = j.at("seed");
    c.steps = j.at("steps");
    c.schedule_origin = j.value("schedule_origin", std::int64_t{0});
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("invalid training config: ") + e.what());
  }
}

std::vector<std::string> preset_names() { return {"bc+q", "filteredbc", "pac", "alpha-pac", "pac+v"}; }

void apply_preset(const std::string& name, TrainConfig& cfg, const EpisodeStore& store) {
  cfg.preset = name;
  cfg.loss.group_overrides.clear();
  cfg.filter_success = false;
  cfg.objective = Objective::q;
  if (name == "bc+q") {
    cfg.loss.alpha = 1.0;
    cfg.loss.beta = 38.0;
  } else if (name == "filteredbc") {
    cfg.loss.alpha = 1.0;
    cfg.loss.beta = 0.0;
    cfg.filter_success = true;
  } else if (name == "pac") {
    cfg.loss.alpha = 0.75;
    cfg.loss.beta = 38.0;
  } else if (name == "alpha-pac") {
    cfg.loss.alpha = 0.75;
    cfg.loss.beta = 19.0;
    std::map<std::string, std::pair<std::size_t, std::size_t>> counts;  // successes, total
    for (const auto& e : store.episodes()) {
      auto& c = counts[e.group_id];
      c.first += e.success ? 1 : 0;
      c.second += 1;
    }
    for (const auto& [g, c] : counts) {
      const bool listed =
          std::find(cfg.low_quality_groups.begin(), cfg.low_quality_groups.end(), g) != cfg.low_quality_groups.end();
      const bool low = listed || double(c.first) < 0.5 * double(c.second);
      cfg.loss.group_overrides[g] = low ? std::pair{0.0, 1900.0} : std::pair{0.75, 19.0};
    }
    for (const auto& g : cfg.low_quality_groups) cfg.loss.group_overrides[g] = {0.0, 1900.0};
  } else if (name == "pac+v") {
    cfg.objective = Objective::v;
    cfg.loss.alpha = 0.0;
    cfg.loss.beta = 38.0;
    cfg.loss.eta = 1e-4;
  } else {
    throw ConfigError("unknown preset: " + name);
  }
}

TrainingRun make_training_run(const ActorCritic& model, std::uint64_t seed) {
  Rng init(mix_seed(seed, 0));
  TrainingRun run{make_model_state(model.init_params(init)), {}, Rng(mix_seed(seed, 1))};
  run.adam = AdamState::zeros_like(run.model.params);
  return run;
}

nlohmann::json MetricsRecord::to_json() const {
  return {{"step", step},       {"loss", loss}, {"rl_term", rl_term},     {"bc_term", bc_term},
          {"td_term", td_term}, {"lr", lr},     {"grad_norm", grad_norm}, {"applied", applied}};
}

TrajectorySampler make_sampler(const EpisodeStore& store, const TrainConfig& cfg) {
  StoreView view = cfg.filter_success ? filter_success(store) : StoreView::all(store);
  return TrajectorySampler(std::move(view), cfg.group_weights);
}

std::vector<MetricsRecord> train(const ActorCritic& model, TrainingRun& run, const TrajectorySampler& sampler,
                                 const TrainConfig& cfg, std::int64_t steps, std::ostream* metrics) {
  cfg.validate();
  std::vector<MetricsRecord> log;
  log.reserve(std::size_t(std::max<std::int64_t>(steps, 0)));
  for (std::int64_t i = 0; i < steps; ++i) {
    std::vector<Transition> batch;
    batch.reserve(std::size_t(cfg.optim.batch_size) * cfg.optim.traj_len);
    for (auto& window : sampler.sample(cfg.optim.batch_size, cfg.optim.traj_len, run.rng)) {
      apply_modality_dropout(window, cfg.dropout, run.rng);
      for (auto& t : window) batch.push_back(std::move(t));
    }
    const bool any_valid = std::any_of(batch.begin(), batch.end(), [](const Transition& t) { return t.valid; });
    MetricsRecord rec;
    rec.step = run.model.step;
    rec.lr = lr_at(std::max<std::int64_t>(0, run.model.step - cfg.schedule_origin), cfg.optim);
    ad::ParamSet grads = run.model.params.zeros_like();
    if (any_valid) {
      const LossBreakdown lb = cfg.objective == Objective::q
                                   ? loss_q(model, run.model, batch, cfg.loss, cfg.bins, run.rng, &grads)
                                   : loss_v(model, run.model, batch, cfg.loss, cfg.bins, &grads);
      if (!std::isfinite(lb.loss)) {
        std::ostringstream msg;
        msg << "non-finite loss at step " << run.model.step << " (rl=" << lb.rl_term << ", bc=" << lb.bc_term
            << ", td=" << lb.td_term << ")";
        throw TrainingError(msg.str());
      }
      rec.loss = lb.loss;
      rec.rl_term = lb.rl_term;
      rec.bc_term = lb.bc_term;
      rec.td_term = lb.td_term;
      rec.grad_norm = clip_by_global_norm(grads, cfg.optim.clip_norm);
      rec.applied = optimizer_step(run.model.params, grads, run.adam, rec.lr, cfg.optim);
    } else {
      rec.applied = false;
    }
    if (rec.applied) {
      run.model.step += 1;
      maybe_update_target(run.model, cfg.loss.target_period);
    }
    if (metrics != nullptr) *metrics << rec.to_json().dump() << '\n';
    log.push_back(rec);
  }
  return log;
}

std::map<std::string, std::string> parse_config_text(const std::string& text) {
  std::map<std::string, std::string> out;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return std::string();
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
  };
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
    if (out.count(key) != 0) throw ConfigError("config line " + std::to_string(lineno) + ": duplicate key " + key);
    out[key] = value;
  }
  return out;
}

std::map<std::string, std::string> parse_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

}  // namespace pac
