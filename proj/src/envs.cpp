// Copyright 2026 The PAC Authors
// SPDX-License-Identifier: Apache-2.0

#include "pac/envs.hpp"

#include "pac/errors.hpp"

#include <boost/math/distributions/normal.hpp>

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace pac {

TabularMDP::TabularMDP(int states, int actions)
    : n_states(states),
      n_actions(actions),
      transition(std::size_t(states) * actions * states, 0.0),
      reward(std::size_t(states) * actions * states, 0.0),
      initial(std::size_t(states), 0.0),
      terminal(std::size_t(states), false) {}

double TabularMDP::expected_reward(int s, int a) const {
  double e = 0.0;
  for (int s2 = 0; s2 < n_states; ++s2) e += p(s, a, s2) * r(s, a, s2);
  return e;
}

void TabularMDP::validate() const {
  if (n_states <= 0 || n_actions <= 0) throw std::invalid_argument("TabularMDP: empty state or action space");
  if (!(gamma >= 0.0 && gamma < 1.0)) throw std::invalid_argument("TabularMDP: gamma must be in [0, 1)");
  double init = 0.0;
  for (int s = 0; s < n_states; ++s) {
    init += initial[std::size_t(s)];
    if (terminal[std::size_t(s)]) continue;
    for (int a = 0; a < n_actions; ++a) {
      double row = 0.0;
      for (int s2 = 0; s2 < n_states; ++s2) {
        if (p(s, a, s2) < 0.0) throw std::invalid_argument("TabularMDP: negative transition probability");
        if (!std::isfinite(r(s, a, s2))) throw std::invalid_argument("TabularMDP: non-finite reward");
        row += p(s, a, s2);
      }
      if (std::abs(row - 1.0) > 1e-9) throw std::invalid_argument("TabularMDP: transition row does not sum to 1");
    }
  }
  if (std::abs(init - 1.0) > 1e-9) throw std::invalid_argument("TabularMDP: initial distribution does not sum to 1");
}

Eigen::MatrixXd evaluate_policy_q(const TabularMDP& mdp, const TabularPolicy& pi) {
  const int S = mdp.n_states;
  const int A = mdp.n_actions;
  Eigen::MatrixXd m = Eigen::MatrixXd::Identity(S, S);
  Eigen::VectorXd r = Eigen::VectorXd::Zero(S);
  for (int s = 0; s < S; ++s) {
    if (mdp.terminal[std::size_t(s)]) continue;
    for (int a = 0; a < A; ++a) {
      const double w = pi(s, a);
      r(s) += w * mdp.expected_reward(s, a);
      for (int s2 = 0; s2 < S; ++s2) {
        if (!mdp.terminal[std::size_t(s2)]) m(s, s2) -= mdp.gamma * w * mdp.p(s, a, s2);
      }
    }
  }
  const Eigen::VectorXd v = m.partialPivLu().solve(r);
  Eigen::MatrixXd q = Eigen::MatrixXd::Zero(S, A);
  for (int s = 0; s < S; ++s) {
    if (mdp.terminal[std::size_t(s)]) continue;
    for (int a = 0; a < A; ++a) {
      double x = mdp.expected_reward(s, a);
      for (int s2 = 0; s2 < S; ++s2) {
        if (!mdp.terminal[std::size_t(s2)]) x += mdp.gamma * mdp.p(s, a, s2) * v(s2);
      }
      q(s, a) = x;
    }
  }
  return q;
}

namespace {

TabularPolicy tilt(const TabularMDP& mdp, const Eigen::MatrixXd& q, const TabularPolicy& reference, double eta) {
  TabularPolicy out = reference;
  for (int s = 0; s < mdp.n_states; ++s) {
    if (mdp.terminal[std::size_t(s)]) continue;
    const double m = q.row(s).maxCoeff();
    double z = 0.0;
    for (int a = 0; a < mdp.n_actions; ++a) {
      out(s, a) = reference(s, a) * std::exp((q(s, a) - m) / eta);
      z += out(s, a);
    }
    out.row(s) /= z;
  }
  return out;
}

}  // namespace

OracleResult regularized_oracle(const TabularMDP& mdp, double eta, const TabularPolicy& reference,
                                int max_iterations, double tolerance) {
  mdp.validate();
  if (!(eta > 0.0)) throw std::invalid_argument("regularized_oracle: eta must be positive");
  if (reference.rows() != mdp.n_states || reference.cols() != mdp.n_actions) {
    throw std::invalid_argument("regularized_oracle: reference policy shape mismatch");
  }
  TabularPolicy pi = reference;
  double step = 1.0;
  double previous = std::numeric_limits<double>::infinity();
  OracleResult out;
  for (int it = 1; it <= max_iterations; ++it) {
    const Eigen::MatrixXd q = evaluate_policy_q(mdp, pi);
    const TabularPolicy next = tilt(mdp, q, reference, eta);
    const double residual = (next - pi).cwiseAbs().maxCoeff();
    if (residual < tolerance) {
      out.policy = next;
      out.q = evaluate_policy_q(mdp, next);
      out.iterations = it;
      out.residual = residual;
      return out;
    }
    // Damped update; halve the step whenever the residual grows.
    if (residual > previous) step = std::max(step * 0.5, 1e-3);
    previous = residual;
    pi = (1.0 - step) * pi + step * next;
  }
  throw ConvergenceError("regularized_oracle: no convergence within the iteration budget", previous);
}

Eigen::MatrixXd optimal_q(const TabularMDP& mdp, double tolerance) {
  mdp.validate();
  Eigen::MatrixXd q = Eigen::MatrixXd::Zero(mdp.n_states, mdp.n_actions);
  for (int it = 0; it < 100000; ++it) {
    Eigen::MatrixXd next = Eigen::MatrixXd::Zero(mdp.n_states, mdp.n_actions);
    for (int s = 0; s < mdp.n_states; ++s) {
      if (mdp.terminal[std::size_t(s)]) continue;
      for (int a = 0; a < mdp.n_actions; ++a) {
        double x = 0.0;
        for (int s2 = 0; s2 < mdp.n_states; ++s2) {
          const double boot = mdp.terminal[std::size_t(s2)] ? 0.0 : q.row(s2).maxCoeff();
          x += mdp.p(s, a, s2) * (mdp.r(s, a, s2) + mdp.gamma * boot);
        }
        next(s, a) = x;
      }
    }
    const double delta = (next - q).cwiseAbs().maxCoeff();
    q = next;
    if (delta < tolerance) return q;
  }
  throw ConvergenceError("optimal_q: value iteration did not converge", 0.0);
}

TabularMDP bandit_mdp() {
  TabularMDP m(2, 4);
  const double rewards[4] = {0.2, 0.5, 0.8, 0.3};
  for (int a = 0; a < 4; ++a) {
    m.p(0, a, 1) = 1.0;
    m.r(0, a, 1) = rewards[a];
  }
  m.terminal[1] = true;
  m.initial[0] = 1.0;
  m.gamma = 0.9;
  m.horizon = 1;
  m.success_threshold = 0.75;
  m.task_id = m.group_id = "bandit";
  return m;
}

TabularMDP chain_mdp() {
  // States 0..2 are interior, 3 is the absorbing goal. Action 0 moves left,
  // action 1 moves right.
  TabularMDP m(4, 2);
  for (int s = 0; s < 3; ++s) {
    m.p(s, 0, std::max(s - 1, 0)) = 1.0;
    m.p(s, 1, s + 1) = 1.0;
    if (s + 1 == 3) m.r(s, 1, 3) = 1.0;
    m.initial[std::size_t(s)] = 1.0 / 3.0;
  }
  m.terminal[3] = true;
  m.gamma = 0.9;
  m.horizon = 20;
  m.success_threshold = 0.5;
  m.task_id = m.group_id = "chain";
  return m;
}

TabularMDP gridworld_mdp() {
  constexpr int n = 4;
  constexpr int goal = n * n - 1;
  TabularMDP m(n * n, 4);
  const int dr[4] = {-1, 1, 0, 0};
  const int dc[4] = {0, 0, -1, 1};
  for (int s = 0; s < n * n; ++s) {
    if (s == goal) continue;
    const int r = s / n;
    const int c = s % n;
    for (int a = 0; a < 4; ++a) {
      const int nr = std::clamp(r + dr[a], 0, n - 1);
      const int nc = std::clamp(c + dc[a], 0, n - 1);
      const int s2 = nr * n + nc;
      m.p(s, a, s2) = 1.0;
      if (s2 == goal) m.r(s, a, s2) = 1.0;
    }
    m.initial[std::size_t(s)] = 1.0 / double(n * n - 1);
  }
  m.terminal[goal] = true;
  m.gamma = 0.9;
  m.horizon = 30;
  m.success_threshold = 0.5;
  m.task_id = m.group_id = "gridworld";
  return m;
}

TabularMDP lure_chain_mdp() {
  // 0, 1: stages; 2: goal; 3: failure. Actions: advance, lure, two dead ends.
  TabularMDP m(4, 4);
  for (int s = 0; s < 2; ++s) {
    const int next = s == 0 ? 1 : 2;
    m.p(s, 0, next) = 0.95;
    m.p(s, 0, 3) = 0.05;
    m.p(s, 1, 2) = 0.4;
    m.p(s, 1, 3) = 0.6;
    m.p(s, 2, 3) = 1.0;
    m.p(s, 3, 3) = 1.0;
    for (int a = 0; a < 4; ++a) m.r(s, a, 2) = 1.0;
  }
  m.terminal[2] = m.terminal[3] = true;
  m.initial[0] = 1.0;
  m.gamma = 0.95;
  m.horizon = 10;
  m.success_threshold = 0.5;
  m.task_id = m.group_id = "lure_chain";
  return m;
}

TabularPolicy lure_behavior(const TabularMDP& mdp) {
  TabularPolicy b = uniform_policy(mdp);
  for (int s = 0; s < 2; ++s) b.row(s) << 0.32, 0.36, 0.16, 0.16;
  return b;
}

TabularPolicy uniform_policy(const TabularMDP& mdp) {
  return TabularPolicy::Constant(mdp.n_states, mdp.n_actions, 1.0 / mdp.n_actions);
}

TabularEnv::TabularEnv(TabularMDP mdp, std::string name) : mdp_(std::move(mdp)), name_(std::move(name)) {
  mdp_.validate();
}

Observation TabularEnv::observe(int state) const {
  Observation o;
  o.proprio.assign(std::size_t(mdp_.n_states), 0.0f);
  o.proprio[std::size_t(state)] = 1.0f;
  return o;
}

Observation TabularEnv::reset(Rng& rng) {
  state_ = static_cast<int>(rng.categorical(mdp_.initial));
  return observe(state_);
}

StepResult TabularEnv::step(std::span<const float> action, Rng& rng) {
  if (action.size() != 1) throw std::invalid_argument("TabularEnv: action must be a single index");
  const int a = static_cast<int>(std::lround(action[0]));
  if (a < 0 || a >= mdp_.n_actions) throw std::invalid_argument("TabularEnv: action out of range");
  if (mdp_.terminal[std::size_t(state_)]) throw std::logic_error("TabularEnv: step from a terminal state");
  std::vector<double> row(std::size_t(mdp_.n_states));
  for (int s2 = 0; s2 < mdp_.n_states; ++s2) row[std::size_t(s2)] = mdp_.p(state_, a, s2);
  const int next = static_cast<int>(rng.categorical(row));
  StepResult out;
  out.reward = mdp_.r(state_, a, next);
  state_ = next;
  out.obs = observe(next);
  out.terminated = mdp_.terminal[std::size_t(next)];
  return out;
}

bool TabularEnv::is_success(double episode_return) const { return episode_return >= mdp_.success_threshold; }

PointMassEnv::PointMassEnv(PointMassConfig cfg) : cfg_(std::move(cfg)) {}

namespace {

void splat(Image& img, double x, double y, double intensity) {
  const double sigma = 1.0;
  const double cx = (x + 1.0) * 0.5 * (img.width - 1);
  const double cy = (y + 1.0) * 0.5 * (img.height - 1);
  for (int r = 0; r < img.height; ++r) {
    for (int c = 0; c < img.width; ++c) {
      const double d2 = (c - cx) * (c - cx) + (r - cy) * (r - cy);
      img.pixels[std::size_t(r * img.width + c)] += static_cast<float>(intensity * std::exp(-d2 / (2 * sigma * sigma)));
    }
  }
}

Image blank(int size) {
  Image im;
  im.height = im.width = size;
  im.channels = 1;
  im.pixels.assign(std::size_t(size) * size, 0.0f);
  return im;
}

}  // namespace

Observation PointMassEnv::observe() const {
  Observation o;
  o.proprio = {float(pos_[0]), float(pos_[1]), float(goal_[0]), float(goal_[1])};
  if (cfg_.render_image) {
    Image scene = blank(cfg_.image_size);
    splat(scene, pos_[0], pos_[1], 1.0);
    splat(scene, goal_[0], goal_[1], 0.5);
    o.images.push_back(std::move(scene));
    Image target = blank(cfg_.image_size);
    splat(target, goal_[0], goal_[1], 1.0);
    o.goal_images.push_back(std::move(target));
  }
  o.text_tokens = tokenize_task(cfg_.task_id, cfg_.text_tokens);
  return o;
}

Observation PointMassEnv::reset(Rng& rng) {
  goal_ = {rng.uniform() * 1.6 - 0.8, rng.uniform() * 1.6 - 0.8};
  do {
    pos_ = {rng.uniform() * 2.0 - 1.0, rng.uniform() * 2.0 - 1.0};
  } while (std::hypot(pos_[0] - goal_[0], pos_[1] - goal_[1]) < 2.0 * cfg_.goal_radius);
  return observe();
}

StepResult PointMassEnv::step(std::span<const float> action, Rng&) {
  if (action.size() != 2) throw std::invalid_argument("PointMassEnv: action must be 2-D");
  for (int d = 0; d < 2; ++d) {
    if (!std::isfinite(action[std::size_t(d)])) throw std::domain_error("PointMassEnv: non-finite action");
    const double a = std::clamp(double(action[std::size_t(d)]), -1.0, 1.0);
    pos_[std::size_t(d)] = std::clamp(pos_[std::size_t(d)] + cfg_.step_size * a, -1.0, 1.0);
  }
  StepResult out;
  out.terminated = std::hypot(pos_[0] - goal_[0], pos_[1] - goal_[1]) < cfg_.goal_radius;
  out.reward = out.terminated ? 1.0 : 0.0;
  out.obs = observe();
  return out;
}

ModalitySpec PointMassEnv::modality_spec(int embed_dim) const {
  ModalitySpec s;
  s.n_proprio = 4;
  s.n_images = cfg_.render_image ? 1 : 0;
  s.n_goal_images = cfg_.render_image ? 1 : 0;
  s.n_text_tokens = cfg_.text_tokens;
  s.n_action_dims = 2;
  s.image_height = s.image_width = cfg_.image_size;
  s.image_channels = 1;
  s.embed_dim = embed_dim;
  return s;
}

ActionCodec PointMassEnv::action_codec(int bins) const { return ActionCodec(bins, {-1.0, -1.0}, {1.0, 1.0}); }

std::unique_ptr<Environment> make_env(const std::string& name) {
  if (name == "bandit") return std::make_unique<TabularEnv>(bandit_mdp(), name);
  if (name == "chain") return std::make_unique<TabularEnv>(chain_mdp(), name);
  if (name == "gridworld") return std::make_unique<TabularEnv>(gridworld_mdp(), name);
  if (name == "lure_chain") return std::make_unique<TabularEnv>(lure_chain_mdp(), name);
  if (name == "point_mass") return std::make_unique<PointMassEnv>();
  throw ConfigError("unknown environment: " + name);
}

std::vector<std::string> env_names() { return {"bandit", "chain", "gridworld", "lure_chain", "point_mass"}; }

Policy tabular_policy(const TabularPolicy& pi) {
  return [pi](const Observation& obs, Rng& rng) {
    const auto it = std::max_element(obs.proprio.begin(), obs.proprio.end());
    const auto s = static_cast<Eigen::Index>(it - obs.proprio.begin());
    std::vector<double> row(std::size_t(pi.cols()));
    for (Eigen::Index a = 0; a < pi.cols(); ++a) row[std::size_t(a)] = pi(s, a);
    return std::vector<float>{static_cast<float>(rng.categorical(row))};
  };
}

Policy epsilon_optimal_policy(const Environment& env, double epsilon) {
  if (const auto* t = dynamic_cast<const TabularEnv*>(&env)) {
    const Eigen::MatrixXd q = optimal_q(t->mdp());
    const int n_actions = t->mdp().n_actions;
    return [q, n_actions, epsilon](const Observation& obs, Rng& rng) {
      const auto s = static_cast<Eigen::Index>(std::max_element(obs.proprio.begin(), obs.proprio.end()) -
                                               obs.proprio.begin());
      if (rng.uniform() < epsilon) return std::vector<float>{static_cast<float>(rng.below(std::uint64_t(n_actions)))};
      Eigen::Index best = 0;
      for (Eigen::Index a = 1; a < q.cols(); ++a) {
        if (q(s, a) > q(s, best) + 1e-12) best = a;
      }
      return std::vector<float>{static_cast<float>(best)};
    };
  }
  if (const auto* p = dynamic_cast<const PointMassEnv*>(&env)) {
    const double step = p->config().step_size;
    return [epsilon, step](const Observation& obs, Rng& rng) {
      if (rng.uniform() < epsilon) {
        return std::vector<float>{float(rng.uniform() * 2 - 1), float(rng.uniform() * 2 - 1)};
      }
      const double dx = obs.proprio[2] - obs.proprio[0];
      const double dy = obs.proprio[3] - obs.proprio[1];
      const double dist = std::hypot(dx, dy);
      const double speed = dist > 0 ? std::min(1.0, dist / step) / dist : 0.0;
      return std::vector<float>{float(dx * speed), float(dy * speed)};
    };
  }
  throw ConfigError("epsilon_optimal_policy: unsupported environment " + env.name());
}

Policy model_policy(const ActorCritic& model, const ad::ParamSet& params, EvalMode mode) {
  return [&model, &params, mode](const Observation& obs, Rng& rng) {
    ad::Tape tape;
    Latent l = model.encode(params, obs, tape);
    const ad::Matrix logits = model.policy_logits(params, l, tape).value();
    const std::vector<int> bins = mode == EvalMode::greedy ? greedy_bins(logits) : sample_bins(logits, rng);
    const std::vector<double> a = model.codec().decode(bins);
    return std::vector<float>(a.begin(), a.end());
  };
}

namespace {

EpisodeRecord rollout(const Environment& proto, const Policy& policy, std::uint64_t trial_seed, double* ret) {
  auto env = proto.clone();
  Rng env_rng(mix_seed(trial_seed, 0));
  Rng policy_rng(mix_seed(trial_seed, 1));
  EpisodeRecord e;
  e.task_id = env->task_id();
  e.group_id = env->group_id();
  e.terminated = false;
  Observation obs = env->reset(env_rng);
  double total = 0.0;
  for (int t = 0; t < env->horizon(); ++t) {
    EpisodeStep s;
    s.obs = obs;
    s.action = policy(obs, policy_rng);
    StepResult r = env->step(s.action, env_rng);
    s.reward = static_cast<float>(r.reward);
    total += r.reward;
    e.steps.push_back(std::move(s));
    obs = std::move(r.obs);
    if (r.terminated) {
      e.terminated = true;
      break;
    }
  }
  e.success = env->is_success(total);
  if (ret != nullptr) *ret = total;
  return e;
}

}  // namespace

std::vector<EpisodeRecord> make_behavior_dataset(const Environment& env, const Policy& behavior, int n_episodes,
                                                 std::uint64_t seed) {
  std::vector<EpisodeRecord> out;
  out.reserve(std::size_t(std::max(n_episodes, 0)));
  for (int i = 0; i < n_episodes; ++i) out.push_back(rollout(env, behavior, mix_seed(seed, std::uint64_t(i)), nullptr));
  return out;
}

WilsonInterval wilson_interval(double successes, double trials, double alpha_w) {
  if (!(trials >= 1.0) || successes < 0.0 || successes > trials) {
    throw std::invalid_argument("wilson_interval: require 0 <= successes <= trials and trials >= 1");
  }
  if (!(alpha_w > 0.0 && alpha_w < 1.0)) throw std::invalid_argument("wilson_interval: alpha_w must be in (0, 1)");
  const double z = boost::math::quantile(boost::math::normal(), 1.0 - alpha_w / 2.0);
  const double n = trials;
  const double p = successes / n;
  const double z2 = z * z;
  const double denom = 1.0 + z2 / n;
  const double center = (p + z2 / (2.0 * n)) / denom;
  const double half = z / denom * std::sqrt(p * (1.0 - p) / n + z2 / (4.0 * n * n));
  WilsonInterval w;
  w.lower = successes == 0.0 ? 0.0 : std::clamp(center - half, 0.0, 1.0);
  w.upper = successes == trials ? 1.0 : std::clamp(center + half, 0.0, 1.0);
  w.lower = std::min(w.lower, p);
  w.upper = std::max(w.upper, p);
  return w;
}

nlohmann::json EvalReport::to_json() const {
  return {{"task_id", task_id},         {"trials", trials},           {"successes", successes},
          {"success_rate", success_rate}, {"lower", lower},           {"upper", upper},
          {"mean_return", mean_return}, {"normalized_return", normalized_return}};
}

EvalReport evaluate(const Policy& policy, const Environment& env, int n_trials, std::uint64_t seed,
                    std::vector<EpisodeRecord>* episodes) {
  if (n_trials < 1) throw std::invalid_argument("evaluate: n_trials must be >= 1");
  EvalReport rep;
  rep.task_id = env.task_id();
  rep.trials = n_trials;
  double total_return = 0.0;
  for (int i = 0; i < n_trials; ++i) {
    double ret = 0.0;
    EpisodeRecord e = rollout(env, policy, mix_seed(seed, std::uint64_t(i)), &ret);
    rep.successes += e.success ? 1 : 0;
    total_return += ret;
    if (episodes != nullptr) episodes->push_back(std::move(e));
  }
  rep.success_rate = double(rep.successes) / n_trials;
  const WilsonInterval w = wilson_interval(rep.successes, n_trials);
  rep.lower = w.lower;
  rep.upper = w.upper;
  rep.mean_return = total_return / n_trials;
  rep.normalized_return = env.expert_return() > 0.0 ? rep.mean_return / env.expert_return() : 0.0;
  return rep;
}

std::vector<EvalReport> self_improve(const ActorCritic& model, TrainingRun& run, const Environment& env,
                                     EpisodeStore& store, TrainConfig cfg, const ImproveConfig& improve) {
  std::vector<EvalReport> reports;
  reports.push_back(evaluate(model_policy(model, run.model.params, improve.eval_mode), env, improve.eval_trials,
                             improve.eval_seed));
  for (int round = 1; round <= improve.rounds; ++round) {
    std::vector<EpisodeRecord> collected;
    evaluate(model_policy(model, run.model.params, improve.eval_mode), env, improve.episodes_per_round,
             mix_seed(improve.collect_seed, std::uint64_t(round)), &collected);
    store.append_round(std::move(collected), store.last_round() + 1);
    const TrajectorySampler sampler = make_sampler(store, cfg);
    cfg.schedule_origin = run.model.step;
    train(model, run, sampler, cfg, improve.finetune_steps);
    reports.push_back(evaluate(model_policy(model, run.model.params, improve.eval_mode), env, improve.eval_trials,
                               improve.eval_seed));
  }
  return reports;
}

double tune_epsilon(const Environment& env, double target, int episodes, std::uint64_t seed) {
  auto rate = [&](double eps) {
    return evaluate(epsilon_optimal_policy(env, eps), env, episodes, seed).success_rate;
  };
  if (rate(0.0) <= target) return 0.0;
  if (rate(1.0) >= target) return 1.0;
  double lo = 0.0;
  double hi = 1.0;
  for (int i = 0; i < 30; ++i) {
    const double mid = 0.5 * (lo + hi);
    if (rate(mid) > target) lo = mid;
    else hi = mid;
  }
  return 0.5 * (lo + hi);
}

}  // namespace pac
