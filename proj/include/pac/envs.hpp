// Copyright 2026 The PAC Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef PAC_ENVS_HPP
#define PAC_ENVS_HPP

// Desk-scale environments, the exact regularized-improvement oracle,
// evaluation with Wilson intervals and the self-improvement loop.

#include "pac/autodiff.hpp"
#include "pac/datasets.hpp"
#include "pac/encoders.hpp"
#include "pac/model.hpp"
#include "pac/rng.hpp"
#include "pac/training.hpp"

#include "json.hpp"

#include <Eigen/Dense>

#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace pac {

/// Finite MDP with rewards attached to (s, a, s') transitions. Terminal
/// states are absorbing and pay nothing.
struct TabularMDP {
  int n_states = 0;
  int n_actions = 0;
  std::vector<double> transition;  // [s][a][s']
  std::vector<double> reward;      // [s][a][s']
  std::vector<double> initial;     // start distribution
  std::vector<bool> terminal;
  double gamma = 0.9;
  int horizon = 50;
  double success_threshold = 0.5;  // episode succeeds when its return reaches this
  std::string task_id = "tabular";
  std::string group_id = "tabular";

  TabularMDP() = default;
  TabularMDP(int states, int actions);

  double& p(int s, int a, int s2) { return transition[index(s, a, s2)]; }
  double p(int s, int a, int s2) const { return transition[index(s, a, s2)]; }
  double& r(int s, int a, int s2) { return reward[index(s, a, s2)]; }
  double r(int s, int a, int s2) const { return reward[index(s, a, s2)]; }
  double expected_reward(int s, int a) const;
  /// Throws std::invalid_argument unless rows are distributions.
  void validate() const;

 private:
  std::size_t index(int s, int a, int s2) const {
    return (std::size_t(s) * std::size_t(n_actions) + std::size_t(a)) * std::size_t(n_states) + std::size_t(s2);
  }
};

/// n_states x n_actions row-stochastic matrix.
using TabularPolicy = Eigen::MatrixXd;

/// Q^pi by exact linear solve; terminal rows are zero.
Eigen::MatrixXd evaluate_policy_q(const TabularMDP& mdp, const TabularPolicy& pi);

struct OracleResult {
  TabularPolicy policy;
  Eigen::MatrixXd q;
  int iterations = 0;
  double residual = 0.0;
};

/// Fixed point of pi(a|s) ∝ reference(a|s) exp(Q^pi(s, a) / eta). Throws
/// ConvergenceError when the budget runs out.
OracleResult regularized_oracle(const TabularMDP& mdp, double eta, const TabularPolicy& reference,
                                int max_iterations = 10000, double tolerance = 1e-10);

/// Optimal Q* by value iteration.
Eigen::MatrixXd optimal_q(const TabularMDP& mdp, double tolerance = 1e-12);

// Fixtures.
TabularMDP bandit_mdp();      // 4 arms, deterministic rewards 0.2, 0.5, 0.8, 0.3
TabularMDP chain_mdp();       // 4-state corridor, reward 1 at the right end
TabularMDP gridworld_mdp();   // 4x4 grid, goal in the far corner
/// Two-stage corridor with a tempting shortcut; behavior data from
/// lure_behavior() succeeds about 28% of the time.
TabularMDP lure_chain_mdp();
TabularPolicy lure_behavior(const TabularMDP& mdp);
TabularPolicy uniform_policy(const TabularMDP& mdp);

struct StepResult {
  Observation obs;
  double reward = 0.0;
  bool terminated = false;
};

class Environment {
 public:
  virtual ~Environment() = default;
  virtual std::string name() const = 0;
  virtual std::string task_id() const = 0;
  virtual std::string group_id() const = 0;
  virtual int horizon() const = 0;
  virtual Observation reset(Rng& rng) = 0;
  virtual StepResult step(std::span<const float> action, Rng& rng) = 0;
  virtual bool is_success(double episode_return) const = 0;
  /// Expert average return used for normalised-return reports; 0 if unknown.
  virtual double expert_return() const { return 0.0; }
  virtual std::unique_ptr<Environment> clone() const = 0;
};

/// Observation is the one-hot current state; the action is the index.
class TabularEnv : public Environment {
 public:
  explicit TabularEnv(TabularMDP mdp, std::string name = "tabular");

  std::string name() const override { return name_; }
  std::string task_id() const override { return mdp_.task_id; }
  std::string group_id() const override { return mdp_.group_id; }
  int horizon() const override { return mdp_.horizon; }
  Observation reset(Rng& rng) override;
  StepResult step(std::span<const float> action, Rng& rng) override;
  bool is_success(double episode_return) const override;
  std::unique_ptr<Environment> clone() const override { return std::make_unique<TabularEnv>(*this); }

  const TabularMDP& mdp() const { return mdp_; }
  int state() const { return state_; }
  Observation observe(int state) const;

 private:
  TabularMDP mdp_;
  std::string name_;
  int state_ = 0;
};

struct PointMassConfig {
  double step_size = 0.2;
  double goal_radius = 0.15;
  int horizon = 20;
  int image_size = 16;
  bool render_image = true;
  int text_tokens = 16;
  std::string task_id = "reach the goal";
};

/// 2-D reach task in [-1, 1]^2. Proprio is (x, y, goal_x, goal_y); the
/// image marks agent and goal; the text instruction is the task name.
/// Reaching the goal pays 1 and ends the episode.
class PointMassEnv : public Environment {
 public:
  explicit PointMassEnv(PointMassConfig cfg = {});

  std::string name() const override { return "point_mass"; }
  std::string task_id() const override { return cfg_.task_id; }
  std::string group_id() const override { return "point_mass"; }
  int horizon() const override { return cfg_.horizon; }
  Observation reset(Rng& rng) override;
  StepResult step(std::span<const float> action, Rng& rng) override;
  /// Success means reaching 0.95 of the expert return.
  bool is_success(double episode_return) const override { return episode_return >= 0.95 * expert_return(); }
  double expert_return() const override { return 1.0; }
  std::unique_ptr<Environment> clone() const override { return std::make_unique<PointMassEnv>(*this); }

  ModalitySpec modality_spec(int embed_dim = 16) const;
  ActionCodec action_codec(int bins) const;
  const PointMassConfig& config() const { return cfg_; }
  Observation observe() const;
  std::array<double, 2> position() const { return pos_; }
  std::array<double, 2> goal() const { return goal_; }

 private:
  PointMassConfig cfg_;
  std::array<double, 2> pos_{0.0, 0.0};
  std::array<double, 2> goal_{0.0, 0.0};
};

/// bandit, chain, gridworld, lure_chain or point_mass.
std::unique_ptr<Environment> make_env(const std::string& name);
std::vector<std::string> env_names();

/// Maps an observation to an action vector.
using Policy = std::function<std::vector<float>(const Observation&, Rng&)>;

Policy tabular_policy(const TabularPolicy& pi);
/// Optimal action with probability 1 - epsilon, uniform otherwise.
Policy epsilon_optimal_policy(const Environment& env, double epsilon);
enum class EvalMode { greedy, sample };
Policy model_policy(const ActorCritic& model, const ad::ParamSet& params, EvalMode mode = EvalMode::greedy);

/// Rolls out `n_episodes` episodes; trial i uses stream mix_seed(seed, i).
std::vector<EpisodeRecord> make_behavior_dataset(const Environment& env, const Policy& behavior, int n_episodes,
                                                 std::uint64_t seed);

struct WilsonInterval {
  double lower = 0.0;
  double upper = 1.0;
};
WilsonInterval wilson_interval(double successes, double trials, double alpha_w = 0.05);

struct EvalReport {
  std::string task_id;
  int trials = 0;
  int successes = 0;
  double success_rate = 0.0;
  double lower = 0.0;
  double upper = 0.0;
  double mean_return = 0.0;
  double normalized_return = 0.0;  // mean return over the expert reference, 0 if none

  nlohmann::json to_json() const;
};

/// `n_trials` independent episodes. Episode records are returned through
/// `episodes` when non-null.
EvalReport evaluate(const Policy& policy, const Environment& env, int n_trials, std::uint64_t seed,
                    std::vector<EpisodeRecord>* episodes = nullptr);

struct ImproveConfig {
  int rounds = 3;
  int episodes_per_round = 200;
  std::int64_t finetune_steps = 500;
  int eval_trials = 400;
  std::uint64_t eval_seed = 1234;
  std::uint64_t collect_seed = 5678;
  EvalMode eval_mode = EvalMode::greedy;
};

/// Report 0 evaluates the starting model; report k follows the k-th round
/// of collect, append and finetune.
std::vector<EvalReport> self_improve(const ActorCritic& model, TrainingRun& run, const Environment& env,
                                     EpisodeStore& store, TrainConfig cfg, const ImproveConfig& improve);

/// Bisection on epsilon so that epsilon_optimal_policy reaches `target`
/// success. Rates are Monte Carlo estimates under a fixed seed.
double tune_epsilon(const Environment& env, double target, int episodes = 2000, std::uint64_t seed = 99);

}  // namespace pac

#endif  // PAC_ENVS_HPP
