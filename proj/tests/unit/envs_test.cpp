// Copyright 2026 The PAC Authors
// SPDX-License-Identifier: Apache-2.0

#include "pac/envs.hpp"
#include "pac/errors.hpp"
#include "pac/model.hpp"

#include <gtest/gtest.h>

#include <cmath>

namespace pac {
namespace {

// Plain fixed-point iteration written independently of the library oracle.
TabularPolicy brute_force_oracle(const TabularMDP& m, double eta, const TabularPolicy& ref) {
  TabularPolicy pi = ref;
  Eigen::MatrixXd q = Eigen::MatrixXd::Zero(m.n_states, m.n_actions);
  for (int outer = 0; outer < 5000; ++outer) {
    for (int sweep = 0; sweep < 2000; ++sweep) {
      Eigen::MatrixXd next = Eigen::MatrixXd::Zero(m.n_states, m.n_actions);
      for (int s = 0; s < m.n_states; ++s) {
        if (m.terminal[std::size_t(s)]) continue;
        for (int a = 0; a < m.n_actions; ++a) {
          double x = 0.0;
          for (int s2 = 0; s2 < m.n_states; ++s2) {
            const double v = m.terminal[std::size_t(s2)] ? 0.0 : pi.row(s2).dot(q.row(s2));
            x += m.p(s, a, s2) * (m.r(s, a, s2) + m.gamma * v);
          }
          next(s, a) = x;
        }
      }
      const double d = (next - q).cwiseAbs().maxCoeff();
      q = next;
      if (d < 1e-14) break;
    }
    TabularPolicy updated = pi;
    for (int s = 0; s < m.n_states; ++s) {
      const double mx = (q.row(s).array() / eta).maxCoeff();
      double z = 0.0;
      for (int a = 0; a < m.n_actions; ++a) z += updated(s, a) = ref(s, a) * std::exp(q(s, a) / eta - mx);
      updated.row(s) /= z;
    }
    const double change = (updated - pi).cwiseAbs().maxCoeff();
    // Damped update keeps the iteration stable for small eta.
    pi = 0.5 * pi + 0.5 * updated;
    if (change < 1e-13) break;
  }
  return pi;
}

double kl(const TabularPolicy& p, const TabularPolicy& q, int s) {
  double out = 0.0;
  for (int a = 0; a < p.cols(); ++a) {
    if (p(s, a) > 0.0) out += p(s, a) * std::log(p(s, a) / q(s, a));
  }
  return out;
}

TEST(Oracle, TwoArmTiltExample) {
  const double eta = 0.3;
  TabularMDP m(2, 2);
  m.p(0, 0, 1) = m.p(0, 1, 1) = 1.0;
  m.r(0, 1, 1) = eta * std::log(3.0);
  m.terminal[1] = true;
  m.initial[0] = 1.0;
  const OracleResult r = regularized_oracle(m, eta, uniform_policy(m));
  EXPECT_NEAR(r.policy(0, 0), 0.25, 1e-9);
  EXPECT_NEAR(r.policy(0, 1), 0.75, 1e-9);
  EXPECT_NEAR(r.q(0, 1), eta * std::log(3.0), 1e-12);
}

TEST(Oracle, LargeEtaReturnsReference) {
  for (const TabularMDP& m : {bandit_mdp(), chain_mdp(), gridworld_mdp()}) {
    TabularPolicy ref = uniform_policy(m);
    ref.col(0) *= 2.0;
    for (int s = 0; s < m.n_states; ++s) ref.row(s) /= ref.row(s).sum();
    const OracleResult r = regularized_oracle(m, 1e8, ref);
    EXPECT_LT((r.policy - ref).cwiseAbs().maxCoeff(), 1e-6) << m.task_id;
  }
}

TEST(Oracle, MatchesBruteForceIteration) {
  for (const TabularMDP& m : {bandit_mdp(), chain_mdp(), gridworld_mdp(), lure_chain_mdp()}) {
    for (double eta : {0.1, 0.5}) {
      const TabularPolicy ref = uniform_policy(m);
      const OracleResult r = regularized_oracle(m, eta, ref);
      EXPECT_LT(r.residual, 1e-8);
      const TabularPolicy expect = brute_force_oracle(m, eta, ref);
      EXPECT_LT((r.policy - expect).cwiseAbs().maxCoeff(), 1e-7) << m.task_id << " eta " << eta;
      // The returned Q is the exact value of the returned policy.
      EXPECT_LT((r.q - evaluate_policy_q(m, r.policy)).cwiseAbs().maxCoeff(), 1e-8);
    }
  }
}

TEST(Oracle, ChainFixedPointAgainstValueIteration) {
  const TabularMDP m = chain_mdp();
  const Eigen::MatrixXd qstar = optimal_q(m);
  // Right moves are optimal; Q*(2, right) = 1, Q*(1, right) = 0.9, Q*(0, right) = 0.81.
  EXPECT_NEAR(qstar(2, 1), 1.0, 1e-12);
  EXPECT_NEAR(qstar(1, 1), 0.9, 1e-12);
  EXPECT_NEAR(qstar(0, 1), 0.81, 1e-12);
  EXPECT_NEAR(qstar(0, 0), 0.729, 1e-12);
  // A small eta drives the oracle policy toward the greedy optimum.
  const OracleResult r = regularized_oracle(m, 0.005, uniform_policy(m));
  for (int s = 0; s < 3; ++s) EXPECT_GT(r.policy(s, 1), 0.99);
  EXPECT_LT((r.q.topRows(3) - qstar.topRows(3)).cwiseAbs().maxCoeff(), 1e-3);
}

TEST(Oracle, KlToReferenceShrinksWithEta) {
  const TabularMDP m = bandit_mdp();
  const TabularPolicy ref = uniform_policy(m);
  double prev = std::numeric_limits<double>::infinity();
  for (double eta : {0.05, 0.1, 0.2, 0.5, 1.0, 5.0}) {
    const double d = kl(regularized_oracle(m, eta, ref).policy, ref, 0);
    EXPECT_LT(d, prev);
    prev = d;
  }
}

TEST(Oracle, Errors) {
  const TabularMDP m = chain_mdp();
  EXPECT_THROW(regularized_oracle(m, 0.0, uniform_policy(m)), std::invalid_argument);
  EXPECT_THROW(regularized_oracle(m, 0.1, Eigen::MatrixXd::Ones(2, 2)), std::invalid_argument);
  EXPECT_THROW(regularized_oracle(gridworld_mdp(), 0.01, uniform_policy(gridworld_mdp()), 1), ConvergenceError);
  TabularMDP bad = m;
  bad.p(0, 0, 0) = 0.5;
  EXPECT_THROW(bad.validate(), std::invalid_argument);
}

TEST(Wilson, KnownValues) {
  const WilsonInterval half = wilson_interval(50, 100);
  EXPECT_NEAR(half.lower, 0.40383, 1e-4);
  EXPECT_NEAR(half.upper, 0.59617, 1e-4);
  const WilsonInterval zero = wilson_interval(0, 10);
  EXPECT_EQ(zero.lower, 0.0);
  EXPECT_NEAR(zero.upper, 0.27753, 1e-4);
  const WilsonInterval all = wilson_interval(10, 10);
  EXPECT_NEAR(all.lower, 0.72247, 1e-4);
  EXPECT_EQ(all.upper, 1.0);
  EXPECT_THROW(wilson_interval(3, 2), std::invalid_argument);
  EXPECT_THROW(wilson_interval(0, 0), std::invalid_argument);
  EXPECT_THROW(wilson_interval(1, 2, 1.5), std::invalid_argument);
}

TEST(Wilson, ContainsEstimateAndNarrowsWithTrials) {
  double prev_width = 1.0;
  for (int n : {10, 40, 160, 640}) {
    const WilsonInterval w = wilson_interval(0.3 * n, n);
    EXPECT_LE(w.lower, 0.3);
    EXPECT_GE(w.upper, 0.3);
    EXPECT_LT(w.upper - w.lower, prev_width);
    prev_width = w.upper - w.lower;
  }
}

TEST(Evaluate, DeterministicUnderSeed) {
  const TabularEnv env(lure_chain_mdp(), "lure_chain");
  const Policy pi = tabular_policy(lure_behavior(env.mdp()));
  std::vector<EpisodeRecord> e1;
  std::vector<EpisodeRecord> e2;
  const EvalReport a = evaluate(pi, env, 200, 17, &e1);
  const EvalReport b = evaluate(pi, env, 200, 17, &e2);
  EXPECT_EQ(a.successes, b.successes);
  EXPECT_EQ(e1, e2);
  EXPECT_EQ(a.trials, 200);
  EXPECT_LE(a.lower, a.success_rate);
  EXPECT_GE(a.upper, a.success_rate);
  EXPECT_THROW(evaluate(pi, env, 0, 1), std::invalid_argument);
}

TEST(Evaluate, BehaviorSuccessMatchesAnalyticRate) {
  const TabularEnv env(lure_chain_mdp(), "lure_chain");
  const EvalReport r = evaluate(tabular_policy(lure_behavior(env.mdp())), env, 2000, 3);
  EXPECT_NEAR(r.success_rate, 0.28, 0.04);
}

TEST(BehaviorDataset, EmptyAndDeterministic) {
  const TabularEnv env(chain_mdp(), "chain");
  const Policy right = tabular_policy((Eigen::MatrixXd(4, 2) << 0, 1, 0, 1, 0, 1, 0.5, 0.5).finished());
  EXPECT_TRUE(make_behavior_dataset(env, right, 0, 1).empty());
  const auto a = make_behavior_dataset(env, right, 30, 4);
  const auto b = make_behavior_dataset(env, right, 30, 4);
  EXPECT_EQ(a, b);
  for (const auto& e : a) {
    EXPECT_TRUE(e.terminated);
    EXPECT_TRUE(e.success);
    for (const auto& s : e.steps) EXPECT_EQ(s.action, std::vector<float>{1.0f});
  }
}

TEST(SelfImprove, ZeroRoundsReportsInitialEvaluationOnly) {
  const TabularEnv env(lure_chain_mdp(), "lure_chain");
  const TabularActorCritic model(4, 4, 11);
  TrainingRun run = make_training_run(model, 1);
  EpisodeStore store(make_behavior_dataset(env, tabular_policy(lure_behavior(env.mdp())), 20, 2));
  const std::size_t before = store.size();
  TrainConfig cfg;
  ImproveConfig ic;
  ic.rounds = 0;
  ic.eval_trials = 50;
  const auto reports = self_improve(model, run, env, store, cfg, ic);
  ASSERT_EQ(reports.size(), 1u);
  const EvalReport direct = evaluate(model_policy(model, run.model.params, ic.eval_mode), env, 50, ic.eval_seed);
  EXPECT_EQ(reports[0].successes, direct.successes);
  EXPECT_EQ(store.size(), before);
}

TEST(TuneEpsilon, HitsTargetWithinWilsonBounds) {
  const auto env = make_env("lure_chain");
  const double eps = tune_epsilon(*env, 0.28);
  EXPECT_GT(eps, 0.0);
  EXPECT_LT(eps, 1.0);
  const EvalReport r = evaluate(epsilon_optimal_policy(*env, eps), *env, 2000, 4242);
  EXPECT_LE(r.lower - 0.02, 0.28);
  EXPECT_GE(r.upper + 0.02, 0.28);
}

TEST(PointMass, ResetStepAndExpert) {
  PointMassEnv env;
  Rng rng(5);
  const Observation o = env.reset(rng);
  ASSERT_EQ(o.proprio.size(), 4u);
  EXPECT_EQ(o.images.size(), 1u);
  EXPECT_EQ(env.modality_spec().n_proprio, 4);
  const std::vector<float> bad{std::numeric_limits<float>::quiet_NaN(), 0.0f};
  EXPECT_THROW(env.step(bad, rng), std::domain_error);
  EXPECT_THROW(env.step(std::vector<float>{0.0f}, rng), std::invalid_argument);
  EXPECT_TRUE(env.is_success(0.95));
  EXPECT_FALSE(env.is_success(0.9));

  const EvalReport expert = evaluate(epsilon_optimal_policy(env, 0.0), env, 50, 6);
  EXPECT_EQ(expert.successes, 50);
  for (const auto& name : env_names()) EXPECT_EQ(make_env(name)->name(), name);
  EXPECT_THROW(make_env("nope"), ConfigError);
}

}  // namespace
}  // namespace pac
