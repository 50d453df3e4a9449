// Copyright 2026 The PAC Authors
// SPDX-License-Identifier: Apache-2.0

#include "pac/objectives.hpp"

#include "pac/logging.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace pac {

namespace {

int count_valid(std::span<const Transition> batch) {
  int n = 0;
  for (const auto& t : batch) n += t.valid ? 1 : 0;
  if (n == 0) throw std::invalid_argument("loss: batch has no valid transitions");
  return n;
}

Eigen::RowVectorXd row_of(const ad::Matrix& m) { return Eigen::Map<const Eigen::RowVectorXd>(m.data(), m.size()); }

// Sum of the per-dimension log-probabilities of `bins`.
double joint_log_prob(const ad::Matrix& log_probs, std::span<const int> bins) {
  double s = 0.0;
  for (std::size_t d = 0; d < bins.size(); ++d) s += log_probs(ad::Index(d), bins[d]);
  return s;
}

// Distributional TD target from the time-lagged parameters.
Eigen::RowVectorXd q_target_distribution(const ActorCritic& model, const ModelState& state, const Transition& t,
                                         const LossWeights& w, const ValueBins& bins, Rng& rng) {
  if (t.terminal) return terminal_target(t.reward, bins);
  ad::Tape tape;
  Latent next = model.encode(state.target, t.next_obs, tape);
  const ad::Matrix logits = model.policy_logits(state.target, next, tape).value();
  std::vector<Eigen::RowVectorXd> dists;
  dists.reserve(std::size_t(w.n_next_samples));
  for (int k = 0; k < w.n_next_samples; ++k) {
    const std::vector<int> a = sample_bins(logits, rng);
    dists.push_back(softmax_row(row_of(model.q_logits(state.target, next, a, tape).value())));
  }
  return td_target_q(t.reward, w.gamma, dists, bins);
}

}  // namespace

void LossWeights::validate() const {
  auto check_alpha_beta = [](double a, double b) {
    if (!(a >= 0.0 && a <= 1.0)) throw std::invalid_argument("LossWeights: alpha must be in [0, 1]");
    if (!(b >= 0.0) || !std::isfinite(b)) throw std::invalid_argument("LossWeights: beta must be >= 0");
  };
  check_alpha_beta(alpha, beta);
  for (const auto& [g, ab] : group_overrides) check_alpha_beta(ab.first, ab.second);
  if (!(eta > 0.0) || !std::isfinite(eta)) throw std::invalid_argument("LossWeights: eta must be > 0");
  if (n_samples < 1 || n_next_samples < 1) throw std::invalid_argument("LossWeights: sample counts must be >= 1");
  if (target_period < 1) throw std::invalid_argument("LossWeights: target_period must be >= 1");
  if (!(gamma >= 0.0 && gamma < 1.0)) throw std::invalid_argument("LossWeights: gamma must be in [0, 1)");
  if (!(max_advantage_weight > 0.0) || !(max_importance_ratio > 0.0)) {
    throw std::invalid_argument("LossWeights: clip values must be positive");
  }
}

std::pair<double, double> LossWeights::alpha_beta(const std::string& group) const {
  const auto it = group_overrides.find(group);
  if (it != group_overrides.end()) return it->second;
  return {alpha, beta};
}

ModelState make_model_state(ad::ParamSet params) {
  ModelState s;
  s.target = params;
  s.params = std::move(params);
  return s;
}

Eigen::RowVectorXd td_target_q(double reward, double gamma, std::span<const Eigen::RowVectorXd> next_value_dists,
                               const ValueBins& bins) {
  if (next_value_dists.empty()) throw std::invalid_argument("td_target_q: no next-action samples");
  Eigen::RowVectorXd out = Eigen::RowVectorXd::Zero(bins.count);
  std::vector<int> dest(std::size_t(bins.count));
  for (int j = 0; j < bins.count; ++j) dest[std::size_t(j)] = bins.nearest(reward + gamma * bins.center(j));
  const double inv_k = 1.0 / double(next_value_dists.size());
  for (const auto& p : next_value_dists) {
    if (p.size() != bins.count) throw std::invalid_argument("td_target_q: distribution size mismatch");
    for (int j = 0; j < bins.count; ++j) out(dest[std::size_t(j)]) += p(j) * inv_k;
  }
  return out;
}

Eigen::RowVectorXd td_target_v(double reward, double gamma, const Eigen::RowVectorXd& next_value_dist,
                               const ValueBins& bins) {
  return td_target_q(reward, gamma, std::span<const Eigen::RowVectorXd>(&next_value_dist, 1), bins);
}

Eigen::RowVectorXd terminal_target(double reward, const ValueBins& bins) {
  Eigen::RowVectorXd out = Eigen::RowVectorXd::Zero(bins.count);
  out(bins.nearest(reward)) = 1.0;
  return out;
}

std::vector<double> improvement_weights(std::span<const double> q_values, double eta) {
  if (q_values.empty()) throw std::invalid_argument("improvement_weights: empty input");
  if (!(eta > 0.0)) throw std::invalid_argument("improvement_weights: eta must be positive");
  double m = q_values[0];
  for (double q : q_values) m = std::max(m, q);
  std::vector<double> w(q_values.size());
  double total = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    w[i] = std::exp((q_values[i] - m) / eta);
    total += w[i];
  }
  const double n = double(w.size());
  for (double& x : w) x = n * x / total;
  return w;
}

LossBreakdown loss_q(const ActorCritic& model, const ModelState& state, std::span<const Transition> batch,
                     const LossWeights& weights, const ValueBins& bins, Rng& rng, ad::ParamSet* grads) {
  const int count = count_valid(batch);
  const bool frozen = weights.reference == ReferencePolicy::frozen;
  if (frozen && !state.reference) throw std::invalid_argument("loss_q: frozen reference requested but not set");
  const ad::ParamSet& reference = frozen ? *state.reference : state.target;

  LossBreakdown out;
  out.count = count;
  const double inv = 1.0 / double(count);
  for (const Transition& t : batch) {
    if (!t.valid) continue;
    const auto [alpha, beta] = weights.alpha_beta(t.group_id);
    const double rl_coef = 1.0 - alpha;
    const std::vector<int> a_t = model.codec().encode(t.action);

    // Target side: no gradients are ever taken on this tape.
    std::vector<std::vector<int>> sampled;
    std::vector<double> w;
    if (rl_coef != 0.0) {
      ad::Tape tape;
      Latent lt = model.encode(state.target, t.obs, tape);
      Latent lr = frozen ? model.encode(reference, t.obs, tape) : lt;
      const ad::Matrix ref_logits = model.policy_logits(reference, lr, tape).value();
      std::vector<double> q(std::size_t(weights.n_samples));
      for (int i = 0; i < weights.n_samples; ++i) {
        sampled.push_back(sample_bins(ref_logits, rng));
        q[std::size_t(i)] = q_value(model.q_logits(state.target, lt, sampled.back(), tape).value(), bins);
      }
      w = improvement_weights(q, weights.eta);
    }
    const Eigen::RowVectorXd gamma_target = beta != 0.0
                                                ? q_target_distribution(model, state, t, weights, bins, rng)
                                                : Eigen::RowVectorXd::Zero(bins.count);

    // Online side.
    ad::Tape tape;
    Latent l = model.encode(state.params, t.obs, tape);
    ad::Var logp = ad::log_softmax_rows(model.policy_logits(state.params, l, tape));
    ad::Matrix rl_w = ad::Matrix::Zero(logp.rows(), logp.cols());
    for (std::size_t i = 0; i < sampled.size(); ++i) {
      for (std::size_t d = 0; d < sampled[i].size(); ++d) rl_w(ad::Index(d), sampled[i][d]) += w[i] / double(w.size());
    }
    ad::Matrix bc_w = ad::Matrix::Zero(logp.rows(), logp.cols());
    for (std::size_t d = 0; d < a_t.size(); ++d) bc_w(ad::Index(d), a_t[d]) = 1.0;
    ad::Var logq = ad::log_softmax_rows(model.q_logits(state.params, l, a_t, tape));

    const double rl = (rl_w.array() * logp.value().array()).sum();
    const double bc = joint_log_prob(logp.value(), a_t);
    const double td = (gamma_target.array() * row_of(logq.value()).array()).sum();
    const double rl_term = rl_coef == 0.0 ? 0.0 : -rl_coef * rl;
    const double bc_term = -alpha * bc;
    const double td_term = -beta * td;
    out.rl_term += rl_term * inv;
    out.bc_term += bc_term * inv;
    out.td_term += td_term * inv;

    if (grads != nullptr) {
      ad::Var policy_part = ad::weighted_sum(logp, rl_coef * rl_w + alpha * bc_w);
      ad::Var td_part = ad::weighted_sum(logq, beta * ad::Matrix(gamma_target));
      tape.backward(ad::scale(ad::add(policy_part, td_part), -1.0), *grads, inv);
    }
  }
  out.loss = out.rl_term + out.bc_term + out.td_term;
  return out;
}

LossBreakdown loss_v(const ActorCritic& model, const ModelState& state, std::span<const Transition> batch,
                     const LossWeights& weights, const ValueBins& bins, ad::ParamSet* grads,
                     std::span<const double> fixed_ratios) {
  const int count = count_valid(batch);
  if (!fixed_ratios.empty() && fixed_ratios.size() != std::size_t(count)) {
    throw std::invalid_argument("loss_v: need one fixed ratio per valid transition");
  }
  const bool learned = weights.behavior_mode == BehaviorMode::learned;
  LossBreakdown out;
  out.count = count;
  const double inv = 1.0 / double(count);
  for (const Transition& t : batch) {
    if (!t.valid) continue;
    const double beta = weights.alpha_beta(t.group_id).second;
    const std::vector<int> a_t = model.codec().encode(t.action);

    // Advantage and TD target from the time-lagged copy, without gradients.
    double advantage_weight = 0.0;
    Eigen::RowVectorXd gamma_target;
    {
      ad::Tape tape;
      Latent lt = model.encode(state.target, t.obs, tape);
      const double v = q_value(model.v_logits(state.target, lt, tape).value(), bins);
      double v_next = 0.0;
      if (t.terminal) {
        gamma_target = terminal_target(t.reward, bins);
      } else {
        Latent ln = model.encode(state.target, t.next_obs, tape);
        const ad::Matrix next_logits = model.v_logits(state.target, ln, tape).value();
        v_next = q_value(next_logits, bins);
        gamma_target = td_target_v(t.reward, weights.gamma, softmax_row(row_of(next_logits)), bins);
      }
      const double a = t.reward + weights.gamma * v_next - v;
      advantage_weight = std::exp(std::min(a / weights.eta, std::log(weights.max_advantage_weight)));
    }

    ad::Tape tape;
    Latent l = model.encode(state.params, t.obs, tape);
    ad::Var logp = ad::log_softmax_rows(model.policy_logits(state.params, l, tape));
    ad::Var logv = ad::log_softmax_rows(model.v_logits(state.params, l, tape));
    const double log_pi = joint_log_prob(logp.value(), a_t);
    double rho = std::exp(log_pi);
    std::optional<ad::Var> logb;
    double log_b = 0.0;
    if (learned) {
      logb = ad::log_softmax_rows(model.behavior_logits(state.params, l, tape));
      log_b = joint_log_prob(logb->value(), a_t);
      const double b = std::exp(log_b);
      if (!(b > 1e-12)) {
        log_warning("loss_v: behavior likelihood underflow; importance ratio clamped");
        rho = weights.max_importance_ratio;
      } else {
        rho = std::min(std::exp(log_pi - log_b), weights.max_importance_ratio);
      }
    }
    if (!fixed_ratios.empty()) rho = fixed_ratios[out.importance_ratios.size()];
    out.importance_ratios.push_back(rho);
    const double td = (gamma_target.array() * row_of(logv.value()).array()).sum();
    const double rl_term = -advantage_weight * log_pi;
    const double bc_term = learned ? -log_b : 0.0;
    const double td_term = -beta * rho * td;
    out.rl_term += rl_term * inv;
    out.bc_term += bc_term * inv;
    out.td_term += td_term * inv;

    if (grads != nullptr) {
      ad::Matrix pi_w = ad::Matrix::Zero(logp.rows(), logp.cols());
      for (std::size_t d = 0; d < a_t.size(); ++d) pi_w(ad::Index(d), a_t[d]) = 1.0;
      ad::Var total = ad::add(ad::weighted_sum(logp, advantage_weight * pi_w),
                              ad::weighted_sum(logv, beta * rho * ad::Matrix(gamma_target)));
      if (learned) total = ad::add(total, ad::weighted_sum(*logb, pi_w));
      tape.backward(ad::scale(total, -1.0), *grads, inv);
    }
  }
  out.loss = out.rl_term + out.bc_term + out.td_term;
  return out;
}

bool maybe_update_target(ModelState& state, int period) {
  if (period < 1) throw std::invalid_argument("maybe_update_target: period must be >= 1");
  if (state.step % period != 0) return false;
  state.target = state.params;
  return true;
}

}  // namespace pac
