// Copyright 2026 The PAC Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef PAC_OBJECTIVES_HPP
#define PAC_OBJECTIVES_HPP

// Training losses of the actor-critic: the Q-variant loss (weighted policy
// improvement, behavior cloning and distributional TD), the V-variant loss
// with importance correction, and target-network bookkeeping.

#include "pac/autodiff.hpp"
#include "pac/encoders.hpp"
#include "pac/model.hpp"
#include "pac/rng.hpp"
#include "pac/value_bins.hpp"

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace pac {

/// One (s, a, r, s') sample. `terminal` marks an absorbing successor, which
/// receives no bootstrap. Invalid transitions are padding and are skipped.
struct Transition {
  Observation obs;
  std::vector<float> action;
  double reward = 0.0;
  Observation next_obs;
  bool terminal = false;
  bool valid = true;
  std::string group_id;
};

/// Source of the reference policy inside the Q-variant improvement term.
enum class ReferencePolicy {
  target,  // time-lagged copy of the online parameters
  frozen,  // fixed snapshot held in ModelState::reference
};

/// Behavior likelihood used by the V-variant importance ratio.
enum class BehaviorMode { constant, learned };

struct LossWeights {
  double alpha = 0.75;
  double beta = 38.0;
  double eta = 0.1;
  int n_samples = 10;       // N, actions drawn from the reference policy
  int n_next_samples = 10;  // K, next actions for the TD target
  int target_period = 100;
  double gamma = 0.99;
  /// Per-group (alpha, beta) overriding the defaults above.
  std::map<std::string, std::pair<double, double>> group_overrides;
  ReferencePolicy reference = ReferencePolicy::target;
  BehaviorMode behavior_mode = BehaviorMode::constant;
  double max_advantage_weight = 20.0;  // V-variant clip on exp(A / eta)
  double max_importance_ratio = 100.0;

  void validate() const;
  std::pair<double, double> alpha_beta(const std::string& group) const;
};

struct ModelState {
  ad::ParamSet params;
  ad::ParamSet target;
  std::optional<ad::ParamSet> reference;
  std::int64_t step = 0;
};

/// Fresh state with the target equal to the online parameters.
ModelState make_model_state(ad::ParamSet params);

/// Per-batch mean of the loss and its weighted components;
/// loss = rl_term + bc_term + td_term.
struct LossBreakdown {
  double loss = 0.0;
  double rl_term = 0.0;
  double bc_term = 0.0;
  double td_term = 0.0;
  int count = 0;
  /// V-variant importance ratios of the valid transitions, in batch order.
  std::vector<double> importance_ratios;
};

/// Distributional TD target averaged over the K next-action distributions.
Eigen::RowVectorXd td_target_q(double reward, double gamma, std::span<const Eigen::RowVectorXd> next_value_dists,
                               const ValueBins& bins);
Eigen::RowVectorXd td_target_v(double reward, double gamma, const Eigen::RowVectorXd& next_value_dist,
                               const ValueBins& bins);
/// One-hot categorical at the bin nearest `reward` (terminal successor).
Eigen::RowVectorXd terminal_target(double reward, const ValueBins& bins);

/// w_i = exp(q_i / eta) / mean_j exp(q_j / eta).
std::vector<double> improvement_weights(std::span<const double> q_values, double eta);

/// Q-variant loss. Gradients with respect to state.params are accumulated
/// into `grads` when non-null, already divided by the valid count.
LossBreakdown loss_q(const ActorCritic& model, const ModelState& state, std::span<const Transition> batch,
                     const LossWeights& weights, const ValueBins& bins, Rng& rng, ad::ParamSet* grads = nullptr);

/// V-variant loss.
/// The importance ratio is a stop-gradient. `fixed_ratios`, when non-empty,
/// replaces the computed ratios (one per valid transition).
LossBreakdown loss_v(const ActorCritic& model, const ModelState& state, std::span<const Transition> batch,
                     const LossWeights& weights, const ValueBins& bins, ad::ParamSet* grads = nullptr,
                     std::span<const double> fixed_ratios = {});

/// Copies params into target when state.step is a multiple of `period`.
/// Returns true when the copy happened.
bool maybe_update_target(ModelState& state, int period);

}  // namespace pac

#endif  // PAC_OBJECTIVES_HPP
