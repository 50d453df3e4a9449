// Copyright 2026 The PAC Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef PAC_MODEL_HPP
#define PAC_MODEL_HPP

// Actor-critic models consumed by the objectives. A model owns no
// parameters; every call reads a ParamSet so the same model serves the online
// parameters, the time-lagged target copy and any frozen reference.

#include "pac/autodiff.hpp"
#include "pac/encoders.hpp"
#include "pac/perceiver.hpp"
#include "pac/rng.hpp"

#include "json.hpp"

#include <memory>
#include <span>
#include <string>
#include <vector>

namespace pac {

/// Result of encoding one observation; reused by every decoder call.
struct Latent {
  ad::Var z;
  int state = -1;  // tabular models only
};

class ActorCritic {
 public:
  virtual ~ActorCritic() = default;

  virtual std::string kind() const = 0;
  virtual ad::ParamSet init_params(Rng& rng) const = 0;
  virtual Latent encode(const ad::ParamSet& params, const Observation& obs, ad::Tape& tape) const = 0;
  /// N^A x N_B unnormalised logits.
  virtual ad::Var policy_logits(const ad::ParamSet& params, const Latent& latent, ad::Tape& tape) const = 0;
  /// 1 x N_Q logits of the critic at binned action `action`.
  virtual ad::Var q_logits(const ad::ParamSet& params, const Latent& latent, std::span<const int> action,
                           ad::Tape& tape) const = 0;
  /// 1 x N_Q logits of the state-value critic.
  virtual ad::Var v_logits(const ad::ParamSet& params, const Latent& latent, ad::Tape& tape) const = 0;
  /// N^A x N_B logits of the learned behavior estimate.
  virtual ad::Var behavior_logits(const ad::ParamSet& params, const Latent& latent, ad::Tape& tape) const = 0;
  virtual nlohmann::json config_json() const = 0;

  const ActionCodec& codec() const { return codec_; }
  int action_dims() const { return codec_.dims(); }
  int action_bins() const { return codec_.bins(); }
  virtual int value_bins() const = 0;

 protected:
  ActionCodec codec_;
};

/// Lookup-table actor-critic over a finite state space. The state is read as
/// the argmax of a one-hot proprio vector. All tables start at zero, so the
/// initial policy is uniform.
class TabularActorCritic : public ActorCritic {
 public:
  TabularActorCritic(int n_states, int n_actions, int n_value_bins);

  std::string kind() const override { return "tabular"; }
  ad::ParamSet init_params(Rng& rng) const override;
  Latent encode(const ad::ParamSet& params, const Observation& obs, ad::Tape& tape) const override;
  ad::Var policy_logits(const ad::ParamSet& params, const Latent& latent, ad::Tape& tape) const override;
  ad::Var q_logits(const ad::ParamSet& params, const Latent& latent, std::span<const int> action,
                   ad::Tape& tape) const override;
  ad::Var v_logits(const ad::ParamSet& params, const Latent& latent, ad::Tape& tape) const override;
  ad::Var behavior_logits(const ad::ParamSet& params, const Latent& latent, ad::Tape& tape) const override;
  nlohmann::json config_json() const override;
  int value_bins() const override { return n_value_bins_; }

  int n_states() const { return n_states_; }
  int n_actions() const { return n_actions_; }

 private:
  int n_states_;
  int n_actions_;
  int n_value_bins_;
};

class PerceiverActorCritic : public ActorCritic {
 public:
  PerceiverActorCritic(ArchConfig arch, ModalitySpec spec, ActionCodec codec);

  std::string kind() const override { return "perceiver"; }
  ad::ParamSet init_params(Rng& rng) const override;
  Latent encode(const ad::ParamSet& params, const Observation& obs, ad::Tape& tape) const override;
  ad::Var policy_logits(const ad::ParamSet& params, const Latent& latent, ad::Tape& tape) const override;
  ad::Var q_logits(const ad::ParamSet& params, const Latent& latent, std::span<const int> action,
                   ad::Tape& tape) const override;
  ad::Var v_logits(const ad::ParamSet& params, const Latent& latent, ad::Tape& tape) const override;
  ad::Var behavior_logits(const ad::ParamSet& params, const Latent& latent, ad::Tape& tape) const override;
  nlohmann::json config_json() const override;
  int value_bins() const override { return arch_.n_value_bins; }

  const ArchConfig& arch() const { return arch_; }
  const ModalitySpec& spec() const { return spec_; }

 private:
  ArchConfig arch_;
  ModalitySpec spec_;
};

/// Rebuilds a model from config_json() output.
std::unique_ptr<ActorCritic> make_model(const nlohmann::json& config);

/// Greedy action per dimension; ties resolve to the lowest bin.
std::vector<int> greedy_bins(const ad::Matrix& logits);
/// One categorical draw per action dimension from softmax(logits).
std::vector<int> sample_bins(const ad::Matrix& logits, Rng& rng);
/// Row-wise softmax probabilities.
ad::Matrix softmax_rows(const ad::Matrix& logits);

}  // namespace pac

#endif  // PAC_MODEL_HPP
