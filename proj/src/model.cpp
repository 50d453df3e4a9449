// Copyright 2026 The PAC Authors
// SPDX-License-Identifier: Apache-2.0

#include "pac/model.hpp"

#include "pac/errors.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <stdexcept>

namespace pac {

namespace {

int tabular_state(const Observation& obs, int n_states) {
  if (static_cast<int>(obs.proprio.size()) != n_states) {
    throw std::invalid_argument("TabularActorCritic: observation is not a one-hot state vector");
  }
  const auto it = std::max_element(obs.proprio.begin(), obs.proprio.end());
  return static_cast<int>(it - obs.proprio.begin());
}

ad::Var table_row(const ad::ParamSet& params, const char* name, ad::Index row, ad::Tape& tape) {
  const std::array<ad::Index, 1> rows{row};
  return ad::gather_rows(tape.param(params, name), rows);
}

nlohmann::json spec_json(const ModalitySpec& s) {
  return {{"n_proprio", s.n_proprio},       {"n_images", s.n_images},
          {"n_goal_images", s.n_goal_images}, {"n_text_tokens", s.n_text_tokens},
          {"n_action_dims", s.n_action_dims}, {"image_height", s.image_height},
          {"image_width", s.image_width},     {"image_channels", s.image_channels},
          {"vocab_size", s.vocab_size},       {"gains", s.gains},
          {"embed_dim", s.embed_dim},         {"conv_channels", s.conv.channels},
          {"conv_kernel", s.conv.kernel},     {"conv_stride", s.conv.stride}};
}

ModalitySpec spec_from_json(const nlohmann::json& j) {
  ModalitySpec s;
  s.n_proprio = j.at("n_proprio");
  s.n_images = j.at("n_images");
  s.n_goal_images = j.at("n_goal_images");
  s.n_text_tokens = j.at("n_text_tokens");
  s.n_action_dims = j.at("n_action_dims");
  s.image_height = j.at("image_height");
  s.image_width = j.at("image_width");
  s.image_channels = j.at("image_channels");
  s.vocab_size = j.at("vocab_size");
  s.gains = j.at("gains").get<std::vector<double>>();
  s.embed_dim = j.at("embed_dim");
  s.conv.channels = j.at("conv_channels").get<std::vector<int>>();
  s.conv.kernel = j.at("conv_kernel");
  s.conv.stride = j.at("conv_stride");
  return s;
}

}  // namespace

TabularActorCritic::TabularActorCritic(int n_states, int n_actions, int n_value_bins)
    : n_states_(n_states), n_actions_(n_actions), n_value_bins_(n_value_bins) {
  if (n_states <= 0 || n_actions <= 0 || n_value_bins < 2) {
    throw std::invalid_argument("TabularActorCritic: invalid sizes");
  }
  // Integer actions sit at the bin midpoints.
  codec_ = ActionCodec(n_actions, {-0.5}, {double(n_actions) - 0.5});
}

ad::ParamSet TabularActorCritic::init_params(Rng&) const {
  ad::ParamSet p;
  p.add("tab.pi", ad::Matrix::Zero(n_states_, n_actions_));
  p.add("tab.q", ad::Matrix::Zero(ad::Index(n_states_) * n_actions_, n_value_bins_));
  p.add("tab.v", ad::Matrix::Zero(n_states_, n_value_bins_));
  p.add("tab.b", ad::Matrix::Zero(n_states_, n_actions_));
  return p;
}

Latent TabularActorCritic::encode(const ad::ParamSet&, const Observation& obs, ad::Tape& tape) const {
  Latent l;
  l.state = tabular_state(obs, n_states_);
  l.z = tape.constant(ad::Matrix::Constant(1, 1, double(l.state)));
  return l;
}

ad::Var TabularActorCritic::policy_logits(const ad::ParamSet& params, const Latent& latent, ad::Tape& tape) const {
  return table_row(params, "tab.pi", latent.state, tape);
}

ad::Var TabularActorCritic::q_logits(const ad::ParamSet& params, const Latent& latent, std::span<const int> action,
                                     ad::Tape& tape) const {
  if (action.size() != 1 || action[0] < 0 || action[0] >= n_actions_) {
    throw std::invalid_argument("TabularActorCritic: invalid action");
  }
  return table_row(params, "tab.q", ad::Index(latent.state) * n_actions_ + action[0], tape);
}

ad::Var TabularActorCritic::v_logits(const ad::ParamSet& params, const Latent& latent, ad::Tape& tape) const {
  return table_row(params, "tab.v", latent.state, tape);
}

ad::Var TabularActorCritic::behavior_logits(const ad::ParamSet& params, const Latent& latent, ad::Tape& tape) const {
  return table_row(params, "tab.b", latent.state, tape);
}

nlohmann::json TabularActorCritic::config_json() const {
  return {{"model", "tabular"}, {"n_states", n_states_}, {"n_actions", n_actions_}, {"n_value_bins", n_value_bins_}};
}

PerceiverActorCritic::PerceiverActorCritic(ArchConfig arch, ModalitySpec spec, ActionCodec codec)
    : arch_(std::move(arch)), spec_(std::move(spec)) {
  arch_.validate();
  spec_.validate();
  if (codec.dims() != spec_.n_action_dims || codec.bins() != arch_.n_action_bins) {
    throw std::invalid_argument("PerceiverActorCritic: codec does not match the configuration");
  }
  codec_ = std::move(codec);
}

ad::ParamSet PerceiverActorCritic::init_params(Rng& rng) const { return init_perceiver_params(arch_, spec_, rng); }

Latent PerceiverActorCritic::encode(const ad::ParamSet& params, const Observation& obs, ad::Tape& tape) const {
  TokenSequence tokens = assemble_input(spec_, params, obs, tape);
  return Latent{encode_latents(arch_, params, tokens, tape), -1};
}

ad::Var PerceiverActorCritic::policy_logits(const ad::ParamSet& params, const Latent& latent, ad::Tape& tape) const {
  return decode_policy(arch_, params, latent.z, tape);
}

ad::Var PerceiverActorCritic::q_logits(const ad::ParamSet& params, const Latent& latent, std::span<const int> action,
                                       ad::Tape& tape) const {
  const std::vector<double> a = codec_.decode(action);
  return decode_q(arch_, spec_, params, latent.z, a, tape);
}

ad::Var PerceiverActorCritic::v_logits(const ad::ParamSet& params, const Latent& latent, ad::Tape& tape) const {
  return decode_v(arch_, params, latent.z, tape);
}

ad::Var PerceiverActorCritic::behavior_logits(const ad::ParamSet& params, const Latent& latent,
                                              ad::Tape& tape) const {
  return decode_behavior(arch_, params, latent.z, tape);
}

nlohmann::json PerceiverActorCritic::config_json() const {
  return {{"model", "perceiver"},
          {"arch",
           {{"n_latents", arch_.n_latents},
            {"latent_dim", arch_.latent_dim},
            {"n_blocks", arch_.n_blocks},
            {"widening", arch_.widening},
            {"n_action_bins", arch_.n_action_bins},
            {"n_value_bins", arch_.n_value_bins},
            {"n_heads", arch_.n_heads},
            {"query_dim", arch_.query_dim}}},
          {"spec", spec_json(spec_)},
          {"action_lo", codec_.lo()},
          {"action_hi", codec_.hi()}};
}

std::unique_ptr<ActorCritic> make_model(const nlohmann::json& config) {
  try {
    const std::string kind = config.at("model");
    if (kind == "tabular") {
      return std::make_unique<TabularActorCritic>(config.at("n_states"), config.at("n_actions"),
                                                  config.at("n_value_bins"));
    }
    if (kind == "perceiver") {
      const auto& a = config.at("arch");
      ArchConfig arch;
      arch.n_latents = a.at("n_latents");
      arch.latent_dim = a.at("latent_dim");
      arch.n_blocks = a.at("n_blocks");
      arch.widening = a.at("widening");
      arch.n_action_bins = a.at("n_action_bins");
      arch.n_value_bins = a.at("n_value_bins");
      arch.n_heads = a.at("n_heads");
      arch.query_dim = a.at("query_dim");
      ActionCodec codec(arch.n_action_bins, config.at("action_lo").get<std::vector<double>>(),
                        config.at("action_hi").get<std::vector<double>>());
      return std::make_unique<PerceiverActorCritic>(arch, spec_from_json(config.at("spec")), codec);
    }
    throw ConfigError("unknown model kind: " + kind);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("invalid model config: ") + e.what());
  }
}

std::vector<int> greedy_bins(const ad::Matrix& logits) {
  std::vector<int> out(std::size_t(logits.rows()));
  for (ad::Index r = 0; r < logits.rows(); ++r) {
    ad::Index best = 0;
    for (ad::Index c = 1; c < logits.cols(); ++c) {
      if (logits(r, c) > logits(r, best)) best = c;
    }
    out[std::size_t(r)] = static_cast<int>(best);
  }
  return out;
}

ad::Matrix softmax_rows(const ad::Matrix& logits) {
  ad::Matrix p(logits.rows(), logits.cols());
  for (ad::Index r = 0; r < logits.rows(); ++r) {
    const double m = logits.row(r).maxCoeff();
    p.row(r) = (logits.row(r).array() - m).exp().matrix();
    p.row(r) /= p.row(r).sum();
  }
  return p;
}

std::vector<int> sample_bins(const ad::Matrix& logits, Rng& rng) {
  const ad::Matrix p = softmax_rows(logits);
  std::vector<int> out(std::size_t(p.rows()));
  std::vector<double> w(std::size_t(p.cols()));
  for (ad::Index r = 0; r < p.rows(); ++r) {
    for (ad::Index c = 0; c < p.cols(); ++c) w[std::size_t(c)] = p(r, c);
    out[std::size_t(r)] = static_cast<int>(rng.categorical(w));
  }
  return out;
}

}  // namespace pac
