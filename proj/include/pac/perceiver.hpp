// Copyright 2026 The PAC Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef PAC_PERCEIVER_HPP
#define PAC_PERCEIVER_HPP

// Latent-bottleneck actor-critic network. Input tokens are read once by a
// cross-attention block into N_Z trainable latents, refined by M
// self-attention blocks and read out by small query-driven decoders.

#include "pac/autodiff.hpp"
#include "pac/encoders.hpp"
#include "pac/rng.hpp"
#include "pac/value_bins.hpp"

#include <span>
#include <string>
#include <vector>

namespace pac {

struct ArchConfig {
  int n_latents = 4;       // N_Z
  int latent_dim = 16;     // D_Z
  int n_blocks = 2;        // M
  int widening = 1;        // W
  int n_action_bins = 11;  // N_B
  int n_value_bins = 51;   // N_Q
  int n_heads = 4;
  int query_dim = 0;       // D_O; 0 selects latent_dim

  int output_dim() const { return query_dim > 0 ? query_dim : latent_dim; }
  /// Throws std::invalid_argument when an invariant is violated.
  void validate() const;
};

/// Per-dimension uniform binning of a continuous action range. Bin i of a
/// dimension decodes to the midpoint lo + (i + 0.5) * width.
class ActionCodec {
 public:
  ActionCodec() = default;
  ActionCodec(int n_bins, std::vector<double> lo, std::vector<double> hi);

  int dims() const { return static_cast<int>(lo_.size()); }
  int bins() const { return n_bins_; }
  double center(int dim, int bin) const;
  int bin_of(int dim, double value) const;
  std::vector<int> encode(std::span<const float> action) const;
  std::vector<double> decode(std::span<const int> bins) const;
  const std::vector<double>& lo() const { return lo_; }
  const std::vector<double>& hi() const { return hi_; }

 private:
  int n_bins_ = 0;
  std::vector<double> lo_;
  std::vector<double> hi_;
};

/// Parameters of one pre-norm attention block under `prefix`.
/// `query_width` is the residual width, `kv_width` the width of the read source.
void add_block_params(const std::string& prefix, int query_width, int kv_width, int widening, bool self_attention,
                      ad::ParamSet& params, Rng& rng);

/// h = x_q + W_o MHA(LN(x_q) W_q, LN(x_kv) W_k, LN(x_kv) W_v) + b_o;
/// out = h + MLP(LN(h)) with a GELU hidden layer of widening * width units.
ad::Var cross_attend(const ad::ParamSet& params, const std::string& prefix, ad::Var x_q, ad::Var x_kv,
                     const std::vector<bool>& mask, int heads);
ad::Var self_attend(const ad::ParamSet& params, const std::string& prefix, ad::Var x, int heads);

/// All perceiver parameters, including encoders and the action query encoder.
ad::ParamSet init_perceiver_params(const ArchConfig& arch, const ModalitySpec& spec, Rng& rng);

/// z_0 = cross_attend(z, e_I) followed by M self-attention blocks.
ad::Var encode_latents(const ArchConfig& arch, const ad::ParamSet& params, const TokenSequence& tokens,
                       ad::Tape& tape);
/// N^A x N_B policy logits.
ad::Var decode_policy(const ArchConfig& arch, const ad::ParamSet& params, ad::Var latents, ad::Tape& tape);
/// 1 x N_Q value logits of action `action` against cached latents.
ad::Var decode_q(const ArchConfig& arch, const ModalitySpec& spec, const ad::ParamSet& params, ad::Var latents,
                 std::span<const double> action, ad::Tape& tape);
/// Value logits for each action, all read from the same latents.
std::vector<ad::Var> decode_q_batch(const ArchConfig& arch, const ModalitySpec& spec, const ad::ParamSet& params,
                                    ad::Var latents, const std::vector<std::vector<double>>& actions,
                                    ad::Tape& tape);
/// 1 x N_Q state-value logits (V-variant critic).
ad::Var decode_v(const ArchConfig& arch, const ad::ParamSet& params, ad::Var latents, ad::Tape& tape);
/// N^A x N_B logits of a learned behavior-policy estimate.
ad::Var decode_behavior(const ArchConfig& arch, const ad::ParamSet& params, ad::Var latents, ad::Tape& tape);

}  // namespace pac

#endif  // PAC_PERCEIVER_HPP
