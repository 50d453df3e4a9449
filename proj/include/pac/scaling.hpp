// Copyright 2026 The PAC Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef PAC_SCALING_HPP
#define PAC_SCALING_HPP

// Return-profile fits, compute envelopes, power-law fits, iso-return grids
// and FLOP accounting.

#include "pac/encoders.hpp"
#include "pac/perceiver.hpp"

#include "json.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace pac {

/// R(n) = a / (1 + exp(-k (n - n0))) + b.
struct ReturnProfile {
  std::string name;
  double a = 0.0;
  double k = 0.0;
  double n0 = 0.0;
  double b = 0.0;
  double flops_per_step = 1.0;
  double tokens_per_step = 0.0;
  double model_params = 0.0;
  double min_step = 0.0;  // fitted step range
  double max_step = 0.0;
  double rss = 0.0;
  bool degenerate = false;  // constant predictor used

  double predict(double step) const;
  nlohmann::json to_json() const;
};

/// Levenberg-Marquardt fit from a = max - min, b = min, n0 = median step,
/// k = 4 / step range. Needs at least 4 points. Falls back to the constant
/// mean (a = 0) and sets `degenerate` when the data are flat or the fit does
/// not beat the constant predictor.
ReturnProfile fit_return_profile(const std::vector<std::pair<double, double>>& points);

struct EnvelopePoint {
  double flops = 0.0;
  double best_return = 0.0;
  int best_model = -1;  // index into the profile list
  double params = 0.0;
  double tokens = 0.0;
  double steps = 0.0;
};

/// `n_points` log-spaced compute budgets in [lo, hi]; at each the profile
/// with the largest predicted return at steps = flops / flops_per_step.
std::vector<EnvelopePoint> envelope(const std::vector<ReturnProfile>& profiles, std::pair<double, double> flop_range,
                                    int n_points);

/// N(C) = N0 C^a and D(C) = D0 C^b.
struct PowerLawFit {
  double n0 = 0.0;
  double a_exp = 0.0;
  double d0 = 0.0;
  double b_exp = 0.0;
  std::vector<double> n_residuals;  // log-space residuals
  std::vector<double> d_residuals;

  nlohmann::json to_json() const;
};

struct ComputePoint {
  double compute = 0.0;
  double params = 0.0;
  double tokens = 0.0;
};

/// Unweighted least squares in log-log space. Throws std::invalid_argument
/// with fewer than 2 distinct compute values or non-positive inputs.
PowerLawFit fit_power_laws(const std::vector<ComputePoint>& points);

struct IsoReturnGrid {
  std::vector<double> params;  // log-spaced axis
  std::vector<double> flops;   // log-spaced axis
  std::vector<std::vector<double>> value;        // [param][flops]
  std::vector<std::vector<bool>> extrapolated;   // [param][flops]
  std::vector<double> levels;
  /// contours[l] holds the (params, flops) points where the return first
  /// reaches levels[l] along the FLOPs axis, one per parameter row.
  std::vector<std::vector<std::pair<double, double>>> contours;

  nlohmann::json to_json() const;
  std::string to_csv() const;
};

/// Predicted return interpolated linearly in log(params) between the two
/// neighbouring profiles. Cells outside the fitted parameter or step range
/// are flagged.
IsoReturnGrid iso_return_grid(const std::vector<ReturnProfile>& profiles, std::pair<double, double> param_range,
                              std::pair<double, double> flop_range, const std::vector<double>& levels,
                              int n_params = 50, int n_flops = 100);

struct ConvLayer {
  int in_channels = 0;
  int out_channels = 0;
  int kernel_h = 0;
  int kernel_w = 0;
  int out_h = 0;
  int out_w = 0;
};

/// Shapes that enter the FLOP count.
struct FlopArch {
  int n_proprio = 223;
  int n_images = 5;
  int n_goal_images = 3;
  int n_text_tokens = 50;
  int n_action_dims = 38;
  int n_gains = 8;
  int visual_tokens = 100;  // per image
  int vocab_size = 32000;
  int n_latents = 32;
  int latent_dim = 768;
  int n_blocks = 4;
  int widening = 1;
  int n_heads = 12;
  int n_action_bins = 101;
  int n_value_bins = 101;
  int embed_dim = 256;
  std::vector<ConvLayer> convs;  // per image; empty when unknown

  int proprio_tokens() const { return n_proprio * n_gains; }
  int vision_tokens() const { return (n_images + n_goal_images) * visual_tokens; }
  int action_tokens() const { return n_action_dims * n_gains; }
  int input_tokens() const { return proprio_tokens() + vision_tokens() + n_text_tokens; }

  /// Preset XXS, XS, S, M or L shapes; conv stack untouched.
  static FlopArch scale(const std::string& name);
  static FlopArch from_model(const ArchConfig& arch, const ModalitySpec& spec);
};

/// Reference forward cost of a named scale, if any.
std::optional<double> published_fwd(const std::string& scale);
std::vector<std::string> scale_names();

struct FlopModel {
  double enc_p = 0.0;
  double enc_v = 0.0;
  double enc_l = 0.0;
  double enc_a = 0.0;
  double xattn_in = 0.0;
  double sattn_proc = 0.0;  // one block
  double xattn_pi = 0.0;
  double xattn_q = 0.0;
  int n_blocks = 0;
  double maf = 2.0;
  int batch = 1;
  int target_period = 1;
  std::optional<double> fwd_override;

  double fwd() const;
  double bwd() const { return (2.0 + 1.0 / target_period) * fwd(); }
  double update() const { return batch * (fwd() + bwd()); }
  nlohmann::json to_json() const;
};

/// Attention block cost with query length lq, key length lkv, residual
/// width d, key/value source width d_kv.
double attention_block_flops(double lq, double lkv, double d, double d_kv, int widening, int heads, double maf = 2.0);

/// Throws std::invalid_argument unless batch and target_period are >= 1.
FlopModel count_flops(const FlopArch& arch, int batch, int target_period,
                      std::optional<double> fwd_override = std::nullopt);

/// Reads `manifest.csv` (model,params,flops_per_step[,tokens_per_step]) and
/// one `<model>.csv` (step,avg_return) per row, then fits each profile.
std::vector<ReturnProfile> load_profiles(const std::filesystem::path& dir);

}  // namespace pac

#endif  // PAC_SCALING_HPP
