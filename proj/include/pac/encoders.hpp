// Copyright 2026 The PAC Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef PAC_ENCODERS_HPP
#define PAC_ENCODERS_HPP

// Modality encoders: multimodal observations and actions to embedding tokens.
//
// Every modality is padded to the capacities of a ModalitySpec. Padded rows
// are zero and flagged invalid in the accompanying mask. Parameters live in a
// ParamSet under the "enc." prefix (observation encoders) and "act." prefix
// (action query encoder).

#include "pac/autodiff.hpp"
#include "pac/rng.hpp"

#include <array>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace pac {

/// Logarithmically spaced gains 10^-4 .. 10^3.
std::vector<double> default_gains();

struct ConvStackConfig {
  std::vector<int> channels{8, 16};
  int kernel = 3;
  int stride = 2;
};

struct ModalitySpec {
  int n_proprio = 0;       // scalars per observation
  int n_images = 0;        // observation images
  int n_goal_images = 0;   // goal images of the task description
  int n_text_tokens = 0;   // language tokens of the task description
  int n_action_dims = 1;
  int image_height = 16;
  int image_width = 16;
  int image_channels = 1;
  int vocab_size = 256;
  std::vector<double> gains = default_gains();
  int embed_dim = 16;
  ConvStackConfig conv;

  int n_gains() const { return static_cast<int>(gains.size()); }
  std::pair<int, int> image_grid() const;
  int tokens_per_image() const;
  int proprio_tokens() const { return n_proprio * n_gains(); }
  int total_tokens() const;
  /// Throws std::invalid_argument when an invariant is violated.
  void validate() const;
};

struct Image {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<float> pixels;  // height x width x channels, row-major

  friend bool operator==(const Image&, const Image&) = default;
};

/// One timestep of input. Entries beyond the lengths given here are padding.
struct Observation {
  std::vector<float> proprio;
  std::vector<Image> images;
  std::vector<Image> goal_images;
  std::vector<int> text_tokens;

  friend bool operator==(const Observation&, const Observation&) = default;
};

enum class Segment { proprio, images, goal_images, text };

struct TokenSequence {
  ad::Var embeddings;         // N x D_I
  std::vector<bool> mask;     // true = valid row
  std::map<Segment, std::pair<int, int>> segments;  // [begin, end)

  int size() const { return static_cast<int>(mask.size()); }
  int valid_count() const;
};

/// tanh(gain_i * x) for every gain. Throws std::domain_error on non-finite x.
std::vector<double> multiscale_normalize(double x, std::span<const double> gains);

/// Adds the observation encoder parameters for `spec` to `params`.
void add_encoder_params(const ModalitySpec& spec, ad::ParamSet& params, Rng& rng);
/// Adds the action query encoder parameters producing `query_dim` wide rows.
void add_action_query_params(const ModalitySpec& spec, int query_dim, ad::ParamSet& params, Rng& rng);

/// (n_proprio * N_G) x D_I block; rows of padded scalars are zero and masked.
TokenSequence encode_proprio(const ModalitySpec& spec, const ad::ParamSet& params, std::span<const float> proprio,
                             ad::Tape& tape);
/// N_E x D_I block for one image. Throws on shape mismatch.
ad::Var encode_image(const ModalitySpec& spec, const ad::ParamSet& params, const Image& image, int slot,
                     ad::Tape& tape);
/// n_text_tokens x D_I block of table rows; padded positions masked.
TokenSequence encode_text(const ModalitySpec& spec, const ad::ParamSet& params, std::span<const int> tokens,
                          ad::Tape& tape);
/// Single query row from an action vector.
ad::Var encode_action_query(const ModalitySpec& spec, const ad::ParamSet& params, std::span<const double> action,
                            ad::Tape& tape);
/// Intermediate (N^A * N_G) x D_O block produced by the first action projection.
ad::Var action_token_block(const ModalitySpec& spec, const ad::ParamSet& params, std::span<const double> action,
                           ad::Tape& tape);

/// Concatenates proprio, images, goal images and text in that order.
TokenSequence assemble_input(const ModalitySpec& spec, const ad::ParamSet& params, const Observation& obs,
                             ad::Tape& tape);

/// Byte-level tokenizer over a fixed 256-entry vocabulary; truncates to
/// `max_tokens`.
std::vector<int> tokenize_task(const std::string& text, int max_tokens);

}  // namespace pac

#endif  // PAC_ENCODERS_HPP
