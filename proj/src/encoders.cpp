// Copyright 2026 The PAC Authors
// SPDX-License-Identifier: Apache-2.0

#include "pac/encoders.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace pac {

namespace {

ad::Matrix random_matrix(Rng& rng, ad::Index rows, ad::Index cols, double stddev) {
  ad::Matrix m(rows, cols);
  for (ad::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal() * stddev;
  return m;
}

int total_image_slots(const ModalitySpec& spec) { return spec.n_images + spec.n_goal_images; }

}  // namespace

std::vector<double> default_gains() { return {1e-4, 1e-3, 1e-2, 1e-1, 1.0, 1e1, 1e2, 1e3}; }

std::pair<int, int> ModalitySpec::image_grid() const {
  int h = image_height;
  int w = image_width;
  for (std::size_t i = 0; i < conv.channels.size(); ++i) {
    h = ad::conv_output_size(h, conv.kernel, conv.stride);
    w = ad::conv_output_size(w, conv.kernel, conv.stride);
  }
  return {h, w};
}

int ModalitySpec::tokens_per_image() const {
  const auto [h, w] = image_grid();
  return h * w;
}

int ModalitySpec::total_tokens() const {
  return proprio_tokens() + (n_images + n_goal_images) * tokens_per_image() + n_text_tokens;
}

void ModalitySpec::validate() const {
  if (n_proprio < 0 || n_images < 0 || n_goal_images < 0 || n_text_tokens < 0) {
    throw std::invalid_argument("ModalitySpec: negative capacity");
  }
  if (n_action_dims <= 0) throw std::invalid_argument("ModalitySpec: n_action_dims must be positive");
  if (embed_dim <= 0) throw std::invalid_argument("ModalitySpec: embed_dim must be positive");
  if (gains.empty()) throw std::invalid_argument("ModalitySpec: no gains");
  for (std::size_t i = 0; i < gains.size(); ++i) {
    if (!(gains[i] > 0.0) || !std::isfinite(gains[i])) throw std::invalid_argument("ModalitySpec: gains must be positive");
    if (i > 0 && !(gains[i] > gains[i - 1])) throw std::invalid_argument("ModalitySpec: gains must be strictly increasing");
  }
  if (n_text_tokens > 0 && vocab_size <= 0) throw std::invalid_argument("ModalitySpec: vocab_size must be positive");
  if (total_image_slots(*this) > 0) {
    if (image_height <= 0 || image_width <= 0 || image_channels <= 0) {
      throw std::invalid_argument("ModalitySpec: invalid image shape");
    }
    if (conv.channels.empty() || conv.kernel <= 0 || conv.stride <= 0) {
      throw std::invalid_argument("ModalitySpec: invalid convolution stack");
    }
  }
  if (total_tokens() <= 0) throw std::invalid_argument("ModalitySpec: no input tokens");
}

int TokenSequence::valid_count() const {
  int n = 0;
  for (bool m : mask) n += m ? 1 : 0;
  return n;
}

std::vector<double> multiscale_normalize(double x, std::span<const double> gains) {
  if (!std::isfinite(x)) throw std::domain_error("multiscale_normalize: non-finite input");
  std::vector<double> out(gains.size());
  for (std::size_t i = 0; i < gains.size(); ++i) out[i] = std::tanh(gains[i] * x);
  return out;
}

void add_encoder_params(const ModalitySpec& spec, ad::ParamSet& params, Rng& rng) {
  spec.validate();
  const int d = spec.embed_dim;
  const int ng = spec.n_gains();
  if (spec.n_proprio > 0) {
    params.add("enc.proprio.w", random_matrix(rng, ng, d, 1.0));
    // Per-row bias doubles as the position embedding of each (scalar, gain) slot.
    params.add("enc.proprio.b", random_matrix(rng, spec.proprio_tokens(), d, 0.5));
  }
  if (total_image_slots(spec) > 0) {
    int cin = spec.image_channels;
    for (std::size_t i = 0; i < spec.conv.channels.size(); ++i) {
      const int cout = spec.conv.channels[i];
      const int fan_in = spec.conv.kernel * spec.conv.kernel * cin;
      params.add("enc.conv" + std::to_string(i) + ".w",
                 random_matrix(rng, fan_in, cout, 1.0 / std::sqrt(double(fan_in))));
      params.add("enc.conv" + std::to_string(i) + ".b", ad::Matrix::Zero(1, cout));
      cin = cout;
    }
    params.add("enc.image.proj.w", random_matrix(rng, cin, d, 1.0 / std::sqrt(double(cin))));
    params.add("enc.image.proj.b", random_matrix(rng, spec.tokens_per_image(), d, 0.5));
    params.add("enc.image.slot", random_matrix(rng, total_image_slots(spec), d, 0.5));
  }
  if (spec.n_text_tokens > 0) {
    params.add("enc.text.table", random_matrix(rng, spec.vocab_size, d, 1.0));
  }
}

void add_action_query_params(const ModalitySpec& spec, int query_dim, ad::ParamSet& params, Rng& rng) {
  const int rows = spec.n_action_dims * spec.n_gains();
  params.add("act.w1", random_matrix(rng, rows, query_dim, 1.0));
  params.add("act.b1", random_matrix(rng, rows, query_dim, 0.1));
  params.add("act.w2", random_matrix(rng, 1, rows, 1.0 / std::sqrt(double(rows))));
  params.add("act.b2", ad::Matrix::Zero(1, query_dim));
}

TokenSequence encode_proprio(const ModalitySpec& spec, const ad::ParamSet& params, std::span<const float> proprio,
                             ad::Tape& tape) {
  if (static_cast<int>(proprio.size()) > spec.n_proprio) {
    throw std::invalid_argument("encode_proprio: more scalars than n_proprio");
  }
  const int ng = spec.n_gains();
  const int rows = spec.proprio_tokens();
  ad::Matrix phi = ad::Matrix::Zero(rows, spec.embed_dim);
  std::vector<ad::Index> gain_rows(static_cast<std::size_t>(rows));
  std::vector<bool> mask(static_cast<std::size_t>(rows), false);
  for (int i = 0; i < spec.n_proprio; ++i) {
    const bool valid = i < static_cast<int>(proprio.size());
    std::vector<double> values;
    if (valid) values = multiscale_normalize(double(proprio[std::size_t(i)]), spec.gains);
    for (int g = 0; g < ng; ++g) {
      const int r = i * ng + g;
      gain_rows[std::size_t(r)] = g;
      mask[std::size_t(r)] = valid;
      if (valid) phi.row(r).setConstant(values[std::size_t(g)]);
    }
  }
  ad::Var w = ad::gather_rows(tape.param(params, "enc.proprio.w"), gain_rows);
  ad::Var tokens = ad::add(ad::mul(w, tape.constant(std::move(phi))), tape.param(params, "enc.proprio.b"));
  TokenSequence out;
  out.embeddings = ad::mask_rows(tokens, mask);
  out.mask = std::move(mask);
  out.segments[Segment::proprio] = {0, rows};
  return out;
}

ad::Var encode_image(const ModalitySpec& spec, const ad::ParamSet& params, const Image& image, int slot,
                     ad::Tape& tape) {
  if (image.height != spec.image_height || image.width != spec.image_width ||
      image.channels != spec.image_channels) {
    throw std::invalid_argument("encode_image: image shape does not match the modality spec");
  }
  if (image.pixels.size() != std::size_t(image.height) * image.width * image.channels) {
    throw std::invalid_argument("encode_image: pixel buffer size mismatch");
  }
  if (slot < 0 || slot >= total_image_slots(spec)) throw std::out_of_range("encode_image: slot");
  ad::Matrix x(ad::Index(image.height) * image.width, image.channels);
  for (ad::Index p = 0; p < x.rows(); ++p) {
    for (ad::Index c = 0; c < x.cols(); ++c) x(p, c) = image.pixels[std::size_t(p * x.cols() + c)];
  }
  ad::Var h = tape.constant(std::move(x));
  int height = image.height;
  int width = image.width;
  for (std::size_t i = 0; i < spec.conv.channels.size(); ++i) {
    const std::string prefix = "enc.conv" + std::to_string(i);
    h = ad::gelu(ad::conv2d(h, height, width, tape.param(params, prefix + ".w"), tape.param(params, prefix + ".b"),
                            spec.conv.kernel, spec.conv.stride));
    height = ad::conv_output_size(height, spec.conv.kernel, spec.conv.stride);
    width = ad::conv_output_size(width, spec.conv.kernel, spec.conv.stride);
  }
  ad::Var tokens = ad::add(ad::matmul(h, tape.param(params, "enc.image.proj.w")), tape.param(params, "enc.image.proj.b"));
  const std::array<ad::Index, 1> slot_row{slot};
  return ad::add_row(tokens, ad::gather_rows(tape.param(params, "enc.image.slot"), slot_row));
}

TokenSequence encode_text(const ModalitySpec& spec, const ad::ParamSet& params, std::span<const int> tokens,
                          ad::Tape& tape) {
  if (static_cast<int>(tokens.size()) > spec.n_text_tokens) {
    throw std::invalid_argument("encode_text: more tokens than n_text_tokens");
  }
  std::vector<ad::Index> ids;
  for (int t : tokens) {
    if (t < 0 || t >= spec.vocab_size) throw std::invalid_argument("encode_text: token id out of range");
    ids.push_back(t);
  }
  const int n = spec.n_text_tokens;
  const int valid = static_cast<int>(ids.size());
  std::vector<ad::Var> parts;
  if (valid > 0) parts.push_back(ad::gather_rows(tape.param(params, "enc.text.table"), ids));
  if (n - valid > 0) parts.push_back(tape.constant(ad::Matrix::Zero(n - valid, spec.embed_dim)));
  TokenSequence out;
  out.embeddings = ad::concat_rows(parts);
  out.mask.assign(std::size_t(n), false);
  for (int i = 0; i < valid; ++i) out.mask[std::size_t(i)] = true;
  out.segments[Segment::text] = {0, n};
  return out;
}

ad::Var action_token_block(const ModalitySpec& spec, const ad::ParamSet& params, std::span<const double> action,
                           ad::Tape& tape) {
  if (static_cast<int>(action.size()) != spec.n_action_dims) {
    throw std::invalid_argument("encode_action_query: action has wrong dimension");
  }
  const int ng = spec.n_gains();
  const ad::Index width = params["act.w1"].cols();
  ad::Matrix phi(ad::Index(spec.n_action_dims) * ng, width);
  for (int d = 0; d < spec.n_action_dims; ++d) {
    if (!std::isfinite(action[std::size_t(d)])) throw std::domain_error("encode_action_query: non-finite action");
    const auto values = multiscale_normalize(action[std::size_t(d)], spec.gains);
    for (int g = 0; g < ng; ++g) phi.row(ad::Index(d) * ng + g).setConstant(values[std::size_t(g)]);
  }
  return ad::add(ad::mul(tape.param(params, "act.w1"), tape.constant(std::move(phi))), tape.param(params, "act.b1"));
}

ad::Var encode_action_query(const ModalitySpec& spec, const ad::ParamSet& params, std::span<const double> action,
                            ad::Tape& tape) {
  ad::Var block = action_token_block(spec, params, action, tape);
  return ad::add(ad::matmul(tape.param(params, "act.w2"), block), tape.param(params, "act.b2"));
}

TokenSequence assemble_input(const ModalitySpec& spec, const ad::ParamSet& params, const Observation& obs,
                             ad::Tape& tape) {
  if (static_cast<int>(obs.images.size()) > spec.n_images) {
    throw std::invalid_argument("assemble_input: more images than n_images");
  }
  if (static_cast<int>(obs.goal_images.size()) > spec.n_goal_images) {
    throw std::invalid_argument("assemble_input: more goal images than n_goal_images");
  }
  TokenSequence out;
  std::vector<ad::Var> parts;
  int at = 0;
  auto append_mask = [&out](int n, bool valid) { out.mask.insert(out.mask.end(), std::size_t(n), valid); };

  if (spec.n_proprio > 0) {
    TokenSequence p = encode_proprio(spec, params, obs.proprio, tape);
    parts.push_back(p.embeddings);
    out.mask.insert(out.mask.end(), p.mask.begin(), p.mask.end());
    out.segments[Segment::proprio] = {at, at + p.size()};
    at += p.size();
  }
  const int ne = total_image_slots(spec) > 0 ? spec.tokens_per_image() : 0;
  auto add_images = [&](const std::vector<Image>& images, int capacity, int first_slot, Segment seg) {
    if (capacity == 0) return;
    const int begin = at;
    for (int i = 0; i < capacity; ++i) {
      if (i < static_cast<int>(images.size())) {
        parts.push_back(encode_image(spec, params, images[std::size_t(i)], first_slot + i, tape));
        append_mask(ne, true);
      } else {
        parts.push_back(tape.constant(ad::Matrix::Zero(ne, spec.embed_dim)));
        append_mask(ne, false);
      }
      at += ne;
    }
    out.segments[seg] = {begin, at};
  };
  add_images(obs.images, spec.n_images, 0, Segment::images);
  add_images(obs.goal_images, spec.n_goal_images, spec.n_images, Segment::goal_images);
  if (spec.n_text_tokens > 0) {
    TokenSequence t = encode_text(spec, params, obs.text_tokens, tape);
    parts.push_back(t.embeddings);
    out.mask.insert(out.mask.end(), t.mask.begin(), t.mask.end());
    out.segments[Segment::text] = {at, at + t.size()};
    at += t.size();
  }
  out.embeddings = ad::concat_rows(parts);
  return out;
}

std::vector<int> tokenize_task(const std::string& text, int max_tokens) {
  std::vector<int> out;
  for (unsigned char c : text) {
    if (static_cast<int>(out.size()) >= max_tokens) break;
    out.push_back(static_cast<int>(c));
  }
  return out;
}

}  // namespace pac
