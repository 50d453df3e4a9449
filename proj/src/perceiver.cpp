// Copyright 2026 The PAC Authors
// SPDX-License-Identifier: Apache-2.0

#include "pac/perceiver.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace pac {

namespace {

ad::Matrix random_matrix(Rng& rng, ad::Index rows, ad::Index cols, double stddev) {
  ad::Matrix m(rows, cols);
  for (ad::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal() * stddev;
  return m;
}

void add_layer_norm(const std::string& prefix, int width, ad::ParamSet& params) {
  params.add(prefix + ".g", ad::Matrix::Ones(1, width));
  params.add(prefix + ".b", ad::Matrix::Zero(1, width));
}

ad::Var apply_layer_norm(const ad::ParamSet& params, const std::string& prefix, ad::Var x) {
  ad::Tape& tape = *x.tape;
  return ad::layer_norm(x, tape.param(params, prefix + ".g"), tape.param(params, prefix + ".b"));
}

ad::Var linear(const ad::ParamSet& params, const std::string& prefix, ad::Var x) {
  ad::Tape& tape = *x.tape;
  return ad::add_row(ad::matmul(x, tape.param(params, prefix + ".w")), tape.param(params, prefix + ".b"));
}

ad::Var feed_forward(const ad::ParamSet& params, const std::string& prefix, ad::Var h) {
  ad::Var u = ad::gelu(linear(params, prefix + ".ff1", apply_layer_norm(params, prefix + ".ln_ff", h)));
  return ad::add(h, linear(params, prefix + ".ff2", u));
}

ad::Var attend(const ad::ParamSet& params, const std::string& prefix, ad::Var x_q, ad::Var nq, ad::Var nkv,
               const std::vector<bool>& mask, int heads) {
  ad::Tape& tape = *x_q.tape;
  ad::Var q = ad::matmul(nq, tape.param(params, prefix + ".wq"));
  ad::Var k = ad::matmul(nkv, tape.param(params, prefix + ".wk"));
  ad::Var v = ad::matmul(nkv, tape.param(params, prefix + ".wv"));
  ad::Var o = ad::attention(q, k, v, mask, heads);
  ad::Var h = ad::add(x_q, linear(params, prefix + ".o", o));
  return feed_forward(params, prefix, h);
}

void add_decoder(const std::string& prefix, int n_queries, int query_width, int latent_width, int widening,
                 int out_width, ad::ParamSet& params, Rng& rng, bool learned_queries) {
  if (learned_queries) {
    params.add(prefix + ".query", random_matrix(rng, n_queries, query_width, 1.0 / std::sqrt(double(query_width))));
  }
  add_block_params(prefix, query_width, latent_width, widening, false, params, rng);
  params.add(prefix + ".head.w", random_matrix(rng, query_width, out_width, 1.0 / std::sqrt(double(query_width))));
  params.add(prefix + ".head.b", ad::Matrix::Zero(1, out_width));
}

ad::Var read_out(const ArchConfig& arch, const ad::ParamSet& params, const std::string& prefix, ad::Var query,
                 ad::Var latents) {
  ad::Var h = cross_attend(params, prefix, query, latents, {}, arch.n_heads);
  return linear(params, prefix + ".head", h);
}

}  // namespace

void ArchConfig::validate() const {
  if (n_latents <= 0 || latent_dim <= 0 || n_blocks < 0 || widening <= 0 || n_action_bins <= 0 ||
      n_value_bins < 2 || n_heads <= 0 || query_dim < 0) {
    throw std::invalid_argument("ArchConfig: sizes must be positive");
  }
  if (latent_dim % n_heads != 0 || output_dim() % n_heads != 0) {
    throw std::invalid_argument("ArchConfig: widths must be divisible by n_heads");
  }
}

ActionCodec::ActionCodec(int n_bins, std::vector<double> lo, std::vector<double> hi)
    : n_bins_(n_bins), lo_(std::move(lo)), hi_(std::move(hi)) {
  if (n_bins_ <= 0) throw std::invalid_argument("ActionCodec: n_bins must be positive");
  if (lo_.size() != hi_.size() || lo_.empty()) throw std::invalid_argument("ActionCodec: bad range");
  for (std::size_t d = 0; d < lo_.size(); ++d) {
    if (!(lo_[d] < hi_[d])) throw std::invalid_argument("ActionCodec: require lo < hi");
  }
}

double ActionCodec::center(int dim, int bin) const {
  const double width = (hi_[std::size_t(dim)] - lo_[std::size_t(dim)]) / n_bins_;
  return lo_[std::size_t(dim)] + (bin + 0.5) * width;
}

int ActionCodec::bin_of(int dim, double value) const {
  if (!std::isfinite(value)) throw std::domain_error("ActionCodec: non-finite action");
  const double width = (hi_[std::size_t(dim)] - lo_[std::size_t(dim)]) / n_bins_;
  const int b = static_cast<int>(std::floor((value - lo_[std::size_t(dim)]) / width));
  return std::clamp(b, 0, n_bins_ - 1);
}

std::vector<int> ActionCodec::encode(std::span<const float> action) const {
  if (static_cast<int>(action.size()) != dims()) throw std::invalid_argument("ActionCodec: wrong dimension");
  std::vector<int> out(action.size());
  for (int d = 0; d < dims(); ++d) out[std::size_t(d)] = bin_of(d, action[std::size_t(d)]);
  return out;
}

std::vector<double> ActionCodec::decode(std::span<const int> bins) const {
  if (static_cast<int>(bins.size()) != dims()) throw std::invalid_argument("ActionCodec: wrong dimension");
  std::vector<double> out(bins.size());
  for (int d = 0; d < dims(); ++d) {
    const int b = bins[std::size_t(d)];
    if (b < 0 || b >= n_bins_) throw std::out_of_range("ActionCodec: bin index");
    out[std::size_t(d)] = center(d, b);
  }
  return out;
}

void add_block_params(const std::string& prefix, int query_width, int kv_width, int widening, bool self_attention,
                      ad::ParamSet& params, Rng& rng) {
  add_layer_norm(prefix + ".ln_q", query_width, params);
  if (!self_attention) add_layer_norm(prefix + ".ln_kv", kv_width, params);
  const double sq = 1.0 / std::sqrt(double(query_width));
  const double skv = 1.0 / std::sqrt(double(kv_width));
  params.add(prefix + ".wq", random_matrix(rng, query_width, query_width, sq));
  params.add(prefix + ".wk", random_matrix(rng, kv_width, query_width, skv));
  params.add(prefix + ".wv", random_matrix(rng, kv_width, query_width, skv));
  params.add(prefix + ".o.w", random_matrix(rng, query_width, query_width, sq));
  params.add(prefix + ".o.b", ad::Matrix::Zero(1, query_width));
  add_layer_norm(prefix + ".ln_ff", query_width, params);
  const int hidden = widening * query_width;
  params.add(prefix + ".ff1.w", random_matrix(rng, query_width, hidden, sq));
  params.add(prefix + ".ff1.b", ad::Matrix::Zero(1, hidden));
  params.add(prefix + ".ff2.w", random_matrix(rng, hidden, query_width, 1.0 / std::sqrt(double(hidden))));
  params.add(prefix + ".ff2.b", ad::Matrix::Zero(1, query_width));
}

ad::Var cross_attend(const ad::ParamSet& params, const std::string& prefix, ad::Var x_q, ad::Var x_kv,
                     const std::vector<bool>& mask, int heads) {
  ad::Var nq = apply_layer_norm(params, prefix + ".ln_q", x_q);
  ad::Var nkv = apply_layer_norm(params, prefix + ".ln_kv", x_kv);
  return attend(params, prefix, x_q, nq, nkv, mask, heads);
}

ad::Var self_attend(const ad::ParamSet& params, const std::string& prefix, ad::Var x, int heads) {
  ad::Var n = apply_layer_norm(params, prefix + ".ln_q", x);
  return attend(params, prefix, x, n, n, {}, heads);
}

ad::ParamSet init_perceiver_params(const ArchConfig& arch, const ModalitySpec& spec, Rng& rng) {
  arch.validate();
  spec.validate();
  ad::ParamSet params;
  add_encoder_params(spec, params, rng);
  const int dz = arch.latent_dim;
  const int dout = arch.output_dim();
  params.add("pc.latents", random_matrix(rng, arch.n_latents, dz, 1.0 / std::sqrt(double(dz))));
  add_block_params("pc.in", dz, spec.embed_dim, arch.widening, false, params, rng);
  for (int m = 0; m < arch.n_blocks; ++m) {
    add_block_params("pc.self" + std::to_string(m), dz, dz, arch.widening, true, params, rng);
  }
  add_decoder("pc.pi", spec.n_action_dims, dout, dz, arch.widening, arch.n_action_bins, params, rng, true);
  add_action_query_params(spec, dout, params, rng);
  add_decoder("pc.q", 1, dout, dz, arch.widening, arch.n_value_bins, params, rng, false);
  add_decoder("pc.v", 1, dout, dz, arch.widening, arch.n_value_bins, params, rng, true);
  add_decoder("pc.b", spec.n_action_dims, dout, dz, arch.widening, arch.n_action_bins, params, rng, true);
  return params;
}

ad::Var encode_latents(const ArchConfig& arch, const ad::ParamSet& params, const TokenSequence& tokens,
                       ad::Tape& tape) {
  ad::Var z = cross_attend(params, "pc.in", tape.param(params, "pc.latents"), tokens.embeddings, tokens.mask,
                           arch.n_heads);
  for (int m = 0; m < arch.n_blocks; ++m) z = self_attend(params, "pc.self" + std::to_string(m), z, arch.n_heads);
  return z;
}

ad::Var decode_policy(const ArchConfig& arch, const ad::ParamSet& params, ad::Var latents, ad::Tape& tape) {
  return read_out(arch, params, "pc.pi", tape.param(params, "pc.pi.query"), latents);
}

ad::Var decode_q(const ArchConfig& arch, const ModalitySpec& spec, const ad::ParamSet& params, ad::Var latents,
                 std::span<const double> action, ad::Tape& tape) {
  ad::Var query = encode_action_query(spec, params, action, tape);
  return read_out(arch, params, "pc.q", query, latents);
}

std::vector<ad::Var> decode_q_batch(const ArchConfig& arch, const ModalitySpec& spec, const ad::ParamSet& params,
                                    ad::Var latents, const std::vector<std::vector<double>>& actions,
                                    ad::Tape& tape) {
  std::vector<ad::Var> out;
  out.reserve(actions.size());
  for (const auto& a : actions) out.push_back(decode_q(arch, spec, params, latents, a, tape));
  return out;
}

ad::Var decode_v(const ArchConfig& arch, const ad::ParamSet& params, ad::Var latents, ad::Tape& tape) {
  return read_out(arch, params, "pc.v", tape.param(params, "pc.v.query"), latents);
}

ad::Var decode_behavior(const ArchConfig& arch, const ad::ParamSet& params, ad::Var latents, ad::Tape& tape) {
  return read_out(arch, params, "pc.b", tape.param(params, "pc.b.query"), latents);
}

}  // namespace pac
