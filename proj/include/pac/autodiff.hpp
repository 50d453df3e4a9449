// Copyright 2026 The PAC Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef PAC_AUTODIFF_HPP
#define PAC_AUTODIFF_HPP

// Reverse-mode automatic differentiation over dense Eigen matrices.
//
// A Tape records every operation of one forward pass. Calling backward() on a
// 1x1 result walks the tape in reverse and accumulates parameter gradients
// into a ParamSet of matching structure. Tapes are cheap, single-use and never
// shared between threads.

#include <Eigen/Dense>

#include <cstddef>
#include <deque>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace pac::ad {

using Matrix = Eigen::MatrixXd;
using Index = Eigen::Index;

/// Named, ordered collection of parameter matrices.
class ParamSet {
 public:
  std::size_t add(std::string name, Matrix value);

  std::size_t size() const { return values_.size(); }
  const std::string& name(std::size_t i) const { return names_[i]; }
  Matrix& value(std::size_t i) { return values_[i]; }
  const Matrix& value(std::size_t i) const { return values_[i]; }

  std::optional<std::size_t> find(std::string_view name) const;
  std::size_t index(std::string_view name) const;
  Matrix& operator[](std::string_view name) { return values_[index(name)]; }
  const Matrix& operator[](std::string_view name) const { return values_[index(name)]; }

  /// Total number of scalars across all matrices.
  std::size_t scalar_count() const;
  /// Same names and shapes, all entries zero.
  ParamSet zeros_like() const;
  void set_zero();
  bool same_structure(const ParamSet& other) const;
  bool all_finite() const;

  friend bool operator==(const ParamSet& a, const ParamSet& b);

 private:
  std::vector<std::string> names_;
  std::vector<Matrix> values_;
  std::unordered_map<std::string, std::size_t> lookup_;
};

class Tape;

/// Handle to a node on a tape.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Matrix& value() const;
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
  /// Convenience for 1x1 results.
  double scalar() const { return value()(0, 0); }
};

class Tape {
 public:
  using Backward = std::function<void(Tape&, std::size_t self)>;

  Var constant(Matrix value);
  /// Records a read of parameter `index`. The node references the matrix
  /// held by `params`, which must outlive the tape.
  Var param(const ParamSet& params, std::size_t index);
  Var param(const ParamSet& params, std::string_view name) {
    return param(params, params.index(name));
  }

  /// Accumulates d(root)/d(param) into `grads` (scaled by `seed`).
  /// `root` must be 1x1 and `grads` must share the structure of every
  /// ParamSet read through param().
  void backward(Var root, ParamSet& grads, double seed = 1.0);

  const Matrix& value(std::size_t id) const;
  /// Gradient buffer of a node, zero-initialised on first access.
  Matrix& grad(std::size_t id);
  bool has_grad(std::size_t id) const;

  /// Approximate floating-point operations executed by the recorded forward
  /// pass (multiply-accumulate counted as two).
  double flops() const { return flops_; }
  std::size_t size() const { return nodes_.size(); }

  Var push(Matrix value, Backward backward, double flops);

 private:
  struct Node {
    Matrix own;
    const Matrix* ref = nullptr;
    Matrix grad;
    Backward backward;
    std::optional<std::size_t> param_index;
  };
  std::deque<Node> nodes_;
  double flops_ = 0.0;
};

// Elementwise and linear algebra.
Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
/// Adds a 1 x n row to every row of `a`.
Var add_row(Var a, Var row);
Var mul(Var a, Var b);
Var scale(Var a, double s);
Var tanh(Var a);
Var relu(Var a);
/// Tanh approximation of the Gaussian error linear unit.
Var gelu(Var a);

/// Row-wise layer normalisation with 1 x n gain and bias.
Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-5);

/// Multi-head scaled dot-product attention. `q` is n_q x d, `k` is n_k x d,
/// `v` is n_k x d_v; both widths are split evenly into `heads`. Keys with
/// key_mask[j] == false receive exactly zero weight. An empty mask means all
/// keys are valid. Throws std::invalid_argument when every key is masked.
Var attention(Var q, Var k, Var v, const std::vector<bool>& key_mask, int heads);
/// Attention probabilities of the plain (single head) operator; no tape.
Matrix attention_weights(const Matrix& q, const Matrix& k, const std::vector<bool>& key_mask);

Var log_softmax_rows(Var x);

Var concat_rows(std::span<const Var> parts);
Var slice_rows(Var x, Index begin, Index count);
Var gather_rows(Var table, std::span<const Index> rows);
/// Row-major flatten to a 1 x (rows*cols) row.
Var flatten_row(Var x);
/// Zeroes the rows where keep[r] is false.
Var mask_rows(Var x, const std::vector<bool>& keep);

Var sum(Var x);
/// Sum of w .* x for a constant weight matrix of the same shape.
Var weighted_sum(Var x, const Matrix& w);
Var element(Var x, Index r, Index c);

/// 2-D convolution. `input` holds one image as (height*width) x in_channels
/// rows in row-major pixel order; `weight` is (kernel*kernel*in_channels) x
/// out_channels; `bias` is 1 x out_channels. Zero padding of kernel/2.
/// Output is (out_h*out_w) x out_channels.
Var conv2d(Var input, int height, int width, Var weight, Var bias, int kernel, int stride);
int conv_output_size(int input, int kernel, int stride);

}  // namespace pac::ad

#endif  // PAC_AUTODIFF_HPP
