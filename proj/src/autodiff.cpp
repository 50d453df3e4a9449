// Copyright 2026 The PAC Authors
// SPDX-License-Identifier: Apache-2.0

#include "pac/autodiff.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace pac::ad {

// ---------------------------------------------------------------- ParamSet

std::size_t ParamSet::add(std::string name, Matrix value) {
  if (lookup_.count(name) != 0) {
    throw std::invalid_argument("duplicate parameter name: " + name);
  }
  lookup_.emplace(name, values_.size());
  names_.push_back(std::move(name));
  values_.push_back(std::move(value));
  return values_.size() - 1;
}

std::optional<std::size_t> ParamSet::find(std::string_view name) const {
  auto it = lookup_.find(std::string(name));
  if (it == lookup_.end()) return std::nullopt;
  return it->second;
}

std::size_t ParamSet::index(std::string_view name) const {
  auto found = find(name);
  if (!found) throw std::out_of_range("unknown parameter: " + std::string(name));
  return *found;
}

std::size_t ParamSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& v : values_) n += static_cast<std::size_t>(v.size());
  return n;
}

ParamSet ParamSet::zeros_like() const {
  ParamSet out;
  for (std::size_t i = 0; i < values_.size(); ++i) {
    out.add(names_[i], Matrix::Zero(values_[i].rows(), values_[i].cols()));
  }
  return out;
}

void ParamSet::set_zero() {
  for (auto& v : values_) v.setZero();
}

bool ParamSet::same_structure(const ParamSet& other) const {
  if (other.size() != size()) return false;
  for (std::size_t i = 0; i < size(); ++i) {
    if (names_[i] != other.names_[i] || values_[i].rows() != other.values_[i].rows() ||
        values_[i].cols() != other.values_[i].cols()) {
      return false;
    }
  }
  return true;
}

bool ParamSet::all_finite() const {
  for (const auto& v : values_) {
    if (!v.allFinite()) return false;
  }
  return true;
}

bool operator==(const ParamSet& a, const ParamSet& b) {
  if (!a.same_structure(b)) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    // Bitwise comparison semantics for finite values.
    if ((a.values_[i].array() != b.values_[i].array()).any()) return false;
  }
  return true;
}

// -------------------------------------------------------------------- Tape

const Matrix& Var::value() const { return tape->value(id); }

Var Tape::push(Matrix value, Backward backward, double flops) {
  Node node;
  node.own = std::move(value);
  node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  flops_ += flops;
  return Var{this, nodes_.size() - 1};
}

Var Tape::constant(Matrix value) { return push(std::move(value), nullptr, 0.0); }

Var Tape::param(const ParamSet& params, std::size_t index) {
  Node node;
  node.ref = &params.value(index);
  node.param_index = index;
  nodes_.push_back(std::move(node));
  return Var{this, nodes_.size() - 1};
}

const Matrix& Tape::value(std::size_t id) const {
  const Node& n = nodes_[id];
  return n.ref != nullptr ? *n.ref : n.own;
}

Matrix& Tape::grad(std::size_t id) {
  Node& n = nodes_[id];
  if (n.grad.size() == 0) {
    const Matrix& v = value(id);
    n.grad = Matrix::Zero(v.rows(), v.cols());
  }
  return n.grad;
}

bool Tape::has_grad(std::size_t id) const { return nodes_[id].grad.size() != 0; }

void Tape::backward(Var root, ParamSet& grads, double seed) {
  if (root.tape != this) throw std::invalid_argument("backward: variable from another tape");
  if (value(root.id).size() != 1) throw std::invalid_argument("backward: root must be 1x1");
  grad(root.id)(0, 0) += seed;
  for (std::size_t i = root.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.grad.size() == 0) continue;
    if (n.backward) n.backward(*this, i);
    if (n.param_index) {
      Matrix& g = grads.value(*n.param_index);
      if (g.rows() != n.grad.rows() || g.cols() != n.grad.cols()) {
        throw std::invalid_argument("backward: gradient set does not match parameters");
      }
      g += n.grad;
    }
    n.grad.resize(0, 0);
  }
}

// --------------------------------------------------------------------- ops

namespace {

void require_same_tape(Var a, Var b) {
  if (a.tape != b.tape) throw std::invalid_argument("operands live on different tapes");
}

}  // namespace

Var matmul(Var a, Var b) {
  require_same_tape(a, b);
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  if (av.cols() != bv.rows()) throw std::invalid_argument("matmul: inner dimensions differ");
  const double flops = 2.0 * double(av.rows()) * double(av.cols()) * double(bv.cols());
  return a.tape->push(
      av * bv,
      [a = a.id, b = b.id](Tape& t, std::size_t self) {
        const Matrix& g = t.grad(self);
        t.grad(a).noalias() += g * t.value(b).transpose();
        t.grad(b).noalias() += t.value(a).transpose() * g;
      },
      flops);
}

Var add(Var a, Var b) {
  require_same_tape(a, b);
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw std::invalid_argument("add: shape mismatch");
  return a.tape->push(
      a.value() + b.value(),
      [a = a.id, b = b.id](Tape& t, std::size_t self) {
        const Matrix g = t.grad(self);
        t.grad(a) += g;
        t.grad(b) += g;
      },
      double(a.value().size()));
}

Var sub(Var a, Var b) {
  require_same_tape(a, b);
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw std::invalid_argument("sub: shape mismatch");
  return a.tape->push(
      a.value() - b.value(),
      [a = a.id, b = b.id](Tape& t, std::size_t self) {
        const Matrix g = t.grad(self);
        t.grad(a) += g;
        t.grad(b) -= g;
      },
      double(a.value().size()));
}

Var add_row(Var a, Var row) {
  require_same_tape(a, row);
  if (row.rows() != 1 || row.cols() != a.cols()) throw std::invalid_argument("add_row: shape mismatch");
  Matrix out = a.value();
  out.rowwise() += row.value().row(0);
  return a.tape->push(
      std::move(out),
      [a = a.id, r = row.id](Tape& t, std::size_t self) {
        const Matrix g = t.grad(self);
        t.grad(a) += g;
        t.grad(r) += g.colwise().sum();
      },
      double(a.value().size()));
}

Var mul(Var a, Var b) {
  require_same_tape(a, b);
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw std::invalid_argument("mul: shape mismatch");
  return a.tape->push(
      a.value().cwiseProduct(b.value()),
      [a = a.id, b = b.id](Tape& t, std::size_t self) {
        const Matrix g = t.grad(self);
        t.grad(a) += g.cwiseProduct(t.value(b));
        t.grad(b) += g.cwiseProduct(t.value(a));
      },
      double(a.value().size()));
}

Var scale(Var a, double s) {
  return a.tape->push(
      a.value() * s,
      [a = a.id, s](Tape& t, std::size_t self) { t.grad(a) += t.grad(self) * s; },
      double(a.value().size()));
}

Var tanh(Var a) {
  Matrix out = a.value().array().tanh().matrix();
  return a.tape->push(
      std::move(out),
      [a = a.id](Tape& t, std::size_t self) {
        const Matrix& y = t.value(self);
        t.grad(a).array() += t.grad(self).array() * (1.0 - y.array().square());
      },
      4.0 * double(a.value().size()));
}

Var relu(Var a) {
  Matrix out = a.value().cwiseMax(0.0);
  return a.tape->push(
      std::move(out),
      [a = a.id](Tape& t, std::size_t self) {
        const Matrix& x = t.value(a);
        t.grad(a).array() += (x.array() > 0.0).select(t.grad(self).array(), 0.0);
      },
      double(a.value().size()));
}

Var gelu(Var a) {
  constexpr double kC = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double kA = 0.044715;
  const Matrix& x = a.value();
  Matrix out(x.rows(), x.cols());
  for (Index i = 0; i < x.size(); ++i) {
    const double v = x.data()[i];
    out.data()[i] = 0.5 * v * (1.0 + std::tanh(kC * (v + kA * v * v * v)));
  }
  return a.tape->push(
      std::move(out),
      [a = a.id](Tape& t, std::size_t self) {
        const Matrix& xv = t.value(a);
        const Matrix& g = t.grad(self);
        Matrix& ga = t.grad(a);
        for (Index i = 0; i < xv.size(); ++i) {
          const double v = xv.data()[i];
          const double th = std::tanh(kC * (v + kA * v * v * v));
          const double d = 0.5 * (1.0 + th) + 0.5 * v * (1.0 - th * th) * kC * (1.0 + 3.0 * kA * v * v);
          ga.data()[i] += g.data()[i] * d;
        }
      },
      10.0 * double(x.size()));
}

Var layer_norm(Var x, Var gain, Var bias, double eps) {
  require_same_tape(x, gain);
  require_same_tape(x, bias);
  const Matrix& xv = x.value();
  const Index n = xv.cols();
  if (gain.rows() != 1 || gain.cols() != n || bias.rows() != 1 || bias.cols() != n) {
    throw std::invalid_argument("layer_norm: gain/bias shape mismatch");
  }
  Matrix xhat(xv.rows(), n);
  Eigen::VectorXd inv_std(xv.rows());
  for (Index r = 0; r < xv.rows(); ++r) {
    const double mu = xv.row(r).mean();
    const double var = (xv.row(r).array() - mu).square().mean();
    inv_std(r) = 1.0 / std::sqrt(var + eps);
    xhat.row(r) = (xv.row(r).array() - mu) * inv_std(r);
  }
  Matrix out = xhat;
  out.array().rowwise() *= gain.value().row(0).array();
  out.rowwise() += bias.value().row(0);
  return x.tape->push(
      std::move(out),
      [x = x.id, g = gain.id, b = bias.id, xhat = std::move(xhat), inv_std = std::move(inv_std)](
          Tape& t, std::size_t self) {
        const Matrix& dy = t.grad(self);
        t.grad(b) += dy.colwise().sum();
        t.grad(g) += dy.cwiseProduct(xhat).colwise().sum();
        Matrix dxhat = dy;
        dxhat.array().rowwise() *= t.value(g).row(0).array();
        Matrix& dx = t.grad(x);
        for (Index r = 0; r < dxhat.rows(); ++r) {
          const double m1 = dxhat.row(r).mean();
          const double m2 = dxhat.row(r).cwiseProduct(xhat.row(r)).mean();
          dx.row(r).array() += inv_std(r) * (dxhat.row(r).array() - m1 - xhat.row(r).array() * m2);
        }
      },
      8.0 * double(xv.size()));
}

namespace {

// Softmax over columns of `scores` with masked columns given zero weight.
Matrix masked_softmax(const Matrix& scores, const std::vector<bool>& key_mask) {
  Matrix p(scores.rows(), scores.cols());
  const bool masked = !key_mask.empty();
  for (Index r = 0; r < scores.rows(); ++r) {
    double mx = -std::numeric_limits<double>::infinity();
    for (Index c = 0; c < scores.cols(); ++c) {
      if (masked && !key_mask[static_cast<std::size_t>(c)]) continue;
      mx = std::max(mx, scores(r, c));
    }
    double total = 0.0;
    for (Index c = 0; c < scores.cols(); ++c) {
      if (masked && !key_mask[static_cast<std::size_t>(c)]) {
        p(r, c) = 0.0;
        continue;
      }
      p(r, c) = std::exp(scores(r, c) - mx);
      total += p(r, c);
    }
    p.row(r) /= total;
  }
  return p;
}

void check_mask(const std::vector<bool>& key_mask, Index n_keys) {
  if (key_mask.empty()) {
    if (n_keys == 0) throw std::invalid_argument("attention: no keys");
    return;
  }
  if (static_cast<Index>(key_mask.size()) != n_keys) {
    throw std::invalid_argument("attention: mask length differs from key count");
  }
  for (bool m : key_mask) {
    if (m) return;
  }
  throw std::invalid_argument("attention: all keys are masked");
}

}  // namespace

Matrix attention_weights(const Matrix& q, const Matrix& k, const std::vector<bool>& key_mask) {
  check_mask(key_mask, k.rows());
  if (q.cols() != k.cols()) throw std::invalid_argument("attention: query/key widths differ");
  const Matrix scores = (q * k.transpose()) / std::sqrt(double(q.cols()));
  return masked_softmax(scores, key_mask);
}

Var attention(Var q, Var k, Var v, const std::vector<bool>& key_mask, int heads) {
  require_same_tape(q, k);
  require_same_tape(q, v);
  const Matrix& qv = q.value();
  const Matrix& kv = k.value();
  const Matrix& vv = v.value();
  if (qv.cols() != kv.cols()) throw std::invalid_argument("attention: query/key widths differ");
  if (kv.rows() != vv.rows()) throw std::invalid_argument("attention: key/value counts differ");
  if (heads <= 0 || qv.cols() % heads != 0 || vv.cols() % heads != 0) {
    throw std::invalid_argument("attention: widths not divisible by head count");
  }
  check_mask(key_mask, kv.rows());

  const Index dh = qv.cols() / heads;
  const Index dvh = vv.cols() / heads;
  const double inv_sqrt = 1.0 / std::sqrt(double(dh));
  Matrix out(qv.rows(), vv.cols());
  std::vector<Matrix> probs(static_cast<std::size_t>(heads));
  for (int h = 0; h < heads; ++h) {
    const Matrix scores = (qv.middleCols(h * dh, dh) * kv.middleCols(h * dh, dh).transpose()) * inv_sqrt;
    probs[std::size_t(h)] = masked_softmax(scores, key_mask);
    out.middleCols(h * dvh, dvh).noalias() = probs[std::size_t(h)] * vv.middleCols(h * dvh, dvh);
  }
  const double nq = double(qv.rows());
  const double nk = double(kv.rows());
  const double flops = 2.0 * nq * nk * double(qv.cols()) + 2.0 * nq * nk * double(vv.cols()) + 3.0 * heads * nq * nk;
  return q.tape->push(
      std::move(out),
      [q = q.id, k = k.id, v = v.id, probs = std::move(probs), heads, dh, dvh, inv_sqrt](Tape& t,
                                                                                        std::size_t self) {
        const Matrix& dout = t.grad(self);
        const Matrix& qv2 = t.value(q);
        const Matrix& kv2 = t.value(k);
        const Matrix& vv2 = t.value(v);
        Matrix& dq = t.grad(q);
        Matrix& dk = t.grad(k);
        Matrix& dv = t.grad(v);
        for (int h = 0; h < heads; ++h) {
          const Matrix& p = probs[std::size_t(h)];
          const auto dout_h = dout.middleCols(h * dvh, dvh);
          dv.middleCols(h * dvh, dvh).noalias() += p.transpose() * dout_h;
          const Matrix dp = dout_h * vv2.middleCols(h * dvh, dvh).transpose();
          Matrix ds = p.cwiseProduct(dp);
          const Eigen::VectorXd rowdot = ds.rowwise().sum();
          ds -= p.cwiseProduct(rowdot.replicate(1, p.cols()));
          ds *= inv_sqrt;
          dq.middleCols(h * dh, dh).noalias() += ds * kv2.middleCols(h * dh, dh);
          dk.middleCols(h * dh, dh).noalias() += ds.transpose() * qv2.middleCols(h * dh, dh);
        }
      },
      flops);
}

Var log_softmax_rows(Var x) {
  const Matrix& xv = x.value();
  Matrix out(xv.rows(), xv.cols());
  for (Index r = 0; r < xv.rows(); ++r) {
    const double mx = xv.row(r).maxCoeff();
    const double lse = mx + std::log((xv.row(r).array() - mx).exp().sum());
    out.row(r) = xv.row(r).array() - lse;
  }
  return x.tape->push(
      std::move(out),
      [x = x.id](Tape& t, std::size_t self) {
        const Matrix& y = t.value(self);
        const Matrix& g = t.grad(self);
        const Matrix p = y.array().exp().matrix();
        const Eigen::VectorXd gs = g.rowwise().sum();
        t.grad(x) += g - p.cwiseProduct(gs.replicate(1, p.cols()));
      },
      4.0 * double(xv.size()));
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: no parts");
  Tape* tape = parts[0].tape;
  const Index cols = parts[0].cols();
  Index rows = 0;
  for (const Var& p : parts) {
    if (p.tape != tape) throw std::invalid_argument("concat_rows: mixed tapes");
    if (p.cols() != cols) throw std::invalid_argument("concat_rows: column mismatch");
    rows += p.rows();
  }
  Matrix out(rows, cols);
  std::vector<std::pair<std::size_t, Index>> layout;
  Index at = 0;
  for (const Var& p : parts) {
    out.middleRows(at, p.rows()) = p.value();
    layout.emplace_back(p.id, at);
    at += p.rows();
  }
  return tape->push(
      std::move(out),
      [layout = std::move(layout)](Tape& t, std::size_t self) {
        const Matrix g = t.grad(self);
        for (const auto& [id, offset] : layout) {
          const Index n = t.value(id).rows();
          t.grad(id) += g.middleRows(offset, n);
        }
      },
      0.0);
}

Var slice_rows(Var x, Index begin, Index count) {
  if (begin < 0 || count < 0 || begin + count > x.rows()) throw std::out_of_range("slice_rows");
  Matrix out = x.value().middleRows(begin, count);
  return x.tape->push(
      std::move(out),
      [x = x.id, begin, count](Tape& t, std::size_t self) {
        t.grad(x).middleRows(begin, count) += t.grad(self);
      },
      0.0);
}

Var gather_rows(Var table, std::span<const Index> rows) {
  const Matrix& tv = table.value();
  Matrix out(static_cast<Index>(rows.size()), tv.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= tv.rows()) throw std::out_of_range("gather_rows: index out of range");
    out.row(static_cast<Index>(i)) = tv.row(rows[i]);
  }
  std::vector<Index> idx(rows.begin(), rows.end());
  return table.tape->push(
      std::move(out),
      [table = table.id, idx = std::move(idx)](Tape& t, std::size_t self) {
        const Matrix g = t.grad(self);
        Matrix& gt = t.grad(table);
        for (std::size_t i = 0; i < idx.size(); ++i) gt.row(idx[i]) += g.row(static_cast<Index>(i));
      },
      0.0);
}

Var flatten_row(Var x) {
  const Matrix& xv = x.value();
  Matrix out(1, xv.size());
  for (Index r = 0; r < xv.rows(); ++r) {
    for (Index c = 0; c < xv.cols(); ++c) out(0, r * xv.cols() + c) = xv(r, c);
  }
  return x.tape->push(
      std::move(out),
      [x = x.id](Tape& t, std::size_t self) {
        const Matrix g = t.grad(self);
        Matrix& gx = t.grad(x);
        for (Index r = 0; r < gx.rows(); ++r) {
          for (Index c = 0; c < gx.cols(); ++c) gx(r, c) += g(0, r * gx.cols() + c);
        }
      },
      0.0);
}

Var mask_rows(Var x, const std::vector<bool>& keep) {
  if (static_cast<Index>(keep.size()) != x.rows()) throw std::invalid_argument("mask_rows: length mismatch");
  Matrix out = x.value();
  for (Index r = 0; r < out.rows(); ++r) {
    if (!keep[std::size_t(r)]) out.row(r).setZero();
  }
  return x.tape->push(
      std::move(out),
      [x = x.id, keep](Tape& t, std::size_t self) {
        const Matrix g = t.grad(self);
        Matrix& gx = t.grad(x);
        for (Index r = 0; r < g.rows(); ++r) {
          if (keep[std::size_t(r)]) gx.row(r) += g.row(r);
        }
      },
      0.0);
}

Var sum(Var x) {
  Matrix out(1, 1);
  out(0, 0) = x.value().sum();
  return x.tape->push(
      std::move(out),
      [x = x.id](Tape& t, std::size_t self) { t.grad(x).array() += t.grad(self)(0, 0); },
      double(x.value().size()));
}

Var weighted_sum(Var x, const Matrix& w) {
  if (w.rows() != x.rows() || w.cols() != x.cols()) throw std::invalid_argument("weighted_sum: shape mismatch");
  Matrix out(1, 1);
  out(0, 0) = x.value().cwiseProduct(w).sum();
  return x.tape->push(
      std::move(out),
      [x = x.id, w](Tape& t, std::size_t self) { t.grad(x) += w * t.grad(self)(0, 0); },
      2.0 * double(w.size()));
}

Var element(Var x, Index r, Index c) {
  if (r < 0 || c < 0 || r >= x.rows() || c >= x.cols()) throw std::out_of_range("element");
  Matrix out(1, 1);
  out(0, 0) = x.value()(r, c);
  return x.tape->push(
      std::move(out),
      [x = x.id, r, c](Tape& t, std::size_t self) { t.grad(x)(r, c) += t.grad(self)(0, 0); },
      0.0);
}

int conv_output_size(int input, int kernel, int stride) {
  const int pad = kernel / 2;
  return (input + 2 * pad - kernel) / stride + 1;
}

Var conv2d(Var input, int height, int width, Var weight, Var bias, int kernel, int stride) {
  require_same_tape(input, weight);
  require_same_tape(input, bias);
  const Matrix& x = input.value();
  const Index cin = x.cols();
  if (x.rows() != Index(height) * width) throw std::invalid_argument("conv2d: input rows != height*width");
  if (weight.rows() != Index(kernel) * kernel * cin) throw std::invalid_argument("conv2d: weight rows mismatch");
  if (bias.rows() != 1 || bias.cols() != weight.cols()) throw std::invalid_argument("conv2d: bias shape mismatch");
  const int pad = kernel / 2;
  const int oh = conv_output_size(height, kernel, stride);
  const int ow = conv_output_size(width, kernel, stride);
  Matrix col = Matrix::Zero(Index(oh) * ow, Index(kernel) * kernel * cin);
  for (int oy = 0; oy < oh; ++oy) {
    for (int ox = 0; ox < ow; ++ox) {
      const Index row = Index(oy) * ow + ox;
      for (int ky = 0; ky < kernel; ++ky) {
        const int iy = oy * stride + ky - pad;
        if (iy < 0 || iy >= height) continue;
        for (int kx = 0; kx < kernel; ++kx) {
          const int ix = ox * stride + kx - pad;
          if (ix < 0 || ix >= width) continue;
          col.row(row).segment((Index(ky) * kernel + kx) * cin, cin) = x.row(Index(iy) * width + ix);
        }
      }
    }
  }
  Matrix out = col * weight.value();
  out.rowwise() += bias.value().row(0);
  const double flops = 2.0 * double(col.rows()) * double(col.cols()) * double(weight.cols());
  return input.tape->push(
      std::move(out),
      [in = input.id, w = weight.id, b = bias.id, col = std::move(col), height, width, kernel, stride, pad, oh, ow,
       cin](Tape& t, std::size_t self) {
        const Matrix& g = t.grad(self);
        t.grad(b) += g.colwise().sum();
        t.grad(w).noalias() += col.transpose() * g;
        const Matrix dcol = g * t.value(w).transpose();
        Matrix& dx = t.grad(in);
        for (int oy = 0; oy < oh; ++oy) {
          for (int ox = 0; ox < ow; ++ox) {
            const Index row = Index(oy) * ow + ox;
            for (int ky = 0; ky < kernel; ++ky) {
              const int iy = oy * stride + ky - pad;
              if (iy < 0 || iy >= height) continue;
              for (int kx = 0; kx < kernel; ++kx) {
                const int ix = ox * stride + kx - pad;
                if (ix < 0 || ix >= width) continue;
                dx.row(Index(iy) * width + ix) += dcol.row(row).segment((Index(ky) * kernel + kx) * cin, cin);
              }
            }
          }
        }
      },
      flops);
}

}  // namespace pac::ad
