// Copyright 2026 The PAC Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef PAC_VALUE_BINS_HPP
#define PAC_VALUE_BINS_HPP

#include <Eigen/Dense>

#include <vector>

namespace pac {

/// Evenly spaced support of the distributional critic.
struct ValueBins {
  double q_min = 0.0;
  double q_max = 1.0;
  int count = 101;

  void validate() const;
  double epsilon() const { return (q_max - q_min) / double(count - 1); }
  double center(int i) const { return q_min + double(i) * epsilon(); }
  Eigen::VectorXd centers() const;
  /// Index of the bin nearest to `value` after clipping into [q_min, q_max].
  /// Exact midpoints resolve to the lower bin.
  int nearest(double value) const;
};

/// Expectation of the bin centers under softmax(logits). `logits` is a row or
/// column with `bins.count` entries.
double q_value(const Eigen::MatrixXd& logits, const ValueBins& bins);

/// Softmax of a row vector, computed stably.
Eigen::RowVectorXd softmax_row(const Eigen::RowVectorXd& logits);

}  // namespace pac

#endif  // PAC_VALUE_BINS_HPP
