// Copyright 2026 The PAC Authors
// SPDX-License-Identifier: Apache-2.0

#include "pac/value_bins.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace pac {

void ValueBins::validate() const {
  if (!(q_min < q_max) || !std::isfinite(q_min) || !std::isfinite(q_max)) {
    throw std::invalid_argument("ValueBins: require finite q_min < q_max");
  }
  if (count < 2) throw std::invalid_argument("ValueBins: count must be at least 2");
}

Eigen::VectorXd ValueBins::centers() const {
  Eigen::VectorXd c(count);
  for (int i = 0; i < count; ++i) c(i) = center(i);
  return c;
}

int ValueBins::nearest(double value) const {
  if (std::isnan(value)) throw std::domain_error("ValueBins::nearest: NaN value");
  const double t = std::clamp(value, q_min, q_max);
  // ceil(x - 0.5) rounds halves down.
  const double x = (t - q_min) / epsilon();
  const int i = static_cast<int>(std::ceil(x - 0.5));
  return std::clamp(i, 0, count - 1);
}

Eigen::RowVectorXd softmax_row(const Eigen::RowVectorXd& logits) {
  const double m = logits.maxCoeff();
  Eigen::RowVectorXd p = (logits.array() - m).exp().matrix();
  return p / p.sum();
}

double q_value(const Eigen::MatrixXd& logits, const ValueBins& bins) {
  if (logits.size() != bins.count) throw std::invalid_argument("q_value: logits size does not match bins");
  Eigen::RowVectorXd row = Eigen::Map<const Eigen::RowVectorXd>(logits.data(), logits.size());
  const Eigen::RowVectorXd p = softmax_row(row);
  return p.dot(bins.centers().transpose());
}

}  // namespace pac
