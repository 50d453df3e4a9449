// Copyright 2026 The PAC Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef PAC_LOGGING_HPP
#define PAC_LOGGING_HPP

#include <cstddef>
#include <string_view>

namespace pac {

/// Writes one line to stderr unless warnings are silenced.
void log_warning(std::string_view message);
/// Warnings emitted since process start (counted even when silenced).
std::size_t warning_count();
void set_warnings_silenced(bool silenced);

}  // namespace pac

#endif  // PAC_LOGGING_HPP
