// Copyright 2026 The PAC Authors
// SPDX-License-Identifier: Apache-2.0

#include "pac/logging.hpp"

#include <atomic>
#include <iostream>
#include <mutex>

namespace pac {

namespace {
std::atomic<std::size_t> g_warnings{0};
std::atomic<bool> g_silenced{false};
std::mutex g_mutex;
}  // namespace

void log_warning(std::string_view message) {
  ++g_warnings;
  if (g_silenced) return;
  std::lock_guard<std::mutex> lock(g_mutex);
  std::cerr << "[pac warning] " << message << '\n';
}

std::size_t warning_count() { return g_warnings; }

void set_warnings_silenced(bool silenced) { g_silenced = silenced; }

}  // namespace pac
