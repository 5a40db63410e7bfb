#pragma once

#include <cstddef>
#include <optional>

namespace attralign::memory {

/// Heap counters. They only move in executables that link the
/// attralign::heap_hook object, which replaces global operator new/delete.
bool heap_tracking_enabled();
std::size_t heap_current_bytes();
std::size_t heap_peak_bytes();
/// Sets the peak to the current live byte count.
void reset_heap_peak();

/// Peak resident set (VmHWM) in bytes, read from /proc; empty where unavailable.
std::optional<std::size_t> resident_peak_bytes();
/// Resets VmHWM to the current RSS. Returns false where unsupported.
bool reset_resident_peak();

namespace detail {
void on_allocate(std::size_t bytes);
void on_release(std::size_t bytes);
void mark_tracking();
}  // namespace detail

}  // namespace attralign::memory
