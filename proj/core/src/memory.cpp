#include "attralign/memory.hpp"

#include <atomic>
#include <fstream>
#include <string>

namespace attralign::memory {

namespace {
std::atomic<bool> g_tracking{false};
std::atomic<std::size_t> g_current{0};
std::atomic<std::size_t> g_peak{0};
}  // namespace

bool heap_tracking_enabled() { return g_tracking.load(std::memory_order_relaxed); }
std::size_t heap_current_bytes() { return g_current.load(std::memory_order_relaxed); }
std::size_t heap_peak_bytes() { return g_peak.load(std::memory_order_relaxed); }
void reset_heap_peak() { g_peak.store(g_current.load(std::memory_order_relaxed), std::memory_order_relaxed); }

std::optional<std::size_t> resident_peak_bytes() {
  std::ifstream in("/proc/self/status");
  std::string line;
  while (std::getline(in, line)) {
    if (line.rfind("VmHWM:", 0) == 0) return std::stoull(line.substr(6)) * 1024;
  }
  return std::nullopt;
}

bool reset_resident_peak() {
  std::ofstream out("/proc/self/clear_refs");
  if (!out) return false;
  out << "5";
  out.flush();
  return static_cast<bool>(out);
}

namespace detail {

void on_allocate(std::size_t bytes) {
  const std::size_t now = g_current.fetch_add(bytes, std::memory_order_relaxed) + bytes;
  std::size_t peak = g_peak.load(std::memory_order_relaxed);
  while (now > peak && !g_peak.compare_exchange_weak(peak, now, std::memory_order_relaxed)) {
  }
}

void on_release(std::size_t bytes) { g_current.fetch_sub(bytes, std::memory_order_relaxed); }

void mark_tracking() { g_tracking.store(true, std::memory_order_relaxed); }

}  // namespace detail

}  // namespace attralign::memory
