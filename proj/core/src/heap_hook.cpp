// Global allocation functions feeding attralign::memory's heap counters.
#include <malloc.h>

#include <cstdlib>
#include <new>

#include "attralign/memory.hpp"

namespace {

struct Enable {
  Enable() { attralign::memory::detail::mark_tracking(); }
} g_enable;

void* tracked_alloc(std::size_t size) {
  void* p = std::malloc(size == 0 ? 1 : size);
  if (p) attralign::memory::detail::on_allocate(malloc_usable_size(p));
  return p;
}

void tracked_free(void* p) {
  if (!p) return;
  attralign::memory::detail::on_release(malloc_usable_size(p));
  std::free(p);
}

}  // namespace

void* operator new(std::size_t size) {
  if (void* p = tracked_alloc(size)) return p;
  throw std::bad_alloc();
}
void* operator new[](std::size_t size) { return operator new(size); }
void* operator new(std::size_t size, const std::nothrow_t&) noexcept { return tracked_alloc(size); }
void* operator new[](std::size_t size, const std::nothrow_t&) noexcept { return tracked_alloc(size); }
void operator delete(void* p) noexcept { tracked_free(p); }
void operator delete[](void* p) noexcept { tracked_free(p); }
void operator delete(void* p, std::size_t) noexcept { tracked_free(p); }
void operator delete[](void* p, std::size_t) noexcept { tracked_free(p); }
void operator delete(void* p, const std::nothrow_t&) noexcept { tracked_free(p); }
void operator delete[](void* p, const std::nothrow_t&) noexcept { tracked_free(p); }
