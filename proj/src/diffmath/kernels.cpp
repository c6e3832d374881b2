#include "alm/diffmath/kernels.hpp"

#include <atomic>
#include <cstdlib>
#include <string>

namespace alm::kernels {

const KernelTable* avx2_table_impl();

namespace {

bool cpu_has_avx2() {
#if defined(__x86_64__) || defined(__i386__)
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

const KernelTable* pick_default() {
  if (const char* env = std::getenv("ALM_SIMD")) {
    if (std::string(env) == "scalar") return &scalar_table();
  }
  if (const KernelTable* t = avx2_table()) return t;
  return &scalar_table();
}

std::atomic<const KernelTable*>& slot() {
  static std::atomic<const KernelTable*> current{pick_default()};
  return current;
}

}  // namespace

const KernelTable* avx2_table() {
  static const bool supported = cpu_has_avx2();
  return supported ? avx2_table_impl() : nullptr;
}

const KernelTable& active() { return *slot().load(std::memory_order_relaxed); }

void select(Backend backend) {
  const KernelTable* t = &scalar_table();
  if (backend == Backend::kAvx2 && avx2_table() != nullptr) t = avx2_table();
  slot().store(t, std::memory_order_relaxed);
}

std::string_view backend_name(Backend backend) {
  return backend == Backend::kAvx2 ? "avx2" : "scalar";
}

}  // namespace alm::kernels
