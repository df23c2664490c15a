#include <atomic>
#include <cstdlib>
#include <cstring>

#include "pmt/core/error.hpp"
#include "pmt/gradcore/kernels.hpp"

namespace pmt::kernels {

#if defined(PMT_HAVE_AVX2)
namespace detail {
const KernelTable<float>* avx2_table_impl();
}
#endif

namespace {

bool cpu_has_avx2() {
#if defined(PMT_HAVE_AVX2) && (defined(__GNUC__) || defined(__clang__))
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

Backend initial_backend() {
  const char* env = std::getenv("PMT_SIMD");
  if (env != nullptr && std::strcmp(env, "scalar") == 0) return Backend::kScalar;
  return cpu_has_avx2() ? Backend::kAvx2 : Backend::kScalar;
}

std::atomic<Backend>& backend_slot() {
  static std::atomic<Backend> slot{initial_backend()};
  return slot;
}

}  // namespace

std::string_view backend_name(Backend b) {
  switch (b) {
    case Backend::kScalar:
      return "scalar";
    case Backend::kAvx2:
      return "avx2";
  }
  return "unknown";
}

bool avx2_available() {
  static const bool available = cpu_has_avx2();
  return available;
}

const KernelTable<float>* avx2_table() {
#if defined(PMT_HAVE_AVX2)
  return avx2_available() ? detail::avx2_table_impl() : nullptr;
#else
  return nullptr;
#endif
}

void set_backend(Backend b) {
  if (b == Backend::kAvx2 && !avx2_available()) {
    throw Error("AVX2 kernels requested but not available on this CPU/build");
  }
  backend_slot().store(b);
}

Backend current_backend() { return backend_slot().load(); }

template <>
const KernelTable<float>& active<float>() {
  if (backend_slot().load(std::memory_order_relaxed) == Backend::kAvx2) {
    return *avx2_table();
  }
  return scalar_table<float>();
}

template <>
const KernelTable<double>& active<double>() {
  return scalar_table<double>();
}

}  // namespace pmt::kernels
