#include <cstdlib>
#include <stdexcept>
#include <string>

#include "kernels_detail.hpp"

namespace nodegam::kernels {
namespace {

Backend detect_backend() {
#if defined(NODEGAM_HAVE_AVX2) && defined(__GNUC__) && (defined(__x86_64__) || defined(__i386__))
  const bool hw = __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  const bool hw = false;
#endif
  if (const char* env = std::getenv("NODEGAM_KERNELS")) {
    const std::string v(env);
    if (v == "scalar") return Backend::scalar;
    if (v == "avx2") {
      if (!hw) throw std::runtime_error("NODEGAM_KERNELS=avx2 but CPU/build lacks AVX2+FMA");
      return Backend::avx2;
    }
    if (!v.empty() && v != "auto")
      throw std::runtime_error("NODEGAM_KERNELS must be scalar, avx2 or auto");
  }
  return hw ? Backend::avx2 : Backend::scalar;
}

Backend& current() {
  static Backend b = detect_backend();
  return b;
}

}  // namespace

bool cpu_supports_avx2() {
#if defined(NODEGAM_HAVE_AVX2) && defined(__GNUC__) && (defined(__x86_64__) || defined(__i386__))
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

Backend active_backend() { return current(); }

void set_backend(Backend b) {
  if (b == Backend::avx2 && !cpu_supports_avx2())
    throw std::runtime_error("AVX2 backend unavailable on this CPU/build");
  current() = b;
}

std::string backend_name(Backend b) {
  return b == Backend::avx2 ? "avx2" : "scalar";
}

const Ops& ops_for(Backend b) {
#if defined(NODEGAM_HAVE_AVX2)
  if (b == Backend::avx2) return avx2_ops;
#else
  (void)b;
#endif
  return scalar_ops;
}

const Ops& ops() { return ops_for(current()); }

}  // namespace nodegam::kernels
