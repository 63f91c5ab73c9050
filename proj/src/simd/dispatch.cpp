#include <atomic>
#include <cstdlib>
#include <string>

#include "kfdiff/simd/kernels.hpp"

namespace kfdiff::simd {
namespace {

Isa detect() {
  if (const char* env = std::getenv("KFDIFF_ISA"); env && std::string(env) == "scalar")
    return Isa::Scalar;
  return avx2_supported() ? Isa::Avx2 : Isa::Scalar;
}

std::atomic<Isa>& current() {
  static std::atomic<Isa> isa{detect()};
  return isa;
}

}  // namespace

bool avx2_supported() {
#if defined(__x86_64__) || defined(__i386__)
  static const bool ok = __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
  return ok;
#else
  return false;
#endif
}

Isa active_isa() { return current().load(std::memory_order_relaxed); }

void force_isa(Isa isa) {
  if (isa == Isa::Avx2 && !avx2_supported()) isa = Isa::Scalar;
  current().store(isa, std::memory_order_relaxed);
}

std::string_view isa_name(Isa isa) { return isa == Isa::Avx2 ? "avx2" : "scalar"; }

template <>
const KernelTable<float>& kernels<float>() {
  return active_isa() == Isa::Avx2 ? avx2_kernels_f32() : scalar_kernels_f32();
}

}  // namespace kfdiff::simd
