#include <atomic>
#include <cstdlib>
#include <string_view>

#include "friendnet/simd/kernels.hpp"

namespace friendnet::simd {
namespace {

Level probe() noexcept {
#if defined(FRIENDNET_HAVE_AVX2) && (defined(__GNUC__) || defined(__clang__)) && \
    (defined(__x86_64__) || defined(__i386__))
  __builtin_cpu_init();
  if (__builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma")) return Level::kAvx2;
#endif
  return Level::kScalar;
}

Level initial_level() noexcept {
  const Level detected = probe();
  if (const char* env = std::getenv("FRIENDNET_SIMD")) {
    const std::string_view v(env);
    if (v == "scalar") return Level::kScalar;
    if (v == "avx2") return detected;
  }
  return detected;
}

std::atomic<Level>& active() noexcept {
  static std::atomic<Level> level{initial_level()};
  return level;
}

}  // namespace

Level detected_level() noexcept {
  static const Level level = probe();
  return level;
}

Level active_level() noexcept { return active().load(std::memory_order_relaxed); }

Level set_active_level(Level requested) noexcept {
  const Level level = static_cast<int>(requested) > static_cast<int>(detected_level()) ? detected_level() : requested;
  active().store(level, std::memory_order_relaxed);
  return level;
}

std::string_view level_name(Level level) noexcept {
  switch (level) {
    case Level::kAvx2:
      return "avx2";
    case Level::kScalar:
      break;
  }
  return "scalar";
}

template <typename T>
const KernelTable<T>& kernels(Level level) noexcept {
#if defined(FRIENDNET_HAVE_AVX2)
  if (level == Level::kAvx2 && detected_level() == Level::kAvx2) return avx2::table<T>();
#else
  (void)level;
#endif
  return scalar::table<T>();
}

template <typename T>
const KernelTable<T>& kernels() noexcept {
  return kernels<T>(active_level());
}

template const KernelTable<float>& kernels<float>(Level) noexcept;
template const KernelTable<double>& kernels<double>(Level) noexcept;
template const KernelTable<float>& kernels<float>() noexcept;
template const KernelTable<double>& kernels<double>() noexcept;

}  // namespace friendnet::simd
