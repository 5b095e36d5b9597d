#include "dk/kernels.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <stdexcept>
#include <string>

namespace dk::kernels {

namespace {

bool cpu_has_avx2() {
#if DK_HAVE_AVX2_KERNELS && (defined(__GNUC__) || defined(__clang__))
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

Isa detect() {
  if (const char* env = std::getenv("DK_ISA"); env && std::string_view(env) == "scalar")
    return Isa::scalar;
  return cpu_has_avx2() ? Isa::avx2 : Isa::scalar;
}

std::atomic<Isa>& current() {
  static std::atomic<Isa> isa{detect()};
  return isa;
}

void check_sizes(std::size_t a, std::size_t b, const char* what) {
  if (a != b) throw std::invalid_argument(std::string(what) + ": length mismatch");
}

}  // namespace

std::string_view to_string(Isa isa) { return isa == Isa::avx2 ? "avx2" : "scalar"; }

bool isa_supported(Isa isa) { return isa == Isa::scalar || cpu_has_avx2(); }

Isa active_isa() { return current().load(std::memory_order_relaxed); }

void force_isa(Isa isa) {
  if (!isa_supported(isa))
    throw std::invalid_argument("instruction set not supported: " + std::string(to_string(isa)));
  current().store(isa, std::memory_order_relaxed);
}

std::uint32_t PointSet::max_coord() const {
  std::uint32_t m = 0;
  for (auto v : xs) m = std::max(m, v);
  for (auto v : ys) m = std::max(m, v);
  for (auto v : zs) m = std::max(m, v);
  return m;
}

SqDistance min_sq_distance(const PointSet& points, std::uint32_t qx, std::uint32_t qy,
                           std::uint32_t qz) {
  if (points.empty()) throw std::invalid_argument("min_sq_distance: empty point set");
#if DK_HAVE_AVX2_KERNELS
  if (active_isa() == Isa::avx2 && qx < kNarrowCoordLimit && qy < kNarrowCoordLimit &&
      qz < kNarrowCoordLimit && points.max_coord() < kNarrowCoordLimit)
    return avx2::min_sq_distance_narrow(points.xs.data(), points.ys.data(), points.zs.data(),
                                         points.size(), qx, qy, qz);
#endif
  return scalar::min_sq_distance(points.xs.data(), points.ys.data(), points.zs.data(),
                                 points.size(), qx, qy, qz);
}

double dot(std::span<const double> a, std::span<const double> b) {
  check_sizes(a.size(), b.size(), "dot");
#if DK_HAVE_AVX2_KERNELS
  if (active_isa() == Isa::avx2) return avx2::dot(a.data(), b.data(), a.size());
#endif
  return scalar::dot(a.data(), b.data(), a.size());
}

void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  check_sizes(x.size(), y.size(), "axpy");
#if DK_HAVE_AVX2_KERNELS
  if (active_isa() == Isa::avx2) return avx2::axpy(alpha, x.data(), y.data(), x.size());
#endif
  scalar::axpy(alpha, x.data(), y.data(), x.size());
}

void momentum_step(std::span<double> param, std::span<double> buf, std::span<const double> grad,
                   double lr, double mu) {
  check_sizes(param.size(), buf.size(), "momentum_step");
  check_sizes(param.size(), grad.size(), "momentum_step");
#if DK_HAVE_AVX2_KERNELS
  if (active_isa() == Isa::avx2)
    return avx2::momentum_step(param.data(), buf.data(), grad.data(), param.size(), lr, mu);
#endif
  scalar::momentum_step(param.data(), buf.data(), grad.data(), param.size(), lr, mu);
}

}  // namespace dk::kernels
