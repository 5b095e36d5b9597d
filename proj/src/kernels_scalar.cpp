#include <cmath>

#include "dk/kernel_variants.hpp"

namespace dk::kernels::scalar {

namespace {

SqDistance sq_diff(std::uint32_t a, std::uint32_t b) {
  const std::uint64_t d = a > b ? a - b : b - a;
  return static_cast<SqDistance>(d) * d;
}

}  // namespace

SqDistance min_sq_distance(const std::uint32_t* xs, const std::uint32_t* ys,
                           const std::uint32_t* zs, std::size_t n, std::uint32_t qx,
                           std::uint32_t qy, std::uint32_t qz) {
  SqDistance best = ~SqDistance{0};
  for (std::size_t i = 0; i < n; ++i) {
    const SqDistance d = sq_diff(xs[i], qx) + sq_diff(ys[i], qy) + sq_diff(zs[i], qz);
    if (d < best) best = d;
  }
  return best;
}

// Four interleaved accumulators, reduced as (l0 + l2) + (l1 + l3), then the
// tail folded in sequentially. Mirrors the AVX2 register layout.
double dot(const double* a, const double* b, std::size_t n) {
  double acc[4] = {0.0, 0.0, 0.0, 0.0};
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    for (std::size_t l = 0; l < 4; ++l) acc[l] = std::fma(a[i + l], b[i + l], acc[l]);
  double r = (acc[0] + acc[2]) + (acc[1] + acc[3]);
  for (; i < n; ++i) r = std::fma(a[i], b[i], r);
  return r;
}

void axpy(double alpha, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] = std::fma(alpha, x[i], y[i]);
}

void momentum_step(double* param, double* buf, const double* grad, std::size_t n, double lr,
                   double mu) {
  for (std::size_t i = 0; i < n; ++i) {
    const double scaled = mu * buf[i];
    buf[i] = scaled + grad[i];
    const double delta = lr * buf[i];
    param[i] = param[i] - delta;
  }
}

}  // namespace dk::kernels::scalar
