// Compiled with -mavx2 -mfma. Nothing in here may run before the dispatcher
// has confirmed CPU support.

#include <immintrin.h>

#include <cmath>

#include "dk/kernel_variants.hpp"

namespace dk::kernels::avx2 {

namespace {

inline __m256i abs_diff_epu32(__m256i a, __m256i b) {
  return _mm256_sub_epi32(_mm256_max_epu32(a, b), _mm256_min_epu32(a, b));
}

inline __m256i load8(const std::uint32_t* p) {
  return _mm256_loadu_si256(reinterpret_cast<const __m256i*>(p));
}

}  // namespace

std::uint64_t min_sq_distance_narrow(const std::uint32_t* xs, const std::uint32_t* ys,
                                     const std::uint32_t* zs, std::size_t n, std::uint32_t qx,
                                     std::uint32_t qy, std::uint32_t qz) {
  const __m256i vx = _mm256_set1_epi32(static_cast<int>(qx));
  const __m256i vy = _mm256_set1_epi32(static_cast<int>(qy));
  const __m256i vz = _mm256_set1_epi32(static_cast<int>(qz));
  // Each |diff| < 2^15, so every square < 2^30 and the sum of three < 2^32.
  __m256i best = _mm256_set1_epi32(-1);
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    const __m256i dx = abs_diff_epu32(load8(xs + i), vx);
    const __m256i dy = abs_diff_epu32(load8(ys + i), vy);
    const __m256i dz = abs_diff_epu32(load8(zs + i), vz);
    __m256i d = _mm256_mullo_epi32(dx, dx);
    d = _mm256_add_epi32(d, _mm256_mullo_epi32(dy, dy));
    d = _mm256_add_epi32(d, _mm256_mullo_epi32(dz, dz));
    best = _mm256_min_epu32(best, d);
  }
  __m128i m = _mm_min_epu32(_mm256_castsi256_si128(best), _mm256_extracti128_si256(best, 1));
  m = _mm_min_epu32(m, _mm_shuffle_epi32(m, _MM_SHUFFLE(1, 0, 3, 2)));
  m = _mm_min_epu32(m, _mm_shuffle_epi32(m, _MM_SHUFFLE(2, 3, 0, 1)));
  std::uint32_t result = static_cast<std::uint32_t>(_mm_cvtsi128_si32(m));
  for (; i < n; ++i) {
    const auto d = [](std::uint32_t a, std::uint32_t b) { return a > b ? a - b : b - a; };
    const std::uint32_t ex = d(xs[i], qx), ey = d(ys[i], qy),
                        ez = d(zs[i], qz);
    const std::uint32_t s = ex * ex + ey * ey + ez * ez;
    if (s < result) result = s;
  }
  return result;
}

double dot(const double* a, const double* b, std::size_t n) {
  __m256d acc = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) acc = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc);
  const __m128d lo = _mm256_castpd256_pd128(acc);
  const __m128d hi = _mm256_extractf128_pd(acc, 1);
  const __m128d pair = _mm_add_pd(lo, hi);  // (l0 + l2, l1 + l3)
  double r = _mm_cvtsd_f64(_mm_add_sd(pair, _mm_unpackhi_pd(pair, pair)));
  for (; i < n; ++i) r = std::fma(a[i], b[i], r);
  return r;
}

void axpy(double alpha, const double* x, double* y, std::size_t n) {
  const __m256d va = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(y + i, _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  for (; i < n; ++i) y[i] = std::fma(alpha, x[i], y[i]);
}

void momentum_step(double* param, double* buf, const double* grad, std::size_t n, double lr,
                   double mu) {
  const __m256d vlr = _mm256_set1_pd(lr);
  const __m256d vmu = _mm256_set1_pd(mu);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d b = _mm256_add_pd(_mm256_mul_pd(vmu, _mm256_loadu_pd(buf + i)),
                                    _mm256_loadu_pd(grad + i));
    _mm256_storeu_pd(buf + i, b);
    _mm256_storeu_pd(param + i, _mm256_sub_pd(_mm256_loadu_pd(param + i), _mm256_mul_pd(vlr, b)));
  }
  for (; i < n; ++i) {
    const double scaled = mu * buf[i];
    buf[i] = scaled + grad[i];
    const double delta = lr * buf[i];
    param[i] = param[i] - delta;
  }
}

}  // namespace dk::kernels::avx2
