#pragma once

// Raw-pointer entry points for each instruction-set variant. This header is
// the only one the AVX2 translation unit includes, so no inline library code
// gets compiled there with wider instructions than the baseline.

#include <cstddef>
#include <cstdint>

namespace dk::kernels {

using SqDistance = unsigned __int128;

namespace scalar {
SqDistance min_sq_distance(const std::uint32_t* xs, const std::uint32_t* ys,
                           const std::uint32_t* zs, std::size_t n, std::uint32_t qx,
                           std::uint32_t qy, std::uint32_t qz);
double dot(const double* a, const double* b, std::size_t n);
void axpy(double alpha, const double* x, double* y, std::size_t n);
void momentum_step(double* param, double* buf, const double* grad, std::size_t n, double lr,
                   double mu);
}  // namespace scalar

#if defined(__x86_64__) || defined(_M_X64)
#define DK_HAVE_AVX2_KERNELS 1
namespace avx2 {
/// Requires every coordinate and the query below 2^15.
std::uint64_t min_sq_distance_narrow(const std::uint32_t* xs, const std::uint32_t* ys,
                                     const std::uint32_t* zs, std::size_t n, std::uint32_t qx,
                                     std::uint32_t qy, std::uint32_t qz);
double dot(const double* a, const double* b, std::size_t n);
void axpy(double alpha, const double* x, double* y, std::size_t n);
void momentum_step(double* param, double* buf, const double* grad, std::size_t n, double lr,
                   double mu);
}  // namespace avx2
#else
#define DK_HAVE_AVX2_KERNELS 0
#endif

}  // namespace dk::kernels
