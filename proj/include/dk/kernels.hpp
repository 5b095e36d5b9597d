#pragma once

// Data-parallel inner loops with a portable scalar reference and an AVX2
// variant. The variant is chosen once at startup from CPUID; DK_ISA=scalar
// in the environment or force_isa() overrides it.
//
// Every AVX2 kernel is bit-identical to its scalar reference: the scalar
// code replicates the 4-lane accumulation order and uses std::fma wherever
// the vector code uses a fused multiply-add.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "dk/kernel_variants.hpp"

namespace dk::kernels {

enum class Isa { scalar, avx2 };

std::string_view to_string(Isa isa);
bool isa_supported(Isa isa);
Isa active_isa();
/// Throws std::invalid_argument if the CPU cannot run `isa`.
void force_isa(Isa isa);

/// Knowledge points stored as structure-of-arrays for vectorized scans.
struct PointSet {
  std::vector<std::uint32_t> xs, ys, zs;

  std::size_t size() const { return xs.size(); }
  bool empty() const { return xs.empty(); }
  void push_back(std::uint32_t x, std::uint32_t y, std::uint32_t z) {
    xs.push_back(x);
    ys.push_back(y);
    zs.push_back(z);
  }
  /// Largest coordinate on any axis; 0 for an empty set.
  std::uint32_t max_coord() const;
};

/// Coordinates below this bound fit the 32-bit lane arithmetic of the
/// vectorized distance scan.
inline constexpr std::uint32_t kNarrowCoordLimit = 1u << 15;

/// Minimum squared distance from (qx, qy, qz) to any point of a non-empty set.
SqDistance min_sq_distance(const PointSet& points, std::uint32_t qx, std::uint32_t qy,
                           std::uint32_t qz);

double dot(std::span<const double> a, std::span<const double> b);

/// y[i] = fma(alpha, x[i], y[i])
void axpy(double alpha, std::span<const double> x, std::span<double> y);

/// Classical momentum: buf = mu * buf + grad; param = param - lr * buf.
void momentum_step(std::span<double> param, std::span<double> buf, std::span<const double> grad,
                   double lr, double mu);

}  // namespace dk::kernels
