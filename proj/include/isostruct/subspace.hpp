#pragma once

#include <random>
#include <span>
#include <vector>

#include "isostruct/geometry.hpp"

namespace isostruct {

/// Normalized masses m̃ (summing to one) with the cached ‖m̃‖².
class MassWeights {
 public:
  explicit MassWeights(std::span<const double> masses);

  std::size_t size() const { return normalized_.size(); }
  const std::vector<double>& normalized_masses() const { return normalized_; }
  double squared_norm() const { return squared_norm_; }

  /// Σ m̃_i x_i.
  Vec3 com(const Coords& x) const;

 private:
  std::vector<double> normalized_;
  double squared_norm_;
};

/// Orthogonal projection onto the zero weighted-CoM subspace:
/// x - m̃ x_comᵀ / ‖m̃‖². Inputs already in the subspace (CoM at rounding
/// level) are returned unchanged, which makes the projection idempotent in
/// floating point.
Coords project_zero_com(const Coords& x, const MassWeights& w);

/// Standard normal N×3 draw projected onto the subspace: N(0, Φ).
Coords sample_projected_gaussian(std::size_t n, const MassWeights& w, std::mt19937_64& rng);

}  // namespace isostruct
