#pragma once

#include <Eigen/Dense>
#include <span>
#include <vector>

namespace isostruct {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
/// N×3 point cloud, one atom per row (Å).
using Coords = Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>;

/// Atoms of a molecule: atomic numbers, masses (amu) and positions (Å).
/// Immutable once constructed; `with_positions` returns a modified copy.
class Molecule {
 public:
  Molecule(std::vector<int> atomic_numbers, std::vector<double> masses, Coords positions);

  /// Masses taken from the element table.
  static Molecule from_elements(std::vector<int> atomic_numbers, Coords positions);

  std::size_t size() const { return atomic_numbers_.size(); }
  const std::vector<int>& atomic_numbers() const { return atomic_numbers_; }
  const std::vector<double>& masses() const { return masses_; }
  const Coords& positions() const { return positions_; }
  double total_mass() const;

  Molecule with_positions(Coords positions) const;
  /// Keeps the listed atoms, in the given order.
  Molecule subset(std::span<const int> indices) const;
  /// Indices of all non-hydrogen atoms.
  std::vector<int> heavy_indices() const;

 private:
  std::vector<int> atomic_numbers_;
  std::vector<double> masses_;
  Coords positions_;
};

/// Planar moments P_X >= P_Y >= P_Z (amu·Å²). The constructor sorts.
struct PlanarMoments {
  double p_x = 0.0;
  double p_y = 0.0;
  double p_z = 0.0;

  PlanarMoments() = default;
  PlanarMoments(double a, double b, double c);

  double sum() const { return p_x + p_y + p_z; }
  double operator[](int axis) const { return axis == 0 ? p_x : (axis == 1 ? p_y : p_z); }
};

struct PasAlignment {
  Coords aligned_positions;
  Mat3 rotation;  // columns are principal axes; aligned = (x - com) * rotation
  PlanarMoments planar_moments;
  Vec3 com_shift;
};

struct SymEig3 {
  Vec3 values;   // descending
  Mat3 vectors;  // column k pairs with values[k]; det = +1
};

inline constexpr double kDegeneracyTol = 1e-6;  // amu·Å²

Vec3 weighted_com(const Molecule& mol);
Vec3 weighted_com(const Coords& positions, std::span<const double> masses);

/// Σ m x xᵀ. Throws ComNotZero if the weighted CoM is farther than 1e-6 Å
/// from the origin.
Mat3 planar_dyadic(const Molecule& mol);
/// Σ m (|x|² I − x xᵀ); same precondition as planar_dyadic.
Mat3 inertia_matrix(const Molecule& mol);

/// Σ m x xᵀ about the origin, no CoM check.
Mat3 planar_dyadic_about_origin(const Coords& positions, std::span<const double> masses);

/// Symmetric 3×3 eigendecomposition. Closed form with a Jacobi fallback
/// when eigenvalues are close. Each eigenvector is signed so that its
/// largest-magnitude component is positive; the third column is flipped if
/// needed to make det = +1. Throws NotSymmetric.
SymEig3 sym_eig3(const Mat3& m);

/// Reference cyclic-Jacobi eigensolver, same output conventions.
SymEig3 sym_eig3_jacobi(const Mat3& m);

/// Translates to zero weighted CoM and rotates onto the principal axes so
/// the planar dyadic becomes diag(P_X, P_Y, P_Z). Throws DegenerateTop when
/// two planar moments are closer than `degeneracy_tol`.
PasAlignment align_to_pas(const Molecule& mol, double degeneracy_tol = kDegeneracyTol);

/// The 8 axial reflections diag(±1, ±1, ±1); index bit k set flips axis k.
Vec3 axial_reflection(int index);

/// Rows sqrt(m_i) x_i, so that yᵀy is the planar dyadic.
Eigen::MatrixX3d mass_weighted(const Coords& positions, std::span<const double> masses);
/// Eigenvalues of yᵀy, descending, as squared singular values of y.
Vec3 factored_planar_moments(const Eigen::MatrixX3d& y);

}  // namespace isostruct
