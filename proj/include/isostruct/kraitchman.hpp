#pragma once

#include <Eigen/Dense>
#include <array>
#include <optional>
#include <random>

#include "isostruct/geometry.hpp"

namespace isostruct {

/// Rotational constants A > B > C in MHz.
struct RotationalConstants {
  double a;
  double b;
  double c;

  RotationalConstants(double a, double b, double c);
};

struct IsotopologueObservation {
  int substituted_element;
  double mass_delta;  // amu, non-zero
  RotationalConstants constants;
};

/// Unsigned substitution coordinates with their availability mask. Rows are
/// atoms; `values` is zero wherever `mask` is zero.
struct SubstitutionTable {
  Coords values;
  Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor> mask;

  static SubstitutionTable empty(Eigen::Index n);
  Eigen::Index rows() const { return values.rows(); }
  int available_count() const { return static_cast<int>(mask.sum()); }
};

struct DropoutConfig {
  double p_min = 0.0;
  double p_max = 0.0;
  bool carbon_only = false;
  double near_axis_threshold = 0.0;  // Å; 0 disables
};

/// h / (8π²) expressed in MHz·amu·Å² (≈ 505379.0), from CODATA h and the
/// atomic mass constant.
double rotational_conversion_constant();

PlanarMoments constants_to_planar_moments(const RotationalConstants& rc);
/// P from principal moments of inertia (amu·Å²), bypassing the MHz step.
PlanarMoments inertia_to_planar_moments(double i_x, double i_y, double i_z);
/// Throws NonPhysicalMoments if an implied moment of inertia is <= 0 or two
/// coincide.
RotationalConstants planar_moments_to_constants(const PlanarMoments& pm);

/// Planar moments of the isotopologue with atom `atom_index` changed by
/// `mass_delta`, about the isotopologue's own CoM. Uses the rank-one update
/// P* = P + (M m_d / (M + m_d)) x xᵀ.
PlanarMoments simulate_isotopologue(const Molecule& mol_in_pas, int atom_index, double mass_delta);

inline constexpr double kRadicandTol = 1e-9;

/// Unsigned (|x|, |y|, |z|) of the substituted atom; an entry is empty when
/// its radicand is negative beyond kRadicandTol. Throws DegenerateParent.
std::array<std::optional<double>, 3> kraitchman_coordinates(const PlanarMoments& parent,
                                                            const PlanarMoments& iso,
                                                            double total_mass, double mass_delta,
                                                            double degeneracy_tol = kDegeneracyTol);

/// Masked |positions| for training: rows of abundant elements survive with
/// probability 1 - p, p ~ U[p_min, p_max] drawn once per call.
SubstitutionTable build_substitution_table(const Molecule& mol_in_pas, const DropoutConfig& cfg,
                                           std::mt19937_64& rng);

}  // namespace isostruct
