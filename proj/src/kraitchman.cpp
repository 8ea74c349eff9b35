#include "isostruct/kraitchman.hpp"

#include <cmath>
#include <numbers>

#include "isostruct/elements.hpp"
#include "isostruct/error.hpp"

namespace isostruct {

RotationalConstants::RotationalConstants(double a_, double b_, double c_) : a(a_), b(b_), c(c_) {
  if (!(c > 0.0) || !(a > b && b > c))
    throw Error(Errc::InvalidArgument, "rotational constants must satisfy A > B > C > 0");
}

SubstitutionTable SubstitutionTable::empty(Eigen::Index n) {
  SubstitutionTable t;
  t.values = Coords::Zero(n, 3);
  t.mask = decltype(t.mask)::Zero(n, 3);
  return t;
}

double rotational_conversion_constant() {
  constexpr double planck = 6.62607015e-34;       // J·s
  constexpr double amu = 1.66053907e-27;          // kg
  constexpr double angstrom2 = 1e-20;             // m²
  constexpr double mhz = 1e6;                     // Hz
  return planck / (8.0 * std::numbers::pi * std::numbers::pi * amu * angstrom2 * mhz);
}

PlanarMoments inertia_to_planar_moments(double i_x, double i_y, double i_z) {
  const double half = 0.5 * (i_x + i_y + i_z);
  return PlanarMoments(half - i_x, half - i_y, half - i_z);
}

PlanarMoments constants_to_planar_moments(const RotationalConstants& rc) {
  const double kappa = rotational_conversion_constant();
  return inertia_to_planar_moments(kappa / rc.a, kappa / rc.b, kappa / rc.c);
}

RotationalConstants planar_moments_to_constants(const PlanarMoments& pm) {
  const double i_x = pm.p_y + pm.p_z;
  const double i_y = pm.p_x + pm.p_z;
  const double i_z = pm.p_x + pm.p_y;
  if (!(i_x > 0.0) || !(i_x < i_y) || !(i_y < i_z))
    throw Error(Errc::NonPhysicalMoments, "implied moments of inertia must be positive and distinct");
  const double kappa = rotational_conversion_constant();
  return RotationalConstants(kappa / i_x, kappa / i_y, kappa / i_z);
}

PlanarMoments simulate_isotopologue(const Molecule& mol_in_pas, int atom_index, double mass_delta) {
  if (atom_index < 0 || static_cast<std::size_t>(atom_index) >= mol_in_pas.size())
    throw Error(Errc::IndexOutOfRange, "atom index " + std::to_string(atom_index));
  const auto i = static_cast<std::size_t>(atom_index);
  if (!(mol_in_pas.masses()[i] + mass_delta > 0.0))
    throw Error(Errc::NonPositiveMass, "substituted mass must stay positive");

  Mat3 p = planar_dyadic(mol_in_pas);  // also checks the CoM
  const double total = mol_in_pas.total_mass();
  const double reduced = total * mass_delta / (total + mass_delta);
  const Vec3 x = mol_in_pas.positions().row(atom_index).transpose();
  if (reduced < 0.0) {
    p.noalias() += reduced * (x * x.transpose());
    const SymEig3 eig = sym_eig3(p);
    return PlanarMoments(eig.values[0], eig.values[1], std::max(eig.values[2], 0.0));
  }
  // P* = YᵀY + r x xᵀ is the Gram matrix of Y with one extra row √r xᵀ.
  const auto n = static_cast<Eigen::Index>(mol_in_pas.size());
  Eigen::MatrixX3d y(n + 1, 3);
  y.topRows(n) = mass_weighted(mol_in_pas.positions(), mol_in_pas.masses());
  y.row(n) = std::sqrt(reduced) * x.transpose();
  const Vec3 v = factored_planar_moments(y);
  return PlanarMoments(v[0], v[1], v[2]);
}

std::array<std::optional<double>, 3> kraitchman_coordinates(const PlanarMoments& parent,
                                                            const PlanarMoments& iso,
                                                            double total_mass, double mass_delta,
                                                            double degeneracy_tol) {
  if (parent.p_x - parent.p_y < degeneracy_tol || parent.p_y - parent.p_z < degeneracy_tol)
    throw Error(Errc::DegenerateParent, "parent planar moments are not distinct");
  if (!(total_mass > 0.0) || mass_delta == 0.0)
    throw Error(Errc::InvalidArgument, "total mass must be positive and mass delta non-zero");

  const double mu = (total_mass + mass_delta) / (total_mass * mass_delta);
  std::array<std::optional<double>, 3> out;
  for (int axis = 0; axis < 3; ++axis) {
    const int a1 = (axis + 1) % 3;
    const int a2 = (axis + 2) % 3;
    const double p = parent[axis];
    const double numerator = (iso[axis] - p) * (iso[a1] - p) * (iso[a2] - p);
    const double denominator = (parent[a1] - p) * (parent[a2] - p);
    double radicand = mu * numerator / denominator;
    if (radicand < 0.0 && radicand >= -kRadicandTol) radicand = 0.0;
    if (radicand >= 0.0) out[static_cast<std::size_t>(axis)] = std::sqrt(radicand);
  }
  return out;
}

SubstitutionTable build_substitution_table(const Molecule& mol_in_pas, const DropoutConfig& cfg,
                                           std::mt19937_64& rng) {
  if (cfg.p_min > cfg.p_max || cfg.p_min < 0.0 || cfg.p_max > 1.0)
    throw Error(Errc::InvalidArgument, "dropout interval must satisfy 0 <= p_min <= p_max <= 1");
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double p = cfg.p_min + (cfg.p_max - cfg.p_min) * unit(rng);

  const auto n = static_cast<Eigen::Index>(mol_in_pas.size());
  SubstitutionTable table = SubstitutionTable::empty(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const int z = mol_in_pas.atomic_numbers()[static_cast<std::size_t>(i)];
    const bool eligible = cfg.carbon_only ? z == 6 : is_naturally_abundant(z);
    if (!eligible) continue;
    // Always draw so the stream stays aligned across dropout rates.
    if (unit(rng) < p) continue;
    for (int c = 0; c < 3; ++c) {
      const double v = std::abs(mol_in_pas.positions()(i, c));
      if (cfg.near_axis_threshold > 0.0 && v < cfg.near_axis_threshold) continue;
      table.mask(i, c) = 1.0;
      table.values(i, c) = v;
    }
  }
  return table;
}

}  // namespace isostruct
