#include "isostruct/geometry.hpp"

#include <Eigen/SVD>

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <numeric>

#include "isostruct/elements.hpp"
#include "isostruct/error.hpp"

namespace isostruct {

Molecule::Molecule(std::vector<int> atomic_numbers, std::vector<double> masses, Coords positions)
    : atomic_numbers_(std::move(atomic_numbers)),
      masses_(std::move(masses)),
      positions_(std::move(positions)) {
  const auto n = atomic_numbers_.size();
  if (n == 0) throw Error(Errc::InvalidArgument, "molecule must have at least one atom");
  if (masses_.size() != n || static_cast<std::size_t>(positions_.rows()) != n)
    throw Error(Errc::ShapeMismatch, "atomic numbers, masses and positions differ in length");
  for (std::size_t i = 0; i < n; ++i) {
    if (atomic_numbers_[i] < 1 || atomic_numbers_[i] > kMaxAtomicNumber)
      throw Error(Errc::UnknownElement, "atomic number " + std::to_string(atomic_numbers_[i]));
    if (!(masses_[i] > 0.0)) throw Error(Errc::NonPositiveMass, "atom " + std::to_string(i));
  }
}

Molecule Molecule::from_elements(std::vector<int> atomic_numbers, Coords positions) {
  std::vector<double> masses;
  masses.reserve(atomic_numbers.size());
  for (int z : atomic_numbers) masses.push_back(element(z).mass);
  return Molecule(std::move(atomic_numbers), std::move(masses), std::move(positions));
}

double Molecule::total_mass() const {
  return std::accumulate(masses_.begin(), masses_.end(), 0.0);
}

Molecule Molecule::with_positions(Coords positions) const {
  return Molecule(atomic_numbers_, masses_, std::move(positions));
}

Molecule Molecule::subset(std::span<const int> indices) const {
  std::vector<int> z;
  std::vector<double> m;
  Coords x(static_cast<Eigen::Index>(indices.size()), 3);
  for (std::size_t k = 0; k < indices.size(); ++k) {
    const int i = indices[k];
    if (i < 0 || static_cast<std::size_t>(i) >= size())
      throw Error(Errc::IndexOutOfRange, "atom index " + std::to_string(i));
    z.push_back(atomic_numbers_[i]);
    m.push_back(masses_[i]);
    x.row(static_cast<Eigen::Index>(k)) = positions_.row(i);
  }
  return Molecule(std::move(z), std::move(m), std::move(x));
}

std::vector<int> Molecule::heavy_indices() const {
  std::vector<int> out;
  for (std::size_t i = 0; i < size(); ++i)
    if (!is_hydrogen(atomic_numbers_[i])) out.push_back(static_cast<int>(i));
  return out;
}

PlanarMoments::PlanarMoments(double a, double b, double c) {
  std::array<double, 3> v{a, b, c};
  std::sort(v.begin(), v.end(), std::greater<>());
  p_x = v[0];
  p_y = v[1];
  p_z = v[2];
}

Vec3 weighted_com(const Coords& positions, std::span<const double> masses) {
  Vec3 acc = Vec3::Zero();
  double total = 0.0;
  for (Eigen::Index i = 0; i < positions.rows(); ++i) {
    acc += masses[static_cast<std::size_t>(i)] * positions.row(i).transpose();
    total += masses[static_cast<std::size_t>(i)];
  }
  return acc / total;
}

Vec3 weighted_com(const Molecule& mol) { return weighted_com(mol.positions(), mol.masses()); }

Mat3 planar_dyadic_about_origin(const Coords& positions, std::span<const double> masses) {
  Mat3 p = Mat3::Zero();
  for (Eigen::Index i = 0; i < positions.rows(); ++i) {
    const Vec3 x = positions.row(i).transpose();
    p.noalias() += masses[static_cast<std::size_t>(i)] * (x * x.transpose());
  }
  return p;
}

namespace {

constexpr double kComCheckTol = 1e-6;  // Å

void require_centered(const Molecule& mol) {
  const Vec3 com = weighted_com(mol);
  if (com.norm() > kComCheckTol)
    throw Error(Errc::ComNotZero, "weighted CoM is " + std::to_string(com.norm()) + " Å from origin");
}

void apply_sign_convention(Mat3& v) {
  for (int k = 0; k < 3; ++k) {
    int best = 0;
    for (int r = 1; r < 3; ++r)
      if (std::abs(v(r, k)) > std::abs(v(best, k))) best = r;
    if (v(best, k) < 0.0) v.col(k) = -v.col(k);
  }
  if (v.determinant() < 0.0) v.col(2) = -v.col(2);
}

SymEig3 sorted_result(Vec3 values, Mat3 vectors) {
  std::array<int, 3> order{0, 1, 2};
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return values[a] > values[b]; });
  SymEig3 out;
  for (int k = 0; k < 3; ++k) {
    out.values[k] = values[order[k]];
    out.vectors.col(k) = vectors.col(order[k]);
  }
  apply_sign_convention(out.vectors);
  return out;
}

Mat3 checked_symmetric(const Mat3& m) {
  const double scale = m.cwiseAbs().maxCoeff();
  const double asym = (m - m.transpose()).cwiseAbs().maxCoeff();
  if (!std::isfinite(scale) || asym > 1e-10 * scale)
    throw Error(Errc::NotSymmetric, "asymmetry " + std::to_string(asym));
  return 0.5 * (m + m.transpose());
}

// Unit vector spanning the null space of (a - lambda I), from the largest
// cross product of its rows.
Vec3 null_vector(const Mat3& a, double lambda) {
  Mat3 b = a - lambda * Mat3::Identity();
  const Vec3 r0 = b.row(0).transpose(), r1 = b.row(1).transpose(), r2 = b.row(2).transpose();
  const std::array<Vec3, 3> c{r0.cross(r1), r0.cross(r2), r1.cross(r2)};
  int best = 0;
  for (int k = 1; k < 3; ++k)
    if (c[k].squaredNorm() > c[best].squaredNorm()) best = k;
  return c[best].normalized();
}

}  // namespace

Mat3 planar_dyadic(const Molecule& mol) {
  require_centered(mol);
  return planar_dyadic_about_origin(mol.positions(), mol.masses());
}

Mat3 inertia_matrix(const Molecule& mol) {
  const Mat3 p = planar_dyadic(mol);
  return p.trace() * Mat3::Identity() - p;
}

SymEig3 sym_eig3_jacobi(const Mat3& m) {
  Mat3 a = checked_symmetric(m);
  Mat3 v = Mat3::Identity();
  const double scale = a.cwiseAbs().maxCoeff();
  for (int sweep = 0; sweep < 64; ++sweep) {
    const double off = std::abs(a(0, 1)) + std::abs(a(0, 2)) + std::abs(a(1, 2));
    if (off <= 1e-300 || off <= 1e-18 * scale) break;
    for (int p = 0; p < 2; ++p) {
      for (int q = p + 1; q < 3; ++q) {
        if (a(p, q) == 0.0) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * a(p, q));
        const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        Mat3 j = Mat3::Identity();
        j(p, p) = c;
        j(q, q) = c;
        j(p, q) = s;
        j(q, p) = -s;
        a = j.transpose() * a * j;
        a(p, q) = a(q, p) = 0.0;
        v = v * j;
      }
    }
  }
  return sorted_result(a.diagonal(), v);
}

SymEig3 sym_eig3(const Mat3& m) {
  const Mat3 a = checked_symmetric(m);
  const double scale = a.cwiseAbs().maxCoeff();
  if (scale == 0.0) return SymEig3{Vec3::Zero(), Mat3::Identity()};

  const double off = a(0, 1) * a(0, 1) + a(0, 2) * a(0, 2) + a(1, 2) * a(1, 2);
  if (off == 0.0) return sorted_result(a.diagonal(), Mat3::Identity());

  // Trigonometric solution of the characteristic cubic.
  const double q = a.trace() / 3.0;
  const double p2 = (a(0, 0) - q) * (a(0, 0) - q) + (a(1, 1) - q) * (a(1, 1) - q) +
                    (a(2, 2) - q) * (a(2, 2) - q) + 2.0 * off;
  const double p = std::sqrt(p2 / 6.0);
  const Mat3 b = (a - q * Mat3::Identity()) / p;
  const double r = std::clamp(b.determinant() / 2.0, -1.0, 1.0);
  const double phi = std::acos(r) / 3.0;
  const double l0 = q + 2.0 * p * std::cos(phi);
  const double l2 = q + 2.0 * p * std::cos(phi + 2.0 * std::numbers::pi / 3.0);
  const double l1 = 3.0 * q - l0 - l2;

  const double spread = std::max({std::abs(l0), std::abs(l1), std::abs(l2), scale});
  if (std::min(l0 - l1, l1 - l2) < 1e-4 * spread) return sym_eig3_jacobi(a);

  Mat3 v;
  v.col(0) = null_vector(a, l0);
  Vec3 v2 = null_vector(a, l2);
  v2 = (v2 - v2.dot(v.col(0)) * v.col(0)).normalized();
  v.col(2) = v2;
  v.col(1) = v.col(2).cross(v.col(0));
  Vec3 values;
  for (int k = 0; k < 3; ++k) values[k] = v.col(k).dot(a * v.col(k));
  return sorted_result(values, v);
}

PasAlignment align_to_pas(const Molecule& mol, double degeneracy_tol) {
  const Coords& x = mol.positions();
  const double extent = x.cwiseAbs().maxCoeff();
  const Vec3 com = weighted_com(mol);

  // Inputs already centered / aligned to rounding are passed through
  // untouched so that alignment is an exact fixed point.
  PasAlignment out;
  out.com_shift = Vec3::Zero();
  Coords centered = x;
  if (com.norm() > 1e-13 * extent) {
    out.com_shift = com;
    centered.rowwise() -= com.transpose();
  }

  const Mat3 p = planar_dyadic_about_origin(centered, mol.masses());
  const double offdiag = std::max({std::abs(p(0, 1)), std::abs(p(0, 2)), std::abs(p(1, 2))});
  const bool already_aligned =
      offdiag <= 1e-12 * p.trace() && p(0, 0) > p(1, 1) && p(1, 1) > p(2, 2);

  Vec3 moments;
  if (already_aligned) {
    out.rotation = Mat3::Identity();
    moments = p.diagonal();
    out.aligned_positions = std::move(centered);
  } else {
    const SymEig3 eig = sym_eig3(p);
    out.rotation = eig.vectors;
    out.aligned_positions = centered * eig.vectors;
    moments = factored_planar_moments(mass_weighted(out.aligned_positions, mol.masses()));
  }
  if (moments[0] - moments[1] < degeneracy_tol || moments[1] - moments[2] < degeneracy_tol)
    throw Error(Errc::DegenerateTop, "planar moments are not distinct (symmetric top)");
  out.planar_moments = PlanarMoments(moments[0], moments[1], std::max(moments[2], 0.0));
  return out;
}

Eigen::MatrixX3d mass_weighted(const Coords& positions, std::span<const double> masses) {
  Eigen::MatrixX3d y(positions.rows(), 3);
  for (Eigen::Index i = 0; i < positions.rows(); ++i)
    y.row(i) = std::sqrt(masses[static_cast<std::size_t>(i)]) * positions.row(i);
  return y;
}

Vec3 factored_planar_moments(const Eigen::MatrixX3d& y) {
  // Jacobi SVD keeps small singular values relatively accurate, so a
  // vanishing planar moment stays at rounding level of its own size.
  const Eigen::JacobiSVD<Eigen::MatrixX3d> svd(y);
  Vec3 s = Vec3::Zero();
  const auto& sv = svd.singularValues();
  for (Eigen::Index k = 0; k < sv.size() && k < 3; ++k) s[k] = sv[k] * sv[k];
  return s;
}

Vec3 axial_reflection(int index) {
  return Vec3((index & 1) ? -1.0 : 1.0, (index & 2) ? -1.0 : 1.0, (index & 4) ? -1.0 : 1.0);
}

}  // namespace isostruct
