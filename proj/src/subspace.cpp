#include "isostruct/subspace.hpp"

#include <cmath>
#include <limits>

#include "isostruct/error.hpp"

namespace isostruct {

MassWeights::MassWeights(std::span<const double> masses) : squared_norm_(0.0) {
  if (masses.empty()) throw Error(Errc::InvalidArgument, "mass weights need at least one atom");
  double total = 0.0;
  for (double m : masses) {
    if (!(m > 0.0)) throw Error(Errc::NonPositiveMass, "masses must be positive");
    total += m;
  }
  normalized_.reserve(masses.size());
  for (double m : masses) {
    normalized_.push_back(m / total);
    squared_norm_ += (m / total) * (m / total);
  }
}

Vec3 MassWeights::com(const Coords& x) const {
  Vec3 acc = Vec3::Zero();
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    acc += normalized_[static_cast<std::size_t>(i)] * x.row(i).transpose();
  return acc;
}

Coords project_zero_com(const Coords& x, const MassWeights& w) {
  if (static_cast<std::size_t>(x.rows()) != w.size())
    throw Error(Errc::ShapeMismatch, "point cloud and mass weights differ in length");
  const Vec3 com = w.com(x);
  const double scale = x.size() > 0 ? x.cwiseAbs().maxCoeff() : 0.0;
  const double rounding = 4.0 * std::numeric_limits<double>::epsilon() *
                          static_cast<double>(x.rows()) * scale;
  if (com.cwiseAbs().maxCoeff() <= rounding) return x;

  Coords out = x;
  const Vec3 shift = com / w.squared_norm();
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    out.row(i) -= w.normalized_masses()[static_cast<std::size_t>(i)] * shift.transpose();
  return out;
}

Coords sample_projected_gaussian(std::size_t n, const MassWeights& w, std::mt19937_64& rng) {
  if (n != w.size()) throw Error(Errc::ShapeMismatch, "sample size and mass weights differ");
  std::normal_distribution<double> normal(0.0, 1.0);
  Coords x(static_cast<Eigen::Index>(n), 3);
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    for (int c = 0; c < 3; ++c) x(i, c) = normal(rng);
  return project_zero_com(x, w);
}

}  // namespace isostruct
