#include <gtest/gtest.h>

#include "isostruct/error.hpp"
#include "isostruct/subspace.hpp"
#include "test_support.hpp"

using namespace isostruct;
using isostruct::testing::random_coords;

namespace {

std::vector<double> random_masses(std::size_t n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(1.0, 32.0);
  std::vector<double> m(n);
  for (auto& v : m) v = u(rng);
  return m;
}

// Basis of the zero-CoM subspace: row i carries m̃_0 e_c, row 0 carries -m̃_i e_c.
std::vector<Coords> subspace_basis(const MassWeights& w) {
  const auto& m = w.normalized_masses();
  std::vector<Coords> basis;
  for (std::size_t i = 1; i < m.size(); ++i)
    for (int c = 0; c < 3; ++c) {
      Coords b = Coords::Zero(static_cast<Eigen::Index>(m.size()), 3);
      b(static_cast<Eigen::Index>(i), c) = m[0];
      b(0, c) = -m[i];
      basis.push_back(b);
    }
  return basis;
}

double frob_dot(const Coords& a, const Coords& b) { return (a.array() * b.array()).sum(); }

}  // namespace

TEST(MassWeights, NormalizationInvariants) {
  std::mt19937_64 rng(1);
  const auto m = random_masses(9, rng);
  const MassWeights w(m);
  double sum = 0.0, sq = 0.0;
  for (double v : w.normalized_masses()) {
    EXPECT_GT(v, 0.0);
    EXPECT_LT(v, 1.0);
    sum += v;
    sq += v * v;
  }
  EXPECT_NEAR(sum, 1.0, 1e-12);
  EXPECT_NEAR(w.squared_norm(), sq, 1e-12);
  const std::vector<double> bad{1.0, 0.0};
  EXPECT_THROW(MassWeights{bad}, Error);
}

TEST(ProjectZeroCom, UniformPair) {
  const std::vector<double> m{1.0, 1.0};
  Coords x(2, 3);
  x << 1, 0, 0, 3, 0, 0;
  Coords expected(2, 3);
  expected << -1, 0, 0, 1, 0, 0;
  EXPECT_LT((project_zero_com(x, MassWeights(m)) - expected).norm(), 1e-15);
}

TEST(ProjectZeroCom, NonuniformPairDiffersFromNaiveCentering) {
  const std::vector<double> m{1.0, 2.0};
  const MassWeights w(m);
  Coords x(2, 3);
  x << 3, 0, 0, 0, 0, 0;
  Coords expected(2, 3);
  expected << 2.4, 0, 0, -1.2, 0, 0;
  const Coords p = project_zero_com(x, w);
  EXPECT_LT((p - expected).norm(), 1e-14);

  // Naive centering lands in U too but is not the nearest point.
  Coords naive = x.rowwise() - w.com(x).transpose();
  EXPECT_LT(w.com(naive).norm(), 1e-15);
  EXPECT_GT((naive - p).norm(), 0.1);
  EXPECT_LT((x - p).norm(), (x - naive).norm());
}

TEST(ProjectZeroCom, ResultHasZeroWeightedCom) {
  std::mt19937_64 rng(2);
  for (int k = 0; k < 200; ++k) {
    const std::size_t n = 2 + static_cast<std::size_t>(k % 30);
    const MassWeights w(random_masses(n, rng));
    const Coords x = random_coords(static_cast<Eigen::Index>(n), rng, 3.0) .array() + 5.0;
    const Coords p = project_zero_com(x, w);
    EXPECT_LT(w.com(p).norm(), 1e-12 * x.cwiseAbs().maxCoeff());
  }
}

TEST(ProjectZeroCom, IdempotentBitForBit) {
  std::mt19937_64 rng(3);
  for (int k = 0; k < 200; ++k) {
    const std::size_t n = 2 + static_cast<std::size_t>(k % 30);
    const MassWeights w(random_masses(n, rng));
    const Coords once = project_zero_com(random_coords(static_cast<Eigen::Index>(n), rng, 2.0), w);
    EXPECT_EQ(project_zero_com(once, w), once);
  }
}

TEST(ProjectZeroCom, ResidualOrthogonalToSubspace) {
  std::mt19937_64 rng(4);
  for (int k = 0; k < 50; ++k) {
    const std::size_t n = 2 + static_cast<std::size_t>(k % 8);
    const MassWeights w(random_masses(n, rng));
    const Coords x = random_coords(static_cast<Eigen::Index>(n), rng, 2.0);
    const Coords r = x - project_zero_com(x, w);
    for (const Coords& b : subspace_basis(w)) EXPECT_NEAR(frob_dot(r, b), 0.0, 1e-10);
  }
}

TEST(ProjectZeroCom, Linear) {
  std::mt19937_64 rng(5);
  for (int k = 0; k < 50; ++k) {
    const std::size_t n = 2 + static_cast<std::size_t>(k % 12);
    const MassWeights w(random_masses(n, rng));
    const Coords x = random_coords(static_cast<Eigen::Index>(n), rng);
    const Coords y = random_coords(static_cast<Eigen::Index>(n), rng);
    const double a = 1.7, b = -0.3;
    const Coords lhs = project_zero_com(a * x + b * y, w);
    const Coords rhs = a * project_zero_com(x, w) + b * project_zero_com(y, w);
    EXPECT_LT((lhs - rhs).norm(), 1e-12 * std::max(1.0, lhs.norm()));
  }
}

TEST(ProjectZeroCom, ShapeMismatch) {
  const std::vector<double> m{1.0, 2.0};
  EXPECT_THROW(project_zero_com(Coords::Zero(3, 3), MassWeights(m)), Error);
}

TEST(ProjectedGaussian, UniformPairRowsAreNegations) {
  const std::vector<double> m{4.0, 4.0};
  const MassWeights w(m);
  std::mt19937_64 rng(6);
  for (int k = 0; k < 100; ++k) {
    const Coords x = sample_projected_gaussian(2, w, rng);
    EXPECT_LT((x.row(0) + x.row(1)).norm(), 1e-15);
  }
}

TEST(ProjectedGaussian, EveryDrawInSubspace) {
  std::mt19937_64 rng(7);
  const MassWeights w(random_masses(11, rng));
  for (int k = 0; k < 1000; ++k) EXPECT_LT(w.com(sample_projected_gaussian(11, w, rng)).norm(), 1e-12);
}

TEST(ProjectedGaussian, CovarianceMatchesProjector) {
  const std::vector<double> m{1.0, 12.0, 16.0};
  const MassWeights w(m);
  const auto& mt = w.normalized_masses();
  // Oracle: Φ = I − (I₃ ⊗ m̃ m̃ᵀ)/‖m̃‖², indexed (atom, axis).
  Eigen::Matrix<double, 9, 9> phi = Eigen::Matrix<double, 9, 9>::Zero();
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      for (int c = 0; c < 3; ++c)
        phi(3 * i + c, 3 * j + c) = (i == j ? 1.0 : 0.0) - mt[static_cast<std::size_t>(i)] *
                                                               mt[static_cast<std::size_t>(j)] / w.squared_norm();

  std::mt19937_64 rng(8);
  Eigen::Matrix<double, 9, 9> acc = Eigen::Matrix<double, 9, 9>::Zero();
  const int draws = 100000;
  for (int k = 0; k < draws; ++k) {
    const Coords x = sample_projected_gaussian(3, w, rng);
    Eigen::Matrix<double, 9, 1> v;
    for (int i = 0; i < 3; ++i)
      for (int c = 0; c < 3; ++c) v(3 * i + c) = x(i, c);
    acc += v * v.transpose();
  }
  acc /= draws;
  EXPECT_LT((acc - phi).cwiseAbs().maxCoeff(), 0.02);
}
