#include <gtest/gtest.h>

#include <numeric>

#include "isostruct/denoiser.hpp"
#include "isostruct/error.hpp"
#include "test_support.hpp"

using namespace isostruct;
using isostruct::testing::random_coords;
using isostruct::testing::random_rotation;

namespace {

ModelConfig small_config() {
  ModelConfig c;
  c.hidden_dim = 16;
  c.message_dim = 24;
  c.cond_mlp_dim = 12;
  c.time_embed_dim = 8;
  c.atom_embed_dim = 4;
  c.n_blocks = 3;
  c.n_heads = 2;
  c.head_dim = 8;
  c.t_max = 100;
  return c;
}

// Random nonzero values everywhere, including the zero-initialized gates.
DenoiserParameters perturbed_params(const ModelConfig& c, std::uint64_t seed, double sd = 0.3) {
  std::mt19937_64 rng(seed);
  DenoiserParameters p = init_params(c, rng);
  std::normal_distribution<double> n(0.0, sd);
  for (auto& [name, t] : p.tensors)
    for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] += n(rng);
  return p;
}

struct Example {
  Molecule mol;
  ConditioningFeatures cond;
};

Example random_example(int n, std::mt19937_64& rng) {
  const Molecule raw = isostruct::testing::random_molecule(n, rng);
  const Molecule mol = raw.with_positions(align_to_pas(raw).aligned_positions);
  std::mt19937_64 table_rng(rng());
  const SubstitutionTable table = build_substitution_table(mol, {0.2, 0.2, false, 0.0}, table_rng);
  return {mol, build_conditioning(mol, table, align_to_pas(mol).planar_moments)};
}

std::vector<int> random_permutation(int n, std::mt19937_64& rng) {
  std::vector<int> p(static_cast<std::size_t>(n));
  std::iota(p.begin(), p.end(), 0);
  std::shuffle(p.begin(), p.end(), rng);
  return p;
}

template <typename M>
M permute_rows(const M& m, const std::vector<int>& perm) {
  M out(m.rows(), m.cols());
  for (std::size_t r = 0; r < perm.size(); ++r) out.row(static_cast<Eigen::Index>(r)) = m.row(perm[r]);
  return out;
}

ConditioningFeatures permute(const ConditioningFeatures& c, const std::vector<int>& perm) {
  ConditioningFeatures out;
  out.features = permute_rows(c.features, perm);
  for (int i : perm) {
    out.atomic_numbers.push_back(c.atomic_numbers[static_cast<std::size_t>(i)]);
    out.masses.push_back(c.masses[static_cast<std::size_t>(i)]);
  }
  return out;
}

}  // namespace

TEST(Conditioning, SingleCarbonRowLayout) {
  const Molecule c({6}, {12.0}, Coords::Zero(1, 3));
  const FeatureScaling identity{1.0, 1.0, 1.0, 1.0};
  const PlanarMoments pm(3.0, 2.0, 1.0);
  const ConditioningFeatures f = build_conditioning(c, SubstitutionTable::empty(1), pm, identity);
  Eigen::RowVectorXd expected(11);
  expected << 6, 12.0, 0, 0, 0, 0, 0, 0, 3.0, 2.0, 1.0;
  EXPECT_EQ(Eigen::RowVectorXd(f.features.row(0)), expected);
}

TEST(Conditioning, MomentColumnsConstantAndRowsPermute) {
  std::mt19937_64 rng(1);
  const Example ex = random_example(7, rng);
  for (int c = 8; c < 11; ++c)
    EXPECT_EQ(ex.cond.features.col(c).maxCoeff(), ex.cond.features.col(c).minCoeff());
  // Masked coordinate entries are exactly zero.
  for (Eigen::Index i = 0; i < ex.cond.features.rows(); ++i)
    for (int c = 0; c < 3; ++c)
      if (ex.cond.features(i, 5 + c) == 0.0) EXPECT_EQ(ex.cond.features(i, 2 + c), 0.0);

  const std::vector<int> perm = random_permutation(7, rng);
  std::vector<int> z;
  std::vector<double> m;
  for (int i : perm) {
    z.push_back(ex.mol.atomic_numbers()[static_cast<std::size_t>(i)]);
    m.push_back(ex.mol.masses()[static_cast<std::size_t>(i)]);
  }
  const Molecule pmol(z, m, permute_rows(ex.mol.positions(), perm));
  SubstitutionTable table = SubstitutionTable::empty(7);
  for (int r = 0; r < 7; ++r) {
    table.values.row(r) = ex.cond.features.block(perm[static_cast<std::size_t>(r)], 2, 1, 3);
    table.mask.row(r) = ex.cond.features.block(perm[static_cast<std::size_t>(r)], 5, 1, 3);
  }
  const ConditioningFeatures pc = build_conditioning(pmol, table, align_to_pas(ex.mol).planar_moments);
  EXPECT_EQ(pc.features, permute_rows(ex.cond.features, perm));
}

TEST(Conditioning, ShapeMismatch) {
  EXPECT_THROW(build_conditioning(isostruct::testing::three_atom_molecule(), SubstitutionTable::empty(2),
                                  PlanarMoments(3, 2, 1)),
               Error);
}

TEST(DistanceFeatures, Example) {
  Eigen::Matrix<double, 13, 1> expected;
  expected << 0, 1, 1, 1, 0, 0, 0, 1, 0, 0, 1, 0, 0;
  EXPECT_EQ(distance_features(Vec3(1, 0, 0), Vec3(1, 0, 0)), expected);
}

TEST(DistanceFeatures, ReflectionInvariantButNotRotationInvariant) {
  const Vec3 x(0.3, -1.2, 0.8), y(-0.5, 0.4, 1.1);
  const auto base = distance_features(x, y);
  for (int r = 0; r < 8; ++r) {
    const Vec3 s = axial_reflection(r);
    EXPECT_LT((distance_features(s.cwiseProduct(x), s.cwiseProduct(y)) - base).norm(), 1e-15);
  }
  const Mat3 rot = Eigen::AngleAxisd(std::numbers::pi / 6.0, Vec3::UnitZ()).toRotationMatrix();
  const auto rotated = distance_features(rot * x, rot * y);
  EXPECT_NEAR(rotated[0], base[0], 1e-12);  // |x-y|² survives
  EXPECT_GT(std::abs(rotated[7] - base[7]), 1e-3);  // s(x) does not
}

TEST(TimeEmbedding, Shape) {
  const Eigen::RowVectorXd e = time_embedding(0, 1000, 8);
  ASSERT_EQ(e.size(), 8);
  for (int k = 0; k < 4; ++k) {
    EXPECT_EQ(e[2 * k], 0.0);
    EXPECT_EQ(e[2 * k + 1], 1.0);
  }
  const Eigen::RowVectorXd f = time_embedding(500, 1000, 8);
  EXPECT_NEAR(f[0], std::sin(0.5), 1e-15);
  EXPECT_NEAR(f[6], std::sin(0.5 * 1e4), 1e-9);
}

TEST(EqBlock, SymmetricPairGivesOppositeUpdates) {
  const ModelConfig c = small_config();
  const DenoiserParameters p = perturbed_params(c, 2);
  Coords x(2, 3);
  x << 0.4, -0.7, 1.1, -0.4, 0.7, -1.1;
  ad::Matrix h(2, c.hidden_dim);
  std::mt19937_64 rng(3);
  h.row(0) = random_coords(1, rng).row(0).replicate(1, 6).leftCols(c.hidden_dim);
  h.row(1) = h.row(0);
  const EqBlockOutput out = eq_block(p, "block0.eqblock", c, x, h, x);
  const Coords dx = out.x - x;
  EXPECT_GT(dx.norm(), 1e-6);
  EXPECT_LT((dx.row(0) + dx.row(1)).norm(), 1e-14);
}

TEST(EqBlock, ReflectionAndPermutationEquivariant) {
  const ModelConfig c = small_config();
  const DenoiserParameters p = perturbed_params(c, 4);
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 5; ++trial) {
    const Coords x = random_coords(6, rng), x0 = random_coords(6, rng);
    ad::Matrix h = random_coords(6, rng).replicate(1, 6).leftCols(c.hidden_dim);
    h += ad::Matrix::Random(6, c.hidden_dim);
    const EqBlockOutput base = eq_block(p, "block1.eqblock", c, x, h, x0);
    for (int r = 0; r < 8; ++r) {
      const auto s = axial_reflection(r).asDiagonal();
      const EqBlockOutput refl = eq_block(p, "block1.eqblock", c, x * s, h, x0 * s);
      EXPECT_LT((refl.x - base.x * s).cwiseAbs().maxCoeff(), 1e-10);
      EXPECT_LT((refl.h - base.h).cwiseAbs().maxCoeff(), 1e-10);
    }
    const auto perm = random_permutation(6, rng);
    const EqBlockOutput pb =
        eq_block(p, "block1.eqblock", c, permute_rows(x, perm), permute_rows(h, perm), permute_rows(x0, perm));
    EXPECT_LT((pb.x - permute_rows(base.x, perm)).cwiseAbs().maxCoeff(), 1e-10);
    EXPECT_LT((pb.h - permute_rows(base.h, perm)).cwiseAbs().maxCoeff(), 1e-10);
  }
}

TEST(Denoiser, FullNetworkReflectionPermutationEquivariance) {
  const ModelConfig c = small_config();
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 4; ++trial) {
    const DenoiserParameters p = perturbed_params(c, 100 + static_cast<std::uint64_t>(trial));
    const Example ex = random_example(5 + trial, rng);
    const int n = 5 + trial;
    const MassWeights w(ex.cond.masses);
    const Coords z = project_zero_com(random_coords(n, rng), w);
    const int t = 10 + 20 * trial;
    const Coords base = denoise_eps(p, z, ex.cond, t, c);
    const auto perm = random_permutation(n, rng);
    const ConditioningFeatures pc = permute(ex.cond, perm);
    for (int r = 0; r < 8; ++r) {
      const auto s = axial_reflection(r).asDiagonal();
      const Coords out = denoise_eps(p, Coords(permute_rows(z, perm) * s), pc, t, c);
      EXPECT_LE((out - Coords(permute_rows(base, perm) * s)).cwiseAbs().maxCoeff(), 1e-9)
          << "trial " << trial << " reflection " << r;
    }
  }
}

TEST(Denoiser, NotRotationEquivariant) {
  const ModelConfig c = small_config();
  const DenoiserParameters p = perturbed_params(c, 7);
  std::mt19937_64 rng(8);
  const Example ex = random_example(5, rng);
  const MassWeights w(ex.cond.masses);
  const Coords z = project_zero_com(random_coords(5, rng), w);
  const Mat3 rot = Eigen::AngleAxisd(std::numbers::pi / 6.0, Vec3(1, 2, 3).normalized()).toRotationMatrix();
  const Coords a = denoise_eps(p, Coords(z * rot.transpose()), ex.cond, 30, c);
  const Coords b = Coords(denoise_eps(p, z, ex.cond, 30, c) * rot.transpose());
  EXPECT_GT((a - b).cwiseAbs().maxCoeff(), 1e-4);
}

TEST(Denoiser, OutputInSubspaceAndDeterministic) {
  const ModelConfig c = small_config();
  const DenoiserParameters p = perturbed_params(c, 9);
  std::mt19937_64 rng(10);
  for (int k = 0; k < 10; ++k) {
    const Example ex = random_example(3 + k, rng);
    const MassWeights w(ex.cond.masses);
    const Coords z = random_coords(3 + k, rng, 2.0);  // deliberately off the subspace
    const Coords out = denoise_eps(p, z, ex.cond, k * 10, c);
    EXPECT_LT(w.com(out).norm(), 1e-9);
    EXPECT_EQ(out, denoise_eps(p, z, ex.cond, k * 10, c));
  }
}

TEST(Denoiser, ZeroOutputAtInitialization) {
  const ModelConfig c = small_config();
  std::mt19937_64 rng(11);
  const DenoiserParameters p = init_params(c, rng);
  const Example ex = random_example(6, rng);
  const Coords z = project_zero_com(random_coords(6, rng), MassWeights(ex.cond.masses));
  EXPECT_EQ(denoise_eps(p, z, ex.cond, 50, c), Coords::Zero(6, 3));
}

TEST(InitParams, DeterministicAndCounted) {
  const ModelConfig c;  // defaults
  std::mt19937_64 a(12), b(12);
  const DenoiserParameters pa = init_params(c, a), pb = init_params(c, b);
  ASSERT_EQ(pa.tensors.size(), pb.tensors.size());
  for (const auto& [name, t] : pa.tensors) EXPECT_EQ(t, pb.at(name)) << name;
  // Layer-by-layer count of the documented architecture.
  const std::size_t H = 256, M = 320, C = 128, T = 128, A = 32, heads = 8, blocks = 6;
  const std::size_t d_in = 11 + A + 1 + T;
  const auto lin = [](std::size_t in, std::size_t out) { return in * out + out; };
  const std::size_t messages = lin(2 * H + 26, M) + lin(M, M) + lin(M, 3);
  const std::size_t eq = messages + lin(M, heads) + lin(M, H) + lin(H, H);
  const std::size_t norm = 2 * lin(C, H);
  const std::size_t block = eq + 2 * norm + lin(H, M) + lin(M, H);
  const std::size_t expected = 119 * A + lin(d_in, H) + lin(d_in, C) + lin(C, C) + (blocks - 1) * block + norm + messages;
  EXPECT_EQ(pa.parameter_count(), expected);
  EXPECT_EQ(expected, 4045018u);
  for (const auto& [name, t] : pa.tensors) EXPECT_TRUE(t.allFinite()) << name;
}

TEST(InitParams, WeightVarianceMatchesFanIn) {
  const ModelConfig c;
  std::mt19937_64 rng(13);
  const DenoiserParameters p = init_params(c, rng);
  int checked = 0;
  for (const auto& [name, t] : p.tensors) {
    if (name.size() < 2 || name.find(".w") == std::string::npos || t.rows() < 256) continue;
    if (t.cwiseAbs().maxCoeff() == 0.0) continue;  // zero-initialized gates
    const double var = t.squaredNorm() / static_cast<double>(t.size()) - std::pow(t.mean(), 2);
    EXPECT_NEAR(var * static_cast<double>(t.rows()), 1.0, 0.1) << name;
    ++checked;
  }
  EXPECT_GT(checked, 10);
}

TEST(InitParams, RejectsInconsistentHeads) {
  ModelConfig c = small_config();
  c.head_dim = 5;
  std::mt19937_64 rng(1);
  EXPECT_THROW(init_params(c, rng), Error);
}

TEST(GradLoss, FiniteDifferences) {
  const ModelConfig c = small_config();
  DenoiserParameters p = perturbed_params(c, 14, 0.2);
  std::mt19937_64 rng(15);
  const Example ex = random_example(4, rng);
  const MassWeights w(ex.cond.masses);
  const std::vector<TrainingExample> batch{{ex.mol.positions(), ex.cond}};
  const NoiseSchedule sched = make_schedule(c.t_max);
  const std::vector<TrainingDraw> draws{{37, sample_projected_gaussian(4, w, rng)}};
  const LossAndGrads lg = grad_loss(p, batch, draws, sched, c);
  EXPECT_NEAR(lg.loss, batch_loss(p, batch, draws, sched, c), 1e-12 * lg.loss);

  std::vector<std::pair<std::string, Eigen::Index>> all;
  for (const auto& [name, t] : p.tensors)
    for (Eigen::Index i = 0; i < t.size(); ++i) all.emplace_back(name, i);
  std::shuffle(all.begin(), all.end(), rng);
  const double h = 1e-4;
  int compared = 0;
  for (std::size_t k = 0; k < all.size() && compared < 250; ++k) {
    const auto& [name, i] = all[k];
    double& v = p.at(name).data()[i];
    const double saved = v;
    const auto central = [&](double step) {
      v = saved + step;
      const double up = batch_loss(p, batch, draws, sched, c);
      v = saved - step;
      const double down = batch_loss(p, batch, draws, sched, c);
      v = saved;
      return (up - down) / (2.0 * step);
    };
    // Richardson step: removes the h² truncation term.
    const double fd = (4.0 * central(h / 2.0) - central(h)) / 3.0;
    const double g = lg.grads.at(name).data()[i];
    const double scale = std::max(std::abs(fd), std::abs(g));
    // Evaluating a loss of order 30 carries ~1e-14 absolute noise, so the
    // quotient is only good to ~1e-10; below 1e-4 compare absolutely.
    if (scale < 1e-4) {
      EXPECT_LT(std::abs(fd - g), 1e-9) << name << "[" << i << "]";
      continue;
    }
    EXPECT_LT(std::abs(fd - g) / scale, 1e-5) << name << "[" << i << "] fd=" << fd << " ad=" << g;
    ++compared;
  }
  EXPECT_GE(compared, 200);
}

TEST(GradLoss, OnlyCoordinateGatesMatterAtInitialization) {
  // With every coordinate gate zero the output is identically zero, so no
  // other parameter can influence the loss.
  const ModelConfig c = small_config();
  std::mt19937_64 rng(16);
  const DenoiserParameters p = init_params(c, rng);
  const Example ex = random_example(5, rng);
  const std::vector<TrainingExample> batch{{ex.mol.positions(), ex.cond}};
  const NoiseSchedule sched = make_schedule(c.t_max);
  const LossAndGrads lg = grad_loss(p, batch, sched, c, rng);
  for (const auto& [name, g] : lg.grads) {
    if (name.find("coord_gate") != std::string::npos) continue;
    EXPECT_EQ(g.cwiseAbs().maxCoeff(), 0.0) << name;
  }
  EXPECT_GT(lg.grads.at("final.eqblock.coord_gate.w").norm(), 0.0);
}

TEST(GradLoss, DuplicatedBatchIsUnchanged) {
  const ModelConfig c = small_config();
  const DenoiserParameters p = perturbed_params(c, 17, 0.1);
  std::mt19937_64 rng(18);
  std::vector<TrainingExample> batch;
  std::vector<TrainingDraw> draws;
  const NoiseSchedule sched = make_schedule(c.t_max);
  for (int k = 0; k < 3; ++k) {
    const Example ex = random_example(4 + k, rng);
    batch.push_back({ex.mol.positions(), ex.cond});
    draws.push_back(draw_training_noise(ex.cond.size(), MassWeights(ex.cond.masses), sched, rng));
  }
  const LossAndGrads one = grad_loss(p, batch, draws, sched, c);
  std::vector<TrainingExample> batch2 = batch;
  std::vector<TrainingDraw> draws2 = draws;
  batch2.insert(batch2.end(), batch.begin(), batch.end());
  draws2.insert(draws2.end(), draws.begin(), draws.end());
  const LossAndGrads two = grad_loss(p, batch2, draws2, sched, c, 2);
  EXPECT_NEAR(one.loss, two.loss, 1e-12 * one.loss);
  for (const auto& [name, g] : one.grads)
    EXPECT_LT((g - two.grads.at(name)).cwiseAbs().maxCoeff(), 1e-12 * std::max(1.0, g.cwiseAbs().maxCoeff()))
        << name;
}

TEST(GradLoss, ThreadCountDoesNotChangeResult) {
  const ModelConfig c = small_config();
  const DenoiserParameters p = perturbed_params(c, 19, 0.1);
  std::mt19937_64 rng(20);
  std::vector<TrainingExample> batch;
  for (int k = 0; k < 4; ++k) {
    const Example ex = random_example(4, rng);
    batch.push_back({ex.mol.positions(), ex.cond});
  }
  const NoiseSchedule sched = make_schedule(c.t_max);
  std::mt19937_64 a(21), b(21);
  const LossAndGrads g1 = grad_loss(p, batch, sched, c, a, 1);
  const LossAndGrads g3 = grad_loss(p, batch, sched, c, b, 3);
  EXPECT_EQ(g1.loss, g3.loss);
  for (const auto& [name, g] : g1.grads) EXPECT_EQ(g, g3.grads.at(name)) << name;
}

TEST(GradLoss, NonFiniteActivationIsReported) {
  const ModelConfig c = small_config();
  DenoiserParameters p = perturbed_params(c, 22);
  p.at("input_proj.w")(0, 0) = std::numeric_limits<double>::quiet_NaN();
  std::mt19937_64 rng(23);
  const Example ex = random_example(4, rng);
  const Coords z = project_zero_com(random_coords(4, rng), MassWeights(ex.cond.masses));
  try {
    denoise_eps(p, z, ex.cond, 5, c);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::NonFiniteActivation);
  }
}
