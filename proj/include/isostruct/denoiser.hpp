#pragma once

#include <map>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "isostruct/autograd.hpp"
#include "isostruct/diffusion.hpp"
#include "isostruct/geometry.hpp"
#include "isostruct/kraitchman.hpp"
#include "isostruct/subspace.hpp"

namespace isostruct {

/// Multiplicative input normalization for the 11 conditioning columns.
/// Stored with checkpoints so inference scales exactly as training did.
struct FeatureScaling {
  double atomic_number = 0.1;
  double mass = 1.0 / 12.0;
  double coordinate = 1.0;
  double moment = 0.01;
};

inline constexpr int kConditioningWidth = 11;

/// Per-atom conditioning. Column layout of `features` (before scaling):
///   0      atomic number
///   1      atomic mass (amu)
///   2..4   unsigned substitution coordinates |x|,|y|,|z| (0 when missing)
///   5..7   availability mask
///   8..10  P_X, P_Y, P_Z, identical in every row
struct ConditioningFeatures {
  ad::Matrix features;
  std::vector<int> atomic_numbers;
  std::vector<double> masses;

  std::size_t size() const { return atomic_numbers.size(); }
};

struct ModelConfig {
  int hidden_dim = 256;
  int message_dim = 320;
  int cond_mlp_dim = 128;
  int time_embed_dim = 128;
  int atom_embed_dim = 32;
  int n_blocks = 6;
  int n_heads = 8;
  int head_dim = 32;
  int t_max = 1000;  // timesteps are embedded as t / t_max

  void validate() const;
};

/// Named parameter tensors, e.g. "block3.eqblock.message_mlp.w1".
struct DenoiserParameters {
  std::map<std::string, ad::Matrix> tensors;

  std::size_t parameter_count() const;
  const ad::Matrix& at(const std::string& name) const;
  ad::Matrix& at(const std::string& name);
};

ConditioningFeatures build_conditioning(const Molecule& mol, const SubstitutionTable& table,
                                        const PlanarMoments& pm, const FeatureScaling& scaling = {});

/// Reflection-invariant pair features of x and x' (13 values):
/// |x-x'|², x·x', |x|², |x'|², s(x-x'), s(x), s(x'), with s the elementwise square.
Eigen::Matrix<double, 13, 1> distance_features(const Vec3& x, const Vec3& x_prime);

/// Interleaved sin/cos embedding of t/t_max with geometric frequencies in [1, 1e4].
Eigen::RowVectorXd time_embedding(int t, int t_max, int dim);

DenoiserParameters init_params(const ModelConfig& config, std::mt19937_64& rng);

/// One equivariant block evaluated outside the full network, for testing.
/// `prefix` names its parameters (e.g. "block0.eqblock").
struct EqBlockOutput {
  Coords x;
  ad::Matrix h;
};
EqBlockOutput eq_block(const DenoiserParameters& params, const std::string& prefix,
                       const ModelConfig& config, const Coords& x, const ad::Matrix& h,
                       const Coords& x0);

/// Noise prediction epŝ(z_t, C, t), an N×3 matrix in the zero-CoM subspace.
/// Throws NonFiniteActivation if any activation is not finite.
Coords denoise_eps(const DenoiserParameters& params, const Coords& z_t,
                   const ConditioningFeatures& cond, int t, const ModelConfig& config);

/// Adapter for the diffusion sampler with the conditioning bound in.
DenoiseFn make_denoise_fn(const DenoiserParameters& params, const ConditioningFeatures& cond,
                          const ModelConfig& config);

struct TrainingExample {
  Coords x;  // PAS-aligned, zero weighted CoM
  ConditioningFeatures cond;
};

struct LossAndGrads {
  double loss = 0.0;
  std::map<std::string, ad::Matrix> grads;
};

/// Mean training loss over the batch and its parameter gradients, with the
/// timestep and noise of every example given explicitly.
LossAndGrads grad_loss(const DenoiserParameters& params, std::span<const TrainingExample> batch,
                       std::span<const TrainingDraw> draws, const NoiseSchedule& sched,
                       const ModelConfig& config, int threads = 1);

/// Same, drawing (t, eps) for each example from `rng` in batch order.
LossAndGrads grad_loss(const DenoiserParameters& params, std::span<const TrainingExample> batch,
                       const NoiseSchedule& sched, const ModelConfig& config, std::mt19937_64& rng,
                       int threads = 1);

/// Loss only, no gradient bookkeeping.
double batch_loss(const DenoiserParameters& params, std::span<const TrainingExample> batch,
                  std::span<const TrainingDraw> draws, const NoiseSchedule& sched,
                  const ModelConfig& config);

}  // namespace isostruct
