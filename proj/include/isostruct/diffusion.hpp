#pragma once

#include <functional>
#include <random>
#include <string>
#include <vector>

#include "isostruct/subspace.hpp"

namespace isostruct {

/// Variance-preserving schedule: alpha strictly decreasing from ~1 to ~0,
/// sigma_t² = 1 - alpha_t².
struct NoiseSchedule {
  std::string kind;
  int t_max = 0;
  std::vector<double> alpha;
  std::vector<double> sigma;

  double sigma2(int t) const { return 1.0 - alpha[static_cast<std::size_t>(t)] * alpha[static_cast<std::size_t>(t)]; }
};

inline constexpr double kScheduleOffset = 1e-5;

/// kind: "polynomial-2" (default) with alpha_t² = (1 - (t/T)²)²(1 - 2s) + s,
/// or "cosine" with the squared-cosine profile under the same offset.
/// s = 1e-5. Throws UnknownKind.
NoiseSchedule make_schedule(int t_max, const std::string& kind = "polynomial-2");

struct PosteriorParams {
  double coeff_z;
  double coeff_x;
  double variance;
};

/// q(z_{t-1} | z_t, x) coefficients from the two adjacent alphas.
PosteriorParams posterior_coefficients(double alpha_prev, double alpha_t);
/// Same, read from the schedule; 1 <= t <= T else TOutOfRange.
PosteriorParams posterior_params(int t, const NoiseSchedule& sched);

struct Corruption {
  Coords z_t;
  Coords eps;
};

Corruption corrupt(const Coords& x, int t, const NoiseSchedule& sched, const MassWeights& w,
                   std::mt19937_64& rng);
/// z_t = alpha_t x + sigma_t eps for a given eps.
Coords corrupt_with(const Coords& x, const Coords& eps, int t, const NoiseSchedule& sched);

/// x̂ = z_t / alpha_t - (sigma_t / alpha_t) epŝ.
Coords x_hat_from_eps(const Coords& z_t, const Coords& eps_hat, int t, const NoiseSchedule& sched);

/// Noise predictor with the conditioning bound in: (z_t, t) -> epŝ in U.
using DenoiseFn = std::function<Coords(const Coords& z_t, int t)>;
/// Source of projected standard-normal draws (one N×3 matrix per call).
using NoiseSource = std::function<Coords()>;
/// Called with every intermediate state z_t (t = T..0) and the final x (t = -1).
using SampleObserver = std::function<void(int t, const Coords& state)>;

NoiseSource projected_gaussian_source(const MassWeights& w, std::mt19937_64& rng);

/// Ancestral sampling: z_T ~ N(0, Φ), then z_{t-1} ~ q(z_{t-1} | z_t, x̂),
/// then x ~ N(x̂(z_0), (sigma_0/alpha_0)²), projecting every draw onto U.
Coords sample(const DenoiseFn& denoise, const MassWeights& w, const NoiseSchedule& sched,
              const NoiseSource& noise, const SampleObserver& observer = {});
Coords sample(const DenoiseFn& denoise, const MassWeights& w, const NoiseSchedule& sched,
              std::mt19937_64& rng);

/// One draw for the training objective: t ~ U{0..T} and projected eps.
struct TrainingDraw {
  int t;
  Coords eps;
};

TrainingDraw draw_training_noise(std::size_t n, const MassWeights& w, const NoiseSchedule& sched,
                                 std::mt19937_64& rng);

/// ‖eps - epŝ(alpha_t x + sigma_t eps, t)‖² summed over all entries.
double training_loss(const DenoiseFn& denoise, const Coords& x, const MassWeights& w,
                     const NoiseSchedule& sched, std::mt19937_64& rng);

}  // namespace isostruct
