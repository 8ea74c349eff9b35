#include "isostruct/diffusion.hpp"

#include <cmath>
#include <numbers>

#include "isostruct/error.hpp"

namespace isostruct {
namespace {

void check_t(int t, int lo, const NoiseSchedule& sched) {
  if (t < lo || t > sched.t_max)
    throw Error(Errc::TOutOfRange, "timestep " + std::to_string(t) + " outside [" +
                                       std::to_string(lo) + ", " + std::to_string(sched.t_max) + "]");
}

double alpha_at(const NoiseSchedule& sched, int t) { return sched.alpha[static_cast<std::size_t>(t)]; }
double sigma_at(const NoiseSchedule& sched, int t) { return sched.sigma[static_cast<std::size_t>(t)]; }

}  // namespace

NoiseSchedule make_schedule(int t_max, const std::string& kind) {
  if (t_max < 1) throw Error(Errc::InvalidArgument, "t_max must be >= 1");
  std::function<double(double)> profile;
  if (kind == "polynomial-2") {
    profile = [](double tau) { return (1.0 - tau * tau) * (1.0 - tau * tau); };
  } else if (kind == "cosine") {
    constexpr double s = 0.008;
    const double norm = std::cos(s / (1.0 + s) * std::numbers::pi / 2.0);
    profile = [norm](double tau) {
      const double c = std::cos((tau + s) / (1.0 + s) * std::numbers::pi / 2.0) / norm;
      return std::max(c * c, 0.0);
    };
  } else {
    throw Error(Errc::UnknownKind, "noise schedule '" + kind + "'");
  }

  NoiseSchedule sched;
  sched.kind = kind;
  sched.t_max = t_max;
  sched.alpha.resize(static_cast<std::size_t>(t_max) + 1);
  sched.sigma.resize(sched.alpha.size());
  double running_min = 1.0;
  for (int t = 0; t <= t_max; ++t) {
    const double tau = static_cast<double>(t) / t_max;
    double a2 = profile(tau) * (1.0 - 2.0 * kScheduleOffset) + kScheduleOffset;
    a2 = std::min(a2, running_min);
    running_min = a2;
    sched.alpha[static_cast<std::size_t>(t)] = std::sqrt(a2);
    sched.sigma[static_cast<std::size_t>(t)] = std::sqrt(1.0 - a2);
  }
  return sched;
}

PosteriorParams posterior_coefficients(double alpha_prev, double alpha_t) {
  const double sigma2_prev = 1.0 - alpha_prev * alpha_prev;
  const double sigma2_t = 1.0 - alpha_t * alpha_t;
  const double step_alpha = alpha_t / alpha_prev;
  const double step_sigma2 = sigma2_t - step_alpha * step_alpha * sigma2_prev;
  return PosteriorParams{step_alpha * sigma2_prev / sigma2_t, alpha_prev * step_sigma2 / sigma2_t,
                         step_sigma2 * sigma2_prev / sigma2_t};
}

PosteriorParams posterior_params(int t, const NoiseSchedule& sched) {
  check_t(t, 1, sched);
  return posterior_coefficients(alpha_at(sched, t - 1), alpha_at(sched, t));
}

Coords corrupt_with(const Coords& x, const Coords& eps, int t, const NoiseSchedule& sched) {
  check_t(t, 0, sched);
  return alpha_at(sched, t) * x + sigma_at(sched, t) * eps;
}

Corruption corrupt(const Coords& x, int t, const NoiseSchedule& sched, const MassWeights& w,
                   std::mt19937_64& rng) {
  check_t(t, 0, sched);
  Corruption out;
  out.eps = sample_projected_gaussian(static_cast<std::size_t>(x.rows()), w, rng);
  out.z_t = corrupt_with(x, out.eps, t, sched);
  return out;
}

Coords x_hat_from_eps(const Coords& z_t, const Coords& eps_hat, int t, const NoiseSchedule& sched) {
  check_t(t, 0, sched);
  const double a = alpha_at(sched, t);
  return (1.0 / a) * z_t - (sigma_at(sched, t) / a) * eps_hat;
}

NoiseSource projected_gaussian_source(const MassWeights& w, std::mt19937_64& rng) {
  return [&w, &rng]() { return sample_projected_gaussian(w.size(), w, rng); };
}

Coords sample(const DenoiseFn& denoise, const MassWeights& w, const NoiseSchedule& sched,
              const NoiseSource& noise, const SampleObserver& observer) {
  Coords z = project_zero_com(noise(), w);
  if (observer) observer(sched.t_max, z);
  for (int t = sched.t_max; t >= 1; --t) {
    const Coords eps_hat = denoise(z, t);
    const Coords x_hat = x_hat_from_eps(z, eps_hat, t, sched);
    const PosteriorParams post = posterior_params(t, sched);
    Coords next = post.coeff_z * z + post.coeff_x * x_hat + std::sqrt(post.variance) * noise();
    z = project_zero_com(next, w);
    if (observer) observer(t - 1, z);
  }
  const Coords eps_hat = denoise(z, 0);
  Coords x = x_hat_from_eps(z, eps_hat, 0, sched);
  const double final_std = sigma_at(sched, 0) / alpha_at(sched, 0);
  if (final_std > 0.0) x += final_std * noise();
  x = project_zero_com(x, w);
  if (observer) observer(-1, x);
  return x;
}

Coords sample(const DenoiseFn& denoise, const MassWeights& w, const NoiseSchedule& sched,
              std::mt19937_64& rng) {
  return sample(denoise, w, sched, projected_gaussian_source(w, rng));
}

TrainingDraw draw_training_noise(std::size_t n, const MassWeights& w, const NoiseSchedule& sched,
                                 std::mt19937_64& rng) {
  std::uniform_int_distribution<int> pick_t(0, sched.t_max);
  TrainingDraw draw;
  draw.t = pick_t(rng);
  draw.eps = sample_projected_gaussian(n, w, rng);
  return draw;
}

double training_loss(const DenoiseFn& denoise, const Coords& x, const MassWeights& w,
                     const NoiseSchedule& sched, std::mt19937_64& rng) {
  const TrainingDraw draw = draw_training_noise(static_cast<std::size_t>(x.rows()), w, sched, rng);
  const Coords z_t = corrupt_with(x, draw.eps, draw.t, sched);
  return (draw.eps - denoise(z_t, draw.t)).squaredNorm();
}

}  // namespace isostruct
