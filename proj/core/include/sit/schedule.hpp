#pragma once

#include <vector>

#include "sit/autodiff.hpp"
#include "sit/image.hpp"

namespace sit {

enum class VarianceRule { beta, posterior };

/// Precomputed diffusion tables. Timesteps are 1-based: t runs 1..T, with
/// alpha_bar(0) == 1 by convention. sigma(1) is forced to 0 so the last
/// reverse step is deterministic given the trajectory.
///
/// A respaced schedule keeps a map back to the timesteps of the schedule it
/// was derived from; score models are conditioned on those original values.
struct NoiseSchedule {
  int T = 0;
  std::vector<double> betas, alphas, alpha_bars, sigmas;  // index t-1
  std::vector<int> timestep_map;                          // original t per step

  double beta(int t) const { return betas.at(t - 1); }
  double alpha(int t) const { return alphas.at(t - 1); }
  double alpha_bar(int t) const { return t == 0 ? 1.0 : alpha_bars.at(t - 1); }
  double sigma(int t) const { return sigmas.at(t - 1); }
  int original_t(int t) const { return timestep_map.at(t - 1); }
};

/// Linear beta ramp from beta_min to beta_max over T steps.
NoiseSchedule build_schedule(int T, double beta_min, double beta_max,
                             VarianceRule rule = VarianceRule::beta);

/// Schedule from explicit betas; validates 0 < beta < 1 and derives the
/// remaining tables.
NoiseSchedule build_schedule_from_betas(std::vector<double> betas, VarianceRule rule,
                                        std::vector<int> timestep_map = {});

/// Strided sub-schedule with `steps` entries whose alpha_bar values match
/// the base schedule at the selected original timesteps.
NoiseSchedule respace_schedule(const NoiseSchedule& base, int steps,
                               VarianceRule rule = VarianceRule::beta);

/// x_t = sqrt(abar_t)·x0 + sqrt(1-abar_t)·eps
Image q_sample(const NoiseSchedule& s, const Image& x0, int t, const Image& eps);

/// x0_hat = x_t/sqrt(abar_t) - sqrt(1-abar_t)/sqrt(abar_t)·eps_pred
Image tweedie_x0(const NoiseSchedule& s, const Image& x_t, int t, const Image& eps_pred);
ad::Var tweedie_x0(ad::Tape& tape, const NoiseSchedule& s, ad::Var x_t, int t, ad::Var eps_pred);

/// mu = (x_t - (1-alpha_t)/sqrt(1-abar_t)·eps_pred)/sqrt(alpha_t)
Image posterior_mean(const NoiseSchedule& s, const Image& x_t, int t, const Image& eps_pred);

/// x_{t-1} = mu + sigma_t·noise
Image reverse_step(const NoiseSchedule& s, const Image& x_t, int t, const Image& eps_pred,
                   const Image& noise);

/// x' - grad; grad is the total-loss gradient w.r.t. x_t supplied by the sampler.
Image mcg_correct(const Image& x_prime, const Image& grad);

/// Noise prediction with x0_hat kept algebraically consistent via the
/// Tweedie estimate.
struct DenoisePrediction {
  Image eps;
  Image x0_hat;
  int t = 0;
};

DenoisePrediction make_prediction(const NoiseSchedule& s, const Image& x_t, int t, Image eps);

}  // namespace sit
