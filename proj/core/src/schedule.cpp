#include "sit/schedule.hpp"

#include <cmath>

#include "sit/errors.hpp"

namespace sit {

namespace {

void check_t(const NoiseSchedule& s, int t) {
  if (t < 1 || t > s.T) throw InvalidArgument("timestep out of range [1, T]");
}

void check_shapes(const Image& a, const Image& b, const char* what) {
  if (!a.same_shape(b)) throw InvalidArgument(std::string("shape mismatch in ") + what);
}

}  // namespace

NoiseSchedule build_schedule_from_betas(std::vector<double> betas, VarianceRule rule,
                                        std::vector<int> timestep_map) {
  const int T = int(betas.size());
  if (T < 1) throw InvalidArgument("schedule needs T >= 1");
  NoiseSchedule s;
  s.T = T;
  s.betas = std::move(betas);
  s.alphas.resize(T);
  s.alpha_bars.resize(T);
  s.sigmas.resize(T);
  double prod = 1.0;
  for (int i = 0; i < T; ++i) {
    double b = s.betas[i];
    if (!(b > 0.0 && b < 1.0)) throw InvalidArgument("beta out of range (0, 1)");
    s.alphas[i] = 1.0 - b;
    prod *= s.alphas[i];
    s.alpha_bars[i] = prod;
  }
  for (int t = 1; t <= T; ++t) {
    double var;
    if (rule == VarianceRule::beta) {
      var = s.beta(t);
    } else {
      var = s.beta(t) * (1.0 - s.alpha_bar(t - 1)) / (1.0 - s.alpha_bar(t));
    }
    s.sigmas[t - 1] = std::sqrt(var);
  }
  s.sigmas[0] = 0.0;  // terminal step is deterministic
  if (timestep_map.empty()) {
    s.timestep_map.resize(T);
    for (int t = 1; t <= T; ++t) s.timestep_map[t - 1] = t;
  } else {
    if (int(timestep_map.size()) != T) throw InvalidArgument("timestep_map length mismatch");
    s.timestep_map = std::move(timestep_map);
  }
  return s;
}

NoiseSchedule build_schedule(int T, double beta_min, double beta_max, VarianceRule rule) {
  if (T < 1) throw InvalidArgument("schedule needs T >= 1");
  if (!(beta_min > 0.0 && beta_min <= beta_max && beta_max < 1.0))
    throw InvalidArgument("need 0 < beta_min <= beta_max < 1");
  std::vector<double> betas(T);
  for (int t = 1; t <= T; ++t) {
    betas[t - 1] = T == 1 ? beta_min : beta_min + double(t - 1) / double(T - 1) * (beta_max - beta_min);
  }
  return build_schedule_from_betas(std::move(betas), rule);
}

NoiseSchedule respace_schedule(const NoiseSchedule& base, int steps, VarianceRule rule) {
  if (steps < 1 || steps > base.T) throw InvalidArgument("respace: steps must be in [1, T]");
  // Evenly strided original timesteps, always ending at T. The respaced
  // beta makes the alpha_bar products land exactly on the base values.
  std::vector<int> picks(steps);
  for (int j = 1; j <= steps; ++j) picks[j - 1] = int(std::llround(double(j) * base.T / steps));
  std::vector<double> betas(steps);
  std::vector<int> tmap(steps);
  double prev_ab = 1.0;
  for (int j = 0; j < steps; ++j) {
    double ab = base.alpha_bar(picks[j]);
    betas[j] = 1.0 - ab / prev_ab;
    prev_ab = ab;
    tmap[j] = base.original_t(picks[j]);
  }
  return build_schedule_from_betas(std::move(betas), rule, std::move(tmap));
}

Image q_sample(const NoiseSchedule& s, const Image& x0, int t, const Image& eps) {
  check_t(s, t);
  check_shapes(x0, eps, "q_sample");
  double ab = s.alpha_bar(t);
  Image out = x0;
  out.data = std::sqrt(ab) * x0.data + std::sqrt(1.0 - ab) * eps.data;
  return out;
}

Image tweedie_x0(const NoiseSchedule& s, const Image& x_t, int t, const Image& eps_pred) {
  check_t(s, t);
  check_shapes(x_t, eps_pred, "tweedie_x0");
  double ab = s.alpha_bar(t);
  Image out = x_t;
  out.data = x_t.data / std::sqrt(ab) - (std::sqrt(1.0 - ab) / std::sqrt(ab)) * eps_pred.data;
  return out;
}

ad::Var tweedie_x0(ad::Tape& tape, const NoiseSchedule& s, ad::Var x_t, int t, ad::Var eps_pred) {
  check_t(s, t);
  double ab = s.alpha_bar(t);
  return ad::sub(ad::muls(x_t, 1.0 / std::sqrt(ab)), ad::muls(eps_pred, std::sqrt(1.0 - ab) / std::sqrt(ab)));
}

Image posterior_mean(const NoiseSchedule& s, const Image& x_t, int t, const Image& eps_pred) {
  check_t(s, t);
  check_shapes(x_t, eps_pred, "posterior_mean");
  double a = s.alpha(t);
  double ab = s.alpha_bar(t);
  Image out = x_t;
  out.data = (x_t.data - ((1.0 - a) / std::sqrt(1.0 - ab)) * eps_pred.data) / std::sqrt(a);
  return out;
}

Image reverse_step(const NoiseSchedule& s, const Image& x_t, int t, const Image& eps_pred,
                   const Image& noise) {
  check_shapes(x_t, noise, "reverse_step");
  Image out = posterior_mean(s, x_t, t, eps_pred);
  out.data += s.sigma(t) * noise.data;
  return out;
}

Image mcg_correct(const Image& x_prime, const Image& grad) {
  check_shapes(x_prime, grad, "mcg_correct");
  Image out = x_prime;
  out.data -= grad.data;
  return out;
}

DenoisePrediction make_prediction(const NoiseSchedule& s, const Image& x_t, int t, Image eps) {
  DenoisePrediction p;
  p.x0_hat = tweedie_x0(s, x_t, t, eps);
  p.eps = std::move(eps);
  p.t = t;
  return p;
}

}  // namespace sit
