#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "lvg/errors.hpp"

namespace lvg {

// Per-timestep noise tables shared by all diffusion operations.
// Indexing is 1-based in the math; beta(l) etc. take l in [1, L].
struct NoiseSchedule {
  std::size_t L = 0;
  std::vector<double> beta;       // noise variance added at step l
  std::vector<double> alpha;      // 1 - beta
  std::vector<double> alpha_bar;  // running product of alpha
  std::vector<double> nu;         // reverse-step noise scale

  double beta_at(std::size_t l) const { return beta[l - 1]; }
  double alpha_at(std::size_t l) const { return alpha[l - 1]; }
  double alpha_bar_at(std::size_t l) const { return alpha_bar[l - 1]; }
  double nu_at(std::size_t l) const { return nu[l - 1]; }

  void check_step(std::size_t l) const {
    if (l < 1 || l > L) throw ShapeError("timestep " + std::to_string(l) + " out of [1, L]");
  }
};

// Linear beta ramp from beta_min (l=1) to beta_max (l=L); nu_l = sqrt(beta_l).
inline NoiseSchedule build_schedule(std::size_t L, double beta_min, double beta_max) {
  if (L < 1) throw ConfigError("schedule: L must be >= 1");
  if (!(beta_min > 0.0) || !(beta_min <= beta_max) || !(beta_max < 1.0))
    throw ConfigError("schedule: need 0 < beta_min <= beta_max < 1");
  NoiseSchedule s;
  s.L = L;
  s.beta.resize(L);
  s.alpha.resize(L);
  s.alpha_bar.resize(L);
  s.nu.resize(L);
  double prod = 1.0;
  for (std::size_t i = 0; i < L; ++i) {
    const double frac = (L == 1) ? 0.0 : static_cast<double>(i) / static_cast<double>(L - 1);
    s.beta[i] = beta_min + (beta_max - beta_min) * frac;
    s.alpha[i] = 1.0 - s.beta[i];
    prod *= s.alpha[i];
    s.alpha_bar[i] = prod;
    s.nu[i] = std::sqrt(s.beta[i]);
  }
  return s;
}

}  // namespace lvg
