#pragma once

/**
 * @file physiology.hpp
 * @brief Aerobic supply sigma from VO2max with duration and altitude
 *        penalty fractions.
 */

#include <cmath>

#include "trailrun/common.hpp"

namespace trailrun {

constexpr double kMaxDurationS = 940.0 * 60.0;  // model validity limit

struct SigmaInputs {
  double vo2max = 0;      // ml kg^-1 min^-1
  double duration_s = 0;  // anticipated race duration
  double altitude_m = 0;  // mean altitude above sea level
};

/// Peak aerobic supply: sigma_hat = VO2max / 3 [m^2/s^3], via the standard
/// 20 kJ-per-litre-of-oxygen equivalence.
inline double sigma_hat(double vo2max) {
  if (!(vo2max > 0)) throw DomainError("sigma_hat: vo2max must be > 0");
  return vo2max / 3.0;
}

/// Fraction of VO2max sustainable for a race of the given duration:
/// f_d = (940 - T/60)/1000 with T in seconds. Not valid beyond 940 minutes.
inline double duration_fraction(double duration_s) {
  if (!(duration_s > 0))
    throw DomainError("duration_fraction: duration must be > 0");
  if (duration_s >= kMaxDurationS)
    throw DomainError(
        "duration_fraction: durations of 940 min and beyond are outside the "
        "model");
  return (940.0 - duration_s / 60.0) / 1000.0;
}

/// Fraction of metabolic power available at mean altitude a [m]:
/// f_a = 1 - 11.7e-9 a^2 - 4.01e-6 a.
inline double altitude_fraction(double altitude_m) {
  if (altitude_m < 0)
    throw DomainError("altitude_fraction: altitude must be >= 0");
  const double fa =
      1.0 - 11.7e-9 * altitude_m * altitude_m - 4.01e-6 * altitude_m;
  if (!(fa > 0))
    throw DomainError("altitude_fraction: altitude too high, no aerobic "
                      "power left in the model");
  return fa;
}

/// sigma = sigma_hat * f_d * f_a. Duration is typically the route record
/// when one is known, otherwise a caller-supplied estimate.
inline double sigma_available(const SigmaInputs& in) {
  return sigma_hat(in.vo2max) * duration_fraction(in.duration_s) *
         altitude_fraction(in.altitude_m);
}

/**
 * Optional fixed-point mode: re-solves sigma with the predicted duration
 * until |dT| < 10 s (at most 10 rounds). Off by default in the pipeline;
 * the standard configuration uses the route record only.
 *
 * @param predict duration_s(sigma): e.g. a race-time solve
 * @return converged (sigma, duration) pair; the last iterate if not
 */
template <class Predictor>
std::pair<double, double> sigma_fixed_point(double vo2max, double altitude_m,
                                            double duration_guess_s,
                                            Predictor&& predict) {
  double t = duration_guess_s;
  double sigma = sigma_available({vo2max, t, altitude_m});
  for (int i = 0; i < 10; ++i) {
    const double t_new = predict(sigma);
    const double dt = std::abs(t_new - t);
    t = t_new;
    sigma = sigma_available({vo2max, t, altitude_m});
    if (dt < 10.0) break;
  }
  return {sigma, t};
}

}  // namespace trailrun
