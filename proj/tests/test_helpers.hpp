#pragma once

// Shared helpers for the test suite: a deterministic generator, reference
// parameter sets, and small numerical oracles kept independent of the
// library code they check.

#include <cmath>
#include <cstdint>
#include <functional>

#include "trailrun/model.hpp"
#include "trailrun/nutrition.hpp"

namespace testutil {

/// xorshift64* — deterministic across platforms, no <random> idiosyncrasies.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0x9e3779b97f4a7c15ULL) : s_(seed ? seed : 1) {}
  double uniform(double lo = 0.0, double hi = 1.0) {
    s_ ^= s_ >> 12;
    s_ ^= s_ << 25;
    s_ ^= s_ >> 27;
    const std::uint64_t r = s_ * 0x2545F4914F6CDD1DULL;
    return lo + (hi - lo) * (double(r >> 11) * (1.0 / 9007199254740992.0));
  }

 private:
  std::uint64_t s_;
};

/// The reference runner parameter set used throughout the tests.
inline trailrun::RunnerProfile reference_runner() {
  trailrun::RunnerProfile p;
  p.mass_kg = 65.0;
  p.vo2max = 81.0;
  p.f_max = 6.7;
  p.tau_s = 0.67;
  p.e0 = 2500.0;
  p.k_fatigue = 6.0e-5;
  p.c_drag = 3.75e-3;
  p.zeta = 1.6736e4;
  return p;
}

/// Scales for the 20 km reference scenario (sigma = 27, T = 5820 s).
inline trailrun::ScaledParams reference_scaled() {
  return trailrun::nondimensionalize(reference_runner(), 27.0,
                                     trailrun::canonical_params().m_max, 5820.0);
}

/// Adaptive Simpson quadrature, an independent oracle for integrals.
inline double adaptive_simpson(const std::function<double(double)>& f, double a,
                               double b, double tol = 1e-12, int depth = 24) {
  const double c = 0.5 * (a + b);
  const double fa = f(a), fb = f(b), fc = f(c);
  std::function<double(double, double, double, double, double, double, int)> rec =
      [&](double x0, double x2, double f0, double f1, double f2, double whole,
          int d) -> double {
    const double x1l = 0.5 * (x0 + 0.5 * (x0 + x2));
    const double xm = 0.5 * (x0 + x2);
    const double x1r = 0.5 * (xm + x2);
    const double fl = f(x1l), fr = f(x1r);
    const double left = (xm - x0) / 6.0 * (f0 + 4 * fl + f1);
    const double right = (x2 - xm) / 6.0 * (f1 + 4 * fr + f2);
    if (d <= 0 || std::abs(left + right - whole) < 15 * tol)
      return left + right + (left + right - whole) / 15.0;
    return rec(x0, xm, f0, fl, f1, left, d - 1) +
           rec(xm, x2, f1, fr, f2, right, d - 1);
  };
  const double whole = (b - a) / 6.0 * (fa + 4 * fc + fb);
  return rec(a, b, fa, fc, fb, whole, depth);
}

}  // namespace testutil
