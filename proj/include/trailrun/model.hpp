#pragma once

/**
 * @file model.hpp
 * @brief Runner dynamics: dimensional and rescaled state equations, parameter
 *        scaling, and a fixed-step 4th-order integrator.
 *
 * State is (v, x, E, Q): velocity, distance, energy per unit mass, fatigue.
 * The propulsive force per unit mass f is the control. All operations here
 * are pure; types are immutable value objects after construction.
 */

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "trailrun/common.hpp"

namespace trailrun {

/// Dimensional physiology of one runner. Units in field names/comments.
struct RunnerProfile {
  double mass_kg = 65.0;        // body mass
  double vo2max = 81.0;         // ml kg^-1 min^-1
  double f_max = 6.7;           // max propulsive force per unit mass, m/s^2
  double tau_s = 0.67;          // internal-resistance time constant, s
  double e0 = 2500.0;           // initial energy per unit mass, m^2/s^2
  double k_fatigue = 6.0e-5;    // fatigue proportionality, 1/s
  double c_drag = 3.75e-3;      // quadratic drag coefficient, 1/m
  double zeta = 1.6736e4;       // energy per gram of carbohydrate, J/g

  /// Throws DomainError on invariant violations; returns non-fatal warnings
  /// (e.g. e0 outside the customary 1.4e3..2.5e3 range).
  std::vector<std::string> validate() const {
    auto positive = [](double x, const char* name) {
      if (!(x > 0.0) || !is_finite(x))
        throw DomainError(std::string("RunnerProfile: ") + name +
                          " must be strictly positive");
    };
    positive(mass_kg, "mass_kg");
    positive(vo2max, "vo2max");
    positive(f_max, "f_max");
    positive(tau_s, "tau_s");
    positive(e0, "e0");
    positive(k_fatigue, "k_fatigue");
    positive(c_drag, "c_drag");
    positive(zeta, "zeta");
    std::vector<std::string> warnings;
    if (e0 < 1.4e3 || e0 > 2.5e3)
      warnings.push_back("e0 = " + std::to_string(e0) +
                         " m^2/s^2 lies outside the customary range "
                         "[1.4e3, 2.5e3]");
    return warnings;
  }
};

/// Constants of the rescaled system plus the scales used to produce them.
struct ScaledParams {
  double iota = 0;    // T / tau
  double beta = 0;    // g T / (F tau)
  double gamma = 0;   // c T F tau
  double kappa = 0;   // sigma T / E0
  double chi = 0;     // F^2 tau T / E0
  double phi = 0;     // zeta M T / (m E0)
  double omega = 0;   // K F^2 tau T^2 / E0

  double t_scale_s = 0;  // horizon T
  double v_scale = 0;    // F tau, m/s
  double d_scale = 0;    // F tau T, m
  double q_scale = 0;    // K F^2 tau T, m^2/s^3
  double e_scale = 0;    // E0, m^2/s^2
  double f_scale = 0;    // F, m/s^2
  double n_scale = 0;    // M, g/s

  bool all_positive() const {
    for (double c : {iota, beta, gamma, kappa, chi, phi, omega, t_scale_s,
                     v_scale, d_scale, q_scale, e_scale, f_scale, n_scale})
      if (!(c > 0.0) || !is_finite(c)) return false;
    return true;
  }
};

/// (v, x, E, Q) in the units of the enclosing trajectory's flavor.
struct State {
  double v = 0;
  double x = 0;
  double e = 0;
  double q = 0;

  State operator+(const State& o) const { return {v + o.v, x + o.x, e + o.e, q + o.q}; }
  State operator*(double a) const { return {a * v, a * x, a * e, a * q}; }
};

/// Time grid with states, controls and the derived oxidation rate.
struct Trajectory {
  std::vector<double> times;
  std::vector<State> states;
  std::vector<double> controls;
  std::vector<double> n_rates;  // same flavor as the rest; may be empty
  Flavor flavor = Flavor::Nondimensional;

  std::size_t size() const { return times.size(); }

  /// Checks grid monotonicity and control bounds (tolerance 1e-9).
  void validate(double control_upper) const {
    if (times.size() != states.size() || times.size() != controls.size())
      throw DomainError("Trajectory: field lengths differ");
    if (!n_rates.empty() && n_rates.size() != times.size())
      throw DomainError("Trajectory: n_rates length differs");
    for (std::size_t i = 1; i < times.size(); ++i)
      if (!(times[i] > times[i - 1]))
        throw DomainError("Trajectory: time grid not strictly increasing");
    for (double f : controls)
      if (f < -1e-9 || f > control_upper + 1e-9)
        throw DomainError("Trajectory: control outside [0, " +
                          std::to_string(control_upper) + "]");
  }
};

namespace detail {
inline void check_alpha(double alpha) {
  constexpr double half_pi = 1.57079632679489661923;
  if (!(alpha > -half_pi && alpha < half_pi))
    throw DomainError("slope angle must lie in (-pi/2, pi/2), got " +
                      std::to_string(alpha));
}
}  // namespace detail

/**
 * Dimensional right-hand side.
 *
 *   dv/dt = f - g sin(a) - v/tau - [c v^2]      (drag optional)
 *   dx/dt = v
 *   dE/dt = sigma - f v + (zeta/m) n_rate - Q
 *   dQ/dt = K f v
 *
 * @param n_rate carbohydrate oxidation rate, g/s
 * @param sigma  aerobic energy supply, m^2/s^3
 */
inline State rhs_dimensional(const State& s, double f, double alpha,
                             double n_rate, const RunnerProfile& p,
                             double sigma, bool drag_on = true) {
  if (s.v < 0) throw DomainError("rhs_dimensional: velocity must be >= 0");
  detail::check_alpha(alpha);
  if (f < -1e-12 || f > p.f_max * (1 + 1e-12))
    throw DomainError("rhs_dimensional: control outside [0, F]");
  State d;
  d.v = f - kGravity * std::sin(alpha) - s.v / p.tau_s -
        (drag_on ? p.c_drag * s.v * s.v : 0.0);
  d.x = s.v;
  d.e = sigma - f * s.v + (p.zeta / p.mass_kg) * n_rate - s.q;
  d.q = p.k_fatigue * f * s.v;
  return d;
}

/**
 * Rescaled right-hand side (all quantities dimensionless, f in [0,1]).
 *
 *   dv/dt = iota (f - v) - beta sin(a) - [gamma v^2]
 *   dx/dt = v                        (v cos(a) if horizontal_distance)
 *   dE/dt = kappa - chi f v + phi n - omega q
 *   dQ/dt = f v
 *
 * Drag is off by default; the rescaled model neglects the small gamma term.
 * @param horizontal_distance use dx/dt = v cos(a), matching courses whose
 *        distance coordinate is horizontal.
 */
inline State rhs_scaled(const State& s, double f, double alpha,
                        double n_scaled, const ScaledParams& sp,
                        bool drag_on = false,
                        bool horizontal_distance = false) {
  if (s.v < 0) throw DomainError("rhs_scaled: velocity must be >= 0");
  detail::check_alpha(alpha);
  if (f < -1e-12 || f > 1 + 1e-12)
    throw DomainError("rhs_scaled: control outside [0, 1]");
  State d;
  d.v = sp.iota * (f - s.v) - sp.beta * std::sin(alpha) -
        (drag_on ? sp.gamma * s.v * s.v : 0.0);
  d.x = horizontal_distance ? s.v * std::cos(alpha) : s.v;
  d.e = sp.kappa - sp.chi * f * s.v + sp.phi * n_scaled - sp.omega * s.q;
  d.q = f * s.v;
  return d;
}

/**
 * Builds the rescaled constants from dimensional inputs.
 *
 * @param sigma       available aerobic supply, m^2/s^3
 * @param m_oxid_max  maximal oxidation rate M, g/s
 * @param horizon_s   time scale T, s
 */
inline ScaledParams nondimensionalize(const RunnerProfile& p, double sigma,
                                      double m_oxid_max, double horizon_s) {
  if (!(horizon_s > 0)) throw DomainError("nondimensionalize: horizon must be > 0");
  if (!(sigma > 0)) throw DomainError("nondimensionalize: sigma must be > 0");
  if (!(m_oxid_max > 0)) throw DomainError("nondimensionalize: M must be > 0");
  p.validate();
  const double F = p.f_max, tau = p.tau_s, T = horizon_s;
  ScaledParams sp;
  sp.iota = T / tau;
  sp.beta = kGravity * T / (F * tau);
  sp.gamma = p.c_drag * T * F * tau;
  sp.kappa = sigma * T / p.e0;
  sp.chi = F * F * tau * T / p.e0;
  sp.phi = p.zeta * m_oxid_max * T / (p.mass_kg * p.e0);
  sp.omega = p.k_fatigue * F * F * tau * T * T / p.e0;
  sp.t_scale_s = T;
  sp.v_scale = F * tau;
  sp.d_scale = F * tau * T;
  sp.q_scale = p.k_fatigue * F * F * tau * T;
  sp.e_scale = p.e0;
  sp.f_scale = F;
  sp.n_scale = m_oxid_max;
  return sp;
}

/// Max relative error between stored constants and their defining formulas.
inline double scaling_self_check(const ScaledParams& sp, const RunnerProfile& p,
                                 double sigma, double m_oxid_max) {
  const ScaledParams r = nondimensionalize(p, sigma, m_oxid_max, sp.t_scale_s);
  double err = 0;
  auto acc = [&](double a, double b) { err = std::max(err, rel_diff(a, b)); };
  acc(sp.iota, r.iota); acc(sp.beta, r.beta); acc(sp.gamma, r.gamma);
  acc(sp.kappa, r.kappa); acc(sp.chi, r.chi); acc(sp.phi, r.phi);
  acc(sp.omega, r.omega); acc(sp.v_scale, r.v_scale);
  acc(sp.d_scale, r.d_scale); acc(sp.q_scale, r.q_scale);
  return err;
}

/// Maps a rescaled state to SI units.
inline State to_dimensional(const State& s, const ScaledParams& sp) {
  return {s.v * sp.v_scale, s.x * sp.d_scale, s.e * sp.e_scale, s.q * sp.q_scale};
}

/// Maps an SI state to the rescaled system.
inline State to_scaled(const State& s, const ScaledParams& sp) {
  return {s.v / sp.v_scale, s.x / sp.d_scale, s.e / sp.e_scale, s.q / sp.q_scale};
}

/**
 * Classical fixed-step RK4 over an explicit time grid.
 *
 * The slope is looked up at the running x of each stage, so the ODE is
 * state-dependent through alpha(x). Energy is reported raw (never clamped
 * here; bounding E is the optimizer's concern).
 *
 * @param rhs        (t, state, f, alpha) -> State derivative
 * @param control    t -> f
 * @param slope_at_x x -> alpha [rad]
 * @throws NumericError naming the first node where a stage went non-finite
 */
template <class Rhs, class Control, class Slope>
Trajectory integrate(Rhs&& rhs, const State& initial, Control&& control,
                     Slope&& slope_at_x, std::span<const double> grid,
                     Flavor flavor) {
  if (grid.size() < 2) throw DomainError("integrate: grid needs >= 2 nodes");
  for (std::size_t i = 1; i < grid.size(); ++i)
    if (!(grid[i] > grid[i - 1]))
      throw DomainError("integrate: grid not strictly increasing");

  Trajectory traj;
  traj.flavor = flavor;
  traj.times.assign(grid.begin(), grid.end());
  traj.states.resize(grid.size());
  traj.controls.resize(grid.size());
  traj.states[0] = initial;
  traj.controls[0] = control(grid[0]);

  auto eval = [&](double t, const State& s) {
    return rhs(t, s, control(t), slope_at_x(s.x));
  };
  auto ok = [](const State& s) {
    return is_finite(s.v) && is_finite(s.x) && is_finite(s.e) && is_finite(s.q);
  };

  State y = initial;
  for (std::size_t i = 0; i + 1 < grid.size(); ++i) {
    const double t = grid[i], h = grid[i + 1] - grid[i];
    try {
      const State k1 = eval(t, y);
      const State k2 = eval(t + h / 2, y + k1 * (h / 2));
      const State k3 = eval(t + h / 2, y + k2 * (h / 2));
      const State k4 = eval(t + h, y + k3 * h);
      y = y + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
    } catch (const std::exception& e) {
      throw NumericError("integrate: stage failed at node " +
                         std::to_string(i + 1) + ": " + e.what());
    }
    if (!ok(y))
      throw NumericError("integrate: non-finite state at node " +
                         std::to_string(i + 1));
    traj.states[i + 1] = y;
    traj.controls[i + 1] = control(grid[i + 1]);
  }
  return traj;
}

/// Convenience: uniform grid with n_intervals over [t0, t1].
inline std::vector<double> uniform_grid(double t0, double t1, int n_intervals) {
  if (n_intervals < 1 || !(t1 > t0)) throw DomainError("uniform_grid: bad span");
  std::vector<double> g(n_intervals + 1);
  for (int i = 0; i <= n_intervals; ++i)
    g[i] = t0 + (t1 - t0) * double(i) / n_intervals;
  return g;
}

}  // namespace trailrun
