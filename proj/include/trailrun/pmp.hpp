#pragma once

/**
 * @file pmp.hpp
 * @brief Certification of candidate solutions against first-order optimality:
 *        backward adjoint integration, switching-function sign checks, arc
 *        classification, analytic singular controls, constraint-multiplier
 *        recovery, and the generalized Legendre-Clebsch test.
 *
 * All quantities live in the rescaled frame on t in [0,1] with the
 * maximum-distance endpoint conditions lx(1)=1, lv(1)=lE(1)=lQ(1)=0.
 * Minimum-time solutions are certified after rebasing onto their realized
 * horizon (the two problems share optimal trajectories).
 *
 * The slope derivative d(alpha)/dx of a piecewise-constant profile is zero
 * inside segments and undefined at boundaries; it is treated as zero
 * everywhere, so lx stays at 1 and segment-crossing jumps are absorbed by
 * the verification tolerances. This is the documented limitation for
 * variable-terrain certificates.
 */

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "trailrun/common.hpp"
#include "trailrun/model.hpp"
#include "trailrun/ocp.hpp"
#include "trailrun/terrain.hpp"

namespace trailrun {

enum class ArcKind { MaxForce, ZeroForce, Interior, BoundaryLower, BoundaryUpper };

inline const char* to_string(ArcKind k) {
  switch (k) {
    case ArcKind::MaxForce: return "max-force";
    case ArcKind::ZeroForce: return "zero-force";
    case ArcKind::Interior: return "interior";
    case ArcKind::BoundaryLower: return "boundary-E0";
    case ArcKind::BoundaryUpper: return "boundary-E1";
  }
  return "?";
}

struct ArcSegment {
  int first_node = 0, last_node = 0;  // inclusive node range
  double t_a = 0, t_b = 0;
  ArcKind kind = ArcKind::Interior;
  double mean_psi = 0;
  double mean_eta = 0;

  int nodes() const { return last_node - first_node + 1; }
  bool singular() const {
    return kind == ArcKind::Interior || kind == ArcKind::BoundaryLower ||
           kind == ArcKind::BoundaryUpper;
  }
  bool boundary() const {
    return kind == ArcKind::BoundaryLower || kind == ArcKind::BoundaryUpper;
  }
};

struct Costates {
  std::vector<double> lambda_x, lambda_v, lambda_e, lambda_q;  // per node
};

struct VerifyOptions {
  double tol_f = 1e-3;        // control threshold for bang classification
  double tol_e = 1e-3;        // energy threshold for boundary classification
  double tol_psi_rel = 1e-4;  // |psi| tolerance relative to max |psi|
  double sign_tol = 1e-6;     // one-sided tolerance for sign conditions
  double comp_slack_tol = 1e-8;
  double xval_tol = 0.02;     // |f - f_int| / |f - f_b| on singular arcs
  double v_min = 1e-3;        // below this the boundary control is undefined
  int min_arc_nodes = 3;      // shorter runs merge into a neighbor
  int junction_trim = 3;      // nodes ignored next to arc junctions
  bool cos_distance = false;  // trajectory used dx/dt = v cos(alpha)
};

struct PmpViolation {
  std::string check;
  double t = 0;
  double magnitude = 0;
};

struct PmpReport {
  std::vector<ArcSegment> arcs;
  Costates costates;
  std::vector<double> psi, eta, glc, alpha;  // per node (glc: singular arcs)
  std::vector<PmpViolation> violations;
  bool certified = false;
  double lambda_e_min = 0, lambda_q_max = 0, eta_min = 0, glc_min = 0;
  double psi_end = 0, psi_max_abs = 0;
  double f_int_dev_max = 0, f_b_dev_max = 0;
  double hamiltonian_rel_spread = 0;
  double inter_pass_delta = 0;
  double terminal_energy_multiplier = 0;  // contact jump of lambda_E at t=1
  // interior contact atoms of the capacity multiplier: (time, backward jump)
  std::vector<std::pair<double, double>> contact_atoms;
  // smallest positive grade on which full force was engaged, if any;
  // reported empirically rather than asserting a threshold value
  std::optional<double> maxforce_uphill_threshold_rad;
};

// ---------------------------------------------------------------------------
// elementary formulas

/// Switching function psi = iota lv - chi lE v + lQ v at one point.
inline double switching_value(const ScaledParams& sp, double v, double l_v,
                              double l_e, double l_q) {
  return sp.iota * l_v - sp.chi * l_e * v + l_q * v;
}

/// Interior singular control from the twice-differentiated switching
/// function. lx enters through the distance adjoint; with the horizontal
/// distance equation it carries cos(alpha).
inline double interior_control(const ScaledParams& sp, double v, double l_x,
                               double l_e, double l_q, double alpha,
                               bool cos_distance = false) {
  const double sa = std::sin(alpha);
  const double lx_eff = cos_distance ? l_x * std::cos(alpha) : l_x;
  const double num =
      sp.iota * sp.iota * lx_eff + 2.0 * sp.iota * sp.omega * l_e * v +
      sp.beta * sa *
          (sp.iota * sp.chi * l_e - sp.iota * l_q + 2.0 * sp.omega * l_e);
  const double den = 2.0 * sq(sp.iota) * sp.chi * l_e -
                     2.0 * sq(sp.iota) * l_q + sp.iota * sp.omega * l_e;
  if (std::abs(den) < 1e-10 * sq(sp.iota))
    throw NumericError("interior_control: singular denominator (horizon end)");
  return num / den;
}

/// Boundary-arc control keeping dE/dt = 0: f_b = (kappa + phi N - omega Q)/(chi v).
inline double boundary_control(const ScaledParams& sp, double v,
                               double n_scaled, double q, double v_min = 1e-3) {
  if (!(v > v_min))
    throw DomainError("boundary_control: undefined at near-zero velocity");
  return (sp.kappa + sp.phi * n_scaled - sp.omega * q) / (sp.chi * v);
}

/// Constraint multiplier on a boundary arc, from psi'(t) = 0.
inline double recover_eta(const ScaledParams& sp, double v, double e,
                          double l_x, double l_v, double l_e, double l_q,
                          double alpha, double v_min = 1e-3,
                          bool cos_distance = false) {
  if (std::min(e, 1.0 - e) > 0.1)
    throw DomainError("recover_eta: called off a boundary arc");
  if (!(v > v_min))
    throw DomainError("recover_eta: undefined at near-zero velocity");
  const double sa = std::sin(alpha);
  const double lx_eff = cos_distance ? l_x * std::cos(alpha) : l_x;
  const double num = sp.iota * lx_eff + sp.iota * l_q * v +
                     l_q * sp.beta * sa - sq(sp.iota) * l_v -
                     sp.iota * sp.chi * l_e * v - sp.omega * l_e * v -
                     sp.chi * sp.beta * l_e * sa;
  const double den = sp.chi * v - 2.0 * e * sp.chi * v;
  return num / den;
}

/// Left-hand side of the generalized Legendre-Clebsch condition.
inline double glc_value(const ScaledParams& sp, double v, double e, double l_e,
                        double l_q, double eta) {
  return 2.0 * sq(sp.iota) * (sp.chi * l_e - l_q) + sp.iota * sp.omega * l_e +
         2.0 * sq(sp.chi) * sq(v) * eta +
         sp.chi * eta * (sp.iota - 2.0 * sp.iota * e);
}

/// Hamiltonian of the rescaled problem (eta term included).
inline double hamiltonian_value(const ScaledParams& sp, const State& s,
                                double f, double n_scaled, double alpha,
                                double l_x, double l_v, double l_e, double l_q,
                                double eta, bool cos_distance = false) {
  const double sa = std::sin(alpha);
  const double xdot = cos_distance ? s.v * std::cos(alpha) : s.v;
  return l_x * xdot + l_v * (sp.iota * (f - s.v) - sp.beta * sa) +
         l_e * (sp.kappa - sp.chi * f * s.v + sp.phi * n_scaled -
                sp.omega * s.q) +
         l_q * f * s.v + eta * s.e * (1.0 - s.e);
}

// ---------------------------------------------------------------------------
// arc classification

/**
 * Threshold classification per node (control tests take precedence over
 * energy tests), then runs shorter than min_arc_nodes are merged into their
 * longer neighbor until every arc is long enough.
 */
inline std::vector<ArcSegment> classify_arcs(const Trajectory& traj,
                                             const VerifyOptions& opt = {}) {
  if (traj.flavor != Flavor::Nondimensional)
    throw DomainError("classify_arcs: expects a nondimensional trajectory");
  const int n = int(traj.size());
  if (n < 2) throw DomainError("classify_arcs: trajectory too short");

  auto kind_of = [&](int k) {
    const double f = traj.controls[k], e = traj.states[k].e;
    if (f > 1.0 - opt.tol_f) return ArcKind::MaxForce;
    if (f < opt.tol_f) return ArcKind::ZeroForce;
    if (e > 1.0 - opt.tol_e) return ArcKind::BoundaryUpper;
    if (e < opt.tol_e) return ArcKind::BoundaryLower;
    return ArcKind::Interior;
  };

  std::vector<ArcSegment> arcs;
  for (int k = 0; k < n; ++k) {
    const ArcKind kind = kind_of(k);
    if (!arcs.empty() && arcs.back().kind == kind)
      arcs.back().last_node = k;
    else
      arcs.push_back({k, k, 0, 0, kind, 0, 0});
  }

  // merge short runs into the longer adjacent arc (ties: the earlier one)
  while (arcs.size() > 1) {
    int shortest = -1;
    for (int i = 0; i < int(arcs.size()); ++i)
      if (arcs[i].nodes() < opt.min_arc_nodes &&
          (shortest < 0 || arcs[i].nodes() < arcs[shortest].nodes()))
        shortest = i;
    if (shortest < 0) break;
    const int i = shortest;
    int into;
    if (i == 0) into = 1;
    else if (i + 1 == int(arcs.size())) into = i - 1;
    else into = arcs[i - 1].nodes() >= arcs[i + 1].nodes() ? i - 1 : i + 1;
    ArcSegment& a = arcs[std::min(i, into)];
    const ArcSegment& b = arcs[std::max(i, into)];
    a.kind = (into < i ? arcs[into].kind : arcs[into].kind);
    a.last_node = b.last_node;
    arcs.erase(arcs.begin() + std::max(i, into));
    // adjacent arcs of equal kind may now be mergeable
    for (int j = 0; j + 1 < int(arcs.size());) {
      if (arcs[j].kind == arcs[j + 1].kind) {
        arcs[j].last_node = arcs[j + 1].last_node;
        arcs.erase(arcs.begin() + j + 1);
      } else {
        ++j;
      }
    }
  }
  for (auto& a : arcs) {
    a.t_a = traj.times[a.first_node];
    a.t_b = traj.times[a.last_node];
  }
  return arcs;
}

namespace pmpdetail {

struct Interpolant {
  const Trajectory* traj = nullptr;
  std::vector<double> alpha;  // per node

  // linear interpolation in t over the trajectory grid
  template <class Get>
  double at(double t, Get&& get) const {
    const auto& ts = traj->times;
    if (t <= ts.front()) return get(0);
    if (t >= ts.back()) return get(int(ts.size()) - 1);
    const auto it = std::upper_bound(ts.begin(), ts.end(), t);
    const int j = int(it - ts.begin());
    const double w = (t - ts[j - 1]) / (ts[j] - ts[j - 1]);
    return (1 - w) * get(j - 1) + w * get(j);
  }
  double v(double t) const { return at(t, [&](int k) { return traj->states[k].v; }); }
  double e(double t) const { return at(t, [&](int k) { return traj->states[k].e; }); }
  double q(double t) const { return at(t, [&](int k) { return traj->states[k].q; }); }
  double f(double t) const { return at(t, [&](int k) { return traj->controls[k]; }); }
  double n(double t) const {
    if (traj->n_rates.empty()) return 0.0;
    return at(t, [&](int k) { return traj->n_rates[k]; });
  }
  double a(double t) const { return at(t, [&](int k) { return alpha[k]; }); }
};

struct AdjointState {
  double lx = 1, lv = 0, le = 0, lq = 0;
};

/// A segment-boundary crossing of the trajectory. The piecewise-constant
/// slope makes d(alpha)/dx a weighted Dirac comb, so the distance adjoint
/// jumps by beta * lv * cos(a) * (delta alpha) / xdot at each crossing.
struct SlopeCrossing {
  double t = 0;
  double delta_alpha = 0;  // alpha(right segment) - alpha(left segment)
  double alpha_mid = 0;
  double xdot = 0;         // v cos(a) or v at the crossing
};

/// One backward RK4 sweep. EtaRule(t, lambda) returns the multiplier to use
/// in the lE equation at that instant (0 off boundary arcs).
///
/// terminal_le is the energy adjoint just before the horizon end: when the
/// lower energy bound is active at t = 1 the adjoint jumps there by the
/// contact multiplier, so lE(1-) = nu >= 0 while lE(1) = 0.
/// terminal_lx scales the distance adjoint (1 for the standard problem).
/// SingularRule(t) tells the sweep whether t lies on a singular arc, where
/// the switching identity psi = 0 holds; the fast velocity adjoint is
/// re-projected onto it after each slope-crossing jump so interpolation
/// error in the jump terms cannot accumulate across rolling terrain.
template <class EtaRule, class SlopeDeriv, class SingularRule>
Costates sweep(const Trajectory& traj, const Interpolant& ip,
               const ScaledParams& sp, bool cos_distance, EtaRule&& eta_rule,
               SlopeDeriv&& dalpha_dx, SingularRule&& singular_at,
               double terminal_le = 0.0, double terminal_lx = 1.0,
               const std::vector<SlopeCrossing>* crossings = nullptr,
               const std::vector<std::pair<double, double>>* le_atoms =
                   nullptr) {
  const int n = int(traj.size());
  Costates out;
  out.lambda_x.assign(n, 0);
  out.lambda_v.assign(n, 0);
  out.lambda_e.assign(n, 0);
  out.lambda_q.assign(n, 0);

  auto rhs = [&](double t, const AdjointState& l) {
    const double f = ip.f(t), al = ip.a(t);
    const double cosd = cos_distance ? std::cos(al) : 1.0;
    AdjointState d;
    d.lx = sp.beta * l.lv * std::cos(al) * dalpha_dx(t);
    d.lv = sp.iota * l.lv + sp.chi * l.le * f - l.lq * f - l.lx * cosd;
    d.le = eta_rule(t, l) * (2.0 * ip.e(t) - 1.0);
    d.lq = sp.omega * l.le;
    return d;
  };

  // the stored last node carries the transversality values; the contact
  // jump (if any) is applied inside the final interval, which is where the
  // unresolved terminal boundary arc lives
  AdjointState l;
  l.lx = terminal_lx;
  l.le = terminal_le;
  out.lambda_x[n - 1] = terminal_lx;
  int next_cross = crossings ? int(crossings->size()) - 1 : -1;
  int next_atom = le_atoms ? int(le_atoms->size()) - 1 : -1;
  for (int k = n - 2; k >= 0; --k) {
    const double t1 = traj.times[k + 1], t0 = traj.times[k];
    // distance-adjoint jumps at the slope discontinuities inside (t0, t1]
    while (next_cross >= 0 && (*crossings)[next_cross].t > t0 &&
           (*crossings)[next_cross].t <= t1 + 1e-15) {
      const SlopeCrossing& c = (*crossings)[next_cross--];
      if (c.xdot > 1e-9)
        l.lx -= sp.beta * l.lv * std::cos(c.alpha_mid) * c.delta_alpha / c.xdot;
      if (singular_at(c.t)) {
        const double v = ip.v(c.t);
        l.lv = (sp.chi * l.le - l.lq) * v / sp.iota;  // psi = 0 identity
      }
    }
    // energy-adjoint atoms at interior contacts of the capacity bounds
    while (next_atom >= 0 && (*le_atoms)[next_atom].first > t0 &&
           (*le_atoms)[next_atom].first <= t1 + 1e-15) {
      l.le += (*le_atoms)[next_atom--].second;
    }
    const double span = t1 - t0;
    // the boundary-arc elimination doubles the stiff rate to ~2*iota;
    // keep RK4 comfortably inside its stability interval
    const int nsub = std::max(1, int(std::ceil(sp.iota * span / 0.8)));
    const double hs = span / nsub;
    for (int s = 0; s < nsub; ++s) {
      const double t = t1 - s * hs;  // integrating backward: step -hs
      auto step = [&](const AdjointState& y, const AdjointState& d, double c) {
        return AdjointState{y.lx - c * d.lx, y.lv - c * d.lv, y.le - c * d.le,
                            y.lq - c * d.lq};
      };
      const AdjointState k1 = rhs(t, l);
      const AdjointState k2 = rhs(t - hs / 2, step(l, k1, hs / 2));
      const AdjointState k3 = rhs(t - hs / 2, step(l, k2, hs / 2));
      const AdjointState k4 = rhs(t - hs, step(l, k3, hs));
      l.lx -= hs / 6 * (k1.lx + 2 * k2.lx + 2 * k3.lx + k4.lx);
      l.lv -= hs / 6 * (k1.lv + 2 * k2.lv + 2 * k3.lv + k4.lv);
      l.le -= hs / 6 * (k1.le + 2 * k2.le + 2 * k3.le + k4.le);
      l.lq -= hs / 6 * (k1.lq + 2 * k2.lq + 2 * k3.lq + k4.lq);
      if (!is_finite(l.lv) || !is_finite(l.le))
        throw NumericError("adjoint sweep diverged near t = " +
                           std::to_string(t));
    }
    out.lambda_x[k] = l.lx;
    out.lambda_v[k] = l.lv;
    out.lambda_e[k] = l.le;
    out.lambda_q[k] = l.lq;
  }
  return out;
}

}  // namespace pmpdetail

/**
 * Adjoint integration with a supplied multiplier series (zero off boundary
 * arcs), backward from the endpoint conditions with the same fixed-step
 * 4th-order scheme used for the states (substepped for the stiff velocity
 * adjoint). Grids of traj and eta must match.
 */
inline Costates integrate_adjoints(const Trajectory& traj,
                                   const CourseProfile& course,
                                   const ScaledParams& sp,
                                   const std::function<double(double)>& dalpha_dx,
                                   const std::vector<double>& eta,
                                   bool cos_distance = false) {
  if (traj.flavor != Flavor::Nondimensional)
    throw DomainError("integrate_adjoints: expects a nondimensional trajectory");
  if (eta.size() != traj.size())
    throw DomainError("integrate_adjoints: eta grid does not match trajectory");
  pmpdetail::Interpolant ip;
  ip.traj = &traj;
  ip.alpha.resize(traj.size());
  for (std::size_t k = 0; k < traj.size(); ++k) {
    const double x_m =
        std::clamp(traj.states[k].x * sp.d_scale, 0.0, course.total_distance_m);
    ip.alpha[k] = slope_at(course, x_m);
  }
  auto eta_at = [&](double t, const pmpdetail::AdjointState&) {
    return ip.at(t, [&](int k) { return eta[k]; });
  };
  auto dadx = [&](double t) { return dalpha_dx(ip.at(t, [&](int k) {
                return traj.states[k].x * sp.d_scale;
              })); };
  auto never = [](double) { return false; };
  return pmpdetail::sweep(traj, ip, sp, cos_distance, eta_at, dadx, never);
}

/**
 * Full certification: classify, bootstrap the adjoints with the multiplier
 * eliminated on boundary arcs, re-integrate against the recovered eta series
 * (the two-pass fixed point), then run every sign and identity check.
 * Violations are data, not errors.
 */
inline PmpReport verify(const Trajectory& traj, const CourseProfile& course,
                        const ScaledParams& sp, const VerifyOptions& opt = {}) {
  if (traj.flavor != Flavor::Nondimensional)
    throw DomainError("verify: expects a nondimensional trajectory");
  traj.validate(1.0);
  const int n = int(traj.size());

  PmpReport rep;
  rep.arcs = classify_arcs(traj, opt);

  // per-node arc lookup and junction trimming
  std::vector<const ArcSegment*> arc_of(n, nullptr);
  std::vector<char> trimmed(n, 0);
  std::vector<char> near_junction(n, 0);  // wider margin: slackness checks
  for (const auto& a : rep.arcs) {
    for (int k = a.first_node; k <= a.last_node; ++k) arc_of[k] = &a;
    for (int j = 0; j < opt.junction_trim; ++j) {
      if (a.first_node + j < n) trimmed[a.first_node + j] = 1;
      if (a.last_node - j >= 0) trimmed[a.last_node - j] = 1;
    }
    for (int j = 0; j < opt.junction_trim + 2; ++j) {
      if (a.first_node + j < n) near_junction[a.first_node + j] = 1;
      if (a.last_node - j >= 0) near_junction[a.last_node - j] = 1;
    }
  }
  // the horizon ends are junctions too, and the start additionally hides
  // the velocity boundary layer (width ~1/iota) below grid resolution
  const double h_mean = (traj.times.back() - traj.times.front()) / (n - 1);
  const int startup_trim =
      std::max({opt.junction_trim,
                int(std::ceil(50.0 / (sp.iota * h_mean))) + 1, 5});
  for (int j = 0; j <= startup_trim && j < n; ++j) trimmed[j] = 1;
  for (int j = 0; j <= opt.junction_trim && j < n; ++j) trimmed[n - 1 - j] = 1;

  pmpdetail::Interpolant ip;
  ip.traj = &traj;
  ip.alpha.resize(n);
  for (int k = 0; k < n; ++k) {
    const double x_m =
        std::clamp(traj.states[k].x * sp.d_scale, 0.0, course.total_distance_m);
    ip.alpha[k] = slope_at(course, x_m);
  }
  rep.alpha = ip.alpha;

  // segment-boundary crossings (the Dirac-comb part of d(alpha)/dx)
  std::vector<pmpdetail::SlopeCrossing> crossings;
  for (std::size_t b = 1; b + 1 < course.boundaries_m.size(); ++b) {
    const double da = course.slopes_rad[b] - course.slopes_rad[b - 1];
    if (da == 0.0) continue;
    const double x_scaled = course.boundaries_m[b] / sp.d_scale;
    // locate the crossing on the monotone x series
    for (int k = 0; k + 1 < n; ++k) {
      const double x0 = traj.states[k].x, x1 = traj.states[k + 1].x;
      if (x0 <= x_scaled && x_scaled < x1) {
        const double w = (x_scaled - x0) / std::max(x1 - x0, 1e-300);
        pmpdetail::SlopeCrossing c;
        c.t = traj.times[k] + w * (traj.times[k + 1] - traj.times[k]);
        c.delta_alpha = da;
        c.alpha_mid = 0.5 * (course.slopes_rad[b] + course.slopes_rad[b - 1]);
        const double v = ip.v(c.t);
        c.xdot = opt.cos_distance ? v * std::cos(c.alpha_mid) : v;
        crossings.push_back(c);
        break;
      }
    }
  }
  const auto* crossings_ptr = crossings.empty() ? nullptr : &crossings;

  // pass A: eliminate eta on boundary arcs (lE' = -Nr / (chi v)). The
  // startup velocity layer sits below grid resolution, so the elimination
  // only runs between nodes that are cleanly on a boundary arc.
  std::vector<char> elim_ok(n, 0);
  for (int k = 0; k < n; ++k)
    elim_ok[k] = arc_of[k] && arc_of[k]->boundary() && k > startup_trim &&
                 traj.states[k].v > 0.25;
  auto left_node = [&](double t) {
    const auto it =
        std::upper_bound(traj.times.begin(), traj.times.end(), t);
    const int k = int(it - traj.times.begin()) - 1;
    return std::clamp(k, 0, n - 2);
  };
  std::vector<char> singular_ok(n, 0);
  for (int k = 0; k < n; ++k)
    singular_ok[k] = arc_of[k] && arc_of[k]->singular();
  auto singular_at = [&](double t) {
    const int k = left_node(t);
    return bool(singular_ok[k] && singular_ok[std::min(k + 1, n - 1)]);
  };
  auto eta_eliminated = [&](double t, const pmpdetail::AdjointState& l) {
    const int k = left_node(t);
    if (!elim_ok[k] || !elim_ok[std::min(k + 1, n - 1)]) return 0.0;
    const double v = std::max(ip.v(t), opt.v_min);
    const double e = ip.e(t);
    const double al = ip.a(t);
    const double sa = std::sin(al);
    const double lx_eff = opt.cos_distance ? l.lx * std::cos(al) : l.lx;
    const double num = sp.iota * lx_eff + sp.iota * l.lq * v +
                       l.lq * sp.beta * sa - sq(sp.iota) * l.lv -
                       sp.iota * sp.chi * l.le * v - sp.omega * l.le * v -
                       sp.chi * sp.beta * l.le * sa;
    const double den = sp.chi * v - 2.0 * e * sp.chi * v;
    return std::abs(den) > 1e-300 ? num / den : 0.0;
  };
  auto zero_dadx = [](double) { return 0.0; };

  // Terminal-contact multiplier: when the energy floor is active at the
  // horizon end, the energy adjoint carries a contact jump nu >= 0 there
  // (the terminal boundary arc is far below grid resolution, so it appears
  // as a touch point). The adjoint system is linear in lambda, so two
  // sweeps pin nu from the switching condition psi = 0 at the anchor node
  // of the last singular arc.
  const bool terminal_contact = traj.states[n - 1].e < opt.tol_e;
  int anchor = -1;
  for (const auto& a : rep.arcs)
    if (a.singular() && a.nodes() > 2 * opt.junction_trim + 1)
      anchor = std::min(a.last_node - opt.junction_trim,
                        (a.first_node + a.last_node) / 2 + a.nodes() / 4);
  double nu = 0.0;
  const Costates base =
      pmpdetail::sweep(traj, ip, sp, opt.cos_distance, eta_eliminated,
                       zero_dadx, singular_at, 0.0, 1.0, crossings_ptr);
  if (terminal_contact && anchor >= 0) {
    const Costates lifted =
        pmpdetail::sweep(traj, ip, sp, opt.cos_distance, eta_eliminated,
                         zero_dadx, singular_at, 1.0, 1.0, crossings_ptr);
    auto psi_at = [&](const Costates& cs, int k) {
      return switching_value(sp, traj.states[k].v, cs.lambda_v[k],
                             cs.lambda_e[k], cs.lambda_q[k]);
    };
    const double psi0 = psi_at(base, anchor);
    const double psi1 = psi_at(lifted, anchor);
    if (std::abs(psi1 - psi0) > 1e-300)
      nu = std::max(0.0, -psi0 / (psi1 - psi0));
  }
  rep.terminal_energy_multiplier = nu;

  // Interior contacts: where a capacity-boundary arc begins mid-race the
  // multiplier measure may carry an atom, so the energy adjoint jumps there.
  // Each atom is pinned by the switching condition on the nearest singular
  // arc to its left; the adjoint system is linear, so one unit-response
  // sweep per atom resolves them right to left (later atoms do not act on
  // earlier anchors).
  std::vector<std::pair<double, double>> atoms;  // (time, backward jump)
  {
    struct Pending {
      double t;
      int anchor;
      double backward_sign;  // admissible jump direction when integrating back
    };
    std::vector<Pending> pending;
    for (std::size_t ai = 0; ai < rep.arcs.size(); ++ai) {
      const auto& a = rep.arcs[ai];
      if (!a.boundary() || a.first_node <= startup_trim + 1) continue;
      int anchor = -1;
      for (int bi = int(ai) - 1; bi >= 0; --bi) {
        const auto& b = rep.arcs[bi];
        if (b.singular() && b.nodes() > 2 * opt.junction_trim + 2) {
          anchor = std::max(b.first_node + opt.junction_trim,
                            (b.first_node + b.last_node) / 2);
          break;
        }
        if (b.boundary()) break;  // the nearer boundary arc owns that anchor
      }
      if (anchor < 0) continue;
      pending.push_back({traj.times[a.first_node], anchor,
                         a.kind == ArcKind::BoundaryUpper ? -1.0 : 1.0});
    }
    auto psi_of = [&](const Costates& cs, int k) {
      return switching_value(sp, traj.states[k].v, cs.lambda_v[k],
                             cs.lambda_e[k], cs.lambda_q[k]);
    };
    for (int j = int(pending.size()) - 1; j >= 0; --j) {
      const Costates base =
          pmpdetail::sweep(traj, ip, sp, opt.cos_distance, eta_eliminated,
                           zero_dadx, singular_at, nu, 1.0, crossings_ptr,
                           &atoms);
      const std::vector<std::pair<double, double>> unit = {{pending[j].t, 1.0}};
      const Costates resp =
          pmpdetail::sweep(traj, ip, sp, opt.cos_distance, eta_eliminated,
                           zero_dadx, singular_at, 0.0, 0.0, crossings_ptr,
                           &unit);
      const double psi_base = psi_of(base, pending[j].anchor);
      const double psi_unit = psi_of(resp, pending[j].anchor);
      if (std::abs(psi_unit) < 1e-300) continue;
      const double s = -psi_base / psi_unit;
      if (s * pending[j].backward_sign < 0) continue;  // wrong-signed measure
      atoms.push_back({pending[j].t, s});
      std::sort(atoms.begin(), atoms.end());
    }
  }
  rep.contact_atoms = atoms;
  const auto* atoms_ptr = atoms.empty() ? nullptr : &atoms;

  Costates pass_a =
      pmpdetail::sweep(traj, ip, sp, opt.cos_distance, eta_eliminated,
                       zero_dadx, singular_at, nu, 1.0, crossings_ptr,
                       atoms_ptr);

  // recover the eta series from pass-A costates
  auto eta_series_from = [&](const Costates& cs) {
    std::vector<double> eta(n, 0.0);
    for (int k = 0; k < n; ++k) {
      const ArcSegment* a = arc_of[k];
      if (!a || !a->boundary()) continue;
      const double v = traj.states[k].v;
      if (v <= opt.v_min) continue;
      eta[k] = recover_eta(sp, v, traj.states[k].e, cs.lambda_x[k],
                           cs.lambda_v[k], cs.lambda_e[k], cs.lambda_q[k],
                           ip.alpha[k], opt.v_min, opt.cos_distance);
    }
    return eta;
  };
  std::vector<double> eta_a = eta_series_from(pass_a);
  for (int k = 0; k <= startup_trim && k < n; ++k) eta_a[k] = 0.0;

  // second pass: re-integrate against the recovered series and record how
  // far the open-loop replay drifts from the self-consistent sweep; the
  // checks below use the self-consistent costates
  auto eta_tabulated = [&](double t, const pmpdetail::AdjointState&) {
    return ip.at(t, [&](int k) { return eta_a[k]; });
  };
  const Costates pass_b =
      pmpdetail::sweep(traj, ip, sp, opt.cos_distance, eta_tabulated,
                       zero_dadx, singular_at, nu, 1.0, crossings_ptr,
                       atoms_ptr);
  for (int k = 0; k < n; ++k)
    if (!trimmed[k])
      rep.inter_pass_delta =
          std::max(rep.inter_pass_delta,
                   std::abs(pass_b.lambda_e[k] - pass_a.lambda_e[k]));
  rep.costates = std::move(pass_a);
  rep.eta = std::move(eta_a);

  // switching function and extremes
  rep.psi.resize(n);
  for (int k = 0; k < n; ++k) {
    rep.psi[k] = switching_value(sp, traj.states[k].v, rep.costates.lambda_v[k],
                                 rep.costates.lambda_e[k],
                                 rep.costates.lambda_q[k]);
    rep.psi_max_abs = std::max(rep.psi_max_abs, std::abs(rep.psi[k]));
  }
  rep.psi_end = rep.psi[n - 1];

  rep.lambda_e_min = kInf;
  rep.lambda_q_max = -kInf;
  for (int k = 0; k + 1 < n; ++k) {  // t in [0, 1)
    rep.lambda_e_min = std::min(rep.lambda_e_min, rep.costates.lambda_e[k]);
    rep.lambda_q_max = std::max(rep.lambda_q_max, rep.costates.lambda_q[k]);
  }

  auto violate = [&](const char* check, double t, double magnitude) {
    rep.violations.push_back({check, t, magnitude});
  };

  if (rep.lambda_e_min < -opt.sign_tol)
    violate("lambda_e >= 0", 0, rep.lambda_e_min);
  if (rep.lambda_q_max > opt.sign_tol)
    violate("lambda_q <= 0", 0, rep.lambda_q_max);

  const double tol_psi = opt.tol_psi_rel * std::max(rep.psi_max_abs, 1e-12);
  rep.eta_min = kInf;
  rep.glc_min = kInf;
  rep.glc.assign(n, 0.0);

  for (int k = 0; k < n; ++k) {
    const ArcSegment* a = arc_of[k];
    if (!a) continue;
    const double t = traj.times[k];
    const double v = traj.states[k].v, e = traj.states[k].e;
    const double psi = rep.psi[k];

    // complementary slackness holds everywhere (eta is zero off boundaries);
    // the departure from a boundary smears over a node or two, hence the
    // wider junction margin here
    const double slack = rep.eta[k] * e * (1.0 - e);
    if (std::abs(slack) > opt.comp_slack_tol && !near_junction[k])
      violate("eta E (1-E) = 0", t, slack);

    if (trimmed[k]) continue;
    switch (a->kind) {
      case ArcKind::MaxForce:
        if (psi < -tol_psi) violate("psi >= 0 on max-force", t, psi);
        break;
      case ArcKind::ZeroForce:
        if (psi > tol_psi) violate("psi <= 0 on zero-force", t, psi);
        break;
      case ArcKind::Interior: {
        if (std::abs(psi) > tol_psi) violate("psi = 0 on interior", t, psi);
        double fi = 0;
        bool have = true;
        try {
          fi = interior_control(sp, v, rep.costates.lambda_x[k],
                                rep.costates.lambda_e[k],
                                rep.costates.lambda_q[k], ip.alpha[k],
                                opt.cos_distance);
        } catch (const NumericError&) {
          have = false;  // vanishing denominator next to the horizon end
        }
        if (have) {
          const double dev = std::abs(traj.controls[k] - fi);
          rep.f_int_dev_max = std::max(rep.f_int_dev_max, dev);
          if (dev > opt.xval_tol) violate("f = f_int on interior", t, dev);
          if (fi < -opt.xval_tol || fi > 1 + opt.xval_tol)
            violate("f_int within [0,1]", t, fi);
        }
        break;
      }
      case ArcKind::BoundaryLower:
      case ArcKind::BoundaryUpper: {
        // boundary-arc optimality is certified through eta >= 0, the
        // dE/dt = 0 control identity, complementary slackness and GLC;
        // psi enters only through the eta recovery itself
        rep.eta_min = std::min(rep.eta_min, rep.eta[k]);
        if (rep.eta[k] < -opt.sign_tol) violate("eta >= 0", t, rep.eta[k]);
        if (v > opt.v_min) {
          const double fb = boundary_control(sp, v, ip.n(t), traj.states[k].q,
                                             opt.v_min);
          // where the balance exceeds the admissible range the arc rides the
          // control bound instead (saturated supply)
          const double dev =
              std::abs(traj.controls[k] - std::clamp(fb, 0.0, 1.0));
          rep.f_b_dev_max = std::max(rep.f_b_dev_max, dev);
          if (dev > opt.xval_tol) violate("f = f_b on boundary", t, dev);
        }
        break;
      }
    }
    if (a->singular()) {
      rep.glc[k] = glc_value(sp, v, e, rep.costates.lambda_e[k],
                             rep.costates.lambda_q[k], rep.eta[k]);
      rep.glc_min = std::min(rep.glc_min, rep.glc[k]);
      if (rep.glc[k] < -opt.sign_tol)
        violate("generalized Legendre-Clebsch", t, rep.glc[k]);
    }
  }
  if (rep.eta_min == kInf) rep.eta_min = 0;
  if (rep.glc_min == kInf) rep.glc_min = 0;

  // empirical uphill threshold for full-force engagement
  for (const auto& a : rep.arcs) {
    if (a.kind != ArcKind::MaxForce) continue;
    for (int k = a.first_node; k <= a.last_node; ++k) {
      if (trimmed[k] || ip.alpha[k] <= 0) continue;
      if (!rep.maxforce_uphill_threshold_rad ||
          ip.alpha[k] < *rep.maxforce_uphill_threshold_rad)
        rep.maxforce_uphill_threshold_rad = ip.alpha[k];
    }
  }

  // arc means
  for (auto& a : rep.arcs) {
    double sp_sum = 0, eta_sum = 0;
    for (int k = a.first_node; k <= a.last_node; ++k) {
      sp_sum += rep.psi[k];
      eta_sum += rep.eta[k];
    }
    a.mean_psi = sp_sum / a.nodes();
    a.mean_eta = eta_sum / a.nodes();
  }

  // Hamiltonian spread (informational; meaningful for the autonomous case)
  {
    double h_min = kInf, h_max = -kInf, h_absmax = 0;
    for (int k = 0; k < n; ++k) {
      if (trimmed[k]) continue;
      const double h = hamiltonian_value(
          sp, traj.states[k], traj.controls[k],
          traj.n_rates.empty() ? 0.0 : traj.n_rates[k], ip.alpha[k],
          rep.costates.lambda_x[k], rep.costates.lambda_v[k],
          rep.costates.lambda_e[k], rep.costates.lambda_q[k], rep.eta[k],
          opt.cos_distance);
      h_min = std::min(h_min, h);
      h_max = std::max(h_max, h);
      h_absmax = std::max(h_absmax, std::abs(h));
    }
    rep.hamiltonian_rel_spread =
        h_absmax > 0 ? (h_max - h_min) / h_absmax : 0.0;
  }

  rep.certified = rep.violations.empty();
  return rep;
}

/**
 * Certifies a solve() result. Minimum-time solutions are first rebased onto
 * their realized horizon — by the distance/time duality the same trajectory
 * maximizes distance over that horizon — and checked with the
 * horizontal-distance adjoints.
 */
inline PmpReport certify_solution(const OcpSolution& sol,
                                  const CourseProfile& course,
                                  const RunnerProfile& runner, double sigma,
                                  double m_oxid_max, VerifyOptions opt = {}) {
  if (sol.theta != 1.0) {
    const OcpSolution rebased =
        rebase_to_horizon(sol, runner, sigma, m_oxid_max);
    return verify(rebased.trajectory, course, rebased.sp, opt);
  }
  return verify(sol.trajectory, course, sol.sp, opt);
}

}  // namespace trailrun
