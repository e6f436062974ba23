#pragma once

/**
 * @file ocp.hpp
 * @brief Direct transcription of the two race problems — maximum distance in
 *        a fixed horizon and minimum time over a fixed course — to a banded
 *        NLP, plus the race-prediction pipeline.
 *
 * Transcription notes.
 *  - Time is normalized to s in [0,1]; a dilation factor theta = T/T_ref
 *    multiplies the right-hand side. MaxDistance pins theta = 1; MinTime
 *    makes it a bounded decision variable (one dense KKT border column).
 *  - Defects are backward-differentiation (first interval backward Euler,
 *    then two-step BDF). The velocity equation relaxes on the 1/iota time
 *    scale, far below any practical grid, and the undamped parasitic mode of
 *    trapezoidal-family rules lets an optimizer pump a spurious velocity
 *    oscillation that inflates the objective; the BDF pair is L-stable, so
 *    the discrete velocity stays slaved to the control.
 *  - The energy capacity bound starts active and with v(0) = 0 the balance
 *    is positive regardless of f, so the continuous problem briefly forces
 *    E above E0 (by <= 0.6% of E0 for the reference constants). Nodes inside
 *    that startup layer get their upper bound relaxed to exactly the energy
 *    excursion of the discrete full-force trajectory plus 1e-9 — nothing
 *    looser. On moderate grids the relaxation is identically zero.
 *  - Slopes are frozen per interval at the previous pass's node positions
 *    (their derivative w.r.t. x vanishes a.e. anyway); the oxidation-rate
 *    table is frozen at the previous pass's horizon. An outer loop refreshes
 *    both until stable.
 */

#include <algorithm>
#include <cmath>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "trailrun/common.hpp"
#include "trailrun/model.hpp"
#include "trailrun/nlp.hpp"
#include "trailrun/nutrition.hpp"
#include "trailrun/physiology.hpp"
#include "trailrun/terrain.hpp"

namespace trailrun {

enum class OcpMode { MaxDistance, MinTime };

struct OcpTolerances {
  double dynamics = 1e-6;      // raw defect infinity norm
  double constraint = 1e-6;    // bound / endpoint violation
  double stationarity = 1e-6;  // scaled KKT error

  void validate() const {
    if (!(dynamics > 0 && constraint > 0 && stationarity > 0))
      throw DomainError("OcpTolerances: tolerances must be positive");
  }
};

struct OcpProblem {
  OcpMode mode = OcpMode::MaxDistance;
  ScaledParams sp;                        // model handle (scaled constants)
  NutritionParams nutrition = canonical_params();
  CourseProfile course;                   // slope profile over meters
  bool horizontal_distance = false;       // dx/dt = v cos(alpha)
  bool drag_on = false;
  int grid_size = 400;                    // collocation intervals
  OcpTolerances tol;
  double distance_target_m = 0;           // MinTime endpoint
  double theta_lo = 0.25, theta_hi = 4.0; // MinTime horizon bounds, T/T_ref
  int control_pieces = 0;                 // >0: piecewise-constant control
  double eps_reg = 1e-6;                  // initial control regularization
  double eps_reg_final = 1e-10;           // continuation target
  int max_iterations = 600;
  bool e_startup_relief = true;
  bool verbose = false;

  void validate() const {
    if (grid_size < 50) throw DomainError("OcpProblem: grid_size must be >= 50");
    tol.validate();
    if (!sp.all_positive()) throw DomainError("OcpProblem: bad scaled params");
    course.validate();
    if (mode == OcpMode::MinTime && !(distance_target_m > 0))
      throw DomainError("OcpProblem: MinTime needs a positive distance target");
  }
};

struct KktReport {
  double stationarity = kInf;
  double feasibility = kInf;       // constraint violation seen by the NLP
  double complementarity = kInf;
  double defect_inf = kInf;        // raw (unscaled) dynamics residual
  double bound_violation = 0;      // E / f outside their boxes
  double endpoint_gap = 0;         // |x(T) - D| / D for MinTime
  int iterations = 0;
  double mu_final = 0;
  std::string message;
};

struct OcpSolution {
  Trajectory trajectory;       // scaled flavor, times on [0,1]
  double objective = 0;        // covered distance [m] or finish time [s]
  double horizon_s = 0;        // T (= theta * T_ref)
  double theta = 1.0;
  KktReport kkt_report;
  bool converged = false;
  ScaledParams sp;             // constants of the frame the trajectory is in
};

namespace ocpdetail {

struct Tables {
  std::vector<double> sin_a, cos_a;  // per interval k=1..N
  std::vector<double> n_scaled;      // per node 0..N
  std::vector<double> e_upper;       // per node 1..N
};

/// Implicit one-node advance of the discrete scheme (BE / BDF2 step).
/// P is the history combination, w the effective weight (h or 2h/3) times
/// theta. Returns the new state given the control.
inline State advance(const State& prev_combo, double w, double f, double sin_a,
                     double cos_a, double n_sc, const ScaledParams& sp,
                     bool drag, bool clamp_v) {
  State y;
  const double rhs_v = prev_combo.v + w * (sp.iota * f - sp.beta * sin_a);
  if (!drag) {
    y.v = rhs_v / (1.0 + w * sp.iota);
  } else {
    double v = std::max(0.0, rhs_v / (1.0 + w * sp.iota));
    for (int it = 0; it < 8; ++it) {
      const double r = v + w * (sp.iota * v + sp.gamma * v * v) - rhs_v;
      const double dr = 1.0 + w * (sp.iota + 2.0 * sp.gamma * v);
      v -= r / dr;
    }
    y.v = v;
  }
  if (clamp_v) y.v = std::max(y.v, 1e-6);
  y.q = prev_combo.q + w * f * y.v;
  y.e = prev_combo.e +
        w * (sp.kappa - sp.chi * f * y.v + sp.phi * n_sc - sp.omega * y.q);
  y.x = prev_combo.x + w * y.v * cos_a;
  return y;
}

/// Forward simulation of the discrete scheme over the whole grid.
inline std::vector<State> simulate(const std::vector<double>& f,
                                   const Tables& tab, double h, double theta,
                                   const ScaledParams& sp, bool drag,
                                   bool clamp_v) {
  const int n = int(f.size());  // f[k-1] drives interval k
  std::vector<State> y(n + 1);
  y[0] = State{0, 0, 1, 0};
  for (int k = 1; k <= n; ++k) {
    State combo;
    double w;
    if (k == 1) {
      combo = y[0];
      w = h * theta;
    } else {
      combo = y[k - 1] * (4.0 / 3.0) + y[k - 2] * (-1.0 / 3.0);
      w = (2.0 * h / 3.0) * theta;
    }
    y[k] = advance(combo, w, f[k - 1], tab.sin_a[k - 1], tab.cos_a[k - 1],
                   tab.n_scaled[k], sp, drag, clamp_v);
  }
  return y;
}

/// The transcribed NLP. Variables per node k=1..N: (v,x,e,q,f); MinTime adds
/// theta as a border variable. Constraints: 4 defects per interval, optional
/// control-piece ties, optional endpoint row.
class TranscribedNlp : public NlpProblem {
 public:
  TranscribedNlp(const OcpProblem& p, const Tables& tab, double eps_reg,
                 double theta_bar)
      : p_(p), tab_(tab), n_(p.grid_size), h_(1.0 / p.grid_size),
        eps_(eps_reg), free_theta_(p.mode == OcpMode::MinTime) {
    vscale_ = 1.0 / (1.0 + (2.0 * h_ / 3.0) * theta_bar * p_.sp.iota);
    x_target_ = p_.distance_target_m / p_.sp.d_scale;
    if (p_.control_pieces > 0) {
      ties_.reserve(n_);
      for (int k = 2; k <= n_; ++k)
        if (piece(k) == piece(k - 1)) ties_.push_back(k);
    }
    m_ = 4 * n_ + int(ties_.size()) + (free_theta_ ? 1 : 0);
  }

  int piece(int k) const { return ((k - 1) * p_.control_pieces) / n_; }

  int num_vars() const override { return 5 * n_ + (free_theta_ ? 1 : 0); }
  int num_cons() const override { return m_; }

  int vi(int k, int c) const { return (k - 1) * 5 + c; }  // c: 0=v 1=x 2=e 3=q 4=f
  int theta_index() const { return 5 * n_; }
  int ci_defect(int k, int j) const { return (k - 1) * 4 + j; }
  int ci_tie(int t) const { return 4 * n_ + t; }
  int ci_endpoint() const { return 4 * n_ + int(ties_.size()); }

  void bounds(std::vector<double>& lb, std::vector<double>& ub) const override {
    lb.assign(num_vars(), -kInf);
    ub.assign(num_vars(), kInf);
    double min_sin = 0.0;
    for (double s : tab_.sin_a) min_sin = std::min(min_sin, s);
    const double v_ub =
        1.3 * (1.0 - (p_.sp.beta / p_.sp.iota) * min_sin) + 0.2;
    for (int k = 1; k <= n_; ++k) {
      lb[vi(k, 0)] = 0.0;           ub[vi(k, 0)] = v_ub;
      lb[vi(k, 2)] = 0.0;           ub[vi(k, 2)] = tab_.e_upper[k - 1];
      lb[vi(k, 3)] = 0.0;
      lb[vi(k, 4)] = 0.0;           ub[vi(k, 4)] = 1.0;
    }
    if (free_theta_) {
      lb[theta_index()] = p_.theta_lo;
      ub[theta_index()] = p_.theta_hi;
    }
  }

  double theta_of(std::span<const double> z) const {
    return free_theta_ ? z[theta_index()] : 1.0;
  }

  double eval_f(std::span<const double> z) const override {
    double reg = 0;
    for (int k = 1; k <= n_; ++k) reg += sq(z[vi(k, 4)]);
    reg *= eps_ * h_;
    if (free_theta_) return z[theta_index()] + reg;
    return -z[vi(n_, 1)] + reg;
  }

  void eval_grad(std::span<const double> z, std::span<double> g) const override {
    std::fill(g.begin(), g.end(), 0.0);
    for (int k = 1; k <= n_; ++k) g[vi(k, 4)] = 2.0 * eps_ * h_ * z[vi(k, 4)];
    if (free_theta_) g[theta_index()] = 1.0;
    else g[vi(n_, 1)] = -1.0;
  }

  // state of node k (k=0 is the fixed initial condition)
  State node(std::span<const double> z, int k) const {
    if (k == 0) return State{0, 0, 1, 0};
    return State{z[vi(k, 0)], z[vi(k, 1)], z[vi(k, 2)], z[vi(k, 3)]};
  }

  struct StepRef {
    double w = 0;           // quadrature weight (h or 2h/3), without theta
    State combo;            // history combination entering the defect
  };

  StepRef step_ref(std::span<const double> z, int k) const {
    StepRef s;
    if (k == 1) {
      s.w = h_;
      s.combo = node(z, 0);
    } else {
      s.w = 2.0 * h_ / 3.0;
      s.combo = node(z, k - 1) * (4.0 / 3.0) + node(z, k - 2) * (-1.0 / 3.0);
    }
    return s;
  }

  State rhs_at(std::span<const double> z, int k) const {
    const double v = z[vi(k, 0)], e_f = z[vi(k, 4)], q = z[vi(k, 3)];
    const double sin_a = tab_.sin_a[k - 1], cos_a = tab_.cos_a[k - 1];
    State g;
    g.v = p_.sp.iota * (e_f - v) - p_.sp.beta * sin_a -
          (p_.drag_on ? p_.sp.gamma * v * v : 0.0);
    g.x = p_.horizontal_distance ? v * cos_a : v;
    g.e = p_.sp.kappa - p_.sp.chi * e_f * v + p_.sp.phi * tab_.n_scaled[k] -
          p_.sp.omega * q;
    g.q = e_f * v;
    return g;
  }

  void eval_c(std::span<const double> z, std::span<double> c) const override {
    const double th = theta_of(z);
    for (int k = 1; k <= n_; ++k) {
      const StepRef s = step_ref(z, k);
      const State y = node(z, k);
      const State g = rhs_at(z, k);
      c[ci_defect(k, 0)] = (y.v - s.combo.v - s.w * th * g.v) * vscale_;
      c[ci_defect(k, 1)] = y.x - s.combo.x - s.w * th * g.x;
      c[ci_defect(k, 2)] = y.e - s.combo.e - s.w * th * g.e;
      c[ci_defect(k, 3)] = y.q - s.combo.q - s.w * th * g.q;
    }
    for (std::size_t t = 0; t < ties_.size(); ++t)
      c[ci_tie(int(t))] = z[vi(ties_[t], 4)] - z[vi(ties_[t] - 1, 4)];
    if (free_theta_) c[ci_endpoint()] = z[vi(n_, 1)] - x_target_;
  }

  void eval_jac(std::span<const double> z, std::vector<Triplet>& jac) const override {
    const double th = theta_of(z);
    for (int k = 1; k <= n_; ++k) {
      const double v = z[vi(k, 0)], f = z[vi(k, 4)];
      const double cos_a = tab_.cos_a[k - 1];
      const double w = (k == 1 ? h_ : 2.0 * h_ / 3.0);
      const double wt = w * th;
      const double a1 = (k == 1 ? -1.0 : -4.0 / 3.0);
      const double a2 = (k == 1 ? 0.0 : 1.0 / 3.0);
      const int rv = ci_defect(k, 0), rx = ci_defect(k, 1), re = ci_defect(k, 2),
                rq = ci_defect(k, 3);

      // v-defect (row-scaled)
      jac.push_back({rv, vi(k, 0),
                     (1.0 + wt * (p_.sp.iota +
                                  (p_.drag_on ? 2.0 * p_.sp.gamma * v : 0.0))) *
                         vscale_});
      jac.push_back({rv, vi(k, 4), -wt * p_.sp.iota * vscale_});
      if (k >= 2) jac.push_back({rv, vi(k - 1, 0), a1 * vscale_});
      if (k >= 3) jac.push_back({rv, vi(k - 2, 0), a2 * vscale_});

      // x-defect
      const double cosd = p_.horizontal_distance ? cos_a : 1.0;
      jac.push_back({rx, vi(k, 1), 1.0});
      jac.push_back({rx, vi(k, 0), -wt * cosd});
      if (k >= 2) jac.push_back({rx, vi(k - 1, 1), a1});
      if (k >= 3) jac.push_back({rx, vi(k - 2, 1), a2});

      // e-defect
      jac.push_back({re, vi(k, 2), 1.0});
      jac.push_back({re, vi(k, 0), wt * p_.sp.chi * f});
      jac.push_back({re, vi(k, 4), wt * p_.sp.chi * v});
      jac.push_back({re, vi(k, 3), wt * p_.sp.omega});
      if (k >= 2) jac.push_back({re, vi(k - 1, 2), a1});
      if (k >= 3) jac.push_back({re, vi(k - 2, 2), a2});

      // q-defect
      jac.push_back({rq, vi(k, 3), 1.0});
      jac.push_back({rq, vi(k, 0), -wt * f});
      jac.push_back({rq, vi(k, 4), -wt * v});
      if (k >= 2) jac.push_back({rq, vi(k - 1, 3), a1});
      if (k >= 3) jac.push_back({rq, vi(k - 2, 3), a2});

      if (free_theta_) {
        const State g = rhs_at(z, k);
        jac.push_back({rv, theta_index(), -w * g.v * vscale_});
        jac.push_back({rx, theta_index(), -w * g.x});
        jac.push_back({re, theta_index(), -w * g.e});
        jac.push_back({rq, theta_index(), -w * g.q});
      }
    }
    for (std::size_t t = 0; t < ties_.size(); ++t) {
      jac.push_back({ci_tie(int(t)), vi(ties_[t], 4), 1.0});
      jac.push_back({ci_tie(int(t)), vi(ties_[t] - 1, 4), -1.0});
    }
    if (free_theta_) jac.push_back({ci_endpoint(), vi(n_, 1), 1.0});
  }

  void eval_hess(std::span<const double> z, std::span<const double> y,
                 std::vector<Triplet>& hess) const override {
    const double th = theta_of(z);
    for (int k = 1; k <= n_; ++k)
      hess.push_back({vi(k, 4), vi(k, 4), 2.0 * eps_ * h_});

    // H = grad^2 f - sum_r y_r grad^2 c_r; bilinear defect terms only
    for (int k = 1; k <= n_; ++k) {
      const double w = (k == 1 ? h_ : 2.0 * h_ / 3.0);
      const double wt = w * th;
      const double yv = y[ci_defect(k, 0)], yx = y[ci_defect(k, 1)],
                   ye = y[ci_defect(k, 2)], yq = y[ci_defect(k, 3)];
      // d2 c_e / (df dv) = +wt*chi ; d2 c_q / (df dv) = -wt
      const double h_fv = -(ye * wt * p_.sp.chi) + yq * wt;
      hess.push_back({vi(k, 4), vi(k, 0), h_fv});
      if (p_.drag_on) {
        // d2 c_v / dv2 = +wt*2gamma (row-scaled)
        hess.push_back({vi(k, 0), vi(k, 0), -yv * wt * 2.0 * p_.sp.gamma * vscale_});
      }
      if (free_theta_) {
        const double v = z[vi(k, 0)], f = z[vi(k, 4)];
        const double cosd = p_.horizontal_distance ? tab_.cos_a[k - 1] : 1.0;
        // cross second derivatives with theta (from -w * theta * g)
        const double gv_v = -p_.sp.iota - (p_.drag_on ? 2.0 * p_.sp.gamma * v : 0.0);
        double hv = -(yv * (-w * gv_v) * vscale_) - (yx * (-w * cosd)) -
                    (ye * (w * p_.sp.chi * f)) - (yq * (-w * f));
        double hf = -(yv * (-w * p_.sp.iota) * vscale_) -
                    (ye * (w * p_.sp.chi * v)) - (yq * (-w * v));
        double hq = -(ye * (w * p_.sp.omega));
        hess.push_back({theta_index(), vi(k, 0), hv});
        hess.push_back({theta_index(), vi(k, 4), hf});
        hess.push_back({theta_index(), vi(k, 3), hq});
      }
    }
  }

  void kkt_layout(std::vector<int>& var_pos, std::vector<int>& con_pos,
                  std::vector<int>& border) const override {
    var_pos.assign(num_vars(), -1);
    con_pos.assign(num_cons(), -1);
    border.clear();
    std::vector<int> tie_of_node(n_ + 1, -1);
    for (std::size_t t = 0; t < ties_.size(); ++t) tie_of_node[ties_[t]] = int(t);
    int pos = 0;
    for (int k = 1; k <= n_; ++k) {
      for (int c = 0; c < 5; ++c) var_pos[vi(k, c)] = pos++;
      for (int j = 0; j < 4; ++j) con_pos[ci_defect(k, j)] = pos++;
      if (tie_of_node[k] >= 0) con_pos[ci_tie(tie_of_node[k])] = pos++;
    }
    if (free_theta_) {
      con_pos[ci_endpoint()] = pos++;
      border = {theta_index()};
    }
  }

  /// Raw (unscaled) defect infinity norm for reporting.
  double raw_defect_norm(std::span<const double> z) const {
    std::vector<double> c(num_cons());
    eval_c(z, c);
    double m = 0;
    for (int k = 1; k <= n_; ++k) {
      m = std::max(m, std::abs(c[ci_defect(k, 0)] / vscale_));
      for (int j = 1; j < 4; ++j) m = std::max(m, std::abs(c[ci_defect(k, j)]));
    }
    return m;
  }

  const std::vector<int>& ties() const { return ties_; }

 private:
  const OcpProblem& p_;
  const Tables& tab_;
  int n_, m_;
  double h_, eps_, vscale_, x_target_ = 0;
  bool free_theta_;
  std::vector<int> ties_;
};

inline Tables make_tables(const OcpProblem& p,
                          const std::vector<double>& x_nodes_scaled,
                          double theta_bar) {
  const int n = p.grid_size;
  Tables tab;
  tab.sin_a.resize(n);
  tab.cos_a.resize(n);
  tab.n_scaled.resize(n + 1);
  const double D = p.course.total_distance_m;
  for (int k = 1; k <= n; ++k) {
    const double xm =
        0.5 * (x_nodes_scaled[k - 1] + x_nodes_scaled[k]) * p.sp.d_scale;
    const double a = slope_at(p.course, std::clamp(xm, 0.0, D));
    tab.sin_a[k - 1] = std::sin(a);
    tab.cos_a[k - 1] = std::cos(a);
  }
  for (int k = 0; k <= n; ++k) {
    const double t_real = (double(k) / n) * theta_bar * p.sp.t_scale_s;
    tab.n_scaled[k] =
        oxidation_rate(t_real, p.nutrition) / p.sp.n_scale;
  }
  // Energy-capacity relief along the full-force discrete trajectory: that
  // path burns energy pointwise-fastest, so wherever even it sits above the
  // cap the bound is not enforceable by any control (standing start; steep
  // sustained climbs where the supply exceeds the absorbable work rate) and
  // the cap follows the minimal-achievable path instead.
  tab.e_upper.assign(n, 1.0);
  if (p.e_startup_relief) {
    std::vector<double> f_one(n, 1.0);
    const auto sim = simulate(f_one, tab, 1.0 / n, theta_bar, p.sp, p.drag_on,
                              true);
    for (int k = 1; k <= n; ++k)
      if (sim[k].e > 1.0 - 1e-5)
        tab.e_upper[k - 1] = std::max(1.0, sim[k].e) + 1e-4 +
                             0.1 * std::max(0.0, sim[k].e - 1.0);
  }
  return tab;
}

}  // namespace ocpdetail

/**
 * Feasible-dynamics initial guess: constant control with mean power at the
 * energy-neutral level (dE/dt = 0 with N and Q small gives f v = kappa/chi,
 * and v tracks f, so f = sqrt(kappa/chi)), forward-simulated through the
 * transcription's own discrete scheme.
 */
inline Trajectory warm_start_from_constant_pace(const OcpProblem& p) {
  p.validate();
  const int n = p.grid_size;
  const double f_c =
      std::clamp(std::sqrt(std::max(p.sp.kappa, 0.0) / p.sp.chi), 0.05, 0.98);
  std::vector<double> x_nodes(n + 1, 0.0);
  ocpdetail::Tables tab = ocpdetail::make_tables(p, x_nodes, 1.0);

  // if full force is energy-feasible over the whole horizon it dominates
  // any other control; otherwise pace at the energy-neutral level with full
  // force through the startup window (the capacity caps there admit little
  // else)
  std::vector<double> f(n, 1.0);
  {
    const auto sim1 = ocpdetail::simulate(f, tab, 1.0 / n, 1.0, p.sp,
                                          p.drag_on, true);
    bool bang_ok = true;
    for (int k = 1; k <= n && bang_ok; ++k) {
      if (sim1[k].e < 1e-6) bang_ok = false;
      if (sim1[k].e > tab.e_upper[k - 1] + 1e-9) bang_ok = false;
    }
    if (!bang_ok) {
      f.assign(n, f_c);
      for (int k = 1; k <= n; ++k)
        if (tab.e_upper[k - 1] > 1.0) f[k - 1] = 1.0;
    }
  }
  auto sim = ocpdetail::simulate(f, tab, 1.0 / n, 1.0, p.sp, p.drag_on, true);
  // one slope refresh so the guess sees the course it actually covers
  for (int k = 0; k <= n; ++k) x_nodes[k] = sim[k].x;
  tab = ocpdetail::make_tables(p, x_nodes, 1.0);
  sim = ocpdetail::simulate(f, tab, 1.0 / n, 1.0, p.sp, p.drag_on, true);

  Trajectory tr;
  tr.flavor = Flavor::Nondimensional;
  tr.times.resize(n + 1);
  tr.states = std::move(sim);
  tr.controls.resize(n + 1);
  tr.n_rates.resize(n + 1);
  tr.controls[0] = f[0];
  for (int k = 0; k <= n; ++k) {
    tr.times[k] = double(k) / n;
    if (k >= 1) tr.controls[k] = f[k - 1];
    tr.n_rates[k] = tab.n_scaled[k];
  }
  return tr;
}

/**
 * Solves the transcribed problem. Non-convergence is reported in the result
 * (kkt_report carries diagnostics), never as garbage values.
 */
inline OcpSolution solve(const OcpProblem& p,
                         const std::optional<Trajectory>& initial_guess = {}) {
  p.validate();
  const int n = p.grid_size;
  const double h = 1.0 / n;

  // ---- initial guess ----
  Trajectory guess = initial_guess ? *initial_guess
                                   : warm_start_from_constant_pace(p);
  if (guess.flavor != Flavor::Nondimensional)
    throw DomainError("solve: initial guess must be nondimensional");
  if (int(guess.size()) != n + 1)
    throw DomainError("solve: initial guess grid does not match grid_size");

  double theta_bar = 1.0;
  if (p.mode == OcpMode::MinTime) {
    const double reach = guess.states.back().x * p.sp.d_scale;
    theta_bar = std::clamp(p.distance_target_m / std::max(reach, 1e-6),
                           p.theta_lo * 1.02, p.theta_hi * 0.98);
    if (!initial_guess) {
      // re-simulate the guess under the dilated dynamics so its energy path
      // is consistent with the theta-dependent startup caps
      for (int round = 0; round < 3; ++round) {
        std::vector<double> x_nodes(n + 1, 0.0);
        for (int k = 0; k <= n; ++k) x_nodes[k] = guess.states[k].x;
        const ocpdetail::Tables tab0 =
            ocpdetail::make_tables(p, x_nodes, theta_bar);
        std::vector<double> f(n);
        for (int k = 1; k <= n; ++k) f[k - 1] = guess.controls[k];
        for (int k = 1; k <= n; ++k)
          if (tab0.e_upper[k - 1] > 1.0) f[k - 1] = 1.0;
        guess.states = ocpdetail::simulate(f, tab0, h, theta_bar, p.sp,
                                           p.drag_on, true);
        guess.controls[0] = f[0];
        for (int k = 1; k <= n; ++k) guess.controls[k] = f[k - 1];
        const double reach2 = guess.states.back().x * p.sp.d_scale;
        const double theta_new =
            std::clamp(theta_bar * p.distance_target_m / std::max(reach2, 1e-6),
                       p.theta_lo * 1.02, p.theta_hi * 0.98);
        if (std::abs(theta_new - theta_bar) < 1e-3 * theta_bar) {
          theta_bar = theta_new;
          break;
        }
        theta_bar = theta_new;
      }
    }
  }

  std::vector<double> z;  // current iterate, reused across passes
  auto pack = [&](const Trajectory& tr, double theta) {
    std::vector<double> zz(5 * n + (p.mode == OcpMode::MinTime ? 1 : 0));
    for (int k = 1; k <= n; ++k) {
      const State& s = tr.states[k];
      zz[(k - 1) * 5 + 0] = std::max(s.v, 1e-4);
      zz[(k - 1) * 5 + 1] = s.x;
      zz[(k - 1) * 5 + 2] = std::clamp(s.e, 1e-4, 1.0 - 1e-6);
      zz[(k - 1) * 5 + 3] = std::max(s.q, 0.0);
      zz[(k - 1) * 5 + 4] = std::clamp(tr.controls[k], 1e-3, 1.0 - 1e-3);
    }
    if (p.mode == OcpMode::MinTime) zz.back() = theta;
    return zz;
  };
  z = pack(guess, theta_bar);

  OcpSolution sol;
  sol.sp = p.sp;
  IpResult ip;
  ocpdetail::Tables tab;
  std::unique_ptr<ocpdetail::TranscribedNlp> nlp;

  const int outer_passes = 4;
  double theta_tab = -1.0;  // theta the current tables were built with
  for (int pass = 0; pass < outer_passes; ++pass) {
    std::vector<double> x_nodes(n + 1, 0.0);
    for (int k = 1; k <= n; ++k) x_nodes[k] = z[(k - 1) * 5 + 1];
    ocpdetail::Tables tab_new = ocpdetail::make_tables(p, x_nodes, theta_bar);
    double drift = 0.0;
    if (pass > 0) {
      for (int k = 0; k < n; ++k)
        drift = std::max(drift, std::abs(tab_new.sin_a[k] - tab.sin_a[k]));
      drift = std::max(drift, std::abs(theta_bar - theta_tab));
    }
    tab = std::move(tab_new);
    if (pass > 0 && drift < 1e-9) break;  // tables stable: solved already
    theta_tab = theta_bar;

    // continuation on the control regularization
    std::vector<double> eps_stages = {p.eps_reg};
    if (p.eps_reg_final < p.eps_reg * 0.99)
      eps_stages.push_back(p.eps_reg_final);
    for (std::size_t stage = 0; stage < eps_stages.size(); ++stage) {
      nlp = std::make_unique<ocpdetail::TranscribedNlp>(p, tab,
                                                        eps_stages[stage],
                                                        theta_bar);
      const bool final_stage = stage + 1 == eps_stages.size();
      IpOptions opt;
      opt.tol = final_stage ? std::min(1e-9, p.tol.stationarity * 1e-3) : 1e-6;
      opt.constr_tol =
          final_stage ? std::min(1e-10, p.tol.dynamics * 1e-4) : 1e-8;
      // complementarity gaps on active bounds scale like mu/h; drive mu far
      // enough down that multiplier slacks clear their own tolerances
      opt.comp_tol = final_stage ? std::max(1e-13, 2.0e-9 * h) : -1.0;
      opt.mu_init = (pass == 0 && stage == 0) ? 1e-2 : 1e-5;
      opt.mu_min = final_stage ? std::max(1e-14, opt.comp_tol / 3.0) : 1e-12;
      opt.max_iter = p.max_iterations;
      opt.bound_push = (pass == 0 && stage == 0) ? 1e-4 : 1e-8;
      opt.verbose = p.verbose;
      ip = solve_nlp(*nlp, z, opt);
      z = ip.z;
    }
    if (p.mode == OcpMode::MinTime) theta_bar = z.back();
    if (!ip.converged) {
      // a failed pass against stale tables (the horizon moved materially
      // since they were built) deserves a re-tabulated retry
      const bool stale = std::abs(theta_bar - theta_tab) >
                         1e-3 * std::max(theta_bar, 1e-6);
      if (!stale) break;
    }
  }

  // ---- assemble the solution ----
  const double theta = p.mode == OcpMode::MinTime ? z.back() : 1.0;
  Trajectory tr;
  tr.flavor = Flavor::Nondimensional;
  tr.times.resize(n + 1);
  tr.states.resize(n + 1);
  tr.controls.resize(n + 1);
  tr.n_rates.resize(n + 1);
  tr.states[0] = State{0, 0, 1, 0};
  for (int k = 0; k <= n; ++k) {
    tr.times[k] = double(k) / n;
    tr.n_rates[k] = tab.n_scaled[k];
    if (k >= 1) {
      tr.states[k] = State{z[(k - 1) * 5 + 0], z[(k - 1) * 5 + 1],
                           z[(k - 1) * 5 + 2], z[(k - 1) * 5 + 3]};
      tr.controls[k] = z[(k - 1) * 5 + 4];
    }
  }
  // the first interval's defect does not involve a node-0 control; report
  // the initial control as its right limit
  tr.controls[0] = tr.controls[1];

  sol.trajectory = std::move(tr);
  sol.theta = theta;
  sol.horizon_s = theta * p.sp.t_scale_s;
  sol.objective = p.mode == OcpMode::MinTime
                      ? sol.horizon_s
                      : sol.trajectory.states.back().x * p.sp.d_scale;

  KktReport& rep = sol.kkt_report;
  rep.stationarity = ip.kkt_error;
  rep.feasibility = ip.constraint_violation;
  rep.complementarity = ip.complementarity;
  rep.iterations = ip.iterations;
  rep.mu_final = ip.mu_final;
  rep.message = ip.message;
  rep.defect_inf = nlp->raw_defect_norm(z);
  if (!ip.converged && p.mode == OcpMode::MinTime) {
    // an endpoint beyond reach shows up as exploding equality multipliers
    // while the horizon rails at its upper bound
    double y_max = 0;
    for (double yy : ip.y) y_max = std::max(y_max, std::abs(yy));
    const double x_gap = p.distance_target_m / p.sp.d_scale -
                         z[(n - 1) * 5 + 1];
    if (x_gap > 1e-3 && theta > 0.98 * p.theta_hi && y_max > 1e4)
      rep.message += "; endpoint appears unreachable (multiplier blow-up, "
                     "|y| ~ " + std::to_string(y_max) + ")";
  }
  double bviol = 0;
  for (int k = 1; k <= n; ++k) {
    const double e = z[(k - 1) * 5 + 2], f = z[(k - 1) * 5 + 4];
    bviol = std::max(bviol, std::max(0.0, e - tab.e_upper[k - 1]));
    bviol = std::max(bviol, std::max(0.0, -e));
    bviol = std::max(bviol, std::max(0.0, f - 1.0));
    bviol = std::max(bviol, std::max(0.0, -f));
  }
  rep.bound_violation = bviol;
  if (p.mode == OcpMode::MinTime)
    rep.endpoint_gap = std::abs(sol.trajectory.states.back().x * p.sp.d_scale -
                                p.distance_target_m) /
                       p.distance_target_m;

  sol.converged = (ip.converged || ip.kkt_error <= p.tol.stationarity) &&
                  rep.defect_inf <= p.tol.dynamics &&
                  rep.bound_violation <= p.tol.constraint &&
                  (p.mode != OcpMode::MinTime ||
                   rep.endpoint_gap <= p.tol.constraint);
  return sol;
}

/// Rebases a MinTime solution (theta-dilated frame over T_ref) into the
/// canonical frame whose horizon is the realized T. States and constants are
/// rescaled exactly; the trajectory then solves the theta = 1 system.
inline OcpSolution rebase_to_horizon(const OcpSolution& sol,
                                     const RunnerProfile& runner, double sigma,
                                     double m_oxid_max) {
  OcpSolution out = sol;
  const double theta = sol.theta;
  out.sp = nondimensionalize(runner, sigma, m_oxid_max, sol.horizon_s);
  for (auto& s : out.trajectory.states) {
    s.x /= theta;
    s.q /= theta;
  }
  out.theta = 1.0;
  return out;
}

/// Dimensional view of a scaled solution trajectory. The dilation theta is
/// already folded into the scaled dynamics, so the frame's scales apply
/// uniformly; real time is s * horizon.
inline Trajectory to_dimensional_trajectory(const OcpSolution& sol) {
  const ScaledParams& sp = sol.sp;
  Trajectory tr;
  tr.flavor = Flavor::Dimensional;
  tr.times.reserve(sol.trajectory.size());
  for (std::size_t i = 0; i < sol.trajectory.size(); ++i) {
    tr.times.push_back(sol.trajectory.times[i] * sol.horizon_s);
    tr.states.push_back(to_dimensional(sol.trajectory.states[i], sp));
    tr.controls.push_back(sol.trajectory.controls[i] * sp.f_scale);
    if (!sol.trajectory.n_rates.empty())
      tr.n_rates.push_back(sol.trajectory.n_rates[i] * sp.n_scale);
  }
  return tr;
}

struct SegmentSplit {
  double x_end_m = 0;     // segment end, horizontal metres
  double time_s = 0;      // race clock when crossing it
  double duration_s = 0;  // time spent in the segment
  double slope_rad = 0;
};

struct PredictOptions {
  int grid_size = 0;               // 0: pick from distance (25 m per node)
  double duration_estimate_s = 0;  // fallback when the course has no record
  bool sigma_fixed_point = false;  // re-solve sigma with the predicted time
  double eps_reg = 1e-6;
  double eps_reg_final = 1e-10;
  OcpTolerances tol;
  bool drag_on = false;
  int max_iterations = 600;
  bool verbose = false;
};

struct RaceReport {
  double finish_time_s = 0;
  bool converged = false;
  double sigma = 0, sigma_hat_value = 0, f_d = 0, f_a = 0;
  double duration_basis_s = 0;  // the T behind f_d (record or estimate)
  ScaledParams sp;              // constants of the reference frame
  OcpSolution solution;         // scaled minimum-time solution
  Trajectory trajectory_dim;    // dimensional view of the same trajectory
  std::vector<SegmentSplit> splits;
};

/// Minimum-time prediction over a course: sigma from the physiology module
/// (duration basis = route record, else the caller's estimate), then the
/// horizontal-distance transcription.
inline RaceReport predict_race(const CourseProfile& course,
                               const RunnerProfile& runner,
                               const NutritionParams& nutrition = canonical_params(),
                               const PredictOptions& opt = {}) {
  course.validate();
  runner.validate();
  nutrition.validate();
  const double t_basis = course.record_time_s.value_or(opt.duration_estimate_s);
  if (!(t_basis > 0))
    throw DomainError(
        "predict_race: no route record and no duration estimate given");

  RaceReport rep;
  rep.duration_basis_s = t_basis;
  rep.sigma_hat_value = sigma_hat(runner.vo2max);
  rep.f_d = duration_fraction(t_basis);
  rep.f_a = altitude_fraction(course.mean_altitude_m);
  rep.sigma = rep.sigma_hat_value * rep.f_d * rep.f_a;

  auto solve_with_sigma = [&](double sigma) {
    OcpProblem p;
    p.mode = OcpMode::MinTime;
    p.sp = nondimensionalize(runner, sigma, nutrition.m_max, t_basis);
    p.nutrition = nutrition;
    p.course = course;
    p.horizontal_distance = true;
    p.drag_on = opt.drag_on;
    p.distance_target_m = course.total_distance_m;
    p.grid_size =
        opt.grid_size > 0
            ? opt.grid_size
            : std::clamp(int(course.total_distance_m / 25.0), 400, 2000);
    p.tol = opt.tol;
    p.eps_reg = opt.eps_reg;
    p.eps_reg_final = opt.eps_reg_final;
    p.max_iterations = opt.max_iterations;
    p.verbose = opt.verbose;
    auto sol = solve(p);
    return std::make_pair(std::move(sol), p.sp);
  };

  auto [sol, sp] = solve_with_sigma(rep.sigma);
  if (opt.sigma_fixed_point && sol.converged) {
    double t_pred = sol.horizon_s;
    for (int round = 0; round < 10; ++round) {
      const double sigma_new = rep.sigma_hat_value *
                               duration_fraction(t_pred) * rep.f_a;
      auto [sol_new, sp_new] = solve_with_sigma(sigma_new);
      if (!sol_new.converged) break;
      const double dt = std::abs(sol_new.horizon_s - t_pred);
      t_pred = sol_new.horizon_s;
      sol = std::move(sol_new);
      sp = sp_new;
      rep.sigma = sigma_new;
      rep.f_d = duration_fraction(t_pred);
      if (dt < 10.0) break;
    }
  }

  rep.sp = sp;
  rep.converged = sol.converged;
  rep.finish_time_s = sol.horizon_s;
  rep.solution = std::move(sol);
  rep.trajectory_dim = to_dimensional_trajectory(rep.solution);

  // segment splits: crossing times of the profile boundaries
  const auto& tr = rep.trajectory_dim;
  double prev_time = 0;
  std::size_t node = 1;
  for (std::size_t seg = 0; seg + 1 < course.boundaries_m.size(); ++seg) {
    const double x_end = course.boundaries_m[seg + 1];
    while (node + 1 < tr.size() && tr.states[node].x < x_end) ++node;
    const double x0 = tr.states[node - 1].x, x1 = tr.states[node].x;
    const double w = x1 > x0 ? std::clamp((x_end - x0) / (x1 - x0), 0.0, 1.0) : 1.0;
    const double t_cross = tr.times[node - 1] + w * (tr.times[node] - tr.times[node - 1]);
    rep.splits.push_back({x_end, t_cross, t_cross - prev_time,
                          course.slopes_rad[seg]});
    prev_time = t_cross;
  }
  return rep;
}

}  // namespace trailrun
