#pragma once

/**
 * @file nlp.hpp
 * @brief Self-contained primal-dual interior-point method for smooth NLPs
 *
 *     min f(z)   s.t.  c(z) = 0,  lb <= z <= ub,
 *
 * designed for banded KKT systems (direct transcriptions of ODE optimal
 * control). The problem declares a KKT ordering; at most a couple of
 * "border" variables (e.g. a free horizon) are handled as dense columns via
 * a Schur complement against the banded block.
 */

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "trailrun/bandlu.hpp"
#include "trailrun/common.hpp"

namespace trailrun {

struct Triplet {
  int i = 0, j = 0;
  double v = 0;
};

constexpr double kInf = std::numeric_limits<double>::infinity();

/// Problem callback interface. Hessian is of the Lagrangian f(z) - y^T c(z),
/// lower triangle (i >= j), duplicates summed.
class NlpProblem {
 public:
  virtual ~NlpProblem() = default;
  virtual int num_vars() const = 0;
  virtual int num_cons() const = 0;
  virtual void bounds(std::vector<double>& lb, std::vector<double>& ub) const = 0;
  virtual double eval_f(std::span<const double> z) const = 0;
  virtual void eval_grad(std::span<const double> z, std::span<double> g) const = 0;
  virtual void eval_c(std::span<const double> z, std::span<double> c) const = 0;
  virtual void eval_jac(std::span<const double> z, std::vector<Triplet>& jac) const = 0;
  virtual void eval_hess(std::span<const double> z, std::span<const double> y,
                         std::vector<Triplet>& hess) const = 0;

  /**
   * KKT ordering. var_pos[v] / con_pos[c] give each variable/constraint its
   * row among the banded KKT block, or -1 for border variables (dense).
   * Defaults to [vars..., cons...] with no border, i.e. an unstructured
   * (effectively dense) KKT; adequate for small problems.
   */
  virtual void kkt_layout(std::vector<int>& var_pos, std::vector<int>& con_pos,
                          std::vector<int>& border_vars) const {
    var_pos.resize(num_vars());
    con_pos.resize(num_cons());
    for (int i = 0; i < num_vars(); ++i) var_pos[i] = i;
    for (int i = 0; i < num_cons(); ++i) con_pos[i] = num_vars() + i;
    border_vars.clear();
  }
};

struct IpOptions {
  double tol = 1e-9;          // stationarity target
  double constr_tol = 1e-9;   // feasibility target
  double comp_tol = -1;       // complementarity target; < 0 means tol
  double mu_init = 1e-2;
  double mu_min = 1e-12;
  int max_iter = 600;
  double bound_push = 1e-4;   // relative interior push of the start point
  bool verbose = false;
};

struct IpResult {
  bool converged = false;
  std::vector<double> z, y, zl, zu;
  double kkt_error = kInf;
  double constraint_violation = kInf;
  double complementarity = kInf;
  int iterations = 0;
  double mu_final = 0;
  std::string message;
};

namespace ipd {

inline double inf_norm(const std::vector<double>& v) {
  double m = 0;
  for (double x : v) m = std::max(m, std::abs(x));
  return m;
}

inline double one_norm(const std::vector<double>& v) {
  double s = 0;
  for (double x : v) s += std::abs(x);
  return s;
}

}  // namespace ipd

/**
 * Interior-point solve. z0 is the start point (clipped strictly inside the
 * bounds). Non-convergence is reported through the result, not thrown.
 */
inline IpResult solve_nlp(NlpProblem& prob, std::vector<double> z0,
                          const IpOptions& opt = {}) {
  const int n = prob.num_vars();
  const int m = prob.num_cons();
  IpResult res;
  if (int(z0.size()) != n) {
    res.message = "start point has wrong dimension";
    return res;
  }

  std::vector<double> lb, ub;
  prob.bounds(lb, ub);

  // layout
  std::vector<int> var_pos, con_pos, border;
  prob.kkt_layout(var_pos, con_pos, border);
  const int nb = int(border.size());
  std::vector<int> border_slot(n, -1);
  for (int b = 0; b < nb; ++b) border_slot[border[b]] = b;
  const int nk = n + m - nb;
  {  // sanity: positions must be a permutation of 0..nk-1
    std::vector<char> seen(nk, 0);
    for (int v = 0; v < n; ++v) {
      if (border_slot[v] >= 0) {
        if (var_pos[v] != -1) { res.message = "layout: border var with position"; return res; }
        continue;
      }
      if (var_pos[v] < 0 || var_pos[v] >= nk || seen[var_pos[v]]) {
        res.message = "layout: bad var position";
        return res;
      }
      seen[var_pos[v]] = 1;
    }
    for (int c = 0; c < m; ++c) {
      if (con_pos[c] < 0 || con_pos[c] >= nk || seen[con_pos[c]]) {
        res.message = "layout: bad con position";
        return res;
      }
      seen[con_pos[c]] = 1;
    }
  }

  // start point strictly interior
  std::vector<double> z = std::move(z0);
  for (int i = 0; i < n; ++i) {
    const bool has_l = lb[i] > -kInf, has_u = ub[i] < kInf;
    if (has_l && has_u) {
      const double span = ub[i] - lb[i];
      const double push = std::min(opt.bound_push * span, 0.25 * span);
      z[i] = std::clamp(z[i], lb[i] + push, ub[i] - push);
    } else if (has_l) {
      z[i] = std::max(z[i], lb[i] + opt.bound_push * std::max(1.0, std::abs(lb[i])));
    } else if (has_u) {
      z[i] = std::min(z[i], ub[i] - opt.bound_push * std::max(1.0, std::abs(ub[i])));
    }
  }

  double mu = opt.mu_init;
  std::vector<double> y(m, 0.0), zl(n, 0.0), zu(n, 0.0);
  for (int i = 0; i < n; ++i) {
    if (lb[i] > -kInf) zl[i] = std::clamp(mu / (z[i] - lb[i]), 1e-8, 1e8);
    if (ub[i] < kInf) zu[i] = std::clamp(mu / (ub[i] - z[i]), 1e-8, 1e8);
  }

  std::vector<double> g(n), c(m), rd(n), rbar(n), sigma(n);
  std::vector<Triplet> jac, hess;
  std::vector<double> rhs(nk), sol(nk), work(nk);
  std::vector<std::vector<double>> bcol(nb, std::vector<double>(nk));
  std::vector<std::vector<double>> ycol(nb, std::vector<double>(nk));

  double nu = 1.0;           // merit penalty weight
  double delta_last = 0.0;   // last Hessian regularization
  double f_val = 0;

  auto barrier = [&](const std::vector<double>& zz, double& fv) -> double {
    fv = prob.eval_f(zz);
    double phi = fv;
    for (int i = 0; i < n; ++i) {
      if (lb[i] > -kInf) {
        const double d = zz[i] - lb[i];
        if (d <= 0) return kInf;
        phi -= mu * std::log(d);
      }
      if (ub[i] < kInf) {
        const double d = ub[i] - zz[i];
        if (d <= 0) return kInf;
        phi -= mu * std::log(d);
      }
    }
    return phi;
  };

  int iter = 0;
  std::string stop_msg = "max iterations reached";
  for (iter = 0; iter < opt.max_iter; ++iter) {
    f_val = prob.eval_f(z);
    prob.eval_grad(z, g);
    prob.eval_c(z, c);
    jac.clear();
    prob.eval_jac(z, jac);

    // residuals
    std::fill(rd.begin(), rd.end(), 0.0);
    for (const auto& t : jac) rd[t.j] += t.v * y[t.i];
    for (int i = 0; i < n; ++i) rd[i] = g[i] - rd[i] - zl[i] + zu[i];

    double comp0 = 0, comp_mu = 0;
    for (int i = 0; i < n; ++i) {
      if (lb[i] > -kInf) {
        const double p = (z[i] - lb[i]) * zl[i];
        comp0 = std::max(comp0, p);
        comp_mu = std::max(comp_mu, std::abs(p - mu));
      }
      if (ub[i] < kInf) {
        const double p = (ub[i] - z[i]) * zu[i];
        comp0 = std::max(comp0, p);
        comp_mu = std::max(comp_mu, std::abs(p - mu));
      }
    }
    // IPOPT-style scaling of the dual residuals
    const double s_max = 100.0;
    double dual_sum = ipd::one_norm(y) + ipd::one_norm(zl) + ipd::one_norm(zu);
    const double sd =
        std::max(s_max, dual_sum / std::max(1, n + m)) / s_max;
    const double err_d = ipd::inf_norm(rd) / sd;
    const double err_c = ipd::inf_norm(c);
    const double err_0 = std::max({err_d, err_c, comp0 / sd});
    const double err_mu = std::max({err_d, err_c, comp_mu / sd});

    res.kkt_error = err_0;
    res.constraint_violation = err_c;
    res.complementarity = comp0;

    if (opt.verbose) {
      int rd_arg = 0;
      for (int i = 0; i < n; ++i)
        if (std::abs(rd[i]) > std::abs(rd[rd_arg])) rd_arg = i;
      std::printf(
          "ip %3d  f=% .8e  |c|=%.2e  kkt=%.2e  mu=%.1e  dw=%.1e  rd[%d]=%.1e\n",
          iter, f_val, err_c, err_0, mu, delta_last, rd_arg, rd[rd_arg]);
    }

    const double comp_target = opt.comp_tol > 0 ? opt.comp_tol : opt.tol;
    if (err_d <= opt.tol && err_c <= opt.constr_tol &&
        comp0 / sd <= comp_target) {
      res.converged = true;
      stop_msg = "optimal";
      break;
    }
    if (err_mu <= 10.0 * mu && mu > opt.mu_min) {
      mu = std::max(opt.mu_min,
                    std::min(0.2 * mu, std::max(std::pow(mu, 1.5), 0.05 * mu)));
      continue;
    }

    hess.clear();
    prob.eval_hess(z, y, hess);

    for (int i = 0; i < n; ++i) {
      double s = 0;
      if (lb[i] > -kInf) s += zl[i] / (z[i] - lb[i]);
      if (ub[i] < kInf) s += zu[i] / (ub[i] - z[i]);
      sigma[i] = s;
      double rb = g[i];
      if (lb[i] > -kInf) rb -= mu / (z[i] - lb[i]);
      if (ub[i] < kInf) rb += mu / (ub[i] - z[i]);
      rbar[i] = rb;
    }
    for (const auto& t : jac) rbar[t.j] -= t.v * y[t.i];

    // band widths from the triplets under the declared ordering
    int kl = 0, ku = 0;
    auto stretch = [&](int pi, int pj) {
      kl = std::max(kl, pi - pj);
      ku = std::max(ku, pj - pi);
    };
    for (const auto& t : hess) {
      const int pi = var_pos[t.i], pj = var_pos[t.j];
      if (pi >= 0 && pj >= 0) { stretch(pi, pj); stretch(pj, pi); }
    }
    for (const auto& t : jac) {
      const int pc = con_pos[t.i], pv = var_pos[t.j];
      if (pv >= 0) { stretch(pc, pv); stretch(pv, pc); }
    }

    // regularized KKT solve with inertia-style retry
    double delta = 0.0;
    bool solved = false;
    std::vector<double> dz(n), dy(m);
    const double delta_c = std::max(1e-12, 1e-8 * mu);
    BandMatrix K;   // factored in place
    BandMatrix K0;  // pristine copy for residuals (iterative refinement)
    std::vector<double> bD(nb * nb, 0.0);

    // solves the bordered system for (banded part w, border part db) with
    // one iterative-refinement pass; valid once K is factored
    std::vector<double> schur(nb * nb);
    auto bordered_solve = [&](const std::vector<double>& rk,
                              const std::vector<double>& rb,
                              std::vector<double>& w,
                              std::vector<double>& db) -> bool {
      w = rk;
      K.solve(w);
      std::vector<double> rb2(nb);
      db.assign(nb, 0.0);
      for (int a = 0; a < nb; ++a) {
        rb2[a] = rb[a];
        for (int q = 0; q < nk; ++q) rb2[a] -= bcol[a][q] * w[q];
      }
      if (nb == 1) {
        if (std::abs(schur[0]) < 1e-140) return false;
        db[0] = rb2[0] / schur[0];
      } else if (nb == 2) {
        const double det = schur[0] * schur[3] - schur[1] * schur[2];
        if (std::abs(det) < 1e-140) return false;
        db[0] = (rb2[0] * schur[3] - schur[1] * rb2[1]) / det;
        db[1] = (schur[0] * rb2[1] - rb2[0] * schur[2]) / det;
      }
      for (int q = 0; q < nk; ++q)
        for (int b = 0; b < nb; ++b) w[q] -= ycol[b][q] * db[b];
      return true;
    };

    auto kkt_apply = [&](const std::vector<double>& rz,
                         const std::vector<double>& rc, std::vector<double>& ddz,
                         std::vector<double>& ddy) -> bool {
      std::vector<double> rk(nk), rb(nb), w, db;
      for (int v = 0; v < n; ++v)
        if (border_slot[v] < 0) rk[var_pos[v]] = rz[v];
      for (int cc = 0; cc < m; ++cc) rk[con_pos[cc]] = rc[cc];
      for (int a = 0; a < nb; ++a) rb[a] = rz[border[a]];
      if (!bordered_solve(rk, rb, w, db)) return false;

      // one refinement pass against the unfactored matrix
      std::vector<double> mv;
      K0.multiply(w, mv);
      std::vector<double> res_k(nk), res_b(nb);
      for (int q = 0; q < nk; ++q) {
        double acc = rk[q] - mv[q];
        for (int b = 0; b < nb; ++b) acc -= bcol[b][q] * db[b];
        res_k[q] = acc;
      }
      for (int a = 0; a < nb; ++a) {
        double acc = rb[a];
        for (int q = 0; q < nk; ++q) acc -= bcol[a][q] * w[q];
        for (int b = 0; b < nb; ++b) {
          acc -= bD[a * nb + b] * db[b];
          if (a == b) acc -= delta * db[b];
        }
        res_b[a] = acc;
      }
      std::vector<double> w2, db2;
      if (bordered_solve(res_k, res_b, w2, db2)) {
        for (int q = 0; q < nk; ++q) w[q] += w2[q];
        for (int b = 0; b < nb; ++b) db[b] += db2[b];
      }

      for (int v = 0; v < n; ++v)
        ddz[v] = border_slot[v] < 0 ? w[var_pos[v]] : db[border_slot[v]];
      for (int cc = 0; cc < m; ++cc) ddy[cc] = -w[con_pos[cc]];
      return true;
    };

    std::vector<double> neg_rbar(n), neg_c(m);
    for (int i = 0; i < n; ++i) neg_rbar[i] = -rbar[i];
    for (int cc = 0; cc < m; ++cc) neg_c[cc] = -c[cc];

    for (int attempt = 0; attempt < 30 && !solved; ++attempt) {
      K = BandMatrix(nk, kl, ku);
      std::fill(bD.begin(), bD.end(), 0.0);
      for (auto& col : bcol) std::fill(col.begin(), col.end(), 0.0);

      auto add_entry = [&](int vi, int vj, double v) {
        // vi, vj are variable indices; symmetric contribution (lower given)
        const int bi = border_slot[vi], bj = border_slot[vj];
        const int pi = bi < 0 ? var_pos[vi] : -1;
        const int pj = bj < 0 ? var_pos[vj] : -1;
        if (bi < 0 && bj < 0) {
          K.add(pi, pj, v);
          if (pi != pj) K.add(pj, pi, v);
        } else if (bi >= 0 && bj >= 0) {
          bD[bi * nb + bj] += v;
          if (vi != vj) bD[bj * nb + bi] += v;
        } else if (bi >= 0) {
          bcol[bi][pj] += v;
        } else {
          bcol[bj][pi] += v;
        }
      };

      for (const auto& t : hess) add_entry(t.i, t.j, t.v);
      for (int i = 0; i < n; ++i) add_entry(i, i, sigma[i] + delta);
      for (const auto& t : jac) {
        const int pc = con_pos[t.i];
        const int bj = border_slot[t.j];
        if (bj < 0) {
          K.add(pc, var_pos[t.j], t.v);
          K.add(var_pos[t.j], pc, t.v);
        } else {
          bcol[bj][pc] += t.v;
        }
      }
      for (int cc = 0; cc < m; ++cc) K.add(con_pos[cc], con_pos[cc], -delta_c);

      K0 = K;
      bool ok = K.factor();
      if (ok) {
        for (int b = 0; b < nb; ++b) {
          ycol[b] = bcol[b];
          K.solve(ycol[b]);
        }
        for (int a = 0; a < nb; ++a)
          for (int b = 0; b < nb; ++b) {
            double acc = bD[a * nb + b];
            if (a == b) acc += delta;
            for (int q = 0; q < nk; ++q) acc -= bcol[a][q] * ycol[b][q];
            schur[a * nb + b] = acc;
          }
        ok = kkt_apply(neg_rbar, neg_c, dz, dy);
        if (ok) {
          // require descent for the barrier merit unless infeasibility rules
          double gphi_dz = 0;
          for (int i = 0; i < n; ++i) gphi_dz += rbar[i] * dz[i];
          for (int cc = 0; cc < m; ++cc) gphi_dz -= y[cc] * c[cc];
          const double cnorm = ipd::one_norm(c);
          // tolerate sign noise in the directional derivative near optima
          if (gphi_dz <= 1e-11 * std::max(1.0, std::abs(f_val)) ||
              cnorm > 10 * opt.constr_tol)
            solved = true;
          if (solved) {
            const double y_new = ipd::inf_norm(dy) + ipd::inf_norm(y);
            nu = std::max(nu, 1.2 * y_new + 0.1);
          }
        }
      }
      if (!solved) {
        delta = delta == 0.0
                    ? std::max(1e-10, 0.3 * delta_last)
                    : delta * 8.0;
        if (delta > 1e14) break;
      }
    }
    if (!solved) {
      stop_msg = "KKT system could not be regularized";
      break;
    }
    delta_last = delta;

    // fraction-to-boundary
    const double tau = std::max(0.99, 1.0 - mu);
    double a_pr = 1.0, a_du = 1.0;
    int a_pr_argmin = -1;
    for (int i = 0; i < n; ++i) {
      if (lb[i] > -kInf && dz[i] < 0) {
        const double am = -tau * (z[i] - lb[i]) / dz[i];
        if (am < a_pr) { a_pr = am; a_pr_argmin = i; }
      }
      if (ub[i] < kInf && dz[i] > 0) {
        const double am = tau * (ub[i] - z[i]) / dz[i];
        if (am < a_pr) { a_pr = am; a_pr_argmin = i; }
      }
    }
    std::vector<double> dzl(n, 0.0), dzu(n, 0.0);
    for (int i = 0; i < n; ++i) {
      if (lb[i] > -kInf) {
        dzl[i] = (mu - zl[i] * dz[i]) / (z[i] - lb[i]) - zl[i];
        if (dzl[i] < 0) a_du = std::min(a_du, -tau * zl[i] / dzl[i]);
      }
      if (ub[i] < kInf) {
        dzu[i] = (mu + zu[i] * dz[i]) / (ub[i] - z[i]) - zu[i];
        if (dzu[i] < 0) a_du = std::min(a_du, -tau * zu[i] / dzu[i]);
      }
    }

    // Armijo backtracking on phi_mu + nu |c|_1, with one second-order
    // correction at the full step: constraint curvature otherwise rejects
    // good steps along the nearly singular control directions
    double f0 = 0;
    const double phi0 = barrier(z, f0) + nu * ipd::one_norm(c);
    double gphi_dz = 0;
    for (int i = 0; i < n; ++i) gphi_dz += rbar[i] * dz[i];
    for (int cc = 0; cc < m; ++cc) gphi_dz -= y[cc] * c[cc];
    const double descent = gphi_dz - nu * ipd::one_norm(c);

    std::vector<double> z_try(n), c_try(m), dz_eff = dz;
    auto merit_at = [&](const std::vector<double>& zz) {
      double f_try = 0;
      const double phi_f = barrier(zz, f_try);
      if (phi_f == kInf) return kInf;
      prob.eval_c(zz, c_try);
      return phi_f + nu * ipd::one_norm(c_try);
    };
    auto armijo_ok = [&](double phi_try, double a) {
      return phi_try <= phi0 + 1e-4 * a * std::min(descent, 0.0) ||
             phi_try <= phi0 - 1e-14 * std::abs(phi0);
    };

    double t_step = 1.0;
    bool accepted = false, used_soc = false;
    for (int ls = 0; ls < 40; ++ls) {
      const double a = t_step * a_pr;
      for (int i = 0; i < n; ++i) z_try[i] = z[i] + a * dz_eff[i];
      const double phi_try = merit_at(z_try);
      if (armijo_ok(phi_try, a)) {
        accepted = true;
        break;
      }
      if (!used_soc && phi_try < kInf) {
        // second-order correction, reusing the factorization
        used_soc = true;
        std::vector<double> zero_n(n, 0.0), rc2(m), dz2(n), dy2(m);
        for (int cc = 0; cc < m; ++cc) rc2[cc] = -c_try[cc];
        if (kkt_apply(zero_n, rc2, dz2, dy2)) {
          double a_soc = 1.0;
          for (int i = 0; i < n; ++i) {
            const double step = a * dz_eff[i] + dz2[i];
            if (lb[i] > -kInf && step < 0)
              a_soc = std::min(a_soc, -tau * (z[i] - lb[i]) / step);
            if (ub[i] < kInf && step > 0)
              a_soc = std::min(a_soc, tau * (ub[i] - z[i]) / step);
          }
          std::vector<double> z_soc(n);
          for (int i = 0; i < n; ++i)
            z_soc[i] = z[i] + a_soc * (a * dz_eff[i] + dz2[i]);
          const double phi_soc = merit_at(z_soc);
          if (armijo_ok(phi_soc, a) || phi_soc < phi0) {
            // fold the correction into the step so the update lands on z_soc
            for (int i = 0; i < n; ++i)
              dz_eff[i] = (z_soc[i] - z[i]) / std::max(a, 1e-300);
            accepted = true;
            break;
          }
        }
      }
      t_step *= 0.5;
      if (t_step < 1e-12) break;
    }
    if (!accepted) {
      // keep duals moving; often un-sticks the next iteration
      t_step = 0;
    }

    if (opt.verbose)
      std::printf("      a_pr=%.3e (var %d)  t=%.3e  a_du=%.3e  nu=%.2e soc=%d\n",
                  a_pr, a_pr_argmin, t_step, a_du, nu, int(used_soc));

    const double a = t_step * a_pr;
    for (int i = 0; i < n; ++i) z[i] += a * dz_eff[i];
    for (int cc = 0; cc < m; ++cc) y[cc] += (a > 0 ? a : a_du * 1e-2) * dy[cc];
    for (int i = 0; i < n; ++i) {
      zl[i] += a_du * dzl[i];
      zu[i] += a_du * dzu[i];
      // keep bound duals within IPOPT's safeguard box around mu/(z-b)
      const double kap = 1e10;
      if (lb[i] > -kInf) {
        const double ref = mu / (z[i] - lb[i]);
        zl[i] = std::clamp(zl[i], ref / kap, ref * kap);
      }
      if (ub[i] < kInf) {
        const double ref = mu / (ub[i] - z[i]);
        zu[i] = std::clamp(zu[i], ref / kap, ref * kap);
      }
    }
  }

  res.iterations = iter;
  res.mu_final = mu;
  res.z = std::move(z);
  res.y = std::move(y);
  res.zl = std::move(zl);
  res.zu = std::move(zu);
  res.message = stop_msg;
  return res;
}

}  // namespace trailrun
