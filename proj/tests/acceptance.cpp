// Acceptance suite: end-to-end checks of the model, solver, verifier and
// pipelines at their contracted tolerances. One line per criterion.

#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "test_helpers.hpp"
#include "trailrun/cli.hpp"
#include "trailrun/model.hpp"
#include "trailrun/nutrition.hpp"
#include "trailrun/ocp.hpp"
#include "trailrun/physiology.hpp"
#include "trailrun/pmp.hpp"
#include "trailrun/terrain.hpp"

using namespace trailrun;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

int g_failures = 0;

void run(int id, const std::string& name, const std::function<Outcome()>& fn) {
  const auto t0 = std::chrono::steady_clock::now();
  Outcome out;
  try {
    out = fn();
  } catch (const std::exception& e) {
    out.pass = false;
    out.detail = std::string("exception: ") + e.what();
  }
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();
  if (!out.pass) ++g_failures;
  std::printf("[%2d] %s  %-34s (%.1f s)  %s\n", id,
              out.pass ? "PASS" : "FAIL", name.c_str(), secs,
              out.detail.c_str());
  std::fflush(stdout);
}

std::string fmt(const char* f, ...) {
  char buf[512];
  va_list ap;
  va_start(ap, f);
  std::vsnprintf(buf, sizeof buf, f, ap);
  va_end(ap);
  return buf;
}

// Reference scenario pieces -------------------------------------------------

RunnerProfile reference_runner() { return testutil::reference_runner(); }

OcpProblem benchmark_problem(int grid) {
  OcpProblem p;
  p.mode = OcpMode::MaxDistance;
  p.sp = nondimensionalize(reference_runner(), 27.0, canonical_params().m_max,
                           5820.0);
  p.nutrition = canonical_params();
  p.course = constant_slope_course(40000.0, 0.0);
  p.grid_size = grid;
  return p;
}

std::string synth_gpx(int n_points, double spacing_m, double base_ele,
                      double gain) {
  std::string out = "<gpx version=\"1.1\"><trk><trkseg>\n";
  char buf[200];
  const double deg_per_m = 180.0 / (3.141592653589793 * kEarthRadiusM);
  const double total = (n_points - 1) * spacing_m;
  for (int i = 0; i < n_points; ++i) {
    const double d = i * spacing_m;
    std::snprintf(buf, sizeof buf,
                  "<trkpt lat=\"%.10f\" lon=\"7\"><ele>%.4f</ele></trkpt>\n",
                  45.5 + d * deg_per_m, base_ele + gain * d / total);
    out += buf;
  }
  return out + "</trkseg></trk></gpx>\n";
}

}  // namespace

int main() {
  std::printf("acceptance suite\n================\n");

  // 1 -------------------------------------------------------------------
  run(1, "nondimensional constant set", [] {
    const ScaledParams sp = nondimensionalize(
        reference_runner(), 27.0, canonical_params().m_max, 5820.0);
    const struct { const char* n; double got, want; } rows[] = {
        {"iota", sp.iota, 8686.57}, {"beta", sp.beta, 12718.69},
        {"gamma", sp.gamma, 97.97}, {"chi", sp.chi, 70.02},
        {"phi", sp.phi, 13.91},     {"omega", sp.omega, 24.45}};
    double worst = 0;
    for (const auto& r : rows) worst = std::max(worst, rel_diff(r.got, r.want));
    Outcome o;
    o.pass = worst < 1e-3;
    o.detail = fmt("max deviation %.4f%%", 100 * worst);
    return o;
  });

  // shared solve for 2, 4, 5
  OcpProblem bench = benchmark_problem(400);
  OcpSolution bench_sol;
  PmpReport bench_rep;
  bool bench_ready = false;

  // 2 -------------------------------------------------------------------
  run(2, "flat-route structure + certificate", [&] {
    bench_sol = solve(bench);
    if (!bench_sol.converged) return Outcome{false, "solver did not converge"};
    bench_rep = verify(bench_sol.trajectory, bench.course, bench.sp);
    bench_ready = true;

    std::string seq;
    for (const auto& a : bench_rep.arcs) {
      if (!seq.empty()) seq += ",";
      seq += to_string(a.kind);
    }
    const std::vector<ArcKind> want = {
        ArcKind::MaxForce, ArcKind::Interior, ArcKind::BoundaryUpper,
        ArcKind::Interior, ArcKind::BoundaryLower};
    bool seq_ok = bench_rep.arcs.size() == want.size();
    if (seq_ok)
      for (std::size_t i = 0; i < want.size(); ++i)
        if (bench_rep.arcs[i].kind != want[i]) seq_ok = false;

    const bool signs_ok =
        bench_rep.certified && bench_rep.lambda_e_min >= -1e-6 &&
        bench_rep.lambda_q_max <= 1e-6 && bench_rep.eta_min >= -1e-6 &&
        bench_rep.glc_min >= -1e-6;

    Outcome o;
    o.pass = seq_ok && signs_ok;
    o.detail = fmt(
        "sequence [%s] %s; certificate %s (lE_min %.1e, lQ_max %.1e, "
        "eta_min %.1e, GLC_min %.1e)",
        seq.c_str(), seq_ok ? "matches" : "differs from the 5-arc reference",
        bench_rep.certified ? "granted" : "refused", bench_rep.lambda_e_min,
        bench_rep.lambda_q_max, bench_rep.eta_min, bench_rep.glc_min);
    return o;
  });

  // 3 -------------------------------------------------------------------
  run(3, "flat-route finish time", [] {
    CourseProfile course = constant_slope_course(20000.0, 0.0);
    course.record_time_s = 5820.0;
    PredictOptions opt;
    opt.grid_size = 400;
    const RaceReport rep =
        predict_race(course, reference_runner(), canonical_params(), opt);
    Outcome o;
    if (!rep.converged) {
      o.detail = "solver did not converge";
      return o;
    }
    const double dev = rel_diff(rep.finish_time_s, 5820.0);
    o.pass = dev <= 0.05;
    o.detail = fmt("T = %.0f s (%s) vs 5820 s: %.1f%% off", rep.finish_time_s,
                   cli::format_hms(rep.finish_time_s).c_str(), 100 * dev);
    return o;
  });

  // 4 -------------------------------------------------------------------
  run(4, "fatigue linearity", [&] {
    if (!bench_ready) return Outcome{false, "benchmark solve unavailable"};
    const auto& tr = bench_sol.trajectory;
    const int n = int(tr.size());
    double st = 0, sq_ = 0, stt = 0, stq = 0;
    for (int k = 0; k < n; ++k) {
      st += tr.times[k];
      sq_ += tr.states[k].q;
      stt += tr.times[k] * tr.times[k];
      stq += tr.times[k] * tr.states[k].q;
    }
    const double slope = (n * stq - st * sq_) / (n * stt - st * st);
    const double icept = (sq_ - slope * st) / n;
    double rss = 0;
    for (int k = 0; k < n; ++k)
      rss += sq(tr.states[k].q - slope * tr.times[k] - icept);
    const double rms = std::sqrt(rss / n) / tr.states.back().q;
    Outcome o;
    o.pass = rms < 0.02;
    o.detail = fmt("linear-fit RMS residual %.3f%% of Q(1)", 100 * rms);
    return o;
  });

  // 5 -------------------------------------------------------------------
  run(5, "singular-control cross-validation", [&] {
    if (!bench_ready) return Outcome{false, "benchmark solve unavailable"};
    Outcome o;
    o.pass = bench_rep.f_int_dev_max <= 0.02 && bench_rep.f_b_dev_max <= 0.02;
    o.detail = fmt("max |f - f_int| = %.2e, max |f - f_b| = %.2e",
                   bench_rep.f_int_dev_max, bench_rep.f_b_dev_max);
    return o;
  });

  // 6 -------------------------------------------------------------------
  run(6, "mode duality", [] {
    const RunnerProfile runner = reference_runner();
    const auto nut = canonical_params();
    const double sigma = sigma_available({runner.vo2max, 5820.0, 0.0});
    OcpProblem p;
    p.mode = OcpMode::MinTime;
    p.sp = nondimensionalize(runner, sigma, nut.m_max, 5820.0);
    p.nutrition = nut;
    p.course = constant_slope_course(20000.0, 0.0);
    p.horizontal_distance = true;
    p.distance_target_m = 20000.0;
    p.grid_size = 400;
    const OcpSolution min_time = solve(p);
    if (!min_time.converged) return Outcome{false, "min-time solve failed"};

    OcpProblem q = p;
    q.mode = OcpMode::MaxDistance;
    q.sp = nondimensionalize(runner, sigma, nut.m_max, min_time.horizon_s);
    const OcpSolution max_dist = solve(q);
    if (!max_dist.converged) return Outcome{false, "max-distance solve failed"};
    Outcome o;
    o.pass = max_dist.objective >= 0.999 * 20000.0;
    o.detail = fmt("T* = %.1f s; distance at T* = %.1f m (>= %.1f m)",
                   min_time.horizon_s, max_dist.objective, 0.999 * 20000.0);
    return o;
  });

  // 7 -------------------------------------------------------------------
  run(7, "brute-force oracle equivalence", [] {
    ScaledParams sp;
    sp.iota = 200.0; sp.beta = 392.4; sp.gamma = 1.0; sp.chi = 3.0;
    sp.kappa = 1.5; sp.phi = 1e-6; sp.omega = 1e-6;
    sp.t_scale_s = 50.0; sp.v_scale = 1.25; sp.d_scale = 62.5;
    sp.q_scale = 1.0; sp.e_scale = 400.0; sp.f_scale = 5.0;
    sp.n_scale = canonical_params().m_max;

    OcpProblem p;
    p.mode = OcpMode::MinTime;
    p.sp = sp;
    p.nutrition = canonical_params();
    p.course = constant_slope_course(150.0, 0.0, 0.0, 100.0);
    p.horizontal_distance = true;
    p.distance_target_m = 45.0;
    p.grid_size = 120;
    p.control_pieces = 3;
    const OcpSolution sol = solve(p);
    if (!sol.converged) return Outcome{false, "transcription failed"};

    auto rhs = [&](double, const State& s, double f, double a) {
      return rhs_scaled(s, f, a, 0.5, sp, false, true);
    };
    const double x_target = p.distance_target_m / sp.d_scale;
    auto crossing_time = [&](const std::array<double, 3>& fs) -> double {
      double t_total = 1.0;
      for (int pass = 0; pass < 40; ++pass) {
        auto control = [&](double t) {
          return fs[std::size_t(std::min(2, int(3.0 * t / t_total)))];
        };
        const auto grid = uniform_grid(0.0, 3.0, 3000);
        Trajectory sim;
        try {
          sim = integrate(rhs, State{0, 0, 1, 0}, control,
                          [](double) { return 0.0; }, grid,
                          Flavor::Nondimensional);
        } catch (const NumericError&) {
          return -1;
        }
        double t_cross = -1;
        for (std::size_t k = 1; k < sim.size(); ++k) {
          if (sim.states[k].e < -1e-6 && sim.times[k] < t_total) return -1;
          if (sim.states[k].x >= x_target) {
            const double w = (x_target - sim.states[k - 1].x) /
                             (sim.states[k].x - sim.states[k - 1].x);
            t_cross = sim.times[k - 1] + w * (sim.times[k] - sim.times[k - 1]);
            break;
          }
        }
        if (t_cross < 0) return -1;
        if (std::abs(t_cross - t_total) < 1e-10) return t_cross;
        t_total = t_cross;
      }
      return t_total;
    };

    double best = kInf;
    std::array<double, 3> best_f = {0, 0, 0};
    for (int i = 0; i <= 20; ++i)
      for (int j = 0; j <= 20; ++j)
        for (int k = 0; k <= 20; ++k) {
          const std::array<double, 3> fs = {i * 0.05, j * 0.05, k * 0.05};
          const double t = crossing_time(fs);
          if (t > 0 && t < best) {
            best = t;
            best_f = fs;
          }
        }
    if (best == kInf) return Outcome{false, "enumeration found nothing"};
    double quantum = 0;
    for (int d = 0; d < 3; ++d)
      for (double step : {-0.05, 0.05}) {
        auto fs = best_f;
        fs[std::size_t(d)] = std::clamp(fs[std::size_t(d)] + step, 0.0, 1.0);
        const double t = crossing_time(fs);
        if (t > 0) quantum = std::max(quantum, std::abs(t - best));
      }
    quantum = std::max(quantum, 1e-4);
    const double t_nlp = sol.horizon_s / sp.t_scale_s;
    Outcome o;
    o.pass = std::abs(t_nlp - best) <= quantum;
    o.detail = fmt("nlp %.6f vs enumeration %.6f at (%.2f,%.2f,%.2f), "
                   "quantum %.4f",
                   t_nlp, best, best_f[0], best_f[1], best_f[2], quantum);
    return o;
  });

  // 8 -------------------------------------------------------------------
  run(8, "nutrition model and refit", [] {
    const NutritionParams p = canonical_params();
    double quad_err = 0;
    for (double t : {1800.0, 7200.0, 14400.0}) {
      const double analytic = cumulative_oxidized(t, p);
      const double quad = testutil::adaptive_simpson(
          [&](double s) { return oxidation_rate(s, p); }, 0.0, t, 1e-12);
      quad_err = std::max(quad_err, rel_diff(analytic, quad));
    }
    double table_err = 0;
    for (const auto& [h, grams] : default_calibration_data())
      table_err = std::max(table_err,
                           rel_diff(cumulative_oxidized(h * 3600.0, p), grams));
    std::vector<RateSample> samples;
    for (int i = 0; i < 12; ++i) {
      const double t = 200.0 + 1100.0 * i;
      samples.push_back({t, oxidation_rate(t, p)});
    }
    const FitResult fit = fit_logistic(samples);
    const double fit_err = std::max({rel_diff(fit.params.k, p.k),
                                     rel_diff(fit.params.n0, p.n0),
                                     rel_diff(fit.params.m_max, p.m_max)});
    Outcome o;
    o.pass = quad_err < 1e-8 && table_err < 0.02 && fit_err < 1e-6;
    o.detail = fmt("quadrature %.1e, calibration table %.2f%%, round-trip %.1e",
                   quad_err, 100 * table_err, fit_err);
    return o;
  });

  // 9 -------------------------------------------------------------------
  run(9, "physiology formulas", [] {
    const bool fd_ok = std::abs(duration_fraction(5820.0) - 0.843) < 1e-12;
    const bool fa0_ok = altitude_fraction(0.0) == 1.0;
    const bool fa2000_ok = std::abs(altitude_fraction(2000.0) - 0.94518) < 1e-5;
    bool reject_ok = false;
    try {
      duration_fraction(940.0 * 60.0);
    } catch (const DomainError&) {
      reject_ok = true;
    }
    Outcome o;
    o.pass = fd_ok && fa0_ok && fa2000_ok && reject_ok;
    o.detail = fmt("f_d(5820)=%.4f, f_a(0)=%.1f, f_a(2000)=%.5f, 940 min %s",
                   duration_fraction(5820.0), altitude_fraction(0.0),
                   altitude_fraction(2000.0),
                   reject_ok ? "rejected" : "NOT rejected");
    return o;
  });

  // 10 ------------------------------------------------------------------
  run(10, "terrain reconstruction", [] {
    const auto ramp = parse_gpx(synth_gpx(501, 10.0, 100.0, 500.0));
    const CourseProfile rp = build_profile(ramp, 100.0);
    double slope_err = 0;
    for (double a : rp.slopes_rad)
      slope_err = std::max(slope_err, std::abs(a - std::atan(0.1)));
    const auto climb = parse_gpx(synth_gpx(2051, 10.0, 2000.0, 2300.0));
    const CourseProfile cp = build_profile(climb, 200.0);
    const double gain_err = std::abs(cp.total_gain_m() - 2300.0);
    Outcome o;
    o.pass = slope_err < 1e-6 && gain_err <= 1.0 && cp.total_loss_m() <= 1.0;
    o.detail = fmt("ramp slope error %.1e rad, climb gain %.1f m (+/-1)",
                   slope_err, cp.total_gain_m());
    return o;
  });

  // 11 ------------------------------------------------------------------
  run(11, "uphill-course plausibility", [] {
    // synthesized ascent-style course: 20.5 km, +2300 m, finishing high;
    // compared against its listed record of 2:00:20
    const double record_s = 2.0 * 3600 + 20;
    const auto pts = parse_gpx(synth_gpx(2051, 10.0, 2000.0, 2300.0));
    CourseProfile course = build_profile(pts, 200.0);
    course.record_time_s = record_s;
    PredictOptions opt;
    opt.grid_size = 820;
    const RaceReport rep =
        predict_race(course, reference_runner(), canonical_params(), opt);
    Outcome o;
    if (!rep.converged) {
      o.detail = "solver did not converge";
      return o;
    }
    const double dev = rel_diff(rep.finish_time_s, record_s);
    o.pass = dev <= 0.15;
    o.detail = fmt("T = %s vs record %s: %.1f%% off (f_d %.3f, f_a %.3f)",
                   cli::format_hms(rep.finish_time_s).c_str(),
                   cli::format_hms(record_s).c_str(), 100 * dev, rep.f_d,
                   rep.f_a);
    return o;
  });

  // 12 ------------------------------------------------------------------
  run(12, "integrator order (Richardson)", [] {
    const ScaledParams sp = nondimensionalize(
        reference_runner(), 27.0, canonical_params().m_max, 5820.0);
    auto rhs = [&](double, const State& s, double f, double a) {
      return rhs_scaled(s, f, a, 0.5, sp);
    };
    auto control = [](double t) { return 0.6 + 0.2 * std::sin(2000.0 * t); };
    auto terminal = [&](int n) {
      const auto grid = uniform_grid(0.0, 2e-3, n);
      return integrate(rhs, State{0.2, 0, 1, 0}, control,
                       [](double) { return 0.0; }, grid,
                       Flavor::Nondimensional)
          .states.back();
    };
    const State a = terminal(256), b = terminal(512), c = terminal(1024);
    auto norm = [](const State& s1, const State& s2) {
      return std::sqrt(sq(s1.v - s2.v) + sq(s1.x - s2.x) + sq(s1.e - s2.e) +
                       sq(s1.q - s2.q));
    };
    const double ratio = norm(a, b) / norm(b, c);
    Outcome o;
    o.pass = ratio > 12.0 && ratio < 20.0;
    o.detail = fmt("Richardson ratio %.2f (expect ~16)", ratio);
    return o;
  });

  std::printf("================\n%d of 12 criteria passed\n", 12 - g_failures);
  return g_failures == 0 ? 0 : 1;
}
