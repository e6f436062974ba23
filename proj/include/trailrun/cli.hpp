#pragma once

/**
 * @file cli.hpp
 * @brief Command-line front end: ingest, predict, fit-nutrition, verify,
 *        flat-benchmark.
 *
 * Exit codes: 0 success (and certified, where applicable), 2 input error,
 * 3 solver failure, 4 verification failure.
 */

#include <cstdio>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "trailrun/io.hpp"
#include "trailrun/model.hpp"
#include "trailrun/nutrition.hpp"
#include "trailrun/ocp.hpp"
#include "trailrun/physiology.hpp"
#include "trailrun/pmp.hpp"
#include "trailrun/terrain.hpp"

namespace trailrun::cli {

constexpr int kOk = 0, kInputError = 2, kSolverFailure = 3, kNotCertified = 4;

inline std::string format_hms(double seconds) {
  const long total = long(seconds + 0.5);
  char buf[64];
  std::snprintf(buf, sizeof buf, "%ld:%02ld:%02ld", total / 3600,
                (total / 60) % 60, total % 60);
  return buf;
}

/// Accepts "h:mm:ss", "mm:ss" or plain seconds.
inline double parse_duration(const std::string& text) {
  std::vector<double> parts;
  std::string cur;
  for (char c : text + ":") {
    if (c == ':') {
      if (cur.empty()) throw DomainError("bad duration: " + text);
      parts.push_back(std::stod(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (parts.empty() || parts.size() > 3)
    throw DomainError("bad duration: " + text);
  double s = 0;
  for (double p : parts) s = s * 60 + p;
  return s;
}

inline CourseProfile load_course(const std::string& path, double segment_m,
                                 std::optional<double> record_s) {
  CourseProfile course;
  if (path.size() > 4 && path.substr(path.size() - 4) == ".gpx") {
    course = build_profile(parse_gpx(read_file(path)), segment_m);
  } else {
    nlohmann::json j = nlohmann::json::parse(read_file(path));
    course = j.get<CourseProfile>();
  }
  if (record_s) course.record_time_s = *record_s;
  return course;
}

inline std::vector<double> alpha_series(const Trajectory& tr,
                                        const CourseProfile& course,
                                        double d_scale) {
  std::vector<double> a(tr.size());
  for (std::size_t i = 0; i < tr.size(); ++i) {
    const double x_m = std::clamp(tr.states[i].x * d_scale, 0.0,
                                  course.total_distance_m);
    a[i] = slope_at(course, x_m);
  }
  return a;
}

// ---- subcommands -----------------------------------------------------------

inline int cmd_ingest(const std::string& gpx_path, double segment_m,
                      const std::string& out_path,
                      std::optional<double> record_s) {
  const CourseProfile course = load_course(gpx_path, segment_m, record_s);
  Json j = course_to_json(course);
  write_file(out_path, j.dump(2) + "\n");
  std::printf("course: %.1f m over %zu segments\n", course.total_distance_m,
              course.segments());
  std::printf("gain/loss: +%.0f/-%.0f m, mean altitude %.0f m\n",
              course.total_gain_m(), course.total_loss_m(),
              course.mean_altitude_m);
  if (course.record_time_s)
    std::printf("record: %s\n", format_hms(*course.record_time_s).c_str());
  std::printf("wrote %s\n", out_path.c_str());
  return kOk;
}

struct PredictCliOptions {
  std::string course_path, runner_path, config_path, out_dir = ".";
  double segment_m = 200.0;
  std::string record_text, estimate_text;
  int grid = 0;
  bool sigma_fixed_point = false;
  bool skip_verify = false;
  bool verbose = false;
};

inline int cmd_predict(const PredictCliOptions& o) {
  RunnerProfile runner;
  NutritionParams nutrition = canonical_params();
  PredictOptions popt;
  popt.grid_size = o.grid;
  popt.sigma_fixed_point = o.sigma_fixed_point;
  popt.verbose = o.verbose;
  if (!o.estimate_text.empty())
    popt.duration_estimate_s = parse_duration(o.estimate_text);

  // a config file supplies defaults; explicit flags stay authoritative
  if (!o.config_path.empty()) {
    const Json cfg = load_json(o.config_path);
    if (cfg.contains("runner")) runner = runner_from_json(cfg["runner"]);
    if (cfg.contains("nutrition"))
      nutrition = nutrition_from_json(cfg["nutrition"]);
    if (cfg.contains("solver")) {
      const Json& s = cfg["solver"];
      if (o.grid == 0) popt.grid_size = s.value("grid_size", 0);
      popt.eps_reg = s.value("eps_reg", popt.eps_reg);
      popt.eps_reg_final = s.value("eps_reg_final", popt.eps_reg_final);
      popt.max_iterations = s.value("max_iterations", popt.max_iterations);
      popt.tol.dynamics = s.value("tol_dynamics", popt.tol.dynamics);
      popt.tol.constraint = s.value("tol_constraint", popt.tol.constraint);
      popt.tol.stationarity = s.value("tol_stationarity", popt.tol.stationarity);
      if (!popt.sigma_fixed_point)
        popt.sigma_fixed_point = s.value("sigma_fixed_point", false);
    }
    if (popt.duration_estimate_s == 0 && cfg.contains("duration_estimate_s"))
      popt.duration_estimate_s = cfg["duration_estimate_s"].get<double>();
  }

  std::optional<double> record;
  if (!o.record_text.empty()) record = parse_duration(o.record_text);
  const CourseProfile course = load_course(o.course_path, o.segment_m, record);
  if (!o.runner_path.empty()) runner = runner_from_json(load_json(o.runner_path));
  for (const auto& w : runner.validate()) std::printf("warning: %s\n", w.c_str());

  const RaceReport rep = predict_race(course, runner, nutrition, popt);
  if (!rep.converged) {
    std::fprintf(stderr,
                 "solver did not converge: %s (kkt %.2e, defect %.2e)\n",
                 rep.solution.kkt_report.message.c_str(),
                 rep.solution.kkt_report.stationarity,
                 rep.solution.kkt_report.defect_inf);
    return kSolverFailure;
  }

  std::filesystem::create_directories(o.out_dir);
  const auto base = std::filesystem::path(o.out_dir);
  write_file((base / "report.json").string(),
             race_report_to_json(rep, runner, nutrition, course).dump(2) + "\n");
  {
    std::ostringstream csv;
    const auto alpha = alpha_series(rep.trajectory_dim, course, 1.0);
    char prov[256];
    std::snprintf(prov, sizeof prov,
                  "sigma=%.6f f_d=%.6f f_a=%.6f duration_basis_s=%.1f",
                  rep.sigma, rep.f_d, rep.f_a, rep.duration_basis_s);
    write_trajectory_csv(csv, rep.trajectory_dim, alpha, {prov});
    write_file((base / "trajectory.csv").string(), csv.str());
  }

  if (!o.skip_verify) {
    VerifyOptions vopt;
    vopt.cos_distance = true;
    const PmpReport pmp = certify_solution(rep.solution, course, runner,
                                           rep.sigma, nutrition.m_max, vopt);
    write_file((base / "pmp.json").string(), pmp_to_json(pmp).dump(2) + "\n");
    std::printf("pmp: %s (%zu violation%s)\n",
                pmp.certified ? "certified" : "not certified",
                pmp.violations.size(), pmp.violations.size() == 1 ? "" : "s");
  }

  std::printf("finish time: %s (%.1f s)\n", format_hms(rep.finish_time_s).c_str(),
              rep.finish_time_s);
  std::printf("sigma: %.3f m^2/s^3 (sigma_hat %.3f, f_d %.4f, f_a %.4f)\n",
              rep.sigma, rep.sigma_hat_value, rep.f_d, rep.f_a);
  std::printf("splits (x_end_m, clock, segment):\n");
  for (const auto& s : rep.splits)
    std::printf("  %9.1f  %s  %6.1f s\n", s.x_end_m,
                format_hms(s.time_s).c_str(), s.duration_s);
  return kOk;
}

inline int cmd_fit_nutrition(const std::string& csv_path,
                             const std::string& out_path) {
  const std::string text = read_file(csv_path);
  std::vector<RateSample> samples;
  std::istringstream ss(text);
  std::string line;
  while (std::getline(ss, line)) {
    if (line.empty() || line[0] == '#' || line.find_first_not_of(" \t\r") ==
                                              std::string::npos)
      continue;
    if (line.find("time") != std::string::npos) continue;  // header row
    const auto comma = line.find(',');
    if (comma == std::string::npos)
      throw ParseError("fit-nutrition: expected 'time_s,rate_g_per_s' rows");
    samples.push_back(
        {std::stod(line.substr(0, comma)), std::stod(line.substr(comma + 1))});
  }
  const FitResult fit = fit_logistic(samples);
  Json j = fit_to_json(fit);
  j["samples"] = samples.size();
  write_file(out_path, j.dump(2) + "\n");
  std::printf("fit: k=%.6e 1/s, N0=%.6e g/s, M=%.6e g/s, R^2=%.4f\n",
              fit.params.k, fit.params.n0, fit.params.m_max, fit.r_squared);
  std::printf("wrote %s\n", out_path.c_str());
  return kOk;
}

inline int cmd_verify(const std::string& traj_path,
                      const std::string& course_path,
                      const std::string& params_path,
                      const std::string& out_path, bool cos_distance) {
  const CourseProfile course = load_course(course_path, 200.0, {});
  const Json params = load_json(params_path);
  const RunnerProfile runner =
      params.contains("runner") ? runner_from_json(params["runner"])
                                : RunnerProfile{};
  if (!params.contains("sigma") || !params.contains("horizon_s"))
    throw ParseError("verify: params need 'sigma' and 'horizon_s'");
  const double sigma = params["sigma"].get<double>();
  const double horizon = params["horizon_s"].get<double>();
  const double m_ox = params.value("m_oxid_max", canonical_params().m_max);
  const ScaledParams sp = nondimensionalize(runner, sigma, m_ox, horizon);

  Trajectory tr = trajectory_from_json(load_json(traj_path));
  if (tr.flavor == Flavor::Dimensional) {
    Trajectory scaled;
    scaled.flavor = Flavor::Nondimensional;
    for (std::size_t i = 0; i < tr.size(); ++i) {
      scaled.times.push_back(tr.times[i] / sp.t_scale_s);
      scaled.states.push_back(to_scaled(tr.states[i], sp));
      scaled.controls.push_back(tr.controls[i] / sp.f_scale);
      if (!tr.n_rates.empty()) scaled.n_rates.push_back(tr.n_rates[i] / sp.n_scale);
    }
    tr = std::move(scaled);
  }
  VerifyOptions vopt;
  vopt.cos_distance = cos_distance || params.value("cos_distance", false);
  const PmpReport rep = verify(tr, course, sp, vopt);
  if (!out_path.empty()) write_file(out_path, pmp_to_json(rep).dump(2) + "\n");
  std::printf("%s: %zu violation%s\n",
              rep.certified ? "certified" : "not certified",
              rep.violations.size(), rep.violations.size() == 1 ? "" : "s");
  for (std::size_t i = 0; i < rep.violations.size() && i < 10; ++i)
    std::printf("  %-28s t=%.4f magnitude=%.3e\n",
                rep.violations[i].check.c_str(), rep.violations[i].t,
                rep.violations[i].magnitude);
  return rep.certified ? kOk : kNotCertified;
}

inline int cmd_flat_benchmark(int grid, const std::string& out_dir,
                              bool verbose) {
  RunnerProfile runner;  // reference parameter set
  const NutritionParams nutrition = canonical_params();
  const double sigma = sigma_hat(runner.vo2max), horizon_s = 5820.0;

  OcpProblem p;
  p.mode = OcpMode::MaxDistance;
  p.sp = nondimensionalize(runner, sigma, nutrition.m_max, horizon_s);
  p.nutrition = nutrition;
  p.course = constant_slope_course(2.0 * p.sp.d_scale, 0.0);
  p.grid_size = grid;
  p.verbose = verbose;

  const OcpSolution sol = solve(p);
  std::printf("flat benchmark, grid %d\n", grid);
  std::printf("  converged: %s, covered %.1f m in %s\n",
              sol.converged ? "yes" : "no", sol.objective,
              format_hms(horizon_s).c_str());
  std::printf("  defect %.2e, kkt %.2e, %d iterations\n",
              sol.kkt_report.defect_inf, sol.kkt_report.stationarity,
              sol.kkt_report.iterations);
  if (!sol.converged) return kSolverFailure;

  const PmpReport rep = verify(sol.trajectory, p.course, p.sp);
  std::printf("  pmp: %s; arcs:", rep.certified ? "certified" : "not certified");
  for (const auto& a : rep.arcs)
    std::printf(" %s[%.3f,%.3f]", to_string(a.kind), a.t_a, a.t_b);
  std::printf("\n  lambda_E min %.3e, lambda_Q max %.3e, eta min %.3e, "
              "GLC min %.3e\n",
              rep.lambda_e_min, rep.lambda_q_max, rep.eta_min, rep.glc_min);

  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    const auto base = std::filesystem::path(out_dir);
    write_file((base / "pmp.json").string(), pmp_to_json(rep).dump(2) + "\n");
    std::ostringstream csv;
    write_trajectory_csv(csv, sol.trajectory, rep.alpha,
                         {"flat benchmark, scaled units"});
    write_file((base / "trajectory.csv").string(), csv.str());
    std::printf("  wrote %s\n", out_dir.c_str());
  }
  return rep.certified ? kOk : kNotCertified;
}

// ---- entry point -----------------------------------------------------------

inline int run(int argc, const char* const* argv) {
  CLI::App app{"trail-running race model: minimum-time pacing over real "
               "elevation profiles, with optimality certification"};
  app.require_subcommand(1);

  // ingest
  auto* ingest = app.add_subcommand("ingest", "GPX -> slope-profile JSON");
  std::string gpx_path, out_path = "course.json", record_text;
  double segment_m = 200.0;
  ingest->add_option("gpx", gpx_path, "GPX 1.1 track file")->required();
  ingest->add_option("-s,--segment-m", segment_m,
                     "slope averaging length [100, 250] m");
  ingest->add_option("-o,--out", out_path, "output profile JSON");
  ingest->add_option("--record", record_text, "route record (h:mm:ss)");

  // predict
  auto* predict = app.add_subcommand("predict", "minimum-time race prediction");
  PredictCliOptions po;
  predict->add_option("-c,--course", po.course_path, "course (.gpx or profile JSON)")
      ->required();
  predict->add_option("-r,--runner", po.runner_path, "runner profile JSON");
  predict->add_option("--config", po.config_path,
                      "config JSON: runner, nutrition, solver options");
  predict->add_option("-o,--outdir", po.out_dir, "output directory");
  predict->add_option("-s,--segment-m", po.segment_m, "GPX averaging length");
  predict->add_option("--record", po.record_text, "route record (h:mm:ss)");
  predict->add_option("--duration-estimate", po.estimate_text,
                      "duration estimate when no record exists (h:mm:ss)");
  predict->add_option("-g,--grid", po.grid, "collocation intervals (0 = auto)");
  predict->add_flag("--sigma-fixed-point", po.sigma_fixed_point,
                    "re-solve sigma against the predicted duration");
  predict->add_flag("--skip-verify", po.skip_verify, "skip certification");
  predict->add_flag("-v,--verbose", po.verbose, "solver iteration log");

  // fit-nutrition
  auto* fit = app.add_subcommand("fit-nutrition",
                                 "fit the oxidation model to rate samples");
  std::string fit_csv, fit_out = "nutrition_fit.json";
  fit->add_option("csv", fit_csv, "CSV rows: time_s,rate_g_per_s")->required();
  fit->add_option("-o,--out", fit_out, "output JSON");

  // verify
  auto* ver = app.add_subcommand("verify", "certify a trajectory");
  std::string v_traj, v_course, v_params, v_out;
  bool v_cos = false;
  ver->add_option("-t,--trajectory", v_traj, "trajectory JSON")->required();
  ver->add_option("-c,--course", v_course, "course (.gpx or profile JSON)")
      ->required();
  ver->add_option("-p,--params", v_params,
                  "params JSON: runner, sigma, horizon_s, m_oxid_max")
      ->required();
  ver->add_option("-o,--out", v_out, "report JSON");
  ver->add_flag("--cos-distance", v_cos, "trajectory used dx/dt = v cos(a)");

  // flat-benchmark
  auto* bench = app.add_subcommand("flat-benchmark",
                                   "reference flat-route solve + certificate");
  int b_grid = 400;
  std::string b_out;
  bool b_verbose = false;
  bench->add_option("-g,--grid", b_grid, "collocation intervals");
  bench->add_option("-o,--outdir", b_out, "write trajectory and report here");
  bench->add_flag("-v,--verbose", b_verbose, "solver iteration log");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kInputError;
  }

  try {
    if (*ingest) {
      std::optional<double> rec;
      if (!record_text.empty()) rec = parse_duration(record_text);
      return cmd_ingest(gpx_path, segment_m, out_path, rec);
    }
    if (*predict) return cmd_predict(po);
    if (*fit) return cmd_fit_nutrition(fit_csv, fit_out);
    if (*ver) return cmd_verify(v_traj, v_course, v_params, v_out, v_cos);
    if (*bench) return cmd_flat_benchmark(b_grid, b_out, b_verbose);
  } catch (const ParseError& e) {
    std::fprintf(stderr, "input error: %s\n", e.what());
    return kInputError;
  } catch (const DomainError& e) {
    std::fprintf(stderr, "input error: %s\n", e.what());
    return kInputError;
  } catch (const NumericError& e) {
    std::fprintf(stderr, "numerical failure: %s\n", e.what());
    return kSolverFailure;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kInputError;
  }
  return kInputError;
}

}  // namespace trailrun::cli
