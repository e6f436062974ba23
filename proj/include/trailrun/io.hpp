#pragma once

/**
 * @file io.hpp
 * @brief Serialization: trajectory CSV/JSON, parameter and report JSON.
 *
 * Output is deterministic — ordered keys, fixed float formatting, no
 * timestamps — so identical inputs produce byte-identical files.
 */

#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "trailrun/model.hpp"
#include "trailrun/nutrition.hpp"
#include "trailrun/ocp.hpp"
#include "trailrun/pmp.hpp"
#include "trailrun/terrain.hpp"

namespace trailrun {

using Json = nlohmann::ordered_json;

namespace iodetail {
inline std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}
}  // namespace iodetail

// ---- parameter objects ----------------------------------------------------

inline Json runner_to_json(const RunnerProfile& p) {
  return Json{{"mass_kg", p.mass_kg},     {"vo2max", p.vo2max},
              {"f_max", p.f_max},         {"tau_s", p.tau_s},
              {"e0", p.e0},               {"k_fatigue", p.k_fatigue},
              {"c_drag", p.c_drag},       {"zeta", p.zeta}};
}

inline RunnerProfile runner_from_json(const Json& j) {
  RunnerProfile p;
  p.mass_kg = j.value("mass_kg", p.mass_kg);
  p.vo2max = j.value("vo2max", p.vo2max);
  p.f_max = j.value("f_max", p.f_max);
  p.tau_s = j.value("tau_s", p.tau_s);
  p.e0 = j.value("e0", p.e0);
  p.k_fatigue = j.value("k_fatigue", p.k_fatigue);
  p.c_drag = j.value("c_drag", p.c_drag);
  p.zeta = j.value("zeta", p.zeta);
  p.validate();
  return p;
}

inline Json nutrition_to_json(const NutritionParams& p) {
  return Json{{"k", p.k},
              {"n0_g_per_s", p.n0},
              {"m_max_g_per_s", p.m_max},
              {"time_unit", p.time_unit}};
}

inline NutritionParams nutrition_from_json(const Json& j) {
  NutritionParams p = canonical_params();
  p.k = j.value("k", p.k);
  p.n0 = j.value("n0_g_per_s", p.n0);
  p.m_max = j.value("m_max_g_per_s", p.m_max);
  p.time_unit = j.value("time_unit", p.time_unit);
  p.validate();
  return p;
}

inline Json scaled_params_to_json(const ScaledParams& sp) {
  return Json{{"iota", sp.iota},       {"beta", sp.beta},
              {"gamma", sp.gamma},     {"kappa", sp.kappa},
              {"chi", sp.chi},         {"phi", sp.phi},
              {"omega", sp.omega},     {"t_scale_s", sp.t_scale_s},
              {"v_scale", sp.v_scale}, {"d_scale", sp.d_scale},
              {"q_scale", sp.q_scale}, {"e_scale", sp.e_scale},
              {"f_scale", sp.f_scale}, {"n_scale", sp.n_scale}};
}

inline Json course_to_json(const CourseProfile& c) {
  nlohmann::json base = c;          // reuse the terrain serializer
  return Json::parse(base.dump());  // normalized key order
}

// ---- trajectories ----------------------------------------------------------

inline Json trajectory_to_json(const Trajectory& tr) {
  Json j;
  j["flavor"] = to_string(tr.flavor);
  j["t"] = tr.times;
  Json v = Json::array(), x = Json::array(), e = Json::array(),
       q = Json::array();
  for (const auto& s : tr.states) {
    v.push_back(s.v);
    x.push_back(s.x);
    e.push_back(s.e);
    q.push_back(s.q);
  }
  j["v"] = std::move(v);
  j["x"] = std::move(x);
  j["E"] = std::move(e);
  j["Q"] = std::move(q);
  j["f"] = tr.controls;
  if (!tr.n_rates.empty()) j["N"] = tr.n_rates;
  return j;
}

inline Trajectory trajectory_from_json(const Json& j) {
  Trajectory tr;
  const std::string flavor = j.at("flavor").get<std::string>();
  if (flavor == "dimensional") tr.flavor = Flavor::Dimensional;
  else if (flavor == "nondimensional") tr.flavor = Flavor::Nondimensional;
  else throw ParseError("trajectory: unknown flavor '" + flavor + "'");
  j.at("t").get_to(tr.times);
  std::vector<double> v, x, e, q;
  j.at("v").get_to(v);
  j.at("x").get_to(x);
  j.at("E").get_to(e);
  j.at("Q").get_to(q);
  if (v.size() != tr.times.size() || x.size() != v.size() ||
      e.size() != v.size() || q.size() != v.size())
    throw ParseError("trajectory: mismatched series lengths");
  tr.states.resize(v.size());
  for (std::size_t i = 0; i < v.size(); ++i)
    tr.states[i] = State{v[i], x[i], e[i], q[i]};
  j.at("f").get_to(tr.controls);
  if (tr.controls.size() != tr.times.size())
    throw ParseError("trajectory: mismatched control length");
  if (j.contains("N")) j.at("N").get_to(tr.n_rates);
  return tr;
}

/**
 * Plot-ready CSV: columns t, v, x, E, Q, f, N, alpha. Metadata rides in
 * leading comment lines (flavor plus any caller-provided provenance).
 */
inline void write_trajectory_csv(std::ostream& os, const Trajectory& tr,
                                 const std::vector<double>& alpha,
                                 const std::vector<std::string>& meta = {}) {
  os << "# flavor=" << to_string(tr.flavor) << "\n";
  for (const auto& m : meta) os << "# " << m << "\n";
  os << "t,v,x,E,Q,f,N,alpha\n";
  for (std::size_t i = 0; i < tr.size(); ++i) {
    const double n = tr.n_rates.empty() ? 0.0 : tr.n_rates[i];
    const double a = i < alpha.size() ? alpha[i] : 0.0;
    os << iodetail::fmt(tr.times[i]) << ',' << iodetail::fmt(tr.states[i].v)
       << ',' << iodetail::fmt(tr.states[i].x) << ','
       << iodetail::fmt(tr.states[i].e) << ',' << iodetail::fmt(tr.states[i].q)
       << ',' << iodetail::fmt(tr.controls[i]) << ',' << iodetail::fmt(n)
       << ',' << iodetail::fmt(a) << "\n";
  }
}

// ---- reports ----------------------------------------------------------------

inline Json kkt_to_json(const KktReport& k) {
  return Json{{"stationarity", k.stationarity},
              {"feasibility", k.feasibility},
              {"complementarity", k.complementarity},
              {"defect_inf", k.defect_inf},
              {"bound_violation", k.bound_violation},
              {"endpoint_gap", k.endpoint_gap},
              {"iterations", k.iterations},
              {"mu_final", k.mu_final},
              {"message", k.message}};
}

inline Json pmp_to_json(const PmpReport& r) {
  Json arcs = Json::array();
  for (const auto& a : r.arcs)
    arcs.push_back(Json{{"kind", to_string(a.kind)},
                        {"t_a", a.t_a},
                        {"t_b", a.t_b},
                        {"first_node", a.first_node},
                        {"last_node", a.last_node},
                        {"mean_psi", a.mean_psi},
                        {"mean_eta", a.mean_eta}});
  Json viol = Json::array();
  for (const auto& v : r.violations)
    viol.push_back(Json{{"check", v.check}, {"t", v.t}, {"magnitude", v.magnitude}});
  Json j{{"certified", r.certified},
         {"arcs", std::move(arcs)},
         {"violations", std::move(viol)},
         {"lambda_e_min", r.lambda_e_min},
         {"lambda_q_max", r.lambda_q_max},
         {"eta_min", r.eta_min},
         {"glc_min", r.glc_min},
         {"psi_end", r.psi_end},
         {"psi_max_abs", r.psi_max_abs},
         {"f_int_dev_max", r.f_int_dev_max},
         {"f_b_dev_max", r.f_b_dev_max},
         {"hamiltonian_rel_spread", r.hamiltonian_rel_spread},
         {"terminal_energy_multiplier", r.terminal_energy_multiplier},
         {"contact_atoms", r.contact_atoms.size()},
         {"inter_pass_delta", r.inter_pass_delta}};
  if (r.maxforce_uphill_threshold_rad)
    j["maxforce_uphill_threshold_rad"] = *r.maxforce_uphill_threshold_rad;
  return j;
}

inline Json race_report_to_json(const RaceReport& r, const RunnerProfile& runner,
                                const NutritionParams& nutrition,
                                const CourseProfile& course) {
  Json splits = Json::array();
  for (const auto& s : r.splits)
    splits.push_back(Json{{"x_end_m", s.x_end_m},
                          {"time_s", s.time_s},
                          {"duration_s", s.duration_s},
                          {"slope_rad", s.slope_rad}});
  return Json{{"finish_time_s", r.finish_time_s},
              {"converged", r.converged},
              {"provenance",
               Json{{"sigma", r.sigma},
                    {"sigma_hat", r.sigma_hat_value},
                    {"f_d", r.f_d},
                    {"f_a", r.f_a},
                    {"duration_basis_s", r.duration_basis_s},
                    {"scaled_constants", scaled_params_to_json(r.sp)}}},
              {"config",
               Json{{"runner", runner_to_json(runner)},
                    {"nutrition", nutrition_to_json(nutrition)},
                    {"course",
                     Json{{"total_distance_m", course.total_distance_m},
                          {"mean_altitude_m", course.mean_altitude_m},
                          {"segments", course.segments()},
                          {"gain_m", course.total_gain_m()},
                          {"loss_m", course.total_loss_m()}}}}},
              {"kkt", kkt_to_json(r.solution.kkt_report)},
              {"splits", std::move(splits)}};
}

inline Json fit_to_json(const FitResult& f) {
  return Json{{"params", nutrition_to_json(f.params)},
              {"r_squared", f.r_squared},
              {"sse", f.sse},
              {"iterations", f.iterations}};
}

// ---- files ------------------------------------------------------------------

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ParseError("cannot write file: " + path);
  out << content;
}

inline Json load_json(const std::string& path) {
  try {
    return Json::parse(read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("bad JSON in " + path + ": " + e.what());
  }
}

}  // namespace trailrun
