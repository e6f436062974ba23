#pragma once

/**
 * @file terrain.hpp
 * @brief GPX ingestion and the piecewise-constant slope profile alpha(x)
 *        over horizontal distance.
 */

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "trailrun/common.hpp"

namespace trailrun {

constexpr double kEarthRadiusM = 6371000.0;

struct TrackPoint {
  double lat = 0;  // degrees
  double lon = 0;  // degrees
  double ele = 0;  // metres
  std::optional<std::string> timestamp;
};

/// Piecewise-constant slope vs horizontal distance. Segments are
/// [x_i, x_{i+1}) with angle slopes_rad[i]; the last segment is closed.
struct CourseProfile {
  std::vector<double> boundaries_m;          // n+1 strictly increasing, starts at 0
  std::vector<double> slopes_rad;            // n
  std::vector<double> segment_altitudes_m;   // n
  double total_distance_m = 0;
  double mean_altitude_m = 0;
  std::optional<double> record_time_s;

  std::size_t segments() const { return slopes_rad.size(); }

  void validate() const {
    if (boundaries_m.size() < 2 || slopes_rad.size() + 1 != boundaries_m.size() ||
        segment_altitudes_m.size() != slopes_rad.size())
      throw DomainError("CourseProfile: inconsistent field lengths");
    if (boundaries_m.front() != 0)
      throw DomainError("CourseProfile: boundaries must start at 0");
    for (std::size_t i = 1; i < boundaries_m.size(); ++i)
      if (!(boundaries_m[i] > boundaries_m[i - 1]))
        throw DomainError("CourseProfile: boundaries not strictly increasing");
    for (double a : slopes_rad)
      if (!(std::abs(a) < 1.5707963267948966))
        throw DomainError("CourseProfile: slope angle out of (-pi/2, pi/2)");
    if (rel_diff(boundaries_m.back(), total_distance_m) > 1e-9)
      throw DomainError("CourseProfile: total distance mismatch");
  }

  double total_gain_m() const {
    double g = 0;
    for (std::size_t i = 0; i < slopes_rad.size(); ++i) {
      const double de = std::tan(slopes_rad[i]) * (boundaries_m[i + 1] - boundaries_m[i]);
      if (de > 0) g += de;
    }
    return g;
  }

  double total_loss_m() const {
    double l = 0;
    for (std::size_t i = 0; i < slopes_rad.size(); ++i) {
      const double de = std::tan(slopes_rad[i]) * (boundaries_m[i + 1] - boundaries_m[i]);
      if (de < 0) l -= de;
    }
    return l;
  }
};

/// Great-circle (haversine) distance, elevation ignored.
inline double horizontal_distance(const TrackPoint& a, const TrackPoint& b) {
  const double deg = 0.017453292519943295;
  const double phi1 = a.lat * deg, phi2 = b.lat * deg;
  const double dphi = (b.lat - a.lat) * deg, dlam = (b.lon - a.lon) * deg;
  const double h = sq(std::sin(dphi / 2)) +
                   std::cos(phi1) * std::cos(phi2) * sq(std::sin(dlam / 2));
  return 2.0 * kEarthRadiusM * std::asin(std::min(1.0, std::sqrt(h)));
}

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

/// Extracts attr="value" from an opening tag body.
inline std::optional<std::string> tag_attribute(std::string_view tag,
                                                std::string_view name) {
  std::size_t pos = 0;
  while ((pos = tag.find(name, pos)) != std::string_view::npos) {
    std::size_t p = pos + name.size();
    while (p < tag.size() && std::isspace(static_cast<unsigned char>(tag[p]))) ++p;
    if (p >= tag.size() || tag[p] != '=') { pos += name.size(); continue; }
    ++p;
    while (p < tag.size() && std::isspace(static_cast<unsigned char>(tag[p]))) ++p;
    if (p >= tag.size() || (tag[p] != '"' && tag[p] != '\'')) return std::nullopt;
    const char quote = tag[p++];
    const std::size_t end = tag.find(quote, p);
    if (end == std::string_view::npos) return std::nullopt;
    return std::string(tag.substr(p, end - p));
  }
  return std::nullopt;
}

inline double parse_double(std::string_view s, const char* what) {
  try {
    std::size_t used = 0;
    const std::string str{trim(s)};
    const double v = std::stod(str, &used);
    if (used != str.size() || !is_finite(v))
      throw ParseError(std::string("gpx: bad numeric value for ") + what);
    return v;
  } catch (const ParseError&) {
    throw;
  } catch (const std::exception&) {
    throw ParseError(std::string("gpx: bad numeric value for ") + what);
  }
}

/// First <name>text</name> inside body, if present.
inline std::optional<std::string> child_text(std::string_view body,
                                             std::string_view name) {
  const std::string open = "<" + std::string(name);
  std::size_t p = body.find(open);
  if (p == std::string_view::npos) return std::nullopt;
  const std::size_t open_end = body.find('>', p);
  if (open_end == std::string_view::npos)
    throw ParseError("gpx: malformed XML, unterminated <" + std::string(name) + ">");
  const std::string close = "</" + std::string(name) + ">";
  const std::size_t q = body.find(close, open_end);
  if (q == std::string_view::npos)
    throw ParseError("gpx: malformed XML, missing " + close);
  return std::string(trim(body.substr(open_end + 1, q - open_end - 1)));
}

}  // namespace detail

/**
 * Reads track points from a GPX document. Consecutive points with identical
 * coordinates are collapsed (the first is kept).
 *
 * @throws ParseError naming the defect: malformed XML, missing elevation,
 *         fewer than 2 track points.
 */
inline std::vector<TrackPoint> parse_gpx(std::string_view document) {
  std::vector<TrackPoint> points;
  std::size_t pos = 0;
  while (true) {
    const std::size_t open = document.find("<trkpt", pos);
    if (open == std::string_view::npos) break;
    const std::size_t open_end = document.find('>', open);
    if (open_end == std::string_view::npos)
      throw ParseError("gpx: malformed XML, unterminated <trkpt> tag");
    const std::string_view tag = document.substr(open, open_end - open);
    const std::size_t close = document.find("</trkpt>", open_end);
    if (close == std::string_view::npos)
      throw ParseError("gpx: malformed XML, missing </trkpt>");
    const std::string_view body = document.substr(open_end + 1, close - open_end - 1);

    TrackPoint pt;
    const auto lat = detail::tag_attribute(tag, "lat");
    const auto lon = detail::tag_attribute(tag, "lon");
    if (!lat || !lon)
      throw ParseError("gpx: <trkpt> missing lat/lon attribute");
    pt.lat = detail::parse_double(*lat, "lat");
    pt.lon = detail::parse_double(*lon, "lon");
    if (pt.lat < -90 || pt.lat > 90)
      throw ParseError("gpx: latitude out of [-90, 90]");
    if (pt.lon < -180 || pt.lon > 180)
      throw ParseError("gpx: longitude out of [-180, 180]");
    const auto ele = detail::child_text(body, "ele");
    if (!ele) throw ParseError("gpx: missing elevation (<ele>) in <trkpt>");
    pt.ele = detail::parse_double(*ele, "ele");
    if (auto ts = detail::child_text(body, "time")) pt.timestamp = *ts;

    if (points.empty() || points.back().lat != pt.lat ||
        points.back().lon != pt.lon)
      points.push_back(std::move(pt));
    pos = close + 8;
  }
  if (points.size() < 2)
    throw ParseError("gpx: fewer than 2 track points with elevation");
  return points;
}

namespace detail {

/// Centered median filter, window 5, ends replicate-padded so monotone
/// tracks pass through unchanged.
inline std::vector<double> median_filter5(const std::vector<double>& v) {
  std::vector<double> out(v.size());
  const auto n = std::ptrdiff_t(v.size());
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    double w[5];
    for (std::ptrdiff_t o = -2; o <= 2; ++o)
      w[o + 2] = v[std::size_t(std::clamp(i + o, std::ptrdiff_t(0), n - 1))];
    std::nth_element(w, w + 2, w + 5);
    out[std::size_t(i)] = w[2];
  }
  return out;
}

}  // namespace detail

/**
 * Builds the slope profile: cumulative haversine distance, median-filtered
 * elevation (window 5), segments of the target length (the final remainder
 * may be shorter), per-segment slope atan(d ele / d x) and mean altitude.
 *
 * @param target_segment_m averaging length, within [100, 250] m
 */
inline CourseProfile build_profile(const std::vector<TrackPoint>& points,
                                   double target_segment_m = 200.0) {
  if (!(target_segment_m >= 100.0 && target_segment_m <= 250.0))
    throw DomainError("build_profile: segment length must be in [100, 250] m");
  if (points.size() < 2)
    throw DomainError("build_profile: need at least 2 points");

  std::vector<double> s(points.size());
  s[0] = 0;
  for (std::size_t i = 1; i < points.size(); ++i)
    s[i] = s[i - 1] + horizontal_distance(points[i - 1], points[i]);
  const double total = s.back();
  if (!(total > target_segment_m))
    throw DomainError("build_profile: track shorter than one segment");

  std::vector<double> ele(points.size());
  for (std::size_t i = 0; i < points.size(); ++i) ele[i] = points[i].ele;
  ele = detail::median_filter5(ele);

  // piecewise-linear elevation lookup over s (s may have repeated values if
  // a point moved in elevation only; those were collapsed upstream)
  auto ele_at = [&](double x) {
    const auto it = std::upper_bound(s.begin(), s.end(), x);
    if (it == s.begin()) return ele.front();
    if (it == s.end()) return ele.back();
    const std::size_t j = std::size_t(it - s.begin());
    const double w = (x - s[j - 1]) / (s[j] - s[j - 1]);
    return ele[j - 1] + w * (ele[j] - ele[j - 1]);
  };

  CourseProfile prof;
  const int full = int(total / target_segment_m);
  prof.boundaries_m.push_back(0);
  for (int i = 1; i <= full; ++i) prof.boundaries_m.push_back(i * target_segment_m);
  if (total - prof.boundaries_m.back() > 1e-6) prof.boundaries_m.push_back(total);
  else prof.boundaries_m.back() = total;
  prof.total_distance_m = total;

  double alt_sum = 0;
  for (std::size_t i = 0; i + 1 < prof.boundaries_m.size(); ++i) {
    const double x0 = prof.boundaries_m[i], x1 = prof.boundaries_m[i + 1];
    const double de = ele_at(x1) - ele_at(x0);
    prof.slopes_rad.push_back(std::atan(de / (x1 - x0)));

    // average the piecewise-linear elevation over the segment
    double area = 0, prev_x = x0, prev_e = ele_at(x0);
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (s[j] <= x0 || s[j] >= x1) continue;
      area += 0.5 * (prev_e + ele[j]) * (s[j] - prev_x);
      prev_x = s[j];
      prev_e = ele[j];
    }
    area += 0.5 * (prev_e + ele_at(x1)) * (x1 - prev_x);
    const double mean_ele = area / (x1 - x0);
    prof.segment_altitudes_m.push_back(mean_ele);
    alt_sum += mean_ele;
  }
  prof.mean_altitude_m = alt_sum / double(prof.segments());
  prof.validate();
  return prof;
}

/// Slope of the segment containing x; right-continuous at boundaries,
/// x = D returns the last segment's angle.
inline double slope_at(const CourseProfile& prof, double x) {
  if (x < 0 || x > prof.total_distance_m * (1 + 1e-12))
    throw DomainError("slope_at: x outside [0, D]");
  // first boundary strictly greater than x => containing segment
  const auto it =
      std::upper_bound(prof.boundaries_m.begin(), prof.boundaries_m.end(), x);
  std::size_t idx = it == prof.boundaries_m.end()
                        ? prof.segments() - 1
                        : std::size_t(it - prof.boundaries_m.begin()) - 1;
  if (idx >= prof.segments()) idx = prof.segments() - 1;
  return prof.slopes_rad[idx];
}

inline void to_json(nlohmann::json& j, const CourseProfile& p) {
  j = nlohmann::json{{"boundaries_m", p.boundaries_m},
                     {"slopes_rad", p.slopes_rad},
                     {"segment_altitudes_m", p.segment_altitudes_m},
                     {"total_distance_m", p.total_distance_m},
                     {"mean_altitude_m", p.mean_altitude_m}};
  if (p.record_time_s) j["record_time_s"] = *p.record_time_s;
}

inline void from_json(const nlohmann::json& j, CourseProfile& p) {
  j.at("boundaries_m").get_to(p.boundaries_m);
  j.at("slopes_rad").get_to(p.slopes_rad);
  j.at("segment_altitudes_m").get_to(p.segment_altitudes_m);
  j.at("total_distance_m").get_to(p.total_distance_m);
  j.at("mean_altitude_m").get_to(p.mean_altitude_m);
  if (j.contains("record_time_s") && !j["record_time_s"].is_null())
    p.record_time_s = j["record_time_s"].get<double>();
  p.validate();
}

/// Synthetic course helper: constant-slope profile of the given horizontal
/// length. Used by tests and the flat benchmark.
inline CourseProfile constant_slope_course(double distance_m, double slope_rad,
                                           double altitude_m = 0.0,
                                           double segment_m = 200.0) {
  CourseProfile prof;
  const int n = std::max(1, int(distance_m / segment_m));
  for (int i = 0; i <= n; ++i)
    prof.boundaries_m.push_back(distance_m * double(i) / n);
  prof.slopes_rad.assign(n, slope_rad);
  prof.segment_altitudes_m.assign(n, altitude_m);
  prof.total_distance_m = distance_m;
  prof.mean_altitude_m = altitude_m;
  prof.validate();
  return prof;
}

}  // namespace trailrun
