#pragma once

/**
 * @file common.hpp
 * @brief Shared small types: unit flavor tag, errors, numeric helpers.
 */

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace trailrun {

/// Whether quantities are expressed in SI units or in the rescaled
/// (dimensionless) system. Mixing flavors in one operation is an error.
enum class Flavor { Dimensional, Nondimensional };

inline const char* to_string(Flavor f) {
  return f == Flavor::Dimensional ? "dimensional" : "nondimensional";
}

/// Thrown when an input violates a documented precondition.
class DomainError : public std::invalid_argument {
 public:
  explicit DomainError(const std::string& what) : std::invalid_argument(what) {}
};

/// Thrown when a file or byte stream cannot be parsed.
class ParseError : public std::runtime_error {
 public:
  explicit ParseError(const std::string& what) : std::runtime_error(what) {}
};

/// Thrown when a numerical procedure produces NaN/Inf or cannot proceed.
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

constexpr double kGravity = 9.81;  // m/s^2

inline bool is_finite(double x) { return std::isfinite(x); }

inline double sq(double x) { return x * x; }

/// Relative difference |a-b| / max(|a|,|b|,floor).
inline double rel_diff(double a, double b, double floor = 1e-300) {
  const double scale = std::max({std::abs(a), std::abs(b), floor});
  return std::abs(a - b) / scale;
}

}  // namespace trailrun
