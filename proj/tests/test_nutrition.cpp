#include <doctest.h>

#include <cmath>

#include "test_helpers.hpp"
#include "trailrun/nutrition.hpp"

using namespace trailrun;

namespace {
NutritionParams sample_params() {
  NutritionParams p;
  p.k = 8.0e-4;
  p.n0 = 2.2e-3;
  p.m_max = 2.3e-2;
  return p;
}
}  // namespace

TEST_CASE("oxidation rate: endpoints and asymptote") {
  const NutritionParams p = sample_params();
  CHECK(oxidation_rate(0.0, p) == doctest::Approx(p.n0).epsilon(1e-14));
  CHECK(std::abs(oxidation_rate(50.0 / p.k, p) - p.m_max) < 1e-6 * p.m_max);
  CHECK_THROWS_AS(oxidation_rate(-1.0, p), DomainError);

  NutritionParams bad = p;
  bad.n0 = p.m_max;  // needs n0 < m_max
  CHECK_THROWS_AS(oxidation_rate(0.0, bad), DomainError);
}

TEST_CASE("oxidation rate: monotone and satisfies its own ODE") {
  const NutritionParams p = sample_params();
  double prev = 0.0;
  for (int i = 0; i <= 400; ++i) {
    const double t = i * 25.0;
    const double n = oxidation_rate(t, p);
    CHECK(n > prev);
    prev = n;
    // five-point derivative against k N (1 - N/M)
    const double d = 40.0;
    const double stencil =
        (-oxidation_rate(t + 2 * d, p) + 8 * oxidation_rate(t + d, p) -
         8 * oxidation_rate(std::max(0.0, t - d), p) +
         oxidation_rate(std::max(0.0, t - 2 * d), p)) /
        (12 * d);
    if (t >= 2 * d) {
      const double ode = p.k * n * (1.0 - n / p.m_max);
      CHECK(std::abs(stencil - ode) < 1e-10);
    }
  }
}

TEST_CASE("rate stays below M over random parameter draws") {
  testutil::Rng rng(1234);
  for (int draw = 0; draw < 1000; ++draw) {
    NutritionParams p;
    p.m_max = rng.uniform(1e-3, 5e-2);
    p.n0 = p.m_max * rng.uniform(0.01, 0.95);
    p.k = std::pow(10.0, rng.uniform(-5.0, -1.0));
    const double t1 = rng.uniform(0.0, 3.0 / p.k);
    const double t2 = t1 + rng.uniform(1.0, 1.0 / p.k);
    const double n1 = oxidation_rate(t1, p), n2 = oxidation_rate(t2, p);
    CHECK(n1 < p.m_max);
    CHECK(n2 <= p.m_max * (1 + 1e-12));
    CHECK(n2 > n1);
  }
}

TEST_CASE("cumulative oxidation: analytic equals quadrature") {
  const NutritionParams p = sample_params();
  CHECK(cumulative_oxidized(0.0, p) == doctest::Approx(0.0));
  for (double t : {600.0, 3600.0, 7200.0, 14400.0}) {
    const double analytic = cumulative_oxidized(t, p);
    const double quad = testutil::adaptive_simpson(
        [&](double s) { return oxidation_rate(s, p); }, 0.0, t, 1e-12);
    CHECK(rel_diff(analytic, quad) < 1e-8);
  }
}

TEST_CASE("cumulative oxidation: stable for large kt") {
  NutritionParams p = sample_params();
  p.k = 1.0;  // kt up to 50
  const double t = 50.0;
  const double analytic = cumulative_oxidized(t, p);
  CHECK(is_finite(analytic));
  const double quad = testutil::adaptive_simpson(
      [&](double s) { return oxidation_rate(s, p); }, 0.0, t, 1e-14);
  CHECK(rel_diff(analytic, quad) < 1e-8);
  // beyond any overflow threshold for exp(kt)
  CHECK(is_finite(cumulative_oxidized(5000.0, p)));
}

TEST_CASE("canonical parameters reproduce the calibration table") {
  const NutritionParams p = canonical_params();
  for (const auto& [hours, grams] : default_calibration_data()) {
    const double c = cumulative_oxidized(hours * 3600.0, p);
    CHECK(rel_diff(c, grams) < 0.02);
  }
  // late-time increment approaches M per unit time
  const double inc = cumulative_oxidized(4 * 3600.0, p) -
                     cumulative_oxidized(3 * 3600.0, p);
  CHECK(rel_diff(inc, p.m_max * 3600.0) < 0.02);
  CHECK(rel_diff(inc, 83.381) < 0.02);
  CHECK(rel_diff(cumulative_oxidized(3600.0, p), 26.1648) < 0.02);
}

TEST_CASE("calibration pipeline lands on the frozen canonical values") {
  const FitResult fit = calibrate_default_params();
  const NutritionParams p = canonical_params();
  CHECK(rel_diff(fit.params.k, p.k) < 1e-4);
  CHECK(rel_diff(fit.params.n0, p.n0) < 1e-4);
  CHECK(rel_diff(fit.params.m_max, p.m_max) < 1e-4);
}

TEST_CASE("fit: noiseless round-trip recovers parameters") {
  const NutritionParams truth = sample_params();
  std::vector<RateSample> samples;
  for (int i = 0; i < 14; ++i) {
    const double t = 300.0 + i * 1000.0;
    samples.push_back({t, oxidation_rate(t, truth)});
  }
  const FitResult fit = fit_logistic(samples);
  CHECK(rel_diff(fit.params.k, truth.k) < 1e-6);
  CHECK(rel_diff(fit.params.n0, truth.n0) < 1e-6);
  CHECK(rel_diff(fit.params.m_max, truth.m_max) < 1e-6);
  CHECK(fit.r_squared > 1.0 - 1e-10);
}

TEST_CASE("fit: 5% noise still gives a strong fit") {
  const NutritionParams truth = sample_params();
  testutil::Rng rng(99);
  std::vector<RateSample> samples;
  for (int i = 0; i < 20; ++i) {
    const double t = 200.0 + i * 700.0;
    const double noise = 1.0 + 0.05 * (2.0 * rng.uniform() - 1.0);
    samples.push_back({t, oxidation_rate(t, truth) * noise});
  }
  const FitResult fit = fit_logistic(samples);
  CHECK(fit.r_squared > 0.9);
  CHECK(fit.r_squared < 0.9999);  // the noise must leave a residual
  CHECK(rel_diff(fit.params.m_max, truth.m_max) < 0.15);
}

TEST_CASE("fit: residual history is non-increasing") {
  const NutritionParams truth = sample_params();
  testutil::Rng rng(7);
  std::vector<RateSample> samples;
  for (int i = 0; i < 12; ++i) {
    const double t = i * 1200.0;
    samples.push_back({t, oxidation_rate(t, truth) * (1 + 0.03 * rng.uniform())});
  }
  const FitResult fit = fit_logistic(samples);
  for (std::size_t i = 1; i < fit.sse_history.size(); ++i)
    CHECK(fit.sse_history[i] <= fit.sse_history[i - 1] * (1 + 1e-12));
}

TEST_CASE("fit: error paths") {
  CHECK_THROWS_AS(fit_logistic({{0, 1e-3}, {10, 2e-3}}), DomainError);
  std::vector<RateSample> flat = {{0, 5e-3}, {100, 5e-3}, {200, 5e-3}};
  CHECK_THROWS_AS(fit_logistic(flat), DomainError);
  std::vector<RateSample> neg = {{-1, 1e-3}, {10, 2e-3}, {20, 3e-3}};
  CHECK_THROWS_AS(fit_logistic(neg), DomainError);
}

TEST_CASE("printed reference triple carries its provenance note") {
  const auto& [p, note] = printed_reference_params();
  CHECK(p.k == doctest::Approx(1.353));
  CHECK(!note.empty());
  // the printed k saturates within seconds, hours away from the calibration
  CHECK(oxidation_rate(10.0, p) > 0.99 * p.m_max);
}
