#pragma once

// Closed-form theory for 1-D threshold classifiers (predict 1 iff x >= theta) on
// equal-variance Gaussian populations: optimal thresholds, fairness gaps, the
// clustered-vs-global comparison for two clusters and the associated conditions.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include "fairfl/data.hpp"
#include "fairfl/errors.hpp"
#include "fairfl/fairness.hpp"

namespace fairfl {

inline double normal_cdf(double z) noexcept { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

/// 1 - Phi(z), computed directly so that far tails keep their precision.
inline double normal_upper_tail(double z) noexcept { return 0.5 * std::erfc(z / std::sqrt(2.0)); }

/// Probability that a (g, y) sample lands at or above theta.
inline double cell_tail(const GaussianClientSpec& s, Group g, int y, double theta) noexcept {
  return normal_upper_tail((theta - s.mean(g, y)) / s.sigma);
}

/// Misclassification probability of the threshold rule at theta.
inline double expected_error(const GaussianClientSpec& s, double theta) {
  double e = 0.0;
  for (Group g : kGroups) {
    const double miss_pos = normal_cdf((theta - s.mean(g, 1)) / s.sigma);
    const double false_pos = normal_upper_tail((theta - s.mean(g, 0)) / s.sigma);
    e += s.group_rate(g) * (s.label_rates.at(g, 1) * miss_pos + s.label_rates.at(g, 0) * false_pos);
  }
  return e;
}

/// Minimizes f on [lo, hi]: best point of a uniform 2000-point grid, then golden-section search
/// on the two neighbouring grid cells until the bracket is narrower than 1e-6.
inline double minimize_1d(const std::function<double(double)>& f, double lo, double hi) {
  if (!(hi > lo)) throw ValidationError("minimize_1d needs lo < hi");
  constexpr std::size_t grid = 2000;
  const double step = (hi - lo) / static_cast<double>(grid - 1);
  std::size_t best = 0;
  double best_v = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < grid; ++k) {
    const double v = f(lo + step * static_cast<double>(k));
    if (v < best_v) {
      best_v = v;
      best = k;
    }
  }
  double a = lo + step * static_cast<double>(best == 0 ? 0 : best - 1);
  double b = lo + step * static_cast<double>(std::min(best + 1, grid - 1));
  const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double c = b - inv_phi * (b - a);
  double d = a + inv_phi * (b - a);
  double fc = f(c), fd = f(d);
  while (b - a > 1e-6) {
    if (fc <= fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - inv_phi * (b - a);
      fc = f(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + inv_phi * (b - a);
      fd = f(d);
    }
  }
  const double x = 0.5 * (a + b);
  // The grid point itself can win on flat or kinked objectives.
  const double grid_x = lo + step * static_cast<double>(best);
  return f(x) <= best_v ? x : grid_x;
}

namespace detail {

inline void threshold_bounds(const GaussianClientSpec& s, double& lo, double& hi) {
  lo = std::min({s.means.a1, s.means.a0, s.means.b1, s.means.b0}) - 6.0 * s.sigma;
  hi = std::max({s.means.a1, s.means.a0, s.means.b1, s.means.b0}) + 6.0 * s.sigma;
}

}  // namespace detail

inline double optimal_threshold(const GaussianClientSpec& s) {
  s.validate();
  double lo, hi;
  detail::threshold_bounds(s, lo, hi);
  return minimize_1d([&](double t) { return expected_error(s, t); }, lo, hi);
}

/// (mu^1_a + mu^0_b + mu^1_b + mu^0_a) / 4, the optimum for balanced specs whose
/// label-1 and label-0 means sit the same distance apart in both groups.
inline double theta_bar(const GaussianClientSpec& s) noexcept {
  return (s.means.a1 + s.means.b0 + s.means.b1 + s.means.a0) / 4.0;
}

/// Crossing point of two equal-variance Gaussian densities.
inline double crossing_point(double mu1, double mu2) noexcept { return 0.5 * (mu1 + mu2); }

inline double analytic_gap(const GaussianClientSpec& s, double theta, FairnessMetric metric) {
  const double tpr_gap = std::abs(cell_tail(s, Group::a, 1, theta) - cell_tail(s, Group::b, 1, theta));
  switch (metric) {
    case FairnessMetric::SP: {
      double sel[2];
      for (Group g : kGroups)
        sel[group_index(g)] = s.label_rates.at(g, 1) * cell_tail(s, g, 1, theta) +
                              s.label_rates.at(g, 0) * cell_tail(s, g, 0, theta);
      return std::abs(sel[0] - sel[1]);
    }
    case FairnessMetric::EqOp: return tpr_gap;
    case FairnessMetric::EO:
      return std::max(tpr_gap, std::abs(cell_tail(s, Group::a, 0, theta) - cell_tail(s, Group::b, 0, theta)));
  }
  return 0.0;
}

// ---------------------------------------------------------------------------
// Two-cluster scenarios

struct TwoClusterScenario {
  GaussianClientSpec alpha;
  GaussianClientSpec beta;
  /// Fraction of clients in cluster alpha.
  double p = 0.5;

  void validate() const {
    alpha.validate();
    beta.validate();
    if (!(p >= 0.0 && p <= 1.0)) throw ValidationError("p must lie in [0,1]");
  }
};

/// How the single global threshold is formed from the two clusters.
enum class GlobalThresholdRule {
  /// argmin of p * L_alpha(theta) + (1 - p) * L_beta(theta)
  loss_minimizer,
  /// p * theta*_alpha + (1 - p) * theta*_beta, i.e. averaging the cluster optima as parameters
  parameter_average,
};

inline GlobalThresholdRule parse_global_rule(std::string_view s) {
  if (s == "loss_minimizer") return GlobalThresholdRule::loss_minimizer;
  if (s == "parameter_average") return GlobalThresholdRule::parameter_average;
  throw ValidationError("unknown global threshold rule '" + std::string(s) + "'");
}

inline double global_threshold(const TwoClusterScenario& sc,
                               GlobalThresholdRule rule = GlobalThresholdRule::loss_minimizer) {
  sc.validate();
  if (rule == GlobalThresholdRule::parameter_average)
    return sc.p * optimal_threshold(sc.alpha) + (1.0 - sc.p) * optimal_threshold(sc.beta);
  if (sc.p == 1.0) return optimal_threshold(sc.alpha);
  if (sc.p == 0.0) return optimal_threshold(sc.beta);
  double lo_a, hi_a, lo_b, hi_b;
  detail::threshold_bounds(sc.alpha, lo_a, hi_a);
  detail::threshold_bounds(sc.beta, lo_b, hi_b);
  return minimize_1d(
      [&](double t) { return sc.p * expected_error(sc.alpha, t) + (1.0 - sc.p) * expected_error(sc.beta, t); },
      std::min(lo_a, lo_b), std::max(hi_a, hi_b));
}

enum class GapMode { clustered, global };

/// Cluster-size weighted average of the local gaps under per-cluster or global thresholds.
inline double average_gap(const TwoClusterScenario& sc, FairnessMetric metric, GapMode mode,
                          GlobalThresholdRule rule = GlobalThresholdRule::loss_minimizer) {
  sc.validate();
  double ta, tb;
  if (mode == GapMode::clustered) {
    ta = optimal_threshold(sc.alpha);
    tb = optimal_threshold(sc.beta);
  } else {
    ta = tb = global_threshold(sc, rule);
  }
  return sc.p * analytic_gap(sc.alpha, ta, metric) + (1.0 - sc.p) * analytic_gap(sc.beta, tb, metric);
}

struct CriticalSize {
  double p_hat = 1.0;
  std::size_t iterations = 0;
  /// Both integrals vanish (e.g. identical clusters); p_hat is reported as 1.
  bool degenerate = false;
  /// Denominator integral is zero; p_hat is reported as 1.
  bool zero_denominator = false;
  /// The raw ratio exceeded 1 and was clamped.
  bool capped = false;
};

namespace detail {

// Integral over [x1, x2] of (f^1_a - f^1_b), the label-1 group densities of a spec.
inline double label1_density_gap_integral(const GaussianClientSpec& s, double x1, double x2) {
  auto mass = [&](Group g) {
    return normal_cdf((x2 - s.mean(g, 1)) / s.sigma) - normal_cdf((x1 - s.mean(g, 1)) / s.sigma);
  };
  return mass(Group::a) - mass(Group::b);
}

}  // namespace detail

/// Critical cluster-alpha size for the EqOp comparison. The global threshold depends on p, so
/// p is iterated as p <- p + 0.5 (ratio(p) - p) from p = 0.5 until |dp| < 1e-6.
inline CriticalSize critical_cluster_size(const TwoClusterScenario& sc,
                                          GlobalThresholdRule rule = GlobalThresholdRule::loss_minimizer) {
  sc.validate();
  const double ta = optimal_threshold(sc.alpha);
  const double tb = optimal_threshold(sc.beta);
  constexpr double tiny = 1e-14;
  CriticalSize out;
  double p = 0.5;
  for (std::size_t it = 1; it <= 200; ++it) {
    TwoClusterScenario cur = sc;
    cur.p = p;
    const double tg = global_threshold(cur, rule);
    const double num = detail::label1_density_gap_integral(sc.beta, tg, tb);
    const double den = detail::label1_density_gap_integral(sc.alpha, ta, tg);
    out.iterations = it;
    if (std::abs(den) < tiny) {
      out.p_hat = 1.0;
      out.zero_denominator = true;
      out.degenerate = std::abs(num) < tiny;
      return out;
    }
    const double ratio = std::abs(num / den);
    out.capped = ratio > 1.0;
    const double target = std::min(1.0, ratio);
    const double next = p + 0.5 * (target - p);
    if (std::abs(next - p) < 1e-6) {
      out.p_hat = next;
      return out;
    }
    p = next;
  }
  throw NumericError("critical cluster size iteration did not converge after 200 steps (last p = " +
                     std::to_string(p) + ")");
}

struct SpCondition {
  double theta_bar = 0.0;
  double lhs = 0.0;
  double rhs = 0.0;
  /// alpha^1_g >= alpha^0_g for both groups.
  bool label_rates_ok = false;
  bool holds = false;
};

/// Evaluates the sufficient condition for clustering to improve SP, at theta_bar:
///   a0a e(a0) - a1b e(b1) >= a0b e(b0) - a1a e(a1),  e(mu) = exp(-(tb - mu)^2 / (2 sigma^2)) (tb - mu),
/// together with alpha^1_g >= alpha^0_g.
inline SpCondition sp_condition_check(const GaussianClientSpec& s) {
  s.validate();
  SpCondition c;
  c.theta_bar = theta_bar(s);
  auto e = [&](double mu) {
    const double d = c.theta_bar - mu;
    return std::exp(d * d / (-2.0 * s.sigma * s.sigma)) * d;
  };
  const auto& r = s.label_rates;
  c.lhs = r.a0 * e(s.means.a0) - r.b1 * e(s.means.b1);
  c.rhs = r.b0 * e(s.means.b0) - r.a1 * e(s.means.a1);
  c.label_rates_ok = r.a1 >= r.a0 && r.b1 >= r.b0;
  c.holds = c.label_rates_ok && c.lhs >= c.rhs;
  return c;
}

struct GapCurvePoint {
  double theta = 0.0;
  double gap = 0.0;
};

inline std::vector<GapCurvePoint> gap_curve(const GaussianClientSpec& s, FairnessMetric metric, double theta_lo,
                                            double theta_hi, std::size_t n_points) {
  s.validate();
  if (n_points < 2) throw ValidationError("gap curve needs at least two points");
  if (!(theta_hi > theta_lo)) throw ValidationError("gap curve needs theta_lo < theta_hi");
  std::vector<GapCurvePoint> out;
  out.reserve(n_points);
  const double step = (theta_hi - theta_lo) / static_cast<double>(n_points - 1);
  for (std::size_t k = 0; k < n_points; ++k) {
    const double t = k + 1 == n_points ? theta_hi : theta_lo + step * static_cast<double>(k);
    out.push_back({t, analytic_gap(s, t, metric)});
  }
  return out;
}

/// Default plotting range: mu_min - 6 sigma to mu_max + 6 sigma.
inline std::vector<GapCurvePoint> gap_curve(const GaussianClientSpec& s, FairnessMetric metric,
                                            std::size_t n_points) {
  double lo, hi;
  detail::threshold_bounds(s, lo, hi);
  return gap_curve(s, metric, lo, hi, n_points);
}

inline void write_gap_curve_csv(std::ostream& os, const std::vector<GapCurvePoint>& curve) {
  os << "theta,gap\n";
  os.precision(17);
  for (const auto& pt : curve) os << pt.theta << ',' << pt.gap << '\n';
}

}  // namespace fairfl
