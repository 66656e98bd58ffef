#pragma once

#include <vector>

namespace amoe {

/// Standard normal density and distribution function (erfc based).
double normal_pdf(double x);
double normal_cdf(double x);

struct Component {
  double weight = 0.0;
  double mean = 0.0;
  double stddev = 1.0;

  bool operator==(const Component&) const = default;
};

/// Univariate Gaussian mixture; all quantities in standardized target units.
struct MixtureDensity {
  std::vector<Component> components;

  double pdf(double y) const;
  /// Log density via log-sum-exp, safe far in the tails.
  double log_pdf(double y) const;
  double cdf(double y) const;
  double mean() const;
  double variance() const;
  /// Inverts the CDF by bisection to |cdf(q) - p| well below `tol`.
  double quantile(double p, double tol = 1e-10) const;
  double weight_sum() const;

  bool operator==(const MixtureDensity&) const = default;
};

/// Sum of weight times mean.
inline double predictive_mean(const MixtureDensity& d) { return d.mean(); }

}  // namespace amoe
