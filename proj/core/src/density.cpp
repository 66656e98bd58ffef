#include "amoe/density.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

namespace amoe {

double normal_pdf(double x) { return std::exp(-0.5 * x * x) * (0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2); }

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

double MixtureDensity::pdf(double y) const {
  double p = 0.0;
  for (const auto& c : components) p += c.weight * normal_pdf((y - c.mean) / c.stddev) / c.stddev;
  return p;
}

double MixtureDensity::log_pdf(double y) const {
  double m = -std::numeric_limits<double>::infinity();
  std::vector<double> terms;
  terms.reserve(components.size());
  for (const auto& c : components) {
    const double r = (y - c.mean) / c.stddev;
    const double t = std::log(c.weight) - std::log(c.stddev) - 0.5 * r * r - 0.5 * std::log(2.0 * std::numbers::pi);
    terms.push_back(t);
    m = std::max(m, t);
  }
  if (m == -std::numeric_limits<double>::infinity()) return m;
  double s = 0.0;
  for (double t : terms) s += std::exp(t - m);
  return m + std::log(s);
}

double MixtureDensity::cdf(double y) const {
  double p = 0.0;
  for (const auto& c : components) p += c.weight * normal_cdf((y - c.mean) / c.stddev);
  return p;
}

double MixtureDensity::mean() const {
  // Summed relative to the first mean: components sharing one mean return it
  // exactly even though the weights only sum to 1 up to rounding.
  if (components.empty()) return 0.0;
  const double ref = components.front().mean;
  double m = 0.0;
  for (const auto& c : components) m += c.weight * (c.mean - ref);
  return ref + m;
}

double MixtureDensity::variance() const {
  const double mu = mean();
  double v = 0.0;
  for (const auto& c : components) v += c.weight * (c.stddev * c.stddev + (c.mean - mu) * (c.mean - mu));
  return v;
}

double MixtureDensity::weight_sum() const {
  double s = 0.0;
  for (const auto& c : components) s += c.weight;
  return s;
}

double MixtureDensity::quantile(double p, double tol) const {
  if (!(p > 0.0 && p < 1.0)) throw std::invalid_argument("quantile level must lie in (0, 1)");
  if (components.empty()) throw std::invalid_argument("quantile of an empty mixture");
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (const auto& c : components) {
    lo = std::min(lo, c.mean - 40.0 * c.stddev);
    hi = std::max(hi, c.mean + 40.0 * c.stddev);
  }
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    const double f = cdf(mid);
    if (std::abs(f - p) < 0.01 * tol) return mid;
    if (f < p) lo = mid;
    else hi = mid;
    if (hi - lo <= std::numeric_limits<double>::epsilon() * std::max(1.0, std::abs(mid))) break;
  }
  return 0.5 * (lo + hi);
}

}  // namespace amoe
