#include "oracles.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace oracle {

double integrate(const std::function<double(double)>& f, double a, double b, int panels) {
  static const double nodes[5] = {0.0, -0.5384693101056831, 0.5384693101056831, -0.9061798459386640,
                                  0.9061798459386640};
  static const double weights[5] = {0.5688888888888889, 0.4786286704993665, 0.4786286704993665,
                                    0.2369268850561891, 0.2369268850561891};
  const double h = (b - a) / panels;
  double total = 0.0;
  for (int p = 0; p < panels; ++p) {
    const double mid = a + (p + 0.5) * h;
    double s = 0.0;
    for (int q = 0; q < 5; ++q) s += weights[q] * f(mid + 0.5 * h * nodes[q]);
    total += 0.5 * h * s;
  }
  return total;
}

double normal_cdf_series(double x) {
  // erf(u) = 2/sqrt(pi) sum_n (-1)^n u^(2n+1) / (n! (2n+1))
  const double u = x / std::numbers::sqrt2;
  double term = u;  // (-1)^n u^(2n+1) / n!
  double sum = 0.0;
  for (int n = 0; n < 50; ++n) {
    sum += term / (2 * n + 1);
    term *= -u * u / (n + 1);
  }
  return 0.5 * (1.0 + 2.0 / std::sqrt(std::numbers::pi) * sum);
}

double normal_pdf(double x) { return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi); }

double mixture_pdf(const std::vector<Gaussian>& mix, double y) {
  double p = 0.0;
  for (const auto& g : mix) p += g.weight * normal_pdf((y - g.mean) / g.stddev) / g.stddev;
  return p;
}

double mixture_cdf(const std::vector<Gaussian>& mix, double y) {
  double c = 0.0;
  for (const auto& g : mix) c += g.weight * 0.5 * std::erfc(-(y - g.mean) / (g.stddev * std::numbers::sqrt2));
  return c;
}

double crps_quadrature(const std::vector<Gaussian>& mix, double y, double lo, double hi) {
  auto below = [&](double t) { return std::pow(mixture_cdf(mix, t), 2); };
  auto above = [&](double t) { return std::pow(1.0 - mixture_cdf(mix, t), 2); };
  return integrate(below, lo, y) + integrate(above, y, hi);
}

Split brute_force_split(const amoe::Matrix& x, const amoe::Vector& r, int min_leaf) {
  Split best;
  best.sse = std::numeric_limits<double>::infinity();
  const auto n = x.rows();
  for (int f = 0; f < x.cols(); ++f) {
    std::vector<double> vals;
    for (amoe::Index i = 0; i < n; ++i) vals.push_back(x(i, f));
    std::sort(vals.begin(), vals.end());
    vals.erase(std::unique(vals.begin(), vals.end()), vals.end());
    for (std::size_t k = 0; k + 1 < vals.size(); ++k) {
      const double thr = 0.5 * (vals[k] + vals[k + 1]);
      double sl = 0, sr = 0;
      int nl = 0, nr = 0;
      for (amoe::Index i = 0; i < n; ++i) {
        if (x(i, f) <= thr) {
          sl += r(i);
          ++nl;
        } else {
          sr += r(i);
          ++nr;
        }
      }
      if (nl < min_leaf || nr < min_leaf) continue;
      const double ml = sl / nl, mr = sr / nr;
      double sse = 0;
      for (amoe::Index i = 0; i < n; ++i) {
        const double d = r(i) - (x(i, f) <= thr ? ml : mr);
        sse += d * d;
      }
      if (sse < best.sse) best = {f, thr, sse};
    }
  }
  return best;
}

double walk_tree(const std::vector<Node>& nodes, const double* row) {
  int i = 0;
  while (nodes[static_cast<std::size_t>(i)].feature >= 0) {
    const Node& n = nodes[static_cast<std::size_t>(i)];
    i = row[n.feature] <= n.threshold ? n.left : n.right;
  }
  return nodes[static_cast<std::size_t>(i)].value;
}

std::vector<double> fd_gradient(const std::function<double(const std::vector<double>&)>& f, std::vector<double> p,
                                double h) {
  std::vector<double> g(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double keep = p[i];
    p[i] = keep + h;
    const double up = f(p);
    p[i] = keep - h;
    const double dn = f(p);
    p[i] = keep;
    g[i] = (up - dn) / (2 * h);
  }
  return g;
}

void grid_refined_ls(const amoe::Vector& m, const amoe::Vector& y, double& a, double& b) {
  // Candidates are compared through the change in SSE relative to the current
  // best point, expanded so that small steps are not lost to rounding.
  a = 0.0;
  b = y.mean();
  double span_a = 16.0, span_b = 16.0 + 2.0 * std::abs(b);
  for (int round = 0; round < 400 && (span_a > 1e-15 || span_b > 1e-15); ++round) {
    const amoe::Vector r = (y.array() - a * m.array() - b).matrix();
    double best = 0.0, da = 0.0, db = 0.0;
    for (int i = -10; i <= 10; ++i)
      for (int j = -10; j <= 10; ++j) {
        const double ca = span_a * i / 10.0, cb = span_b * j / 10.0;
        const auto step = ca * m.array() + cb;
        const double change = (step.square() - 2.0 * r.array() * step).sum();
        if (change < best) {
          best = change;
          da = ca;
          db = cb;
        }
      }
    a += da;
    b += db;
    // Keep the span while the optimum sits on the grid edge.
    if (std::abs(da) < span_a * 0.95) span_a *= 0.5;
    if (std::abs(db) < span_b * 0.95) span_b *= 0.5;
  }
}

}  // namespace oracle
