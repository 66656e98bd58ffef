#include "amoe/theory.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <numbers>
#include <stdexcept>

#include "amoe/error.hpp"
#include "amoe/rng.hpp"

namespace amoe::theory {

namespace {

Index int_pow(Index b, int e) {
  Index r = 1;
  for (int i = 0; i < e; ++i) r *= b;
  return r;
}

int per_axis_for(Index k, int dim) {
  const auto m = static_cast<Index>(std::llround(std::pow(static_cast<double>(k), 1.0 / dim)));
  if (m < 1 || int_pow(m, dim) != k)
    throw UsageError("K=" + std::to_string(k) + " is not a perfect power of order " + std::to_string(dim));
  return static_cast<int>(m);
}

double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

// Mean squared interpolation error over points for every K, one function.
std::vector<double> errors_for(const Function& f, int lattice_dim, const std::vector<Index>& k_list,
                               const Matrix& lattice_points, const std::vector<double>& truth) {
  std::vector<double> out;
  PouLattice::Weights w;
  for (Index k : k_list) {
    const PouLattice lat(lattice_dim, per_axis_for(k, lattice_dim));
    std::vector<double> node_values(static_cast<std::size_t>(lat.size()));
    for (Index j = 0; j < lat.size(); ++j) {
      const Vector c = lat.node(j);
      node_values[static_cast<std::size_t>(j)] = f(c.data());
    }
    double acc = 0.0;
    for (Index i = 0; i < lattice_points.rows(); ++i) {
      lat.weights(lattice_points.row(i).data(), w);
      double v = 0.0;
      for (std::size_t q = 0; q < w.index.size(); ++q) v += w.weight[q] * node_values[static_cast<std::size_t>(w.index[q])];
      const double e = v - truth[static_cast<std::size_t>(i)];
      acc += e * e;
    }
    out.push_back(acc / static_cast<double>(lattice_points.rows()));
  }
  return out;
}

// Generic driver: `make_f(i)` gives draw i as a function of lattice coordinates.
RateResult run_rate(int lattice_dim, const std::vector<Index>& k_list, const RateOptions& o,
                    const std::function<Function(int)>& make_f) {
  if (k_list.size() < 4) throw UsageError("rate experiments need at least 4 values of K");
  if (o.n_mc < 1) throw UsageError("n_mc must be positive");
  if (o.functions < 1) throw UsageError("need at least one function draw");
  RateResult r;
  r.k = k_list;
  const Matrix pts = uniform_points(o.n_mc, lattice_dim, Rng::mix(o.seed, 1000));
  std::vector<double> logk;
  for (Index k : k_list) logk.push_back(std::log(static_cast<double>(k)));
  std::vector<std::vector<double>> per_draw;
  std::vector<double> slopes;
  for (int i = 0; i < o.functions; ++i) {
    const Function f = make_f(i);
    std::vector<double> truth(static_cast<std::size_t>(pts.rows()));
    for (Index p = 0; p < pts.rows(); ++p) truth[static_cast<std::size_t>(p)] = f(pts.row(p).data());
    per_draw.push_back(errors_for(f, lattice_dim, k_list, pts, truth));
    std::vector<double> le;
    for (double e : per_draw.back()) le.push_back(std::log(e));
    slopes.push_back(ols_slope(logk, le));
  }
  std::vector<double> logm;
  for (std::size_t q = 0; q < k_list.size(); ++q) {
    double s = 0.0;
    for (const auto& d : per_draw) s += d[q];
    r.mean_sq_error.push_back(s / static_cast<double>(per_draw.size()));
    logm.push_back(std::log(r.mean_sq_error.back()));
  }
  r.slope = ols_slope(logk, logm);
  if (slopes.size() > 1) {
    const double m = mean(slopes);
    double ss = 0.0;
    for (double s : slopes) ss += (s - m) * (s - m);
    r.slope_stderr = std::sqrt(ss / static_cast<double>(slopes.size() - 1) / static_cast<double>(slopes.size()));
  }
  return r;
}

}  // namespace

// ---- lattice ---------------------------------------------------------------

PouLattice::PouLattice(int dim, int per_axis) : dim_(dim), per_axis_(per_axis), size_(int_pow(per_axis, dim)) {
  if (dim < 1 || per_axis < 1) throw UsageError("lattice needs positive dimension and size");
}

Vector PouLattice::node(Index j) const {
  Vector c(dim_);
  for (int l = 0; l < dim_; ++l) {
    c(l) = (static_cast<double>(j % per_axis_) + 0.5) / per_axis_;
    j /= per_axis_;
  }
  return c;
}

void PouLattice::weights(const double* x, Weights& out) const {
  out.index.assign(1, 0);
  out.weight.assign(1, 1.0);
  Index stride = 1;
  for (int l = 0; l < dim_; ++l) {
    const double t = std::clamp(x[l], 0.0, 1.0);
    const double p = t * per_axis_ - 0.5;
    const auto i0 = static_cast<Index>(std::floor(p));
    const double frac = p - static_cast<double>(i0);
    Index ax_idx[2];
    double ax_w[2];
    int n = 0;
    if (i0 < 0) {
      ax_idx[n] = 0;
      ax_w[n++] = 1.0;
    } else if (i0 + 1 > per_axis_ - 1) {
      ax_idx[n] = per_axis_ - 1;
      ax_w[n++] = 1.0;
    } else {
      if (frac < 1.0) {
        ax_idx[n] = i0;
        ax_w[n++] = 1.0 - frac;
      }
      if (frac > 0.0) {
        ax_idx[n] = i0 + 1;
        ax_w[n++] = frac;
      }
    }
    const std::size_t prev = out.index.size();
    std::vector<Index> idx;
    std::vector<double> wt;
    idx.reserve(prev * static_cast<std::size_t>(n));
    wt.reserve(prev * static_cast<std::size_t>(n));
    for (std::size_t a = 0; a < prev; ++a)
      for (int b = 0; b < n; ++b) {
        idx.push_back(out.index[a] + ax_idx[b] * stride);
        wt.push_back(out.weight[a] * ax_w[b]);
      }
    out.index.swap(idx);
    out.weight.swap(wt);
    stride *= per_axis_;
  }
}

// ---- test functions -------------------------------------------------------

HolderFunction HolderFunction::random(int dim, double alpha, std::uint64_t seed, int terms) {
  if (dim < 1) throw UsageError("dimension must be positive");
  if (!(alpha > 0.0 && alpha <= 1.0)) throw UsageError("alpha must lie in (0, 1]");
  if (terms < 1) throw UsageError("need at least one term");
  HolderFunction f;
  f.dim_ = dim;
  f.alpha_ = alpha;
  Rng rng(seed);
  double abs_sum = 0.0;
  for (int n = 0; n < terms; ++n) {
    const double g = rng.normal();
    const double phi = rng.uniform(0.0, 2.0 * std::numbers::pi);
    std::vector<double> w(static_cast<std::size_t>(dim));
    double norm = 0.0;
    do {
      norm = 0.0;
      for (auto& v : w) {
        v = rng.normal();
        norm += v * v;
      }
    } while (norm == 0.0);
    norm = std::sqrt(norm);
    for (auto& v : w) v /= norm;
    f.amp_.push_back(std::pow(2.0, -n * alpha) * g);
    f.phase_.push_back(phi);
    f.freq_.push_back(2.0 * std::numbers::pi * std::ldexp(1.0, n));
    f.dir_.push_back(std::move(w));
    abs_sum += std::abs(g);
  }
  f.constant_ = 2.0 * std::pow(std::numbers::pi, alpha) * abs_sum;
  return f;
}

double HolderFunction::operator()(const double* x) const {
  double s = 0.0;
  for (std::size_t n = 0; n < amp_.size(); ++n) {
    double dot = 0.0;
    for (int l = 0; l < dim_; ++l) dot += dir_[n][static_cast<std::size_t>(l)] * x[l];
    s += amp_[n] * std::cos(freq_[n] * dot + phase_[n]);
  }
  return s;
}

HolderFunction HolderFunction::padded(int new_dim) const {
  if (new_dim < dim_) throw UsageError("cannot pad to a smaller dimension");
  HolderFunction f = *this;
  f.dim_ = new_dim;
  for (auto& w : f.dir_) w.resize(static_cast<std::size_t>(new_dim), 0.0);
  return f;
}

Function pou_interpolant(Function f, const PouLattice& lattice) {
  std::vector<double> values(static_cast<std::size_t>(lattice.size()));
  for (Index j = 0; j < lattice.size(); ++j) {
    const Vector c = lattice.node(j);
    values[static_cast<std::size_t>(j)] = f(c.data());
  }
  return [lattice, values = std::move(values)](const double* x) {
    PouLattice::Weights w;
    lattice.weights(x, w);
    double v = 0.0;
    for (std::size_t q = 0; q < w.index.size(); ++q) v += w.weight[q] * values[static_cast<std::size_t>(w.index[q])];
    return v;
  };
}

Matrix uniform_points(Index n, int dim, std::uint64_t seed) {
  Rng rng(seed);
  Matrix p(n, dim);
  for (int l = 0; l < dim; ++l)
    for (Index i = 0; i < n; ++i) p(i, l) = rng.uniform();
  return p;
}

double mean_squared_difference(const Function& f, const Function& g, const Matrix& points) {
  double acc = 0.0;
  for (Index i = 0; i < points.rows(); ++i) {
    const double e = f(points.row(i).data()) - g(points.row(i).data());
    acc += e * e;
  }
  return acc / static_cast<double>(points.rows());
}

double ols_slope(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw std::invalid_argument("ols_slope needs >= 2 paired values");
  const double mx = mean(x), my = mean(y);
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
  }
  return sxy / sxx;
}

// ---- experiments ----------------------------------------------------------

RateResult rate_experiment(int dim, double alpha, const std::vector<Index>& k_list, const RateOptions& o) {
  return run_rate(dim, k_list, o, [&](int i) -> Function {
    auto h = std::make_shared<HolderFunction>(HolderFunction::random(dim, alpha, Rng::mix(o.seed, static_cast<std::uint64_t>(i))));
    return [h](const double* x) { return (*h)(x); };
  });
}

SparseRateResult sparse_rate_experiment(int dim, int s, double alpha, const std::vector<Index>& k_list,
                                        const std::vector<Index>& ambient_k_list, const RateOptions& o) {
  if (s < 1 || s > dim) throw UsageError("need 1 <= s <= d");
  SparseRateResult r;
  // f(x) = g(x_S) with S = first s coordinates; on the subspace lattice the
  // inert coordinates never enter.
  auto make_g = [&](int i) {
    return std::make_shared<HolderFunction>(
        HolderFunction::random(s, alpha, Rng::mix(o.seed, static_cast<std::uint64_t>(i))).padded(dim));
  };
  r.subspace = run_rate(s, k_list, o, [&](int i) -> Function {
    auto g = make_g(i);
    return [g, dim, s](const double* x) {
      std::vector<double> full(static_cast<std::size_t>(dim), 0.0);
      std::copy(x, x + s, full.begin());
      return (*g)(full.data());
    };
  });
  if (!ambient_k_list.empty()) {
    r.ambient = run_rate(dim, ambient_k_list, o, [&](int i) -> Function {
      auto g = make_g(i);
      return [g](const double* x) { return (*g)(x); };
    });
  }
  return r;
}

Vector embed(Embedding e, const double* u, int d0, int ambient) {
  Vector y = Vector::Zero(ambient);
  switch (e) {
    case Embedding::kFlat:
      if (ambient < d0) throw UsageError("ambient dimension below intrinsic dimension");
      for (int l = 0; l < d0; ++l) y(l) = u[l];
      break;
    case Embedding::kHelix: {
      if (d0 != 1 || ambient < 3) throw UsageError("helix needs d0 = 1 and ambient >= 3");
      const double a = 2.0 * std::numbers::pi * u[0];
      y(0) = 0.5 + 0.25 * std::cos(a);
      y(1) = 0.5 + 0.25 * std::sin(a);
      y(2) = u[0];
      break;
    }
    case Embedding::kSurface: {
      if (d0 != 2 || ambient < 3) throw UsageError("surface needs d0 = 2 and ambient >= 3");
      y(0) = u[0];
      y(1) = u[1];
      y(2) = 0.25 * std::sin(std::numbers::pi * u[0]) * std::cos(std::numbers::pi * u[1]);
      break;
    }
  }
  return y;
}

ManifoldRateResult manifold_rate_experiment(int ambient, int d0, double alpha, const std::vector<Index>& k_list,
                                            Embedding e, const RateOptions& o) {
  ManifoldRateResult r;
  const int native = e == Embedding::kFlat ? d0 : 3;
  if (ambient < native) throw UsageError("ambient dimension too small for the embedding");
  // Empirical bi-Lipschitz constants of the embedding.
  Rng rng(Rng::mix(o.seed, 2000));
  r.lip_lower = std::numeric_limits<double>::infinity();
  for (int p = 0; p < 20000; ++p) {
    std::vector<double> a(static_cast<std::size_t>(d0)), b(static_cast<std::size_t>(d0));
    double du = 0.0;
    for (int l = 0; l < d0; ++l) {
      a[static_cast<std::size_t>(l)] = rng.uniform();
      b[static_cast<std::size_t>(l)] = rng.uniform();
      du += (a[static_cast<std::size_t>(l)] - b[static_cast<std::size_t>(l)]) * (a[static_cast<std::size_t>(l)] - b[static_cast<std::size_t>(l)]);
    }
    if (du == 0.0) continue;
    const double ratio = (embed(e, a.data(), d0, ambient) - embed(e, b.data(), d0, ambient)).norm() / std::sqrt(du);
    r.lip_lower = std::min(r.lip_lower, ratio);
    r.lip_upper = std::max(r.lip_upper, ratio);
  }
  r.rate = run_rate(d0, k_list, o, [&](int i) -> Function {
    // h lives on the embedding's own coordinates and ignores the padding, so
    // growing the ambient dimension leaves f unchanged.
    auto h = std::make_shared<HolderFunction>(
        HolderFunction::random(native, alpha, Rng::mix(o.seed, static_cast<std::uint64_t>(i))).padded(ambient));
    return [h, e, d0, ambient](const double* u) {
      const Vector y = embed(e, u, d0, ambient);
      return (*h)(y.data());
    };
  });
  return r;
}

Vector fit_local_constants(const PouLattice& lat, const Matrix& x, const Vector& y) {
  Vector num = Vector::Zero(lat.size()), den = Vector::Zero(lat.size());
  PouLattice::Weights w;
  for (Index i = 0; i < x.rows(); ++i) {
    lat.weights(x.row(i).data(), w);
    for (std::size_t q = 0; q < w.index.size(); ++q) {
      num(w.index[q]) += w.weight[q] * y(i);
      den(w.index[q]) += w.weight[q];
    }
  }
  Vector theta(lat.size());
  double fill = 0.0;
  Index filled = 0;
  for (Index j = 0; j < lat.size(); ++j)
    if (den(j) > 0.0) {
      theta(j) = num(j) / den(j);
      fill += theta(j);
      ++filled;
    }
  fill = filled > 0 ? fill / static_cast<double>(filled) : 0.0;
  for (Index j = 0; j < lat.size(); ++j)
    if (!(den(j) > 0.0)) theta(j) = fill;
  return theta;
}

std::vector<Index> geometric_k_grid(int dim, Index k_lo, Index k_hi, double ratio) {
  if (k_lo < 1 || k_hi < k_lo || !(ratio > 1.0)) throw UsageError("bad K grid bounds");
  std::vector<Index> out;
  for (double k = static_cast<double>(k_lo); k <= static_cast<double>(k_hi) * (1.0 + 1e-12); k *= ratio) {
    const auto m = static_cast<Index>(std::llround(std::pow(k, 1.0 / dim)));
    const Index kk = int_pow(std::max<Index>(m, 1), dim);
    if (out.empty() || kk > out.back()) out.push_back(kk);
  }
  return out;
}

BalanceResult balance_experiment(int dim, double alpha, const std::vector<Index>& n_list, const BalanceOptions& o) {
  if (n_list.size() < 3) throw UsageError("need >= 3 values of N");
  if (o.repetitions < 1) throw UsageError("need at least one repetition");
  BalanceResult r;
  r.n = n_list;
  const Matrix eval = uniform_points(o.n_eval, dim, Rng::mix(o.seed, 3000));
  std::vector<HolderFunction> fs;
  std::vector<std::vector<double>> truth;
  for (int i = 0; i < o.repetitions; ++i) {
    fs.push_back(HolderFunction::random(dim, alpha, Rng::mix(o.seed, static_cast<std::uint64_t>(i))));
    std::vector<double> t(static_cast<std::size_t>(eval.rows()));
    for (Index p = 0; p < eval.rows(); ++p) t[static_cast<std::size_t>(p)] = fs.back()(eval.row(p).data());
    truth.push_back(std::move(t));
  }
  std::vector<double> logn, logk;
  PouLattice::Weights w;
  for (Index n : n_list) {
    const std::vector<Index> grid = geometric_k_grid(dim, Index{1} << dim, std::max<Index>(4 * n, Index{2} << dim), o.k_ratio);
    std::vector<double> risk(grid.size(), 0.0);
    for (int i = 0; i < o.repetitions; ++i) {
      const std::uint64_t s = Rng::mix(Rng::mix(o.seed, static_cast<std::uint64_t>(n)), static_cast<std::uint64_t>(i) + 17);
      const Matrix x = uniform_points(n, dim, s);
      Rng noise(Rng::mix(s, 1));
      Vector y(n);
      for (Index p = 0; p < n; ++p) y(p) = fs[static_cast<std::size_t>(i)](x.row(p).data()) + o.noise * noise.normal();
      for (std::size_t q = 0; q < grid.size(); ++q) {
        const PouLattice lat(dim, per_axis_for(grid[q], dim));
        const Vector theta = fit_local_constants(lat, x, y);
        double acc = 0.0;
        for (Index p = 0; p < eval.rows(); ++p) {
          lat.weights(eval.row(p).data(), w);
          double v = 0.0;
          for (std::size_t c = 0; c < w.index.size(); ++c) v += w.weight[c] * theta(w.index[c]);
          const double e = v - truth[static_cast<std::size_t>(i)][static_cast<std::size_t>(p)];
          acc += e * e;
        }
        risk[q] += acc / static_cast<double>(eval.rows()) / o.repetitions;
      }
    }
    const auto best = static_cast<std::size_t>(std::min_element(risk.begin(), risk.end()) - risk.begin());
    double lk = std::log(static_cast<double>(grid[best]));
    if (best > 0 && best + 1 < grid.size()) {
      // Parabola through the three points around the minimum, in log K.
      const double x0 = std::log(static_cast<double>(grid[best - 1])), x1 = lk, x2 = std::log(static_cast<double>(grid[best + 1]));
      const double y0 = std::log(risk[best - 1]), y1 = std::log(risk[best]), y2 = std::log(risk[best + 1]);
      const double d01 = (y1 - y0) / (x1 - x0), d12 = (y2 - y1) / (x2 - x1);
      const double curv = (d12 - d01) / (x2 - x0);
      if (curv > 0.0) lk = std::clamp(0.5 * (x0 + x1) - d01 / (2.0 * curv), x0, x2);
    }
    r.k_grid.push_back(grid);
    r.risk.push_back(risk);
    r.k_star.push_back(std::exp(lk));
    logn.push_back(std::log(static_cast<double>(n)));
    logk.push_back(lk);
  }
  r.exponent = ols_slope(logn, logk);
  return r;
}

}  // namespace amoe::theory
