#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "amoe/types.hpp"

namespace amoe::theory {

/// Tensor-product linear hats on [0,1]^d with `per_axis` cell-centered nodes
/// per coordinate, (i + 1/2) / m. Hats are truncated at the boundary and the
/// per-axis weights renormalized, so at most 2^d weights are nonzero.
class PouLattice {
 public:
  PouLattice(int dim, int per_axis);

  int dim() const { return dim_; }
  int per_axis() const { return per_axis_; }
  Index size() const { return size_; }
  double mesh() const { return 1.0 / per_axis_; }
  Vector node(Index j) const;

  struct Weights {
    std::vector<Index> index;
    std::vector<double> weight;
  };
  /// Nonzero weights at x (dim entries, each in [0,1]).
  void weights(const double* x, Weights& out) const;

 private:
  int dim_;
  int per_axis_;
  Index size_;
};

/// Random rough function on R^d of Hoelder order alpha in (0, 1]:
/// sum_n 2^(-n alpha) g_n cos(2 pi 2^n <w_n, x> + phi_n) with unit directions w_n.
class HolderFunction {
 public:
  static HolderFunction random(int dim, double alpha, std::uint64_t seed, int terms = 20);

  double operator()(const double* x) const;
  int dim() const { return dim_; }
  double alpha() const { return alpha_; }
  /// Upper bound on |f(x) - f(y)| / |x - y|^alpha: 2 pi^alpha sum |g_n|.
  double constant() const { return constant_; }
  /// The same function on R^new_dim, ignoring the extra coordinates.
  HolderFunction padded(int new_dim) const;

 private:
  int dim_ = 1;
  double alpha_ = 1.0;
  double constant_ = 0.0;
  std::vector<double> amp_, phase_, freq_;
  std::vector<std::vector<double>> dir_;
};

using Function = std::function<double(const double*)>;

/// x -> sum_j w_j(x) f(x_j).
Function pou_interpolant(Function f, const PouLattice& lattice);

/// n uniform points in [0,1]^d, generated one coordinate at a time so that
/// the leading coordinates do not depend on d.
Matrix uniform_points(Index n, int dim, std::uint64_t seed);

/// Monte Carlo mean of (f - g)^2 over the rows of `points`.
double mean_squared_difference(const Function& f, const Function& g, const Matrix& points);

/// Ordinary least-squares slope of y on x.
double ols_slope(const std::vector<double>& x, const std::vector<double>& y);

struct RateResult {
  std::vector<Index> k;                 // window counts
  std::vector<double> mean_sq_error;    // averaged over function draws
  double slope = 0.0;                   // of log error vs log K
  double slope_stderr = 0.0;            // across function draws
};

struct RateOptions {
  Index n_mc = 20000;
  int functions = 10;
  std::uint64_t seed = 0;
};

/// Squared L2 interpolation error against K for random Hoelder functions.
/// Every K must be a perfect d-th power (at least 4 values).
RateResult rate_experiment(int dim, double alpha, const std::vector<Index>& k_list, const RateOptions& options = {});

struct SparseRateResult {
  RateResult subspace;  // lattice on the s active coordinates
  RateResult ambient;   // lattice on all d coordinates (control)
};

/// f(x) = g(x_S) with S the first s coordinates of [0,1]^d.
SparseRateResult sparse_rate_experiment(int dim, int s, double alpha, const std::vector<Index>& k_list,
                                        const std::vector<Index>& ambient_k_list, const RateOptions& options = {});

enum class Embedding { kFlat, kHelix, kSurface };

struct ManifoldRateResult {
  RateResult rate;
  double lip_lower = 0.0;  // min |gamma(u) - gamma(v)| / |u - v| over sampled pairs
  double lip_upper = 0.0;  // max of the same ratio
};

/// f = h o gamma for a random Hoelder h on the ambient space and a smooth
/// embedding gamma of [0,1]^d0; the lattice lives in intrinsic coordinates.
ManifoldRateResult manifold_rate_experiment(int ambient_dim, int intrinsic_dim, double alpha,
                                            const std::vector<Index>& k_list, Embedding embedding,
                                            const RateOptions& options = {});

/// Embedding of u in [0,1]^d0 into R^ambient (extra coordinates zero).
Vector embed(Embedding e, const double* u, int intrinsic_dim, int ambient_dim);

struct BalanceOptions {
  double noise = 0.1;
  int repetitions = 10;      // function draws, each with its own sample
  Index n_eval = 4096;       // risk evaluation points
  double k_ratio = 1.189207115002721;  // 2^(1/4) between grid values
  std::uint64_t seed = 0;
};

struct BalanceResult {
  std::vector<Index> n;
  std::vector<double> k_star;               // refined risk minimizer per N
  std::vector<std::vector<Index>> k_grid;   // per N
  std::vector<std::vector<double>> risk;    // mean risk per (N, K)
  double exponent = 0.0;                    // OLS slope of log K* vs log N
};

/// For each N: fit per-window local constants to N noisy samples for a grid
/// of K, measure the L2 risk, and take the minimizing K.
BalanceResult balance_experiment(int dim, double alpha, const std::vector<Index>& n_list,
                                 const BalanceOptions& options = {});

/// Per-window weighted means of y under the lattice weights; windows without
/// data take the mean of the non-empty windows.
Vector fit_local_constants(const PouLattice& lattice, const Matrix& x, const Vector& y);

/// Geometric K grid of perfect d-th powers between lo and hi (inclusive-ish).
std::vector<Index> geometric_k_grid(int dim, Index k_lo, Index k_hi, double ratio);

}  // namespace amoe::theory
