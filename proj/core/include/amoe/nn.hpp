#pragma once

#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "amoe/types.hpp"

namespace amoe::nn {

struct Param {
  std::string name;
  Matrix value;
  Matrix grad;  // same shape as value
};

/// Named trainable arrays with gradient buffers. Vectors are stored as n x 1.
class ParamStore {
 public:
  std::size_t add(std::string name, Matrix init);
  std::size_t index_of(std::string_view name) const;

  Param& operator[](std::size_t i) { return params_[i]; }
  const Param& operator[](std::size_t i) const { return params_[i]; }
  Param& at(std::string_view name) { return params_[index_of(name)]; }
  const Param& at(std::string_view name) const { return params_[index_of(name)]; }

  std::size_t size() const { return params_.size(); }
  std::size_t num_scalars() const;
  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  void zero_grad();
  bool all_finite() const;
  /// Exact equality of every value (used by determinism checks).
  bool values_equal(const ParamStore& other) const;

  nlohmann::json to_json() const;
  static ParamStore from_json(const nlohmann::json& j);

 private:
  std::vector<Param> params_;
};

// ---- differentiable primitives -------------------------------------------

inline constexpr double kLayerNormEps = 1e-5;

struct LayerNormCache {
  Vector normalized;
  double inv_std = 1.0;
};

/// (x - mean) / sqrt(var + eps), population variance, no affine gain or bias.
Vector layer_norm(const Vector& x, LayerNormCache* cache = nullptr, double eps = kLayerNormEps);
Vector layer_norm_backward(const Vector& grad_out, const LayerNormCache& cache);

/// Max-shifted softmax.
Vector softmax(const Vector& logits);
/// Vector-Jacobian product of softmax given its output.
Vector softmax_backward(const Vector& output, const Vector& grad_out);

/// log(sum(exp(terms))) with max shift; -inf entries are allowed and contribute
/// nothing. Throws NumericalError("empty mixture") if every entry is -inf.
double log_sum_exp(const Vector& terms);
/// d log_sum_exp / d terms, i.e. softmax(terms) with zeros at -inf entries.
Vector log_sum_exp_grad(const Vector& terms);

enum class Activation { kTanh, kRelu };

Vector activate(const Vector& pre, Activation act);
/// Derivative of the activation expressed through its output.
Vector activation_backward(const Vector& out, const Vector& grad_out, Activation act);

/// y = W x + b
inline Vector dense(const Matrix& w, const Matrix& b, const Vector& x) { return w * x + b.col(0); }

/// Accumulates dW += g x^T, db += g and returns W^T g.
Vector dense_backward(const Matrix& w, const Vector& x, const Vector& grad_out, Matrix& grad_w, Matrix& grad_b);

// ---- optimizer --------------------------------------------------------------

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  AdamConfig config;
  std::vector<Matrix> m;
  std::vector<Matrix> v;
  long step = 0;

  AdamState() = default;
  AdamState(const ParamStore& params, AdamConfig cfg);
};

/// Bias-corrected Adam update; zeroes gradients afterwards. Throws
/// NumericalError naming the first parameter with a non-finite gradient.
void adam_step(ParamStore& params, AdamState& state);

// ---- gradient verification ---------------------------------------------------

/// Evaluates the objective at the store's current values and accumulates its
/// gradient into the store's gradient buffers.
using Objective = std::function<double(ParamStore&)>;

struct GradCheckOptions {
  double step = 1e-4;
  double tolerance = 1e-3;
  /// Denominator floor of the relative error |a - n| / max(|a|, |n|, floor).
  double floor = 1e-6;
};

struct ParamGradError {
  std::string name;
  double max_rel_error = 0.0;
  Index worst_index = -1;
  double analytic = 0.0;
  double numeric = 0.0;
};

struct GradCheckReport {
  std::vector<ParamGradError> per_param;
  double max_rel_error = 0.0;
  bool passed = true;
};

/// Compares the analytic gradient with central finite differences entry by
/// entry. Failures are reported, never thrown. Parameter values are restored.
GradCheckReport grad_check(const Objective& f, ParamStore& params, const GradCheckOptions& options = {});
/// Same, with a cheaper value-only function used for the finite differences.
GradCheckReport grad_check(const Objective& f, const Objective& value, ParamStore& params,
                           const GradCheckOptions& options = {});

}  // namespace amoe::nn
