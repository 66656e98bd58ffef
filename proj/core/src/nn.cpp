#include "amoe/nn.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "amoe/error.hpp"

namespace amoe::nn {

std::size_t ParamStore::add(std::string name, Matrix init) {
  for (const auto& p : params_)
    if (p.name == name) throw std::invalid_argument("duplicate parameter " + name);
  Matrix grad = Matrix::Zero(init.rows(), init.cols());
  params_.push_back({std::move(name), std::move(init), std::move(grad)});
  return params_.size() - 1;
}

std::size_t ParamStore::index_of(std::string_view name) const {
  for (std::size_t i = 0; i < params_.size(); ++i)
    if (params_[i].name == name) return i;
  throw std::out_of_range("unknown parameter " + std::string(name));
}

std::size_t ParamStore::num_scalars() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += static_cast<std::size_t>(p.value.size());
  return n;
}

void ParamStore::zero_grad() {
  for (auto& p : params_) p.grad.setZero();
}

bool ParamStore::all_finite() const {
  return std::all_of(params_.begin(), params_.end(), [](const Param& p) { return p.value.allFinite(); });
}

bool ParamStore::values_equal(const ParamStore& other) const {
  if (params_.size() != other.params_.size()) return false;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const auto& a = params_[i];
    const auto& b = other.params_[i];
    if (a.name != b.name || a.value.rows() != b.value.rows() || a.value.cols() != b.value.cols()) return false;
    if (!(a.value.array() == b.value.array()).all()) return false;
  }
  return true;
}

nlohmann::json ParamStore::to_json() const {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& p : params_) {
    arr.push_back({{"name", p.name},
                   {"rows", p.value.rows()},
                   {"cols", p.value.cols()},
                   {"data", std::vector<double>(p.value.data(), p.value.data() + p.value.size())}});
  }
  return arr;
}

ParamStore ParamStore::from_json(const nlohmann::json& j) {
  ParamStore s;
  for (const auto& e : j) {
    const auto rows = e.at("rows").get<Index>();
    const auto cols = e.at("cols").get<Index>();
    const auto data = e.at("data").get<std::vector<double>>();
    if (static_cast<Index>(data.size()) != rows * cols) throw DataError("checkpoint array has wrong size");
    s.add(e.at("name").get<std::string>(), Eigen::Map<const Matrix>(data.data(), rows, cols));
  }
  return s;
}

Vector layer_norm(const Vector& x, LayerNormCache* cache, double eps) {
  const double mean = x.mean();
  const Vector centered = x.array() - mean;
  const double var = centered.squaredNorm() / static_cast<double>(x.size());
  const double inv_std = 1.0 / std::sqrt(var + eps);
  Vector y = centered * inv_std;
  if (cache) {
    cache->normalized = y;
    cache->inv_std = inv_std;
  }
  return y;
}

Vector layer_norm_backward(const Vector& g, const LayerNormCache& c) {
  const auto n = static_cast<double>(g.size());
  const double mean_g = g.sum() / n;
  const double mean_gy = g.dot(c.normalized) / n;
  return c.inv_std * (g.array() - mean_g - c.normalized.array() * mean_gy).matrix();
}

Vector softmax(const Vector& logits) {
  const double m = logits.maxCoeff();
  Vector e = (logits.array() - m).exp();
  return e / e.sum();
}

Vector softmax_backward(const Vector& y, const Vector& g) { return y.cwiseProduct((g.array() - y.dot(g)).matrix()); }

double log_sum_exp(const Vector& terms) {
  const double m = terms.maxCoeff();
  if (m == -std::numeric_limits<double>::infinity()) throw NumericalError("empty mixture");
  return m + std::log((terms.array() - m).exp().sum());
}

Vector log_sum_exp_grad(const Vector& terms) {
  const double lse = log_sum_exp(terms);
  // Vectorized exp does not return an exact zero for -inf.
  Vector g(terms.size());
  for (Index i = 0; i < terms.size(); ++i) g(i) = std::isinf(terms(i)) ? 0.0 : std::exp(terms(i) - lse);
  return g;
}

Vector activate(const Vector& pre, Activation act) {
  return act == Activation::kTanh ? Vector(pre.array().tanh()) : Vector(pre.cwiseMax(0.0));
}

Vector activation_backward(const Vector& out, const Vector& g, Activation act) {
  if (act == Activation::kTanh) return g.cwiseProduct((1.0 - out.array().square()).matrix());
  return (out.array() > 0.0).select(g, 0.0);
}

Vector dense_backward(const Matrix& w, const Vector& x, const Vector& g, Matrix& grad_w, Matrix& grad_b) {
  grad_w.noalias() += g * x.transpose();
  grad_b.col(0) += g;
  return w.transpose() * g;
}

AdamState::AdamState(const ParamStore& params, AdamConfig cfg) : config(cfg) {
  for (const auto& p : params) {
    m.push_back(Matrix::Zero(p.value.rows(), p.value.cols()));
    v.push_back(Matrix::Zero(p.value.rows(), p.value.cols()));
  }
}

void adam_step(ParamStore& params, AdamState& s) {
  if (s.m.size() != params.size()) throw std::invalid_argument("Adam state does not match parameters");
  for (const auto& p : params)
    if (!p.grad.allFinite()) throw NumericalError("non-finite gradient in parameter '" + p.name + "'");
  ++s.step;
  const auto& c = s.config;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(s.step));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(s.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Param& p = params[i];
    s.m[i] = c.beta1 * s.m[i] + (1.0 - c.beta1) * p.grad;
    s.v[i] = c.beta2 * s.v[i] + (1.0 - c.beta2) * p.grad.cwiseAbs2();
    p.value.array() -= c.learning_rate * (s.m[i].array() / bc1) / ((s.v[i].array() / bc2).sqrt() + c.eps);
    p.grad.setZero();
  }
}

GradCheckReport grad_check(const Objective& f, ParamStore& params, const GradCheckOptions& o) {
  return grad_check(f, f, params, o);
}

GradCheckReport grad_check(const Objective& f, const Objective& value, ParamStore& params, const GradCheckOptions& o) {
  params.zero_grad();
  f(params);
  std::vector<Matrix> analytic;
  for (const auto& p : params) analytic.push_back(p.grad);

  GradCheckReport report;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    ParamGradError err;
    err.name = params[pi].name;
    for (Index k = 0; k < params[pi].value.size(); ++k) {
      double& slot = params[pi].value.data()[k];
      const double saved = slot;
      slot = saved + o.step;
      params.zero_grad();
      const double fp = value(params);
      slot = saved - o.step;
      params.zero_grad();
      const double fm = value(params);
      slot = saved;
      const double numeric = (fp - fm) / (2.0 * o.step);
      const double a = analytic[pi].data()[k];
      const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), o.floor});
      if (!(rel <= err.max_rel_error)) {  // also catches NaN
        err.max_rel_error = std::isnan(rel) ? std::numeric_limits<double>::infinity() : rel;
        err.worst_index = k;
        err.analytic = a;
        err.numeric = numeric;
      }
    }
    report.max_rel_error = std::max(report.max_rel_error, err.max_rel_error);
    report.per_param.push_back(std::move(err));
  }
  params.zero_grad();
  report.passed = report.max_rel_error < o.tolerance;
  return report;
}

}  // namespace amoe::nn
