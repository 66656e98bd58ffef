#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "amoe/error.hpp"
#include "amoe/nn.hpp"
#include "amoe/rng.hpp"
#include "oracles.hpp"

using namespace amoe;
using namespace amoe::nn;

namespace {

Vector from(const std::vector<double>& v) { return Eigen::Map<const Vector>(v.data(), static_cast<Index>(v.size())); }

double max_rel(const Vector& a, const std::vector<double>& n) {
  double m = 0.0;
  for (Index i = 0; i < a.size(); ++i) {
    const double d = std::abs(a(i) - n[static_cast<std::size_t>(i)]);
    m = std::max(m, d / std::max({std::abs(a(i)), std::abs(n[static_cast<std::size_t>(i)]), 1e-8}));
  }
  return m;
}

}  // namespace

TEST(LayerNorm, ConstantInputMapsToZero) {
  const Vector y = layer_norm(Vector::Constant(3, 1.0));
  for (Index i = 0; i < 3; ++i) EXPECT_EQ(y(i), 0.0);
}

TEST(LayerNorm, TwoEntryClosedForm) {
  const double a = 0.7;
  Vector x(2);
  x << -a, a;
  const Vector y = layer_norm(x);
  const double expect = a / std::sqrt(a * a + 1e-5);
  EXPECT_NEAR(y(0), -expect, 1e-15);
  EXPECT_NEAR(y(1), expect, 1e-15);
  EXPECT_LT(y(1), 1.0);
}

TEST(LayerNorm, OutputMoments) {
  Rng rng(1);
  Vector x(7);
  for (Index i = 0; i < 7; ++i) x(i) = rng.normal(3, 2);
  const Vector y = layer_norm(x);
  EXPECT_NEAR(y.mean(), 0.0, 1e-14);
  EXPECT_NEAR(y.squaredNorm() / 7, 1.0, 1e-5);
}

TEST(LayerNorm, BackwardMatchesFiniteDifferences) {
  Rng rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> x(5), g(5);
    for (auto& v : x) v = rng.normal();
    for (auto& v : g) v = rng.normal();
    LayerNormCache cache;
    layer_norm(from(x), &cache);
    const Vector analytic = layer_norm_backward(from(g), cache);
    const auto numeric = oracle::fd_gradient([&](const std::vector<double>& p) { return from(g).dot(layer_norm(from(p))); }, x);
    EXPECT_LT(max_rel(analytic, numeric), 1e-5);
  }
}

TEST(Softmax, UniformAndStable) {
  const Vector u = softmax(Vector::Zero(3));
  for (Index i = 0; i < 3; ++i) EXPECT_NEAR(u(i), 1.0 / 3.0, 1e-15);
  Vector big(2);
  big << 500.0, 600.0;
  const Vector s = softmax(big);
  EXPECT_TRUE(s.allFinite());
  EXPECT_LT(s(0), 1e-40);
  EXPECT_NEAR(s(1), 1.0, 1e-15);
}

TEST(Softmax, SumsToOneAndShiftInvariant) {
  Rng rng(3);
  for (int trial = 0; trial < 1000; ++trial) {
    Vector x(1 + static_cast<Index>(rng.below(10)));
    for (Index i = 0; i < x.size(); ++i) x(i) = rng.normal(0, 20);
    const Vector s = softmax(x);
    EXPECT_NEAR(s.sum(), 1.0, 1e-12);
    EXPECT_TRUE((s.array() >= 0).all());
    const Vector t = softmax((x.array() + 7.5).matrix());
    EXPECT_LT((s - t).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Softmax, JacobianMatchesFiniteDifferences) {
  Rng rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> x(4), g(4);
    for (auto& v : x) v = rng.normal();
    for (auto& v : g) v = rng.normal();
    const Vector analytic = softmax_backward(softmax(from(x)), from(g));
    const auto numeric = oracle::fd_gradient([&](const std::vector<double>& p) { return from(g).dot(softmax(from(p))); }, x);
    EXPECT_LT(max_rel(analytic, numeric), 1e-5);
  }
}

TEST(LogSumExp, Examples) {
  Vector h(2);
  h << std::log(0.5), std::log(0.5);
  EXPECT_NEAR(log_sum_exp(h), 0.0, 1e-15);
  Vector big(2);
  big << 1000.0, 1000.0;
  EXPECT_NEAR(log_sum_exp(big), 1000.0 + std::log(2.0), 1e-12);

  const double inf = std::numeric_limits<double>::infinity();
  Vector masked(3);
  masked << 0.0, -inf, 0.0;
  EXPECT_NEAR(log_sum_exp(masked), std::log(2.0), 1e-15);
  EXPECT_EQ(log_sum_exp_grad(masked)(1), 0.0);

  Vector empty(2);
  empty << -inf, -inf;
  try {
    log_sum_exp(empty);
    FAIL();
  } catch (const NumericalError& e) {
    EXPECT_NE(std::string(e.what()).find("empty mixture"), std::string::npos);
  }
}

TEST(LogSumExp, GradientIsSoftmax) {
  Vector x(3);
  x << 0.3, -1.2, 2.0;
  const Vector g = log_sum_exp_grad(x);
  const double z = std::exp(0.3) + std::exp(-1.2) + std::exp(2.0);
  EXPECT_NEAR(g(0), std::exp(0.3) / z, 1e-10);
  EXPECT_NEAR(g(1), std::exp(-1.2) / z, 1e-10);
  EXPECT_NEAR(g(2), std::exp(2.0) / z, 1e-10);
}

TEST(Activations, BackwardMatchesFiniteDifferences) {
  Rng rng(5);
  for (Activation act : {Activation::kTanh, Activation::kRelu}) {
    std::vector<double> x(6), g(6);
    for (auto& v : x) v = rng.normal() + 0.05;  // away from the relu kink
    for (auto& v : g) v = rng.normal();
    const Vector out = activate(from(x), act);
    const Vector analytic = activation_backward(out, from(g), act);
    const auto numeric =
        oracle::fd_gradient([&](const std::vector<double>& p) { return from(g).dot(activate(from(p), act)); }, x, 1e-6);
    EXPECT_LT(max_rel(analytic, numeric), 1e-6);
  }
}

TEST(Adam, ZeroGradientLeavesParams) {
  ParamStore ps;
  ps.add("w", Matrix::Constant(2, 2, 0.5));
  AdamState st(ps, {});
  adam_step(ps, st);
  EXPECT_EQ(ps.at("w").value, Matrix::Constant(2, 2, 0.5));
}

TEST(Adam, FirstStepHandComputed) {
  ParamStore ps;
  ps.add("w", Matrix::Constant(1, 1, 0.0));
  AdamState st(ps, {1e-3, 0.9, 0.999, 1e-8});
  ps.at("w").grad(0, 0) = 1.0;
  adam_step(ps, st);
  // m_hat = 1, v_hat = 1: step = -lr * 1 / (1 + eps)
  EXPECT_NEAR(ps.at("w").value(0, 0), -1e-3 / (1.0 + 1e-8), 1e-15);
  EXPECT_EQ(ps.at("w").grad(0, 0), 0.0);
}

TEST(Adam, QuadraticBowlConverges) {
  ParamStore ps;
  ps.add("w", Matrix::Constant(1, 1, 1.0));
  AdamState st(ps, {1e-2, 0.9, 0.999, 1e-8});
  int steps = 0;
  for (; steps < 5000 && std::abs(ps.at("w").value(0, 0)) >= 1e-3; ++steps) {
    ps.at("w").grad(0, 0) = 2.0 * ps.at("w").value(0, 0);
    adam_step(ps, st);
  }
  EXPECT_LT(std::abs(ps.at("w").value(0, 0)), 1e-3);
  EXPECT_LE(steps, 5000);
}

TEST(Adam, NonFiniteGradientNamesParameter) {
  ParamStore ps;
  ps.add("first", Matrix::Zero(1, 1));
  ps.add("second.bias", Matrix::Zero(2, 1));
  AdamState st(ps, {});
  ps.at("second.bias").grad(1, 0) = std::numeric_limits<double>::quiet_NaN();
  try {
    adam_step(ps, st);
    FAIL();
  } catch (const NumericalError& e) {
    EXPECT_NE(std::string(e.what()).find("second.bias"), std::string::npos) << e.what();
  }
}

TEST(ParamStore, ShapesNamesAndJson) {
  ParamStore ps;
  ps.add("a", Matrix::Constant(2, 3, 1.5));
  ps.add("b", Matrix::Zero(4, 1));
  EXPECT_THROW(ps.add("a", Matrix::Zero(1, 1)), std::invalid_argument);
  EXPECT_EQ(ps.num_scalars(), 10u);
  for (const auto& p : ps) {
    EXPECT_EQ(p.grad.rows(), p.value.rows());
    EXPECT_EQ(p.grad.cols(), p.value.cols());
  }
  const ParamStore back = ParamStore::from_json(ps.to_json());
  EXPECT_TRUE(back.values_equal(ps));
  EXPECT_TRUE(ps.all_finite());
}

TEST(GradCheck, LinearLayerIsTight) {
  Rng rng(6);
  ParamStore ps;
  Matrix w(3, 4), b(3, 1);
  for (Index i = 0; i < w.size(); ++i) w.data()[i] = rng.normal();
  for (Index i = 0; i < b.size(); ++i) b.data()[i] = rng.normal();
  ps.add("w", w);
  ps.add("b", b);
  Vector x(4), g(3);
  for (Index i = 0; i < 4; ++i) x(i) = rng.normal();
  for (Index i = 0; i < 3; ++i) g(i) = rng.normal();
  const Objective f = [&](ParamStore& p) {
    const Vector y = dense(p.at("w").value, p.at("b").value, x);
    dense_backward(p.at("w").value, x, g, p.at("w").grad, p.at("b").grad);
    return g.dot(y);
  };
  const GradCheckReport r = grad_check(f, ps, {1e-4, 1e-7, 1e-6});
  EXPECT_TRUE(r.passed);
  EXPECT_LT(r.max_rel_error, 1e-7);
  EXPECT_EQ(ps.at("w").value, w);  // restored
}

TEST(GradCheck, CorruptedGradientIsReported) {
  ParamStore ps;
  ps.add("w", Matrix::Constant(2, 1, 0.3));
  const Objective f = [](ParamStore& p) {
    const auto& v = p.at("w").value;
    p.at("w").grad += 2.0 * v;
    p.at("w").grad(1, 0) += 0.5;  // wrong on purpose
    return v.squaredNorm();
  };
  const GradCheckReport r = grad_check(f, ps);
  EXPECT_FALSE(r.passed);
  EXPECT_GT(r.max_rel_error, 1e-3);
  ASSERT_EQ(r.per_param.size(), 1u);
  EXPECT_EQ(r.per_param[0].worst_index, 1);
}

TEST(Primitives, RepeatedEvaluationIsBitIdentical) {
  Rng rng(7);
  Vector x(9);
  for (Index i = 0; i < 9; ++i) x(i) = rng.normal();
  EXPECT_EQ(layer_norm(x), layer_norm(x));
  EXPECT_EQ(softmax(x), softmax(x));
  EXPECT_EQ(log_sum_exp(x), log_sum_exp(x));
}
