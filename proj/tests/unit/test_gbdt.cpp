#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "amoe/error.hpp"
#include "amoe/gbdt.hpp"
#include "amoe/rng.hpp"
#include "oracles.hpp"

using namespace amoe;

namespace {

double stddev(const Vector& v) { return std::sqrt((v.array() - v.mean()).square().mean()); }

IndexList all_rows(Index n) {
  IndexList r(static_cast<std::size_t>(n));
  std::iota(r.begin(), r.end(), Index{0});
  return r;
}

std::vector<oracle::Node> to_oracle(const RegressionTree& t) {
  std::vector<oracle::Node> out;
  for (const auto& n : t.nodes()) out.push_back({n.feature, n.threshold, n.left, n.right, n.value});
  return out;
}

}  // namespace

TEST(FitGbdt, IdentityOnGridFitsWell) {
  Matrix x(20, 1);
  Vector y(20);
  for (int i = 0; i < 20; ++i) x(i, 0) = y(i) = i / 19.0;
  GbdtConfig c;
  c.max_stages = 50;
  c.max_depth = 3;
  c.shrinkage = 0.1;
  c.min_leaf = 1;
  const GbdtModel m = fit_gbdt(x, y, c);
  const Vector p = predict_anchor(m, x);
  const double rmse = std::sqrt((p - y).squaredNorm() / 20.0);
  EXPECT_LT(rmse, 0.1 * stddev(y));
}

TEST(FitGbdt, ConstantTargetNeedsNoTrees) {
  Matrix x(12, 2);
  Rng rng(1);
  for (Index i = 0; i < x.size(); ++i) x.data()[i] = rng.uniform();
  const Vector y = Vector::Constant(12, 3.25);
  const GbdtModel m = fit_gbdt(x, y, GbdtConfig{});
  EXPECT_TRUE(m.trees.empty());
  const Vector p = predict_anchor(m, x);
  for (Index i = 0; i < 12; ++i) EXPECT_EQ(p(i), 3.25);
}

TEST(FitGbdt, StepTargetFirstSplitAtStep) {
  Matrix x(30, 1);
  Vector y(30);
  for (int i = 0; i < 30; ++i) {
    x(i, 0) = i;
    y(i) = i < 13 ? 0.0 : 1.0;
  }
  GbdtConfig c;
  c.max_stages = 1;
  c.min_leaf = 1;
  const GbdtModel m = fit_gbdt(x, y, c);
  ASSERT_FALSE(m.trees.empty());
  const auto& root = m.trees[0].nodes()[0];
  const oracle::Split s = oracle::brute_force_split(x, (y.array() - y.mean()).matrix(), 1);
  EXPECT_EQ(root.feature, 0);
  EXPECT_DOUBLE_EQ(root.threshold, s.threshold);
  EXPECT_GT(root.threshold, 12.0);
  EXPECT_LT(root.threshold, 13.0);
}

TEST(BestSplit, MatchesExhaustiveSearch) {
  Rng rng(42);
  for (int trial = 0; trial < 200; ++trial) {
    const int n = 5 + static_cast<int>(rng.below(46));
    const int d = 1 + static_cast<int>(rng.below(3));
    const int min_leaf = 1 + static_cast<int>(rng.below(3));
    Matrix x(n, d);
    Vector r(n);
    for (Index i = 0; i < x.size(); ++i) x.data()[i] = std::round(rng.uniform() * 20) / 4;  // ties on purpose
    for (Index i = 0; i < n; ++i) r(i) = rng.normal();
    const SplitCandidate got = best_split(x, r, all_rows(n), min_leaf);
    const oracle::Split want = oracle::brute_force_split(x, r, min_leaf);
    if (want.feature < 0) {
      EXPECT_LT(got.feature, 0);
      continue;
    }
    ASSERT_GE(got.feature, 0) << "trial " << trial;
    EXPECT_NEAR(got.sse, want.sse, 1e-9 * (1 + want.sse)) << "trial " << trial;
  }
}

TEST(PredictAnchor, MatchesNaiveTreeWalk) {
  Rng rng(3);
  Matrix x(80, 3);
  Vector y(80);
  for (Index i = 0; i < 80; ++i) {
    for (int j = 0; j < 3; ++j) x(i, j) = rng.uniform(-1, 1);
    y(i) = std::sin(3 * x(i, 0)) + x(i, 1) * x(i, 2) + 0.1 * rng.normal();
  }
  GbdtConfig c;
  c.max_stages = 3;
  const GbdtModel m = fit_gbdt(x, y, c);
  ASSERT_EQ(m.trees.size(), 3u);
  const Vector p = predict_anchor(m, x);
  for (Index i = 0; i < 80; ++i) {
    double want = m.base_prediction;
    for (const auto& t : m.trees) want += m.shrinkage * oracle::walk_tree(to_oracle(t), x.row(i).data());
    EXPECT_NEAR(p(i), want, 1e-12);
  }
}

TEST(PredictAnchor, EmptyAndStump) {
  GbdtModel m;
  m.base_prediction = 1.5;
  m.num_features = 1;
  Matrix x(3, 1);
  x << -1, 0, 1;
  EXPECT_EQ(predict_anchor(m, x), Vector::Constant(3, 1.5));

  m.trees.emplace_back(std::vector<TreeNode>{{0, 0.0, 1, 2, 0.0}, {-1, 0, -1, -1, -1.0}, {-1, 0, -1, -1, 1.0}}, 1);
  m.n_stages = 1;
  m.shrinkage = 0.1;
  const Vector p = predict_anchor(m, x);
  EXPECT_DOUBLE_EQ(p(0), 1.5 - 0.1);
  EXPECT_DOUBLE_EQ(p(1), 1.5 - 0.1);
  EXPECT_DOUBLE_EQ(p(2), 1.5 + 0.1);

  Matrix wrong(1, 2);
  EXPECT_THROW(predict_anchor(m, wrong), DataError);
}

TEST(PredictStaged, IncrementalConsistency) {
  Rng rng(9);
  Matrix x(60, 2);
  Vector y(60);
  for (Index i = 0; i < 60; ++i) {
    x(i, 0) = rng.uniform();
    x(i, 1) = rng.uniform();
    y(i) = x(i, 0) * 3 - x(i, 1) + 0.2 * rng.normal();
  }
  GbdtConfig c;
  c.max_stages = 25;
  const GbdtModel m = fit_gbdt(x, y, c);
  for (int k = 1; k <= static_cast<int>(m.trees.size()); ++k) {
    const Vector a = predict_staged(m, x, k), b = predict_staged(m, x, k - 1);
    for (Index i = 0; i < 60; ++i)
      EXPECT_NEAR(a(i), b(i) + m.shrinkage * m.trees[static_cast<std::size_t>(k - 1)].predict_row(x.row(i).data()),
                  1e-12);
  }
}

TEST(Trees, StructuralInvariants) {
  Rng rng(5);
  Matrix x(100, 2);
  Vector y(100);
  for (Index i = 0; i < 100; ++i) {
    x(i, 0) = rng.uniform();
    x(i, 1) = rng.uniform();
    y(i) = rng.normal();
  }
  GbdtConfig c;
  c.max_stages = 20;
  c.max_depth = 3;
  const GbdtModel m = fit_gbdt(x, y, c);
  for (const auto& t : m.trees) {
    EXPECT_LE(t.depth(), 3);
    for (const auto& n : t.nodes()) {
      if (n.is_leaf()) {
        EXPECT_TRUE(std::isfinite(n.value));
      } else {
        EXPECT_GE(n.left, 0);
        EXPECT_GE(n.right, 0);
      }
    }
  }
}

TEST(SelectStages, ArgminWithTiesToEarlier) {
  Rng rng(17);
  Matrix x(120, 1), xv(60, 1);
  Vector y(120), yv(60);
  for (Index i = 0; i < 120; ++i) {
    x(i, 0) = rng.uniform();
    y(i) = rng.normal();  // pure noise: overfits
  }
  for (Index i = 0; i < 60; ++i) {
    xv(i, 0) = rng.uniform();
    yv(i) = rng.normal();
  }
  GbdtConfig c;
  c.max_stages = 80;
  const GbdtModel m = fit_gbdt(x, y, c);
  const int t = select_stages(m, xv, yv);
  const auto curve = staged_rmse(m, xv, yv);
  ASSERT_GE(t, 1);
  for (std::size_t k = 0; k < curve.size(); ++k) {
    EXPECT_LE(curve[static_cast<std::size_t>(t - 1)], curve[k]);
    if (static_cast<int>(k) < t - 1) {
      EXPECT_LT(curve[static_cast<std::size_t>(t - 1)], curve[k]);
    }
  }
}

TEST(SelectStages, MonotoneCurveSelectsLast) {
  Matrix x(40, 1);
  Vector y(40);
  for (int i = 0; i < 40; ++i) {
    x(i, 0) = i;
    y(i) = i;
  }
  GbdtConfig c;
  c.max_stages = 15;
  c.min_leaf = 1;
  const GbdtModel m = fit_gbdt(x, y, c);
  EXPECT_EQ(select_stages(m, x, y), 15);
}

TEST(SelectStages, FlatCurveSelectsFirst) {
  // Trees that output zero on every validation row give a flat curve.
  GbdtModel m;
  m.num_features = 1;
  m.base_prediction = 0.0;
  for (int k = 0; k < 5; ++k)
    m.trees.emplace_back(std::vector<TreeNode>{{0, 10.0, 1, 2, 0.0}, {-1, 0, -1, -1, 0.0}, {-1, 0, -1, -1, 1.0}}, 1);
  m.n_stages = 5;
  Matrix xv(3, 1);
  xv << 0, 1, 2;
  const Vector yv = Vector::Constant(3, 2.0);
  EXPECT_EQ(select_stages(m, xv, yv), 1);
}

TEST(Refit, SameProtocolAndJsonRoundTrip) {
  Rng rng(8);
  Matrix x(50, 2);
  Vector y(50);
  for (Index i = 0; i < 50; ++i) {
    x(i, 0) = rng.uniform();
    x(i, 1) = rng.uniform();
    y(i) = x(i, 0) + rng.normal() * 0.1;
  }
  GbdtConfig c;
  c.max_stages = 30;
  GbdtModel sub = fit_gbdt(x, y, c);
  sub.n_stages = 12;
  const GbdtModel refit = fit_gbdt_stages(x.topRows(40), y.head(40), c, 12);
  EXPECT_EQ(refit.n_stages, 12);
  EXPECT_TRUE(same_protocol(sub, refit));
  GbdtConfig other = c;
  other.max_depth = 2;
  EXPECT_FALSE(same_protocol(sub, fit_gbdt_stages(x, y, other, 12)));

  const GbdtModel back = gbdt_from_json(gbdt_to_json(sub));
  EXPECT_EQ(predict_anchor(back, x), predict_anchor(sub, x));
  EXPECT_EQ(back.n_stages, 12);
}

TEST(GbdtAnchor, PointPredictorInterface) {
  Matrix x(30, 1);
  Vector y(30);
  for (int i = 0; i < 30; ++i) {
    x(i, 0) = i;
    y(i) = i % 3;
  }
  GbdtConfig c;
  c.max_stages = 10;
  const GbdtAnchor a(fit_gbdt(x, y, c));
  const PointPredictor& p = a;
  EXPECT_EQ(p.num_features(), 1);
  EXPECT_EQ(p.predict(x), predict_anchor(a.model(), x));
}
