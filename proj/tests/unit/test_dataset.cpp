#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "amoe/dataset.hpp"
#include "amoe/error.hpp"

using namespace amoe;

namespace {

std::set<Index> as_set(const IndexList& v) { return {v.begin(), v.end()}; }

void expect_partition(const SplitPlan& p) {
  const auto test = as_set(p.test_idx), tv = as_set(p.tv_idx), tr = as_set(p.tr_idx), va = as_set(p.va_idx),
             cal = as_set(p.cal_idx);
  // No duplicates inside a list.
  EXPECT_EQ(test.size(), p.test_idx.size());
  EXPECT_EQ(tv.size(), p.tv_idx.size());
  EXPECT_EQ(tr.size(), p.tr_idx.size());
  EXPECT_EQ(va.size(), p.va_idx.size());
  EXPECT_EQ(cal.size(), p.cal_idx.size());
  for (const auto* s : {&test, &tv, &tr, &va, &cal}) EXPECT_FALSE(s->empty());

  std::set<Index> all(test);
  for (Index i : tv) EXPECT_TRUE(all.insert(i).second) << "tv overlaps test";
  for (Index i : cal) EXPECT_TRUE(all.insert(i).second) << "cal overlaps test or tv";
  EXPECT_EQ(static_cast<Index>(all.size()), p.n);
  EXPECT_EQ(*all.begin(), 0);
  EXPECT_EQ(*all.rbegin(), p.n - 1);

  std::set<Index> trva(tr);
  for (Index i : va) EXPECT_TRUE(trva.insert(i).second) << "tr overlaps va";
  EXPECT_EQ(trva, tv);
}

}  // namespace

TEST(LoadCsv, BostonShape) {
  const Table t = load_csv(AMOE_TEST_DATA_DIR "/boston.csv");
  EXPECT_EQ(t.rows(), 506);
  EXPECT_EQ(t.cols(), 13);
  EXPECT_EQ(t.column_names.size(), 13u);
}

TEST(LoadCsv, MissingValueIsRejected) {
  CsvSchema s;
  s.min_rows = 1;
  try {
    parse_csv("a,b,y\n1,2,3\n4,NaN,6\n7,8,9\n", s);
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("missing value"), std::string::npos) << e.what();
  }
  EXPECT_THROW(parse_csv("a,b,y\n1,,3\n4,5,6\n", s), DataError);
}

TEST(LoadCsv, ConstantPolicyFills) {
  CsvSchema s;
  s.min_rows = 1;
  s.missing = MissingPolicy::kConstant;
  s.missing_fill = -7.0;
  const Table t = parse_csv("a,b,y\n1,,3\n4,5,6\n", s);
  EXPECT_EQ(t.features(0, 1), -7.0);
}

TEST(LoadCsv, ErrorsForBadInput) {
  CsvSchema s;
  s.min_rows = 1;
  EXPECT_THROW(load_csv("/definitely/not/here.csv"), DataError);
  EXPECT_THROW(parse_csv("a,b,y\n1,x,3\n", s), DataError);
  CsvSchema named = s;
  named.target_name = "zzz";
  EXPECT_THROW(parse_csv("a,b,y\n1,2,3\n", named), DataError);
  EXPECT_THROW(parse_csv("a,y\n1,2\n3,4\n"), DataError);  // fewer than 10 rows by default
}

TEST(LoadCsv, TargetSelectionAndOrder) {
  CsvSchema s;
  s.min_rows = 1;
  s.target_name = "t";
  const Table t = parse_csv("t,a,b\n1,2,3\n4,5,6\n", s);
  EXPECT_EQ(t.target_name, "t");
  EXPECT_EQ(t.target(1), 4.0);
  EXPECT_EQ(t.features(1, 0), 5.0);
  EXPECT_EQ(t.features(1, 1), 6.0);
}

TEST(LoadCsv, QuotedFieldsAndOneHot) {
  CsvSchema s;
  s.min_rows = 1;
  s.categorical = {"c"};
  const Table t = parse_csv("\"a\",c,y\n\"1.5\",red,1\n2,blue,2\n3,red,3\n", s);
  EXPECT_EQ(t.rows(), 3);
  EXPECT_EQ(t.cols(), 3);  // a + two one-hot levels
  EXPECT_EQ(t.features(0, 0), 1.5);
  double row_sum = t.features(1, 1) + t.features(1, 2);
  EXPECT_EQ(row_sum, 1.0);
}

TEST(SplitPlan, HundredRowSizes) {
  const SplitPlan p = make_split_plan(100, 0);
  EXPECT_EQ(p.test_idx.size(), 10u);
  EXPECT_EQ(p.cal_idx.size(), 9u);
  EXPECT_TRUE(p.va_idx.size() == 16u || p.va_idx.size() == 17u);
  EXPECT_EQ(p.tr_idx.size(), 100u - 10u - 9u - p.va_idx.size());
  expect_partition(p);
}

TEST(SplitPlan, TenRowsEitherValidOrError) {
  try {
    expect_partition(make_split_plan(10, 7));
  } catch (const DataError&) {
    SUCCEED();
  }
}

TEST(SplitPlan, PartitionPropertyExhaustive) {
  for (Index n = 10; n <= 200; ++n) {
    for (std::uint64_t seed : {0ull, 1ull, 99ull}) {
      SplitPlan p;
      try {
        p = make_split_plan(n, seed);
      } catch (const DataError&) {
        continue;  // some partition would be empty
      }
      SCOPED_TRACE("n=" + std::to_string(n));
      expect_partition(p);
    }
  }
  EXPECT_NO_THROW(make_split_plan(30, 0));
}

TEST(SplitPlan, DeterministicAndJsonRoundTrip) {
  const SplitPlan a = make_split_plan(308, 5), b = make_split_plan(308, 5), c = make_split_plan(308, 6);
  EXPECT_EQ(a, b);
  EXPECT_NE(a.test_idx, c.test_idx);
  EXPECT_EQ(split_plan_hash(a), split_plan_hash(b));
  EXPECT_NE(split_plan_hash(a), split_plan_hash(c));
  EXPECT_EQ(split_plan_from_json(split_plan_to_json(a)), a);
}

TEST(Subsample, SizesAndErrors) {
  Table t;
  t.features = Matrix(20, 1);
  t.target = Vector(20);
  for (int i = 0; i < 20; ++i) {
    t.features(i, 0) = i;
    t.target(i) = 100 + i;
  }
  const Table s = subsample(t, 7, 3);
  EXPECT_EQ(s.rows(), 7);
  for (Index i = 0; i < 7; ++i) EXPECT_EQ(s.target(i), 100 + s.features(i, 0));

  const Table p = subsample(t, 20, 3);
  std::vector<double> v(p.target.data(), p.target.data() + 20);
  std::sort(v.begin(), v.end());
  for (int i = 0; i < 20; ++i) EXPECT_EQ(v[static_cast<std::size_t>(i)], 100 + i);
  EXPECT_THROW(subsample(t, 21, 3), DataError);
}

TEST(ZScaler, HandComputed) {
  Vector v(3);
  v << 1, 2, 3;
  const ZScaler s = fit_zscaler(v);
  EXPECT_DOUBLE_EQ(s.mu, 2.0);
  EXPECT_NEAR(s.sigma, std::sqrt(2.0 / 3.0), 1e-15);  // population std
}

TEST(ZScaler, ConstantFallbackAndRoundTrip) {
  Vector c(3);
  c << 5, 5, 5;
  const ZScaler s = fit_zscaler(c);
  EXPECT_EQ(s.mu, 5.0);
  EXPECT_EQ(s.sigma, 1.0);

  Vector v(3);
  v << -1, 0, 4;
  const ZScaler z = fit_zscaler(v);
  const Vector back = z.invert(z.apply(v));
  for (Index i = 0; i < 3; ++i) EXPECT_NEAR(back(i), v(i), 1e-12 * std::max(1.0, std::abs(v(i))));
  EXPECT_THROW(fit_zscaler(Vector()), DataError);
}

TEST(ColumnScaler, ZeroVarianceColumnGetsUnitStd) {
  Matrix x(4, 2);
  x << 1, 7, 2, 7, 3, 7, 4, 7;
  const ColumnScaler s = fit_column_scaler(x);
  EXPECT_EQ(s.stds(1), 1.0);
  EXPECT_GT(s.stds(0), 0.0);
  const Matrix z = s.apply(x);
  EXPECT_NEAR(z.col(0).mean(), 0.0, 1e-15);
  EXPECT_EQ(z(0, 1), 0.0);
  const ColumnScaler r = column_scaler_from_json(column_scaler_to_json(s));
  EXPECT_EQ(r.means, s.means);
  EXPECT_EQ(r.stds, s.stds);
}

TEST(AugmentWithAnchor, AppendsTrailingColumn) {
  Matrix x(2, 3);
  x << 1, 2, 3, 4, 5, 6;
  Vector a(2);
  a << -1, -2;
  const Matrix y = augment_with_anchor(x, a);
  ASSERT_EQ(y.rows(), 2);
  ASSERT_EQ(y.cols(), 4);
  EXPECT_EQ(y.leftCols(3), x);
  EXPECT_EQ(y(0, 3), -1);
  EXPECT_EQ(y(1, 3), -2);
  EXPECT_THROW(augment_with_anchor(x, Vector()), DataError);
}

TEST(Scalers, DeterministicFits) {
  const Table t = load_csv(AMOE_TEST_DATA_DIR "/boston.csv");
  const SplitPlan p = make_split_plan(t.rows(), 11);
  const Matrix tr = select_rows(t.features, p.tr_idx);
  const ColumnScaler a = fit_column_scaler(tr), b = fit_column_scaler(tr);
  EXPECT_EQ(a.means, b.means);
  EXPECT_EQ(a.stds, b.stds);
  const Vector y = select_rows(t.target, p.tr_idx);
  EXPECT_EQ(fit_zscaler(y).mu, fit_zscaler(y).mu);
  EXPECT_EQ(fit_zscaler(y).sigma, fit_zscaler(y).sigma);
}
