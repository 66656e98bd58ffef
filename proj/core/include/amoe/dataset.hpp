#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "amoe/types.hpp"

namespace amoe {

struct Table {
  Matrix features;
  Vector target;
  std::vector<std::string> column_names;  // one per feature column
  std::string target_name;

  Index rows() const { return features.rows(); }
  Index cols() const { return features.cols(); }
};

enum class MissingPolicy { kReject, kConstant };

/// How to read a CSV file. Defaults: header auto-detected, last column is the
/// target, all other columns numeric, missing cells rejected.
struct CsvSchema {
  std::optional<std::string> target_name;
  std::optional<int> target_index;  // negative counts from the end
  std::optional<bool> has_header;   // unset: detect from the first row
  char delimiter = ',';
  std::vector<std::string> categorical;  // one-hot encoded columns
  std::vector<std::string> drop;
  MissingPolicy missing = MissingPolicy::kReject;
  double missing_fill = 0.0;
  std::size_t min_rows = 10;
};

CsvSchema schema_from_json(const nlohmann::json& j);
nlohmann::json schema_to_json(const CsvSchema& schema);

Table load_csv(const std::filesystem::path& path, const CsvSchema& schema = {});
Table parse_csv(const std::string& text, const CsvSchema& schema = {});

Table select_rows(const Table& table, const IndexList& rows);
Matrix select_rows(const Matrix& m, const IndexList& rows);
Vector select_rows(const Vector& v, const IndexList& rows);

/// m rows drawn without replacement, in seeded random order.
Table subsample(const Table& table, Index m, std::uint64_t seed);

struct SplitFractions {
  double test = 0.10;  // of all rows
  double cal = 0.10;   // of the outer training fold
  double va = 0.20;    // of TV
};

/// Nested partition: all = test + train, train = tv + cal, tv = tr + va.
struct SplitPlan {
  std::uint64_t seed = 0;
  Index n = 0;
  IndexList test_idx, tv_idx, tr_idx, va_idx, cal_idx;

  bool operator==(const SplitPlan&) const = default;
};

SplitPlan make_split_plan(Index n, std::uint64_t seed, const SplitFractions& fractions = {});
nlohmann::json split_plan_to_json(const SplitPlan& plan);
SplitPlan split_plan_from_json(const nlohmann::json& j);
/// Content hash of the index lists, used to prove that ablation arms share splits.
std::string split_plan_hash(const SplitPlan& plan);

struct ZScaler {
  double mu = 0.0;
  double sigma = 1.0;

  double apply(double v) const { return (v - mu) / sigma; }
  double invert(double z) const { return z * sigma + mu; }
  Vector apply(const Vector& v) const;
  Vector invert(const Vector& z) const;
};

/// Population statistics; a zero-variance input gets sigma = 1.
ZScaler fit_zscaler(const Vector& values);

struct ColumnScaler {
  Vector means;
  Vector stds;

  Matrix apply(const Matrix& x) const;
  Vector apply_row(const Vector& row) const;
};

ColumnScaler fit_column_scaler(const Matrix& x);

/// Appends anchor_z as a trailing column.
Matrix augment_with_anchor(const Matrix& features, const Vector& anchor_z);

nlohmann::json zscaler_to_json(const ZScaler& s);
ZScaler zscaler_from_json(const nlohmann::json& j);
nlohmann::json column_scaler_to_json(const ColumnScaler& s);
ColumnScaler column_scaler_from_json(const nlohmann::json& j);

}  // namespace amoe
