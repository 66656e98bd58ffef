#include "amoe/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iterator>
#include <map>
#include <set>
#include <sstream>

#include "amoe/error.hpp"
#include "amoe/hash.hpp"
#include "amoe/rng.hpp"

namespace amoe {

namespace {

using Row = std::vector<std::string>;

// RFC-4180 records: quoted fields may contain delimiters, doubled quotes and newlines.
std::vector<Row> split_records(const std::string& text, char delim) {
  std::vector<Row> rows;
  Row row;
  std::string field;
  bool quoted = false;
  bool any = false;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field.push_back(c);
      }
      continue;
    }
    if (c == '"') {
      quoted = true;
      any = true;
    } else if (c == delim) {
      row.push_back(std::move(field));
      field.clear();
      any = true;
    } else if (c == '\n' || c == '\r') {
      if (c == '\r' && i + 1 < text.size() && text[i + 1] == '\n') ++i;
      if (any || !field.empty()) {
        row.push_back(std::move(field));
        rows.push_back(std::move(row));
      }
      row.clear();
      field.clear();
      any = false;
    } else {
      field.push_back(c);
      any = true;
    }
  }
  if (quoted) throw DataError("unterminated quoted field");
  if (any || !field.empty()) {
    row.push_back(std::move(field));
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t");
  return s.substr(b, e - b + 1);
}

bool is_missing_token(const std::string& s) {
  static const std::set<std::string> kTokens = {"", "NA", "N/A", "NaN", "nan", "NAN", "?", "null", "NULL"};
  return kTokens.count(s) != 0;
}

std::optional<double> parse_number(const std::string& s) {
  double v = 0.0;
  const char* first = s.data();
  const char* last = s.data() + s.size();
  if (first != last && *first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last) return std::nullopt;
  return v;
}

Index resolve_target(const Row& header, bool has_header, const CsvSchema& schema) {
  const auto ncols = static_cast<Index>(header.size());
  if (schema.target_name) {
    if (!has_header) throw DataError("target column named but file has no header");
    const auto it = std::find(header.begin(), header.end(), *schema.target_name);
    if (it == header.end()) throw DataError("missing target column '" + *schema.target_name + "'");
    return it - header.begin();
  }
  Index idx = schema.target_index.value_or(-1);
  if (idx < 0) idx += ncols;
  if (idx < 0 || idx >= ncols) throw DataError("missing target column index " + std::to_string(idx));
  return idx;
}

}  // namespace

CsvSchema schema_from_json(const nlohmann::json& j) {
  CsvSchema s;
  if (j.contains("target")) {
    if (j["target"].is_number_integer())
      s.target_index = j["target"].get<int>();
    else
      s.target_name = j["target"].get<std::string>();
  }
  if (j.contains("has_header")) s.has_header = j["has_header"].get<bool>();
  if (j.contains("delimiter")) {
    const auto d = j["delimiter"].get<std::string>();
    if (d.size() != 1) throw UsageError("delimiter must be a single character");
    s.delimiter = d[0];
  }
  if (j.contains("categorical")) s.categorical = j["categorical"].get<std::vector<std::string>>();
  if (j.contains("drop")) s.drop = j["drop"].get<std::vector<std::string>>();
  if (j.contains("missing")) {
    const auto m = j["missing"].get<std::string>();
    if (m == "reject")
      s.missing = MissingPolicy::kReject;
    else if (m == "constant")
      s.missing = MissingPolicy::kConstant;
    else
      throw UsageError("missing policy must be 'reject' or 'constant'");
  }
  if (j.contains("missing_fill")) s.missing_fill = j["missing_fill"].get<double>();
  if (j.contains("min_rows")) s.min_rows = j["min_rows"].get<std::size_t>();
  return s;
}

nlohmann::json schema_to_json(const CsvSchema& s) {
  nlohmann::json j;
  if (s.target_name)
    j["target"] = *s.target_name;
  else
    j["target"] = s.target_index.value_or(-1);
  if (s.has_header) j["has_header"] = *s.has_header;
  j["delimiter"] = std::string(1, s.delimiter);
  j["categorical"] = s.categorical;
  j["drop"] = s.drop;
  j["missing"] = s.missing == MissingPolicy::kReject ? "reject" : "constant";
  j["missing_fill"] = s.missing_fill;
  j["min_rows"] = s.min_rows;
  return j;
}

Table parse_csv(const std::string& text, const CsvSchema& schema) {
  auto records = split_records(text, schema.delimiter);
  if (records.empty()) throw DataError("empty csv");
  for (auto& r : records)
    for (auto& f : r) f = trim(f);

  const std::size_t width = records.front().size();
  for (std::size_t i = 0; i < records.size(); ++i)
    if (records[i].size() != width)
      throw DataError("row " + std::to_string(i + 1) + " has " + std::to_string(records[i].size()) +
                      " fields, expected " + std::to_string(width));

  bool has_header = false;
  if (schema.has_header) {
    has_header = *schema.has_header;
  } else {
    for (const auto& f : records.front())
      if (!is_missing_token(f) && !parse_number(f)) has_header = true;
  }

  Row header;
  if (has_header) {
    header = records.front();
    records.erase(records.begin());
  } else {
    for (std::size_t c = 0; c < width; ++c) header.push_back("x" + std::to_string(c));
  }

  const Index target_col = resolve_target(header, has_header, schema);
  const std::set<std::string> categorical(schema.categorical.begin(), schema.categorical.end());
  const std::set<std::string> dropped(schema.drop.begin(), schema.drop.end());
  if (categorical.count(header[target_col]) != 0) throw DataError("target column cannot be categorical");

  // Output column plan: numeric columns map 1:1, categorical ones expand to sorted levels.
  struct OutCol {
    std::size_t src;
    std::optional<std::string> level;
  };
  std::vector<OutCol> plan;
  std::vector<std::string> names;
  for (std::size_t c = 0; c < width; ++c) {
    if (static_cast<Index>(c) == target_col || dropped.count(header[c]) != 0) continue;
    if (categorical.count(header[c]) != 0) {
      std::set<std::string> levels;
      for (const auto& r : records) {
        if (is_missing_token(r[c]))
          throw DataError("missing value in categorical column '" + header[c] + "'");
        levels.insert(r[c]);
      }
      for (const auto& lv : levels) {
        plan.push_back({c, lv});
        names.push_back(header[c] + "=" + lv);
      }
    } else {
      plan.push_back({c, std::nullopt});
      names.push_back(header[c]);
    }
  }

  const auto n = static_cast<Index>(records.size());
  Table table;
  table.features.resize(n, static_cast<Index>(plan.size()));
  table.target.resize(n);
  table.column_names = names;
  table.target_name = header[target_col];

  auto numeric = [&](const std::string& cell, std::size_t row, std::size_t col) {
    if (is_missing_token(cell)) {
      if (schema.missing == MissingPolicy::kConstant && static_cast<Index>(col) != target_col)
        return schema.missing_fill;
      throw DataError("missing value at row " + std::to_string(row + 1) + ", column '" + header[col] + "'");
    }
    const auto v = parse_number(cell);
    if (!v) {
      throw DataError("non-numeric value '" + cell + "' at row " + std::to_string(row + 1) +
                      ", column '" + header[col] + "'");
    }
    if (!std::isfinite(*v))
      throw DataError("missing value (non-finite) at row " + std::to_string(row + 1) + ", column '" + header[col] + "'");
    return *v;
  };

  for (Index i = 0; i < n; ++i) {
    const auto& r = records[static_cast<std::size_t>(i)];
    table.target(i) = numeric(r[target_col], static_cast<std::size_t>(i), static_cast<std::size_t>(target_col));
    for (std::size_t k = 0; k < plan.size(); ++k) {
      const auto& oc = plan[k];
      table.features(i, static_cast<Index>(k)) =
          oc.level ? (r[oc.src] == *oc.level ? 1.0 : 0.0) : numeric(r[oc.src], static_cast<std::size_t>(i), oc.src);
    }
  }

  if (static_cast<std::size_t>(n) < schema.min_rows)
    throw DataError("need at least " + std::to_string(schema.min_rows) + " rows, got " + std::to_string(n));
  if (table.cols() < 1) throw DataError("no feature columns");
  return table;
}

Table load_csv(const std::filesystem::path& path, const CsvSchema& schema) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("missing file: " + path.string());
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_csv(text, schema);
}

Matrix select_rows(const Matrix& m, const IndexList& rows) {
  Matrix out(static_cast<Index>(rows.size()), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Index>(i)) = m.row(rows[i]);
  return out;
}

Vector select_rows(const Vector& v, const IndexList& rows) {
  Vector out(static_cast<Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) out(static_cast<Index>(i)) = v(rows[i]);
  return out;
}

Table select_rows(const Table& table, const IndexList& rows) {
  Table out;
  out.features = select_rows(table.features, rows);
  out.target = select_rows(table.target, rows);
  out.column_names = table.column_names;
  out.target_name = table.target_name;
  return out;
}

Table subsample(const Table& table, Index m, std::uint64_t seed) {
  if (m < 0 || m > table.rows())
    throw DataError("cannot subsample " + std::to_string(m) + " rows from " + std::to_string(table.rows()));
  IndexList perm(static_cast<std::size_t>(table.rows()));
  for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = static_cast<Index>(i);
  Rng rng(seed);
  rng.shuffle(perm);
  perm.resize(static_cast<std::size_t>(m));
  return select_rows(table, perm);
}

SplitPlan make_split_plan(Index n, std::uint64_t seed, const SplitFractions& f) {
  if (n < 10) throw DataError("split needs n >= 10, got " + std::to_string(n));
  auto valid = [](double x) { return x > 0.0 && x < 1.0; };
  if (!valid(f.test) || !valid(f.cal) || !valid(f.va)) throw UsageError("split fractions must lie in (0, 1)");

  const auto n_test = static_cast<Index>(std::floor(f.test * static_cast<double>(n)));
  const Index n_train = n - n_test;
  const auto n_cal = static_cast<Index>(std::floor(f.cal * static_cast<double>(n_train)));
  const Index n_tv = n_train - n_cal;
  const auto n_va = static_cast<Index>(std::floor(f.va * static_cast<double>(n_tv)));
  const Index n_tr = n_tv - n_va;
  if (n_test < 1 || n_cal < 1 || n_va < 1 || n_tr < 1) {
    throw DataError("split of n=" + std::to_string(n) + " leaves an empty partition (test=" + std::to_string(n_test) +
                    ", cal=" + std::to_string(n_cal) + ", va=" + std::to_string(n_va) +
                    ", tr=" + std::to_string(n_tr) + ")");
  }

  IndexList perm(static_cast<std::size_t>(n));
  for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = static_cast<Index>(i);
  Rng rng(seed);
  rng.shuffle(perm);

  SplitPlan plan;
  plan.seed = seed;
  plan.n = n;
  auto it = perm.begin();
  plan.test_idx.assign(it, it + n_test);
  it += n_test;
  plan.cal_idx.assign(it, it + n_cal);
  it += n_cal;
  plan.tv_idx.assign(it, perm.end());
  plan.va_idx.assign(it, it + n_va);
  it += n_va;
  plan.tr_idx.assign(it, perm.end());
  return plan;
}

nlohmann::json split_plan_to_json(const SplitPlan& p) {
  return {{"seed", p.seed}, {"n", p.n},         {"test", p.test_idx}, {"tv", p.tv_idx},
          {"tr", p.tr_idx}, {"va", p.va_idx}, {"cal", p.cal_idx}};
}

SplitPlan split_plan_from_json(const nlohmann::json& j) {
  SplitPlan p;
  p.seed = j.at("seed").get<std::uint64_t>();
  p.n = j.at("n").get<Index>();
  p.test_idx = j.at("test").get<IndexList>();
  p.tv_idx = j.at("tv").get<IndexList>();
  p.tr_idx = j.at("tr").get<IndexList>();
  p.va_idx = j.at("va").get<IndexList>();
  p.cal_idx = j.at("cal").get<IndexList>();
  return p;
}

std::string split_plan_hash(const SplitPlan& p) {
  Fnv1a h;
  h.update_value(p.n);
  for (const IndexList* list : {&p.test_idx, &p.tv_idx, &p.tr_idx, &p.va_idx, &p.cal_idx}) {
    h.update_value(list->size());
    h.update(list->data(), list->size() * sizeof(Index));
  }
  return h.hex();
}

Vector ZScaler::apply(const Vector& v) const { return (v.array() - mu) / sigma; }
Vector ZScaler::invert(const Vector& z) const { return z.array() * sigma + mu; }

ZScaler fit_zscaler(const Vector& values) {
  if (values.size() == 0) throw DataError("cannot fit a z-scaler on an empty vector");
  ZScaler s;
  s.mu = values.mean();
  const double var = (values.array() - s.mu).square().mean();
  s.sigma = var > 0.0 ? std::sqrt(var) : 1.0;
  return s;
}

Matrix ColumnScaler::apply(const Matrix& x) const {
  if (x.cols() != means.size()) throw DataError("column scaler width mismatch");
  Matrix out = x;
  for (Index c = 0; c < x.cols(); ++c) out.col(c) = (x.col(c).array() - means(c)) / stds(c);
  return out;
}

Vector ColumnScaler::apply_row(const Vector& row) const {
  if (row.size() != means.size()) throw DataError("column scaler width mismatch");
  return (row - means).cwiseQuotient(stds);
}

ColumnScaler fit_column_scaler(const Matrix& x) {
  if (x.rows() == 0) throw DataError("cannot fit a column scaler on zero rows");
  ColumnScaler s;
  s.means = x.colwise().mean().transpose();
  s.stds.resize(x.cols());
  for (Index c = 0; c < x.cols(); ++c) {
    const double var = (x.col(c).array() - s.means(c)).square().mean();
    s.stds(c) = var > 0.0 ? std::sqrt(var) : 1.0;
  }
  return s;
}

Matrix augment_with_anchor(const Matrix& features, const Vector& anchor_z) {
  if (features.rows() != anchor_z.size())
    throw DataError("anchor length " + std::to_string(anchor_z.size()) + " does not match " +
                    std::to_string(features.rows()) + " rows");
  Matrix out(features.rows(), features.cols() + 1);
  out.leftCols(features.cols()) = features;
  out.col(features.cols()) = anchor_z;
  return out;
}

nlohmann::json zscaler_to_json(const ZScaler& s) { return {{"mu", s.mu}, {"sigma", s.sigma}}; }

ZScaler zscaler_from_json(const nlohmann::json& j) {
  return {j.at("mu").get<double>(), j.at("sigma").get<double>()};
}

nlohmann::json column_scaler_to_json(const ColumnScaler& s) {
  return {{"means", std::vector<double>(s.means.data(), s.means.data() + s.means.size())},
          {"stds", std::vector<double>(s.stds.data(), s.stds.data() + s.stds.size())}};
}

ColumnScaler column_scaler_from_json(const nlohmann::json& j) {
  const auto m = j.at("means").get<std::vector<double>>();
  const auto s = j.at("stds").get<std::vector<double>>();
  if (m.size() != s.size()) throw DataError("column scaler means/stds length mismatch");
  ColumnScaler out;
  out.means = Eigen::Map<const Vector>(m.data(), static_cast<Index>(m.size()));
  out.stds = Eigen::Map<const Vector>(s.data(), static_cast<Index>(s.size()));
  return out;
}

}  // namespace amoe
