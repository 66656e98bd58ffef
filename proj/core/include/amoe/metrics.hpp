#pragma once

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "amoe/dataset.hpp"
#include "amoe/density.hpp"
#include "amoe/types.hpp"

namespace amoe {

// Unit tags keep target-unit and standardized quantities apart at compile time.
struct OriginalUnits {};
struct ZUnits {};

template <typename Unit>
struct Series {
  Vector values;

  Series() = default;
  explicit Series(Vector v) : values(std::move(v)) {}
  Index size() const { return values.size(); }
};

using OriginalSeries = Series<OriginalUnits>;
using ZSeries = Series<ZUnits>;

inline OriginalSeries to_original(const ZScaler& s, const ZSeries& z) { return OriginalSeries(s.invert(z.values)); }
inline ZSeries to_z(const ZScaler& s, const OriginalSeries& o) { return ZSeries(s.apply(o.values)); }

double rmse(const Vector& pred, const Vector& truth);

template <typename Unit>
double rmse(const Series<Unit>& pred, const Series<Unit>& truth) {
  return rmse(pred.values, truth.values);
}

/// Mean negative log density in nats; only standardized targets are accepted.
double nll(const std::vector<MixtureDensity>& densities, const ZSeries& y);

/// Closed-form CRPS of a Gaussian mixture.
double crps_gaussian_mixture(const MixtureDensity& density, double y);
double mean_crps(const std::vector<MixtureDensity>& densities, const ZSeries& y);

struct CrpsBounds {
  double r_f = 1.0;
  double r_y = 1.0;
  double sigma_max = 1.0;

  double bound() const;  // r_f + r_y + sqrt(2/pi) * sigma_max
};

struct CrpsBoundResult {
  bool preconditions_ok = true;
  std::string violation;  // which precondition failed
  double crps = 0.0;
  double bound = 0.0;
  bool holds = true;      // crps <= bound
};

CrpsBoundResult crps_bound_check(const MixtureDensity& density, double y, const CrpsBounds& bounds);

struct RunReport {
  std::string dataset;
  std::uint64_t seed = 0;
  double rmse_original = 0.0;
  double nll_z = 0.0;
  double crps_z = 0.0;
  Index n_test = 0;
  int t_gbdt = 0;
  int t_moe = 0;
};

struct MetricSummary {
  double mean = 0.0;
  double stderr_ = 0.0;
};

struct AggregateReport {
  std::string dataset;
  std::size_t runs = 0;
  bool stderr_defined = false;  // false for a single run, stderr then reported as 0
  MetricSummary rmse_original, nll_z, crps_z, t_gbdt, t_moe;
};

/// Mean and standard error (sample std / sqrt(n)).
MetricSummary summarize(const std::vector<double>& values);
AggregateReport aggregate(const std::vector<RunReport>& reports);

nlohmann::json run_report_to_json(const RunReport& r);
RunReport run_report_from_json(const nlohmann::json& j);
nlohmann::json aggregate_to_json(const AggregateReport& a);

std::string runs_to_csv(const std::vector<RunReport>& runs);
std::string aggregate_to_csv(const AggregateReport& a);
/// Rows of "dataset | NLL | RMSE" style tables with mean +- stderr cells.
std::string aggregates_to_markdown(const std::vector<AggregateReport>& reports);

/// Quotes a field when RFC 4180 requires it.
std::string csv_field(const std::string& s);
/// Shortest round-trip decimal form.
std::string format_double(double v);

}  // namespace amoe
