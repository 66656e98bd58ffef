#include "amoe/metrics.hpp"

#include <charconv>
#include <cmath>
#include <numbers>
#include <sstream>

#include "amoe/error.hpp"

namespace amoe {

namespace {

// A(m, v) = E|m + sqrt(v) Z| for standard normal Z.
double folded_mean(double m, double v) {
  const double s = std::sqrt(v);
  const double u = m / s;
  return m * (2.0 * normal_cdf(u) - 1.0) + 2.0 * s * normal_pdf(u);
}

std::string pm(const MetricSummary& m, int digits) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(digits);
  os << m.mean << " ± " << m.stderr_;
  return os.str();
}

}  // namespace

double rmse(const Vector& pred, const Vector& truth) {
  if (pred.size() != truth.size()) throw std::invalid_argument("rmse: length mismatch");
  if (pred.size() == 0) throw std::invalid_argument("rmse: empty input");
  return std::sqrt((pred - truth).squaredNorm() / static_cast<double>(pred.size()));
}

double nll(const std::vector<MixtureDensity>& densities, const ZSeries& y) {
  if (static_cast<Index>(densities.size()) != y.size()) throw std::invalid_argument("nll: length mismatch");
  if (densities.empty()) throw std::invalid_argument("nll: empty input");
  double s = 0.0;
  for (std::size_t i = 0; i < densities.size(); ++i) s -= densities[i].log_pdf(y.values(static_cast<Index>(i)));
  return s / static_cast<double>(densities.size());
}

double crps_gaussian_mixture(const MixtureDensity& d, double y) {
  double first = 0.0, second = 0.0;
  const auto& c = d.components;
  for (std::size_t i = 0; i < c.size(); ++i) {
    first += c[i].weight * folded_mean(y - c[i].mean, c[i].stddev * c[i].stddev);
    for (std::size_t j = 0; j < c.size(); ++j)
      second += c[i].weight * c[j].weight *
                folded_mean(c[i].mean - c[j].mean, c[i].stddev * c[i].stddev + c[j].stddev * c[j].stddev);
  }
  return first - 0.5 * second;
}

double mean_crps(const std::vector<MixtureDensity>& densities, const ZSeries& y) {
  if (static_cast<Index>(densities.size()) != y.size()) throw std::invalid_argument("crps: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < densities.size(); ++i) s += crps_gaussian_mixture(densities[i], y.values(static_cast<Index>(i)));
  return s / static_cast<double>(densities.size());
}

double CrpsBounds::bound() const { return r_f + r_y + std::sqrt(2.0 / std::numbers::pi) * sigma_max; }

CrpsBoundResult crps_bound_check(const MixtureDensity& d, double y, const CrpsBounds& b) {
  CrpsBoundResult r;
  if (std::abs(y) > b.r_y) {
    r.preconditions_ok = false;
    r.violation = "|y| > R_y";
  }
  for (const auto& c : d.components) {
    if (std::abs(c.mean) > b.r_f) {
      r.preconditions_ok = false;
      r.violation = "|mean| > R_f";
    }
    if (c.stddev > b.sigma_max) {
      r.preconditions_ok = false;
      r.violation = "stddev > sigma_max";
    }
  }
  r.crps = crps_gaussian_mixture(d, y);
  r.bound = b.bound();
  r.holds = r.crps <= r.bound;
  return r;
}

MetricSummary summarize(const std::vector<double>& v) {
  MetricSummary m;
  if (v.empty()) return m;
  double s = 0.0;
  for (double x : v) s += x;
  m.mean = s / static_cast<double>(v.size());
  if (v.size() > 1) {
    double ss = 0.0;
    for (double x : v) ss += (x - m.mean) * (x - m.mean);
    m.stderr_ = std::sqrt(ss / static_cast<double>(v.size() - 1)) / std::sqrt(static_cast<double>(v.size()));
  }
  return m;
}

AggregateReport aggregate(const std::vector<RunReport>& reports) {
  if (reports.empty()) throw std::invalid_argument("aggregate needs at least one run");
  AggregateReport a;
  a.dataset = reports.front().dataset;
  std::vector<double> rm, nl, cr, tg, tm;
  for (const auto& r : reports) {
    if (r.dataset != a.dataset) throw std::invalid_argument("aggregate over mixed datasets");
    rm.push_back(r.rmse_original);
    nl.push_back(r.nll_z);
    cr.push_back(r.crps_z);
    tg.push_back(r.t_gbdt);
    tm.push_back(r.t_moe);
  }
  a.runs = reports.size();
  a.stderr_defined = a.runs > 1;
  a.rmse_original = summarize(rm);
  a.nll_z = summarize(nl);
  a.crps_z = summarize(cr);
  a.t_gbdt = summarize(tg);
  a.t_moe = summarize(tm);
  return a;
}

nlohmann::json run_report_to_json(const RunReport& r) {
  return {{"dataset", r.dataset}, {"seed", r.seed},   {"rmse_original", r.rmse_original},
          {"nll_z", r.nll_z},     {"crps_z", r.crps_z}, {"n_test", r.n_test},
          {"t_gbdt", r.t_gbdt},   {"t_moe", r.t_moe}};
}

RunReport run_report_from_json(const nlohmann::json& j) {
  RunReport r;
  r.dataset = j.at("dataset").get<std::string>();
  r.seed = j.at("seed").get<std::uint64_t>();
  r.rmse_original = j.at("rmse_original").get<double>();
  r.nll_z = j.at("nll_z").get<double>();
  r.crps_z = j.at("crps_z").get<double>();
  r.n_test = j.at("n_test").get<Index>();
  r.t_gbdt = j.at("t_gbdt").get<int>();
  r.t_moe = j.at("t_moe").get<int>();
  return r;
}

nlohmann::json aggregate_to_json(const AggregateReport& a) {
  auto m = [](const MetricSummary& s) { return nlohmann::json{{"mean", s.mean}, {"stderr", s.stderr_}}; };
  return {{"dataset", a.dataset},
          {"runs", a.runs},
          {"stderr_defined", a.stderr_defined},
          {"rmse_original", m(a.rmse_original)},
          {"nll_z", m(a.nll_z)},
          {"crps_z", m(a.crps_z)},
          {"t_gbdt", m(a.t_gbdt)},
          {"t_moe", m(a.t_moe)}};
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + '"';
}

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::string runs_to_csv(const std::vector<RunReport>& runs) {
  std::string out = "dataset,seed,rmse_original,nll_z,crps_z,n_test,t_gbdt,t_moe\r\n";
  for (const auto& r : runs) {
    out += csv_field(r.dataset) + ',' + std::to_string(r.seed) + ',' + format_double(r.rmse_original) + ',' +
           format_double(r.nll_z) + ',' + format_double(r.crps_z) + ',' + std::to_string(r.n_test) + ',' +
           std::to_string(r.t_gbdt) + ',' + std::to_string(r.t_moe) + "\r\n";
  }
  return out;
}

std::string aggregate_to_csv(const AggregateReport& a) {
  std::string out = "dataset,runs,stderr_defined,metric,mean,stderr\r\n";
  const std::pair<const char*, const MetricSummary*> rows[] = {{"rmse_original", &a.rmse_original},
                                                               {"nll_z", &a.nll_z},
                                                               {"crps_z", &a.crps_z},
                                                               {"t_gbdt", &a.t_gbdt},
                                                               {"t_moe", &a.t_moe}};
  for (const auto& [name, m] : rows) {
    out += csv_field(a.dataset) + ',' + std::to_string(a.runs) + ',' + (a.stderr_defined ? "true" : "false") + ',' +
           name + ',' + format_double(m->mean) + ',' + format_double(m->stderr_) + "\r\n";
  }
  return out;
}

std::string aggregates_to_markdown(const std::vector<AggregateReport>& reports) {
  std::string out = "| Dataset | Runs | NLL (z) | RMSE | CRPS (z) |\n|---|---:|---:|---:|---:|\n";
  for (const auto& a : reports) {
    out += "| " + a.dataset + " | " + std::to_string(a.runs) + " | " + pm(a.nll_z, 2) + " | " + pm(a.rmse_original, 2) +
           " | " + pm(a.crps_z, 3) + " |\n";
  }
  return out;
}

}  // namespace amoe
