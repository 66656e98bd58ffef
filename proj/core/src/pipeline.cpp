#include "amoe/pipeline.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <mutex>
#include <sstream>
#include <thread>

#include "amoe/error.hpp"
#include "amoe/hash.hpp"
#include "amoe/rng.hpp"

namespace amoe {

namespace fs = std::filesystem;

// ---- configuration ----------------------------------------------------------

void RunConfig::resolve() {
  if (no_anchor) moe.mode = AnchorMode::kFree;
  if (no_router) moe.use_router = false;
  if (dataset.empty() && !data_path.empty()) dataset = data_path.stem().string();
}

void RunConfig::validate() const {
  if (n_runs < 1) throw UsageError("n_runs must be at least 1");
  if (no_anchor && moe.mode != AnchorMode::kFree) throw UsageError("no_anchor requires mode=free");
  if (no_router && moe.use_router) throw UsageError("no_router requires the router to be disabled");
  if (workers < 0) throw UsageError("workers must be >= 0");
  if (subsample && *subsample < 10) throw UsageError("subsample must keep at least 10 rows");
  moe.validate();
  train.validate();
}

nlohmann::json gbdt_config_to_json(const GbdtConfig& c) {
  return {{"max_stages", c.max_stages}, {"max_depth", c.max_depth}, {"shrinkage", c.shrinkage}, {"min_leaf", c.min_leaf}};
}

GbdtConfig gbdt_config_from_json(const nlohmann::json& j, GbdtConfig c) {
  c.max_stages = j.value("max_stages", c.max_stages);
  c.max_depth = j.value("max_depth", c.max_depth);
  c.shrinkage = j.value("shrinkage", c.shrinkage);
  c.min_leaf = j.value("min_leaf", c.min_leaf);
  return c;
}

nlohmann::json run_config_to_json(const RunConfig& c) {
  nlohmann::json j;
  j["dataset"] = c.dataset;
  j["data_path"] = c.data_path.string();
  j["schema"] = schema_to_json(c.schema);
  j["subsample"] = c.subsample ? nlohmann::json(*c.subsample) : nlohmann::json(nullptr);
  j["fractions"] = {{"test", c.fractions.test}, {"cal", c.fractions.cal}, {"va", c.fractions.va}};
  j["gbdt"] = gbdt_config_to_json(c.gbdt);
  j["gbdt"]["stage_criterion"] = c.stage_criterion == StageCriterion::kValidationRmse ? "rmse" : "loglik";
  j["moe"] = moe_config_to_json(c.moe);
  j["train"] = train_config_to_json(c.train);
  j["calibration_units"] = c.calibration_units == CalibrationUnits::kOriginal ? "original" : "z";
  j["n_runs"] = c.n_runs;
  j["seed_base"] = c.seed_base;
  j["ablation"] = {{"no_anchor", c.no_anchor}, {"no_router", c.no_router}, {"no_calibration", c.no_calibration}};
  j["workers"] = c.workers;
  j["output_dir"] = c.output_dir.string();
  return j;
}

RunConfig run_config_from_json(const nlohmann::json& j, RunConfig c) {
  try {
    c.dataset = j.value("dataset", c.dataset);
    if (j.contains("data_path")) c.data_path = j.at("data_path").get<std::string>();
    if (j.contains("schema")) c.schema = schema_from_json(j.at("schema"));
    if (j.contains("subsample")) {
      if (j.at("subsample").is_null()) c.subsample.reset();
      else c.subsample = j.at("subsample").get<Index>();
    }
    if (j.contains("fractions")) {
      const auto& f = j.at("fractions");
      c.fractions.test = f.value("test", c.fractions.test);
      c.fractions.cal = f.value("cal", c.fractions.cal);
      c.fractions.va = f.value("va", c.fractions.va);
    }
    if (j.contains("gbdt")) {
      c.gbdt = gbdt_config_from_json(j.at("gbdt"), c.gbdt);
      const auto crit = j.at("gbdt").value("stage_criterion", std::string("rmse"));
      if (crit == "rmse") c.stage_criterion = StageCriterion::kValidationRmse;
      else if (crit == "loglik") c.stage_criterion = StageCriterion::kValidationLogLik;
      else throw UsageError("unknown stage_criterion '" + crit + "'");
    }
    if (j.contains("moe")) {
      nlohmann::json m = moe_config_to_json(c.moe);
      m.update(j.at("moe"));
      c.moe = moe_config_from_json(m);
    }
    if (j.contains("train")) {
      nlohmann::json t = train_config_to_json(c.train);
      t.update(j.at("train"));
      c.train = train_config_from_json(t);
    }
    if (j.contains("calibration_units")) {
      const auto u = j.at("calibration_units").get<std::string>();
      if (u == "original") c.calibration_units = CalibrationUnits::kOriginal;
      else if (u == "z") c.calibration_units = CalibrationUnits::kZ;
      else throw UsageError("unknown calibration_units '" + u + "'");
    }
    c.n_runs = j.value("n_runs", c.n_runs);
    c.seed_base = j.value("seed_base", c.seed_base);
    if (j.contains("ablation")) {
      const auto& a = j.at("ablation");
      c.no_anchor = a.value("no_anchor", c.no_anchor);
      c.no_router = a.value("no_router", c.no_router);
      c.no_calibration = a.value("no_calibration", c.no_calibration);
    }
    c.workers = j.value("workers", c.workers);
    if (j.contains("output_dir")) c.output_dir = j.at("output_dir").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw UsageError(std::string("bad config: ") + e.what());
  }
  return c;
}

// ---- checkpoint ---------------------------------------------------------------

TrainData Checkpoint::prepare(const Matrix& raw, const Vector* y) const {
  TrainData d;
  Matrix aug = raw;
  if (use_anchor) {
    if (raw.cols() != anchor.num_features) throw DataError("feature count does not match the model");
    aug = augment_with_anchor(raw, y_scaler.apply(predict_anchor(anchor, raw)));
    d.anchor_z = aug.col(aug.cols() - 1);
  } else {
    d.anchor_z = Vector::Zero(raw.rows());
  }
  if (aug.cols() != x_scaler.means.size()) throw DataError("feature count does not match the model");
  d.x = x_scaler.apply(aug);
  d.y = y ? y_scaler.apply(*y) : Vector::Zero(raw.rows());
  return d;
}

std::vector<MixtureDensity> Checkpoint::densities(const Matrix& raw) const {
  const TrainData d = prepare(raw);
  return network.densities(d.x, d.anchor_z);
}

Vector Checkpoint::predict_mean(const Matrix& raw) const {
  const auto dens = densities(raw);
  Vector mz(static_cast<Index>(dens.size()));
  for (std::size_t i = 0; i < dens.size(); ++i) mz(static_cast<Index>(i)) = dens[i].mean();
  if (!calibrate) return y_scaler.invert(mz);
  if (calibration.units == CalibrationUnits::kZ) return y_scaler.invert(calibration.apply(mz));
  return calibration.apply(y_scaler.invert(mz));
}

nlohmann::json Checkpoint::to_json() const {
  nlohmann::json j;
  j["use_anchor"] = use_anchor;
  if (use_anchor) j["anchor"] = gbdt_to_json(anchor);
  j["y_scaler"] = zscaler_to_json(y_scaler);
  j["x_scaler"] = column_scaler_to_json(x_scaler);
  j["network"] = network.to_json();
  j["calibration"] = calibration_to_json(calibration);
  j["calibrate"] = calibrate;
  return j;
}

Checkpoint Checkpoint::from_json(const nlohmann::json& j) {
  try {
    Checkpoint c;
    c.use_anchor = j.at("use_anchor").get<bool>();
    if (c.use_anchor) c.anchor = gbdt_from_json(j.at("anchor"));
    c.y_scaler = zscaler_from_json(j.at("y_scaler"));
    c.x_scaler = column_scaler_from_json(j.at("x_scaler"));
    c.network = MoeNetwork::from_json(j.at("network"));
    c.calibration = calibration_from_json(j.at("calibration"));
    c.calibrate = j.value("calibrate", true);
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("corrupt checkpoint: ") + e.what());
  }
}

// ---- one run ------------------------------------------------------------------

namespace {

struct FoldPrep {
  bool use_anchor = true;
  const GbdtModel* anchor = nullptr;
  ZScaler y;
  ColumnScaler x;
};

Matrix augmented(const Matrix& raw, const FoldPrep& p) {
  if (!p.use_anchor) return raw;
  return augment_with_anchor(raw, p.y.apply(predict_anchor(*p.anchor, raw)));
}

TrainData make_data(const Matrix& aug, const Vector& y, const FoldPrep& p) {
  TrainData d;
  d.x = p.x.apply(aug);
  d.anchor_z = p.use_anchor ? Vector(aug.col(aug.cols() - 1)) : Vector::Zero(aug.rows());
  d.y = p.y.apply(y);
  return d;
}

Vector predictive_means(const std::vector<MixtureDensity>& dens) {
  Vector m(static_cast<Index>(dens.size()));
  for (std::size_t i = 0; i < dens.size(); ++i) m(static_cast<Index>(i)) = dens[i].mean();
  return m;
}

}  // namespace

RunOutcome run_single(const Table& table, const RunConfig& cfg_in, std::uint64_t seed, const SnapshotHook& snapshot) {
  RunConfig cfg = cfg_in;
  cfg.resolve();
  cfg.validate();
  const bool use_anchor = !cfg.no_anchor;

  RunOutcome out;
  out.plan = make_split_plan(table.rows(), seed, cfg.fractions);
  const auto& plan = out.plan;
  const Matrix x_tr = select_rows(table.features, plan.tr_idx), x_va = select_rows(table.features, plan.va_idx);
  const Vector y_tr = select_rows(table.target, plan.tr_idx), y_va = select_rows(table.target, plan.va_idx);
  const Matrix x_tv = select_rows(table.features, plan.tv_idx);
  const Vector y_tv = select_rows(table.target, plan.tv_idx);

  // Anchor: choose the stage count on TR/VA, then refit on TV with that count.
  GbdtModel f_sub, f_hat;
  int t_gbdt = 0;
  if (use_anchor) {
    f_sub = fit_gbdt(x_tr, y_tr, cfg.gbdt);
    t_gbdt = select_stages(f_sub, x_va, y_va, cfg.stage_criterion);
    f_sub.n_stages = t_gbdt;
    f_hat = fit_gbdt_stages(x_tv, y_tv, cfg.gbdt, t_gbdt);
    if (!same_protocol(f_sub, f_hat)) throw NumericalError("anchor refit does not match the selected protocol");
  }

  // Phase 1 on TR/VA with TR statistics.
  FoldPrep p1{use_anchor, &f_sub, fit_zscaler(y_tr), {}};
  const Matrix aug_tr = augmented(x_tr, p1);
  p1.x = fit_column_scaler(aug_tr);
  const TrainData tr = make_data(aug_tr, y_tr, p1);
  const TrainData va = make_data(augmented(x_va, p1), y_va, p1);

  const MoeNetwork init = MoeNetwork::initialize(cfg.moe, tr.x.cols(), Rng::mix(seed, 1), &tr.x);
  TrainConfig tc = cfg.train;
  tc.seed = Rng::mix(seed, 2);
  EpochHook hook;
  if (snapshot) {
    hook = [&](int epoch, const MoeNetwork& net) {
      Checkpoint c{use_anchor, f_sub, p1.y, p1.x, net, {}, false};
      snapshot(epoch, tc.max_epochs, c);
    };
  }
  Phase1Result ph1 = train_phase1(init, tr, va, tc, hook);
  out.phase1 = std::move(ph1.trace);

  // Phase 2 on TV with TV statistics and the refit anchor.
  FoldPrep p2{use_anchor, &f_hat, fit_zscaler(y_tv), {}};
  const Matrix aug_tv = augmented(x_tv, p2);
  p2.x = fit_column_scaler(aug_tv);
  const TrainData tv = make_data(aug_tv, y_tv, p2);
  Phase2Result ph2 = train_phase2(std::move(ph1.best), tv, ph1.best_epoch, tc);
  out.phase2 = std::move(ph2.trace);

  Checkpoint& ck = out.checkpoint;
  ck.use_anchor = use_anchor;
  ck.anchor = f_hat;
  ck.y_scaler = p2.y;
  ck.x_scaler = p2.x;
  ck.network = std::move(ph2.model);
  ck.calibrate = !cfg.no_calibration;

  // Calibration on CAL.
  const Matrix x_cal = select_rows(table.features, plan.cal_idx);
  const Vector y_cal = select_rows(table.target, plan.cal_idx);
  const Vector cal_mz = predictive_means(ck.densities(x_cal));
  if (cfg.calibration_units == CalibrationUnits::kOriginal)
    ck.calibration = fit_calibration(p2.y.invert(cal_mz), y_cal, CalibrationUnits::kOriginal);
  else
    ck.calibration = fit_calibration(cal_mz, p2.y.apply(y_cal), CalibrationUnits::kZ);

  // Test scoring: NLL and CRPS on the uncalibrated standardized density, RMSE in target units.
  const Matrix x_te = select_rows(table.features, plan.test_idx);
  const Vector y_te = select_rows(table.target, plan.test_idx);
  const auto dens = ck.densities(x_te);
  const ZSeries z_te(p2.y.apply(y_te));
  const OriginalSeries truth(y_te);
  const Vector mz = predictive_means(dens);
  const OriginalSeries raw_means = to_original(p2.y, ZSeries(mz));
  OriginalSeries cal_means;
  if (ck.calibration.units == CalibrationUnits::kOriginal) cal_means = OriginalSeries(ck.calibration.apply(raw_means.values));
  else cal_means = to_original(p2.y, ZSeries(ck.calibration.apply(mz)));

  auto& r = out.report;
  r.dataset = cfg.dataset;
  r.seed = seed;
  r.nll_z = nll(dens, z_te);
  r.crps_z = mean_crps(dens, z_te);
  out.rmse_uncalibrated = rmse(raw_means, truth);
  r.rmse_original = cfg.no_calibration ? out.rmse_uncalibrated : rmse(cal_means, truth);
  r.n_test = y_te.size();
  r.t_gbdt = t_gbdt;
  r.t_moe = ph1.best_epoch;
  if (!std::isfinite(r.nll_z) || !std::isfinite(r.rmse_original) || !std::isfinite(r.crps_z))
    throw NumericalError("non-finite test metrics");
  return out;
}

Table load_dataset(const RunConfig& cfg) {
  if (cfg.data_path.empty()) throw UsageError("no dataset given");
  Table t = load_csv(cfg.data_path, cfg.schema);
  if (cfg.subsample) t = subsample(t, *cfg.subsample, cfg.seed_base);
  return t;
}

// ---- output helpers -------------------------------------------------------------

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write " + path.string());
  os << text;
}

std::string read_text(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot read " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

fs::path output_root() {
  if (const char* env = std::getenv("AMOE_OUTPUT_ROOT"); env && *env) return env;
  return "results";
}

fs::path make_run_directory(const fs::path& root, const std::string& name) {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::ostringstream stamp;
  stamp << std::put_time(&tm, "%Y%m%dT%H%M%SZ");
  const std::string base = (name.empty() ? "run" : name) + "_" + stamp.str();
  fs::create_directories(root);
  fs::path dir = root / base;
  for (int i = 2; !fs::create_directory(dir); ++i) dir = root / (base + "_" + std::to_string(i));
  return dir;
}

namespace {

ExitCode classify(const std::exception& e) {
  if (dynamic_cast<const NumericalError*>(&e)) return ExitCode::kDivergence;
  if (dynamic_cast<const UsageError*>(&e)) return ExitCode::kUsage;
  return ExitCode::kData;
}

void write_config_echo(const fs::path& dir, const RunConfig& cfg, const std::string& data_hash) {
  nlohmann::json j = run_config_to_json(cfg);
  j["data_hash"] = data_hash;
  write_text(dir / "config.json", j.dump(2) + "\n");
}

void write_run_files(const fs::path& dir, const RunOutcome& o) {
  write_text(dir / "report.json", run_report_to_json(o.report).dump(2) + "\n");
  write_text(dir / "report.csv", runs_to_csv({o.report}));
  write_text(dir / "split_plan.json", split_plan_to_json(o.plan).dump() + "\n");
  write_text(dir / "trace_phase1.csv", o.phase1.to_csv());
  write_text(dir / "trace_phase2.csv", o.phase2.to_csv());
  write_text(dir / "checkpoint.json", o.checkpoint.to_json().dump() + "\n");
}

int worker_count(const RunConfig& cfg) {
  const int hw = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  const int w = cfg.workers > 0 ? cfg.workers : hw;
  return std::max(1, std::min(w, cfg.n_runs));
}

}  // namespace

BenchmarkResult run_benchmark(const Table& table, const RunConfig& cfg_in, const fs::path& out_dir,
                              const std::string& data_hash) {
  RunConfig cfg = cfg_in;
  cfg.resolve();
  cfg.validate();
  BenchmarkResult res;
  res.output_dir = out_dir;
  const bool write = !out_dir.empty();
  if (write) write_config_echo(out_dir, cfg, data_hash);

  const auto n = static_cast<std::size_t>(cfg.n_runs);
  std::vector<std::optional<RunOutcome>> outcomes(n);
  std::vector<std::optional<RunFailure>> failures(n);
  res.plan_hashes.resize(n);
  std::atomic<std::size_t> next{0};
  std::mutex io;

  auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      const std::uint64_t seed = cfg.seed_base + i;
      const fs::path run_dir = out_dir / "runs" / ("run_" + std::to_string(i));
      try {
        res.plan_hashes[i] = split_plan_hash(make_split_plan(table.rows(), seed, cfg.fractions));
        RunOutcome o = run_single(table, cfg, seed);
        std::lock_guard lock(io);
        if (write) write_run_files(run_dir, o);
        outcomes[i] = std::move(o);
      } catch (const std::exception& e) {
        std::lock_guard lock(io);
        failures[i] = RunFailure{static_cast<int>(i), seed, e.what(), classify(e)};
        std::cerr << "warning: run " << i << " (seed " << seed << ") failed: " << e.what() << "\n";
        if (write) {
          write_text(run_dir / "error.txt", std::string(e.what()) + "\n");
          if (const auto* d = dynamic_cast<const DivergenceError*>(&e))
            write_text(run_dir / "trace_partial.csv", d->trace().to_csv());
        }
      }
    }
  };
  const int workers = worker_count(cfg);
  if (workers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  std::vector<RunReport> reports;
  for (std::size_t i = 0; i < n; ++i) {
    if (outcomes[i]) {
      reports.push_back(outcomes[i]->report);
      res.run_index.push_back(static_cast<int>(i));
      res.outcomes.push_back(std::move(*outcomes[i]));
    }
    if (failures[i]) res.failures.push_back(*failures[i]);
  }
  if (!res.failures.empty() && !reports.empty())
    std::cerr << "warning: aggregate excludes " << res.failures.size() << " failed run(s)\n";
  if (!reports.empty()) res.aggregate = aggregate(reports);
  if (write) {
    write_text(out_dir / "runs.csv", runs_to_csv(reports));
    if (res.aggregate) {
      write_text(out_dir / "aggregate.csv", aggregate_to_csv(*res.aggregate));
      nlohmann::json aj = aggregate_to_json(*res.aggregate);
      aj["failed_runs"] = res.failures.size();
      write_text(out_dir / "aggregate.json", aj.dump(2) + "\n");
      write_text(out_dir / "aggregate.md", aggregates_to_markdown({*res.aggregate}));
    }
  }
  return res;
}

// ---- ablation ---------------------------------------------------------------------

AblationResult run_ablation(const Table& table, const RunConfig& cfg_in, const fs::path& out_dir,
                            const std::string& data_hash) {
  AblationResult res;
  res.output_dir = out_dir;
  RunConfig base = cfg_in;
  base.no_anchor = base.no_router = base.no_calibration = false;

  auto arm_dir = [&](const std::string& name) { return out_dir.empty() ? fs::path{} : out_dir / name; };

  RunConfig full = base;
  const BenchmarkResult b_full = run_benchmark(table, full, arm_dir("full"), data_hash);
  RunConfig na = base;
  na.no_anchor = true;
  const BenchmarkResult b_na = run_benchmark(table, na, arm_dir("no_anchor"), data_hash);
  RunConfig nr = base;
  nr.no_router = true;
  const BenchmarkResult b_nr = run_benchmark(table, nr, arm_dir("no_router"), data_hash);

  auto arm_from = [](const std::string& name, const BenchmarkResult& b) {
    AblationArm a;
    a.name = name;
    for (const auto& o : b.outcomes) a.reports.push_back(o.report);
    a.aggregate = b.aggregate;
    a.plan_hashes = b.plan_hashes;
    return a;
  };
  res.arms.push_back(arm_from("full", b_full));
  res.arms.push_back(arm_from("no_anchor", b_na));
  res.arms.push_back(arm_from("no_router", b_nr));

  // Removing calibration changes nothing upstream of the test means, so the
  // full arm's trained models are scored again with uncalibrated means.
  AblationArm nc;
  nc.name = "no_cal";
  nc.plan_hashes = b_full.plan_hashes;
  for (const auto& o : b_full.outcomes) {
    RunReport r = o.report;
    r.rmse_original = o.rmse_uncalibrated;
    nc.reports.push_back(r);
  }
  if (!nc.reports.empty()) nc.aggregate = aggregate(nc.reports);
  res.arms.push_back(std::move(nc));

  for (const auto& a : res.arms)
    if (a.plan_hashes != res.arms.front().plan_hashes) res.plans_shared = false;
  if (!res.plans_shared) throw NumericalError("ablation arms did not share split plans");

  if (!out_dir.empty()) {
    RunConfig echo = base;
    echo.resolve();
    write_config_echo(out_dir, echo, data_hash);
    write_text(out_dir / "ablation.csv", ablation_to_csv(res));
    write_text(out_dir / "ablation.md", ablation_to_markdown(res));
    nlohmann::json j;
    j["plans_shared"] = res.plans_shared;
    j["plan_hashes"] = res.arms.front().plan_hashes;
    for (const auto& a : res.arms) {
      j["arms"][a.name] = a.aggregate ? aggregate_to_json(*a.aggregate) : nlohmann::json(nullptr);
    }
    write_text(out_dir / "ablation.json", j.dump(2) + "\n");
    if (res.arms[3].aggregate) {
      write_text(out_dir / "no_cal" / "aggregate.csv", aggregate_to_csv(*res.arms[3].aggregate));
      write_text(out_dir / "no_cal" / "runs.csv", runs_to_csv(res.arms[3].reports));
    }
  }
  return res;
}

std::string ablation_to_csv(const AblationResult& r) {
  std::string out = "arm,runs,nll_mean,nll_stderr,rmse_mean,rmse_stderr\r\n";
  for (const auto& a : r.arms) {
    if (!a.aggregate) {
      out += a.name + ",0,,,,\r\n";
      continue;
    }
    const auto& g = *a.aggregate;
    out += a.name + ',' + std::to_string(g.runs) + ',' + format_double(g.nll_z.mean) + ',' +
           format_double(g.nll_z.stderr_) + ',' + format_double(g.rmse_original.mean) + ',' +
           format_double(g.rmse_original.stderr_) + "\r\n";
  }
  return out;
}

std::string ablation_to_markdown(const AblationResult& r) {
  auto cell = [](const std::optional<AggregateReport>& a, bool nll_metric) {
    if (!a) return std::string("n/a");
    const MetricSummary& m = nll_metric ? a->nll_z : a->rmse_original;
    std::ostringstream os;
    os.setf(std::ios::fixed);
    os.precision(2);
    os << m.mean << " ± " << m.stderr_;
    return os.str();
  };
  std::string name = r.arms.empty() || !r.arms.front().aggregate ? "" : r.arms.front().aggregate->dataset;
  std::string out;
  for (bool nll_metric : {true, false}) {
    out += std::string(nll_metric ? "NLL (z)" : "RMSE") + "\n\n| Dataset |";
    for (const auto& a : r.arms) out += " " + a.name + " |";
    out += "\n|---|";
    for (std::size_t i = 0; i < r.arms.size(); ++i) out += "---:|";
    out += "\n| " + name + " |";
    for (const auto& a : r.arms) out += " " + cell(a.aggregate, nll_metric) + " |";
    out += "\n\n";
  }
  return out;
}

// ---- toy demo ----------------------------------------------------------------------

Table make_toy_data(Index n, std::uint64_t seed) {
  Rng rng(seed);
  Table t;
  t.features.resize(n, 1);
  t.target.resize(n);
  for (Index i = 0; i < n; ++i) {
    const double x = rng.uniform(-4.0, 4.0);
    const double s = 0.1 + 0.2 * std::abs(x) / 4.0;
    t.features(i, 0) = x;
    t.target(i) = std::sin(x) * x / 2.0 + s * rng.normal();
  }
  t.column_names = {"x"};
  t.target_name = "y";
  return t;
}

namespace {

struct Band {
  Vector mean, lo, hi;
};

Band predict_band(const Checkpoint& ck, const Matrix& x) {
  const auto dens = ck.densities(x);
  Band b{ck.predict_mean(x), Vector(x.rows()), Vector(x.rows())};
  for (Index i = 0; i < x.rows(); ++i) {
    b.lo(i) = ck.y_scaler.invert(dens[static_cast<std::size_t>(i)].quantile(0.025));
    b.hi(i) = ck.y_scaler.invert(dens[static_cast<std::size_t>(i)].quantile(0.975));
  }
  return b;
}

std::string band_csv(const Matrix& x, const Band& b) {
  std::string out = "x,mean,q025,q975\r\n";
  for (Index i = 0; i < x.rows(); ++i)
    out += format_double(x(i, 0)) + ',' + format_double(b.mean(i)) + ',' + format_double(b.lo(i)) + ',' +
           format_double(b.hi(i)) + "\r\n";
  return out;
}

}  // namespace

ToyResult run_toy_demo(const ToyConfig& tc, const fs::path& out_dir) {
  ToyResult res;
  res.output_dir = out_dir;
  const Table train = make_toy_data(tc.n_train, tc.seed);
  const Table hold = make_toy_data(tc.n_holdout, Rng::mix(tc.seed, 77));
  Matrix grid(tc.grid, 1);
  for (Index i = 0; i < tc.grid; ++i) grid(i, 0) = -4.0 + 8.0 * static_cast<double>(i) / static_cast<double>(tc.grid - 1);

  RunConfig cfg = tc.run;
  cfg.dataset = "toy";
  cfg.n_runs = 1;

  std::string points = "x,y\r\n";
  for (Index i = 0; i < train.rows(); ++i)
    points += format_double(train.features(i, 0)) + ',' + format_double(train.target(i)) + "\r\n";
  const std::string data_hash = git_blob_sha1(points);

  auto snapshot_hook = [&](const std::string& tag) -> SnapshotHook {
    if (!tc.snapshots || out_dir.empty()) return {};
    return [&, tag](int epoch, int max_epochs, const Checkpoint& state) {
      for (int pct : {0, 33, 67, 100}) {
        if (epoch == static_cast<int>(std::lround(max_epochs * pct / 100.0))) {
          std::ostringstream name;
          name << tag << "_p" << std::setw(3) << std::setfill('0') << pct << ".csv";
          write_text(out_dir / "snapshots" / name.str(), band_csv(grid, predict_band(state, grid)));
        }
      }
    };
  };

  const RunOutcome o = run_single(train, cfg, tc.seed, snapshot_hook("anchor"));
  const Band band = predict_band(o.checkpoint, grid);
  const Band hb = predict_band(o.checkpoint, hold.features);
  Index inside = 0;
  for (Index i = 0; i < hold.rows(); ++i) inside += (hold.target(i) >= hb.lo(i) && hold.target(i) <= hb.hi(i)) ? 1 : 0;
  res.coverage = static_cast<double>(inside) / static_cast<double>(hold.rows());

  if (!out_dir.empty()) {
    write_text(out_dir / "train_points.csv", points);
    write_text(out_dir / "band.csv", band_csv(grid, band));
    nlohmann::json summary = {{"coverage_95", res.coverage},
                              {"n_holdout", tc.n_holdout},
                              {"report", run_report_to_json(o.report)},
                              {"data_hash", data_hash}};
    write_text(out_dir / "summary.json", summary.dump(2) + "\n");
    nlohmann::json echo = run_config_to_json(cfg);
    echo["toy"] = {{"n_train", tc.n_train}, {"n_holdout", tc.n_holdout}, {"grid", tc.grid}, {"seed", tc.seed},
                   {"snapshots", tc.snapshots}};
    echo["data_hash"] = data_hash;
    write_text(out_dir / "config.json", echo.dump(2) + "\n");
    if (tc.snapshots) {
      RunConfig free_cfg = cfg;
      free_cfg.no_anchor = true;
      run_single(train, free_cfg, tc.seed, snapshot_hook("no_anchor"));
    }
  }
  return res;
}

}  // namespace amoe
