// anchor-moe: command-line front end for training, evaluation, benchmarks,
// ablations, the toy demo and the approximation-rate bench.

#include <cmath>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "amoe/error.hpp"
#include "amoe/hash.hpp"
#include "amoe/metrics.hpp"
#include "amoe/pipeline.hpp"
#include "amoe/theory.hpp"
#include "amoe/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

enum class Format { kCsv, kJson, kMarkdown };

Format parse_format(const std::string& s) {
  if (s == "csv") return Format::kCsv;
  if (s == "json") return Format::kJson;
  if (s == "markdown" || s == "md") return Format::kMarkdown;
  throw amoe::UsageError("unknown format '" + s + "' (csv, json, markdown)");
}

// Flags shared by the data-driven subcommands. Every flag is optional; set
// values override the config file, which overrides the built-in defaults.
struct CommonFlags {
  std::string config;
  std::string data;
  std::string dataset;
  std::string target;
  std::optional<int> target_index;
  std::optional<int> runs;
  std::optional<std::uint64_t> seed;
  std::optional<int> workers;
  std::optional<int> epochs;
  std::optional<double> lr;
  std::optional<int> stages;
  std::optional<long> subsample;
  std::optional<std::string> mode;
  std::optional<std::string> cal_units;
  bool no_anchor = false;
  bool no_router = false;
  bool no_cal = false;
  std::string output;
  std::string format = "csv";
};

void add_common(CLI::App* app, CommonFlags& f, bool with_ablation_flags = true) {
  app->add_option("--config", f.config, "JSON config file");
  app->add_option("--data", f.data, "CSV data file");
  app->add_option("--dataset", f.dataset, "dataset name used in reports and directory names");
  app->add_option("--target", f.target, "target column name (default: last column)");
  app->add_option("--target-index", f.target_index, "target column index, negative counts from the end");
  app->add_option("--runs", f.runs, "number of outer runs");
  app->add_option("--seed", f.seed, "seed of the first run");
  app->add_option("--workers", f.workers, "worker threads (0: hardware concurrency)");
  app->add_option("--epochs", f.epochs, "maximum phase-1 epochs");
  app->add_option("--lr", f.lr, "Adam learning rate");
  app->add_option("--stages", f.stages, "maximum boosting stages");
  app->add_option("--subsample", f.subsample, "rows drawn before splitting");
  app->add_option("--mode", f.mode, "anchor_delta, anchor_only or free");
  app->add_option("--calibration-units", f.cal_units, "original or z");
  if (with_ablation_flags) {
    app->add_flag("--no-anchor", f.no_anchor, "drop the boosted anchor; experts predict free means");
    app->add_flag("--no-router", f.no_router, "zero the router logits");
    app->add_flag("--no-cal", f.no_cal, "report RMSE of uncalibrated means");
  }
  app->add_option("--output", f.output, "output directory (default: $AMOE_OUTPUT_ROOT/<dataset>_<timestamp>)");
  app->add_option("--format", f.format, "stdout format: csv, json or markdown");
}

amoe::RunConfig resolve_config(const CommonFlags& f) {
  amoe::RunConfig base;
  if (!f.config.empty()) {
    json j;
    try {
      j = json::parse(amoe::read_text(f.config));
    } catch (const json::exception& e) {
      throw amoe::UsageError("cannot parse config " + f.config + ": " + e.what());
    }
    base = amoe::run_config_from_json(j, base);
  }
  json o = json::object();
  if (!f.data.empty()) o["data_path"] = f.data;
  if (!f.dataset.empty()) o["dataset"] = f.dataset;
  if (f.runs) o["n_runs"] = *f.runs;
  if (f.seed) o["seed_base"] = *f.seed;
  if (f.workers) o["workers"] = *f.workers;
  if (f.epochs) o["train"]["max_epochs"] = *f.epochs;
  if (f.lr) o["train"]["learning_rate"] = *f.lr;
  if (f.stages) o["gbdt"]["max_stages"] = *f.stages;
  if (f.subsample) o["subsample"] = *f.subsample;
  if (f.mode) o["moe"]["mode"] = *f.mode;
  if (f.cal_units) o["calibration_units"] = *f.cal_units;
  if (f.no_anchor) o["ablation"]["no_anchor"] = true;
  if (f.no_router) o["ablation"]["no_router"] = true;
  if (f.no_cal) o["ablation"]["no_calibration"] = true;
  amoe::RunConfig c = amoe::run_config_from_json(o, base);
  if (!f.target.empty()) {
    c.schema.target_name = f.target;
    c.schema.target_index.reset();
  }
  if (f.target_index) {
    c.schema.target_index = *f.target_index;
    c.schema.target_name.reset();
  }
  if (!f.output.empty()) c.output_dir = f.output;
  if (c.data_path.empty()) throw amoe::UsageError("no data file: pass --data or set data_path in the config");
  c.resolve();
  c.validate();
  return c;
}

fs::path output_dir_for(const amoe::RunConfig& c, const std::string& suffix = "") {
  if (!c.output_dir.empty()) {
    fs::create_directories(c.output_dir);
    return c.output_dir;
  }
  return amoe::make_run_directory(amoe::output_root(), c.dataset + suffix);
}

void print_aggregate(const amoe::AggregateReport& a, Format fmt) {
  switch (fmt) {
    case Format::kCsv: std::cout << amoe::aggregate_to_csv(a); break;
    case Format::kJson: std::cout << amoe::aggregate_to_json(a).dump(2) << "\n"; break;
    case Format::kMarkdown: std::cout << amoe::aggregates_to_markdown({a}); break;
  }
}

void print_run(const amoe::RunReport& r, Format fmt) {
  switch (fmt) {
    case Format::kCsv: std::cout << amoe::runs_to_csv({r}); break;
    case Format::kJson: std::cout << amoe::run_report_to_json(r).dump(2) << "\n"; break;
    case Format::kMarkdown:
      std::cout << "| Dataset | Seed | RMSE | NLL (z) | CRPS (z) | t_gbdt | t_moe |\n|---|---:|---:|---:|---:|---:|---:|\n"
                << "| " << r.dataset << " | " << r.seed << " | " << amoe::format_double(r.rmse_original) << " | "
                << amoe::format_double(r.nll_z) << " | " << amoe::format_double(r.crps_z) << " | " << r.t_gbdt
                << " | " << r.t_moe << " |\n";
      break;
  }
}

std::string data_hash(const amoe::RunConfig& c) { return amoe::git_blob_sha1_file(c.data_path); }

// ---- subcommands --------------------------------------------------------------

int cmd_train(const CommonFlags& f) {
  const amoe::RunConfig c = resolve_config(f);
  const Format fmt = parse_format(f.format);
  const amoe::Table table = amoe::load_dataset(c);
  const fs::path dir = output_dir_for(c, "_train");
  json echo = amoe::run_config_to_json(c);
  echo["data_hash"] = data_hash(c);
  amoe::write_text(dir / "config.json", echo.dump(2) + "\n");
  try {
    const amoe::RunOutcome o = amoe::run_single(table, c, c.seed_base);
    amoe::write_text(dir / "checkpoint.json", o.checkpoint.to_json().dump() + "\n");
    amoe::write_text(dir / "report.json", amoe::run_report_to_json(o.report).dump(2) + "\n");
    amoe::write_text(dir / "report.csv", amoe::runs_to_csv({o.report}));
    amoe::write_text(dir / "split_plan.json", amoe::split_plan_to_json(o.plan).dump() + "\n");
    amoe::write_text(dir / "trace_phase1.csv", o.phase1.to_csv());
    amoe::write_text(dir / "trace_phase2.csv", o.phase2.to_csv());
    print_run(o.report, fmt);
  } catch (const amoe::DivergenceError& e) {
    amoe::write_text(dir / "trace_partial.csv", e.trace().to_csv());
    throw;
  }
  std::cerr << "wrote " << dir.string() << "\n";
  return 0;
}

struct EvalFlags {
  std::string checkpoint;
  std::string data;
  std::string target;
  std::optional<int> target_index;
  std::string densities;
  std::string format = "csv";
};

int cmd_eval(const EvalFlags& f) {
  const Format fmt = parse_format(f.format);
  json j;
  try {
    j = json::parse(amoe::read_text(f.checkpoint));
  } catch (const json::exception& e) {
    throw amoe::DataError("cannot parse checkpoint " + f.checkpoint + ": " + e.what());
  }
  const amoe::Checkpoint ck = amoe::Checkpoint::from_json(j);
  amoe::CsvSchema schema;
  if (!f.target.empty()) schema.target_name = f.target;
  if (f.target_index) schema.target_index = *f.target_index;
  schema.min_rows = 1;
  const amoe::Table t = amoe::load_csv(f.data, schema);
  const auto dens = ck.densities(t.features);

  if (!f.densities.empty()) {
    // Original units: a z-space component (w, m, s) maps to (w, mu + sigma m, sigma s).
    std::string out = "row,weight,mean,stddev\r\n";
    for (std::size_t i = 0; i < dens.size(); ++i)
      for (const auto& comp : dens[i].components)
        out += std::to_string(i) + ',' + amoe::format_double(comp.weight) + ',' +
               amoe::format_double(ck.y_scaler.invert(comp.mean)) + ',' +
               amoe::format_double(comp.stddev * ck.y_scaler.sigma) + "\r\n";
    amoe::write_text(f.densities, out);
  }

  const Eigen::VectorXd mean = ck.predict_mean(t.features);
  const amoe::ZSeries yz = amoe::to_z(ck.y_scaler, amoe::OriginalSeries(t.target));
  const double rmse = amoe::rmse(mean, t.target), nll = amoe::nll(dens, yz), crps = amoe::mean_crps(dens, yz);
  const json m = {{"n", t.rows()}, {"rmse_original", rmse}, {"nll_z", nll}, {"crps_z", crps}};
  switch (fmt) {
    case Format::kJson: std::cout << m.dump(2) << "\n"; break;
    case Format::kCsv:
      std::cout << "n,rmse_original,nll_z,crps_z\r\n"
                << t.rows() << ',' << amoe::format_double(rmse) << ','
                << amoe::format_double(nll) << ',' << amoe::format_double(crps) << "\r\n";
      break;
    case Format::kMarkdown:
      std::cout << "| n | RMSE | NLL (z) | CRPS (z) |\n|---:|---:|---:|---:|\n| " << t.rows() << " | "
                << amoe::format_double(rmse) << " | " << amoe::format_double(nll) << " | "
                << amoe::format_double(crps) << " |\n";
      break;
  }
  return 0;
}

int exit_for_failures(const std::vector<amoe::RunFailure>& failures) {
  return failures.empty() ? 0 : static_cast<int>(failures.front().code);
}

int cmd_benchmark(const CommonFlags& f) {
  const amoe::RunConfig c = resolve_config(f);
  const Format fmt = parse_format(f.format);
  const amoe::Table table = amoe::load_dataset(c);
  const fs::path dir = output_dir_for(c);
  const amoe::BenchmarkResult r = amoe::run_benchmark(table, c, dir, data_hash(c));
  std::cerr << "wrote " << dir.string() << "\n";
  if (!r.aggregate) {
    std::cerr << "error: every run failed\n";
    return exit_for_failures(r.failures);
  }
  print_aggregate(*r.aggregate, fmt);
  return 0;
}

int cmd_ablate(const CommonFlags& f) {
  const amoe::RunConfig c = resolve_config(f);
  const Format fmt = parse_format(f.format);
  const amoe::Table table = amoe::load_dataset(c);
  const fs::path dir = output_dir_for(c, "_ablation");
  const amoe::AblationResult r = amoe::run_ablation(table, c, dir, data_hash(c));
  std::cerr << "wrote " << dir.string() << "\n";
  switch (fmt) {
    case Format::kCsv: std::cout << amoe::ablation_to_csv(r); break;
    case Format::kMarkdown: std::cout << amoe::ablation_to_markdown(r); break;
    case Format::kJson: std::cout << json::parse(amoe::read_text(dir / "ablation.json")).dump(2) << "\n"; break;
  }
  for (const auto& a : r.arms)
    if (!a.aggregate) return 3;
  return 0;
}

struct ToyFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<int> epochs;
  std::optional<long> n_train;
  bool snapshots = false;
  std::string output;
};

int cmd_toy(const ToyFlags& f) {
  amoe::ToyConfig t;
  if (!f.config.empty()) t.run = amoe::run_config_from_json(json::parse(amoe::read_text(f.config)));
  if (f.seed) t.seed = *f.seed;
  if (f.epochs) t.run.train.max_epochs = *f.epochs;
  if (f.n_train) t.n_train = *f.n_train;
  t.snapshots = f.snapshots;
  t.run.dataset = "toy";
  t.run.resolve();
  t.run.train.validate();
  t.run.moe.validate();
  const fs::path dir = f.output.empty() ? amoe::make_run_directory(amoe::output_root(), "toy") : fs::path(f.output);
  fs::create_directories(dir);
  const amoe::ToyResult r = amoe::run_toy_demo(t, dir);
  std::cout << "coverage_95," << amoe::format_double(r.coverage) << "\r\n";
  std::cerr << "wrote " << dir.string() << "\n";
  return 0;
}

struct RateFlags {
  int d = 1;
  double alpha = 1.0;
  std::vector<long> k;
  std::vector<long> ambient_k;
  std::vector<long> n;
  bool sparse = false;
  int s = 1;
  std::string manifold;
  int ambient = 3;
  bool balance = false;
  int functions = 10;
  long n_mc = 20000;
  int repetitions = 10;
  double noise = 0.1;
  std::uint64_t seed = 0;
  std::string output;
};

std::vector<amoe::Index> default_k(int lattice_dim) {
  if (lattice_dim == 1) return {8, 16, 32, 64, 128, 256};
  if (lattice_dim == 2) return {64, 256, 1024, 4096};
  std::vector<amoe::Index> k;
  for (amoe::Index m = 2; m <= 5; ++m) k.push_back(static_cast<amoe::Index>(std::llround(std::pow(m, lattice_dim))));
  return k;
}

// Long format: experiment,series,d,s,alpha,K,N,quantity,value.
class RateTable {
 public:
  RateTable() : out_("experiment,series,d,s,alpha,K,N,quantity,value\r\n") {}
  void row(const std::string& exp, const std::string& series, int d, int s, double alpha,
           std::optional<double> k, std::optional<double> n, const std::string& quantity, double value) {
    auto opt = [](std::optional<double> v) { return v ? amoe::format_double(*v) : std::string(); };
    out_ += exp + ',' + series + ',' + std::to_string(d) + ',' + std::to_string(s) + ',' + amoe::format_double(alpha) +
            ',' + opt(k) + ',' + opt(n) + ',' + quantity + ',' + amoe::format_double(value) + "\r\n";
  }
  void rate(const std::string& exp, const std::string& series, int d, int s, double alpha,
            const amoe::theory::RateResult& r) {
    for (std::size_t i = 0; i < r.k.size(); ++i)
      row(exp, series, d, s, alpha, static_cast<double>(r.k[i]), std::nullopt, "mean_sq_error", r.mean_sq_error[i]);
    row(exp, series, d, s, alpha, std::nullopt, std::nullopt, "slope", r.slope);
    row(exp, series, d, s, alpha, std::nullopt, std::nullopt, "slope_stderr", r.slope_stderr);
  }
  const std::string& str() const { return out_; }

 private:
  std::string out_;
};

int cmd_rates(const RateFlags& f) {
  namespace th = amoe::theory;
  if (!(f.alpha > 0.0)) throw amoe::UsageError("--alpha must be positive");
  if (f.alpha > 1.0) throw amoe::UsageError("--alpha above 1 is not supported (hat weights saturate)");
  if (f.d < 1) throw amoe::UsageError("--d must be positive");
  if (static_cast<int>(f.sparse) + static_cast<int>(!f.manifold.empty()) + static_cast<int>(f.balance) > 1)
    throw amoe::UsageError("choose at most one of --sparse, --manifold, --balance");
  const std::vector<amoe::Index> k(f.k.begin(), f.k.end());
  th::RateOptions ro;
  ro.functions = f.functions;
  ro.n_mc = f.n_mc;
  ro.seed = f.seed;
  RateTable t;
  if (f.sparse) {
    if (f.s < 1 || f.s >= f.d) throw amoe::UsageError("--sparse needs 1 <= s < d");
    std::vector<amoe::Index> ak(f.ambient_k.begin(), f.ambient_k.end());
    if (ak.empty()) ak = default_k(f.d);
    const auto r = th::sparse_rate_experiment(f.d, f.s, f.alpha, k.empty() ? default_k(f.s) : k, ak, ro);
    t.rate("sparse", "subspace", f.d, f.s, f.alpha, r.subspace);
    t.rate("sparse", "ambient", f.d, f.s, f.alpha, r.ambient);
  } else if (!f.manifold.empty()) {
    th::Embedding e;
    if (f.manifold == "helix") e = th::Embedding::kHelix;
    else if (f.manifold == "surface") e = th::Embedding::kSurface;
    else if (f.manifold == "flat") e = th::Embedding::kFlat;
    else throw amoe::UsageError("unknown manifold '" + f.manifold + "' (helix, surface, flat)");
    const int d0 = e == th::Embedding::kSurface ? 2 : (e == th::Embedding::kHelix ? 1 : f.d);
    const auto r = th::manifold_rate_experiment(f.ambient, d0, f.alpha, k.empty() ? default_k(d0) : k, e, ro);
    t.rate("manifold_" + f.manifold, "intrinsic", f.ambient, d0, f.alpha, r.rate);
    t.row("manifold_" + f.manifold, "embedding", f.ambient, d0, f.alpha, std::nullopt, std::nullopt, "lip_lower", r.lip_lower);
    t.row("manifold_" + f.manifold, "embedding", f.ambient, d0, f.alpha, std::nullopt, std::nullopt, "lip_upper", r.lip_upper);
  } else if (f.balance) {
    std::vector<amoe::Index> n(f.n.begin(), f.n.end());
    if (n.empty()) n = {250, 500, 1000, 2000, 4000, 8000, 16000, 32000};
    th::BalanceOptions bo;
    bo.noise = f.noise;
    bo.repetitions = f.repetitions;
    bo.seed = f.seed;
    const auto r = th::balance_experiment(f.d, f.alpha, n, bo);
    for (std::size_t i = 0; i < r.n.size(); ++i) {
      const double ni = static_cast<double>(r.n[i]);
      for (std::size_t q = 0; q < r.k_grid[i].size(); ++q)
        t.row("balance", "risk", f.d, f.d, f.alpha, static_cast<double>(r.k_grid[i][q]), ni, "risk", r.risk[i][q]);
      t.row("balance", "k_star", f.d, f.d, f.alpha, r.k_star[i], ni, "k_star", r.k_star[i]);
    }
    t.row("balance", "fit", f.d, f.d, f.alpha, std::nullopt, std::nullopt, "exponent", r.exponent);
  } else {
    const auto r = th::rate_experiment(f.d, f.alpha, k.empty() ? default_k(f.d) : k, ro);
    t.rate("rate", "lattice", f.d, f.d, f.alpha, r);
  }
  if (f.output.empty()) {
    std::cout << t.str();
  } else {
    amoe::write_text(f.output, t.str());
    std::cerr << "wrote " << f.output << "\n";
  }
  return 0;
}

template <typename F>
int guarded(F&& body) {
  try {
    return body();
  } catch (const amoe::UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return static_cast<int>(amoe::ExitCode::kUsage);
  } catch (const amoe::NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return static_cast<int>(amoe::ExitCode::kDivergence);
  } catch (const amoe::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return static_cast<int>(amoe::ExitCode::kData);
  } catch (const json::exception& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return static_cast<int>(amoe::ExitCode::kUsage);
  } catch (const std::exception& e) {
    // I/O and anything else from reading inputs.
    std::cerr << "error: " << e.what() << "\n";
    return static_cast<int>(amoe::ExitCode::kData);
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Anchor-MoE probabilistic regression"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "anchor-moe 0.1.0");

  CommonFlags train_f, bench_f, ablate_f;
  auto* train = app.add_subcommand("train", "train one seeded run and save its checkpoint");
  add_common(train, train_f);
  auto* bench = app.add_subcommand("benchmark", "repeated outer runs with aggregate metrics");
  add_common(bench, bench_f);
  auto* ablate = app.add_subcommand("ablate", "full, no_anchor, no_router and no_cal arms on shared splits");
  add_common(ablate, ablate_f, false);

  EvalFlags eval_f;
  auto* eval = app.add_subcommand("eval", "score a checkpoint on a CSV file");
  eval->add_option("--checkpoint", eval_f.checkpoint, "checkpoint.json")->required();
  eval->add_option("--data", eval_f.data, "CSV data file")->required();
  eval->add_option("--target", eval_f.target, "target column name");
  eval->add_option("--target-index", eval_f.target_index, "target column index");
  eval->add_option("--densities", eval_f.densities, "write mixture components (row,weight,mean,stddev) here");
  eval->add_option("--format", eval_f.format, "csv, json or markdown");

  ToyFlags toy_f;
  auto* toy = app.add_subcommand("toy-demo", "1-D heteroscedastic demo with a 95% band");
  toy->add_option("--config", toy_f.config, "JSON config (model and training sections)");
  toy->add_option("--seed", toy_f.seed, "data and model seed");
  toy->add_option("--epochs", toy_f.epochs, "maximum phase-1 epochs");
  toy->add_option("--n-train", toy_f.n_train, "training points");
  toy->add_flag("--snapshots", toy_f.snapshots, "dump bands at 0/33/67/100% of training, with and without anchor");
  toy->add_option("--output", toy_f.output, "output directory");

  RateFlags rate_f;
  auto* rates = app.add_subcommand("rates", "interpolation-rate and balance experiments");
  rates->add_option("--d", rate_f.d, "input dimension");
  rates->add_option("--alpha", rate_f.alpha, "Hoelder order in (0, 1]");
  rates->add_option("--k", rate_f.k, "window counts (perfect powers of the lattice dimension)")->delimiter(',');
  rates->add_option("--ambient-k", rate_f.ambient_k, "window counts for the full-dimension control")->delimiter(',');
  rates->add_flag("--sparse", rate_f.sparse, "f depends on the first s coordinates only");
  rates->add_option("--s", rate_f.s, "active coordinates for --sparse");
  rates->add_option("--manifold", rate_f.manifold, "helix, surface or flat");
  rates->add_option("--ambient", rate_f.ambient, "ambient dimension for --manifold");
  rates->add_flag("--balance", rate_f.balance, "risk-minimizing K against N");
  rates->add_option("--n", rate_f.n, "sample sizes for --balance")->delimiter(',');
  rates->add_option("--functions", rate_f.functions, "random functions per experiment");
  rates->add_option("--n-mc", rate_f.n_mc, "Monte Carlo points");
  rates->add_option("--repetitions", rate_f.repetitions, "draws per N for --balance");
  rates->add_option("--noise", rate_f.noise, "noise stddev for --balance");
  rates->add_option("--seed", rate_f.seed, "seed");
  rates->add_option("--output", rate_f.output, "CSV file (default: stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : static_cast<int>(amoe::ExitCode::kUsage);
  }

  if (*train) return guarded([&] { return cmd_train(train_f); });
  if (*bench) return guarded([&] { return cmd_benchmark(bench_f); });
  if (*ablate) return guarded([&] { return cmd_ablate(ablate_f); });
  if (*eval) return guarded([&] { return cmd_eval(eval_f); });
  if (*toy) return guarded([&] { return cmd_toy(toy_f); });
  if (*rates) return guarded([&] { return cmd_rates(rate_f); });
  return static_cast<int>(amoe::ExitCode::kUsage);
}
