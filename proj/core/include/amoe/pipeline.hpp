#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "amoe/calibration.hpp"
#include "amoe/dataset.hpp"
#include "amoe/gbdt.hpp"
#include "amoe/metrics.hpp"
#include "amoe/moe.hpp"
#include "amoe/training.hpp"

namespace amoe {

/// Everything needed to reproduce a benchmark.
struct RunConfig {
  std::string dataset;  // display name; defaults to the data file stem
  std::filesystem::path data_path;
  CsvSchema schema;
  std::optional<Index> subsample;  // rows drawn (seed_base) before splitting
  SplitFractions fractions;
  GbdtConfig gbdt;
  StageCriterion stage_criterion = StageCriterion::kValidationRmse;
  MoeConfig moe;
  TrainConfig train;
  CalibrationUnits calibration_units = CalibrationUnits::kOriginal;
  int n_runs = 20;
  std::uint64_t seed_base = 0;
  bool no_anchor = false;
  bool no_router = false;
  bool no_calibration = false;
  int workers = 0;  // 0: one per hardware thread
  std::filesystem::path output_dir;  // empty: derived from the output root

  /// Applies the ablation flags to the module configs (no_anchor forces free
  /// means, no_router zeroes router logits).
  void resolve();
  void validate() const;
};

nlohmann::json run_config_to_json(const RunConfig& c);
/// Missing keys keep the values already in `base`.
RunConfig run_config_from_json(const nlohmann::json& j, RunConfig base = {});
nlohmann::json gbdt_config_to_json(const GbdtConfig& c);
GbdtConfig gbdt_config_from_json(const nlohmann::json& j, GbdtConfig base = {});

/// A trained model with everything needed to predict from raw features.
struct Checkpoint {
  bool use_anchor = true;
  GbdtModel anchor;  // refit on TV; unused without anchor
  ZScaler y_scaler;
  ColumnScaler x_scaler;
  MoeNetwork network;
  CalibrationMap calibration;
  bool calibrate = true;

  /// Standardized network inputs and anchor for raw feature rows.
  TrainData prepare(const Matrix& raw, const Vector* y = nullptr) const;
  std::vector<MixtureDensity> densities(const Matrix& raw) const;
  /// Original-unit means, calibrated unless calibration is disabled.
  Vector predict_mean(const Matrix& raw) const;

  nlohmann::json to_json() const;
  static Checkpoint from_json(const nlohmann::json& j);
};

struct RunOutcome {
  RunReport report;
  double rmse_uncalibrated = 0.0;
  SplitPlan plan;
  TrainTrace phase1;
  TrainTrace phase2;
  Checkpoint checkpoint;
};

/// Snapshot callback for training dynamics: (epoch, max_epochs, checkpoint
/// built from the TR-fold preparation and the current phase-1 parameters).
using SnapshotHook = std::function<void(int epoch, int max_epochs, const Checkpoint& state)>;

/// One seeded pass of the full protocol: split, anchor selection and refit,
/// two-phase training, calibration on CAL and scoring on TEST.
RunOutcome run_single(const Table& table, const RunConfig& config, std::uint64_t seed,
                      const SnapshotHook& snapshot = {});

/// Loads the configured CSV and applies the optional subsample.
Table load_dataset(const RunConfig& config);

struct RunFailure {
  int run = 0;
  std::uint64_t seed = 0;
  std::string message;
  ExitCode code = ExitCode::kData;
};

struct BenchmarkResult {
  std::vector<RunOutcome> outcomes;  // successful runs, ordered by run index
  std::vector<int> run_index;        // run index of each outcome
  std::vector<RunFailure> failures;
  std::vector<std::string> plan_hashes;  // per attempted run
  std::optional<AggregateReport> aggregate;
  std::filesystem::path output_dir;
};

/// Output root: $AMOE_OUTPUT_ROOT, else ./results.
std::filesystem::path output_root();
/// Creates <root>/<name>_<timestamp>[_n] and returns it.
std::filesystem::path make_run_directory(const std::filesystem::path& root, const std::string& name);

/// Runs n_runs seeds (seed_base + i) in a bounded worker pool. When
/// `out_dir` is non-empty, writes runs/, aggregate.{csv,json} and config.json.
BenchmarkResult run_benchmark(const Table& table, const RunConfig& config, const std::filesystem::path& out_dir,
                              const std::string& data_hash);

struct AblationArm {
  std::string name;
  std::vector<RunReport> reports;
  std::optional<AggregateReport> aggregate;
  std::vector<std::string> plan_hashes;
};

struct AblationResult {
  std::vector<AblationArm> arms;  // full, no_anchor, no_router, no_cal
  bool plans_shared = true;
  std::filesystem::path output_dir;
};

AblationResult run_ablation(const Table& table, const RunConfig& config, const std::filesystem::path& out_dir,
                            const std::string& data_hash);
std::string ablation_to_markdown(const AblationResult& r);
std::string ablation_to_csv(const AblationResult& r);

struct ToyConfig {
  Index n_train = 500;
  Index n_holdout = 2000;
  Index grid = 201;
  std::uint64_t seed = 0;
  bool snapshots = false;
  RunConfig run;  // model/training settings; data fields are ignored
};

struct ToyResult {
  double coverage = 0.0;  // fraction of held-out points inside the 95% band
  std::filesystem::path output_dir;
};

/// Heteroscedastic 1-D data: x ~ U[-4, 4], y = sin(x) x / 2 + (0.1 + 0.05 |x|) e.
Table make_toy_data(Index n, std::uint64_t seed);
ToyResult run_toy_demo(const ToyConfig& config, const std::filesystem::path& out_dir);

void write_text(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

}  // namespace amoe
