#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "amoe/error.hpp"
#include "amoe/moe.hpp"
#include "amoe/nn.hpp"

namespace amoe {

struct TrainConfig {
  double learning_rate = 1e-3;
  int max_epochs = 400;
  int batch_size = 0;            // 0: full batch up to full_batch_limit rows, else auto_batch
  Index full_batch_limit = 2048;
  int auto_batch = 256;
  double lambda_scale = 1e-4;
  double lambda_delta = 1e-4;
  double lambda_entropy = 1e-3;  // multiplies mean sum(g log g), i.e. rewards gate entropy
  double lambda_load = 1e-2;
  std::uint64_t seed = 0;

  void validate() const;
  nn::AdamConfig adam() const { return {learning_rate, 0.9, 0.999, 1e-8}; }
  Index batch_for(Index n) const;
};

nlohmann::json train_config_to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j);

/// Rows already standardized for the network, with the standardized anchor
/// and the z-scored target.
struct TrainData {
  Matrix x;
  Vector anchor_z;
  Vector y;

  Index size() const { return x.rows(); }
};

struct EpochRecord {
  int epoch = 0;
  double train_nll = 0.0;
  std::optional<double> va_nll;
  double reg_scale = 0.0;
  double reg_delta = 0.0;
  double reg_entropy = 0.0;
  double reg_load = 0.0;
  std::vector<double> usage;  // mean gate weight per expert
};

struct TrainTrace {
  std::vector<EpochRecord> epochs;

  std::size_t size() const { return epochs.size(); }
  std::string to_csv() const;
};

class DivergenceError : public NumericalError {
 public:
  DivergenceError(const std::string& what, TrainTrace trace) : NumericalError(what), trace_(std::move(trace)) {}
  const TrainTrace& trace() const { return trace_; }

 private:
  TrainTrace trace_;
};

struct ObjectiveParts {
  double nll = 0.0;       // mean over the batch
  double scale = 0.0;     // lambda-weighted terms
  double delta = 0.0;
  double entropy = 0.0;
  double load = 0.0;
  Vector usage;           // batch-mean gate weights

  double total() const { return nll + scale + delta + entropy + load; }
};

/// -log p(y) for one density.
double nll_loss(const MixtureDensity& density, double y);

/// Mean NLL over `rows` plus the regularizers. When `accumulate` is set the
/// gradient is added to the network's gradient buffers. `frozen` pins the
/// piecewise decisions of each row; `record` receives the decisions taken.
ObjectiveParts regularized_objective(MoeNetwork& net, const TrainData& data, const IndexList& rows,
                                     const TrainConfig& config, bool accumulate,
                                     const std::vector<KinkState>* frozen = nullptr,
                                     std::vector<KinkState>* record = nullptr);

/// Mean NLL over all rows, no regularizers.
double mean_nll(const MoeNetwork& net, const TrainData& data);

/// One pass over the data in seeded batches, one Adam step per batch.
EpochRecord run_epoch(MoeNetwork& net, nn::AdamState& adam, const TrainData& data, const TrainConfig& config,
                      int epoch);

struct Phase1Result {
  int best_epoch = 1;
  double best_va_nll = 0.0;
  MoeNetwork best;  // parameters after best_epoch epochs
  TrainTrace trace;
};

/// Called with epoch 0 before training and after every completed epoch.
using EpochHook = std::function<void(int epoch, const MoeNetwork& net)>;

/// Trains on TR for max_epochs, scoring VA after every epoch; the earliest
/// epoch with minimal VA NLL is selected.
Phase1Result train_phase1(MoeNetwork init, const TrainData& tr, const TrainData& va, const TrainConfig& config,
                          const EpochHook& hook = {});

struct Phase2Result {
  MoeNetwork model;
  TrainTrace trace;
};

/// Exactly `epochs` epochs on TV from the given start with a fresh optimizer.
Phase2Result train_phase2(MoeNetwork start, const TrainData& tv, int epochs, const TrainConfig& config);

}  // namespace amoe
