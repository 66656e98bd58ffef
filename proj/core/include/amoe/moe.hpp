#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "amoe/density.hpp"
#include "amoe/nn.hpp"
#include "amoe/types.hpp"

namespace amoe {

enum class AnchorMode { kAnchorDelta, kAnchorOnly, kFree };

std::string to_string(AnchorMode mode);
AnchorMode anchor_mode_from_string(const std::string& s);

struct MoeConfig {
  int latent_dim = 2;     // D
  int num_experts = 8;    // K
  int top_k = 2;          // k
  int components = 3;     // C
  int hidden = 128;
  int router_dim = 16;    // d_r
  double temperature = 1.0;
  double smoothing = 0.05;     // mass spread uniformly over the active set
  double weight_floor = 1e-12; // floor on window weights before the log
  double stab = 1e-12;         // added to the active-mass denominator
  double sigma_min = 0.05;
  double sigma_max = 1.0;
  double log_scale_lo = -3.0;
  double log_scale_hi = 3.0;
  AnchorMode mode = AnchorMode::kAnchorDelta;
  nn::Activation activation = nn::Activation::kTanh;
  bool use_router = true;  // false: logits are identically zero

  /// Throws UsageError on inconsistent values.
  void validate() const;
  /// Router size P = |W_q| + |keys|, reported but not trained separately.
  Index router_size() const { return static_cast<Index>(router_dim) * (latent_dim + num_experts); }
};

nlohmann::json moe_config_to_json(const MoeConfig& c);
MoeConfig moe_config_from_json(const nlohmann::json& j);

struct GateVector {
  Vector weights;     // K entries, zero outside the active set
  IndexList active;   // ascending expert indices
};

/// Top-k of `alpha`, larger values first, ties to the lower index; returned ascending.
IndexList top_k_indices(const Vector& alpha, int k);

/// Smoothed top-k gate on an already fused simplex vector.
GateVector smooth_top_k(const Vector& alpha, const MoeConfig& config, const IndexList* fixed_active = nullptr);

/// alpha = softmax(log(max(w, floor)) + logits), then smooth_top_k.
GateVector fuse_gates(const Vector& w, const Vector& logits, const MoeConfig& config);

struct ExpertOutput {
  Vector pi;      // C mixing weights
  Vector mean;    // C effective means
  Vector sigma;   // C clamped stddevs
  Vector head;    // raw mean-head output (delta or free mean)
  Vector t;       // raw log-scale output
};

/// Discrete decisions taken by one forward pass. Feeding them back freezes the
/// piecewise structure, which is what finite differencing needs to see the
/// same branch as the analytic gradient.
struct KinkState {
  IndexList active;
  std::vector<char> floored;          // K entries: window weight hit the floor
  std::vector<signed char> clamp;     // active*C entries: -1 low, 0 free, +1 high
};

/// Everything the backward pass needs from one sample.
struct SampleForward {
  Vector x;             // standardized input
  double anchor_z = 0.0;
  Vector u, z;
  nn::LayerNormCache ln;
  Vector log_w;         // normalized log window weights
  Vector w;
  Vector q, logits;
  Vector alpha;
  double active_mass = 0.0;  // S
  GateVector gate;
  std::vector<Vector> hidden;          // per active expert
  std::vector<ExpertOutput> experts;   // per active expert
  KinkState kinks;
};

/// Extra gradient sources applied on top of the scaled NLL of one sample.
struct SampleLoss {
  double y = 0.0;            // standardized target
  double nll_scale = 1.0;    // multiplies -log p(y)
  Vector gate_grad;          // d(other terms)/d(gate weights); empty = none
  double delta_l2_scale = 0.0;  // multiplies the sum of squared active deltas
};

/// The gated mixture-density network over standardized inputs.
class MoeNetwork {
 public:
  MoeNetwork() = default;
  /// Allocates parameters (all zero) for `input_dim` standardized inputs.
  MoeNetwork(MoeConfig config, Index input_dim);

  /// Fan-in uniform weights, zero mean head in anchor_delta mode, window
  /// centers by k-means++ seeding over the projected rows of `latent_inputs`
  /// (standard normal when absent), zero log-scales.
  static MoeNetwork initialize(const MoeConfig& config, Index input_dim, std::uint64_t seed,
                               const Matrix* latent_inputs = nullptr);

  const MoeConfig& config() const { return config_; }
  Index input_dim() const { return input_dim_; }
  nn::ParamStore& params() { return params_; }
  const nn::ParamStore& params() const { return params_; }

  Vector project(const Vector& x, nn::LayerNormCache* cache = nullptr) const;
  Vector window_log_weights(const Vector& z) const;
  Vector window_weights(const Vector& z) const;
  Vector router_logits(const Vector& z) const;
  GateVector gate(const Vector& x) const;
  ExpertOutput expert_forward(const Vector& x, std::optional<double> anchor_z, int expert) const;

  SampleForward forward(const Vector& x, double anchor_z, const KinkState* frozen = nullptr) const;
  MixtureDensity density(const SampleForward& f) const;
  MixtureDensity density(const Vector& x, double anchor_z) const;
  std::vector<MixtureDensity> densities(const Matrix& x, const Vector& anchor_z) const;

  /// Accumulates the gradient of the sample's loss into params().grad and
  /// returns -log p(y) (unscaled).
  double backward(const SampleForward& f, const SampleLoss& loss);

  /// Projects window log-scales back into their box.
  void clamp_log_scales();

  nlohmann::json to_json() const;
  static MoeNetwork from_json(const nlohmann::json& j);

 private:
  void cache_indices();

  struct ExpertIdx {
    std::size_t w1, b1, pi_w, pi_b, mu_w, mu_b, t_w, t_b;
  };

  MoeConfig config_;
  Index input_dim_ = 0;
  nn::ParamStore params_;
  std::size_t proj_w_ = 0, proj_b_ = 0, centers_ = 0, log_scales_ = 0, wq_ = 0, keys_ = 0;
  std::vector<ExpertIdx> experts_;
};

}  // namespace amoe
