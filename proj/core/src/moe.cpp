#include "amoe/moe.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>

#include "amoe/error.hpp"
#include "amoe/rng.hpp"

namespace amoe {

namespace {

constexpr double kHalfLog2Pi = 0.91893853320467274178;

Matrix fan_in_uniform(Index rows, Index cols, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(cols));
  Matrix m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(-bound, bound);
  return m;
}

}  // namespace

std::string to_string(AnchorMode mode) {
  switch (mode) {
    case AnchorMode::kAnchorDelta: return "anchor_delta";
    case AnchorMode::kAnchorOnly: return "anchor_only";
    case AnchorMode::kFree: return "free";
  }
  return "?";
}

AnchorMode anchor_mode_from_string(const std::string& s) {
  if (s == "anchor_delta") return AnchorMode::kAnchorDelta;
  if (s == "anchor_only") return AnchorMode::kAnchorOnly;
  if (s == "free") return AnchorMode::kFree;
  throw UsageError("unknown anchor mode '" + s + "'");
}

void MoeConfig::validate() const {
  if (latent_dim < 1 || num_experts < 1 || components < 1 || hidden < 1 || router_dim < 1)
    throw UsageError("model dimensions must be positive");
  if (top_k < 1 || top_k > num_experts) throw UsageError("top_k must lie in [1, num_experts]");
  if (!(sigma_min > 0.0 && sigma_min < sigma_max)) throw UsageError("need 0 < sigma_min < sigma_max");
  if (!(smoothing >= 0.0 && smoothing < 1.0)) throw UsageError("smoothing must lie in [0, 1)");
  if (!(temperature > 0.0)) throw UsageError("router temperature must be positive");
  if (!(log_scale_lo < log_scale_hi)) throw UsageError("empty log-scale interval");
  if (!(weight_floor > 0.0) || !(stab >= 0.0)) throw UsageError("bad gate stabilizers");
}

nlohmann::json moe_config_to_json(const MoeConfig& c) {
  return {{"latent_dim", c.latent_dim},
          {"num_experts", c.num_experts},
          {"top_k", c.top_k},
          {"components", c.components},
          {"hidden", c.hidden},
          {"router_dim", c.router_dim},
          {"temperature", c.temperature},
          {"smoothing", c.smoothing},
          {"weight_floor", c.weight_floor},
          {"stab", c.stab},
          {"sigma_min", c.sigma_min},
          {"sigma_max", c.sigma_max},
          {"log_scale_lo", c.log_scale_lo},
          {"log_scale_hi", c.log_scale_hi},
          {"mode", to_string(c.mode)},
          {"activation", c.activation == nn::Activation::kTanh ? "tanh" : "relu"},
          {"use_router", c.use_router}};
}

MoeConfig moe_config_from_json(const nlohmann::json& j) {
  MoeConfig c;
  c.latent_dim = j.value("latent_dim", c.latent_dim);
  c.num_experts = j.value("num_experts", c.num_experts);
  c.top_k = j.value("top_k", c.top_k);
  c.components = j.value("components", c.components);
  c.hidden = j.value("hidden", c.hidden);
  c.router_dim = j.value("router_dim", c.router_dim);
  c.temperature = j.value("temperature", c.temperature);
  c.smoothing = j.value("smoothing", c.smoothing);
  c.weight_floor = j.value("weight_floor", c.weight_floor);
  c.stab = j.value("stab", c.stab);
  c.sigma_min = j.value("sigma_min", c.sigma_min);
  c.sigma_max = j.value("sigma_max", c.sigma_max);
  c.log_scale_lo = j.value("log_scale_lo", c.log_scale_lo);
  c.log_scale_hi = j.value("log_scale_hi", c.log_scale_hi);
  if (j.contains("mode")) c.mode = anchor_mode_from_string(j.at("mode").get<std::string>());
  if (j.contains("activation")) {
    const auto a = j.at("activation").get<std::string>();
    if (a == "tanh") c.activation = nn::Activation::kTanh;
    else if (a == "relu") c.activation = nn::Activation::kRelu;
    else throw UsageError("unknown activation '" + a + "'");
  }
  c.use_router = j.value("use_router", c.use_router);
  c.validate();
  return c;
}

IndexList top_k_indices(const Vector& alpha, int k) {
  IndexList order(static_cast<std::size_t>(alpha.size()));
  std::iota(order.begin(), order.end(), Index{0});
  std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) { return alpha(a) > alpha(b); });
  order.resize(static_cast<std::size_t>(k));
  std::sort(order.begin(), order.end());
  return order;
}

GateVector smooth_top_k(const Vector& alpha, const MoeConfig& c, const IndexList* fixed_active) {
  GateVector g;
  g.active = fixed_active ? *fixed_active : top_k_indices(alpha, c.top_k);
  double s = 0.0;
  for (Index j : g.active) s += alpha(j);
  const auto k = static_cast<double>(g.active.size());
  g.weights = Vector::Zero(alpha.size());
  for (Index j : g.active) g.weights(j) = (1.0 - c.smoothing) * alpha(j) / (s + c.stab) + c.smoothing / k;
  return g;
}

GateVector fuse_gates(const Vector& w, const Vector& logits, const MoeConfig& c) {
  const Vector v = w.cwiseMax(c.weight_floor).array().log().matrix() + logits;
  return smooth_top_k(nn::softmax(v), c);
}

MoeNetwork::MoeNetwork(MoeConfig config, Index input_dim) : config_(std::move(config)), input_dim_(input_dim) {
  config_.validate();
  if (input_dim < 1) throw UsageError("model needs at least one input");
  const Index d = input_dim, dl = config_.latent_dim, k = config_.num_experts, dr = config_.router_dim;
  const Index h = config_.hidden, cc = config_.components;
  params_.add("proj.w", Matrix::Zero(dl, d));
  params_.add("proj.b", Matrix::Zero(dl, 1));
  params_.add("window.center", Matrix::Zero(k, dl));
  params_.add("window.log_scale", Matrix::Zero(k, dl));
  params_.add("router.wq", Matrix::Zero(dr, dl));
  params_.add("router.keys", Matrix::Zero(k, dr));
  for (Index j = 0; j < k; ++j) {
    const std::string p = "expert" + std::to_string(j) + ".";
    params_.add(p + "w1", Matrix::Zero(h, d));
    params_.add(p + "b1", Matrix::Zero(h, 1));
    params_.add(p + "pi.w", Matrix::Zero(cc, h));
    params_.add(p + "pi.b", Matrix::Zero(cc, 1));
    params_.add(p + "mu.w", Matrix::Zero(cc, h));
    params_.add(p + "mu.b", Matrix::Zero(cc, 1));
    params_.add(p + "t.w", Matrix::Zero(cc, h));
    params_.add(p + "t.b", Matrix::Zero(cc, 1));
  }
  cache_indices();
}

void MoeNetwork::cache_indices() {
  proj_w_ = params_.index_of("proj.w");
  proj_b_ = params_.index_of("proj.b");
  centers_ = params_.index_of("window.center");
  log_scales_ = params_.index_of("window.log_scale");
  wq_ = params_.index_of("router.wq");
  keys_ = params_.index_of("router.keys");
  experts_.clear();
  for (int j = 0; j < config_.num_experts; ++j) {
    const std::string p = "expert" + std::to_string(j) + ".";
    experts_.push_back({params_.index_of(p + "w1"), params_.index_of(p + "b1"), params_.index_of(p + "pi.w"),
                        params_.index_of(p + "pi.b"), params_.index_of(p + "mu.w"), params_.index_of(p + "mu.b"),
                        params_.index_of(p + "t.w"), params_.index_of(p + "t.b")});
  }
}

MoeNetwork MoeNetwork::initialize(const MoeConfig& config, Index input_dim, std::uint64_t seed,
                                  const Matrix* latent_inputs) {
  MoeNetwork net(config, input_dim);
  Rng rng(seed);
  auto& ps = net.params_;
  const Index k = config.num_experts, dl = config.latent_dim;

  ps[net.proj_w_].value = fan_in_uniform(dl, input_dim, rng);
  ps[net.wq_].value = fan_in_uniform(config.router_dim, dl, rng);
  ps[net.keys_].value = fan_in_uniform(k, config.router_dim, rng);
  // Start the scale head at the log-midpoint of the clamp interval so that no
  // component begins pinned to a bound (where its gradient would vanish).
  const double t0 = 0.5 * (std::log(config.sigma_min) + std::log(config.sigma_max));
  for (const auto& e : net.experts_) {
    ps[e.w1].value = fan_in_uniform(config.hidden, input_dim, rng);
    ps[e.pi_w].value = fan_in_uniform(config.components, config.hidden, rng);
    ps[e.t_w].value = fan_in_uniform(config.components, config.hidden, rng);
    ps[e.t_b].value.setConstant(t0);
    Matrix mu = fan_in_uniform(config.components, config.hidden, rng);
    if (config.mode == AnchorMode::kFree) ps[e.mu_w].value = mu;
  }

  Matrix& centers = ps[net.centers_].value;
  if (latent_inputs && latent_inputs->rows() > 0) {
    // k-means++ seeding over the projected rows.
    const Index n = latent_inputs->rows();
    Matrix z(n, dl);
    for (Index i = 0; i < n; ++i) z.row(i) = net.project(latent_inputs->row(i).transpose()).transpose();
    Vector d2 = Vector::Constant(n, std::numeric_limits<double>::infinity());
    for (Index j = 0; j < k; ++j) {
      Index pick = 0;
      if (j == 0) {
        pick = static_cast<Index>(rng.below(static_cast<std::uint64_t>(n)));
      } else {
        const double total = d2.sum();
        if (!(total > 0.0)) {
          // Every latent coincides with a chosen center; fall back to a random draw.
          for (Index l = 0; l < dl; ++l) centers(j, l) = rng.normal();
          continue;
        }
        double r = rng.uniform() * total;
        pick = n - 1;
        for (Index i = 0; i < n; ++i) {
          r -= d2(i);
          if (r < 0.0) {
            pick = i;
            break;
          }
        }
      }
      centers.row(j) = z.row(pick);
      for (Index i = 0; i < n; ++i) d2(i) = std::min(d2(i), (z.row(i) - centers.row(j)).squaredNorm());
    }
  } else {
    for (Index i = 0; i < centers.size(); ++i) centers.data()[i] = rng.normal();
  }
  return net;
}

Vector MoeNetwork::project(const Vector& x, nn::LayerNormCache* cache) const {
  if (x.size() != input_dim_) throw std::invalid_argument("input has wrong dimension");
  return nn::layer_norm(nn::dense(params_[proj_w_].value, params_[proj_b_].value, x), cache);
}

Vector MoeNetwork::window_log_weights(const Vector& z) const {
  const Matrix& c = params_[centers_].value;
  const Matrix& s = params_[log_scales_].value;
  Vector lw(c.rows());
  for (Index j = 0; j < c.rows(); ++j) {
    double acc = 0.0;
    for (Index l = 0; l < c.cols(); ++l) {
      const double e = (z(l) - c(j, l)) * std::exp(-s(j, l));
      acc += e * e;
    }
    lw(j) = -0.5 * acc;
  }
  return lw.array() - nn::log_sum_exp(lw);
}

Vector MoeNetwork::window_weights(const Vector& z) const { return window_log_weights(z).array().exp(); }

Vector MoeNetwork::router_logits(const Vector& z) const {
  if (!config_.use_router) return Vector::Zero(config_.num_experts);
  const Vector q = params_[wq_].value * z;
  return params_[keys_].value * q / (std::sqrt(static_cast<double>(config_.router_dim)) * config_.temperature);
}

GateVector MoeNetwork::gate(const Vector& x) const { return forward(x, 0.0).gate; }

ExpertOutput MoeNetwork::expert_forward(const Vector& x, std::optional<double> anchor_z, int expert) const {
  if (config_.mode != AnchorMode::kFree && !anchor_z) throw std::invalid_argument("anchor required in this mode");
  if (expert < 0 || expert >= config_.num_experts) throw std::out_of_range("expert index");
  if (x.size() != input_dim_) throw std::invalid_argument("input has wrong dimension");
  const auto& e = experts_[static_cast<std::size_t>(expert)];
  const Vector h = nn::activate(nn::dense(params_[e.w1].value, params_[e.b1].value, x), config_.activation);
  ExpertOutput out;
  out.pi = nn::softmax(nn::dense(params_[e.pi_w].value, params_[e.pi_b].value, h));
  out.head = nn::dense(params_[e.mu_w].value, params_[e.mu_b].value, h);
  out.t = nn::dense(params_[e.t_w].value, params_[e.t_b].value, h);
  out.sigma = out.t.array().exp().max(config_.sigma_min).min(config_.sigma_max);
  switch (config_.mode) {
    case AnchorMode::kAnchorDelta: out.mean = out.head.array() + *anchor_z; break;
    case AnchorMode::kAnchorOnly: out.mean = Vector::Constant(config_.components, *anchor_z); break;
    case AnchorMode::kFree: out.mean = out.head; break;
  }
  return out;
}

SampleForward MoeNetwork::forward(const Vector& x, double anchor_z, const KinkState* frozen) const {
  SampleForward f;
  f.x = x;
  f.anchor_z = anchor_z;
  if (x.size() != input_dim_) throw std::invalid_argument("input has wrong dimension");
  f.u = nn::dense(params_[proj_w_].value, params_[proj_b_].value, x);
  f.z = nn::layer_norm(f.u, &f.ln);
  f.log_w = window_log_weights(f.z);
  f.w = f.log_w.array().exp();

  const Index k = config_.num_experts;
  const double log_floor = std::log(config_.weight_floor);
  f.kinks.floored.resize(static_cast<std::size_t>(k));
  Vector v(k);
  for (Index j = 0; j < k; ++j) {
    const bool fl = frozen ? frozen->floored[static_cast<std::size_t>(j)] != 0 : f.log_w(j) < log_floor;
    f.kinks.floored[static_cast<std::size_t>(j)] = fl;
    v(j) = fl ? log_floor : f.log_w(j);
  }
  if (config_.use_router) {
    f.q = params_[wq_].value * f.z;
    f.logits = params_[keys_].value * f.q / (std::sqrt(static_cast<double>(config_.router_dim)) * config_.temperature);
    v += f.logits;
  } else {
    f.logits = Vector::Zero(k);
  }
  f.alpha = nn::softmax(v);
  f.gate = smooth_top_k(f.alpha, config_, frozen ? &frozen->active : nullptr);
  f.kinks.active = f.gate.active;
  f.active_mass = 0.0;
  for (Index j : f.gate.active) f.active_mass += f.alpha(j);

  const int cc = config_.components;
  for (std::size_t a = 0; a < f.gate.active.size(); ++a) {
    const auto& e = experts_[static_cast<std::size_t>(f.gate.active[a])];
    Vector h = nn::activate(nn::dense(params_[e.w1].value, params_[e.b1].value, x), config_.activation);
    ExpertOutput out;
    out.pi = nn::softmax(nn::dense(params_[e.pi_w].value, params_[e.pi_b].value, h));
    out.t = nn::dense(params_[e.t_w].value, params_[e.t_b].value, h);
    out.sigma.resize(cc);
    for (int c = 0; c < cc; ++c) {
      signed char regime;
      if (frozen) {
        regime = frozen->clamp[a * static_cast<std::size_t>(cc) + static_cast<std::size_t>(c)];
      } else {
        const double s = std::exp(out.t(c));
        regime = s < config_.sigma_min ? -1 : (s > config_.sigma_max ? 1 : 0);
      }
      f.kinks.clamp.push_back(regime);
      out.sigma(c) = regime < 0 ? config_.sigma_min : (regime > 0 ? config_.sigma_max : std::exp(out.t(c)));
    }
    switch (config_.mode) {
      case AnchorMode::kAnchorDelta:
        out.head = nn::dense(params_[e.mu_w].value, params_[e.mu_b].value, h);
        out.mean = out.head.array() + anchor_z;
        break;
      case AnchorMode::kAnchorOnly:
        out.head = Vector::Zero(cc);
        out.mean = Vector::Constant(cc, anchor_z);
        break;
      case AnchorMode::kFree:
        out.head = nn::dense(params_[e.mu_w].value, params_[e.mu_b].value, h);
        out.mean = out.head;
        break;
    }
    f.hidden.push_back(std::move(h));
    f.experts.push_back(std::move(out));
  }
  return f;
}

MixtureDensity MoeNetwork::density(const SampleForward& f) const {
  MixtureDensity d;
  for (std::size_t a = 0; a < f.gate.active.size(); ++a) {
    const double g = f.gate.weights(f.gate.active[a]);
    const auto& e = f.experts[a];
    for (int c = 0; c < config_.components; ++c) d.components.push_back({g * e.pi(c), e.mean(c), e.sigma(c)});
  }
  return d;
}

MixtureDensity MoeNetwork::density(const Vector& x, double anchor_z) const { return density(forward(x, anchor_z)); }

std::vector<MixtureDensity> MoeNetwork::densities(const Matrix& x, const Vector& anchor_z) const {
  if (x.rows() != anchor_z.size()) throw std::invalid_argument("anchor length does not match rows");
  std::vector<MixtureDensity> out;
  out.reserve(static_cast<std::size_t>(x.rows()));
  for (Index i = 0; i < x.rows(); ++i) out.push_back(density(x.row(i).transpose(), anchor_z(i)));
  return out;
}

double MoeNetwork::backward(const SampleForward& f, const SampleLoss& loss) {
  const int cc = config_.components;
  const std::size_t na = f.gate.active.size();

  // Joint log terms over (active expert, component) and their responsibilities.
  std::vector<Vector> log_pi(na);
  Vector terms(static_cast<Index>(na) * cc);
  for (std::size_t a = 0; a < na; ++a) {
    const auto& e = f.experts[a];
    log_pi[a] = e.pi.array().log();
    const double lg = std::log(f.gate.weights(f.gate.active[a]));
    for (int c = 0; c < cc; ++c) {
      const double r = (loss.y - e.mean(c)) / e.sigma(c);
      terms(static_cast<Index>(a) * cc + c) = lg + log_pi[a](c) - std::log(e.sigma(c)) - 0.5 * r * r - kHalfLog2Pi;
    }
  }
  const double lse = nn::log_sum_exp(terms);
  const Vector g_terms = -loss.nll_scale * (terms.array() - lse).exp();

  Vector g_gate = Vector::Zero(config_.num_experts);
  if (loss.gate_grad.size() > 0) g_gate = loss.gate_grad;

  for (std::size_t a = 0; a < na; ++a) {
    const Index j = f.gate.active[a];
    const auto& idx = experts_[static_cast<std::size_t>(j)];
    const auto& e = f.experts[a];
    const Vector gt = g_terms.segment(static_cast<Index>(a) * cc, cc);
    g_gate(j) += gt.sum() / f.gate.weights(j);

    // log-softmax backward for the mixing logits
    const Vector g_pil = gt - e.pi * gt.sum();
    Vector g_head(cc), g_t(cc);
    for (int c = 0; c < cc; ++c) {
      const double s = e.sigma(c);
      const double diff = loss.y - e.mean(c);
      const double g_mean = gt(c) * diff / (s * s);
      const double g_sigma = gt(c) * (-1.0 / s + diff * diff / (s * s * s));
      g_t(c) = f.kinks.clamp[a * static_cast<std::size_t>(cc) + static_cast<std::size_t>(c)] == 0 ? g_sigma * s : 0.0;
      g_head(c) = g_mean;
      if (config_.mode == AnchorMode::kAnchorDelta) g_head(c) += loss.delta_l2_scale * 2.0 * e.head(c);
    }

    const Vector& h = f.hidden[a];
    Vector g_h = nn::dense_backward(params_[idx.pi_w].value, h, g_pil, params_[idx.pi_w].grad, params_[idx.pi_b].grad);
    g_h += nn::dense_backward(params_[idx.t_w].value, h, g_t, params_[idx.t_w].grad, params_[idx.t_b].grad);
    if (config_.mode != AnchorMode::kAnchorOnly)
      g_h += nn::dense_backward(params_[idx.mu_w].value, h, g_head, params_[idx.mu_w].grad, params_[idx.mu_b].grad);
    const Vector g_pre = nn::activation_backward(h, g_h, config_.activation);
    params_[idx.w1].grad.noalias() += g_pre * f.x.transpose();
    params_[idx.b1].grad.col(0) += g_pre;
  }

  // Smoothed top-k: the mask is constant, only the active alphas carry gradient.
  const double denom = f.active_mass + config_.stab;
  double proj = 0.0;
  for (Index j : f.gate.active) proj += g_gate(j) * f.alpha(j);
  proj /= denom;
  Vector g_alpha = Vector::Zero(config_.num_experts);
  for (Index j : f.gate.active) g_alpha(j) = (1.0 - config_.smoothing) / denom * (g_gate(j) - proj);

  const Vector g_v = nn::softmax_backward(f.alpha, g_alpha);
  Vector g_z = Vector::Zero(config_.latent_dim);

  if (config_.use_router) {
    const double scale = 1.0 / (std::sqrt(static_cast<double>(config_.router_dim)) * config_.temperature);
    const Matrix& keys = params_[keys_].value;
    params_[keys_].grad.noalias() += scale * g_v * f.q.transpose();
    const Vector g_q = scale * keys.transpose() * g_v;
    params_[wq_].grad.noalias() += g_q * f.z.transpose();
    g_z += params_[wq_].value.transpose() * g_q;
  }

  Vector g_logw(config_.num_experts);
  for (Index j = 0; j < config_.num_experts; ++j) g_logw(j) = f.kinks.floored[static_cast<std::size_t>(j)] ? 0.0 : g_v(j);
  const Vector g_lwt = g_logw - f.w * g_logw.sum();

  const Matrix& centers = params_[centers_].value;
  const Matrix& scales = params_[log_scales_].value;
  Matrix& g_c = params_[centers_].grad;
  Matrix& g_s = params_[log_scales_].grad;
  for (Index j = 0; j < config_.num_experts; ++j) {
    for (Index l = 0; l < config_.latent_dim; ++l) {
      const double inv = std::exp(-scales(j, l));
      const double e = (f.z(l) - centers(j, l)) * inv;
      g_z(l) -= g_lwt(j) * e * inv;
      g_c(j, l) += g_lwt(j) * e * inv;
      g_s(j, l) += g_lwt(j) * e * e;
    }
  }

  const Vector g_u = nn::layer_norm_backward(g_z, f.ln);
  params_[proj_w_].grad.noalias() += g_u * f.x.transpose();
  params_[proj_b_].grad.col(0) += g_u;
  return -lse;
}

void MoeNetwork::clamp_log_scales() {
  auto& s = params_[log_scales_].value;
  s = s.cwiseMax(config_.log_scale_lo).cwiseMin(config_.log_scale_hi);
}

nlohmann::json MoeNetwork::to_json() const {
  return {{"config", moe_config_to_json(config_)}, {"input_dim", input_dim_}, {"params", params_.to_json()}};
}

MoeNetwork MoeNetwork::from_json(const nlohmann::json& j) {
  MoeNetwork net(moe_config_from_json(j.at("config")), j.at("input_dim").get<Index>());
  const auto loaded = nn::ParamStore::from_json(j.at("params"));
  for (const auto& p : loaded) {
    auto& dst = net.params_.at(p.name);
    if (dst.value.rows() != p.value.rows() || dst.value.cols() != p.value.cols())
      throw DataError("checkpoint parameter '" + p.name + "' has the wrong shape");
    dst.value = p.value;
  }
  if (loaded.size() != net.params_.size()) throw DataError("checkpoint parameter count mismatch");
  return net;
}

}  // namespace amoe
