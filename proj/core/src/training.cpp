#include "amoe/training.hpp"

#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "amoe/rng.hpp"

namespace amoe {

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw UsageError("learning_rate must be positive");
  if (max_epochs < 1) throw UsageError("max_epochs must be at least 1");
  if (batch_size < 0 || auto_batch < 1) throw UsageError("batch size must be positive");
  if (lambda_scale < 0 || lambda_delta < 0 || lambda_load < 0) throw UsageError("regularizer weights must be >= 0");
}

Index TrainConfig::batch_for(Index n) const {
  if (batch_size > 0) return std::min<Index>(batch_size, n);
  return n <= full_batch_limit ? n : std::min<Index>(auto_batch, n);
}

nlohmann::json train_config_to_json(const TrainConfig& c) {
  return {{"learning_rate", c.learning_rate},   {"max_epochs", c.max_epochs},
          {"batch_size", c.batch_size},         {"full_batch_limit", c.full_batch_limit},
          {"auto_batch", c.auto_batch},         {"lambda_scale", c.lambda_scale},
          {"lambda_delta", c.lambda_delta},     {"lambda_entropy", c.lambda_entropy},
          {"lambda_load", c.lambda_load},       {"seed", c.seed}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.max_epochs = j.value("max_epochs", c.max_epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.full_batch_limit = j.value("full_batch_limit", c.full_batch_limit);
  c.auto_batch = j.value("auto_batch", c.auto_batch);
  c.lambda_scale = j.value("lambda_scale", c.lambda_scale);
  c.lambda_delta = j.value("lambda_delta", c.lambda_delta);
  c.lambda_entropy = j.value("lambda_entropy", c.lambda_entropy);
  c.lambda_load = j.value("lambda_load", c.lambda_load);
  c.seed = j.value("seed", c.seed);
  c.validate();
  return c;
}

std::string TrainTrace::to_csv() const {
  std::ostringstream os;
  os.precision(17);
  const std::size_t k = epochs.empty() ? 0 : epochs.front().usage.size();
  os << "epoch,train_nll,va_nll,reg_scale,reg_delta,reg_entropy,reg_load";
  for (std::size_t j = 0; j < k; ++j) os << ",usage_" << j;
  os << "\r\n";
  for (const auto& e : epochs) {
    os << e.epoch << ',' << e.train_nll << ',';
    if (e.va_nll) os << *e.va_nll;
    os << ',' << e.reg_scale << ',' << e.reg_delta << ',' << e.reg_entropy << ',' << e.reg_load;
    for (double u : e.usage) os << ',' << u;
    os << "\r\n";
  }
  return os.str();
}

double nll_loss(const MixtureDensity& density, double y) { return -density.log_pdf(y); }

ObjectiveParts regularized_objective(MoeNetwork& net, const TrainData& data, const IndexList& rows,
                                     const TrainConfig& cfg, bool accumulate,
                                     const std::vector<KinkState>* frozen, std::vector<KinkState>* record) {
  if (rows.empty()) throw std::invalid_argument("empty batch");
  const auto& mc = net.config();
  const auto b = static_cast<double>(rows.size());
  const Index k = mc.num_experts;

  std::vector<SampleForward> fw;
  fw.reserve(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const Index r = rows[i];
    fw.push_back(net.forward(data.x.row(r).transpose(), data.anchor_z(r), frozen ? &(*frozen)[i] : nullptr));
  }
  if (record) {
    record->clear();
    for (const auto& f : fw) record->push_back(f.kinks);
  }

  ObjectiveParts parts;
  parts.usage = Vector::Zero(k);
  double entropy_sum = 0.0, delta_sq = 0.0;
  Index delta_count = 0;
  for (const auto& f : fw) {
    parts.usage += f.gate.weights;
    for (Index j : f.gate.active) entropy_sum += f.gate.weights(j) * std::log(f.gate.weights(j));
    if (mc.mode == AnchorMode::kAnchorDelta) {
      for (const auto& e : f.experts) delta_sq += e.head.squaredNorm();
      delta_count += static_cast<Index>(f.experts.size()) * mc.components;
    }
  }
  parts.usage /= b;
  const Vector dev = parts.usage.array() - 1.0 / static_cast<double>(k);
  const Matrix& log_scales = net.params().at("window.log_scale").value;
  parts.scale = cfg.lambda_scale * log_scales.squaredNorm();
  parts.delta = delta_count > 0 ? cfg.lambda_delta * delta_sq / static_cast<double>(delta_count) : 0.0;
  parts.entropy = cfg.lambda_entropy * entropy_sum / b;
  parts.load = cfg.lambda_load * static_cast<double>(k) * dev.squaredNorm();

  const Vector load_grad = cfg.lambda_load * static_cast<double>(k) * 2.0 * dev / b;
  const double delta_scale = delta_count > 0 ? cfg.lambda_delta / static_cast<double>(delta_count) : 0.0;
  double nll_sum = 0.0;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& f = fw[i];
    if (accumulate) {
      SampleLoss loss;
      loss.y = data.y(rows[i]);
      loss.nll_scale = 1.0 / b;
      loss.gate_grad = load_grad;
      for (Index j : f.gate.active) loss.gate_grad(j) += cfg.lambda_entropy / b * (std::log(f.gate.weights(j)) + 1.0);
      loss.delta_l2_scale = delta_scale;
      nll_sum += net.backward(f, loss);
    } else {
      nll_sum += nll_loss(net.density(f), data.y(rows[i]));
    }
  }
  if (accumulate) net.params().at("window.log_scale").grad += 2.0 * cfg.lambda_scale * log_scales;
  parts.nll = nll_sum / b;
  return parts;
}

double mean_nll(const MoeNetwork& net, const TrainData& data) {
  double s = 0.0;
  for (Index i = 0; i < data.size(); ++i) s += nll_loss(net.density(data.x.row(i).transpose(), data.anchor_z(i)), data.y(i));
  return s / static_cast<double>(data.size());
}

EpochRecord run_epoch(MoeNetwork& net, nn::AdamState& adam, const TrainData& data, const TrainConfig& cfg, int epoch) {
  const Index n = data.size();
  const Index bs = cfg.batch_for(n);
  IndexList order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  if (bs < n) {
    Rng rng(Rng::mix(cfg.seed, static_cast<std::uint64_t>(epoch)));
    rng.shuffle(order);
  }
  EpochRecord rec;
  rec.epoch = epoch;
  Vector usage = Vector::Zero(net.config().num_experts);
  double nll = 0.0;
  for (Index start = 0; start < n; start += bs) {
    const Index end = std::min(n, start + bs);
    IndexList batch(order.begin() + start, order.begin() + end);
    const auto w = static_cast<double>(end - start) / static_cast<double>(n);
    net.params().zero_grad();
    const ObjectiveParts p = regularized_objective(net, data, batch, cfg, true);
    if (!std::isfinite(p.total())) throw NumericalError("non-finite training loss at epoch " + std::to_string(epoch));
    nll += w * p.nll;
    rec.reg_scale += w * p.scale;
    rec.reg_delta += w * p.delta;
    rec.reg_entropy += w * p.entropy;
    rec.reg_load += w * p.load;
    usage += w * p.usage;
    nn::adam_step(net.params(), adam);
    net.clamp_log_scales();
    if (!net.params().all_finite()) throw NumericalError("non-finite parameters at epoch " + std::to_string(epoch));
  }
  rec.train_nll = nll;
  rec.usage.assign(usage.data(), usage.data() + usage.size());
  return rec;
}

Phase1Result train_phase1(MoeNetwork init, const TrainData& tr, const TrainData& va, const TrainConfig& cfg,
                          const EpochHook& hook) {
  cfg.validate();
  if (tr.size() == 0 || va.size() == 0) throw DataError("phase 1 needs non-empty TR and VA");
  Phase1Result res;
  MoeNetwork net = std::move(init);
  nn::AdamState adam(net.params(), cfg.adam());
  double best = std::numeric_limits<double>::infinity();
  if (hook) hook(0, net);
  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    try {
      EpochRecord rec = run_epoch(net, adam, tr, cfg, epoch);
      const double va_nll = mean_nll(net, va);
      if (!std::isfinite(va_nll)) throw NumericalError("non-finite validation NLL at epoch " + std::to_string(epoch));
      rec.va_nll = va_nll;
      res.trace.epochs.push_back(std::move(rec));
      if (hook) hook(epoch, net);
      if (va_nll < best) {
        best = va_nll;
        res.best_epoch = epoch;
        res.best = net;
      }
    } catch (const NumericalError& e) {
      throw DivergenceError(e.what(), res.trace);
    }
  }
  res.best_va_nll = best;
  return res;
}

Phase2Result train_phase2(MoeNetwork start, const TrainData& tv, int epochs, const TrainConfig& cfg) {
  cfg.validate();
  if (epochs < 0) throw std::invalid_argument("negative epoch count");
  Phase2Result res{std::move(start), {}};
  nn::AdamState adam(res.model.params(), cfg.adam());
  // A distinct shuffling stream from phase 1.
  TrainConfig c2 = cfg;
  c2.seed = Rng::mix(cfg.seed, 0x9e3779b9ULL);
  for (int epoch = 1; epoch <= epochs; ++epoch) {
    try {
      res.trace.epochs.push_back(run_epoch(res.model, adam, tv, c2, epoch));
    } catch (const NumericalError& e) {
      throw DivergenceError(e.what(), res.trace);
    }
  }
  return res;
}

}  // namespace amoe
