#pragma once

// Logistic regression and one-hidden-layer ReLU classifiers over a flat
// parameter vector, with mean cross-entropy loss, analytic gradients and SGD.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fairfl/data.hpp"
#include "fairfl/errors.hpp"
#include "fairfl/fairness.hpp"
#include "fairfl/seed.hpp"

namespace fairfl {

struct Architecture {
  enum class Kind { linear, mlp };

  Kind kind = Kind::linear;
  std::size_t input_dim = 1;
  std::size_t hidden = 0;

  static Architecture linear(std::size_t d) { return {Kind::linear, d, 0}; }
  static Architecture mlp(std::size_t d, std::size_t hidden) { return {Kind::mlp, d, hidden}; }

  void validate() const {
    if (input_dim == 0) throw ValidationError("input dimension must be >= 1");
    if (kind == Kind::mlp && hidden == 0) throw ValidationError("mlp needs hidden >= 1");
  }

  /// Linear: [w (d), b]. MLP: [W1 (hidden x d, row-major), b1 (hidden), w2 (hidden), b2].
  std::size_t param_count() const noexcept {
    if (kind == Kind::linear) return input_dim + 1;
    return hidden * input_dim + hidden + hidden + 1;
  }

  bool operator==(const Architecture&) const = default;
};

inline std::string to_string(const Architecture& a) {
  if (a.kind == Architecture::Kind::linear) return "linear(d=" + std::to_string(a.input_dim) + ")";
  return "mlp(d=" + std::to_string(a.input_dim) + ", hidden=" + std::to_string(a.hidden) + ")";
}

class ModelParams {
 public:
  explicit ModelParams(Architecture arch) : arch_(arch) {
    arch_.validate();
    params_.assign(arch_.param_count(), 0.0);
  }
  ModelParams(Architecture arch, std::vector<double> params) : arch_(arch), params_(std::move(params)) {
    arch_.validate();
    if (params_.size() != arch_.param_count())
      throw ValidationError("parameter vector has length " + std::to_string(params_.size()) + ", architecture " +
                            to_string(arch_) + " needs " + std::to_string(arch_.param_count()));
    for (double v : params_)
      if (!std::isfinite(v)) throw ValidationError("model parameters must be finite");
  }

  const Architecture& architecture() const noexcept { return arch_; }
  std::span<const double> params() const noexcept { return params_; }
  std::span<double> mutable_params() noexcept { return params_; }
  std::size_t size() const noexcept { return params_.size(); }
  double operator[](std::size_t i) const noexcept { return params_[i]; }

  bool operator==(const ModelParams&) const = default;

 private:
  Architecture arch_;
  std::vector<double> params_;
};

/// Weights i.i.d. uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)); biases zero.
inline ModelParams init_params(const Architecture& arch, std::uint64_t seed) {
  ModelParams m(arch);
  Rng rng(seed);
  auto p = m.mutable_params();
  const std::size_t d = arch.input_dim;
  if (arch.kind == Architecture::Kind::linear) {
    std::uniform_real_distribution<double> u(-1.0 / std::sqrt(double(d)), 1.0 / std::sqrt(double(d)));
    for (std::size_t k = 0; k < d; ++k) p[k] = u(rng);
    return m;
  }
  const std::size_t h = arch.hidden;
  std::uniform_real_distribution<double> u1(-1.0 / std::sqrt(double(d)), 1.0 / std::sqrt(double(d)));
  for (std::size_t k = 0; k < h * d; ++k) p[k] = u1(rng);
  std::uniform_real_distribution<double> u2(-1.0 / std::sqrt(double(h)), 1.0 / std::sqrt(double(h)));
  for (std::size_t k = 0; k < h; ++k) p[h * d + h + k] = u2(rng);
  return m;
}

/// FNV-1a over the raw parameter bytes; used to fingerprint snapshots in logs.
inline std::uint64_t params_hash(const ModelParams& m) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (double v : m.params()) {
    unsigned char bytes[sizeof(double)];
    std::memcpy(bytes, &v, sizeof(double));
    for (unsigned char b : bytes) {
      h ^= b;
      h *= 0x100000001b3ULL;
    }
  }
  return h;
}

inline double euclidean_distance(const ModelParams& x, const ModelParams& y) {
  if (x.architecture() != y.architecture()) throw ValidationError("architecture mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = x[i] - y[i];
    s += d * d;
  }
  return std::sqrt(s);
}

inline double sigmoid(double z) noexcept {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

namespace detail {

inline void check_dim(const ModelParams& m, std::size_t d) {
  if (d != m.architecture().input_dim)
    throw ValidationError("feature dimension " + std::to_string(d) + " does not match model input dimension " +
                          std::to_string(m.architecture().input_dim));
}

// Final logit; for the MLP also fills the hidden pre-activations when `pre` is given.
inline double forward(std::span<const double> p, const Architecture& a, std::span<const double> x,
                      double* pre = nullptr) {
  const std::size_t d = a.input_dim;
  if (a.kind == Architecture::Kind::linear) {
    double z = p[d];
    for (std::size_t k = 0; k < d; ++k) z += p[k] * x[k];
    return z;
  }
  const std::size_t h = a.hidden;
  const double* W1 = p.data();
  const double* b1 = W1 + h * d;
  const double* w2 = b1 + h;
  double z = w2[h];
  for (std::size_t j = 0; j < h; ++j) {
    double s = b1[j];
    for (std::size_t k = 0; k < d; ++k) s += W1[j * d + k] * x[k];
    if (pre) pre[j] = s;
    z += w2[j] * (s > 0.0 ? s : 0.0);
  }
  return z;
}

inline double bce(double prob, int label) noexcept {
  const double q = std::clamp(prob, 1e-12, 1.0 - 1e-12);
  return label == 1 ? -std::log(q) : -std::log(1.0 - q);
}

}  // namespace detail

inline double predict_proba(const ModelParams& m, std::span<const double> features) {
  detail::check_dim(m, features.size());
  return sigmoid(detail::forward(m.params(), m.architecture(), features));
}

/// Label 1 iff probability >= 0.5 (a tie at exactly 0.5 predicts 1).
inline int predict_label(const ModelParams& m, std::span<const double> features) {
  return predict_proba(m, features) >= 0.5 ? 1 : 0;
}

inline std::vector<int> predict_labels(const ModelParams& m, const ClientDataset& data) {
  detail::check_dim(m, data.dim());
  std::vector<int> out;
  out.reserve(data.size());
  for (const auto& s : data.samples())
    out.push_back(sigmoid(detail::forward(m.params(), m.architecture(), s.features)) >= 0.5 ? 1 : 0);
  return out;
}

/// Mean binary cross-entropy with probabilities clamped to [1e-12, 1 - 1e-12].
inline double loss(const ModelParams& m, std::span<const Sample> batch) {
  if (batch.empty()) throw ValidationError("loss needs a non-empty dataset");
  detail::check_dim(m, batch.front().features.size());
  double s = 0.0;
  for (const auto& x : batch) s += detail::bce(sigmoid(detail::forward(m.params(), m.architecture(), x.features)), x.label);
  return s / static_cast<double>(batch.size());
}

inline double loss(const ModelParams& m, const ClientDataset& data) { return loss(m, data.samples()); }

inline double misclassification_rate(const ModelParams& m, const ClientDataset& data) {
  const auto pred = predict_labels(m, data);
  std::size_t wrong = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) wrong += pred[i] != data[i].label ? 1 : 0;
  return static_cast<double>(wrong) / static_cast<double>(data.size());
}

/// Misclassification rate and fairness counts from a single prediction pass.
struct Evaluation {
  double error_rate = 0.0;
  GroupRates rates;

  double accuracy() const noexcept { return 1.0 - error_rate; }
  std::optional<double> gap(FairnessMetric f) const { return fairness_gap(f, rates); }
};

inline Evaluation evaluate(const ModelParams& m, const ClientDataset& data) {
  const auto pred = predict_labels(m, data);
  Evaluation e;
  std::size_t wrong = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    wrong += pred[i] != data[i].label ? 1 : 0;
    e.rates.add(pred[i], data[i].label, data[i].group);
  }
  e.error_rate = static_cast<double>(wrong) / static_cast<double>(data.size());
  return e;
}

struct Proximal {
  double mu = 0.0;
  ModelParams anchor;
};

/// Mean cross-entropy plus (mu/2)||theta - anchor||^2 when `prox` is given.
inline double objective(const ModelParams& m, std::span<const Sample> batch, const Proximal* prox = nullptr) {
  double v = loss(m, batch);
  if (prox && prox->mu != 0.0) {
    double s = 0.0;
    for (std::size_t i = 0; i < m.size(); ++i) {
      const double d = m[i] - prox->anchor[i];
      s += d * d;
    }
    v += 0.5 * prox->mu * s;
  }
  return v;
}

namespace detail {

// Accumulates the gradient of the objective over samples get(0..count-1) into `grad`
// (overwritten). Returns the batch's mean cross-entropy so callers can watch for divergence.
template <class Get>
double gradient_into(std::span<const double> p, const Architecture& a, std::size_t count, Get get,
                     const Proximal* prox, std::span<double> grad, std::vector<double>& scratch) {
  std::fill(grad.begin(), grad.end(), 0.0);
  const std::size_t d = a.input_dim;
  const double inv_n = 1.0 / static_cast<double>(count);
  double total = 0.0;
  if (a.kind == Architecture::Kind::linear) {
    for (std::size_t i = 0; i < count; ++i) {
      const Sample& s = get(i);
      const double prob = sigmoid(forward(p, a, s.features));
      total += bce(prob, s.label);
      const double dz = (prob - s.label) * inv_n;
      for (std::size_t k = 0; k < d; ++k) grad[k] += dz * s.features[k];
      grad[d] += dz;
    }
  } else {
    const std::size_t h = a.hidden;
    scratch.resize(h);
    const double* w2 = p.data() + h * d + h;
    double* gW1 = grad.data();
    double* gb1 = gW1 + h * d;
    double* gw2 = gb1 + h;
    for (std::size_t i = 0; i < count; ++i) {
      const Sample& s = get(i);
      const double prob = sigmoid(forward(p, a, s.features, scratch.data()));
      total += bce(prob, s.label);
      const double dz = (prob - s.label) * inv_n;
      for (std::size_t j = 0; j < h; ++j) {
        const double pre = scratch[j];
        if (pre <= 0.0) continue;
        gw2[j] += dz * pre;
        const double dh = dz * w2[j];
        gb1[j] += dh;
        for (std::size_t k = 0; k < d; ++k) gW1[j * d + k] += dh * s.features[k];
      }
      gw2[h] += dz;
    }
  }
  if (prox && prox->mu != 0.0) {
    for (std::size_t i = 0; i < grad.size(); ++i) grad[i] += prox->mu * (p[i] - prox->anchor[i]);
  }
  return total * inv_n;
}

}  // namespace detail

inline std::vector<double> gradient(const ModelParams& m, std::span<const Sample> batch,
                                    const Proximal* prox = nullptr) {
  if (batch.empty()) throw ValidationError("gradient needs a non-empty batch");
  detail::check_dim(m, batch.front().features.size());
  if (prox && prox->anchor.architecture() != m.architecture())
    throw ValidationError("proximal anchor architecture mismatch");
  std::vector<double> g(m.size());
  std::vector<double> scratch;
  detail::gradient_into(
      m.params(), m.architecture(), batch.size(), [&](std::size_t i) -> const Sample& { return batch[i]; }, prox, g,
      scratch);
  return g;
}

struct TrainConfig {
  std::size_t epochs = 1;
  double learning_rate = 0.1;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
  std::optional<Proximal> proximal;

  void validate() const {
    if (epochs < 1) throw ValidationError("epochs must be >= 1");
    // 0 is accepted as a no-op step size.
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) throw ValidationError("learning_rate must be >= 0");
    if (batch_size < 1) throw ValidationError("batch_size must be >= 1");
    if (proximal && !(proximal->mu >= 0.0)) throw ValidationError("proximal mu must be >= 0");
  }
};

/// Mini-batch SGD for `cfg.epochs` epochs; each epoch reshuffles the sample order from a stream
/// seeded by `cfg.seed`. The last batch of an epoch may be short.
inline ModelParams sgd_train(const ModelParams& init, const ClientDataset& data, const TrainConfig& cfg) {
  cfg.validate();
  detail::check_dim(init, data.dim());
  const Proximal* prox = cfg.proximal ? &*cfg.proximal : nullptr;
  if (prox && prox->anchor.architecture() != init.architecture())
    throw ValidationError("proximal anchor architecture mismatch");

  ModelParams model = init;
  auto p = model.mutable_params();
  const auto& arch = model.architecture();
  const std::size_t n = data.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<double> grad(model.size()), scratch;
  Rng rng(cfg.seed);

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    detail::shuffle_indices(order, rng);
    for (std::size_t start = 0; start < n; start += cfg.batch_size) {
      const std::size_t stop = std::min(n, start + cfg.batch_size);
      const double batch_loss = detail::gradient_into(
          p, arch, stop - start, [&](std::size_t i) -> const Sample& { return data[order[start + i]]; }, prox, grad,
          scratch);
      if (!std::isfinite(batch_loss)) throw DivergenceError(epoch);
      for (std::size_t i = 0; i < grad.size(); ++i) p[i] -= cfg.learning_rate * grad[i];
    }
    for (double v : p)
      if (!std::isfinite(v)) throw DivergenceError(epoch);
  }
  return model;
}

/// Plain full-batch gradient descent steps on the mean cross-entropy.
inline ModelParams gradient_steps(const ModelParams& init, const ClientDataset& data, std::size_t steps,
                                  double learning_rate) {
  detail::check_dim(init, data.dim());
  ModelParams model = init;
  auto p = model.mutable_params();
  std::vector<double> grad(model.size()), scratch;
  for (std::size_t step = 1; step <= steps; ++step) {
    const double l = detail::gradient_into(
        p, model.architecture(), data.size(), [&](std::size_t i) -> const Sample& { return data[i]; }, nullptr, grad,
        scratch);
    if (!std::isfinite(l)) throw DivergenceError(step);
    for (std::size_t i = 0; i < grad.size(); ++i) p[i] -= learning_rate * grad[i];
  }
  return model;
}

}  // namespace fairfl
