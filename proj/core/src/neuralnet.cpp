#include "sparseful/neuralnet.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

#include "sparseful/random.hpp"

namespace sparseful::nn {

std::size_t Architecture::weight_count() const {
  std::size_t n = 0;
  for (std::size_t l = 0; l + 1 < layer_sizes.size(); ++l) n += layer_sizes[l] * layer_sizes[l + 1];
  return n;
}

std::size_t Architecture::parameter_count() const {
  std::size_t n = weight_count();
  for (std::size_t l = 1; l < layer_sizes.size(); ++l) n += layer_sizes[l];
  return n;
}

void Architecture::validate() const {
  if (layer_sizes.size() < 2) throw std::invalid_argument("architecture needs at least two layer sizes");
  for (auto s : layer_sizes)
    if (s == 0) throw std::invalid_argument("architecture layer sizes must be positive");
}

Architecture ParameterSet::architecture() const {
  Architecture arch;
  if (layers.empty()) return arch;
  arch.layer_sizes.push_back(layers.front().weights.cols);
  for (const auto& layer : layers) arch.layer_sizes.push_back(layer.weights.rows);
  return arch;
}

std::size_t ParameterSet::parameter_count() const {
  std::size_t n = 0;
  for (const auto& layer : layers) n += layer.weights.data.size() + layer.bias.size();
  return n;
}

bool ParameterSet::all_finite() const {
  for (const auto& layer : layers) {
    for (double w : layer.weights.data)
      if (!std::isfinite(w)) return false;
    for (double b : layer.bias)
      if (!std::isfinite(b)) return false;
  }
  return true;
}

bool SparseMask::matches(const ParameterSet& params) const {
  if (layers.size() != params.layers.size()) return false;
  for (std::size_t l = 0; l < layers.size(); ++l)
    if (layers[l].size() != params.layers[l].weights.data.size()) return false;
  return true;
}

std::size_t SparseMask::kept_count() const {
  std::size_t n = 0;
  for (const auto& layer : layers) n += static_cast<std::size_t>(std::count(layer.begin(), layer.end(), 1));
  return n;
}

void LabeledDataset::push_back(std::span<const double> x, std::uint32_t y) {
  if (feature_dim == 0 && labels.empty()) feature_dim = x.size();
  if (x.size() != feature_dim) throw std::invalid_argument("sample dimension mismatch");
  features.insert(features.end(), x.begin(), x.end());
  labels.push_back(y);
}

LabeledDataset LabeledDataset::slice(std::size_t first, std::size_t count) const {
  if (first + count > size()) throw std::out_of_range("dataset slice out of range");
  LabeledDataset out;
  out.feature_dim = feature_dim;
  out.features.assign(features.begin() + static_cast<std::ptrdiff_t>(first * feature_dim),
                      features.begin() + static_cast<std::ptrdiff_t>((first + count) * feature_dim));
  out.labels.assign(labels.begin() + static_cast<std::ptrdiff_t>(first),
                    labels.begin() + static_cast<std::ptrdiff_t>(first + count));
  return out;
}

LabeledDataset LabeledDataset::gather(std::span<const std::size_t> rows) const {
  LabeledDataset out;
  out.feature_dim = feature_dim;
  out.features.reserve(rows.size() * feature_dim);
  out.labels.reserve(rows.size());
  for (auto r : rows) {
    auto x = sample(r);
    out.features.insert(out.features.end(), x.begin(), x.end());
    out.labels.push_back(labels[r]);
  }
  return out;
}

ParameterSet init_parameters(const Architecture& arch, std::uint64_t seed) {
  arch.validate();
  Rng rng(seed);
  ParameterSet params;
  params.layers.reserve(arch.layer_count());
  for (std::size_t l = 0; l < arch.layer_count(); ++l) {
    const std::size_t fan_in = arch.layer_sizes[l];
    const std::size_t fan_out = arch.layer_sizes[l + 1];
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    Layer layer{Matrix(fan_out, fan_in), std::vector<double>(fan_out, 0.0)};
    for (double& w : layer.weights.data) w = rng.uniform(-limit, limit);
    params.layers.push_back(std::move(layer));
  }
  return params;
}

namespace {

void check_input(const ParameterSet& params, std::size_t dim) {
  if (params.layers.empty()) throw std::invalid_argument("parameter set has no layers");
  if (params.layers.front().weights.cols != dim)
    throw std::invalid_argument("input dimension " + std::to_string(dim) + " does not match network input " +
                                std::to_string(params.layers.front().weights.cols));
}

// out = W x + b
void affine(const Layer& layer, std::span<const double> x, std::vector<double>& out) {
  const auto& w = layer.weights;
  out.resize(w.rows);
  for (std::size_t r = 0; r < w.rows; ++r) {
    const double* wr = w.data.data() + r * w.cols;
    double acc = layer.bias[r];
    for (std::size_t c = 0; c < w.cols; ++c) acc += wr[c] * x[c];
    out[r] = acc;
  }
}

// Activations of every layer for one sample; acts[0] is the input.
void forward_trace(const ParameterSet& params, std::span<const double> x,
                   std::vector<std::vector<double>>& acts) {
  const std::size_t depth = params.layers.size();
  acts.resize(depth + 1);
  acts[0].assign(x.begin(), x.end());
  for (std::size_t l = 0; l < depth; ++l) {
    affine(params.layers[l], acts[l], acts[l + 1]);
    if (l + 1 < depth)
      for (double& v : acts[l + 1]) v = std::max(v, 0.0);
  }
}

// Numerically stable log-softmax of the true class plus the argmax class.
struct LogitSummary {
  double log_prob_true;
  std::size_t argmax;
};

LogitSummary summarize(std::span<const double> logits, std::uint32_t label) {
  std::size_t best = 0;
  for (std::size_t c = 1; c < logits.size(); ++c)
    if (logits[c] > logits[best]) best = c;
  const double peak = logits[best];
  double denom = 0.0;
  for (double z : logits) denom += std::exp(z - peak);
  return {logits[label] - peak - std::log(denom), best};
}

void check_labels(const LabeledDataset& data, std::size_t classes) {
  for (auto y : data.labels)
    if (y >= classes) throw std::invalid_argument("label " + std::to_string(y) + " out of range");
}

ParameterSet zeros_like(const ParameterSet& params) {
  ParameterSet g;
  g.layers.reserve(params.layers.size());
  for (const auto& layer : params.layers)
    g.layers.push_back({Matrix(layer.weights.rows, layer.weights.cols), std::vector<double>(layer.bias.size(), 0.0)});
  return g;
}

// Accumulates the gradient of the mean loss over `rows` into `grad`.
void accumulate_gradients(const ParameterSet& params, const LabeledDataset& data,
                          std::span<const std::size_t> rows, ParameterSet& grad) {
  const std::size_t depth = params.layers.size();
  const double inv_n = 1.0 / static_cast<double>(rows.size());
  std::vector<std::vector<double>> acts;
  std::vector<double> delta, prev_delta;
  for (auto r : rows) {
    forward_trace(params, data.sample(r), acts);
    const auto& logits = acts[depth];
    const double peak = *std::max_element(logits.begin(), logits.end());
    double denom = 0.0;
    for (double z : logits) denom += std::exp(z - peak);
    delta.resize(logits.size());
    for (std::size_t c = 0; c < logits.size(); ++c) delta[c] = std::exp(logits[c] - peak) / denom * inv_n;
    delta[data.labels[r]] -= inv_n;

    for (std::size_t l = depth; l-- > 0;) {
      const auto& layer = params.layers[l];
      auto& g = grad.layers[l];
      const auto& in = acts[l];
      for (std::size_t o = 0; o < layer.weights.rows; ++o) {
        const double d = delta[o];
        g.bias[o] += d;
        if (d == 0.0) continue;
        double* gr = g.weights.data.data() + o * layer.weights.cols;
        for (std::size_t i = 0; i < layer.weights.cols; ++i) gr[i] += d * in[i];
      }
      if (l == 0) break;
      prev_delta.assign(layer.weights.cols, 0.0);
      for (std::size_t o = 0; o < layer.weights.rows; ++o) {
        const double d = delta[o];
        if (d == 0.0) continue;
        const double* wr = layer.weights.data.data() + o * layer.weights.cols;
        for (std::size_t i = 0; i < layer.weights.cols; ++i) prev_delta[i] += wr[i] * d;
      }
      // ReLU derivative: the stored activation is positive exactly where the
      // pre-activation was.
      for (std::size_t i = 0; i < prev_delta.size(); ++i)
        if (in[i] <= 0.0) prev_delta[i] = 0.0;
      delta.swap(prev_delta);
    }
  }
}

void zero_masked_weights(ParameterSet& grad, const SparseMask& mask) {
  for (std::size_t l = 0; l < grad.layers.size(); ++l) {
    auto& w = grad.layers[l].weights.data;
    const auto& keep = mask.layers[l];
    for (std::size_t i = 0; i < w.size(); ++i)
      if (!keep[i]) w[i] = 0.0;
  }
}

}  // namespace

std::vector<double> forward(const ParameterSet& params, std::span<const double> x) {
  check_input(params, x.size());
  std::vector<std::vector<double>> acts;
  forward_trace(params, x, acts);
  return std::move(acts.back());
}

LossAccuracy loss_and_accuracy(const ParameterSet& params, const LabeledDataset& data) {
  if (data.empty()) throw std::invalid_argument("loss_and_accuracy: empty dataset");
  check_input(params, data.feature_dim);
  check_labels(data, params.layers.back().weights.rows);
  std::vector<std::vector<double>> acts;
  double loss = 0.0;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    forward_trace(params, data.sample(i), acts);
    const auto s = summarize(acts.back(), data.labels[i]);
    loss -= s.log_prob_true;
    if (s.argmax == data.labels[i]) ++correct;
  }
  const auto n = static_cast<double>(data.size());
  return {loss / n, static_cast<double>(correct) / n};
}

ParameterSet gradients(const ParameterSet& params, const LabeledDataset& batch) {
  if (batch.empty()) throw std::invalid_argument("gradients: empty batch");
  check_input(params, batch.feature_dim);
  check_labels(batch, params.layers.back().weights.rows);
  std::vector<std::size_t> rows(batch.size());
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  ParameterSet grad = zeros_like(params);
  accumulate_gradients(params, batch, rows, grad);
  return grad;
}

void apply_mask(ParameterSet& params, const SparseMask& mask) {
  if (!mask.matches(params)) throw std::invalid_argument("mask shape does not match parameters");
  zero_masked_weights(params, mask);
}

ParameterSet local_training(const ParameterSet& params, const LabeledDataset& data, const TrainingConfig& cfg,
                            const SparseMask* mask, const EpochObserver& on_epoch) {
  if (data.empty()) throw std::invalid_argument("local_training: empty dataset");
  if (cfg.batch_size == 0) throw std::invalid_argument("local_training: batch_size must be positive");
  check_input(params, data.feature_dim);
  check_labels(data, params.layers.back().weights.rows);

  ParameterSet current = params;
  if (mask) apply_mask(current, *mask);

  std::vector<std::size_t> order(data.size());
  ParameterSet grad = zeros_like(params);
  for (std::size_t epoch = 1; epoch <= cfg.local_epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(derive_seed(cfg.rng_seed, epoch));
    rng.shuffle(order.begin(), order.end());

    for (std::size_t first = 0; first < order.size(); first += cfg.batch_size) {
      const std::size_t count = std::min(cfg.batch_size, order.size() - first);
      for (auto& layer : grad.layers) {
        std::fill(layer.weights.data.begin(), layer.weights.data.end(), 0.0);
        std::fill(layer.bias.begin(), layer.bias.end(), 0.0);
      }
      accumulate_gradients(current, data, std::span(order).subspan(first, count), grad);
      if (mask) zero_masked_weights(grad, *mask);
      for (std::size_t l = 0; l < current.layers.size(); ++l) {
        auto& w = current.layers[l].weights.data;
        const auto& gw = grad.layers[l].weights.data;
        for (std::size_t i = 0; i < w.size(); ++i) w[i] -= cfg.learning_rate * gw[i];
        auto& b = current.layers[l].bias;
        const auto& gb = grad.layers[l].bias;
        for (std::size_t i = 0; i < b.size(); ++i) b[i] -= cfg.learning_rate * gb[i];
      }
      if (mask) zero_masked_weights(current, *mask);
    }
    if (on_epoch) on_epoch(epoch, current);
  }
  return current;
}

std::size_t nonzero_weights(const ParameterSet& params) {
  std::size_t n = 0;
  for (const auto& layer : params.layers)
    n += static_cast<std::size_t>(
        std::count_if(layer.weights.data.begin(), layer.weights.data.end(), [](double w) { return w != 0.0; }));
  return n;
}

}  // namespace sparseful::nn
