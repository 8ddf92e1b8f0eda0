#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

namespace sparseful::nn {

/// Layer widths: input dimension, hidden widths, class count.
struct Architecture {
  std::vector<std::size_t> layer_sizes;

  std::size_t input_dim() const { return layer_sizes.front(); }
  std::size_t class_count() const { return layer_sizes.back(); }
  std::size_t layer_count() const { return layer_sizes.size() - 1; }
  std::size_t weight_count() const;
  std::size_t parameter_count() const;

  /// Throws std::invalid_argument when fewer than two sizes or any size is 0.
  void validate() const;

  bool operator==(const Architecture&) const = default;
};

/// Row-major dense matrix.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }

  bool operator==(const Matrix&) const = default;
};

/// One affine layer: weights are out x in.
struct Layer {
  Matrix weights;
  std::vector<double> bias;

  bool operator==(const Layer&) const = default;
};

struct ParameterSet {
  std::vector<Layer> layers;

  Architecture architecture() const;
  std::size_t parameter_count() const;
  bool all_finite() const;

  bool operator==(const ParameterSet&) const = default;
};

/// Per-layer keep flags congruent to each weight matrix (1 = kept, 0 = pruned).
/// Biases are never masked.
struct SparseMask {
  std::vector<std::vector<std::uint8_t>> layers;

  bool matches(const ParameterSet& params) const;
  std::size_t kept_count() const;

  bool operator==(const SparseMask&) const = default;
};

struct LabeledDataset {
  std::size_t feature_dim = 0;
  std::vector<double> features;  // size() * feature_dim, row-major
  std::vector<std::uint32_t> labels;

  std::size_t size() const { return labels.size(); }
  bool empty() const { return labels.empty(); }
  std::span<const double> sample(std::size_t i) const {
    return {features.data() + i * feature_dim, feature_dim};
  }
  void push_back(std::span<const double> x, std::uint32_t y);

  /// Rows [first, first + count).
  LabeledDataset slice(std::size_t first, std::size_t count) const;
  /// Rows in the given order.
  LabeledDataset gather(std::span<const std::size_t> rows) const;
};

struct TrainingConfig {
  std::size_t local_epochs = 2;
  std::size_t batch_size = 16;
  double learning_rate = 0.1;
  std::uint64_t rng_seed = 0;
};

struct LossAccuracy {
  double loss = 0.0;
  double accuracy = 0.0;
};

/// Glorot-uniform weights, zero biases.
ParameterSet init_parameters(const Architecture& arch, std::uint64_t seed);

/// ReLU hidden layers, linear output. Throws std::invalid_argument on a
/// dimension mismatch.
std::vector<double> forward(const ParameterSet& params, std::span<const double> x);

/// Mean softmax cross-entropy and argmax accuracy (ties go to the lowest
/// class index). Throws std::invalid_argument on an empty dataset.
LossAccuracy loss_and_accuracy(const ParameterSet& params, const LabeledDataset& data);

/// Exact gradient of the mean cross-entropy over `batch`.
ParameterSet gradients(const ParameterSet& params, const LabeledDataset& batch);

/// Called after each epoch with the 1-based epoch index and current weights.
using EpochObserver = std::function<void(std::size_t, const ParameterSet&)>;

/// Minibatch SGD for cfg.local_epochs epochs. With a mask, masked gradient
/// entries and weights are zeroed after every step.
ParameterSet local_training(const ParameterSet& params, const LabeledDataset& data,
                            const TrainingConfig& cfg, const SparseMask* mask = nullptr,
                            const EpochObserver& on_epoch = {});

/// Zero every masked weight in place.
void apply_mask(ParameterSet& params, const SparseMask& mask);

/// Count of weights (not biases) that are nonzero.
std::size_t nonzero_weights(const ParameterSet& params);

}  // namespace sparseful::nn
