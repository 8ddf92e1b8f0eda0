#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "sparseful/neuralnet.hpp"

namespace sparseful::compression {

enum class Kind : std::uint32_t { dense = 0, sparse = 1, quantized = 2, sparse_quantized = 3 };

std::string_view to_string(Kind kind);
/// Accepts "dense", "sparse", "quantized", "sparse+quantized".
std::optional<Kind> parse_kind(std::string_view text);

constexpr bool is_sparse(Kind k) { return k == Kind::sparse || k == Kind::sparse_quantized; }
constexpr bool is_quantized(Kind k) { return k == Kind::quantized || k == Kind::sparse_quantized; }

struct Strategy {
  Kind kind = Kind::sparse_quantized;
  double psi = 0.3;

  /// Throws std::invalid_argument when psi is outside [0, 1].
  void validate() const;
  bool operator==(const Strategy&) const = default;
};

/// Number of weights pruned from a layer of `n` weights at ratio `psi`,
/// floor(psi * n). A 1e-9 guard absorbs products such as 0.29 * 100 that
/// land just under an integer.
std::size_t pruned_count(double psi, std::size_t n);

struct PruneResult {
  nn::ParameterSet params;
  nn::SparseMask mask;
};

/// Per-layer magnitude pruning. In each layer the floor(psi * n) weights of
/// smallest magnitude are zeroed, ties going to the lower flat index. Biases
/// are untouched.
PruneResult prune_magnitude(const nn::ParameterSet& params, double psi);

/// 8-bit affine quantization of one tensor: value ~= (q - zero_point) * scale.
struct QuantizedTensor {
  std::size_t rows = 0;
  std::size_t cols = 0;  // 0 marks a vector
  double scale = 1.0;  // stored as f32 on the wire
  std::uint8_t zero_point = 0;
  std::vector<std::uint8_t> values;

  bool operator==(const QuantizedTensor&) const = default;
};

/// Tensors in layer order: weights of layer 0, bias of layer 0, weights of layer 1, ...
struct QuantizedParameterSet {
  std::vector<QuantizedTensor> tensors;

  bool operator==(const QuantizedParameterSet&) const = default;
};

QuantizedTensor quantize_tensor(std::span<const double> values, std::size_t rows, std::size_t cols);
std::vector<double> dequantize_tensor(const QuantizedTensor& q);

/// Throws std::invalid_argument on non-finite input.
QuantizedParameterSet quantize_affine(const nn::ParameterSet& params);
nn::ParameterSet dequantize(const QuantizedParameterSet& q);

/// Output of a compression strategy. `params` always holds the decoded
/// values (pruned and/or dequantized) so receivers can use the model directly;
/// `mask` and `quantized` carry what goes on the wire.
struct CompressedModel {
  Kind kind = Kind::dense;
  nn::ParameterSet params;
  std::optional<nn::SparseMask> mask;
  std::optional<QuantizedParameterSet> quantized;

  /// Throws std::logic_error if the payload does not match `kind`.
  void validate() const;
  bool operator==(const CompressedModel&) const = default;
};

/// Apply the strategy: prune, quantize, or prune then quantize.
CompressedModel compress(const nn::ParameterSet& model, const Strategy& strategy);

/// Package an already-pruned model with an explicit mask (sparse kinds) and
/// quantize when the kind asks for it. For non-sparse kinds `mask` is ignored.
CompressedModel encode(const nn::ParameterSet& model, Kind kind, const nn::SparseMask* mask);

/// Size of the canonical serialization, computed from the format arithmetic.
std::size_t serialized_size(const CompressedModel& m);
/// Size without the 16-byte header and the 8-byte-per-tensor shape records.
std::size_t payload_size(const CompressedModel& m);

/// Canonical little-endian serialization.
std::vector<std::uint8_t> serialize(const CompressedModel& m);
/// Throws std::runtime_error on malformed input.
CompressedModel deserialize(std::span<const std::uint8_t> bytes);

void write_checkpoint(const CompressedModel& m, const std::filesystem::path& path);
CompressedModel read_checkpoint(const std::filesystem::path& path);

/// One multiply-accumulate per nonzero weight per inference.
std::size_t nonzero_macs(const nn::ParameterSet& params);
std::size_t nonzero_macs(const CompressedModel& m);
/// Weight count of the unpruned architecture.
std::size_t dense_macs(const nn::Architecture& arch);

}  // namespace sparseful::compression
