#include "sparseful/compression.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numeric>
#include <stdexcept>
#include <string>

namespace sparseful::compression {

namespace {

constexpr std::uint8_t kMagic[4] = {'S', 'P', 'F', 'L'};
constexpr std::uint32_t kFormatVersion = 1;
constexpr std::size_t kHeaderBytes = 16;
constexpr std::size_t kShapeBytes = 8;
constexpr std::size_t kQuantMetaBytes = 5;  // f32 scale + u8 zero point

}  // namespace

std::string_view to_string(Kind kind) {
  switch (kind) {
    case Kind::dense: return "dense";
    case Kind::sparse: return "sparse";
    case Kind::quantized: return "quantized";
    case Kind::sparse_quantized: return "sparse+quantized";
  }
  return "unknown";
}

std::optional<Kind> parse_kind(std::string_view text) {
  for (auto k : {Kind::dense, Kind::sparse, Kind::quantized, Kind::sparse_quantized})
    if (text == to_string(k)) return k;
  return std::nullopt;
}

void Strategy::validate() const {
  if (!(psi >= 0.0 && psi <= 1.0)) throw std::invalid_argument("psi must lie in [0, 1]");
}

std::size_t pruned_count(double psi, std::size_t n) {
  const auto k = static_cast<std::size_t>(std::floor(psi * static_cast<double>(n) + 1e-9));
  return std::min(k, n);
}

PruneResult prune_magnitude(const nn::ParameterSet& params, double psi) {
  if (!(psi >= 0.0 && psi <= 1.0)) throw std::invalid_argument("prune_magnitude: psi must lie in [0, 1]");
  PruneResult out{params, {}};
  out.mask.layers.reserve(params.layers.size());
  std::vector<std::size_t> order;
  for (auto& layer : out.params.layers) {
    auto& w = layer.weights.data;
    std::vector<std::uint8_t> keep(w.size(), 1);
    const std::size_t drop = pruned_count(psi, w.size());
    if (drop > 0) {
      order.resize(w.size());
      std::iota(order.begin(), order.end(), std::size_t{0});
      // Only the first `drop` positions of the order matter.
      std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(drop), order.end(),
                        [&](std::size_t a, std::size_t b) {
                          const double ma = std::abs(w[a]), mb = std::abs(w[b]);
                          return ma < mb || (ma == mb && a < b);
                        });
      for (std::size_t i = 0; i < drop; ++i) {
        keep[order[i]] = 0;
        w[order[i]] = 0.0;
      }
    }
    out.mask.layers.push_back(std::move(keep));
  }
  return out;
}

QuantizedTensor quantize_tensor(std::span<const double> values, std::size_t rows, std::size_t cols) {
  QuantizedTensor q;
  q.rows = rows;
  q.cols = cols;
  q.values.resize(values.size());
  if (values.empty()) return q;

  for (double v : values)
    if (!std::isfinite(v)) throw std::invalid_argument("quantize: non-finite value");
  const auto [min_it, max_it] = std::minmax_element(values.begin(), values.end());
  const double lo = *min_it, hi = *max_it;

  // Only the all-zero tensor has an empty range; give it unit scale.
  if (lo == 0.0 && hi == 0.0) {
    q.scale = 1.0;
    q.zero_point = 0;
    return q;
  }

  // The grid always contains zero so pruned entries dequantize exactly.
  const double range_lo = std::min(lo, 0.0), range_hi = std::max(hi, 0.0);
  const double span = range_hi - range_lo;
  q.scale = span / 255.0;
  q.zero_point = static_cast<std::uint8_t>(std::clamp(std::round(-range_lo * 255.0 / span), 0.0, 255.0));
  const auto z = static_cast<double>(q.zero_point);
  for (std::size_t i = 0; i < values.size(); ++i)
    q.values[i] = static_cast<std::uint8_t>(std::clamp(std::round(values[i] * 255.0 / span) + z, 0.0, 255.0));
  return q;
}

std::vector<double> dequantize_tensor(const QuantizedTensor& q) {
  std::vector<double> out(q.values.size());
  const auto z = static_cast<int>(q.zero_point);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<double>(static_cast<int>(q.values[i]) - z) * q.scale;
  return out;
}

QuantizedParameterSet quantize_affine(const nn::ParameterSet& params) {
  QuantizedParameterSet out;
  out.tensors.reserve(2 * params.layers.size());
  for (const auto& layer : params.layers) {
    out.tensors.push_back(quantize_tensor(layer.weights.data, layer.weights.rows, layer.weights.cols));
    out.tensors.push_back(quantize_tensor(layer.bias, layer.bias.size(), 0));
  }
  return out;
}

nn::ParameterSet dequantize(const QuantizedParameterSet& q) {
  if (q.tensors.size() % 2 != 0) throw std::invalid_argument("dequantize: tensors must come in weight/bias pairs");
  nn::ParameterSet out;
  for (std::size_t t = 0; t < q.tensors.size(); t += 2) {
    const auto& w = q.tensors[t];
    nn::Layer layer;
    layer.weights.rows = w.rows;
    layer.weights.cols = w.cols;
    layer.weights.data = dequantize_tensor(w);
    layer.bias = dequantize_tensor(q.tensors[t + 1]);
    out.layers.push_back(std::move(layer));
  }
  return out;
}

void CompressedModel::validate() const {
  if (is_sparse(kind) != mask.has_value()) throw std::logic_error("compressed model: mask presence does not match kind");
  if (is_quantized(kind) != quantized.has_value())
    throw std::logic_error("compressed model: quantized payload presence does not match kind");
  if (mask && !mask->matches(params)) throw std::logic_error("compressed model: mask shape mismatch");
  if (quantized && quantized->tensors.size() != 2 * params.layers.size())
    throw std::logic_error("compressed model: quantized tensor count mismatch");
}

CompressedModel encode(const nn::ParameterSet& model, Kind kind, const nn::SparseMask* mask) {
  CompressedModel out;
  out.kind = kind;
  out.params = model;
  if (is_sparse(kind)) {
    if (!mask) throw std::invalid_argument("encode: sparse kinds need a mask");
    nn::apply_mask(out.params, *mask);
    out.mask = *mask;
  }
  if (is_quantized(kind)) {
    out.quantized = quantize_affine(out.params);
    out.params = dequantize(*out.quantized);
    // Pruned entries quantize to the zero point, so they decode to exactly 0.
  }
  return out;
}

CompressedModel compress(const nn::ParameterSet& model, const Strategy& strategy) {
  strategy.validate();
  if (is_sparse(strategy.kind)) {
    auto pruned = prune_magnitude(model, strategy.psi);
    return encode(pruned.params, strategy.kind, &pruned.mask);
  }
  return encode(model, strategy.kind, nullptr);
}

namespace {

struct TensorView {
  std::size_t rows, cols, count;
  const std::vector<double>* values;
  const std::vector<std::uint8_t>* keep;  // null for dense tensors
  const QuantizedTensor* quant;
};

std::vector<TensorView> tensor_views(const CompressedModel& m) {
  std::vector<TensorView> views;
  for (std::size_t l = 0; l < m.params.layers.size(); ++l) {
    const auto& layer = m.params.layers[l];
    const auto* qw = m.quantized ? &m.quantized->tensors[2 * l] : nullptr;
    const auto* qb = m.quantized ? &m.quantized->tensors[2 * l + 1] : nullptr;
    views.push_back({layer.weights.rows, layer.weights.cols, layer.weights.data.size(), &layer.weights.data,
                     m.mask ? &m.mask->layers[l] : nullptr, qw});
    views.push_back({layer.bias.size(), 0, layer.bias.size(), &layer.bias, nullptr, qb});
  }
  return views;
}

std::size_t survivors(const TensorView& t) {
  if (!t.keep) return t.count;
  return static_cast<std::size_t>(std::count(t.keep->begin(), t.keep->end(), 1));
}

std::size_t tensor_payload(const TensorView& t, Kind kind) {
  const std::size_t bitmap = (t.count + 7) / 8;
  switch (kind) {
    case Kind::dense: return 4 * t.count;
    case Kind::quantized: return kQuantMetaBytes + t.count;
    case Kind::sparse: return bitmap + 4 * survivors(t);
    case Kind::sparse_quantized: return bitmap + kQuantMetaBytes + survivors(t);
  }
  return 0;
}

class ByteWriter {
 public:
  explicit ByteWriter(std::size_t reserve) { bytes_.reserve(reserve); }
  void u8(std::uint8_t v) { bytes_.push_back(v); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f32(double v) { u32(std::bit_cast<std::uint32_t>(static_cast<float>(v))); }
  std::vector<std::uint8_t> take() { return std::move(bytes_); }

 private:
  std::vector<std::uint8_t> bytes_;
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}
  std::uint8_t u8() {
    need(1);
    return bytes_[pos_++];
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  double f32() { return static_cast<double>(std::bit_cast<float>(u32())); }
  std::span<const std::uint8_t> take(std::size_t n) {
    need(n);
    auto s = bytes_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw std::runtime_error("model serialization: truncated input");
  }
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::size_t payload_size(const CompressedModel& m) {
  std::size_t total = 0;
  for (const auto& t : tensor_views(m)) total += tensor_payload(t, m.kind);
  return total;
}

std::size_t serialized_size(const CompressedModel& m) {
  return kHeaderBytes + kShapeBytes * 2 * m.params.layers.size() + payload_size(m);
}

std::vector<std::uint8_t> serialize(const CompressedModel& m) {
  m.validate();
  const auto views = tensor_views(m);
  ByteWriter out(serialized_size(m));
  for (auto b : kMagic) out.u8(b);
  out.u32(kFormatVersion);
  out.u32(static_cast<std::uint32_t>(m.kind));
  out.u32(static_cast<std::uint32_t>(views.size()));
  for (const auto& t : views) {
    out.u32(static_cast<std::uint32_t>(t.rows));
    out.u32(static_cast<std::uint32_t>(t.cols));
    if (is_sparse(m.kind)) {
      // Bitmap, least significant bit first; biases are always dense.
      for (std::size_t byte = 0; byte < (t.count + 7) / 8; ++byte) {
        std::uint8_t bits = 0;
        for (std::size_t b = 0; b < 8 && byte * 8 + b < t.count; ++b)
          if (!t.keep || (*t.keep)[byte * 8 + b]) bits |= static_cast<std::uint8_t>(1u << b);
        out.u8(bits);
      }
    }
    if (is_quantized(m.kind)) {
      out.f32(t.quant->scale);
      out.u8(t.quant->zero_point);
    }
    for (std::size_t i = 0; i < t.count; ++i) {
      if (t.keep && !(*t.keep)[i]) continue;
      if (is_quantized(m.kind))
        out.u8(t.quant->values[i]);
      else
        out.f32((*t.values)[i]);
    }
  }
  return out.take();
}

CompressedModel deserialize(std::span<const std::uint8_t> bytes) {
  ByteReader in(bytes);
  const auto magic = in.take(4);
  if (!std::equal(magic.begin(), magic.end(), std::begin(kMagic))) throw std::runtime_error("model serialization: bad magic");
  if (const auto version = in.u32(); version != kFormatVersion)
    throw std::runtime_error("model serialization: unsupported version " + std::to_string(version));
  const auto raw_kind = in.u32();
  if (raw_kind > 3) throw std::runtime_error("model serialization: unknown kind " + std::to_string(raw_kind));
  const auto kind = static_cast<Kind>(raw_kind);
  const auto tensor_count = in.u32();
  if (tensor_count % 2 != 0) throw std::runtime_error("model serialization: odd tensor count");

  CompressedModel m;
  m.kind = kind;
  if (is_sparse(kind)) m.mask.emplace();
  if (is_quantized(kind)) m.quantized.emplace();

  for (std::uint32_t t = 0; t < tensor_count; ++t) {
    const bool is_bias = t % 2 == 1;
    const std::size_t rows = in.u32();
    const std::size_t cols = in.u32();
    if (is_bias != (cols == 0)) throw std::runtime_error("model serialization: unexpected tensor shape");
    const std::size_t count = is_bias ? rows : rows * cols;
    if (count > bytes.size() * 8) throw std::runtime_error("model serialization: truncated input");

    std::vector<std::uint8_t> keep(count, 1);
    if (is_sparse(kind)) {
      const auto bitmap = in.take((count + 7) / 8);
      for (std::size_t i = 0; i < count; ++i) keep[i] = (bitmap[i / 8] >> (i % 8)) & 1u;
      if (is_bias && std::count(keep.begin(), keep.end(), 0) != 0)
        throw std::runtime_error("model serialization: bias bitmap must be dense");
    }
    std::vector<double> values(count, 0.0);
    if (is_quantized(kind)) {
      QuantizedTensor q;
      q.rows = rows;
      q.cols = cols;
      q.scale = in.f32();
      q.zero_point = in.u8();
      q.values.assign(count, q.zero_point);
      for (std::size_t i = 0; i < count; ++i)
        if (keep[i]) q.values[i] = in.u8();
      values = dequantize_tensor(q);
      m.quantized->tensors.push_back(std::move(q));
    } else {
      for (std::size_t i = 0; i < count; ++i)
        if (keep[i]) values[i] = in.f32();
    }

    if (is_bias) {
      if (rows != m.params.layers.back().weights.rows) throw std::runtime_error("model serialization: bias length mismatch");
      m.params.layers.back().bias = std::move(values);
    } else {
      if (!m.params.layers.empty() && m.params.layers.back().weights.rows != cols)
        throw std::runtime_error("model serialization: layer widths do not chain");
      nn::Layer layer;
      layer.weights.rows = rows;
      layer.weights.cols = cols;
      layer.weights.data = std::move(values);
      m.params.layers.push_back(std::move(layer));
      if (m.mask) m.mask->layers.push_back(std::move(keep));
    }
  }
  if (!in.done()) throw std::runtime_error("model serialization: trailing bytes");
  return m;
}

void write_checkpoint(const CompressedModel& m, const std::filesystem::path& path) {
  const auto bytes = serialize(m);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open checkpoint for writing: " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("failed writing checkpoint: " + path.string());
}

CompressedModel read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize(bytes);
}

std::size_t nonzero_macs(const nn::ParameterSet& params) { return nn::nonzero_weights(params); }

std::size_t nonzero_macs(const CompressedModel& m) { return nn::nonzero_weights(m.params); }

std::size_t dense_macs(const nn::Architecture& arch) { return arch.weight_count(); }

}  // namespace sparseful::compression
