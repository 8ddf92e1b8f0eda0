#include <algorithm>
#include <cmath>
#include <filesystem>
#include <vector>

#include <gtest/gtest.h>

#include "sparseful/compression.hpp"
#include "sparseful/random.hpp"

using namespace sparseful;
using compression::Kind;

namespace {

nn::ParameterSet single_layer(std::vector<double> weights) {
  nn::ParameterSet p;
  nn::Layer L;
  L.weights = nn::Matrix(1, weights.size());
  L.weights.data = std::move(weights);
  L.bias = {0.0};
  p.layers.push_back(std::move(L));
  return p;
}

nn::ParameterSet random_model(const nn::Architecture& arch, std::uint64_t seed) {
  auto p = nn::init_parameters(arch, seed);
  Rng rng(seed ^ 0xb1a5);
  for (auto& L : p.layers)
    for (auto& b : L.bias) b = rng.uniform(-0.1, 0.1);
  return p;
}

// Canonical size from the format definition, independent of the encoder.
std::size_t expected_size(const nn::ParameterSet& p, Kind kind, const nn::SparseMask* mask) {
  std::size_t bytes = 16;
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    const std::size_t nw = p.layers[l].weights.data.size(), nb = p.layers[l].bias.size();
    const std::size_t kept_w = mask ? static_cast<std::size_t>(std::count(mask->layers[l].begin(), mask->layers[l].end(), 1)) : nw;
    bytes += 2 * 8;
    if (compression::is_sparse(kind)) bytes += (nw + 7) / 8 + (nb + 7) / 8;
    const std::size_t value_bytes = compression::is_quantized(kind) ? 1 : 4;
    if (compression::is_quantized(kind)) bytes += 2 * 5;
    bytes += value_bytes * ((compression::is_sparse(kind) ? kept_w : nw) + nb);
  }
  return bytes;
}

}  // namespace

TEST(PrunedCount, FloorOfPsiN) {
  EXPECT_EQ(compression::pruned_count(0.3, 1000), 300u);
  EXPECT_EQ(compression::pruned_count(0.7, 10), 7u);  // 0.7 * 10 is 6.999... in binary
  EXPECT_EQ(compression::pruned_count(0.3, 7), 2u);
  EXPECT_EQ(compression::pruned_count(1.0, 5), 5u);
  EXPECT_EQ(compression::pruned_count(0.0, 5), 0u);
}

TEST(PruneMagnitude, PsiZeroKeepsEverything) {
  const auto p = random_model(nn::Architecture{{5, 4, 3}}, 1);
  const auto r = compression::prune_magnitude(p, 0.0);
  EXPECT_EQ(r.params, p);
  for (const auto& m : r.mask.layers) EXPECT_TRUE(std::all_of(m.begin(), m.end(), [](auto b) { return b == 1; }));
}

TEST(PruneMagnitude, SmallestMagnitudesGo) {
  const auto r = compression::prune_magnitude(single_layer({0.1, -0.4, 0.3, -0.2}), 0.5);
  EXPECT_EQ(r.params.layers[0].weights.data, (std::vector<double>{0.0, -0.4, 0.3, 0.0}));
  EXPECT_EQ(r.mask.layers[0], (std::vector<std::uint8_t>{0, 1, 1, 0}));
}

TEST(PruneMagnitude, TiesPruneLowerIndexFirst) {
  const auto r = compression::prune_magnitude(single_layer({0.5, -0.5, 0.5, 0.9}), 0.5);
  EXPECT_EQ(r.mask.layers[0], (std::vector<std::uint8_t>{0, 0, 1, 1}));
}

TEST(PruneMagnitude, ExactCountsOnThousandWeightLayer) {
  Rng rng(5);
  std::vector<double> w(1000);
  for (auto& v : w) v = rng.normal(0.0, 1.0);
  const auto p = single_layer(w);
  const std::pair<double, std::size_t> cases[] = {{0.3, 700}, {0.5, 500}, {0.7, 300}, {0.9, 100}};
  for (auto [psi, kept] : cases) {
    const auto r = compression::prune_magnitude(p, psi);
    EXPECT_EQ(nn::nonzero_weights(r.params), kept) << psi;
    EXPECT_EQ(r.mask.kept_count(), kept) << psi;
  }
}

TEST(PruneMagnitude, KeptDominatePrunedAndBiasesUntouched) {
  const auto p = random_model(nn::Architecture{{12, 9, 4}}, 3);
  const auto r = compression::prune_magnitude(p, 0.6);
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    double max_pruned = 0.0, min_kept = INFINITY;
    for (std::size_t i = 0; i < r.mask.layers[l].size(); ++i) {
      const double m = std::abs(p.layers[l].weights.data[i]);
      if (r.mask.layers[l][i])
        min_kept = std::min(min_kept, m);
      else
        max_pruned = std::max(max_pruned, m);
    }
    EXPECT_GE(min_kept, max_pruned);
    EXPECT_EQ(r.params.layers[l].bias, p.layers[l].bias);
  }
}

TEST(PruneMagnitude, RejectsPsiOutsideUnitInterval) {
  const auto p = random_model(nn::Architecture{{2, 2}}, 1);
  EXPECT_THROW(compression::prune_magnitude(p, -0.1), std::invalid_argument);
  EXPECT_THROW(compression::prune_magnitude(p, 1.5), std::invalid_argument);
  EXPECT_THROW(compression::prune_magnitude(p, NAN), std::invalid_argument);
}

TEST(Quantize, ConstantTensorSharesOneValue) {
  const std::vector<double> v(6, 0.5);
  const auto q = compression::quantize_tensor(v, 6, 0);
  EXPECT_TRUE(std::all_of(q.values.begin(), q.values.end(), [&](auto x) { return x == q.values[0]; }));
  for (double d : compression::dequantize_tensor(q)) EXPECT_LE(std::abs(d - 0.5), q.scale / 2 + 1e-9);
}

TEST(Quantize, AllZeroTensorUsesUnitScale) {
  const std::vector<double> v(5, 0.0);
  const auto q = compression::quantize_tensor(v, 5, 0);
  EXPECT_EQ(q.scale, 1.0);
  for (auto x : q.values) EXPECT_EQ(x, q.zero_point);
  for (double d : compression::dequantize_tensor(q)) EXPECT_EQ(d, 0.0);
}

TEST(Quantize, NearConstantTensorIsAFixpoint) {
  // Collapses to one code, so the dequantized tensor is exactly constant.
  const std::vector<double> v{0.29999, 0.3, 0.30001};
  const auto q = compression::quantize_tensor(v, 3, 0);
  const auto d = compression::dequantize_tensor(q);
  EXPECT_EQ(d[0], d[2]);
  EXPECT_EQ(compression::quantize_tensor(d, 3, 0).values, q.values);
}

TEST(Quantize, SymmetricRangeMidpoint) {
  const std::vector<double> v{-1.0, 0.0, 1.0};
  const auto q = compression::quantize_tensor(v, 3, 0);
  EXPECT_DOUBLE_EQ(q.scale, 2.0 / 255.0);
  EXPECT_EQ(q.zero_point, 128);
  EXPECT_EQ(q.values[1], 128);
  EXPECT_EQ(compression::dequantize_tensor(q)[1], 0.0);
  EXPECT_EQ(q.values[0], 0);
  EXPECT_EQ(q.values[2], 255);
}

TEST(Quantize, ErrorBoundOnRandomValues) {
  Rng rng(17);
  std::vector<double> v(10000);
  for (auto& x : v) x = rng.uniform(-2.0, 2.0);
  const auto q = compression::quantize_tensor(v, 100, 100);
  const auto d = compression::dequantize_tensor(q);
  for (std::size_t i = 0; i < v.size(); ++i) ASSERT_LE(std::abs(v[i] - d[i]), q.scale / 2 + 1e-9) << i;
}

TEST(Quantize, OneSignedTensorStaysWithinBound) {
  // All values positive: the grid still spans zero, so nothing clips.
  const std::vector<double> v{0.7, 0.8, 0.9, 1.0};
  const auto q = compression::quantize_tensor(v, 4, 0);
  EXPECT_EQ(q.zero_point, 0);
  const auto d = compression::dequantize_tensor(q);
  for (std::size_t i = 0; i < v.size(); ++i) EXPECT_LE(std::abs(v[i] - d[i]), q.scale / 2 + 1e-9);

  const std::vector<double> neg{-3.0, -2.5, -1.0};
  const auto qn = compression::quantize_tensor(neg, 3, 0);
  EXPECT_EQ(qn.zero_point, 255);
  const auto dn = compression::dequantize_tensor(qn);
  for (std::size_t i = 0; i < neg.size(); ++i) EXPECT_LE(std::abs(neg[i] - dn[i]), qn.scale / 2 + 1e-9);
}

TEST(Quantize, RequantizingIsAFixpoint) {
  const auto p = random_model(nn::Architecture{{20, 10, 5}}, 8);
  const auto q = compression::quantize_affine(p);
  const auto again = compression::quantize_affine(compression::dequantize(q));
  ASSERT_EQ(q.tensors.size(), again.tensors.size());
  for (std::size_t t = 0; t < q.tensors.size(); ++t) EXPECT_EQ(q.tensors[t].values, again.tensors[t].values) << t;
}

TEST(Quantize, AllZeroPointDequantizesToZero) {
  compression::QuantizedTensor q;
  q.rows = 4;
  q.scale = 0.37;
  q.zero_point = 91;
  q.values.assign(4, 91);
  for (double d : compression::dequantize_tensor(q)) EXPECT_EQ(d, 0.0);
}

TEST(Quantize, RejectsNonFinite) {
  const std::vector<double> v{0.0, INFINITY};
  EXPECT_THROW(compression::quantize_tensor(v, 2, 0), std::invalid_argument);
}

TEST(Compress, DenseIsUnchanged) {
  const auto p = random_model(nn::Architecture{{6, 4, 2}}, 2);
  const auto m = compression::compress(p, {Kind::dense, 0.7});
  EXPECT_EQ(m.params, p);
  EXPECT_FALSE(m.mask);
  EXPECT_FALSE(m.quantized);
}

TEST(Compress, SparseAddsExactZeroCount) {
  const auto p = random_model(nn::Architecture{{10, 7, 3}}, 4);
  const auto m = compression::compress(p, {Kind::sparse, 0.3});
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    const auto& w = m.params.layers[l].weights.data;
    const auto zeros = static_cast<std::size_t>(std::count(w.begin(), w.end(), 0.0));
    EXPECT_EQ(zeros, compression::pruned_count(0.3, w.size()));
  }
}

TEST(Compress, SparseQuantizedKeepsPrunedZeros) {
  const auto p = random_model(nn::Architecture{{10, 7, 3}}, 4);
  const auto m = compression::compress(p, {Kind::sparse_quantized, 0.5});
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    const auto& w = m.params.layers[l].weights.data;
    EXPECT_GE(static_cast<std::size_t>(std::count(w.begin(), w.end(), 0.0)), compression::pruned_count(0.5, w.size()));
    for (std::size_t i = 0; i < w.size(); ++i)
      if (!m.mask->layers[l][i]) {
        EXPECT_EQ(w[i], 0.0);
      }
  }
}

TEST(Compress, Deterministic) {
  const auto p = random_model(nn::Architecture{{8, 8, 2}}, 6);
  const compression::Strategy s{Kind::sparse_quantized, 0.3};
  EXPECT_EQ(compression::serialize(compression::compress(p, s)), compression::serialize(compression::compress(p, s)));
}

TEST(Compress, EncodeSparseWithoutMaskThrows) {
  const auto p = random_model(nn::Architecture{{2, 2}}, 1);
  EXPECT_THROW(compression::encode(p, Kind::sparse, nullptr), std::invalid_argument);
}

TEST(SerializedSize, MatchesFormatForEveryKind) {
  const auto p = random_model(nn::Architecture{{13, 11, 5}}, 9);
  const auto pruned = compression::prune_magnitude(p, 0.45);
  for (Kind kind : {Kind::dense, Kind::sparse, Kind::quantized, Kind::sparse_quantized}) {
    const nn::SparseMask* mask = compression::is_sparse(kind) ? &pruned.mask : nullptr;
    const auto m = compression::encode(p, kind, mask);
    EXPECT_EQ(compression::serialized_size(m), expected_size(p, kind, mask)) << compression::to_string(kind);
    EXPECT_EQ(compression::serialize(m).size(), compression::serialized_size(m)) << compression::to_string(kind);
  }
}

TEST(SerializedSize, LargeDenseModelAndQuantizedRatio) {
  // 999 inputs x 471 outputs + 471 biases = 471,000 parameters.
  const auto p = nn::init_parameters(nn::Architecture{{999, 471}}, 1);
  ASSERT_EQ(p.parameter_count(), 471000u);
  const auto dense = compression::encode(p, Kind::dense, nullptr);
  EXPECT_EQ(compression::serialized_size(dense), 1884000u + 16 + 2 * 8);
  const auto quant = compression::encode(p, Kind::quantized, nullptr);
  const double ratio =
      static_cast<double>(compression::serialized_size(quant)) / static_cast<double>(compression::serialized_size(dense));
  EXPECT_LE(ratio, 0.27);
  EXPECT_GT(ratio, 0.24);
}

TEST(SerializedSize, EmptyModelIsHeaderOnly) {
  EXPECT_EQ(compression::serialized_size(compression::CompressedModel{}), 16u);
  EXPECT_EQ(compression::serialize(compression::CompressedModel{}).size(), 16u);
}

TEST(SerializedSize, QuantizedSmallerAndSparseShrinksWithPsi) {
  const auto p = random_model(nn::Architecture{{8, 4}}, 2);  // 36 parameters
  EXPECT_LT(compression::serialized_size(compression::encode(p, Kind::quantized, nullptr)),
            compression::serialized_size(compression::encode(p, Kind::dense, nullptr)));
  std::size_t previous = SIZE_MAX;
  for (double psi : {0.0, 0.3, 0.5, 0.7, 0.9}) {
    const auto size = compression::serialized_size(compression::compress(p, {Kind::sparse, psi}));
    EXPECT_LT(size, previous) << psi;
    previous = size;
  }
}

TEST(Serialization, RoundTripIsStable) {
  const auto p = random_model(nn::Architecture{{9, 6, 3}}, 12);
  for (Kind kind : {Kind::dense, Kind::sparse, Kind::quantized, Kind::sparse_quantized}) {
    const auto m = compression::compress(p, {kind, 0.3});
    const auto bytes = compression::serialize(m);
    const auto back = compression::deserialize(bytes);
    EXPECT_EQ(back.kind, kind);
    EXPECT_EQ(back.mask, m.mask);
    EXPECT_EQ(compression::serialize(back), bytes) << compression::to_string(kind);
    for (std::size_t l = 0; l < p.layers.size(); ++l)
      for (std::size_t i = 0; i < p.layers[l].weights.data.size(); ++i)
        EXPECT_NEAR(back.params.layers[l].weights.data[i], m.params.layers[l].weights.data[i], 1e-6);
  }
}

TEST(Serialization, HeaderLayout) {
  const auto m = compression::compress(random_model(nn::Architecture{{3, 2}}, 1), {Kind::sparse_quantized, 0.5});
  const auto b = compression::serialize(m);
  EXPECT_EQ(std::string(b.begin(), b.begin() + 4), "SPFL");
  EXPECT_EQ(b[4], 1);  // version, little-endian
  EXPECT_EQ(b[8], 3);  // kind
  EXPECT_EQ(b[12], 2);  // tensor count
}

TEST(Serialization, RejectsCorruptInput) {
  const auto m = compression::compress(random_model(nn::Architecture{{3, 2}}, 1), {Kind::dense, 0.0});
  auto b = compression::serialize(m);
  auto bad_magic = b;
  bad_magic[0] = 'X';
  EXPECT_THROW(
      {
        try {
          compression::deserialize(bad_magic);
        } catch (const std::runtime_error& e) {
          EXPECT_NE(std::string(e.what()).find("bad magic"), std::string::npos);
          throw;
        }
      },
      std::runtime_error);
  auto bad_version = b;
  bad_version[4] = 9;
  EXPECT_THROW(compression::deserialize(bad_version), std::runtime_error);
  auto truncated = b;
  truncated.pop_back();
  EXPECT_THROW(compression::deserialize(truncated), std::runtime_error);
  auto trailing = b;
  trailing.push_back(0);
  EXPECT_THROW(compression::deserialize(trailing), std::runtime_error);
}

TEST(Checkpoint, WriteAndRead) {
  const auto path = std::filesystem::temp_directory_path() / "sparseful_checkpoint_test.spfl";
  const auto m = compression::compress(random_model(nn::Architecture{{4, 3, 2}}, 5), {Kind::sparse_quantized, 0.3});
  compression::write_checkpoint(m, path);
  EXPECT_EQ(compression::serialize(compression::read_checkpoint(path)), compression::serialize(m));
  std::filesystem::remove(path);
  EXPECT_THROW(compression::read_checkpoint(path), std::runtime_error);
}

TEST(NonzeroMacs, DenseAndPruned) {
  const nn::Architecture arch{{784, 128, 47}};
  EXPECT_EQ(compression::dense_macs(arch), 106368u);
  const auto p = nn::init_parameters(arch, 3);
  EXPECT_EQ(compression::nonzero_macs(p), 106368u);
  const auto pruned = compression::prune_magnitude(p, 0.3);
  EXPECT_EQ(compression::nonzero_macs(pruned.params), 106368u - (30105u + 1804u));
  const auto heavy = compression::prune_magnitude(p, 0.9);
  EXPECT_NEAR(static_cast<double>(compression::nonzero_macs(heavy.params)) / 106368.0, 0.1, 0.001);
}

TEST(KindNames, ParseAndPrint) {
  for (Kind kind : {Kind::dense, Kind::sparse, Kind::quantized, Kind::sparse_quantized})
    EXPECT_EQ(compression::parse_kind(compression::to_string(kind)), kind);
  EXPECT_EQ(compression::parse_kind("sparse+quantized"), Kind::sparse_quantized);
  EXPECT_FALSE(compression::parse_kind("zip"));
}
