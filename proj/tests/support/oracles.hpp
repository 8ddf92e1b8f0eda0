#pragma once

// Reference computations written independently of the library so tests can
// compare against them.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <vector>

#include "sparseful/harness.hpp"
#include "sparseful/neuralnet.hpp"
#include "sparseful/random.hpp"

namespace sparseful::oracle {

/// Pre-activations of every layer for one sample, straight from the
/// definition z = W a + b, a = relu(z) for hidden layers.
inline std::vector<std::vector<double>> pre_activations(const nn::ParameterSet& p, std::span<const double> x) {
  std::vector<std::vector<double>> zs;
  std::vector<double> a(x.begin(), x.end());
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    const auto& L = p.layers[l];
    std::vector<double> z(L.weights.rows);
    for (std::size_t r = 0; r < L.weights.rows; ++r) {
      double s = L.bias[r];
      for (std::size_t c = 0; c < L.weights.cols; ++c) s += L.weights(r, c) * a[c];
      z[r] = s;
    }
    zs.push_back(z);
    a = z;
    if (l + 1 < p.layers.size())
      for (auto& v : a) v = std::max(v, 0.0);
  }
  return zs;
}

/// Mean softmax cross-entropy.
inline double loss(const nn::ParameterSet& p, const nn::LabeledDataset& data) {
  double total = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto z = pre_activations(p, data.sample(i)).back();
    const double m = *std::max_element(z.begin(), z.end());
    double sum = 0.0;
    for (double v : z) sum += std::exp(v - m);
    total += m + std::log(sum) - z[data.labels[i]];
  }
  return total / static_cast<double>(data.size());
}

/// Smallest |z| over all hidden units and samples. Central differences are
/// only meaningful when no perturbation moves a hidden unit across zero.
inline double hidden_margin(const nn::ParameterSet& p, const nn::LabeledDataset& data) {
  double m = INFINITY;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto zs = pre_activations(p, data.sample(i));
    for (std::size_t l = 0; l + 1 < zs.size(); ++l)
      for (double z : zs[l]) m = std::min(m, std::abs(z));
  }
  return m;
}

/// Visits every parameter as a mutable reference, weights before bias per layer.
template <typename F>
void for_each_parameter(nn::ParameterSet& p, F f) {
  for (auto& L : p.layers) {
    for (auto& w : L.weights.data) f(w);
    for (auto& b : L.bias) f(b);
  }
}

inline std::vector<double> flatten(nn::ParameterSet p) {
  std::vector<double> out;
  for_each_parameter(p, [&](double& v) { out.push_back(v); });
  return out;
}

inline std::vector<double> central_differences(nn::ParameterSet p, const nn::LabeledDataset& data, double h) {
  std::vector<double> g;
  for_each_parameter(p, [&](double& v) {
    const double keep = v;
    v = keep + h;
    const double up = loss(p, data);
    v = keep - h;
    const double down = loss(p, data);
    v = keep;
    g.push_back((up - down) / (2.0 * h));
  });
  return g;
}

/// |a - b| / max(|a|, |b|, floor).
inline double relative_error(double a, double b, double floor) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

struct GradientCase {
  nn::ParameterSet params;
  nn::LabeledDataset batch;
};

/// Random MLP with at most `max_params` parameters and nonzero biases, plus a
/// small batch with inputs in [0, 1]. Redraws the batch until every hidden
/// pre-activation is at least `margin` away from the ReLU kink.
inline GradientCase random_gradient_case(std::uint64_t seed, std::size_t max_params, double margin) {
  Rng rng(seed);
  for (;;) {
    nn::Architecture arch;
    const std::size_t depth = 1 + rng.below(3);
    arch.layer_sizes.push_back(1 + rng.below(10));
    for (std::size_t l = 1; l < depth; ++l) arch.layer_sizes.push_back(1 + rng.below(16));
    arch.layer_sizes.push_back(2 + rng.below(5));
    if (arch.parameter_count() > max_params) continue;

    GradientCase c;
    c.params = nn::init_parameters(arch, rng.next_u64());
    for (auto& L : c.params.layers)
      for (auto& b : L.bias) b = rng.uniform(-0.5, 0.5);
    for (int attempt = 0; attempt < 50; ++attempt) {
      nn::LabeledDataset batch;
      batch.feature_dim = arch.input_dim();
      const std::size_t m = 1 + rng.below(8);
      std::vector<double> x(arch.input_dim());
      for (std::size_t i = 0; i < m; ++i) {
        for (auto& v : x) v = rng.uniform();
        batch.push_back(x, static_cast<std::uint32_t>(rng.below(arch.class_count())));
      }
      if (hidden_margin(c.params, batch) >= margin) {
        c.batch = std::move(batch);
        return c;
      }
    }
  }
}

/// True when every federation is exactly the device set of one subregion
/// and every subregion is covered by one federation.
inline bool federations_are_subregions(const protocol::FederationPartition& p,
                                       const std::vector<std::size_t>& subregion_of, std::size_t subregions) {
  if (p.size() != subregions) return false;
  std::vector<bool> seen(subregions, false);
  for (const auto& f : p.federations) {
    const std::size_t r = subregion_of[f.members.front()];
    if (seen[r]) return false;
    seen[r] = true;
    const auto expected = static_cast<std::size_t>(std::count(subregion_of.begin(), subregion_of.end(), r));
    if (f.members.size() != expected) return false;
    for (auto m : f.members)
      if (subregion_of[m] != r) return false;
  }
  return true;
}

#ifdef SPARSEFUL_CONFIG_DIR
/// The four-quadrant fixture shipped in configs/, with its seed replaced.
inline harness::ExperimentConfig quadrant_fixture(std::uint64_t seed) {
  auto cfg = harness::parse_config_file(std::filesystem::path(SPARSEFUL_CONFIG_DIR) / "quadrants.ini");
  return harness::with_seed(std::move(cfg), seed);
}
#endif

}  // namespace sparseful::oracle
