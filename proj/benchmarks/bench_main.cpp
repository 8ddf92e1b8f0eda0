#include <filesystem>

#include <benchmark/benchmark.h>

#include "sparseful/compression.hpp"
#include "sparseful/fields.hpp"
#include "sparseful/harness.hpp"
#include "sparseful/neuralnet.hpp"
#include "sparseful/random.hpp"

using namespace sparseful;

namespace {

nn::LabeledDataset random_dataset(std::size_t n, std::size_t dim, std::size_t classes, std::uint64_t seed) {
  Rng rng(seed);
  nn::LabeledDataset d;
  d.feature_dim = dim;
  std::vector<double> x(dim);
  for (std::size_t i = 0; i < n; ++i) {
    for (auto& v : x) v = rng.uniform();
    d.push_back(x, static_cast<std::uint32_t>(rng.below(classes)));
  }
  return d;
}

void BM_LocalTraining(benchmark::State& state) {
  const auto width = static_cast<std::size_t>(state.range(0));
  const nn::Architecture arch{{16, width, 8}};
  const auto data = random_dataset(240, 16, 8, 1);
  const auto p = nn::init_parameters(arch, 2);
  for (auto _ : state) benchmark::DoNotOptimize(nn::local_training(p, data, {2, 16, 0.1, 3}));
  state.SetItemsProcessed(state.iterations() * 2 * 240);
}
BENCHMARK(BM_LocalTraining)->Arg(16)->Arg(128);

void BM_PruneMagnitude(benchmark::State& state) {
  const auto p = nn::init_parameters(nn::Architecture{{784, 128, 47}}, 4);
  for (auto _ : state) benchmark::DoNotOptimize(compression::prune_magnitude(p, 0.3));
}
BENCHMARK(BM_PruneMagnitude);

void BM_QuantizeAffine(benchmark::State& state) {
  const auto p = nn::init_parameters(nn::Architecture{{784, 128, 47}}, 5);
  for (auto _ : state) benchmark::DoNotOptimize(compression::quantize_affine(p));
}
BENCHMARK(BM_QuantizeAffine);

void BM_SerializeSparseQuantized(benchmark::State& state) {
  const auto p = nn::init_parameters(nn::Architecture{{784, 128, 47}}, 6);
  const auto m = compression::compress(p, {compression::Kind::sparse_quantized, 0.3});
  for (auto _ : state) benchmark::DoNotOptimize(compression::serialize(m));
}
BENCHMARK(BM_SerializeSparseQuantized);

void BM_CoordinationRegions(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Rng rng(7);
  fields::FieldGraph g(n);
  std::vector<std::pair<double, double>> pts(n);
  for (auto& pt : pts) pt = {rng.uniform(), rng.uniform()};
  const double r = 2.0 / std::sqrt(static_cast<double>(n));
  for (fields::Uid a = 0; a < n; ++a)
    for (fields::Uid b = a + 1; b < n; ++b) {
      const double dx = pts[a].first - pts[b].first, dy = pts[a].second - pts[b].second;
      if (dx * dx + dy * dy <= r * r) g.add_edge(a, b);
    }
  for (auto _ : state) benchmark::DoNotOptimize(fields::coordination_regions(g));
}
BENCHMARK(BM_CoordinationRegions)->Arg(64)->Arg(512);

void BM_ProtocolRound(benchmark::State& state) {
  auto cfg = harness::parse_config_file(std::filesystem::path(SPARSEFUL_CONFIG_DIR) / "quadrants.ini");
  cfg.protocol.tau = 5.0;
  const auto experiment = harness::build_experiment(cfg);
  auto pcfg = experiment.protocol;
  pcfg.tau = 5.0;
  for (auto _ : state) {
    auto sim = experiment.state;
    benchmark::DoNotOptimize(protocol::run_round(sim, pcfg, 1));
  }
}
BENCHMARK(BM_ProtocolRound)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
