#include <filesystem>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "sparseful/compression.hpp"
#include "sparseful/harness.hpp"

using namespace sparseful;
using protocol::Arm;

namespace {

constexpr std::size_t kQuadrants = 4;

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

// One fixture run shared by the tests that only read it.
const harness::ExperimentResult& fixture_run() {
  static const auto result = harness::run_experiment(oracle::quadrant_fixture(42), Arm::sparsefuel);
  return result;
}

}  // namespace

TEST(QuadrantFixture, FederationsSettleOnTheQuadrants) {
  const auto& r = fixture_run();
  ASSERT_EQ(r.records.size(), 30u);
  ASSERT_EQ(r.partitions.size(), 30u);
  for (std::size_t t = 0; t < r.partitions.size(); ++t) {
    r.partitions[t].validate(64);
    EXPECT_EQ(r.records[t].round, t + 1);
    EXPECT_EQ(r.records[t].federation_count, r.partitions[t].size());
  }
  for (std::size_t t = 19; t < r.partitions.size(); ++t)
    EXPECT_TRUE(oracle::federations_are_subregions(r.partitions[t], r.subregion_of, kQuadrants)) << "round " << t + 1;
  EXPECT_EQ(r.final_models.size(), kQuadrants);
}

TEST(QuadrantFixture, EveryQuadrantIsLearned) {
  const auto& last = fixture_run().records.back();
  ASSERT_EQ(last.region_accuracy.size(), kQuadrants);
  for (double a : last.region_accuracy) EXPECT_GT(a, 0.8);
  EXPECT_LT(last.objective, fixture_run().records.front().objective);
}

TEST(QuadrantFixture, BytesAccumulate) {
  const auto& rec = fixture_run().records;
  std::size_t total = 0;
  for (const auto& r : rec) {
    total += r.bytes_round;
    EXPECT_EQ(r.bytes_total, total);
    EXPECT_GT(r.bytes_broadcast, 0u);
    EXPECT_LE(r.bytes_broadcast, r.bytes_round);
  }
}

TEST(QuadrantFixture, LongerCalibrationStillSettles) {
  auto cfg = oracle::quadrant_fixture(7);
  cfg.protocol.calibration_rounds = 5;
  cfg.protocol.rounds = 20;
  const auto r = harness::run_experiment(cfg, Arm::sparsefuel);
  for (std::size_t t = 10; t < r.partitions.size(); ++t)
    EXPECT_TRUE(oracle::federations_are_subregions(r.partitions[t], r.subregion_of, kQuadrants)) << "round " << t + 1;
}

TEST(QuadrantFixture, ExplicitTauSkipsCalibration) {
  auto cfg = oracle::quadrant_fixture(42);
  cfg.protocol.rounds = 3;
  cfg.protocol.tau = 0.0;
  const auto r = harness::run_experiment(cfg, Arm::sparsefuel);
  EXPECT_EQ(r.tau, 0.0);
  // No edge survives a zero threshold on real models.
  for (const auto& rec : r.records) EXPECT_EQ(rec.federation_count, 64u);
}

TEST(Arms, SelfFederationBeatsGlobalAveraging) {
  const auto cfg = oracle::quadrant_fixture(42);
  const auto global = harness::run_experiment(cfg, Arm::global_fedavg);
  for (const auto& rec : global.records) EXPECT_EQ(rec.federation_count, 1u);
  EXPECT_LT(fixture_run().records.back().objective, global.records.back().objective);
}

TEST(Arms, IsolatedDevicesStayAlone) {
  auto cfg = oracle::quadrant_fixture(42);
  cfg.protocol.rounds = 4;
  std::size_t calls = 0;
  const auto r = harness::run_experiment(cfg, Arm::isolated, [&](const harness::MetricsRecord&) { ++calls; });
  EXPECT_EQ(calls, 4u);
  for (const auto& rec : r.records) {
    EXPECT_EQ(rec.federation_count, 64u);
    EXPECT_EQ(rec.bytes_total, 0u);
  }
}

TEST(Determinism, RepeatedRunsWriteIdenticalCsv) {
  auto cfg = oracle::quadrant_fixture(3);
  cfg.protocol.rounds = 8;
  const auto dir = std::filesystem::temp_directory_path() / "sparseful_determinism";
  std::filesystem::create_directories(dir);
  const auto a = harness::run_experiment(cfg, Arm::sparsefuel);
  const auto b = harness::run_experiment(cfg, Arm::sparsefuel);
  harness::write_metrics_csv(a.records, kQuadrants, dir / "a.csv");
  harness::write_metrics_csv(b.records, kQuadrants, dir / "b.csv");
  EXPECT_EQ(slurp(dir / "a.csv"), slurp(dir / "b.csv"));
  EXPECT_FALSE(slurp(dir / "a.csv").empty());
  std::filesystem::remove_all(dir);
}

TEST(Determinism, SeedsChangeTheRun) {
  auto cfg = oracle::quadrant_fixture(3);
  cfg.protocol.rounds = 2;
  const auto a = harness::run_experiment(cfg, Arm::sparsefuel);
  const auto b = harness::run_experiment(harness::with_seed(cfg, 4), Arm::sparsefuel);
  EXPECT_NE(harness::format_metrics_csv(a.records, kQuadrants), harness::format_metrics_csv(b.records, kQuadrants));
}

TEST(Checkpoints, OnePerFederationInTheConfiguredFormat) {
  const auto cfg = oracle::quadrant_fixture(42);
  const auto dir = std::filesystem::temp_directory_path() / "sparseful_checkpoints";
  std::filesystem::remove_all(dir);
  const auto paths = harness::write_checkpoints(fixture_run(), cfg, dir);
  ASSERT_EQ(paths.size(), fixture_run().final_models.size());
  for (const auto& p : paths) {
    EXPECT_EQ(p.extension(), ".spfl");
    const auto m = compression::read_checkpoint(p);
    EXPECT_EQ(m.kind, compression::Kind::sparse_quantized);
    const auto dense = compression::dense_macs(m.params.architecture());
    EXPECT_LE(compression::nonzero_macs(m), dense - dense * 3 / 10 + m.params.layers.size());
  }
  std::filesystem::remove_all(dir);
}
