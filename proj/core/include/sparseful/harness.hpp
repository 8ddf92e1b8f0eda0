#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "sparseful/compression.hpp"
#include "sparseful/environment.hpp"
#include "sparseful/neuralnet.hpp"
#include "sparseful/protocol.hpp"

namespace sparseful::harness {

/// Config problem, tagged with the 1-based line it was found on (0 when the
/// problem is not tied to a line, e.g. an unreadable file).
class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::size_t line, const std::string& message);
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

struct EnvironmentSection {
  double width = 1.0;
  double height = 1.0;
  std::size_t rows = 2;
  std::size_t cols = 2;
  std::size_t devices = 64;
  /// Defaults to 1.5 lattice pitches, resolved at parse time.
  double radius = 0.0;
  env::Placement placement = env::Placement::jittered_grid;
  std::uint64_t seed = 42;

  bool operator==(const EnvironmentSection&) const = default;
};

struct DataSection {
  env::DistributionKind kind = env::DistributionKind::synthetic_blobs;
  std::size_t samples = 300;
  double validation_fraction = 0.2;
  std::size_t test_samples = 200;
  double mixing = 0.0;
  std::size_t feature_dim = 16;
  std::size_t classes_per_region = 2;
  double blob_std = 0.1;
  std::filesystem::path idx_images;
  std::filesystem::path idx_labels;
  std::filesystem::path idx_test_images;
  std::filesystem::path idx_test_labels;

  bool operator==(const DataSection&) const = default;
};

struct ModelSection {
  std::vector<std::size_t> hidden{32};

  bool operator==(const ModelSection&) const = default;
};

struct ProtocolSection {
  /// nullopt means "calibrate before running".
  std::optional<double> tau;
  compression::Kind compression = compression::Kind::sparse_quantized;
  double psi = 0.3;
  bool similarity_uses_compressed = true;
  std::size_t rounds = 50;
  std::size_t local_epochs = 2;
  std::size_t batch_size = 16;
  double learning_rate = 0.1;
  std::size_t calibration_rounds = 1;

  bool operator==(const ProtocolSection&) const = default;
};

struct OutputSection {
  std::filesystem::path csv = "metrics.csv";
  std::filesystem::path checkpoint_dir;
  /// Off by default so repeated runs produce byte-identical CSVs.
  bool wall_time = false;

  bool operator==(const OutputSection&) const = default;
};

struct ExperimentConfig {
  EnvironmentSection environment;
  DataSection data;
  ModelSection model;
  ProtocolSection protocol;
  OutputSection output;

  bool operator==(const ExperimentConfig&) const = default;
};

/// Sectioned key = value text; `#` starts a comment. Throws ConfigError.
ExperimentConfig parse_config(std::string_view text);
ExperimentConfig parse_config_file(const std::filesystem::path& path);
/// Canonical text form; parse_config(serialize_config(c)) == c.
std::string serialize_config(const ExperimentConfig& cfg);

/// Replace the seed everywhere it matters.
ExperimentConfig with_seed(ExperimentConfig cfg, std::uint64_t seed);

/// Everything all arms share for one seed: placements, data, initial models.
struct Experiment {
  ExperimentConfig config;
  env::Area area;
  env::DistributionSpec distribution;
  nn::Architecture architecture;
  protocol::SimulationState state;
  std::vector<nn::LabeledDataset> test_sets;  // one per subregion
  protocol::ProtocolConfig protocol;           // tau is a placeholder until calibrated
};

/// Throws ConfigError for data problems detectable only while loading, and
/// std::runtime_error otherwise.
Experiment build_experiment(const ExperimentConfig& cfg);

struct Calibration {
  double tau = 0.0;
  double median_intra = 0.0;
  double median_inter = 0.0;
  std::size_t intra_edges = 0;
  std::size_t inter_edges = 0;
};

/// Runs `calibration_rounds - 1` isolated rounds, then measures ds on every
/// edge and returns the midpoint between the median ds of edges inside one
/// subregion and edges across subregions. Subregion ids are ground truth used
/// only here, never by the protocol. Throws std::runtime_error when either
/// edge class is empty.
Calibration calibrate_tau(const Experiment& experiment);

struct MetricsRecord {
  std::size_t round = 0;
  std::size_t federation_count = 0;
  double objective = 0.0;
  std::vector<double> region_accuracy;
  std::vector<double> region_loss;
  std::size_t bytes_round = 0;
  std::size_t bytes_total = 0;
  /// Neighbor-broadcast share of bytes_round.
  std::size_t bytes_broadcast = 0;
  std::size_t macs = 0;
  double wall_ms = 0.0;
};

struct ExperimentResult {
  std::vector<MetricsRecord> records;
  std::vector<protocol::FederationPartition> partitions;
  double tau = 0.0;
  /// Final federation models keyed by leader uid.
  std::map<env::Uid, nn::ParameterSet> final_models;
  /// Ground-truth subregion of every device, for reporting.
  std::vector<std::size_t> subregion_of;
};

using RoundObserver = std::function<void(const MetricsRecord&)>;

ExperimentResult run_experiment(const ExperimentConfig& cfg, protocol::Arm arm, const RoundObserver& observer = {});
/// Reuses an already built experiment (the state is copied).
ExperimentResult run_experiment(const Experiment& experiment, protocol::Arm arm, const RoundObserver& observer = {});

/// Column names for k subregions.
std::vector<std::string> csv_header(std::size_t subregions);
std::string format_metrics_csv(const std::vector<MetricsRecord>& records, std::size_t subregions);
/// Throws std::runtime_error on I/O failure.
void write_metrics_csv(const std::vector<MetricsRecord>& records, std::size_t subregions,
                       const std::filesystem::path& path);

/// Writes federation_<leader>.spfl per final federation model, compressed
/// with the configured strategy. Returns the written paths.
std::vector<std::filesystem::path> write_checkpoints(const ExperimentResult& result, const ExperimentConfig& cfg,
                                                     const std::filesystem::path& dir);

/// `metrics.csv` + 0.3 -> `metrics_psi0.3.csv`.
std::filesystem::path with_psi_suffix(const std::filesystem::path& path, double psi);

}  // namespace sparseful::harness
