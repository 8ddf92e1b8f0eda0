#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string_view>
#include <utility>
#include <vector>

#include "sparseful/compression.hpp"
#include "sparseful/environment.hpp"
#include "sparseful/fields.hpp"
#include "sparseful/neuralnet.hpp"

namespace sparseful::protocol {

using env::Uid;

struct ProtocolConfig {
  /// Similarity threshold: an edge joins two devices when ds <= tau.
  double tau = 1.0;
  compression::Strategy strategy;
  /// Compare the compressed models devices actually exchange; when false the
  /// exchange skips quantization and similarity sees full-precision weights.
  bool similarity_uses_compressed = true;
  /// `rng_seed` is the base seed; each device and round derives its own.
  nn::TrainingConfig training;
  std::size_t rounds = 50;
  double validation_fraction = 0.2;

  /// Throws std::invalid_argument on out-of-range fields.
  void validate() const;
};

/// sparsefuel: similarity-driven federations. global_fedavg: one federation
/// of every device around a central aggregator. isolated: no communication.
enum class Arm { sparsefuel, global_fedavg, isolated };

std::string_view to_string(Arm arm);
std::optional<Arm> parse_arm(std::string_view text);

struct Device {
  Uid uid = 0;
  nn::ParameterSet model;
  nn::LabeledDataset train;
  nn::LabeledDataset validation;
};

/// Splits D_i into a training part and a trailing validation part of
/// ceil(fraction * |D_i|) rows (at least one row each when |D_i| >= 2).
std::pair<nn::LabeledDataset, nn::LabeledDataset> split_validation(const nn::LabeledDataset& data, double fraction);

struct SimulationState {
  env::Topology topology;
  std::vector<Device> devices;
};

/// ds over topology edges only, stored once per unordered pair.
class DissimilarityMatrix {
 public:
  void set(Uid a, Uid b, double ds);
  std::optional<double> get(Uid a, Uid b) const;
  std::size_t size() const { return values_.size(); }
  const std::map<std::pair<Uid, Uid>, double>& entries() const { return values_; }

 private:
  std::map<std::pair<Uid, Uid>, double> values_;
};

struct Federation {
  Uid leader = 0;
  std::vector<Uid> members;  // ascending, includes the leader
  std::size_t round = 0;
};

struct FederationPartition {
  std::vector<Federation> federations;  // ordered by leader uid
  std::size_t round = 0;

  std::size_t size() const { return federations.size(); }
  /// Index into `federations` for every device.
  std::vector<std::size_t> federation_of(std::size_t device_count) const;
  /// Throws std::logic_error unless federations are disjoint, cover all
  /// devices and contain their leaders.
  void validate(std::size_t device_count) const;
};

/// ds = L(model_j on val_i) + L(model_i on val_j).
double cross_similarity(const nn::ParameterSet& model_i, const nn::ParameterSet& model_j,
                        const nn::LabeledDataset& val_i, const nn::LabeledDataset& val_j);

/// Keeps topology edges with ds <= tau, then elects one leader per connected
/// component with the S-block and roots a G-block gradient at the leaders.
/// Throws std::invalid_argument if an edge has no ds.
fields::CoordinationRegions federation_regions(const env::Topology& topology, const DissimilarityMatrix& ds,
                                               double tau);
FederationPartition partition_from(const fields::CoordinationRegions& regions, std::size_t round);
FederationPartition form_federations(const env::Topology& topology, const DissimilarityMatrix& ds, double tau,
                                     std::size_t round = 0);

/// Weighted elementwise mean, accumulated in list order. Weights default to
/// uniform. Throws std::invalid_argument on an empty list, a shape mismatch
/// or a weight count mismatch.
nn::ParameterSet fed_avg(std::span<const nn::ParameterSet> models, std::span<const double> weights = {});

/// Bytes moved during one round, split by phase.
struct ByteCounts {
  std::size_t neighbor_broadcast = 0;
  std::size_t collection = 0;
  std::size_t dissemination = 0;

  std::size_t total() const { return neighbor_broadcast + collection + dissemination; }
};

struct RoundReport {
  std::size_t round = 0;
  FederationPartition partition;
  DissimilarityMatrix dissimilarity;
  ByteCounts bytes;
  /// Nonzero MACs of device 0's trained compressed model.
  std::size_t representative_macs = 0;
};

/// Steps (1)-(4) for every device: compress, masked local training, encode
/// for exchange. Returns the exchanged artifact of each device in uid order.
std::vector<compression::CompressedModel> train_and_encode(const SimulationState& state, const ProtocolConfig& cfg,
                                                           std::size_t round);

/// ds on every topology edge from the exchanged models.
DissimilarityMatrix measure_dissimilarity(const SimulationState& state,
                                          std::span<const compression::CompressedModel> exchanged);

/// One global round of the chosen arm. Devices end the round holding their
/// federation's model.
RoundReport run_round(SimulationState& state, const ProtocolConfig& cfg, std::size_t round,
                      Arm arm = Arm::sparsefuel);

struct ObjectiveReport {
  /// Sum of per-subregion mean losses.
  double objective = 0.0;
  std::vector<double> region_loss;
  std::vector<double> region_accuracy;
};

/// Each subregion's loss is the mean, over the devices located there, of
/// the loss their federation's model scores on that subregion's test set.
/// With a correct partition this is one model per subregion. A subregion
/// without devices reports NaN and is left out of the sum.
ObjectiveReport evaluate_objective(const FederationPartition& partition,
                                   const std::map<Uid, nn::ParameterSet>& federation_models,
                                   std::span<const env::DeviceSite> sites,
                                   std::span<const nn::LabeledDataset> region_test_sets);

}  // namespace sparseful::protocol
