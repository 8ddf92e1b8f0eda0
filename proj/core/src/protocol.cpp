#include "sparseful/protocol.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include "sparseful/random.hpp"

namespace sparseful::protocol {

void ProtocolConfig::validate() const {
  if (!std::isfinite(tau) || tau < 0.0) throw std::invalid_argument("tau must be finite and non-negative");
  strategy.validate();
  if (rounds == 0) throw std::invalid_argument("rounds must be at least 1");
  if (!(validation_fraction > 0.0 && validation_fraction < 1.0))
    throw std::invalid_argument("validation_fraction must lie in (0, 1)");
  if (training.local_epochs == 0) throw std::invalid_argument("local_epochs must be positive");
  if (training.batch_size == 0) throw std::invalid_argument("batch_size must be positive");
  if (!(training.learning_rate > 0.0)) throw std::invalid_argument("learning_rate must be positive");
}

std::string_view to_string(Arm arm) {
  switch (arm) {
    case Arm::sparsefuel: return "sparsefuel";
    case Arm::global_fedavg: return "global-fedavg";
    case Arm::isolated: return "isolated";
  }
  return "unknown";
}

std::optional<Arm> parse_arm(std::string_view text) {
  for (auto a : {Arm::sparsefuel, Arm::global_fedavg, Arm::isolated})
    if (text == to_string(a)) return a;
  return std::nullopt;
}

std::pair<nn::LabeledDataset, nn::LabeledDataset> split_validation(const nn::LabeledDataset& data, double fraction) {
  if (data.size() < 2) throw std::invalid_argument("split_validation: need at least two samples");
  auto held_out = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(data.size())));
  held_out = std::clamp<std::size_t>(held_out, 1, data.size() - 1);
  const std::size_t kept = data.size() - held_out;
  return {data.slice(0, kept), data.slice(kept, held_out)};
}

void DissimilarityMatrix::set(Uid a, Uid b, double ds) {
  if (a == b) throw std::invalid_argument("dissimilarity of a device with itself");
  values_[{std::min(a, b), std::max(a, b)}] = ds;
}

std::optional<double> DissimilarityMatrix::get(Uid a, Uid b) const {
  const auto it = values_.find({std::min(a, b), std::max(a, b)});
  if (it == values_.end()) return std::nullopt;
  return it->second;
}

std::vector<std::size_t> FederationPartition::federation_of(std::size_t device_count) const {
  std::vector<std::size_t> out(device_count, std::numeric_limits<std::size_t>::max());
  for (std::size_t f = 0; f < federations.size(); ++f)
    for (Uid m : federations[f].members) out.at(m) = f;
  return out;
}

void FederationPartition::validate(std::size_t device_count) const {
  if (federations.empty()) throw std::logic_error("partition has no federations");
  std::vector<int> seen(device_count, 0);
  for (const auto& f : federations) {
    if (std::find(f.members.begin(), f.members.end(), f.leader) == f.members.end())
      throw std::logic_error("federation leader is not a member");
    for (Uid m : f.members) {
      if (m >= device_count) throw std::logic_error("federation member out of range");
      if (++seen[m] > 1) throw std::logic_error("device belongs to two federations");
    }
  }
  if (std::find(seen.begin(), seen.end(), 0) != seen.end()) throw std::logic_error("device without federation");
}

double cross_similarity(const nn::ParameterSet& model_i, const nn::ParameterSet& model_j,
                        const nn::LabeledDataset& val_i, const nn::LabeledDataset& val_j) {
  if (model_i.architecture() != model_j.architecture())
    throw std::invalid_argument("cross_similarity: architecture mismatch");
  const double l_ij = nn::loss_and_accuracy(model_j, val_i).loss;
  const double l_ji = nn::loss_and_accuracy(model_i, val_j).loss;
  return l_ij + l_ji;
}

fields::CoordinationRegions federation_regions(const env::Topology& topology, const DissimilarityMatrix& ds,
                                               double tau) {
  auto graph = fields::FieldGraph::filtered(topology, [&](Uid a, Uid b) {
    const auto d = ds.get(a, b);
    if (!d) throw std::invalid_argument("missing dissimilarity for edge " + std::to_string(a) + "-" + std::to_string(b));
    return *d <= tau;
  });
  return fields::coordination_regions(std::move(graph));
}

FederationPartition partition_from(const fields::CoordinationRegions& regions, std::size_t round) {
  FederationPartition p;
  p.round = round;
  std::map<Uid, std::vector<Uid>> members;
  for (Uid v = 0; v < regions.graph.size(); ++v)
    if (regions.graph.present(v)) members[regions.election.leader[v]].push_back(v);
  for (auto& [leader, uids] : members) p.federations.push_back({leader, std::move(uids), round});
  return p;
}

FederationPartition form_federations(const env::Topology& topology, const DissimilarityMatrix& ds, double tau,
                                     std::size_t round) {
  return partition_from(federation_regions(topology, ds, tau), round);
}

nn::ParameterSet fed_avg(std::span<const nn::ParameterSet> models, std::span<const double> weights) {
  if (models.empty()) throw std::invalid_argument("fed_avg: empty model list");
  if (!weights.empty() && weights.size() != models.size())
    throw std::invalid_argument("fed_avg: one weight per model required");
  const auto arch = models.front().architecture();
  for (const auto& m : models)
    if (m.architecture() != arch) throw std::invalid_argument("fed_avg: shape mismatch");

  // Running weighted mean via std::lerp: exact for identical inputs and
  // bounded by the inputs elementwise.
  nn::ParameterSet avg = models.front();
  double total = weights.empty() ? 1.0 : weights.front();
  for (std::size_t k = 1; k < models.size(); ++k) {
    const double w = weights.empty() ? 1.0 : weights[k];
    if (!(w >= 0.0)) throw std::invalid_argument("fed_avg: negative weight");
    total += w;
    if (total == 0.0) continue;
    const double t = w / total;
    for (std::size_t l = 0; l < avg.layers.size(); ++l) {
      auto& aw = avg.layers[l].weights.data;
      const auto& mw = models[k].layers[l].weights.data;
      for (std::size_t i = 0; i < aw.size(); ++i) aw[i] = std::lerp(aw[i], mw[i], t);
      auto& ab = avg.layers[l].bias;
      const auto& mb = models[k].layers[l].bias;
      for (std::size_t i = 0; i < ab.size(); ++i) ab[i] = std::lerp(ab[i], mb[i], t);
    }
  }
  return avg;
}

namespace {

struct LocalUpdate {
  nn::ParameterSet trained;
  compression::CompressedModel exchanged;
};

compression::Kind exchange_kind(const ProtocolConfig& cfg) {
  const auto kind = cfg.strategy.kind;
  if (cfg.similarity_uses_compressed) return kind;
  return compression::is_sparse(kind) ? compression::Kind::sparse : compression::Kind::dense;
}

// Aggregated models carry no common mask, so only quantization applies.
compression::Kind dissemination_kind(const ProtocolConfig& cfg) {
  return compression::is_quantized(exchange_kind(cfg)) ? compression::Kind::quantized : compression::Kind::dense;
}

LocalUpdate local_update(const Device& device, const ProtocolConfig& cfg, std::size_t round) {
  using namespace compression;
  const auto kind = cfg.strategy.kind;
  std::optional<nn::SparseMask> mask;
  nn::ParameterSet start;
  if (is_sparse(kind)) {
    auto pruned = prune_magnitude(device.model, cfg.strategy.psi);
    start = encode(pruned.params, kind, &pruned.mask).params;
    mask = std::move(pruned.mask);
  } else {
    start = encode(device.model, kind, nullptr).params;
  }

  auto training = cfg.training;
  training.rng_seed = derive_seed(cfg.training.rng_seed, device.uid, round);
  LocalUpdate out;
  out.trained = nn::local_training(start, device.train, training, mask ? &*mask : nullptr);
  out.exchanged = encode(out.trained, exchange_kind(cfg), mask ? &*mask : nullptr);
  return out;
}

std::vector<LocalUpdate> local_updates(const SimulationState& state, const ProtocolConfig& cfg, std::size_t round) {
  std::vector<LocalUpdate> out;
  out.reserve(state.devices.size());
  for (const auto& d : state.devices) out.push_back(local_update(d, cfg, round));
  return out;
}

std::vector<double> sample_weights(const SimulationState& state, std::span<const Uid> members) {
  std::vector<double> w;
  w.reserve(members.size());
  for (Uid m : members) w.push_back(static_cast<double>(state.devices[m].train.size()));
  return w;
}

void check_state(const SimulationState& state) {
  if (state.devices.size() != state.topology.size()) throw std::invalid_argument("one device per topology site required");
  for (std::size_t i = 0; i < state.devices.size(); ++i)
    if (state.devices[i].uid != i) throw std::invalid_argument("device uids must be dense and in order");
}

}  // namespace

std::vector<compression::CompressedModel> train_and_encode(const SimulationState& state, const ProtocolConfig& cfg,
                                                           std::size_t round) {
  check_state(state);
  std::vector<compression::CompressedModel> out;
  for (auto& u : local_updates(state, cfg, round)) out.push_back(std::move(u.exchanged));
  return out;
}

DissimilarityMatrix measure_dissimilarity(const SimulationState& state,
                                          std::span<const compression::CompressedModel> exchanged) {
  DissimilarityMatrix ds;
  const auto& topo = state.topology;
  for (Uid a = 0; a < topo.size(); ++a)
    for (Uid b : topo.adjacency[a])
      if (a < b)
        ds.set(a, b,
               cross_similarity(exchanged[a].params, exchanged[b].params, state.devices[a].validation,
                                state.devices[b].validation));
  return ds;
}

RoundReport run_round(SimulationState& state, const ProtocolConfig& cfg, std::size_t round, Arm arm) {
  if (round == 0) throw std::invalid_argument("run_round: rounds are numbered from 1");
  cfg.validate();
  check_state(state);
  const std::size_t n = state.devices.size();

  RoundReport report;
  report.round = round;

  // (1) compress, (2) masked local training.
  auto updates = local_updates(state, cfg, round);
  report.representative_macs = compression::nonzero_macs(updates.front().exchanged);

  if (arm == Arm::isolated) {
    for (std::size_t i = 0; i < n; ++i) {
      state.devices[i].model = std::move(updates[i].trained);
      report.partition.federations.push_back({static_cast<Uid>(i), {static_cast<Uid>(i)}, round});
    }
    report.partition.round = round;
    return report;
  }

  std::vector<nn::ParameterSet> exchanged_params;
  exchanged_params.reserve(n);
  for (const auto& u : updates) exchanged_params.push_back(u.exchanged.params);

  if (arm == Arm::global_fedavg) {
    // Star around an aggregator outside the device set: every device uploads
    // and downloads once.
    std::vector<Uid> all(n);
    for (std::size_t i = 0; i < n; ++i) all[i] = static_cast<Uid>(i);
    const auto avg = fed_avg(exchanged_params, sample_weights(state, all));
    const auto shipped = compression::encode(avg, dissemination_kind(cfg), nullptr);
    for (const auto& u : updates) report.bytes.collection += compression::serialized_size(u.exchanged);
    report.bytes.dissemination = n * compression::serialized_size(shipped);
    for (auto& d : state.devices) d.model = shipped.params;
    report.partition.federations.push_back({0, std::move(all), round});
    report.partition.round = round;
    return report;
  }

  // (3) broadcast to neighbors.
  for (std::size_t i = 0; i < n; ++i)
    report.bytes.neighbor_broadcast +=
        state.topology.adjacency[i].size() * compression::serialized_size(updates[i].exchanged);

  // (4) pairwise dissimilarity, (5) federations.
  std::vector<compression::CompressedModel> exchanged;
  exchanged.reserve(n);
  for (auto& u : updates) exchanged.push_back(std::move(u.exchanged));
  report.dissimilarity = measure_dissimilarity(state, exchanged);
  const auto regions = federation_regions(state.topology, report.dissimilarity, cfg.tau);
  report.partition = partition_from(regions, round);
  const auto& field = regions.field;

  // (6) collect along the gradient trees. Each tree edge carries every model
  // of the subtree below it.
  std::vector<std::vector<Uid>> singleton(n);
  for (std::size_t i = 0; i < n; ++i) {
    singleton[i] = {static_cast<Uid>(i)};
    report.bytes.collection += field.hops[i] * compression::serialized_size(exchanged[i]);
  }
  const auto collected = fields::c_block<std::vector<Uid>>(
      field, singleton, {}, [](std::vector<Uid> acc, const std::vector<Uid>& more) {
        std::vector<Uid> merged;
        merged.reserve(acc.size() + more.size());
        std::merge(acc.begin(), acc.end(), more.begin(), more.end(), std::back_inserter(merged));
        return merged;
      });

  std::map<Uid, nn::ParameterSet> federation_models;
  std::map<Uid, std::size_t> shipped_size;
  for (const auto& [leader, members] : collected) {
    std::vector<nn::ParameterSet> models;
    models.reserve(members.size());
    for (Uid m : members) models.push_back(exchanged_params[m]);
    auto shipped = compression::encode(fed_avg(models, sample_weights(state, members)), dissemination_kind(cfg), nullptr);
    shipped_size[leader] = compression::serialized_size(shipped);
    federation_models.emplace(leader, std::move(shipped.params));
  }

  // Dissemination: one copy per tree edge. (7) adopt.
  const auto delivered = fields::broadcast_block(field, federation_models);
  for (std::size_t i = 0; i < n; ++i) {
    if (field.parent[i]) report.bytes.dissemination += shipped_size.at(*field.source[i]);
    state.devices[i].model = *delivered[i];
  }
  return report;
}

ObjectiveReport evaluate_objective(const FederationPartition& partition,
                                   const std::map<Uid, nn::ParameterSet>& federation_models,
                                   std::span<const env::DeviceSite> sites,
                                   std::span<const nn::LabeledDataset> region_test_sets) {
  const std::size_t k = region_test_sets.size();
  const auto owner = partition.federation_of(sites.size());

  // (federation, region) -> loss/accuracy, computed once.
  std::map<std::pair<std::size_t, std::size_t>, nn::LossAccuracy> cache;
  std::vector<double> loss_sum(k, 0.0), acc_sum(k, 0.0);
  std::vector<std::size_t> count(k, 0);
  for (const auto& site : sites) {
    const std::size_t region = site.subregion_id;
    if (region >= k) throw std::invalid_argument("evaluate_objective: no test set for subregion");
    const std::size_t f = owner.at(site.uid);
    if (f >= partition.size()) throw std::invalid_argument("evaluate_objective: device outside the partition");
    auto it = cache.find({f, region});
    if (it == cache.end()) {
      const auto model = federation_models.find(partition.federations[f].leader);
      if (model == federation_models.end()) throw std::invalid_argument("evaluate_objective: missing federation model");
      it = cache.emplace(std::pair{f, region}, nn::loss_and_accuracy(model->second, region_test_sets[region])).first;
    }
    loss_sum[region] += it->second.loss;
    acc_sum[region] += it->second.accuracy;
    ++count[region];
  }

  ObjectiveReport out;
  out.region_loss.resize(k);
  out.region_accuracy.resize(k);
  for (std::size_t j = 0; j < k; ++j) {
    if (count[j] == 0) {
      out.region_loss[j] = out.region_accuracy[j] = std::numeric_limits<double>::quiet_NaN();
      continue;
    }
    out.region_loss[j] = loss_sum[j] / static_cast<double>(count[j]);
    out.region_accuracy[j] = acc_sum[j] / static_cast<double>(count[j]);
    out.objective += out.region_loss[j];
  }
  return out;
}

}  // namespace sparseful::protocol
