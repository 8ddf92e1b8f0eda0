#include <algorithm>
#include <charconv>
#include <chrono>
#include <fstream>
#include <memory>

#include <fmt/format.h>
#include <fmt/ranges.h>

#include "sparseful/harness.hpp"
#include "sparseful/random.hpp"

namespace sparseful::harness {

namespace {

// Purpose tags for seed derivation; every stream comes from the one
// experiment seed.
enum SeedTag : std::uint64_t {
  kPlacement = 1,
  kLocalData = 2,
  kInitModel = 3,
  kTraining = 4,
  kBlobMeans = 5,
  kTestData = 6,
};

nn::LabeledDataset load_pool(const std::filesystem::path& images, const std::filesystem::path& labels) {
  return env::load_idx(images, labels);
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t mid = v.size() / 2;
  return v.size() % 2 ? v[mid] : 0.5 * (v[mid - 1] + v[mid]);
}

}  // namespace

Experiment build_experiment(const ExperimentConfig& cfg) {
  const auto seed = cfg.environment.seed;
  Experiment ex;
  ex.config = cfg;
  ex.area = env::build_area(cfg.environment.width, cfg.environment.height, cfg.environment.rows, cfg.environment.cols);
  const std::size_t k = ex.area.subregion_count();

  auto sites = env::deploy_devices(ex.area, cfg.environment.devices, cfg.environment.placement,
                                   derive_seed(seed, kPlacement));
  ex.state.topology = env::build_topology(std::move(sites), cfg.environment.radius);

  env::DistributionSpec test_spec;
  if (cfg.data.kind == env::DistributionKind::synthetic_blobs) {
    ex.distribution = env::make_blob_spec(k, cfg.data.classes_per_region, cfg.data.feature_dim, cfg.data.blob_std,
                                          derive_seed(seed, kBlobMeans));
    ex.distribution.mixing = cfg.data.mixing;
    test_spec = ex.distribution;
  } else {
    auto pool = std::make_shared<const nn::LabeledDataset>(load_pool(cfg.data.idx_images, cfg.data.idx_labels));
    ex.distribution = env::make_label_skew_spec(pool, k, cfg.data.mixing);
    test_spec = ex.distribution;
    if (!cfg.data.idx_test_images.empty())
      test_spec.pool =
          std::make_shared<const nn::LabeledDataset>(load_pool(cfg.data.idx_test_images, cfg.data.idx_test_labels));
    test_spec.validate();
  }
  ex.distribution.validate();

  ex.architecture.layer_sizes.push_back(ex.distribution.feature_dim);
  for (auto h : cfg.model.hidden) ex.architecture.layer_sizes.push_back(h);
  ex.architecture.layer_sizes.push_back(ex.distribution.class_count);
  ex.architecture.validate();

  for (const auto& site : ex.state.topology.sites) {
    auto data = env::sample_local_dataset(ex.distribution, site.subregion_id, cfg.data.samples,
                                          derive_seed(seed, kLocalData), site.uid);
    auto [train, validation] = protocol::split_validation(data, cfg.data.validation_fraction);
    ex.state.devices.push_back({site.uid, nn::init_parameters(ex.architecture, derive_seed(seed, kInitModel, site.uid)),
                                std::move(train), std::move(validation)});
  }
  for (std::size_t j = 0; j < k; ++j)
    ex.test_sets.push_back(env::sample_local_dataset(test_spec, j, cfg.data.test_samples, derive_seed(seed, kTestData), j));

  auto& p = ex.protocol;
  p.tau = cfg.protocol.tau.value_or(0.0);
  p.strategy = {cfg.protocol.compression, cfg.protocol.psi};
  p.similarity_uses_compressed = cfg.protocol.similarity_uses_compressed;
  p.training = {cfg.protocol.local_epochs, cfg.protocol.batch_size, cfg.protocol.learning_rate,
                derive_seed(seed, kTraining)};
  p.rounds = cfg.protocol.rounds;
  p.validation_fraction = cfg.data.validation_fraction;
  p.validate();
  return ex;
}

Calibration calibrate_tau(const Experiment& experiment) {
  auto state = experiment.state;
  const auto& cfg = experiment.protocol;
  const std::size_t measure_round = experiment.config.protocol.calibration_rounds;
  for (std::size_t r = 1; r < measure_round; ++r) protocol::run_round(state, cfg, r, protocol::Arm::isolated);
  const auto exchanged = protocol::train_and_encode(state, cfg, measure_round);
  const auto ds = protocol::measure_dissimilarity(state, exchanged);

  std::vector<double> intra, inter;
  const auto& sites = state.topology.sites;
  for (const auto& [edge, value] : ds.entries())
    (sites[edge.first].subregion_id == sites[edge.second].subregion_id ? intra : inter).push_back(value);
  if (intra.empty() || inter.empty())
    throw std::runtime_error("tau calibration needs edges both inside and across subregions");

  Calibration c;
  c.median_intra = median(intra);
  c.median_inter = median(inter);
  c.intra_edges = intra.size();
  c.inter_edges = inter.size();
  c.tau = 0.5 * (c.median_intra + c.median_inter);
  return c;
}

ExperimentResult run_experiment(const ExperimentConfig& cfg, protocol::Arm arm, const RoundObserver& observer) {
  return run_experiment(build_experiment(cfg), arm, observer);
}

ExperimentResult run_experiment(const Experiment& experiment, protocol::Arm arm, const RoundObserver& observer) {
  using Clock = std::chrono::steady_clock;
  const auto& cfg = experiment.config;
  auto state = experiment.state;
  auto pcfg = experiment.protocol;

  ExperimentResult result;
  if (arm == protocol::Arm::sparsefuel && !cfg.protocol.tau) pcfg.tau = calibrate_tau(experiment).tau;
  result.tau = pcfg.tau;
  for (const auto& s : state.topology.sites) result.subregion_of.push_back(s.subregion_id);

  std::size_t cumulative = 0;
  for (std::size_t t = 1; t <= pcfg.rounds; ++t) {
    const auto start = Clock::now();
    auto report = protocol::run_round(state, pcfg, t, arm);

    std::map<env::Uid, nn::ParameterSet> models;
    for (const auto& f : report.partition.federations) models.emplace(f.leader, state.devices[f.leader].model);
    const auto objective =
        protocol::evaluate_objective(report.partition, models, state.topology.sites, experiment.test_sets);

    MetricsRecord rec;
    rec.round = t;
    rec.federation_count = report.partition.size();
    rec.objective = objective.objective;
    rec.region_accuracy = objective.region_accuracy;
    rec.region_loss = objective.region_loss;
    rec.bytes_round = report.bytes.total();
    rec.bytes_broadcast = report.bytes.neighbor_broadcast;
    cumulative += rec.bytes_round;
    rec.bytes_total = cumulative;
    rec.macs = report.representative_macs;
    if (cfg.output.wall_time)
      rec.wall_ms = std::chrono::duration<double, std::milli>(Clock::now() - start).count();

    if (observer) observer(rec);
    result.records.push_back(std::move(rec));
    result.partitions.push_back(std::move(report.partition));
    if (t == pcfg.rounds) result.final_models = std::move(models);
  }
  return result;
}

std::vector<std::string> csv_header(std::size_t subregions) {
  std::vector<std::string> cols{"round", "federations", "objective"};
  for (std::size_t j = 0; j < subregions; ++j) cols.push_back(fmt::format("acc_region_{}", j));
  for (std::size_t j = 0; j < subregions; ++j) cols.push_back(fmt::format("loss_region_{}", j));
  for (const char* c : {"bytes_round", "bytes_total", "macs", "wall_ms"}) cols.emplace_back(c);
  return cols;
}

std::string format_metrics_csv(const std::vector<MetricsRecord>& records, std::size_t subregions) {
  std::string out = fmt::format("{}\n", fmt::join(csv_header(subregions), ","));
  for (const auto& r : records) {
    if (r.region_accuracy.size() != subregions || r.region_loss.size() != subregions)
      throw std::invalid_argument("metrics record has the wrong number of subregions");
    out += fmt::format("{},{},{:.6g}", r.round, r.federation_count, r.objective);
    for (double a : r.region_accuracy) out += fmt::format(",{:.6g}", a);
    for (double l : r.region_loss) out += fmt::format(",{:.6g}", l);
    out += fmt::format(",{},{},{},{:.6g}\n", r.bytes_round, r.bytes_total, r.macs, r.wall_ms);
  }
  return out;
}

void write_metrics_csv(const std::vector<MetricsRecord>& records, std::size_t subregions,
                       const std::filesystem::path& path) {
  const auto text = format_metrics_csv(records, subregions);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open metrics file for writing: " + path.string());
  out << text;
  if (!out) throw std::runtime_error("failed writing metrics file: " + path.string());
}

std::vector<std::filesystem::path> write_checkpoints(const ExperimentResult& result, const ExperimentConfig& cfg,
                                                     const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const compression::Strategy strategy{cfg.protocol.compression, cfg.protocol.psi};
  std::vector<std::filesystem::path> written;
  for (const auto& [leader, model] : result.final_models) {
    auto path = dir / fmt::format("federation_{}.spfl", leader);
    compression::write_checkpoint(compression::compress(model, strategy), path);
    written.push_back(std::move(path));
  }
  return written;
}

std::filesystem::path with_psi_suffix(const std::filesystem::path& path, double psi) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, psi);
  auto name = path.stem().string() + "_psi" + std::string(buf, res.ptr) + path.extension().string();
  return path.parent_path() / name;
}

}  // namespace sparseful::harness
