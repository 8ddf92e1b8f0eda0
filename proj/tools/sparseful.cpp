// sparseful: run self-federated learning experiments and inspect model
// checkpoints.
//
//   sparseful run --config exp.ini [--arm sparsefuel] [--seed 7] [--out m.csv]
//   sparseful sweep --config exp.ini --psi 0,0.3,0.5,0.7,0.9
//   sparseful calibrate-tau --config exp.ini
//   sparseful inspect-model a.spfl [b.spfl ...]
//
// Exit codes: 0 success, 1 config or usage error, 2 runtime error.

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "CLI11.hpp"
#include "sparseful/compression.hpp"
#include "sparseful/harness.hpp"
#include "sparseful/protocol.hpp"

namespace {

using namespace sparseful;

constexpr int kExitOk = 0;
constexpr int kExitConfig = 1;
constexpr int kExitRuntime = 2;

struct RunOptions {
  std::string config;
  std::string arm = "sparsefuel";
  std::optional<std::uint64_t> seed;
  std::string out;
  bool quiet = false;
};

harness::ExperimentConfig load(const RunOptions& opts) {
  auto cfg = harness::parse_config_file(opts.config);
  if (opts.seed) cfg = harness::with_seed(std::move(cfg), *opts.seed);
  if (!opts.out.empty()) cfg.output.csv = opts.out;
  return cfg;
}

protocol::Arm arm_of(const std::string& text) {
  const auto arm = protocol::parse_arm(text);
  if (!arm) throw harness::ConfigError(0, "unknown arm '" + text + "' (sparsefuel, global-fedavg, isolated)");
  return *arm;
}

void run_one(const harness::ExperimentConfig& cfg, protocol::Arm arm, bool quiet) {
  const auto result = harness::run_experiment(cfg, arm, [&](const harness::MetricsRecord& r) {
    if (!quiet)
      std::cerr << fmt::format("round {:>3}  federations {:>3}  objective {:.4f}  bytes {}\n", r.round,
                               r.federation_count, r.objective, r.bytes_round);
  });
  const std::size_t k = cfg.environment.rows * cfg.environment.cols;
  harness::write_metrics_csv(result.records, k, cfg.output.csv);
  if (!cfg.output.checkpoint_dir.empty()) harness::write_checkpoints(result, cfg, cfg.output.checkpoint_dir);
  std::cout << fmt::format("{}: {} rounds, tau {:.6g}, final federations {} -> {}\n", protocol::to_string(arm),
                           result.records.size(), result.tau, result.records.back().federation_count,
                           cfg.output.csv.string());
}

std::vector<double> parse_psi_list(const std::string& text) {
  std::vector<double> out;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto comma = text.find(',', pos);
    const auto item = text.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != item.size() || v < 0.0 || v > 1.0)
      throw harness::ConfigError(0, "--psi expects comma-separated values in [0, 1], got '" + item + "'");
    out.push_back(v);
    if (comma == std::string::npos) break;
    pos = comma + 1;
  }
  return out;
}

int inspect(const std::vector<std::string>& paths) {
  std::optional<std::pair<std::size_t, std::size_t>> reference;
  for (const auto& p : paths) {
    const auto m = compression::read_checkpoint(p);
    const auto total = compression::serialized_size(m);
    const auto payload = compression::payload_size(m);
    const auto arch = m.params.architecture();
    std::cout << fmt::format("{}\n  kind            {}\n  tensors         {}\n  parameters      {}\n", p,
                             compression::to_string(m.kind), 2 * m.params.layers.size(), m.params.parameter_count());
    std::cout << fmt::format("  serialized      {} bytes\n  payload         {} bytes\n", total, payload);
    std::cout << fmt::format("  nonzero weights {} of {}\n", compression::nonzero_macs(m),
                             m.params.layers.empty() ? 0 : compression::dense_macs(arch));
    if (!reference) {
      reference.emplace(total, payload);
    } else {
      std::cout << fmt::format("  size ratio      {:.4f} (payload {:.4f}) vs {}\n",
                               static_cast<double>(total) / static_cast<double>(reference->first),
                               reference->second ? static_cast<double>(payload) / static_cast<double>(reference->second)
                                                 : 0.0,
                               paths.front());
    }
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sparse proximity-based self-federated learning simulator"};
  app.require_subcommand(1);

  RunOptions run_opts;
  auto* run = app.add_subcommand("run", "Run one experiment and write a metrics CSV");
  run->add_option("--config", run_opts.config, "Experiment config file")->required();
  run->add_option("--arm", run_opts.arm, "sparsefuel | global-fedavg | isolated");
  run->add_option("--seed", run_opts.seed, "Override the config seed");
  run->add_option("--out", run_opts.out, "Override the CSV path");
  run->add_flag("--quiet", run_opts.quiet, "No per-round progress");

  RunOptions sweep_opts;
  std::string psi_list = "0,0.3,0.5,0.7,0.9";
  auto* sweep = app.add_subcommand("sweep", "Repeat a run per sparsification ratio");
  sweep->add_option("--config", sweep_opts.config, "Experiment config file")->required();
  sweep->add_option("--psi", psi_list, "Comma-separated ratios");
  sweep->add_option("--arm", sweep_opts.arm, "sparsefuel | global-fedavg | isolated");
  sweep->add_option("--seed", sweep_opts.seed, "Override the config seed");
  sweep->add_option("--out", sweep_opts.out, "Base CSV path; _psi<value> is appended");
  sweep->add_flag("--quiet", sweep_opts.quiet, "No per-round progress");

  RunOptions cal_opts;
  auto* calibrate = app.add_subcommand("calibrate-tau", "Measure a similarity threshold for a config");
  calibrate->add_option("--config", cal_opts.config, "Experiment config file")->required();
  calibrate->add_option("--seed", cal_opts.seed, "Override the config seed");

  std::vector<std::string> checkpoints;
  auto* inspect_cmd = app.add_subcommand("inspect-model", "Print sizes and nonzero counts of checkpoints");
  inspect_cmd->add_option("checkpoints", checkpoints, "Checkpoint files; ratios are relative to the first")
      ->required()
      ->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*run) {
      run_one(load(run_opts), arm_of(run_opts.arm), run_opts.quiet);
    } else if (*sweep) {
      const auto base = load(sweep_opts);
      const auto arm = arm_of(sweep_opts.arm);
      for (double psi : parse_psi_list(psi_list)) {
        auto cfg = base;
        cfg.protocol.psi = psi;
        cfg.output.csv = harness::with_psi_suffix(base.output.csv, psi);
        if (!base.output.checkpoint_dir.empty())
          cfg.output.checkpoint_dir = harness::with_psi_suffix(base.output.checkpoint_dir, psi);
        run_one(cfg, arm, sweep_opts.quiet);
      }
    } else if (*calibrate) {
      const auto experiment = harness::build_experiment(load(cal_opts));
      const auto c = harness::calibrate_tau(experiment);
      std::cout << fmt::format("median ds within subregions  {:.6g} ({} edges)\n", c.median_intra, c.intra_edges);
      std::cout << fmt::format("median ds across subregions  {:.6g} ({} edges)\n", c.median_inter, c.inter_edges);
      std::cout << fmt::format("recommended tau              {:.6g}\n", c.tau);
    } else if (*inspect_cmd) {
      return inspect(checkpoints);
    }
  } catch (const harness::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitOk;
}
