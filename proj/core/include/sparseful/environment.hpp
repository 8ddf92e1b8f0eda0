#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string_view>
#include <vector>

#include "sparseful/neuralnet.hpp"

namespace sparseful::env {

/// Dense device identity, 0..n-1. Also the system-wide tie breaker.
using Uid = std::uint32_t;

struct Point {
  double x = 0.0;
  double y = 0.0;
};

/// Rectangle [0, width] x [0, height] split into rows x cols equal cells.
/// Cell index = row * cols + col, row 0 at y = 0.
struct Area {
  double width = 1.0;
  double height = 1.0;
  std::size_t rows = 1;
  std::size_t cols = 1;

  std::size_t subregion_count() const { return rows * cols; }
  /// Points on a shared edge belong to the lower-index cell; points outside
  /// the rectangle are clamped onto it.
  std::size_t subregion_of(Point p) const;
};

/// Throws std::invalid_argument for non-positive dimensions or an empty grid.
Area build_area(double width, double height, std::size_t rows, std::size_t cols);

enum class Placement { uniform_random, jittered_grid };

std::string_view to_string(Placement p);
std::optional<Placement> parse_placement(std::string_view text);

struct DeviceSite {
  Uid uid = 0;
  Point position;
  /// Ground truth for evaluation only; protocol logic never reads it.
  std::size_t subregion_id = 0;
};

/// Pitch of the ceil(sqrt(n)) lattice used by jittered-grid placement (the
/// larger of the two axis pitches).
double lattice_pitch(const Area& area, std::size_t n);

std::vector<DeviceSite> deploy_devices(const Area& area, std::size_t n, Placement placement, std::uint64_t seed);

struct Topology {
  std::vector<DeviceSite> sites;
  double radius = 0.0;
  /// Sorted neighbor uids per device.
  std::vector<std::vector<Uid>> adjacency;

  std::size_t size() const { return sites.size(); }
  std::size_t edge_count() const;
  bool adjacent(Uid a, Uid b) const;
};

/// j is a neighbor of i iff i != j and their distance is <= radius.
Topology build_topology(std::vector<DeviceSite> sites, double radius);

enum class DistributionKind { synthetic_blobs, idx_label_skew };

std::string_view to_string(DistributionKind k);
std::optional<DistributionKind> parse_distribution_kind(std::string_view text);

/// Class-conditional Gaussian.
struct Blob {
  std::vector<double> mean;
  double stddev = 0.1;
};

/// Data-generating process of every subregion.
struct DistributionSpec {
  DistributionKind kind = DistributionKind::synthetic_blobs;
  std::size_t class_count = 0;
  std::size_t feature_dim = 0;
  /// Labels owned by each subregion.
  std::vector<std::vector<std::uint32_t>> region_labels;
  /// Probability that a sample is drawn from labels owned by other subregions.
  double mixing = 0.0;
  /// synthetic-blobs: one Gaussian per class.
  std::vector<Blob> blobs;
  /// idx-label-skew: the sample pool.
  std::shared_ptr<const nn::LabeledDataset> pool;

  /// Throws std::invalid_argument on an inconsistent spec.
  void validate() const;
};

/// `classes_per_region` disjoint labels per subregion; each class mean is
/// drawn uniformly from [0.2, 0.8]^dim.
DistributionSpec make_blob_spec(std::size_t subregions, std::size_t classes_per_region, std::size_t dim,
                                double stddev, std::uint64_t seed);

/// Label-skew split of an IDX pool: labels 0..classes-1 dealt round-robin to
/// subregions.
DistributionSpec make_label_skew_spec(std::shared_ptr<const nn::LabeledDataset> pool, std::size_t subregions, double mixing);

/// Draws m samples for a device in `subregion`. `salt` distinguishes devices
/// sharing a subregion. idx mode samples without replacement and throws
/// std::runtime_error when the pool runs out.
nn::LabeledDataset sample_local_dataset(const DistributionSpec& spec, std::size_t subregion, std::size_t m,
                                        std::uint64_t seed, std::uint64_t salt = 0);

/// Reads an IDX image file (magic 0x00000803) and label file (0x00000801).
/// Pixels are scaled by 1/255 and flattened row-major. Throws
/// std::runtime_error on bad magic, truncation or count mismatch.
nn::LabeledDataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels);

}  // namespace sparseful::env
