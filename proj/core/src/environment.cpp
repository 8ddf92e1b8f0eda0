#include "sparseful/environment.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numeric>
#include <stdexcept>
#include <string>

#include "sparseful/random.hpp"

namespace sparseful::env {

namespace {

// Cell index along one axis; a coordinate on a shared edge goes to the lower cell.
std::size_t axis_cell(double coord, double extent, std::size_t cells) {
  const double scaled = coord * static_cast<double>(cells) / extent;
  if (!(scaled > 0.0)) return 0;
  const double idx = std::ceil(scaled) - 1.0;
  return std::min(static_cast<std::size_t>(idx), cells - 1);
}

}  // namespace

std::size_t Area::subregion_of(Point p) const {
  return axis_cell(p.y, height, rows) * cols + axis_cell(p.x, width, cols);
}

Area build_area(double width, double height, std::size_t rows, std::size_t cols) {
  if (!(width > 0.0) || !(height > 0.0)) throw std::invalid_argument("area dimensions must be positive");
  if (rows == 0 || cols == 0) throw std::invalid_argument("area grid must have at least one cell");
  return Area{width, height, rows, cols};
}

std::string_view to_string(Placement p) {
  return p == Placement::uniform_random ? "uniform-random" : "jittered-grid";
}

std::optional<Placement> parse_placement(std::string_view text) {
  if (text == "uniform-random") return Placement::uniform_random;
  if (text == "jittered-grid") return Placement::jittered_grid;
  return std::nullopt;
}

double lattice_pitch(const Area& area, std::size_t n) {
  const auto side = static_cast<double>(static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(n)))));
  return std::max(area.width / side, area.height / side);
}

std::vector<DeviceSite> deploy_devices(const Area& area, std::size_t n, Placement placement, std::uint64_t seed) {
  if (n == 0) throw std::invalid_argument("deploy_devices: need at least one device");
  Rng rng(derive_seed(seed, 0x6465706cULL));
  std::vector<DeviceSite> sites(n);
  const auto side = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(n))));
  const double px = area.width / static_cast<double>(side);
  const double py = area.height / static_cast<double>(side);
  for (std::size_t i = 0; i < n; ++i) {
    auto& s = sites[i];
    s.uid = static_cast<Uid>(i);
    if (placement == Placement::uniform_random) {
      s.position = {rng.uniform(0.0, area.width), rng.uniform(0.0, area.height)};
    } else {
      const auto r = static_cast<double>(i / side), c = static_cast<double>(i % side);
      s.position = {(c + 0.5) * px + rng.uniform(-0.25, 0.25) * px, (r + 0.5) * py + rng.uniform(-0.25, 0.25) * py};
    }
    s.subregion_id = area.subregion_of(s.position);
  }
  return sites;
}

std::size_t Topology::edge_count() const {
  std::size_t twice = 0;
  for (const auto& nbrs : adjacency) twice += nbrs.size();
  return twice / 2;
}

bool Topology::adjacent(Uid a, Uid b) const {
  const auto& nbrs = adjacency.at(a);
  return std::binary_search(nbrs.begin(), nbrs.end(), b);
}

Topology build_topology(std::vector<DeviceSite> sites, double radius) {
  if (!(radius > 0.0)) throw std::invalid_argument("communication radius must be positive");
  Topology topo;
  topo.radius = radius;
  topo.adjacency.resize(sites.size());
  for (std::size_t i = 0; i < sites.size(); ++i)
    for (std::size_t j = i + 1; j < sites.size(); ++j) {
      const double dx = sites[i].position.x - sites[j].position.x;
      const double dy = sites[i].position.y - sites[j].position.y;
      if (std::sqrt(dx * dx + dy * dy) <= radius) {
        topo.adjacency[i].push_back(static_cast<Uid>(j));
        topo.adjacency[j].push_back(static_cast<Uid>(i));
      }
    }
  for (auto& nbrs : topo.adjacency) std::sort(nbrs.begin(), nbrs.end());
  topo.sites = std::move(sites);
  return topo;
}

std::string_view to_string(DistributionKind k) {
  return k == DistributionKind::synthetic_blobs ? "synthetic-blobs" : "idx-label-skew";
}

std::optional<DistributionKind> parse_distribution_kind(std::string_view text) {
  if (text == "synthetic-blobs") return DistributionKind::synthetic_blobs;
  if (text == "idx-label-skew") return DistributionKind::idx_label_skew;
  return std::nullopt;
}

void DistributionSpec::validate() const {
  if (region_labels.empty()) throw std::invalid_argument("distribution needs at least one subregion");
  if (!(mixing >= 0.0 && mixing < 1.0)) throw std::invalid_argument("mixing fraction must lie in [0, 1)");
  std::vector<bool> covered(class_count, false);
  for (const auto& labels : region_labels) {
    if (labels.empty()) throw std::invalid_argument("every subregion must own at least one label");
    for (auto y : labels) {
      if (y >= class_count) throw std::invalid_argument("subregion label out of range");
      covered[y] = true;
    }
  }
  if (std::find(covered.begin(), covered.end(), false) != covered.end())
    throw std::invalid_argument("subregion label sets must cover every class");
  if (kind == DistributionKind::synthetic_blobs) {
    if (blobs.size() != class_count) throw std::invalid_argument("need one blob per class");
    for (const auto& b : blobs) {
      if (b.mean.size() != feature_dim) throw std::invalid_argument("blob mean dimension mismatch");
      if (!(b.stddev > 0.0)) throw std::invalid_argument("blob stddev must be positive");
    }
  } else {
    if (!pool || pool->empty()) throw std::invalid_argument("label-skew distribution needs a sample pool");
    if (pool->feature_dim != feature_dim) throw std::invalid_argument("pool feature dimension mismatch");
  }
}

DistributionSpec make_blob_spec(std::size_t subregions, std::size_t classes_per_region, std::size_t dim,
                                double stddev, std::uint64_t seed) {
  DistributionSpec spec;
  spec.kind = DistributionKind::synthetic_blobs;
  spec.class_count = subregions * classes_per_region;
  spec.feature_dim = dim;
  Rng rng(derive_seed(seed, 0x626c6f62ULL));
  for (std::size_t r = 0; r < subregions; ++r) {
    auto& labels = spec.region_labels.emplace_back();
    for (std::size_t c = 0; c < classes_per_region; ++c)
      labels.push_back(static_cast<std::uint32_t>(r * classes_per_region + c));
  }
  spec.blobs.resize(spec.class_count);
  for (auto& blob : spec.blobs) {
    blob.stddev = stddev;
    blob.mean.resize(dim);
    for (double& m : blob.mean) m = rng.uniform(0.2, 0.8);
  }
  spec.validate();
  return spec;
}

DistributionSpec make_label_skew_spec(std::shared_ptr<const nn::LabeledDataset> pool, std::size_t subregions,
                                      double mixing) {
  if (!pool || pool->empty()) throw std::invalid_argument("label-skew distribution needs a sample pool");
  DistributionSpec spec;
  spec.kind = DistributionKind::idx_label_skew;
  spec.feature_dim = pool->feature_dim;
  spec.class_count = *std::max_element(pool->labels.begin(), pool->labels.end()) + 1;
  spec.mixing = mixing;
  spec.region_labels.resize(subregions);
  for (std::uint32_t y = 0; y < spec.class_count; ++y) spec.region_labels[y % subregions].push_back(y);
  spec.pool = std::move(pool);
  spec.validate();
  return spec;
}

namespace {

std::vector<std::uint32_t> foreign_labels(const DistributionSpec& spec, std::size_t subregion) {
  const auto& own = spec.region_labels[subregion];
  std::vector<std::uint32_t> out;
  for (std::uint32_t y = 0; y < spec.class_count; ++y)
    if (std::find(own.begin(), own.end(), y) == own.end()) out.push_back(y);
  return out;
}

// Lazily shuffled index list; each draw is a Fisher-Yates step.
class WithoutReplacement {
 public:
  explicit WithoutReplacement(std::vector<std::size_t> items) : items_(std::move(items)) {}
  std::size_t draw(Rng& rng) {
    if (next_ == items_.size()) throw std::runtime_error("sample pool exhausted");
    const auto j = next_ + rng.below(items_.size() - next_);
    std::swap(items_[next_], items_[j]);
    return items_[next_++];
  }

 private:
  std::vector<std::size_t> items_;
  std::size_t next_ = 0;
};

}  // namespace

nn::LabeledDataset sample_local_dataset(const DistributionSpec& spec, std::size_t subregion, std::size_t m,
                                        std::uint64_t seed, std::uint64_t salt) {
  if (m == 0) throw std::invalid_argument("sample_local_dataset: m must be positive");
  if (subregion >= spec.region_labels.size()) throw std::invalid_argument("subregion id out of range");
  Rng rng(derive_seed(seed, subregion, salt));
  const auto& own = spec.region_labels[subregion];
  const auto others = foreign_labels(spec, subregion);
  const bool can_mix = spec.mixing > 0.0 && !others.empty();

  nn::LabeledDataset out;
  out.feature_dim = spec.feature_dim;
  out.features.reserve(m * spec.feature_dim);
  out.labels.reserve(m);

  if (spec.kind == DistributionKind::synthetic_blobs) {
    std::vector<double> x(spec.feature_dim);
    for (std::size_t i = 0; i < m; ++i) {
      const bool foreign = can_mix && rng.bernoulli(spec.mixing);
      const auto& choices = foreign ? others : own;
      const auto y = choices[rng.below(choices.size())];
      const auto& blob = spec.blobs[y];
      for (std::size_t d = 0; d < x.size(); ++d) x[d] = std::clamp(rng.normal(blob.mean[d], blob.stddev), 0.0, 1.0);
      out.push_back(x, y);
    }
    return out;
  }

  const auto& pool = *spec.pool;
  std::vector<std::size_t> own_rows, other_rows;
  for (std::size_t r = 0; r < pool.size(); ++r) {
    if (std::find(own.begin(), own.end(), pool.labels[r]) != own.end())
      own_rows.push_back(r);
    else
      other_rows.push_back(r);
  }
  WithoutReplacement own_draw(std::move(own_rows)), other_draw(std::move(other_rows));
  for (std::size_t i = 0; i < m; ++i) {
    const bool foreign = can_mix && rng.bernoulli(spec.mixing);
    const auto r = foreign ? other_draw.draw(rng) : own_draw.draw(rng);
    out.push_back(pool.sample(r), pool.labels[r]);
  }
  return out;
}

namespace {

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open IDX file: " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t be32(const std::vector<std::uint8_t>& b, std::size_t at) {
  return (std::uint32_t{b[at]} << 24) | (std::uint32_t{b[at + 1]} << 16) | (std::uint32_t{b[at + 2]} << 8) |
         std::uint32_t{b[at + 3]};
}

}  // namespace

nn::LabeledDataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path) {
  const auto images = read_file(images_path);
  const auto labels = read_file(labels_path);

  if (images.size() < 16) throw std::runtime_error("IDX images: truncated header");
  if (be32(images, 0) != 0x00000803) throw std::runtime_error("IDX images: bad magic");
  if (labels.size() < 8) throw std::runtime_error("IDX labels: truncated header");
  if (be32(labels, 0) != 0x00000801) throw std::runtime_error("IDX labels: bad magic");

  const std::size_t count = be32(images, 4);
  const std::size_t rows = be32(images, 8);
  const std::size_t cols = be32(images, 12);
  const std::size_t label_count = be32(labels, 4);
  if (count != label_count)
    throw std::runtime_error("IDX count mismatch: " + std::to_string(count) + " images vs " +
                             std::to_string(label_count) + " labels");
  const std::size_t dim = rows * cols;
  if (images.size() < 16 + count * dim) throw std::runtime_error("IDX images: truncated file");
  if (labels.size() < 8 + count) throw std::runtime_error("IDX labels: truncated file");

  nn::LabeledDataset out;
  out.feature_dim = dim;
  out.features.resize(count * dim);
  out.labels.resize(count);
  for (std::size_t i = 0; i < count * dim; ++i) out.features[i] = static_cast<double>(images[16 + i]) / 255.0;
  for (std::size_t i = 0; i < count; ++i) out.labels[i] = labels[8 + i];
  return out;
}

}  // namespace sparseful::env
