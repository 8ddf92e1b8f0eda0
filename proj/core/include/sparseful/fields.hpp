#pragma once

// Aggregate-computing building blocks evaluated as synchronous rounds over a
// static graph: every node reads its neighbors' previous-round values, all
// nodes update together, and a block stops at the first round that changes
// nothing.

#include <algorithm>
#include <cstddef>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "sparseful/environment.hpp"

namespace sparseful::fields {

using env::Uid;

inline constexpr std::size_t kUnreachable = std::numeric_limits<std::size_t>::max();

/// Undirected graph over uids 0..n-1. Nodes can be removed; a removed node
/// keeps its uid slot but has no edges and takes no part in any block.
class FieldGraph {
 public:
  FieldGraph() = default;
  explicit FieldGraph(std::size_t n) : adjacency_(n), present_(n, true) {}

  /// All topology edges.
  static FieldGraph from_topology(const env::Topology& topo);

  /// Topology edges for which keep(a, b) holds (called once per edge, a < b).
  template <typename Keep>
  static FieldGraph filtered(const env::Topology& topo, Keep keep) {
    FieldGraph g(topo.size());
    for (Uid a = 0; a < topo.size(); ++a)
      for (Uid b : topo.adjacency[a])
        if (a < b && keep(a, b)) g.add_edge(a, b);
    return g;
  }

  std::size_t size() const { return adjacency_.size(); }
  bool present(Uid v) const { return present_[v]; }
  /// Sorted.
  const std::vector<Uid>& neighbors(Uid v) const { return adjacency_[v]; }
  bool has_edge(Uid a, Uid b) const;
  std::size_t edge_count() const;

  void add_edge(Uid a, Uid b);
  /// Throws std::invalid_argument if the node is out of range or already removed.
  void remove_node(Uid v);

 private:
  std::vector<std::vector<Uid>> adjacency_;
  std::vector<bool> present_;
};

/// S-block output.
struct Election {
  std::vector<bool> is_leader;
  /// Leader each node settled on; absent nodes hold their own uid.
  std::vector<Uid> leader;
  std::size_t rounds = 0;

  std::vector<Uid> leaders() const;
};

/// Min-uid flooding: every node repeatedly adopts the smallest uid seen among
/// itself and its neighbors, so each connected component elects its minimum.
Election s_block(const FieldGraph& graph);

/// G-block output: hop-count gradient with parent pointers.
struct GradientField {
  std::vector<std::size_t> hops;  // kUnreachable when no source is reachable
  std::vector<std::optional<Uid>> parent;
  std::vector<std::optional<Uid>> source;
  std::size_t rounds = 0;

  std::size_t size() const { return hops.size(); }
  bool reachable(Uid v) const { return hops[v] != kUnreachable; }
  /// Children of each node, ascending uid.
  std::vector<std::vector<Uid>> children() const;
};

/// Hop distance to the nearest source. The parent is the neighbor with the
/// smallest hop count, lowest uid on ties; the source is inherited from it.
GradientField g_block(const FieldGraph& graph, std::span<const Uid> sources);

/// C-block: folds `values` up the gradient's spanning trees. Each node starts
/// from combine(identity, own value) and then merges its children's partial
/// results in ascending uid order, so floating-point folds are reproducible.
/// Returns the accumulated value at every source.
template <typename T, typename Combine>
std::map<Uid, T> c_block(const GradientField& field, std::span<const T> values, const T& identity, Combine combine) {
  if (values.size() != field.size()) throw std::invalid_argument("c_block: one value per node required");
  std::vector<Uid> order;
  for (Uid v = 0; v < field.size(); ++v)
    if (field.reachable(v)) order.push_back(v);
  // Deepest nodes first so children are complete before their parent.
  std::stable_sort(order.begin(), order.end(), [&](Uid a, Uid b) { return field.hops[a] > field.hops[b]; });

  const auto kids = field.children();
  std::vector<std::optional<T>> partial(field.size());
  std::map<Uid, T> at_source;
  for (Uid v : order) {
    T acc = combine(identity, values[v]);
    for (Uid c : kids[v]) {
      acc = combine(std::move(acc), *partial[c]);
      partial[c].reset();
    }
    if (field.parent[v])
      partial[v] = std::move(acc);
    else
      at_source.emplace(v, std::move(acc));
  }
  return at_source;
}

/// Every reachable node receives its source's value; unreachable nodes get
/// nothing. Throws std::invalid_argument when a source has no value.
template <typename T>
std::vector<std::optional<T>> broadcast_block(const GradientField& field, const std::map<Uid, T>& per_source) {
  std::vector<std::optional<T>> out(field.size());
  for (Uid v = 0; v < field.size(); ++v) {
    if (!field.source[v]) continue;
    const auto it = per_source.find(*field.source[v]);
    if (it == per_source.end()) throw std::invalid_argument("broadcast_block: missing value for a source");
    out[v] = it->second;
  }
  return out;
}

/// Leaders plus the gradient rooted at them.
struct CoordinationRegions {
  FieldGraph graph;
  Election election;
  GradientField field;
};

CoordinationRegions coordination_regions(FieldGraph graph);

/// Removes `removed` and lets S and G re-converge on the residual graph.
CoordinationRegions stabilize_after_removal(FieldGraph graph, Uid removed);

}  // namespace sparseful::fields
