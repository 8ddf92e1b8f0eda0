#include "sparseful/fields.hpp"

#include <algorithm>

namespace sparseful::fields {

FieldGraph FieldGraph::from_topology(const env::Topology& topo) {
  return filtered(topo, [](Uid, Uid) { return true; });
}

bool FieldGraph::has_edge(Uid a, Uid b) const {
  const auto& nbrs = adjacency_.at(a);
  return std::binary_search(nbrs.begin(), nbrs.end(), b);
}

std::size_t FieldGraph::edge_count() const {
  std::size_t twice = 0;
  for (const auto& nbrs : adjacency_) twice += nbrs.size();
  return twice / 2;
}

void FieldGraph::add_edge(Uid a, Uid b) {
  if (a == b) throw std::invalid_argument("FieldGraph: self loops are not allowed");
  if (a >= size() || b >= size()) throw std::invalid_argument("FieldGraph: node out of range");
  if (!present_[a] || !present_[b]) throw std::invalid_argument("FieldGraph: edge to a removed node");
  auto insert = [](std::vector<Uid>& v, Uid x) {
    const auto it = std::lower_bound(v.begin(), v.end(), x);
    if (it == v.end() || *it != x) v.insert(it, x);
  };
  insert(adjacency_[a], b);
  insert(adjacency_[b], a);
}

void FieldGraph::remove_node(Uid v) {
  if (v >= size() || !present_[v]) throw std::invalid_argument("FieldGraph: removed node does not exist");
  for (Uid u : adjacency_[v]) {
    auto& back = adjacency_[u];
    back.erase(std::lower_bound(back.begin(), back.end(), v));
  }
  adjacency_[v].clear();
  present_[v] = false;
}

std::vector<Uid> Election::leaders() const {
  std::vector<Uid> out;
  for (Uid v = 0; v < is_leader.size(); ++v)
    if (is_leader[v]) out.push_back(v);
  return out;
}

Election s_block(const FieldGraph& graph) {
  const std::size_t n = graph.size();
  Election e;
  e.leader.resize(n);
  for (Uid v = 0; v < n; ++v) e.leader[v] = v;

  std::vector<Uid> next(n);
  for (;;) {
    ++e.rounds;
    bool changed = false;
    for (Uid v = 0; v < n; ++v) {
      Uid best = e.leader[v];
      for (Uid u : graph.neighbors(v)) best = std::min(best, e.leader[u]);
      next[v] = best;
      changed |= best != e.leader[v];
    }
    e.leader.swap(next);
    if (!changed) break;
  }
  e.is_leader.resize(n);
  for (Uid v = 0; v < n; ++v) e.is_leader[v] = graph.present(v) && e.leader[v] == v;
  return e;
}

std::vector<std::vector<Uid>> GradientField::children() const {
  std::vector<std::vector<Uid>> kids(size());
  for (Uid v = 0; v < size(); ++v)
    if (parent[v]) kids[*parent[v]].push_back(v);
  return kids;
}

GradientField g_block(const FieldGraph& graph, std::span<const Uid> sources) {
  const std::size_t n = graph.size();
  std::vector<bool> is_source(n, false);
  for (Uid s : sources) {
    if (s >= n || !graph.present(s)) throw std::invalid_argument("g_block: source is not a node of the graph");
    is_source[s] = true;
  }

  GradientField f;
  f.hops.assign(n, kUnreachable);
  f.parent.assign(n, std::nullopt);
  f.source.assign(n, std::nullopt);
  // Sources know they are sources before any exchange happens.
  for (Uid s : sources) {
    f.hops[s] = 0;
    f.source[s] = s;
  }

  auto next = f;
  for (;;) {
    ++f.rounds;
    bool changed = false;
    for (Uid v = 0; v < n; ++v) {
      if (is_source[v]) continue;
      std::size_t best = kUnreachable;
      std::optional<Uid> via;
      for (Uid u : graph.neighbors(v))  // ascending, so strict < keeps the lowest uid
        if (f.hops[u] != kUnreachable && f.hops[u] + 1 < best) {
          best = f.hops[u] + 1;
          via = u;
        }
      next.hops[v] = best;
      next.parent[v] = via;
      next.source[v] = via ? f.source[*via] : std::nullopt;
      changed |= next.hops[v] != f.hops[v] || next.parent[v] != f.parent[v] || next.source[v] != f.source[v];
    }
    f.hops.swap(next.hops);
    f.parent.swap(next.parent);
    f.source.swap(next.source);
    if (!changed) break;
  }
  return f;
}

CoordinationRegions coordination_regions(FieldGraph graph) {
  auto election = s_block(graph);
  const auto leaders = election.leaders();
  auto field = g_block(graph, leaders);
  return {std::move(graph), std::move(election), std::move(field)};
}

CoordinationRegions stabilize_after_removal(FieldGraph graph, Uid removed) {
  graph.remove_node(removed);
  return coordination_regions(std::move(graph));
}

}  // namespace sparseful::fields
