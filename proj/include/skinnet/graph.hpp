#pragma once

// Graph containers, incoming-neighbourhood tables and training-split degree
// statistics.

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "skinnet/tensor.hpp"

namespace skinnet {

class GraphError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class NeighbourhoodKind { mesh_topology, mesh_radius, skeleton_topology, binding };
enum class NodeKind { mesh_vertex, skeleton_joint };

inline const char* to_string(NeighbourhoodKind k) {
  switch (k) {
    case NeighbourhoodKind::mesh_topology: return "mesh_topology";
    case NeighbourhoodKind::mesh_radius: return "mesh_radius";
    case NeighbourhoodKind::skeleton_topology: return "skeleton_topology";
    case NeighbourhoodKind::binding: return "binding";
  }
  return "?";
}

inline NeighbourhoodKind neighbourhood_kind_from_string(const std::string& s) {
  for (auto k : {NeighbourhoodKind::mesh_topology, NeighbourhoodKind::mesh_radius,
                 NeighbourhoodKind::skeleton_topology, NeighbourhoodKind::binding})
    if (s == to_string(k)) return k;
  throw GraphError("unknown neighbourhood kind '" + s + "'");
}

struct Edge {
  std::uint32_t src = 0;
  std::uint32_t dst = 0;
  friend bool operator==(const Edge&, const Edge&) = default;
};

struct Graph {
  std::size_t node_count = 0;
  std::vector<NodeKind> node_kind;
  Tensor features;  // [node_count, F] when attached
  std::map<NeighbourhoodKind, std::vector<Edge>> edge_sets;

  const std::vector<Edge>& edges(NeighbourhoodKind k) const {
    static const std::vector<Edge> kEmpty;
    auto it = edge_sets.find(k);
    return it == edge_sets.end() ? kEmpty : it->second;
  }

  void validate() const {
    if (node_kind.size() != node_count)
      throw GraphError("node kind table has " + std::to_string(node_kind.size()) +
                       " entries for " + std::to_string(node_count) + " nodes");
    for (const auto& [kind, list] : edge_sets)
      for (const auto& e : list)
        if (e.src >= node_count || e.dst >= node_count)
          throw GraphError(std::string("edge endpoint out of range in ") +
                           to_string(kind) + " edges");
    if (features.defined() && features.rows() != node_count)
      throw GraphError("feature rows do not match node count");
  }
};

// Incoming neighbourhoods in CSR form: sources of node i are
// sources[offsets[i] .. offsets[i+1]) in edge-list order.
struct Neighbourhoods {
  std::vector<std::size_t> offsets;
  std::vector<std::uint32_t> sources;

  std::size_t node_count() const { return offsets.empty() ? 0 : offsets.size() - 1; }
  std::size_t degree(std::size_t i) const { return offsets[i + 1] - offsets[i]; }
};

// Nodes with no incoming edge get a self-loop so no neighbourhood is empty.
inline Neighbourhoods incoming(std::size_t node_count, const std::vector<Edge>& edges,
                               bool self_loop_fallback = true) {
  Neighbourhoods nb;
  std::vector<std::size_t> count(node_count, 0);
  for (const auto& e : edges) {
    if (e.src >= node_count || e.dst >= node_count)
      throw GraphError("edge endpoint out of range");
    ++count[e.dst];
  }
  if (self_loop_fallback)
    for (auto& c : count)
      if (c == 0) c = 1;
  nb.offsets.assign(node_count + 1, 0);
  for (std::size_t i = 0; i < node_count; ++i) nb.offsets[i + 1] = nb.offsets[i] + count[i];
  nb.sources.assign(nb.offsets.back(), 0);
  std::vector<std::size_t> fill(nb.offsets.begin(), nb.offsets.end() - 1);
  for (const auto& e : edges) nb.sources[fill[e.dst]++] = e.src;
  if (self_loop_fallback)
    for (std::size_t i = 0; i < node_count; ++i)
      if (fill[i] == nb.offsets[i]) nb.sources[fill[i]++] = static_cast<std::uint32_t>(i);
  return nb;
}

inline Neighbourhoods incoming(const Graph& g, NeighbourhoodKind kind,
                               bool self_loop_fallback = true) {
  return incoming(g.node_count, g.edges(kind), self_loop_fallback);
}

struct DegreeStats {
  enum class Source { computed, loaded };
  std::map<NeighbourhoodKind, double> d_train;
  Source source = Source::computed;

  bool has(NeighbourhoodKind k) const { return d_train.count(k) > 0; }
  double at(NeighbourhoodKind k) const {
    auto it = d_train.find(k);
    if (it == d_train.end())
      throw GraphError(std::string("no training degree statistic for ") + to_string(k) +
                       " neighbourhoods; compute them on the training split or load "
                       "them from a checkpoint");
    return it->second;
  }
};

// Mean in-degree (after self-loop fallback) over every node of every graph.
inline double mean_in_degree(const std::vector<const Graph*>& graphs, NeighbourhoodKind kind) {
  if (graphs.empty()) throw GraphError("degree statistics need a non-empty training split");
  double total = 0.0;
  std::size_t nodes = 0;
  for (const Graph* g : graphs) {
    const auto nb = incoming(*g, kind);
    total += static_cast<double>(nb.sources.size());
    nodes += g->node_count;
  }
  if (nodes == 0) throw GraphError("degree statistics over graphs without nodes");
  return total / static_cast<double>(nodes);
}

inline DegreeStats compute_degree_stats(const std::vector<const Graph*>& graphs,
                                        NeighbourhoodKind kind) {
  DegreeStats s;
  s.d_train[kind] = mean_in_degree(graphs, kind);
  return s;
}

}  // namespace skinnet
