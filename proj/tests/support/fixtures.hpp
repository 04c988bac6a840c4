#pragma once

// Tiny assets and configurations shared across test files.

#include "skinnet/binding.hpp"
#include "skinnet/model.hpp"
#include "skinnet/voxel.hpp"

namespace skinnet::support {

inline SkinningNetConfig tiny_config() {
  SkinningNetConfig c;
  c.mesh_input = {8, 8};
  c.mesh_blocks = {8, 8, 8};
  c.skel_input = {8};
  c.skel_blocks = {8, 8, 8};
  c.mesh_skel_width = 8;
  c.global_mesh_width = 8;
  c.global_skel_width = 8;
  c.skin_blocks = {8, 8, 8};
  c.head = {8, 8};
  return c;
}

inline RigAsset micro_asset(std::size_t joints) {
  RigAsset a;
  a.name = "micro";
  a.mesh.vertices = {Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(0, 1, 0), Vec3(0, 0, 1), Vec3(0.4, 0.4, 0.4)};
  a.mesh.faces = {{0, 2, 1}, {0, 1, 3}, {0, 3, 2}, {1, 2, 4}, {2, 3, 4}, {3, 1, 4}};
  for (std::size_t j = 0; j < joints; ++j)
    a.skeleton.joints.push_back({"j" + std::to_string(j), Vec3(0.1 + 0.3 * j, 0.2, 0.2),
                                 static_cast<int>(j) - 1});
  return a;
}

struct Prepared {
  RigAsset asset;
  BindingTable binding;
  AssetGraphs graphs;
  ModelInput input;
  DegreeStats stats;
};

inline Prepared prepare(const RigAsset& raw, std::size_t k = 5, double radius = 0.8) {
  Prepared p;
  p.asset = normalize(raw);
  p.binding = bind_asset(p.asset, k);
  std::vector<Vec3> joints;
  for (const auto& j : p.asset.skeleton.joints) joints.push_back(j.position);
  const auto table = GeodesicTable::euclidean(p.asset.mesh.vertices, joints);
  p.graphs = build_graphs(p.asset, p.binding, radius, 10, 1);
  p.input = make_model_input(p.graphs, assemble_features(p.asset, p.binding, table), p.binding);
  p.stats.d_train[NeighbourhoodKind::mesh_topology] =
      mean_in_degree({&p.graphs.mesh}, NeighbourhoodKind::mesh_topology);
  p.stats.d_train[NeighbourhoodKind::mesh_radius] =
      mean_in_degree({&p.graphs.mesh}, NeighbourhoodKind::mesh_radius);
  p.stats.d_train[NeighbourhoodKind::skeleton_topology] =
      mean_in_degree({&p.graphs.skeleton}, NeighbourhoodKind::skeleton_topology);
  p.stats.d_train[NeighbourhoodKind::binding] =
      mean_in_degree({&p.graphs.mesh_skel}, NeighbourhoodKind::binding);
  return p;
}

}  // namespace skinnet::support
