#pragma once

// Skin binding (k unique joints of the closest bones), graph construction
// and input attribute assembly.

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "skinnet/geometry.hpp"
#include "skinnet/graph.hpp"
#include "skinnet/voxel.hpp"

namespace skinnet {

enum class BindingMode { joint, bone };
enum class DistanceMode { geodesic, euclidean };

inline const char* to_string(BindingMode m) { return m == BindingMode::joint ? "joint" : "bone"; }
inline const char* to_string(DistanceMode m) {
  return m == DistanceMode::geodesic ? "geodesic" : "euclidean";
}
inline BindingMode binding_mode_from_string(const std::string& s) {
  if (s == "joint") return BindingMode::joint;
  if (s == "bone") return BindingMode::bone;
  throw GeometryError("unknown binding mode '" + s + "' (expected joint|bone)");
}
inline DistanceMode distance_mode_from_string(const std::string& s) {
  if (s == "geodesic") return DistanceMode::geodesic;
  if (s == "euclidean") return DistanceMode::euclidean;
  throw GeometryError("unknown distance mode '" + s + "' (expected geodesic|euclidean)");
}

struct BindingSlot {
  std::size_t joint = 0;
  std::size_t bone = 0;  // bone that introduced the joint
  bool valid = false;
  friend bool operator==(const BindingSlot&, const BindingSlot&) = default;
};

using BindingRow = std::vector<BindingSlot>;

struct BindingTable {
  std::size_t k = 5;
  BindingMode mode = BindingMode::joint;
  std::vector<BindingRow> rows;

  std::size_t vertex_count() const { return rows.size(); }
  std::vector<double> mask() const {
    std::vector<double> m(rows.size() * k, 0.0);
    for (std::size_t v = 0; v < rows.size(); ++v)
      for (std::size_t s = 0; s < k; ++s) m[v * k + s] = rows[v][s].valid ? 1.0 : 0.0;
    return m;
  }
};

// Sorts bones by distance to the vertex (ties by bone index), maps each to
// its root joint and keeps the first k distinct joints. Bone mode keeps the
// k nearest bones and allows repeated root joints. Short rows are padded
// with copies of slot 0 flagged invalid.
inline BindingRow select_k_unique_joints(const RigAsset& asset, std::size_t vertex,
                                         std::size_t k, BindingMode mode = BindingMode::joint) {
  const auto& sk = asset.skeleton;
  if (sk.joints.empty()) throw GeometryError("skin binding needs a non-empty skeleton");
  const auto bones = sk.bones();
  if (bones.empty()) throw GeometryError("skin binding needs at least one bone");
  if (k == 0) throw GeometryError("k must be positive");
  if (vertex >= asset.mesh.vertices.size())
    throw GeometryError("vertex index " + std::to_string(vertex) + " out of range");
  const Vec3& p = asset.mesh.vertices[vertex];
  std::vector<double> dist(bones.size());
  for (std::size_t b = 0; b < bones.size(); ++b)
    dist[b] = point_segment_distance(p, sk.joints[bones[b].parent].position,
                                     sk.joints[bones[b].child].position);
  std::vector<std::size_t> order(bones.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return dist[a] < dist[b]; });

  BindingRow row;
  row.reserve(k);
  for (auto b : order) {
    if (row.size() == k) break;
    const auto j = bones[b].parent;
    if (mode == BindingMode::joint &&
        std::any_of(row.begin(), row.end(), [&](const BindingSlot& s) { return s.joint == j; }))
      continue;
    row.push_back({j, b, true});
  }
  const BindingSlot pad{row.front().joint, row.front().bone, false};
  while (row.size() < k) row.push_back(pad);
  return row;
}

inline BindingTable bind_asset(const RigAsset& asset, std::size_t k,
                               BindingMode mode = BindingMode::joint) {
  BindingTable t;
  t.k = k;
  t.mode = mode;
  t.rows.reserve(asset.mesh.vertices.size());
  for (std::size_t v = 0; v < asset.mesh.vertices.size(); ++v)
    t.rows.push_back(select_k_unique_joints(asset, v, k, mode));
  return t;
}

struct AssetGraphs {
  Graph mesh;       // mesh_topology + mesh_radius
  Graph skeleton;   // skeleton_topology
  Graph mesh_skel;  // binding; vertices first, then joints
};

inline AssetGraphs build_graphs(const RigAsset& asset, const BindingTable& binding, double radius,
                                std::size_t max_neighbours, std::uint64_t seed) {
  const auto nv = asset.mesh.vertices.size();
  const auto nj = asset.skeleton.size();
  if (binding.rows.size() != nv)
    throw GeometryError("binding table covers " + std::to_string(binding.rows.size()) +
                        " vertices, mesh has " + std::to_string(nv));
  AssetGraphs g;
  g.mesh.node_count = nv;
  g.mesh.node_kind.assign(nv, NodeKind::mesh_vertex);
  g.mesh.edge_sets[NeighbourhoodKind::mesh_topology] = face_edges(asset.mesh);
  g.mesh.edge_sets[NeighbourhoodKind::mesh_radius] =
      radius_neighbours(asset.mesh.vertices, radius, max_neighbours, seed);

  g.skeleton.node_count = nj;
  g.skeleton.node_kind.assign(nj, NodeKind::skeleton_joint);
  auto& sedges = g.skeleton.edge_sets[NeighbourhoodKind::skeleton_topology];
  for (const auto& b : asset.skeleton.bones()) {
    sedges.push_back({static_cast<std::uint32_t>(b.parent), static_cast<std::uint32_t>(b.child)});
    sedges.push_back({static_cast<std::uint32_t>(b.child), static_cast<std::uint32_t>(b.parent)});
  }

  g.mesh_skel.node_count = nv + nj;
  g.mesh_skel.node_kind.assign(nv, NodeKind::mesh_vertex);
  g.mesh_skel.node_kind.resize(nv + nj, NodeKind::skeleton_joint);
  auto& bedges = g.mesh_skel.edge_sets[NeighbourhoodKind::binding];
  std::vector<std::size_t> seen;
  for (std::size_t v = 0; v < nv; ++v) {
    seen.clear();
    for (const auto& s : binding.rows[v]) {
      if (!s.valid) continue;
      if (s.joint >= nj)
        throw GeometryError("binding of vertex " + std::to_string(v) + " references joint " +
                            std::to_string(s.joint) + " outside the skeleton");
      if (std::find(seen.begin(), seen.end(), s.joint) != seen.end()) continue;
      seen.push_back(s.joint);
      const auto jn = static_cast<std::uint32_t>(nv + s.joint);
      bedges.push_back({jn, static_cast<std::uint32_t>(v)});
      bedges.push_back({static_cast<std::uint32_t>(v), jn});
    }
  }
  g.mesh.validate();
  g.skeleton.validate();
  g.mesh_skel.validate();
  return g;
}

inline constexpr std::size_t kSlotAttributeWidth = 8;  // distance, bone start, bone end, end flag

inline std::size_t mesh_attribute_width(std::size_t k) { return 3 + k * kSlotAttributeWidth; }
inline constexpr std::size_t kSkeletonAttributeWidth = 3;

struct NodeAttributes {
  Tensor mesh;      // [V, 3 + 8k]
  Tensor skeleton;  // [J, 3]
};

// Per vertex: position, then per slot the vertex-joint distance, the
// introducing bone's start and end positions and the joint's end flag.
// Padding slots repeat slot 0.
inline NodeAttributes assemble_features(const RigAsset& asset, const BindingTable& binding,
                                        const GeodesicTable& distances) {
  const auto nv = asset.mesh.vertices.size();
  const auto nj = asset.skeleton.size();
  if (binding.rows.size() != nv) throw GeometryError("binding/mesh vertex count mismatch");
  if (distances.vertex_count() != nv || distances.joint_count() != nj)
    throw GeometryError("distance table does not cover every vertex/joint pair");
  const auto k = binding.k;
  const auto width = mesh_attribute_width(k);
  const auto bones = asset.skeleton.bones();
  const auto kids = asset.skeleton.children();
  std::vector<double> mesh(nv * width);
  for (std::size_t v = 0; v < nv; ++v) {
    double* row = &mesh[v * width];
    const Vec3& p = asset.mesh.vertices[v];
    row[0] = p.x();
    row[1] = p.y();
    row[2] = p.z();
    for (std::size_t s = 0; s < k; ++s) {
      const BindingSlot& slot = binding.rows[v][s].valid ? binding.rows[v][s] : binding.rows[v][0];
      if (slot.joint >= nj || slot.bone >= bones.size())
        throw GeometryError("binding slot out of range at vertex " + std::to_string(v));
      const double d = distances.at(v, slot.joint);
      if (!std::isfinite(d))
        throw GeometryError("missing distance for vertex " + std::to_string(v));
      const Vec3& a = asset.skeleton.joints[bones[slot.bone].parent].position;
      const Vec3& b = asset.skeleton.joints[bones[slot.bone].child].position;
      double* o = row + 3 + s * kSlotAttributeWidth;
      o[0] = d;
      o[1] = a.x(); o[2] = a.y(); o[3] = a.z();
      o[4] = b.x(); o[5] = b.y(); o[6] = b.z();
      o[7] = kids[slot.joint].empty() ? 1.0 : 0.0;
    }
  }
  std::vector<double> skel(nj * kSkeletonAttributeWidth);
  for (std::size_t j = 0; j < nj; ++j)
    for (int c = 0; c < 3; ++c) skel[j * 3 + c] = asset.skeleton.joints[j].position[c];
  return {Tensor({nv, width}, std::move(mesh)), Tensor({nj, kSkeletonAttributeWidth}, std::move(skel))};
}

}  // namespace skinnet
