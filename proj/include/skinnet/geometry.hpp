#pragma once

// Meshes, skeletons, rigged assets and the Euclidean geometry helpers used
// by binding and graph construction.

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "skinnet/graph.hpp"
#include "skinnet/nn.hpp"

namespace skinnet {

using Vec3 = Eigen::Vector3d;

class GeometryError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Mesh {
  std::vector<Vec3> vertices;
  std::vector<std::array<std::uint32_t, 3>> faces;

  void validate() const {
    if (vertices.empty()) throw GeometryError("mesh has no vertices");
    for (std::size_t f = 0; f < faces.size(); ++f)
      for (auto i : faces[f])
        if (i >= vertices.size())
          throw GeometryError("face " + std::to_string(f) + " references vertex " +
                              std::to_string(i) + " but the mesh has " +
                              std::to_string(vertices.size()) + " vertices");
  }
};

struct Joint {
  std::string name;
  Vec3 position = Vec3::Zero();
  int parent = -1;  // -1 for the root
};

// A bone runs from a parent joint to one of its children. Its root joint is
// the parent side.
struct Bone {
  std::size_t parent = 0;
  std::size_t child = 0;
};

struct Skeleton {
  std::vector<Joint> joints;

  std::size_t size() const { return joints.size(); }

  std::size_t root() const {
    for (std::size_t j = 0; j < joints.size(); ++j)
      if (joints[j].parent < 0) return j;
    throw GeometryError("skeleton has no root joint");
  }

  // One bone per non-root joint, in joint order.
  std::vector<Bone> bones() const {
    std::vector<Bone> out;
    for (std::size_t j = 0; j < joints.size(); ++j)
      if (joints[j].parent >= 0) out.push_back({static_cast<std::size_t>(joints[j].parent), j});
    return out;
  }

  std::vector<std::vector<std::size_t>> children() const {
    std::vector<std::vector<std::size_t>> out(joints.size());
    for (std::size_t j = 0; j < joints.size(); ++j)
      if (joints[j].parent >= 0) out[static_cast<std::size_t>(joints[j].parent)].push_back(j);
    return out;
  }

  bool is_end_joint(std::size_t j) const {
    for (const auto& jt : joints)
      if (jt.parent == static_cast<int>(j)) return false;
    return true;
  }

  std::optional<std::size_t> find(const std::string& name) const {
    for (std::size_t j = 0; j < joints.size(); ++j)
      if (joints[j].name == name) return j;
    return std::nullopt;
  }

  // Joints ordered so every parent precedes its children.
  std::vector<std::size_t> topological_order() const {
    const auto kids = children();
    std::vector<std::size_t> order{root()};
    for (std::size_t i = 0; i < order.size(); ++i)
      for (auto c : kids[order[i]]) order.push_back(c);
    return order;
  }

  void validate() const {
    if (joints.empty()) throw GeometryError("skeleton has no joints");
    std::size_t roots = 0;
    for (std::size_t j = 0; j < joints.size(); ++j) {
      const int p = joints[j].parent;
      if (p < 0) {
        ++roots;
      } else if (static_cast<std::size_t>(p) >= joints.size()) {
        throw GeometryError("joint '" + joints[j].name + "' has parent index " +
                            std::to_string(p) + " out of range");
      } else if (static_cast<std::size_t>(p) == j) {
        throw GeometryError("joint '" + joints[j].name + "' is its own parent");
      }
    }
    if (roots == 0) throw GeometryError("skeleton has no root joint (cyclic hierarchy)");
    if (roots > 1) throw GeometryError("skeleton has " + std::to_string(roots) + " roots");
    // Walk each joint to the root; a walk longer than the joint count is a cycle.
    for (std::size_t j = 0; j < joints.size(); ++j) {
      int cur = static_cast<int>(j);
      std::size_t steps = 0;
      while (cur >= 0) {
        cur = joints[static_cast<std::size_t>(cur)].parent;
        if (++steps > joints.size())
          throw GeometryError("cyclic hierarchy through joint '" + joints[j].name + "'");
      }
    }
    for (std::size_t a = 0; a < joints.size(); ++a)
      for (std::size_t b = a + 1; b < joints.size(); ++b)
        if (joints[a].name == joints[b].name)
          throw GeometryError("duplicate joint name '" + joints[a].name + "'");
  }
};

struct JointWeight {
  std::size_t joint = 0;
  double weight = 0.0;
  friend bool operator==(const JointWeight&, const JointWeight&) = default;
};

// Per vertex, the joints with non-zero influence sorted by joint index.
using SparseWeights = std::vector<std::vector<JointWeight>>;

// Dense [V, J] row-major copy of sparse weights.
inline std::vector<double> to_dense(const SparseWeights& w, std::size_t joints) {
  std::vector<double> out(w.size() * joints, 0.0);
  for (std::size_t v = 0; v < w.size(); ++v)
    for (const auto& jw : w[v]) out[v * joints + jw.joint] += jw.weight;
  return out;
}

struct NormalizationTransform {
  Vec3 center = Vec3::Zero();
  double scale = 1.0;

  Vec3 apply(const Vec3& p) const { return (p - center) * scale; }
  Vec3 invert(const Vec3& p) const { return p / scale + center; }
};

struct RigAsset {
  std::string name;
  Mesh mesh;
  Skeleton skeleton;
  std::optional<SparseWeights> weights;
  NormalizationTransform normalization;  // identity until normalize()

  void validate() const {
    mesh.validate();
    skeleton.validate();
    if (!weights) return;
    if (weights->size() != mesh.vertices.size())
      throw GeometryError("skin weights cover " + std::to_string(weights->size()) +
                          " vertices, mesh has " + std::to_string(mesh.vertices.size()));
    for (std::size_t v = 0; v < weights->size(); ++v) {
      double s = 0.0;
      for (const auto& jw : (*weights)[v]) {
        if (jw.joint >= skeleton.size())
          throw GeometryError("skin weight of vertex " + std::to_string(v) +
                              " references joint " + std::to_string(jw.joint));
        if (!(jw.weight >= 0.0))
          throw GeometryError("negative skin weight at vertex " + std::to_string(v));
        s += jw.weight;
      }
      if (!(s > 0.0))
        throw GeometryError("vertex " + std::to_string(v) + " has no skin weight");
    }
  }
};

// Merges duplicate joints, drops zeros and rescales each row to sum 1.
inline void renormalize_weights(SparseWeights& w) {
  for (std::size_t v = 0; v < w.size(); ++v) {
    auto& row = w[v];
    std::sort(row.begin(), row.end(),
              [](const JointWeight& a, const JointWeight& b) { return a.joint < b.joint; });
    std::vector<JointWeight> merged;
    for (const auto& jw : row) {
      if (jw.weight < 0.0)
        throw GeometryError("negative skin weight at vertex " + std::to_string(v));
      if (!merged.empty() && merged.back().joint == jw.joint)
        merged.back().weight += jw.weight;
      else
        merged.push_back(jw);
    }
    std::erase_if(merged, [](const JointWeight& jw) { return jw.weight == 0.0; });
    double s = 0.0;
    for (const auto& jw : merged) s += jw.weight;
    if (!(s > 0.0)) throw GeometryError("vertex " + std::to_string(v) + " has no skin weight");
    for (auto& jw : merged) jw.weight /= s;
    row = std::move(merged);
  }
}

// Uniform scale and translation taking the mesh bounding box into [-1,1]^3,
// centred, aspect preserved. Joints get the same transform; the composite
// transform from the original coordinates is recorded.
inline RigAsset normalize(RigAsset asset) {
  if (asset.mesh.vertices.empty()) throw GeometryError("cannot normalize an empty mesh");
  Vec3 lo = asset.mesh.vertices.front(), hi = lo;
  for (const auto& v : asset.mesh.vertices) {
    lo = lo.cwiseMin(v);
    hi = hi.cwiseMax(v);
  }
  const double extent = (hi - lo).maxCoeff();
  if (!(extent > 0.0)) throw GeometryError("mesh bounding box has zero extent");
  NormalizationTransform t;
  t.center = 0.5 * (lo + hi);
  t.scale = 2.0 / extent;
  for (auto& v : asset.mesh.vertices) v = t.apply(v);
  for (auto& j : asset.skeleton.joints) j.position = t.apply(j.position);
  // Compose with any earlier normalization: x_now = (x_orig - c0) s0.
  const auto& prev = asset.normalization;
  NormalizationTransform total;
  total.scale = prev.scale * t.scale;
  total.center = prev.center + t.center / prev.scale;
  asset.normalization = total;
  return asset;
}

inline double point_segment_distance(const Vec3& p, const Vec3& a, const Vec3& b) {
  const Vec3 ab = b - a;
  const double len2 = ab.squaredNorm();
  if (len2 == 0.0) return (p - a).norm();
  const double t = std::clamp((p - a).dot(ab) / len2, 0.0, 1.0);
  return (p - (a + t * ab)).norm();
}

// For every point, up to max_n neighbours strictly closer than r, sampled
// uniformly without replacement. Emits neighbour -> centre edges.
inline std::vector<Edge> radius_neighbours(const std::vector<Vec3>& points, double r,
                                           std::size_t max_n, std::uint64_t seed) {
  if (!(r > 0.0)) throw GeometryError("radius must be positive");
  if (max_n < 1) throw GeometryError("max neighbours must be >= 1");
  Rng rng(seed);
  std::vector<Edge> edges;
  std::vector<std::uint32_t> cand;
  const double r2 = r * r;
  for (std::size_t i = 0; i < points.size(); ++i) {
    cand.clear();
    for (std::size_t j = 0; j < points.size(); ++j)
      if (j != i && (points[j] - points[i]).squaredNorm() < r2)
        cand.push_back(static_cast<std::uint32_t>(j));
    if (cand.size() > max_n) {
      for (std::size_t s = 0; s < max_n; ++s)
        std::swap(cand[s], cand[s + rng.index(cand.size() - s)]);
      cand.resize(max_n);
      std::sort(cand.begin(), cand.end());
    }
    for (auto j : cand) edges.push_back({j, static_cast<std::uint32_t>(i)});
  }
  return edges;
}

// Undirected face edges as both directed edges, deduplicated, sorted.
inline std::vector<Edge> face_edges(const Mesh& mesh) {
  std::vector<Edge> edges;
  edges.reserve(mesh.faces.size() * 6);
  for (const auto& f : mesh.faces)
    for (int k = 0; k < 3; ++k) {
      const auto a = f[k], b = f[(k + 1) % 3];
      if (a == b) continue;
      edges.push_back({a, b});
      edges.push_back({b, a});
    }
  std::sort(edges.begin(), edges.end(), [](const Edge& x, const Edge& y) {
    return x.dst != y.dst ? x.dst < y.dst : x.src < y.src;
  });
  edges.erase(std::unique(edges.begin(), edges.end()), edges.end());
  return edges;
}

}  // namespace skinnet
