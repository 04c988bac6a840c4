#pragma once

// Synthetic rigged tubes: random joint trees, closed tubes swept along each
// chain, and ground-truth weights from a softmax over the negative distances
// to the two nearest bones (credited to the bones' parent joints).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <numbers>
#include <string>
#include <vector>

#include "skinnet/geometry.hpp"
#include "skinnet/nn.hpp"

namespace skinnet {

struct SyntheticRigSpec {
  std::size_t count = 32;
  std::size_t joints_min = 3, joints_max = 6;
  std::size_t vertices_min = 300, vertices_max = 800;
  double radius_min = 0.08, radius_max = 0.14;  // before normalization
  double bone_length_min = 0.35, bone_length_max = 0.6;
  double max_bend_deg = 35.0;
  // Probability that a new joint starts a side branch instead of extending
  // the current chain. 0 gives plain chains.
  double branch_probability = 0.0;
  double temperature = 0.05;  // softmax temperature in normalized units
  std::size_t ring_segments = 12;
  std::uint64_t seed = 7;

  void validate() const {
    if (count == 0) throw GeometryError("synthetic spec: count must be positive");
    if (joints_min < 2 || joints_max < joints_min)
      throw GeometryError("synthetic spec: need 2 <= joints_min <= joints_max");
    if (vertices_min < 50 || vertices_max < vertices_min)
      throw GeometryError("synthetic spec: need 50 <= vertices_min <= vertices_max");
    if (!(radius_min > 0.0) || radius_max < radius_min)
      throw GeometryError("synthetic spec: bad tube radius range");
    if (!(bone_length_min > 0.0) || bone_length_max < bone_length_min)
      throw GeometryError("synthetic spec: bad bone length range");
    if (!(max_bend_deg >= 0.0 && max_bend_deg < 90.0))
      throw GeometryError("synthetic spec: bend must lie in [0, 90) degrees");
    if (!(branch_probability >= 0.0 && branch_probability <= 1.0))
      throw GeometryError("synthetic spec: branch probability must lie in [0,1]");
    if (!(temperature > 0.0)) throw GeometryError("synthetic spec: temperature must be positive");
    if (ring_segments < 3) throw GeometryError("synthetic spec: need at least 3 ring segments");
  }
};

// Branching trees used for the aggregator ablation.
inline SyntheticRigSpec cardinality_stress_spec(std::size_t count, std::uint64_t seed) {
  SyntheticRigSpec s;
  s.count = count;
  s.joints_min = 5;
  s.joints_max = 8;
  s.branch_probability = 0.5;
  s.seed = seed;
  return s;
}

// Weights for every vertex: softmax(-d/tau) over the two nearest bones.
inline SparseWeights distance_softmax_weights(const Mesh& mesh, const Skeleton& sk, double tau) {
  const auto bones = sk.bones();
  if (bones.empty()) throw GeometryError("distance-softmax weights need at least one bone");
  SparseWeights w(mesh.vertices.size());
  std::vector<double> d(bones.size());
  std::vector<std::size_t> order(bones.size());
  for (std::size_t v = 0; v < mesh.vertices.size(); ++v) {
    for (std::size_t b = 0; b < bones.size(); ++b)
      d[b] = point_segment_distance(mesh.vertices[v], sk.joints[bones[b].parent].position,
                                    sk.joints[bones[b].child].position);
    for (std::size_t b = 0; b < order.size(); ++b) order[b] = b;
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return d[a] < d[b]; });
    const std::size_t n = std::min<std::size_t>(2, bones.size());
    double z = 0.0;
    std::vector<double> e(n);
    for (std::size_t i = 0; i < n; ++i) z += e[i] = std::exp(-(d[order[i]] - d[order[0]]) / tau);
    for (std::size_t i = 0; i < n; ++i) {
      const auto j = bones[order[i]].parent;
      auto it = std::find_if(w[v].begin(), w[v].end(), [&](const JointWeight& x) { return x.joint == j; });
      if (it == w[v].end())
        w[v].push_back({j, e[i] / z});
      else
        it->weight += e[i] / z;
    }
  }
  return w;
}

namespace detail {

inline Vec3 any_perpendicular(const Vec3& d) {
  const Vec3 a = std::abs(d.x()) < 0.9 ? Vec3::UnitX() : Vec3::UnitY();
  return d.cross(a).normalized();
}

// Closed tube along a polyline: rings of `segs` vertices plus two apex caps.
inline void append_tube(Mesh& mesh, const std::vector<Vec3>& path, double radius, std::size_t rings,
                        std::size_t segs) {
  std::vector<double> arc{0.0};
  for (std::size_t i = 1; i < path.size(); ++i) arc.push_back(arc.back() + (path[i] - path[i - 1]).norm());
  const double total = arc.back();
  rings = std::max<std::size_t>(rings, 2);
  const auto base = static_cast<std::uint32_t>(mesh.vertices.size());

  // Parallel-transported frame along the path.
  Vec3 normal = any_perpendicular(path[1] - path[0]);
  std::size_t seg = 0;
  Vec3 tangent = (path[1] - path[0]).normalized();
  std::vector<Vec3> centres, tangents;
  for (std::size_t r = 0; r < rings; ++r) {
    const double s = total * static_cast<double>(r) / static_cast<double>(rings - 1);
    while (seg + 2 < path.size() && arc[seg + 1] < s) ++seg;
    const double len = arc[seg + 1] - arc[seg];
    const double t = len > 0.0 ? std::clamp((s - arc[seg]) / len, 0.0, 1.0) : 0.0;
    const Vec3 c = path[seg] + t * (path[seg + 1] - path[seg]);
    const Vec3 nt = (path[seg + 1] - path[seg]).normalized();
    normal = (normal - normal.dot(nt) * nt).normalized();
    tangent = nt;
    const Vec3 binormal = tangent.cross(normal);
    for (std::size_t k = 0; k < segs; ++k) {
      const double a = 2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(segs);
      mesh.vertices.push_back(c + radius * (std::cos(a) * normal + std::sin(a) * binormal));
    }
    centres.push_back(c);
    tangents.push_back(tangent);
  }
  const auto n = static_cast<std::uint32_t>(segs);
  for (std::uint32_t r = 0; r + 1 < rings; ++r)
    for (std::uint32_t k = 0; k < n; ++k) {
      const auto a = base + r * n + k, b = base + r * n + (k + 1) % n;
      const auto c = a + n, d = b + n;
      mesh.faces.push_back({a, b, d});
      mesh.faces.push_back({a, d, c});
    }
  const auto start = static_cast<std::uint32_t>(mesh.vertices.size());
  mesh.vertices.push_back(centres.front() - 0.6 * radius * tangents.front());
  const auto end = start + 1;
  mesh.vertices.push_back(centres.back() + 0.6 * radius * tangents.back());
  const auto last = base + static_cast<std::uint32_t>(rings - 1) * n;
  for (std::uint32_t k = 0; k < n; ++k) {
    mesh.faces.push_back({start, base + (k + 1) % n, base + k});
    mesh.faces.push_back({end, last + k, last + (k + 1) % n});
  }
}

inline Vec3 bend(const Vec3& dir, double max_deg, Rng& rng) {
  const Vec3 u = any_perpendicular(dir), w = dir.cross(u);
  const double phi = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double theta = rng.uniform(0.0, max_deg) * std::numbers::pi / 180.0;
  return (std::cos(theta) * dir + std::sin(theta) * (std::cos(phi) * u + std::sin(phi) * w)).normalized();
}

}  // namespace detail

inline RigAsset generate_synthetic_asset(const SyntheticRigSpec& spec, std::size_t index) {
  // Per-asset stream so assets are independent of generation order.
  Rng rng(spec.seed * 0x9E3779B97F4A7C15ULL + index + 1);
  const auto nj = spec.joints_min + rng.index(spec.joints_max - spec.joints_min + 1);
  const auto target_vertices = spec.vertices_min + rng.index(spec.vertices_max - spec.vertices_min + 1);
  const double radius = rng.uniform(spec.radius_min, spec.radius_max);

  Skeleton sk;
  std::vector<Vec3> heading;  // direction of the bone ending at each joint
  sk.joints.push_back({"joint_0", Vec3::Zero(), -1});
  heading.push_back(Vec3::UnitY());
  std::size_t tip = 0;
  while (sk.size() < nj) {
    std::size_t parent = tip;
    Vec3 dir = detail::bend(heading[tip], spec.max_bend_deg, rng);
    if (sk.size() > 1 && rng.uniform() < spec.branch_probability) {
      // Side branch from an interior joint, leaving at a wide angle.
      parent = 1 + rng.index(sk.size() - 1);
      dir = detail::bend(detail::any_perpendicular(heading[parent]), 30.0, rng);
    }
    const double len = rng.uniform(spec.bone_length_min, spec.bone_length_max);
    sk.joints.push_back({"joint_" + std::to_string(sk.size()), sk.joints[parent].position + len * dir,
                         static_cast<int>(parent)});
    heading.push_back(dir);
    if (parent == tip) tip = sk.size() - 1;
  }

  // One tube per chain: root to tip along first children, then each side
  // branch starting at its fork joint so the tubes overlap there.
  const auto kids = sk.children();
  std::vector<std::vector<Vec3>> chains;
  std::vector<std::pair<int, std::size_t>> starts{{-1, 0}};  // (fork, first joint)
  while (!starts.empty()) {
    auto [fork, j] = starts.back();
    starts.pop_back();
    std::vector<Vec3> path;
    if (fork >= 0) path.push_back(sk.joints[static_cast<std::size_t>(fork)].position);
    path.push_back(sk.joints[j].position);
    while (!kids[j].empty()) {
      for (std::size_t c = kids[j].size(); c-- > 1;) starts.push_back({static_cast<int>(j), kids[j][c]});
      j = kids[j][0];
      path.push_back(sk.joints[j].position);
    }
    if (path.size() >= 2) chains.push_back(std::move(path));
  }

  double total_len = 0.0;
  for (const auto& ch : chains)
    for (std::size_t i = 1; i < ch.size(); ++i) total_len += (ch[i] - ch[i - 1]).norm();
  Mesh mesh;
  for (const auto& ch : chains) {
    double len = 0.0;
    for (std::size_t i = 1; i < ch.size(); ++i) len += (ch[i] - ch[i - 1]).norm();
    const double share = static_cast<double>(target_vertices) * len / total_len;
    const auto rings = static_cast<std::size_t>(std::lround(share / static_cast<double>(spec.ring_segments)));
    detail::append_tube(mesh, ch, radius, std::max<std::size_t>(rings, 3), spec.ring_segments);
  }

  RigAsset asset;
  char name[32];
  std::snprintf(name, sizeof name, "tube_%03zu", index);
  asset.name = name;
  asset.mesh = std::move(mesh);
  asset.skeleton = std::move(sk);
  asset = normalize(std::move(asset));
  asset.weights = distance_softmax_weights(asset.mesh, asset.skeleton, spec.temperature);
  asset.validate();
  return asset;
}

inline std::vector<RigAsset> generate_synthetic(const SyntheticRigSpec& spec) {
  spec.validate();
  std::vector<RigAsset> out;
  out.reserve(spec.count);
  for (std::size_t i = 0; i < spec.count; ++i) out.push_back(generate_synthetic_asset(spec, i));
  return out;
}

}  // namespace skinnet
