#pragma once

// Forward kinematics, linear blend skinning, random poses and the
// skinning-quality metrics.
//
// Joint rotations are Euler angles in degrees about the joint's local x, y
// and z axes, composed as R = Rx * Ry * Rz. Every joint, root included,
// rotates about its own rest position.

#include <Eigen/Geometry>

#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

#include "skinnet/geometry.hpp"
#include "skinnet/nn.hpp"

namespace skinnet {

using Mat4 = Eigen::Matrix4d;

struct Pose {
  std::vector<Vec3> euler_degrees;  // one per joint
  std::uint64_t seed = 0;

  static Pose identity(std::size_t joints) { return {std::vector<Vec3>(joints, Vec3::Zero()), 0}; }
};

struct SkinningTransforms {
  std::vector<Mat4> matrices;  // rest space -> posed space, one per joint
};

inline Eigen::Matrix3d euler_xyz(const Vec3& degrees) {
  const Vec3 r = degrees * (std::numbers::pi / 180.0);
  return (Eigen::AngleAxisd(r.x(), Vec3::UnitX()) * Eigen::AngleAxisd(r.y(), Vec3::UnitY()) *
          Eigen::AngleAxisd(r.z(), Vec3::UnitZ()))
      .toRotationMatrix();
}

inline Mat4 translation(const Vec3& t) {
  Mat4 m = Mat4::Identity();
  m.block<3, 1>(0, 3) = t;
  return m;
}

inline Mat4 rotation(const Eigen::Matrix3d& r) {
  Mat4 m = Mat4::Identity();
  m.block<3, 3>(0, 0) = r;
  return m;
}

// G_j = G_parent * T(p_j - p_parent) * R_j, G_root = T(p_root) * R_root and
// M_j = G_j * T(-p_j).
inline SkinningTransforms forward_kinematics(const Skeleton& skeleton, const Pose& pose) {
  skeleton.validate();
  if (pose.euler_degrees.size() != skeleton.size())
    throw GeometryError("pose has " + std::to_string(pose.euler_degrees.size()) +
                        " rotations for " + std::to_string(skeleton.size()) + " joints");
  std::vector<Mat4> global(skeleton.size());
  for (auto j : skeleton.topological_order()) {
    const auto& jt = skeleton.joints[j];
    const Mat4 r = rotation(euler_xyz(pose.euler_degrees[j]));
    if (jt.parent < 0) {
      global[j] = translation(jt.position) * r;
    } else {
      const auto p = static_cast<std::size_t>(jt.parent);
      global[j] = global[p] * translation(jt.position - skeleton.joints[p].position) * r;
    }
  }
  SkinningTransforms out;
  out.matrices.resize(skeleton.size());
  for (std::size_t j = 0; j < skeleton.size(); ++j)
    out.matrices[j] = global[j] * translation(-skeleton.joints[j].position);
  return out;
}

// Posed joint positions (the translation part of each G_j).
inline std::vector<Vec3> posed_joint_positions(const Skeleton& skeleton, const SkinningTransforms& t) {
  std::vector<Vec3> out(skeleton.size());
  for (std::size_t j = 0; j < skeleton.size(); ++j)
    out[j] = (t.matrices[j] * skeleton.joints[j].position.homogeneous()).head<3>();
  return out;
}

inline constexpr double kWeightSumTolerance = 1e-4;

// v' = sum_j w_vj M_j v. `weights` is dense [V, J] row-major.
inline std::vector<Vec3> lbs_deform(const std::vector<Vec3>& vertices, const std::vector<double>& weights,
                                    const SkinningTransforms& transforms) {
  const auto nj = transforms.matrices.size();
  if (weights.size() != vertices.size() * nj)
    throw GeometryError("weight matrix is not [vertices x joints]");
  std::vector<Vec3> out(vertices.size());
  for (std::size_t v = 0; v < vertices.size(); ++v) {
    double s = 0.0;
    bool any = false;
    for (std::size_t j = 0; j < nj; ++j) {
      const double w = weights[v * nj + j];
      if (w < 0.0) throw GeometryError("negative weight at vertex " + std::to_string(v));
      s += w;
      any = any || w != 0.0;
    }
    if (!any) throw GeometryError("vertex " + std::to_string(v) + " has all-zero weights");
    if (std::abs(s - 1.0) > kWeightSumTolerance)
      throw GeometryError("weights of vertex " + std::to_string(v) + " sum to " +
                          std::to_string(s) + ", not 1");
    Eigen::Vector4d acc = Eigen::Vector4d::Zero();
    const Eigen::Vector4d h = vertices[v].homogeneous();
    for (std::size_t j = 0; j < nj; ++j) {
      const double w = weights[v * nj + j];
      if (w != 0.0) acc += w * (transforms.matrices[j] * h);
    }
    out[v] = acc.head<3>();
  }
  return out;
}

// Each Euler angle i.i.d. uniform in [-range, +range] degrees.
inline std::vector<Pose> sample_poses(const Skeleton& skeleton, std::size_t n, double range_deg,
                                      std::uint64_t seed) {
  if (n < 1) throw GeometryError("need at least one pose");
  if (range_deg < 0.0) throw GeometryError("rotation range must be non-negative");
  Rng rng(seed);
  std::vector<Pose> poses(n);
  for (auto& p : poses) {
    p.seed = seed;
    p.euler_degrees.resize(skeleton.size());
    for (auto& e : p.euler_degrees)
      for (int a = 0; a < 3; ++a) e[a] = range_deg == 0.0 ? 0.0 : rng.uniform(-range_deg, range_deg);
  }
  return poses;
}

inline constexpr double kInfluenceThreshold = 1e-4;

struct MetricReport {
  double precision = 0.0;  // fractions in [0, 1]
  double recall = 0.0;
  double avg_l1 = 0.0;
  double avg_deformation = 0.0;
  double max_deformation = 0.0;
  std::size_t vertices = 0;
  std::size_t poses = 0;
};

// Influence precision/recall and L1 are averaged over vertices. Deformation
// is the distance between LBS results under predicted and ground-truth
// weights, averaged and maximised over all vertices and poses. Weights are
// dense [V, J] over the full skeleton.
inline MetricReport evaluate_metrics(const std::vector<double>& predicted,
                                     const std::vector<double>& ground_truth, const RigAsset& asset,
                                     const std::vector<Pose>& poses) {
  const auto nv = asset.mesh.vertices.size();
  const auto nj = asset.skeleton.size();
  if (predicted.size() != nv * nj || ground_truth.size() != nv * nj)
    throw GeometryError("weight matrices do not match the asset's vertex and joint counts");
  MetricReport r;
  r.vertices = nv;
  r.poses = poses.size();
  double prec = 0.0, rec = 0.0, l1 = 0.0;
  for (std::size_t v = 0; v < nv; ++v) {
    std::size_t np = 0, ng = 0, both = 0;
    for (std::size_t j = 0; j < nj; ++j) {
      const double p = predicted[v * nj + j], g = ground_truth[v * nj + j];
      const bool ip = p > kInfluenceThreshold, ig = g > kInfluenceThreshold;
      np += ip;
      ng += ig;
      both += ip && ig;
      l1 += std::abs(p - g);
    }
    prec += np ? static_cast<double>(both) / static_cast<double>(np) : (ng ? 0.0 : 1.0);
    rec += ng ? static_cast<double>(both) / static_cast<double>(ng) : 1.0;
  }
  r.precision = prec / static_cast<double>(nv);
  r.recall = rec / static_cast<double>(nv);
  r.avg_l1 = l1 / static_cast<double>(nv);

  double sum = 0.0;
  std::size_t count = 0;
  for (const auto& pose : poses) {
    const auto t = forward_kinematics(asset.skeleton, pose);
    const auto a = lbs_deform(asset.mesh.vertices, predicted, t);
    const auto b = lbs_deform(asset.mesh.vertices, ground_truth, t);
    for (std::size_t v = 0; v < nv; ++v) {
      const double d = (a[v] - b[v]).norm();
      sum += d;
      r.max_deformation = std::max(r.max_deformation, d);
      ++count;
    }
  }
  r.avg_deformation = count ? sum / static_cast<double>(count) : 0.0;
  return r;
}

}  // namespace skinnet
