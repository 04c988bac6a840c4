#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <set>

#include "skinnet/geometry.hpp"
#include "skinnet/voxel.hpp"

using namespace skinnet;

namespace {

void append_box(Mesh& m, const Vec3& lo, const Vec3& hi) {
  const auto base = static_cast<std::uint32_t>(m.vertices.size());
  for (int i = 0; i < 8; ++i)
    m.vertices.emplace_back(i & 1 ? hi.x() : lo.x(), i & 2 ? hi.y() : lo.y(), i & 4 ? hi.z() : lo.z());
  const std::uint32_t quads[6][4] = {{0, 2, 3, 1}, {4, 5, 7, 6}, {0, 1, 5, 4},
                                     {2, 6, 7, 3}, {0, 4, 6, 2}, {1, 3, 7, 5}};
  for (const auto& q : quads) {
    m.faces.push_back({base + q[0], base + q[1], base + q[2]});
    m.faces.push_back({base + q[0], base + q[2], base + q[3]});
  }
}

Mesh box(const Vec3& lo, const Vec3& hi) {
  Mesh m;
  append_box(m, lo, hi);
  return m;
}

Mesh uv_sphere(double r, int stacks, int slices) {
  Mesh m;
  m.vertices.emplace_back(0, 0, r);
  for (int i = 1; i < stacks; ++i) {
    const double th = std::numbers::pi * i / stacks;
    for (int j = 0; j < slices; ++j) {
      const double ph = 2 * std::numbers::pi * j / slices;
      m.vertices.emplace_back(r * std::sin(th) * std::cos(ph), r * std::sin(th) * std::sin(ph),
                              r * std::cos(th));
    }
  }
  m.vertices.emplace_back(0, 0, -r);
  const auto ring = [&](int i, int j) {
    return static_cast<std::uint32_t>(1 + (i - 1) * slices + (j % slices));
  };
  const auto south = static_cast<std::uint32_t>(m.vertices.size() - 1);
  for (int j = 0; j < slices; ++j) {
    m.faces.push_back({0, ring(1, j), ring(1, j + 1)});
    m.faces.push_back({south, ring(stacks - 1, j + 1), ring(stacks - 1, j)});
    for (int i = 1; i + 1 < stacks; ++i) {
      m.faces.push_back({ring(i, j), ring(i + 1, j), ring(i + 1, j + 1)});
      m.faces.push_back({ring(i, j), ring(i + 1, j + 1), ring(i, j + 1)});
    }
  }
  return m;
}

// U in the xy plane: two arms joined by a bar along the bottom.
Mesh u_shape() {
  Mesh m;
  append_box(m, {0.0, 0.0, 0.0}, {0.2, 1.0, 0.2});
  append_box(m, {0.8, 0.0, 0.0}, {1.0, 1.0, 0.2});
  append_box(m, {0.0, 0.0, 0.0}, {1.0, 0.2, 0.2});
  return m;
}

RigAsset cube_asset(double lo, double hi) {
  RigAsset a;
  a.name = "cube";
  a.mesh = box(Vec3::Constant(lo), Vec3::Constant(hi));
  a.skeleton.joints = {{"root", Vec3::Constant(lo), -1}, {"tip", Vec3::Constant(hi), 0}};
  return a;
}

}  // namespace

TEST(PointSegment, Examples) {
  EXPECT_NEAR(point_segment_distance({0.5, 0.1, 0}, {0, 0, 0}, {1, 0, 0}), 0.1, 1e-15);
  EXPECT_NEAR(point_segment_distance({2, 0, 0}, {0, 0, 0}, {1, 0, 0}), 1.0, 1e-15);
  EXPECT_NEAR(point_segment_distance({-1, 1, 0}, {0, 0, 0}, {1, 0, 0}), std::sqrt(2.0), 1e-15);
  EXPECT_NEAR(point_segment_distance({3, 4, 0}, {0, 0, 0}, {0, 0, 0}), 5.0, 1e-15);
}

TEST(PointSegment, DenseSamplingOracle) {
  Rng rng(99);
  for (int trial = 0; trial < 50; ++trial) {
    Vec3 p, a, b;
    for (int k = 0; k < 3; ++k) {
      p[k] = rng.uniform(-1, 1);
      a[k] = rng.uniform(-1, 1);
      b[k] = rng.uniform(-1, 1);
    }
    double best = std::numeric_limits<double>::infinity();
    const int samples = 100000;
    for (int s = 0; s <= samples; ++s) {
      const double t = static_cast<double>(s) / samples;
      best = std::min(best, (p - (a + t * (b - a))).norm());
    }
    EXPECT_NEAR(point_segment_distance(p, a, b), best, 1e-4);
  }
}

TEST(Normalize, CubeExample) {
  const auto n = normalize(cube_asset(0, 10));
  EXPECT_NEAR(n.normalization.scale, 0.2, 1e-15);
  EXPECT_NEAR(n.normalization.center.norm(), std::sqrt(75.0), 1e-12);
  for (const auto& v : n.mesh.vertices)
    for (int k = 0; k < 3; ++k) EXPECT_NEAR(std::abs(v[k]), 1.0, 1e-12);
  const double bone = (n.skeleton.joints[1].position - n.skeleton.joints[0].position).norm();
  EXPECT_NEAR(bone, 0.2 * std::sqrt(300.0), 1e-12);
}

TEST(Normalize, IdempotentAndComposes) {
  RigAsset a;
  a.mesh = uv_sphere(3.0, 6, 8);
  for (auto& v : a.mesh.vertices) v = Vec3(v.x() * 2 + 5, v.y() - 1, v.z() * 0.5);
  a.skeleton.joints = {{"r", Vec3(5, -1, 0), -1}};
  const auto once = normalize(a);
  const auto twice = normalize(once);
  for (std::size_t i = 0; i < once.mesh.vertices.size(); ++i)
    EXPECT_LT((once.mesh.vertices[i] - twice.mesh.vertices[i]).norm(), 1e-9);
  EXPECT_NEAR(twice.normalization.scale, once.normalization.scale, 1e-9);
  EXPECT_LT((twice.normalization.center - once.normalization.center).norm(), 1e-9);
  for (std::size_t i = 0; i < a.mesh.vertices.size(); ++i)
    EXPECT_LT((twice.normalization.apply(a.mesh.vertices[i]) - twice.mesh.vertices[i]).norm(), 1e-9);
}

TEST(Normalize, RejectsDegenerateBox) {
  RigAsset a;
  a.mesh.vertices = {Vec3(1, 1, 1), Vec3(1, 1, 1)};
  EXPECT_THROW(normalize(a), GeometryError);
}

TEST(RadiusNeighbours, ThresholdExample) {
  const std::vector<Vec3> pts{{0, 0, 0}, {0.05, 0, 0}, {0, 0.07, 0}};
  const auto e = radius_neighbours(pts, 0.06, 10, 1);
  std::set<std::pair<std::uint32_t, std::uint32_t>> got;
  for (const auto& x : e) got.insert({x.src, x.dst});
  EXPECT_EQ(got, (std::set<std::pair<std::uint32_t, std::uint32_t>>{{1, 0}, {0, 1}}));
}

TEST(RadiusNeighbours, CapsAndDeterminism) {
  std::vector<Vec3> pts{Vec3::Zero()};
  for (int i = 0; i < 15; ++i) {
    const double a = 2 * std::numbers::pi * i / 15;
    pts.emplace_back(0.04 * std::cos(a), 0.04 * std::sin(a), 0);
  }
  const auto e = radius_neighbours(pts, 0.06, 10, 5);
  std::vector<std::uint32_t> into_centre;
  for (const auto& x : e)
    if (x.dst == 0) into_centre.push_back(x.src);
  EXPECT_EQ(into_centre.size(), 10u);
  EXPECT_EQ(std::set<std::uint32_t>(into_centre.begin(), into_centre.end()).size(), 10u);
  for (auto s : into_centre) EXPECT_GE(s, 1u);

  const auto again = radius_neighbours(pts, 0.06, 10, 5);
  ASSERT_EQ(again.size(), e.size());
  for (std::size_t i = 0; i < e.size(); ++i) EXPECT_TRUE(e[i] == again[i]);

  std::vector<std::size_t> indeg(pts.size(), 0);
  for (const auto& x : e) {
    ++indeg[x.dst];
    EXPECT_LT((pts[x.src] - pts[x.dst]).norm(), 0.06);
  }
  for (auto d : indeg) EXPECT_LE(d, 10u);
  EXPECT_THROW(radius_neighbours(pts, 0.0, 10, 5), GeometryError);
  EXPECT_THROW(radius_neighbours(pts, 0.1, 0, 5), GeometryError);
}

TEST(FaceEdges, TriangleGivesSixDirectedEdges) {
  Mesh m;
  m.vertices = {Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(0, 1, 0)};
  m.faces = {{0, 1, 2}};
  EXPECT_EQ(face_edges(m).size(), 6u);
  EXPECT_EQ(face_edges(box(Vec3::Zero(), Vec3::Ones())).size(), 2u * 18u);
}

TEST(Voxelize, UnitCubeBounded) {
  const auto g = voxelize(box(Vec3::Zero(), Vec3::Ones()), 16);
  const auto interior = g.count(CellClass::interior);
  EXPECT_GT(interior, 0u);
  EXPECT_LT(interior, 16u * 16u * 16u);
  EXPECT_GT(g.count(CellClass::exterior), 0u);
  EXPECT_EQ(interior_components(g), 1u);
  EXPECT_THROW(voxelize(box(Vec3::Zero(), Vec3::Ones()), 4), GeometryError);
}

TEST(Voxelize, SphereVolumeFraction) {
  const auto g = voxelize(uv_sphere(1.0, 48, 96), 64);
  // Cells spanned by the bounding box of the sphere.
  const double span = (2.0 / g.cell_size);
  const double box_cells = span * span * span;
  // Solid cells: interior plus half of the surface shell, which straddles the boundary.
  const double solid = static_cast<double>(g.count(CellClass::interior)) +
                       0.5 * static_cast<double>(g.count(CellClass::surface));
  EXPECT_NEAR(solid / box_cells, std::numbers::pi / 6.0, 0.15 * std::numbers::pi / 6.0);
  EXPECT_NEAR(g.count(CellClass::interior) / box_cells, std::numbers::pi / 6.0,
              0.15 * std::numbers::pi / 6.0);
}

TEST(Voxelize, DisjointBoxesAreTwoComponents) {
  Mesh m;
  append_box(m, {0, 0, 0}, {0.4, 0.4, 0.4});
  append_box(m, {0.6, 0.6, 0.6}, {1, 1, 1});
  EXPECT_EQ(interior_components(voxelize(m, 32)), 2u);
}

TEST(Geodesic, SameCellWithinOneDiagonal) {
  const auto g = voxelize(box(Vec3::Zero(), Vec3::Ones()), 32);
  const Vec3 p(0.5, 0.5, 1.0);
  EXPECT_LE(geodesic_distance(g, p, p).distance, g.cell_diagonal() + 1e-12);
}

TEST(Geodesic, ConvexBoxMatchesEuclidean) {
  const auto g = voxelize(box(Vec3::Zero(), Vec3(1.0, 0.6, 0.4)), 64);
  Rng rng(12);
  for (int t = 0; t < 30; ++t) {
    // Vertex on a random face of the box, joint strictly inside.
    Vec3 v(rng.uniform(0, 1), rng.uniform(0, 0.6), rng.uniform(0, 0.4));
    const auto axis = rng.index(3);
    v[static_cast<int>(axis)] = rng.uniform(0, 1) < 0.5 ? 0.0 : Vec3(1.0, 0.6, 0.4)[static_cast<int>(axis)];
    const Vec3 j(rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.5), rng.uniform(0.1, 0.3));
    const auto r = geodesic_distance(g, v, j);
    EXPECT_FALSE(r.euclidean_fallback);
    EXPECT_NEAR(r.distance, (v - j).norm(), 2 * g.cell_diagonal());
  }
}

TEST(Geodesic, UShapeFollowsTheBend) {
  const auto g = voxelize(u_shape(), 64);
  const Vec3 vertex(0.1, 1.0, 0.1);  // top face of the left arm
  const Vec3 joint(0.9, 0.95, 0.1);  // inside the right arm
  const auto r = geodesic_distance(g, vertex, joint);
  ASSERT_FALSE(r.euclidean_fallback);
  const double euclid = (vertex - joint).norm();
  // Hand path: down the left arm to the inner corner (0.2,0.2), across, up the right arm.
  const Vec3 c1(0.2, 0.2, 0.1), c2(0.8, 0.2, 0.1);
  const double hand = (vertex - c1).norm() + (c2 - c1).norm() + (joint - c2).norm();
  EXPECT_GT(r.distance, 1.5 * euclid);
  EXPECT_NEAR(r.distance, hand, 0.1 * hand);
}

TEST(Geodesic, Symmetric) {
  const auto g = voxelize(u_shape(), 48);
  Rng rng(3);
  for (int t = 0; t < 10; ++t) {
    const Vec3 a(rng.uniform(0, 1), rng.uniform(0, 0.2), rng.uniform(0, 0.2));
    const Vec3 b(rng.uniform(0.8, 1), rng.uniform(0, 1), rng.uniform(0, 0.2));
    const auto ab = geodesic_between(g, a, SnapRule::non_exterior, b, SnapRule::non_exterior);
    const auto ba = geodesic_between(g, b, SnapRule::non_exterior, a, SnapRule::non_exterior);
    EXPECT_NEAR(ab.distance, ba.distance, 1e-9);
  }
}

TEST(Geodesic, TableMatchesPairwiseQueries) {
  const auto g = voxelize(u_shape(), 32);
  const std::vector<Vec3> verts{{0.1, 1.0, 0.1}, {1.0, 0.5, 0.1}, {0.5, 0.0, 0.1}};
  const std::vector<Vec3> joints{{0.1, 0.5, 0.1}, {0.9, 0.9, 0.1}};
  const GeodesicTable t(g, verts, joints);
  for (std::size_t v = 0; v < verts.size(); ++v)
    for (std::size_t j = 0; j < joints.size(); ++j)
      EXPECT_NEAR(t.at(v, j), geodesic_distance(g, verts[v], joints[j]).distance, 1e-12);
  EXPECT_EQ(t.fallback_count(), 0u);
  const auto e = GeodesicTable::euclidean(verts, joints);
  EXPECT_NEAR(e.at(0, 1), (verts[0] - joints[1]).norm(), 1e-15);
}
