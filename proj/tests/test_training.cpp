#include <gtest/gtest.h>

#include <filesystem>

#include "skinnet/checkpoint.hpp"
#include "skinnet/io.hpp"
#include "skinnet/synthetic.hpp"
#include "skinnet/training.hpp"

using namespace skinnet;
namespace fs = std::filesystem;

namespace {

SyntheticRigSpec small_spec(std::size_t count, std::uint64_t seed = 7) {
  SyntheticRigSpec s;
  s.count = count;
  s.vertices_min = 120;
  s.vertices_max = 180;
  s.joints_max = 4;
  s.seed = seed;
  return s;
}

SkinningNetConfig quarter(double dropout = 0.5) {
  auto c = SkinningNetConfig{}.scaled(0.25);
  c.head_dropout = dropout;
  return c;
}

fs::path fresh_dir(const std::string& name) {
  const auto dir = fs::path(::testing::TempDir()) / "skinnet_training" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

double eval_kl(const SkinningNet& net, const TrainingRecord& r) { return evaluate_kl(net, {r}); }

}  // namespace

TEST(Synthetic, RegenerationIsBitIdentical) {
  SyntheticRigSpec spec;  // 32 assets, joints 3-6, 300-800 vertices, seed 7
  const auto a = generate_synthetic(spec), b = generate_synthetic(spec);
  ASSERT_EQ(a.size(), 32u);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].name, b[i].name);
    EXPECT_EQ(serialize_obj(a[i].mesh), serialize_obj(b[i].mesh));
    EXPECT_EQ(serialize_rig_json(a[i].skeleton, &*a[i].weights),
              serialize_rig_json(b[i].skeleton, &*b[i].weights));
    EXPECT_GE(a[i].mesh.vertices.size(), 300u);
    EXPECT_LE(a[i].mesh.vertices.size(), 800u);
    EXPECT_GE(a[i].skeleton.size(), 3u);
    EXPECT_LE(a[i].skeleton.size(), 6u);
  }
  // Asset i does not depend on how many assets are generated.
  auto one = spec;
  one.count = 5;
  EXPECT_EQ(serialize_obj(generate_synthetic(one)[4].mesh), serialize_obj(a[4].mesh));
}

TEST(Synthetic, EveryAssetSurvivesLoadValidation) {
  const auto dir = fresh_dir("valid");
  auto spec = cardinality_stress_spec(12, 3);
  for (const auto& a : generate_synthetic(spec)) {
    save_dataset_asset(dir, a);
    const auto back = load_dataset_asset(dir, a.name);
    ASSERT_TRUE(back.weights);
    for (const auto& row : *back.weights) {
      double s = 0;
      for (const auto& jw : row) s += jw.weight;
      EXPECT_NEAR(s, 1.0, 1e-6);
    }
    for (const auto& v : back.mesh.vertices)
      for (int k = 0; k < 3; ++k) EXPECT_LE(std::abs(v[k]), 1.0 + 1e-9);
  }
  EXPECT_EQ(dataset_stems(dir).size(), 12u);
}

TEST(Synthetic, MidTubeVertexSplitsEvenly) {
  Skeleton s;
  s.joints = {{"a", Vec3(0, 0, 0), -1}, {"b", Vec3(1, 0, 0), 0}, {"c", Vec3(2, 0, 0), 1}};
  Mesh m;
  m.vertices = {Vec3(1, 0.1, 0), Vec3(1, 0, -0.1), Vec3(0.2, 0.1, 0)};
  const auto w = distance_softmax_weights(m, s, 0.05);
  for (int v = 0; v < 2; ++v) {
    const auto dense = to_dense(w, 3);
    EXPECT_NEAR(dense[v * 3 + 0], 0.5, 1e-12);
    EXPECT_NEAR(dense[v * 3 + 1], 0.5, 1e-12);
  }
  // Off the midpoint the nearer bone dominates.
  const auto dense = to_dense(w, 3);
  EXPECT_GT(dense[6], 0.99);
}

TEST(Synthetic, SpecValidation) {
  SyntheticRigSpec s;
  s.joints_min = 1;
  EXPECT_THROW(generate_synthetic(s), GeometryError);
  s = {};
  s.max_bend_deg = 95;
  EXPECT_THROW(generate_synthetic(s), GeometryError);
}

TEST(Precompute, CacheHitReproducesRecordBitExactly) {
  const auto dir = fresh_dir("cache");
  const auto asset = generate_synthetic(small_spec(1))[0];
  auto opts = PrecomputeOptions::from(quarter(), 7);
  opts.cache_dir = dir;
  bool hit = true;
  const auto first = precompute(asset, opts, &hit);
  EXPECT_FALSE(hit);
  const auto second = precompute(asset, opts, &hit);
  EXPECT_TRUE(hit);
  EXPECT_EQ(serialize_record(first), serialize_record(second));
  EXPECT_EQ(first.input.mesh_features.values(), second.input.mesh_features.values());
  EXPECT_EQ(first.input.mesh_radius.sources, second.input.mesh_radius.sources);
  EXPECT_EQ(first.target, second.target);

  // Different options, different key.
  auto other = opts;
  other.radius = 0.08;
  precompute(asset, other, &hit);
  EXPECT_FALSE(hit);

  // A corrupt entry is recomputed.
  for (const auto& e : fs::directory_iterator(dir)) detail::write_file(e.path(), "garbage");
  const auto third = precompute(asset, opts, &hit);
  EXPECT_FALSE(hit);
  EXPECT_EQ(serialize_record(third), serialize_record(first));
}

TEST(Precompute, RecordSerializationRoundTrip) {
  const auto asset = generate_synthetic(small_spec(1, 11))[0];
  const auto rec = precompute(asset, PrecomputeOptions::from(quarter(), 1));
  const auto bytes = serialize_record(rec);
  const auto back = deserialize_record(bytes);
  EXPECT_EQ(serialize_record(back), bytes);
  EXPECT_EQ(back.binding.rows, rec.binding.rows);
  EXPECT_EQ(back.input.binding.offsets, rec.input.binding.offsets);
  EXPECT_THROW(deserialize_record(bytes.substr(0, bytes.size() / 2)), ParseError);
  EXPECT_THROW(deserialize_record(bytes + "!"), ParseError);
}

TEST(Precompute, EuclideanModeUsesStraightLineDistances) {
  const auto asset = generate_synthetic(small_spec(1, 5))[0];
  auto cfg = quarter();
  cfg.distance_mode = DistanceMode::euclidean;
  const auto rec = precompute(asset, PrecomputeOptions::from(cfg, 1));
  const auto norm = normalize(asset);
  const auto& f = rec.input.mesh_features;
  for (std::size_t v = 0; v < rec.input.vertex_count(); ++v) {
    const auto j = rec.binding.rows[v][0].joint;
    EXPECT_NEAR(f.at(v, 3), (norm.mesh.vertices[v] - norm.skeleton.joints[j].position).norm(), 1e-12);
  }
  // Geodesic paths can only be longer, up to voxel snapping.
  const auto geo = precompute(asset, PrecomputeOptions::from(quarter(), 1));
  EXPECT_EQ(geo.geodesic_fallbacks, 0u);
  for (std::size_t v = 0; v < geo.input.vertex_count(); ++v)
    EXPECT_GE(geo.input.mesh_features.at(v, 3), f.at(v, 3) - 2.0 * std::sqrt(3.0) * 2.0 / 62.0);
}

TEST(Precompute, RowsWithoutBoundGtMassAreMasked) {
  RigAsset a;
  a.name = "masked";
  a.mesh.vertices = {Vec3(0.5, 0.1, 0), Vec3(1.5, 0.1, 0)};
  a.skeleton.joints = {{"a", Vec3(0, 0, 0), -1}, {"b", Vec3(1, 0, 0), 0}, {"c", Vec3(2, 0, 0), 1}};
  // Vertex 0 is weighted entirely to the leaf joint, which is never bound.
  a.weights = SparseWeights{{{2, 1.0}}, {{0, 0.25}, {1, 0.75}}};
  const auto binding = bind_asset(a, 5);
  TrainingRecord rec;
  build_targets(a, binding, rec);
  EXPECT_EQ(rec.masked_rows, 1u);
  for (std::size_t s = 0; s < 5; ++s) EXPECT_EQ(rec.loss_mask[s], 0.0);
  EXPECT_EQ(rec.loss_mask[5], 1.0);
  EXPECT_EQ(rec.loss_mask[6], 1.0);
  EXPECT_DOUBLE_EQ(rec.target[5] + rec.target[6], 1.0);
  EXPECT_DOUBLE_EQ(rec.target[5 + 0], 0.75);  // slot 0 of vertex 1 is joint b
}

TEST(Precompute, BoneModeCreditsRepeatedJointOnce) {
  RigAsset a;
  a.mesh.vertices = {Vec3(0.1, 0.1, 0)};
  a.skeleton.joints = {{"r", Vec3(0, 0, 0), -1}, {"x", Vec3(1, 0, 0), 0}, {"y", Vec3(0, 1, 0), 0},
                       {"z", Vec3(2, 0, 0), 1}};
  a.weights = SparseWeights{{{0, 0.6}, {1, 0.4}}};
  const auto binding = bind_asset(a, 3, BindingMode::bone);
  TrainingRecord rec;
  build_targets(a, binding, rec);
  EXPECT_DOUBLE_EQ(rec.target[0], 0.6);
  EXPECT_DOUBLE_EQ(rec.target[1], 0.0);
  EXPECT_DOUBLE_EQ(rec.target[2], 0.4);
}

TEST(Precompute, DegreeStatsCoverEveryKind) {
  const auto assets = generate_synthetic(small_spec(2));
  std::vector<TrainingRecord> recs;
  for (const auto& a : assets) recs.push_back(precompute(a, PrecomputeOptions::from(quarter(), 0)));
  const auto s = degree_stats(recs);
  for (auto k : {NeighbourhoodKind::mesh_topology, NeighbourhoodKind::mesh_radius,
                 NeighbourhoodKind::skeleton_topology, NeighbourhoodKind::binding})
    EXPECT_GE(s.at(k), 1.0);
  EXPECT_THROW(degree_stats({}), TrainingError);
}

TEST(Training, OneStepReducesLossForMostSeeds) {
  const auto asset = generate_synthetic(small_spec(1, 2))[0];
  auto cfg = quarter(0.0);
  const auto rec = precompute(asset, PrecomputeOptions::from(cfg, 0));
  const Shape shape{rec.input.vertex_count(), cfg.k};
  int improved = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    SkinningNet net(cfg, degree_stats({rec}), seed);
    Rng rng(seed);
    const double before = eval_kl(net, rec);
    net.parameters().zero_grad();
    backward(kl_loss(Tensor(shape, rec.target), net.forward(rec.input, true, rng),
                     Tensor(shape, rec.loss_mask)));
    RAdam opt{RAdamOptions{}};
    opt.step(net.parameters());
    improved += eval_kl(net, rec) < before;
  }
  EXPECT_GE(improved, 19);
}

TEST(Training, SingleAssetOverfits) {
  const auto asset = generate_synthetic(small_spec(1, 4))[0];
  auto cfg = quarter(0.0);
  const auto rec = precompute(asset, PrecomputeOptions::from(cfg, 0));
  TrainConfig tc;
  tc.model = cfg;
  tc.epochs = 300;  // one asset, so one step per epoch
  tc.batch_size = 1;
  tc.learning_rate = 3e-3;
  tc.seed = 1;
  const auto result = train({rec}, {}, tc);
  EXPECT_LT(result.curve.back().train_kl, 0.01);
  EXPECT_LT(result.curve.back().train_kl, result.curve.front().train_kl);
}

TEST(Training, SameSeedGivesIdenticalRuns) {
  const auto assets = generate_synthetic(small_spec(5, 9));
  std::vector<TrainingRecord> recs;
  for (const auto& a : assets) recs.push_back(precompute(a, PrecomputeOptions::from(quarter(), 0)));
  const std::vector<TrainingRecord> tr(recs.begin(), recs.begin() + 4), va(recs.begin() + 4, recs.end());
  TrainConfig tc;
  tc.model = quarter();
  tc.epochs = 3;
  tc.learning_rate = 3e-3;
  tc.seed = 5;
  std::vector<std::size_t> seen;
  TrainHooks hooks;
  hooks.on_epoch = [&](const EpochStats& e) { seen.push_back(e.epoch); };
  const auto a = train(tr, va, tc, hooks), b = train(tr, va, tc);
  EXPECT_EQ(seen, (std::vector<std::size_t>{1, 2, 3}));
  ASSERT_EQ(a.curve.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(a.curve[i].train_kl, b.curve[i].train_kl);
    EXPECT_EQ(a.curve[i].dropout_kl, b.curve[i].dropout_kl);
    EXPECT_EQ(a.curve[i].val_kl, b.curve[i].val_kl);
  }
  EXPECT_EQ(a.final_checkpoint, b.final_checkpoint);
  EXPECT_EQ(a.best_checkpoint, b.best_checkpoint);
  EXPECT_GE(a.best_epoch, 1u);
  const auto csv = loss_curve_csv(a.curve);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "epoch,train_kl,val_kl");

  tc.seed = 6;
  EXPECT_NE(train(tr, va, tc).final_checkpoint, a.final_checkpoint);
}

TEST(Training, NonFiniteLossNamesTheBatch) {
  const auto asset = generate_synthetic(small_spec(1, 3))[0];
  auto rec = precompute(asset, PrecomputeOptions::from(quarter(), 0));
  rec.input.mesh_features.mutable_values()[0] = std::numeric_limits<double>::quiet_NaN();
  TrainConfig tc;
  tc.model = quarter();
  tc.epochs = 1;
  try {
    train({rec}, {}, tc);
    FAIL();
  } catch (const TrainingError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("epoch 1"), std::string::npos) << msg;
    EXPECT_NE(msg.find("batch 0"), std::string::npos) << msg;
    EXPECT_NE(msg.find(asset.name), std::string::npos) << msg;
  }
  EXPECT_THROW(train({}, {}, tc), TrainingError);
}

TEST(Training, ConfigJsonRoundTrip) {
  TrainConfig tc;
  tc.epochs = 7;
  tc.model = quarter();
  tc.model.aggregators = {Aggregator::max};
  const auto back = train_config_from_json(to_json(tc));
  EXPECT_EQ(to_json(back), to_json(tc));
  EXPECT_THROW(train_config_from_json({{"epochs", 0}}), TrainingError);
}

TEST(Dataset, DefaultSplitIsDeterministic) {
  std::vector<std::string> stems;
  for (int i = 19; i >= 0; --i) stems.push_back("a" + std::to_string(100 + i));
  const auto s = default_split(stems);
  EXPECT_EQ(s.train.size(), 16u);
  EXPECT_EQ(s.val.size(), 2u);
  EXPECT_EQ(s.test.size(), 2u);
  EXPECT_EQ(s.train.front(), "a100");
  EXPECT_EQ(default_split({"x", "y", "z"}).train.size(), 1u);
}

TEST(Dataset, CacheDirEnvironmentOverride) {
  ::unsetenv("SKINNET_CACHE_DIR");
  EXPECT_EQ(default_cache_dir("/data/.cache"), fs::path("/data/.cache"));
  ::setenv("SKINNET_CACHE_DIR", "/elsewhere", 1);
  EXPECT_EQ(default_cache_dir("/data/.cache"), fs::path("/elsewhere"));
  ::unsetenv("SKINNET_CACHE_DIR");
}
