#include <gtest/gtest.h>

#include <filesystem>

#include "skinnet/checkpoint.hpp"
#include "skinnet/io.hpp"
#include "support/fixtures.hpp"

using namespace skinnet;
namespace fs = std::filesystem;

namespace {

const char* kMinimalObj = "# tri\nv 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n";
const char* kTwoJointRig = R"({
  "joints": [
    {"name": "hip", "position": [0, 0, 0], "parent": -1},
    {"name": "knee", "position": [1, 0, 0], "parent": 0}
  ],
  "skin": [
    {"vertex": 0, "weights": {"hip": 2.0}},
    {"vertex": 1, "weights": {"hip": 0.25, "knee": 0.75}},
    {"vertex": 2, "weights": {"knee": 3.0, "hip": 1.0}}
  ]
})";

fs::path scratch(const std::string& name) {
  const auto dir = fs::path(::testing::TempDir()) / "skinnet_io";
  fs::create_directories(dir);
  return dir / name;
}

std::string expect_parse_error(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const ParseError& e) {
    return e.what();
  }
  ADD_FAILURE() << "no ParseError";
  return {};
}

}  // namespace

TEST(Obj, ParsesSubsetAndFanTriangulates) {
  const auto m = parse_obj("v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nvn 0 0 1\nf 1//1 2//1 3//1 4//1\nf -4 -3 -2\n");
  ASSERT_EQ(m.vertices.size(), 4u);
  ASSERT_EQ(m.faces.size(), 3u);
  EXPECT_EQ(m.faces[0], (std::array<std::uint32_t, 3>{0, 1, 2}));
  EXPECT_EQ(m.faces[1], (std::array<std::uint32_t, 3>{0, 2, 3}));
  EXPECT_EQ(m.faces[2], (std::array<std::uint32_t, 3>{0, 1, 2}));
}

TEST(Obj, Errors) {
  EXPECT_NE(expect_parse_error([] { parse_obj("v 0 0 0\nf 1 2 3\n"); }).find("line 2"), std::string::npos);
  expect_parse_error([] { parse_obj("v 0 0\n"); });
  expect_parse_error([] { parse_obj("v 0 0 0\nv 1 1 1\nf 1 2\n"); });
  expect_parse_error([] { parse_obj("v a b c\n"); });
  expect_parse_error([] { parse_obj("# nothing\n"); });
}

TEST(Obj, SerializeParseFixpoint) {
  Rng rng(3);
  Mesh m;
  for (int i = 0; i < 50; ++i)
    m.vertices.emplace_back(rng.uniform(-1, 1) / 3.0, rng.uniform(-1e-7, 1e-7), rng.uniform(-1e5, 1e5));
  for (std::uint32_t i = 0; i + 2 < 50; ++i) m.faces.push_back({i, i + 1, i + 2});
  const auto text = serialize_obj(m);
  const auto back = parse_obj(text);
  EXPECT_EQ(back.vertices, m.vertices);  // round-trip printing is exact
  EXPECT_EQ(back.faces, m.faces);
  EXPECT_EQ(serialize_obj(back), text);
}

TEST(RigJson, MinimalAssetHasOneBoneAndRenormalizedWeights) {
  const auto a = make_asset("tri", parse_obj(kMinimalObj), parse_rig_json(kTwoJointRig));
  EXPECT_EQ(a.skeleton.bones().size(), 1u);
  ASSERT_TRUE(a.weights);
  for (const auto& row : *a.weights) {
    double s = 0;
    for (const auto& jw : row) s += jw.weight;
    EXPECT_NEAR(s, 1.0, 1e-6);
  }
  const auto dense = to_dense(*a.weights, 2);
  EXPECT_DOUBLE_EQ(dense[0], 1.0);
  EXPECT_DOUBLE_EQ(dense[4], 0.25);
  EXPECT_DOUBLE_EQ(dense[5], 0.75);
}

TEST(RigJson, SerializeParseFixpoint) {
  const auto a = make_asset("tri", parse_obj(kMinimalObj), parse_rig_json(kTwoJointRig));
  const auto text = serialize_rig_json(a.skeleton, &*a.weights);
  const auto back = parse_rig_json(text);
  ASSERT_EQ(back.skeleton.joints.size(), 2u);
  for (std::size_t j = 0; j < 2; ++j) {
    EXPECT_EQ(back.skeleton.joints[j].name, a.skeleton.joints[j].name);
    EXPECT_EQ(back.skeleton.joints[j].position, a.skeleton.joints[j].position);
    EXPECT_EQ(back.skeleton.joints[j].parent, a.skeleton.joints[j].parent);
  }
  EXPECT_EQ(serialize_rig_json(back.skeleton, &*back.weights), text);
  EXPECT_EQ(serialize_rig_json(a.skeleton, nullptr).find("skin"), std::string::npos);
}

TEST(RigJson, Errors) {
  const auto unknown = expect_parse_error([] {
    parse_rig_json(R"({"joints":[{"name":"a","position":[0,0,0],"parent":-1}],
                       "skin":[{"vertex":0,"weights":{"ghost":1}}]})");
  });
  EXPECT_NE(unknown.find("ghost"), std::string::npos);
  EXPECT_NE(unknown.find("#0"), std::string::npos);
  expect_parse_error([] {  // cycle
    parse_rig_json(R"({"joints":[{"name":"a","position":[0,0,0],"parent":-1},
                                 {"name":"b","position":[0,0,0],"parent":2},
                                 {"name":"c","position":[0,0,0],"parent":1}]})");
  });
  expect_parse_error([] {  // two roots
    parse_rig_json(R"({"joints":[{"name":"a","position":[0,0,0],"parent":-1},
                                 {"name":"b","position":[0,0,0],"parent":-1}]})");
  });
  expect_parse_error([] {
    parse_rig_json(R"({"joints":[{"name":"a","position":[0,0,0],"parent":-1}],
                       "skin":[{"vertex":0,"weights":{"a":-0.5}}]})");
  });
  expect_parse_error([] { parse_rig_json(R"({"joints":[{"name":"a","position":[0,0],"parent":-1}]})"); });
  expect_parse_error([] { parse_rig_json("{not json"); });
  // Skin rows referencing vertices past the mesh.
  expect_parse_error([] {
    make_asset("x", parse_obj(kMinimalObj),
               parse_rig_json(R"({"joints":[{"name":"a","position":[0,0,0],"parent":-1},
                                            {"name":"b","position":[1,0,0],"parent":0}],
                                  "skin":[{"vertex":7,"weights":{"a":1}}]})"));
  });
}

TEST(RigText, ParsesLineFormat) {
  const auto rig = parse_rig_text(
      "joints hip 0 0 0\njoints knee 1 0 0\njoints ankle 2 0 0\nroot hip\n"
      "hier hip knee\nhier knee ankle\n"
      "skin 0 hip 1.0\nskin 1 hip 0.5 knee 0.5\nskin 2 knee 1\n");
  ASSERT_EQ(rig.skeleton.joints.size(), 3u);
  EXPECT_EQ(rig.skeleton.joints[2].parent, 1);
  ASSERT_TRUE(rig.weights);
  EXPECT_EQ((*rig.weights)[1].size(), 2u);
  const auto a = make_asset("tri", parse_obj(kMinimalObj), rig);
  EXPECT_EQ(a.skeleton.bones().size(), 2u);
}

TEST(RigText, UnknownJointNamesTheLine) {
  const auto msg = expect_parse_error([] {
    parse_rig_text("joints a 0 0 0\njoints b 1 0 0\nroot a\nhier a b\nskin 0 a 0.5 zed 0.5\n");
  });
  EXPECT_NE(msg.find("rig line 5"), std::string::npos) << msg;
  EXPECT_NE(msg.find("zed"), std::string::npos);
  expect_parse_error([] { parse_rig_text("joints a 0 0 0\nhier a a\n"); });
  expect_parse_error([] { parse_rig_text("joints a 0 0 0\nbogus\n"); });
  expect_parse_error([] { parse_rig_text("joints a 0 0 0\njoints b 0 0 0\n"); });
}

TEST(Files, LoadAssetFromDisk) {
  const auto obj = scratch("tri.obj"), rig = scratch("tri.json");
  detail::write_file(obj, kMinimalObj);
  detail::write_file(rig, kTwoJointRig);
  const auto a = load_asset(obj, rig);
  EXPECT_EQ(a.name, "tri");
  EXPECT_EQ(a.mesh.vertices.size(), 3u);
  EXPECT_THROW(load_obj(scratch("missing.obj")), std::exception);
}

TEST(Checkpoint, RoundTripReproducesPredictionsBitExactly) {
  using namespace skinnet::support;
  auto p = prepare(micro_asset(4));
  auto cfg = tiny_config();
  cfg.aggregators = {Aggregator::max, Aggregator::std};
  SkinningNet net(cfg, p.stats, 17);
  const auto path = scratch("net.ckpt");
  save_checkpoint(path, net);
  const auto loaded = load_checkpoint(path);
  EXPECT_EQ(to_json(loaded.config()), to_json(net.config()));
  EXPECT_EQ(loaded.degree_stats().d_train, net.degree_stats().d_train);
  const auto a = predict(net, p.input, p.binding), b = predict(loaded, p.input, p.binding);
  EXPECT_EQ(a.probabilities, b.probabilities);
  EXPECT_EQ(serialize_checkpoint(loaded), serialize_checkpoint(net));
}

TEST(Checkpoint, RejectsCorruptData) {
  using namespace skinnet::support;
  auto p = prepare(micro_asset(3));
  SkinningNet net(tiny_config(), p.stats, 1);
  const auto bytes = serialize_checkpoint(net);
  EXPECT_THROW(deserialize_checkpoint(bytes.substr(0, bytes.size() - 9)), ParseError);
  EXPECT_THROW(deserialize_checkpoint("NOTACKPT" + bytes.substr(8)), ParseError);
  EXPECT_THROW(deserialize_checkpoint(bytes + "x"), ParseError);
  EXPECT_THROW(deserialize_checkpoint(""), ParseError);
}
