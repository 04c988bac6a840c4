#pragma once

// SkinningNet: mesh and skeleton streams, the mesh-skeleton fusion layer,
// global shape descriptors and the multi-neighbourhood skinning head.

#include <algorithm>
#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "skinnet/binding.hpp"
#include "skinnet/graph.hpp"
#include "skinnet/magc.hpp"
#include "skinnet/nn.hpp"

namespace skinnet {

enum class GlobalPool { max, mean };

struct SkinningNetConfig {
  std::size_t k = 5;
  std::vector<std::size_t> mesh_input{64, 128};
  std::vector<std::size_t> mesh_blocks{128, 256, 512};
  std::vector<std::size_t> skel_input{64};
  std::vector<std::size_t> skel_blocks{128, 256, 512};
  std::size_t mesh_skel_width = 512;
  std::size_t global_mesh_width = 256;
  std::size_t global_skel_width = 256;
  std::vector<std::size_t> skin_blocks{256, 128, 64};
  std::vector<std::size_t> head{64, 32};  // followed by a k-wide output layer
  double head_dropout = 0.5;

  bool use_global_shape = true;
  bool use_residual = true;
  bool use_munegc = true;
  GlobalPool global_pool = GlobalPool::max;
  BindingMode binding_mode = BindingMode::joint;
  DistanceMode distance_mode = DistanceMode::geodesic;
  std::vector<Aggregator> aggregators{Aggregator::max, Aggregator::min, Aggregator::mean,
                                      Aggregator::std};
  std::vector<Scaler> scalers{Scaler::identity, Scaler::amplification, Scaler::attenuation};
  EdgeFunction edge_fn = EdgeFunction::concat_offset;

  // Graph construction.
  double radius = 0.06;
  std::size_t max_radius_neighbours = 10;
  int voxel_resolution = 64;

  // Every width multiplied by `factor` (at least 1); k is untouched.
  SkinningNetConfig scaled(double factor) const {
    auto s = [factor](std::size_t w) {
      return std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(w * factor)));
    };
    SkinningNetConfig c = *this;
    for (auto* v : {&c.mesh_input, &c.mesh_blocks, &c.skel_input, &c.skel_blocks, &c.skin_blocks,
                    &c.head})
      for (auto& w : *v) w = s(w);
    c.mesh_skel_width = s(mesh_skel_width);
    c.global_mesh_width = s(global_mesh_width);
    c.global_skel_width = s(global_skel_width);
    return c;
  }

  MagcConfig magc(std::size_t out_width) const {
    MagcConfig m;
    m.aggregators = aggregators;
    m.scalers = scalers;
    m.out_width = out_width;
    m.edge_fn = edge_fn;
    return m;
  }

  void validate() const {
    auto positive = [](const std::vector<std::size_t>& v, const char* what) {
      if (v.empty()) throw GraphError(std::string(what) + " must list at least one width");
      for (auto w : v)
        if (w == 0) throw GraphError(std::string(what) + " widths must be positive");
    };
    if (k == 0) throw GraphError("k must be positive");
    positive(mesh_input, "mesh input transform");
    positive(mesh_blocks, "mesh blocks");
    positive(skel_input, "skeleton input transform");
    positive(skel_blocks, "skeleton blocks");
    positive(skin_blocks, "skinning blocks");
    positive(head, "head");
    if (!mesh_skel_width || !global_mesh_width || !global_skel_width)
      throw GraphError("fusion widths must be positive");
    if (!(head_dropout >= 0.0 && head_dropout <= 1.0))
      throw GraphError("head dropout must lie in [0,1]");
    if (aggregators.empty() || scalers.empty())
      throw GraphError("at least one aggregator and one scaler are required");
    if (!(radius > 0.0) || max_radius_neighbours == 0)
      throw GraphError("radius neighbourhood settings must be positive");
    if (voxel_resolution < 8) throw GraphError("voxel resolution must be at least 8");
  }
};

inline nlohmann::json to_json(const SkinningNetConfig& c) {
  nlohmann::json j;
  j["k"] = c.k;
  j["mesh_input"] = c.mesh_input;
  j["mesh_blocks"] = c.mesh_blocks;
  j["skel_input"] = c.skel_input;
  j["skel_blocks"] = c.skel_blocks;
  j["mesh_skel_width"] = c.mesh_skel_width;
  j["global_mesh_width"] = c.global_mesh_width;
  j["global_skel_width"] = c.global_skel_width;
  j["skin_blocks"] = c.skin_blocks;
  j["head"] = c.head;
  j["head_dropout"] = c.head_dropout;
  j["use_global_shape"] = c.use_global_shape;
  j["use_residual"] = c.use_residual;
  j["use_munegc"] = c.use_munegc;
  j["global_pool"] = c.global_pool == GlobalPool::max ? "max" : "mean";
  j["binding_mode"] = to_string(c.binding_mode);
  j["distance_mode"] = to_string(c.distance_mode);
  for (auto a : c.aggregators) j["aggregators"].push_back(to_string(a));
  for (auto s : c.scalers) j["scalers"].push_back(to_string(s));
  j["edge_fn"] = to_string(c.edge_fn);
  j["radius"] = c.radius;
  j["max_radius_neighbours"] = c.max_radius_neighbours;
  j["voxel_resolution"] = c.voxel_resolution;
  return j;
}

inline SkinningNetConfig skinning_net_config_from_json(const nlohmann::json& j) {
  SkinningNetConfig c;
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  get("k", c.k);
  get("mesh_input", c.mesh_input);
  get("mesh_blocks", c.mesh_blocks);
  get("skel_input", c.skel_input);
  get("skel_blocks", c.skel_blocks);
  get("mesh_skel_width", c.mesh_skel_width);
  get("global_mesh_width", c.global_mesh_width);
  get("global_skel_width", c.global_skel_width);
  get("skin_blocks", c.skin_blocks);
  get("head", c.head);
  get("head_dropout", c.head_dropout);
  get("use_global_shape", c.use_global_shape);
  get("use_residual", c.use_residual);
  get("use_munegc", c.use_munegc);
  if (j.contains("global_pool")) {
    const auto p = j.at("global_pool").get<std::string>();
    if (p != "max" && p != "mean") throw GraphError("global_pool must be max or mean");
    c.global_pool = p == "max" ? GlobalPool::max : GlobalPool::mean;
  }
  if (j.contains("binding_mode"))
    c.binding_mode = binding_mode_from_string(j.at("binding_mode").get<std::string>());
  if (j.contains("distance_mode"))
    c.distance_mode = distance_mode_from_string(j.at("distance_mode").get<std::string>());
  if (j.contains("aggregators")) {
    c.aggregators.clear();
    for (const auto& a : j.at("aggregators")) c.aggregators.push_back(aggregator_from_string(a));
  }
  if (j.contains("scalers")) {
    c.scalers.clear();
    for (const auto& s : j.at("scalers")) c.scalers.push_back(scaler_from_string(s));
  }
  if (j.contains("edge_fn")) c.edge_fn = edge_function_from_string(j.at("edge_fn"));
  get("radius", c.radius);
  get("max_radius_neighbours", c.max_radius_neighbours);
  get("voxel_resolution", c.voxel_resolution);
  c.validate();
  return c;
}

// Everything a forward pass consumes for one asset.
struct ModelInput {
  Tensor mesh_features;      // [V, 3 + 8k]
  Tensor skeleton_features;  // [J, 3]
  Neighbourhoods mesh_topology;
  Neighbourhoods mesh_radius;
  Neighbourhoods skeleton_topology;
  Neighbourhoods binding;  // over V + J nodes
  std::vector<double> slot_mask;  // [V * k]

  std::size_t vertex_count() const { return mesh_features.rows(); }
  std::size_t joint_count() const { return skeleton_features.rows(); }
};

inline ModelInput make_model_input(const AssetGraphs& graphs, const NodeAttributes& attrs,
                                   const BindingTable& binding) {
  ModelInput in;
  in.mesh_features = attrs.mesh;
  in.skeleton_features = attrs.skeleton;
  in.mesh_topology = incoming(graphs.mesh, NeighbourhoodKind::mesh_topology);
  in.mesh_radius = incoming(graphs.mesh, NeighbourhoodKind::mesh_radius);
  in.skeleton_topology = incoming(graphs.skeleton, NeighbourhoodKind::skeleton_topology);
  in.binding = incoming(graphs.mesh_skel, NeighbourhoodKind::binding);
  in.slot_mask = binding.mask();
  return in;
}

// Two stacked MAGCs plus a shortcut; the shortcut is the identity when the
// widths agree and a learned linear map otherwise.
class ResidualMagc {
 public:
  ResidualMagc() = default;
  ResidualMagc(ParameterStore& store, const std::string& name, std::size_t in_width,
               const MagcConfig& cfg, bool residual, Rng& rng)
      : residual_(residual), in_width_(in_width), out_width_(cfg.out_width) {
    first_ = MagcLayer(store, name + ".magc0", in_width, cfg, rng);
    second_ = MagcLayer(store, name + ".magc1", cfg.out_width, cfg, rng);
    if (residual_ && in_width != cfg.out_width)
      projection_ = Linear(store, name + ".proj", in_width, cfg.out_width, rng, Activation::none);
  }

  Tensor forward(const ParameterStore& store, const Tensor& x, const Neighbourhoods& nb,
                 double d_train) const {
    Tensor h = second_.forward(store, first_.forward(store, x, nb, d_train), nb, d_train);
    if (!residual_) return h;
    return add(h, in_width_ == out_width_ ? x : projection_.forward(store, x));
  }

  bool projected() const { return residual_ && in_width_ != out_width_; }
  std::size_t out_width() const { return out_width_; }

 private:
  bool residual_ = true;
  std::size_t in_width_ = 0, out_width_ = 0;
  MagcLayer first_, second_;
  Linear projection_;
};

// One MAGC per neighbourhood kind, concatenated and fused by a linear layer.
class Munegc {
 public:
  Munegc() = default;
  Munegc(ParameterStore& store, const std::string& name, std::size_t in_width,
         const MagcConfig& cfg, Rng& rng)
      : out_width_(cfg.out_width) {
    topology_ = MagcLayer(store, name + ".topology", in_width, cfg, rng);
    radius_ = MagcLayer(store, name + ".radius", in_width, cfg, rng);
    fuse_ = Linear(store, name + ".fuse", 2 * cfg.out_width, cfg.out_width, rng, Activation::relu);
  }

  Tensor forward(const ParameterStore& store, const Tensor& x, const Neighbourhoods& topology,
                 double d_topology, const Neighbourhoods& radius, double d_radius) const {
    return fuse_.forward(store, concat_cols({topology_.forward(store, x, topology, d_topology),
                                             radius_.forward(store, x, radius, d_radius)}));
  }

  // Halves of the concatenation before fusion, exposed for tests.
  std::pair<Tensor, Tensor> branches(const ParameterStore& store, const Tensor& x,
                                     const Neighbourhoods& topology, double d_topology,
                                     const Neighbourhoods& radius, double d_radius) const {
    return {topology_.forward(store, x, topology, d_topology),
            radius_.forward(store, x, radius, d_radius)};
  }

  const MagcLayer& topology_layer() const { return topology_; }
  const MagcLayer& radius_layer() const { return radius_; }
  std::size_t out_width() const { return out_width_; }

 private:
  std::size_t out_width_ = 0;
  MagcLayer topology_, radius_;
  Linear fuse_;
};

struct SkinningPrediction {
  BindingTable binding;
  std::size_t k = 0;
  std::vector<double> probabilities;  // [V * k], zero on padded slots

  std::size_t vertex_count() const { return binding.rows.size(); }

  // Slot probabilities folded onto joints.
  SparseWeights joint_weights() const {
    SparseWeights w(vertex_count());
    for (std::size_t v = 0; v < vertex_count(); ++v) {
      for (std::size_t s = 0; s < k; ++s) {
        const auto& slot = binding.rows[v][s];
        if (!slot.valid) continue;
        w[v].push_back({slot.joint, probabilities[v * k + s]});
      }
      std::sort(w[v].begin(), w[v].end(),
                [](const JointWeight& a, const JointWeight& b) { return a.joint < b.joint; });
      std::vector<JointWeight> merged;
      for (const auto& jw : w[v]) {
        if (!merged.empty() && merged.back().joint == jw.joint)
          merged.back().weight += jw.weight;
        else
          merged.push_back(jw);
      }
      w[v] = std::move(merged);
    }
    return w;
  }
};

struct AuditRow {
  std::string section;
  std::string layer;
  std::string filters;
  std::vector<std::string> parameters;  // names of the parameters the block owns
};

class SkinningNet {
 public:
  SkinningNet(SkinningNetConfig config, DegreeStats stats, std::uint64_t seed)
      : config_(std::move(config)), stats_(std::move(stats)) {
    config_.validate();
    Rng rng(seed);
    build(rng);
  }

  const SkinningNetConfig& config() const { return config_; }
  const DegreeStats& degree_stats() const { return stats_; }
  ParameterStore& parameters() { return store_; }
  const ParameterStore& parameters() const { return store_; }

  // Slot logits before the masked softmax.
  Tensor logits(const ModelInput& in, bool training, Rng& rng) const {
    const auto nv = in.vertex_count(), nj = in.joint_count();
    if (nv == 0 || nj == 0) throw GraphError("forward needs a non-empty mesh and skeleton");
    if (in.mesh_features.cols() != mesh_attribute_width(config_.k))
      throw GraphError("mesh attributes have width " + std::to_string(in.mesh_features.cols()) +
                       ", model expects " + std::to_string(mesh_attribute_width(config_.k)));
    if (in.skeleton_features.cols() != kSkeletonAttributeWidth)
      throw GraphError("skeleton attributes must have width 3");
    if (in.mesh_topology.node_count() != nv || in.mesh_radius.node_count() != nv ||
        in.skeleton_topology.node_count() != nj || in.binding.node_count() != nv + nj)
      throw GraphError("neighbourhood tables do not match the attribute row counts");
    if (in.slot_mask.size() != nv * config_.k)
      throw GraphError("slot mask does not match vertex count and k");

    // Stage 2.
    Tensor xm = mesh_input_.forward(store_, in.mesh_features, training, rng);
    const double d_mesh = stats_.at(NeighbourhoodKind::mesh_topology);
    for (const auto& b : mesh_blocks_) xm = b.forward(store_, xm, in.mesh_topology, d_mesh);
    Tensor xs = skel_input_.forward(store_, in.skeleton_features, training, rng);
    const double d_skel = stats_.at(NeighbourhoodKind::skeleton_topology);
    for (const auto& l : skel_blocks_) xs = l.forward(store_, xs, in.skeleton_topology, d_skel);

    // Stage 3.
    Tensor fused = mesh_skel_forward(xm, xs, in.binding);
    Tensor h = fused;
    if (config_.use_global_shape) {
      auto [gm, gs] = global_shape(xm, xs);
      h = concat_cols({fused, broadcast_rows(gm, nv), broadcast_rows(gs, nv)});
    }

    // Stage 4.
    const double d_radius =
        config_.use_munegc ? stats_.at(NeighbourhoodKind::mesh_radius) : 0.0;
    for (std::size_t i = 0; i < config_.skin_blocks.size(); ++i) {
      if (config_.use_munegc)
        h = skin_munegc_[i].forward(store_, h, in.mesh_topology, d_mesh, in.mesh_radius, d_radius);
      else
        h = skin_magc_[i].forward(store_, h, in.mesh_topology, d_mesh);
    }
    return head_.forward(store_, h, training, rng);
  }

  Tensor forward(const ModelInput& in, bool training, Rng& rng) const {
    return masked_softmax(logits(in, training, rng), in.slot_mask);
  }

  // Mesh rows of the mesh-skeleton layer output. Vertex rows are tagged 0,
  // joint rows 1.
  Tensor mesh_skel_forward(const Tensor& mesh_feats, const Tensor& skel_feats,
                           const Neighbourhoods& binding, bool swap_tags = false) const {
    const auto nv = mesh_feats.rows(), nj = skel_feats.rows();
    if (binding.node_count() != nv + nj)
      throw GraphError("mesh-skeleton graph has " + std::to_string(binding.node_count()) +
                       " nodes, expected " + std::to_string(nv + nj));
    const double mesh_tag = swap_tags ? 1.0 : 0.0;
    Tensor tagged =
        concat_rows({concat_cols({mesh_feats, Tensor::full({nv, 1}, mesh_tag)}),
                     concat_cols({skel_feats, Tensor::full({nj, 1}, 1.0 - mesh_tag)})});
    Tensor out = mesh_skel_.forward(store_, tagged, binding,
                                    stats_.at(NeighbourhoodKind::binding));
    return slice_rows(out, 0, nv);
  }

  std::pair<Tensor, Tensor> global_shape(const Tensor& mesh_feats, const Tensor& skel_feats) const {
    auto pool = [&](const Tensor& x) {
      if (x.rows() == 0) throw GraphError("global shape of an empty graph");
      return config_.global_pool == GlobalPool::max ? max_pool_rows(x) : mean_pool_rows(x);
    };
    return {global_mesh_.forward(store_, pool(mesh_feats)),
            global_skel_.forward(store_, pool(skel_feats))};
  }

  // One row per architecture-table entry, with the parameters it owns.
  std::vector<AuditRow> audit() const {
    std::vector<AuditRow> rows;
    auto params_with = [&](const std::string& prefix) {
      std::vector<std::string> out;
      for (const auto& [name, _] : store_.entries())
        if (name.rfind(prefix, 0) == 0) out.push_back(name);
      return out;
    };
    auto join = [](const std::vector<std::size_t>& v) {
      std::ostringstream os;
      for (std::size_t i = 0; i < v.size(); ++i) os << (i ? ", " : "") << v[i];
      return os.str();
    };
    rows.push_back({"Mesh Network", "Input Transform", "MLP(" + join(config_.mesh_input) + ")",
                    params_with("mesh.input.")});
    for (std::size_t i = 0; i < config_.mesh_blocks.size(); ++i)
      rows.push_back({"Mesh Network", config_.use_residual ? "Residual MAGC" : "MAGC x2",
                      std::to_string(config_.mesh_blocks[i]),
                      params_with("mesh.block" + std::to_string(i) + ".")});
    rows.push_back({"Skeleton Network", "Input Transform", "MLP(" + join(config_.skel_input) + ")",
                    params_with("skel.input.")});
    for (std::size_t i = 0; i < config_.skel_blocks.size(); ++i)
      rows.push_back({"Skeleton Network", "MAGC", std::to_string(config_.skel_blocks[i]),
                      params_with("skel.magc" + std::to_string(i) + ".")});
    if (config_.use_global_shape) {
      rows.push_back({"Mesh - Skeleton Network", "Mesh Global Shape",
                      "MLP(" + std::to_string(config_.global_mesh_width) + ")",
                      params_with("global.mesh.")});
      rows.push_back({"Mesh - Skeleton Network", "Skeleton Global Shape",
                      "MLP(" + std::to_string(config_.global_skel_width) + ")",
                      params_with("global.skel.")});
    }
    rows.push_back({"Mesh - Skeleton Network", "Mesh-Skel MAGC",
                    std::to_string(config_.mesh_skel_width), params_with("meshskel.")});
    rows.push_back({"Mesh - Skeleton Network", "Concat",
                    config_.use_global_shape
                        ? std::to_string(config_.mesh_skel_width) + " + " +
                              std::to_string(config_.global_mesh_width) + " + " +
                              std::to_string(config_.global_skel_width)
                        : std::to_string(config_.mesh_skel_width),
                    {}});
    for (std::size_t i = 0; i < config_.skin_blocks.size(); ++i)
      rows.push_back({"Skinning Network", config_.use_munegc ? "MUNEGC" : "MAGC",
                      std::to_string(config_.skin_blocks[i]),
                      params_with("skin.block" + std::to_string(i) + ".")});
    std::vector<std::size_t> head = config_.head;
    rows.push_back({"Skinning Network", "MLP", "(" + join(head) + ", k)", params_with("head.")});
    return rows;
  }

  std::size_t concat_width() const {
    return config_.mesh_skel_width +
           (config_.use_global_shape ? config_.global_mesh_width + config_.global_skel_width : 0);
  }

 private:
  void build(Rng& rng) {
    const auto& c = config_;
    mesh_input_ = Mlp(store_, "mesh.input", mesh_attribute_width(c.k),
                      MlpSpec::uniform(c.mesh_input), rng);
    std::size_t w = c.mesh_input.back();
    for (std::size_t i = 0; i < c.mesh_blocks.size(); ++i) {
      mesh_blocks_.emplace_back(store_, "mesh.block" + std::to_string(i), w,
                                c.magc(c.mesh_blocks[i]), c.use_residual, rng);
      w = c.mesh_blocks[i];
    }
    const std::size_t mesh_out = w;

    skel_input_ = Mlp(store_, "skel.input", kSkeletonAttributeWidth,
                      MlpSpec::uniform(c.skel_input), rng);
    w = c.skel_input.back();
    for (std::size_t i = 0; i < c.skel_blocks.size(); ++i) {
      skel_blocks_.emplace_back(store_, "skel.magc" + std::to_string(i), w,
                                c.magc(c.skel_blocks[i]), rng);
      w = c.skel_blocks[i];
    }
    const std::size_t skel_out = w;
    if (mesh_out != skel_out)
      throw GraphError("mesh and skeleton streams must end at the same width (" +
                       std::to_string(mesh_out) + " vs " + std::to_string(skel_out) + ")");

    if (c.use_global_shape) {
      global_mesh_ = Linear(store_, "global.mesh", mesh_out, c.global_mesh_width, rng);
      global_skel_ = Linear(store_, "global.skel", skel_out, c.global_skel_width, rng);
    }
    mesh_skel_ = MagcLayer(store_, "meshskel.magc", mesh_out + 1, c.magc(c.mesh_skel_width), rng);

    w = concat_width();
    for (std::size_t i = 0; i < c.skin_blocks.size(); ++i) {
      const auto name = "skin.block" + std::to_string(i);
      if (c.use_munegc)
        skin_munegc_.emplace_back(store_, name, w, c.magc(c.skin_blocks[i]), rng);
      else
        skin_magc_.emplace_back(store_, name + ".magc", w, c.magc(c.skin_blocks[i]), rng);
      w = c.skin_blocks[i];
    }
    std::vector<std::size_t> head = c.head;
    head.push_back(c.k);
    head_ = Mlp(store_, "head", w, MlpSpec::uniform(head, /*linear_output=*/true, c.head_dropout),
                rng);
  }

  SkinningNetConfig config_;
  DegreeStats stats_;
  ParameterStore store_;
  Mlp mesh_input_, skel_input_;
  std::vector<ResidualMagc> mesh_blocks_;
  std::vector<MagcLayer> skel_blocks_;
  Linear global_mesh_, global_skel_;
  MagcLayer mesh_skel_;
  std::vector<Munegc> skin_munegc_;
  std::vector<MagcLayer> skin_magc_;
  Mlp head_;
};

inline SkinningPrediction predict(const SkinningNet& net, const ModelInput& in,
                                  const BindingTable& binding) {
  Rng unused(0);
  NoGradGuard no_grad;
  Tensor p = net.forward(in, /*training=*/false, unused);
  SkinningPrediction out;
  out.binding = binding;
  out.k = binding.k;
  out.probabilities = p.values();
  return out;
}

}  // namespace skinnet
