#pragma once

// Dataset precomputation with an on-disk cache, and the training loop.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "skinnet/binding.hpp"
#include "skinnet/checkpoint.hpp"
#include "skinnet/io.hpp"
#include "skinnet/model.hpp"
#include "skinnet/optim.hpp"
#include "skinnet/voxel.hpp"

namespace skinnet {

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Everything one asset contributes to training or inference.
struct TrainingRecord {
  std::string name;
  BindingTable binding;
  ModelInput input;
  std::vector<double> target;     // [V * k], GT renormalized over the bound slots
  std::vector<double> loss_mask;  // slot mask, zeroed on rows with no GT mass
  std::size_t masked_rows = 0;
  std::size_t geodesic_fallbacks = 0;
};

struct PrecomputeOptions {
  std::size_t k = 5;
  BindingMode binding_mode = BindingMode::joint;
  DistanceMode distance_mode = DistanceMode::geodesic;
  double radius = 0.06;
  std::size_t max_radius_neighbours = 10;
  int voxel_resolution = 64;
  std::uint64_t seed = 0;
  std::optional<std::filesystem::path> cache_dir;  // no caching when empty

  static PrecomputeOptions from(const SkinningNetConfig& c, std::uint64_t seed) {
    PrecomputeOptions o;
    o.k = c.k;
    o.binding_mode = c.binding_mode;
    o.distance_mode = c.distance_mode;
    o.radius = c.radius;
    o.max_radius_neighbours = c.max_radius_neighbours;
    o.voxel_resolution = c.voxel_resolution;
    o.seed = seed;
    return o;
  }
};

// SKINNET_CACHE_DIR wins over the fallback.
inline std::filesystem::path default_cache_dir(const std::filesystem::path& fallback) {
  if (const char* env = std::getenv("SKINNET_CACHE_DIR"); env && *env) return env;
  return fallback;
}

inline std::uint64_t fnv1a(const std::string& data, std::uint64_t h = 1469598103934665603ULL) {
  for (unsigned char c : data) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

namespace detail {

inline constexpr std::uint32_t kRecordVersion = 2;

inline std::string record_key(const RigAsset& asset, const PrecomputeOptions& o) {
  std::ostringstream os;
  os << "v" << kRecordVersion << "|" << asset.name << "|" << o.k << "|" << to_string(o.binding_mode)
     << "|" << to_string(o.distance_mode) << "|" << format_double(o.radius) << "|"
     << o.max_radius_neighbours << "|" << o.voxel_resolution << "|" << o.seed << "|";
  std::string content = os.str() + serialize_obj(asset.mesh) +
                        serialize_rig_json(asset.skeleton, asset.weights ? &*asset.weights : nullptr);
  char hex[17];
  std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(fnv1a(content)));
  return hex;
}

inline void write_nb(ByteWriter& w, const Neighbourhoods& nb) {
  w.pod(static_cast<std::uint64_t>(nb.offsets.size()));
  for (auto o : nb.offsets) w.pod(static_cast<std::uint64_t>(o));
  w.pod(static_cast<std::uint64_t>(nb.sources.size()));
  w.bytes(nb.sources.data(), nb.sources.size() * sizeof(std::uint32_t));
}

inline Neighbourhoods read_nb(ByteReader& r) {
  Neighbourhoods nb;
  nb.offsets.resize(r.pod<std::uint64_t>());
  for (auto& o : nb.offsets) o = static_cast<std::size_t>(r.pod<std::uint64_t>());
  nb.sources.resize(r.pod<std::uint64_t>());
  for (auto& s : nb.sources) s = r.pod<std::uint32_t>();
  return nb;
}

inline void write_tensor(ByteWriter& w, const Tensor& t) {
  w.pod(static_cast<std::uint64_t>(t.rows()));
  w.pod(static_cast<std::uint64_t>(t.cols()));
  w.doubles(t.values());
}

inline Tensor read_tensor(ByteReader& r) {
  const auto rows = static_cast<std::size_t>(r.pod<std::uint64_t>());
  const auto cols = static_cast<std::size_t>(r.pod<std::uint64_t>());
  auto v = r.doubles();
  return Tensor({rows, cols}, std::move(v));
}

}  // namespace detail

inline std::string serialize_record(const TrainingRecord& rec) {
  detail::ByteWriter w;
  w.bytes("SKNTREC1", 8);
  w.string32(rec.name);
  w.pod(static_cast<std::uint64_t>(rec.binding.k));
  w.pod(static_cast<std::uint8_t>(rec.binding.mode == BindingMode::joint ? 0 : 1));
  w.pod(static_cast<std::uint64_t>(rec.binding.rows.size()));
  for (const auto& row : rec.binding.rows)
    for (const auto& s : row) {
      w.pod(static_cast<std::uint64_t>(s.joint));
      w.pod(static_cast<std::uint64_t>(s.bone));
      w.pod(static_cast<std::uint8_t>(s.valid));
    }
  detail::write_tensor(w, rec.input.mesh_features);
  detail::write_tensor(w, rec.input.skeleton_features);
  detail::write_nb(w, rec.input.mesh_topology);
  detail::write_nb(w, rec.input.mesh_radius);
  detail::write_nb(w, rec.input.skeleton_topology);
  detail::write_nb(w, rec.input.binding);
  w.doubles(rec.input.slot_mask);
  w.doubles(rec.target);
  w.doubles(rec.loss_mask);
  w.pod(static_cast<std::uint64_t>(rec.masked_rows));
  w.pod(static_cast<std::uint64_t>(rec.geodesic_fallbacks));
  return w.data();
}

inline TrainingRecord deserialize_record(const std::string& data, const std::string& what = "record") {
  detail::ByteReader r(data, what);
  if (r.raw(8) != "SKNTREC1") throw ParseError(what + ": not a training record");
  TrainingRecord rec;
  rec.name = r.string32();
  rec.binding.k = static_cast<std::size_t>(r.pod<std::uint64_t>());
  rec.binding.mode = r.pod<std::uint8_t>() == 0 ? BindingMode::joint : BindingMode::bone;
  rec.binding.rows.resize(r.pod<std::uint64_t>());
  for (auto& row : rec.binding.rows) {
    row.resize(rec.binding.k);
    for (auto& s : row) {
      s.joint = static_cast<std::size_t>(r.pod<std::uint64_t>());
      s.bone = static_cast<std::size_t>(r.pod<std::uint64_t>());
      s.valid = r.pod<std::uint8_t>() != 0;
    }
  }
  rec.input.mesh_features = detail::read_tensor(r);
  rec.input.skeleton_features = detail::read_tensor(r);
  rec.input.mesh_topology = detail::read_nb(r);
  rec.input.mesh_radius = detail::read_nb(r);
  rec.input.skeleton_topology = detail::read_nb(r);
  rec.input.binding = detail::read_nb(r);
  rec.input.slot_mask = r.doubles();
  rec.target = r.doubles();
  rec.loss_mask = r.doubles();
  rec.masked_rows = static_cast<std::size_t>(r.pod<std::uint64_t>());
  rec.geodesic_fallbacks = static_cast<std::size_t>(r.pod<std::uint64_t>());
  if (!r.done()) throw ParseError(what + ": trailing bytes");
  return rec;
}

// Gathers GT weights at the bound slots and renormalizes. Rows whose bound
// joints carry no GT mass are dropped from the loss.
inline void build_targets(const RigAsset& asset, const BindingTable& binding, TrainingRecord& rec) {
  const auto k = binding.k;
  const auto nv = binding.rows.size();
  rec.target.assign(nv * k, 0.0);
  rec.loss_mask = binding.mask();
  rec.masked_rows = 0;
  if (!asset.weights) {
    std::fill(rec.loss_mask.begin(), rec.loss_mask.end(), 0.0);
    rec.masked_rows = nv;
    return;
  }
  const auto dense = to_dense(*asset.weights, asset.skeleton.size());
  const auto nj = asset.skeleton.size();
  for (std::size_t v = 0; v < nv; ++v) {
    double mass = 0.0;
    for (std::size_t s = 0; s < k; ++s) {
      const auto& slot = binding.rows[v][s];
      if (!slot.valid) continue;
      // Bone mode may list a joint twice; its weight goes to the first slot.
      bool first = true;
      for (std::size_t t = 0; t < s; ++t)
        if (binding.rows[v][t].valid && binding.rows[v][t].joint == slot.joint) first = false;
      if (!first) continue;
      rec.target[v * k + s] = dense[v * nj + slot.joint];
      mass += rec.target[v * k + s];
    }
    if (mass <= 0.0) {
      for (std::size_t s = 0; s < k; ++s) rec.loss_mask[v * k + s] = 0.0;
      ++rec.masked_rows;
      continue;
    }
    for (std::size_t s = 0; s < k; ++s) rec.target[v * k + s] /= mass;
  }
}

inline TrainingRecord compute_record(const RigAsset& raw, const PrecomputeOptions& o) {
  try {
    const RigAsset asset = normalize(raw);
    TrainingRecord rec;
    rec.name = asset.name;
    rec.binding = bind_asset(asset, o.k, o.binding_mode);
    std::vector<Vec3> joints;
    for (const auto& j : asset.skeleton.joints) joints.push_back(j.position);
    const GeodesicTable dist =
        o.distance_mode == DistanceMode::euclidean
            ? GeodesicTable::euclidean(asset.mesh.vertices, joints)
            : GeodesicTable(voxelize(asset.mesh, o.voxel_resolution), asset.mesh.vertices, joints);
    rec.geodesic_fallbacks = dist.fallback_count();
    const auto graphs = build_graphs(asset, rec.binding, o.radius, o.max_radius_neighbours,
                                     o.seed ^ fnv1a(asset.name));
    rec.input = make_model_input(graphs, assemble_features(asset, rec.binding, dist), rec.binding);
    build_targets(asset, rec.binding, rec);
    return rec;
  } catch (const std::exception& e) {
    throw TrainingError("asset '" + raw.name + "': " + e.what());
  }
}

// Cached precompute. `hit`, when given, reports whether the cache served it.
inline TrainingRecord precompute(const RigAsset& asset, const PrecomputeOptions& o,
                                 bool* hit = nullptr) {
  if (hit) *hit = false;
  std::filesystem::path file;
  if (o.cache_dir) {
    file = *o.cache_dir / (detail::record_key(asset, o) + ".rec");
    if (std::filesystem::exists(file)) {
      try {
        auto rec = deserialize_record(detail::read_file(file), file.string());
        if (hit) *hit = true;
        return rec;
      } catch (const ParseError&) {
        // Corrupt entries are recomputed and overwritten.
      }
    }
  }
  auto rec = compute_record(asset, o);
  if (o.cache_dir) {
    const auto tmp = file.string() + ".tmp";
    detail::write_file(tmp, serialize_record(rec));
    std::filesystem::rename(tmp, file);
  }
  return rec;
}

// d_train per neighbourhood kind: mean in-degree (after self-loop
// insertion) over every node of the training records.
inline DegreeStats degree_stats(const std::vector<TrainingRecord>& records) {
  if (records.empty()) throw TrainingError("degree statistics need a non-empty training split");
  DegreeStats s;
  auto add = [&](NeighbourhoodKind kind, auto member) {
    double edges = 0.0, nodes = 0.0;
    for (const auto& r : records) {
      const Neighbourhoods& nb = r.input.*member;
      edges += static_cast<double>(nb.sources.size());
      nodes += static_cast<double>(nb.node_count());
    }
    s.d_train[kind] = edges / nodes;
  };
  add(NeighbourhoodKind::mesh_topology, &ModelInput::mesh_topology);
  add(NeighbourhoodKind::mesh_radius, &ModelInput::mesh_radius);
  add(NeighbourhoodKind::skeleton_topology, &ModelInput::skeleton_topology);
  add(NeighbourhoodKind::binding, &ModelInput::binding);
  return s;
}

struct TrainConfig {
  std::size_t epochs = 200;
  std::size_t batch_size = 4;
  double learning_rate = 1e-4;
  double weight_decay = 1e-4;
  std::uint64_t seed = 0;
  std::size_t checkpoint_every = 0;  // epochs; 0 keeps only best and final
  SkinningNetConfig model;

  void validate() const {
    if (epochs == 0 || batch_size == 0) throw TrainingError("epochs and batch size must be positive");
    if (!(learning_rate > 0.0) || !(weight_decay >= 0.0))
      throw TrainingError("learning rate must be positive and weight decay non-negative");
    model.validate();
  }
};

inline nlohmann::json to_json(const TrainConfig& c) {
  nlohmann::json j;
  j["epochs"] = c.epochs;
  j["batch_size"] = c.batch_size;
  j["learning_rate"] = c.learning_rate;
  j["weight_decay"] = c.weight_decay;
  j["seed"] = c.seed;
  j["checkpoint_every"] = c.checkpoint_every;
  j["model"] = to_json(c.model);
  return j;
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  get("epochs", c.epochs);
  get("batch_size", c.batch_size);
  get("learning_rate", c.learning_rate);
  get("weight_decay", c.weight_decay);
  get("seed", c.seed);
  get("checkpoint_every", c.checkpoint_every);
  if (j.contains("model")) c.model = skinning_net_config_from_json(j.at("model"));
  c.validate();
  return c;
}

struct EpochStats {
  std::size_t epoch = 0;  // 1-based
  double train_kl = 0.0;    // eval-mode KL over the training split after the epoch
  double dropout_kl = 0.0;  // mean training-mode (dropout on) loss seen during the epoch
  double val_kl = std::numeric_limits<double>::quiet_NaN();
};

struct TrainResult {
  std::vector<EpochStats> curve;
  std::size_t best_epoch = 0;
  std::string best_checkpoint;   // serialized
  std::string final_checkpoint;  // serialized
  double seconds = 0.0;
};

inline std::string loss_curve_csv(const std::vector<EpochStats>& curve) {
  std::string out = "epoch,train_kl,val_kl\n";
  for (const auto& e : curve)
    out += std::to_string(e.epoch) + "," + detail::format_double(e.train_kl) + "," +
           (std::isnan(e.val_kl) ? std::string() : detail::format_double(e.val_kl)) + "\n";
  return out;
}

// Mean KL over records with at least one valid row, evaluated with dropout off.
inline double evaluate_kl(const SkinningNet& net, const std::vector<TrainingRecord>& records) {
  double total = 0.0;
  std::size_t n = 0;
  Rng unused(0);
  NoGradGuard no_grad;
  for (const auto& r : records) {
    if (std::none_of(r.loss_mask.begin(), r.loss_mask.end(), [](double m) { return m != 0.0; }))
      continue;
    const auto k = r.binding.k;
    Tensor target({r.input.vertex_count(), k}, r.target), mask({r.input.vertex_count(), k}, r.loss_mask);
    total += kl_loss(target, net.forward(r.input, false, unused), mask).item();
    ++n;
  }
  return n ? total / static_cast<double>(n) : std::numeric_limits<double>::quiet_NaN();
}

struct TrainHooks {
  std::function<void(const EpochStats&)> on_epoch;
  std::function<void(std::size_t epoch, const SkinningNet&)> on_checkpoint;
};

// Mini-batches are gradient accumulation over `batch_size` assets in the
// shuffled order, each asset's loss weighted 1/batch. train_kl is measured in
// eval mode after the epoch; dropout makes the running minibatch loss too noisy
// to track convergence on narrow heads.
inline TrainResult train(const std::vector<TrainingRecord>& train_set,
                         const std::vector<TrainingRecord>& val_set, const TrainConfig& cfg,
                         const TrainHooks& hooks = {}) {
  cfg.validate();
  if (train_set.empty()) throw TrainingError("training split is empty");
  for (const auto& r : train_set)
    if (r.binding.k != cfg.model.k)
      throw TrainingError("record '" + r.name + "' was bound with k=" + std::to_string(r.binding.k) +
                          ", model expects k=" + std::to_string(cfg.model.k));
  const auto start = std::chrono::steady_clock::now();

  SkinningNet net(cfg.model, degree_stats(train_set), cfg.seed);
  RAdamOptions opt;
  opt.learning_rate = cfg.learning_rate;
  opt.weight_decay = cfg.weight_decay;
  RAdam radam(opt);
  Rng order_rng(cfg.seed ^ 0xA5A5A5A5ULL), dropout_rng(cfg.seed ^ 0x5A5A5A5AULL);

  std::vector<std::size_t> usable;
  for (std::size_t i = 0; i < train_set.size(); ++i)
    if (std::any_of(train_set[i].loss_mask.begin(), train_set[i].loss_mask.end(),
                    [](double m) { return m != 0.0; }))
      usable.push_back(i);
  if (usable.empty()) throw TrainingError("no training asset has a valid supervised row");

  TrainResult result;
  double best_val = std::numeric_limits<double>::infinity();
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    auto order = usable;
    order_rng.shuffle(order);
    double epoch_loss = 0.0;
    std::size_t batch_index = 0;
    for (std::size_t b = 0; b < order.size(); b += cfg.batch_size, ++batch_index) {
      const auto end = std::min(order.size(), b + cfg.batch_size);
      const double weight = 1.0 / static_cast<double>(end - b);
      net.parameters().zero_grad();
      std::string names;
      for (std::size_t i = b; i < end; ++i) {
        const auto& r = train_set[order[i]];
        names += (names.empty() ? "'" : ", '") + r.name + "'";
        const Shape shape{r.input.vertex_count(), r.binding.k};
        Tensor loss = kl_loss(Tensor(shape, r.target), net.forward(r.input, true, dropout_rng),
                              Tensor(shape, r.loss_mask));
        if (!std::isfinite(loss.item()))
          throw TrainingError("non-finite loss in epoch " + std::to_string(epoch) + ", batch " +
                              std::to_string(batch_index) + " (asset '" + r.name + "')");
        epoch_loss += loss.item();
        backward(scale(loss, weight));
      }
      try {
        radam.step(net.parameters());
      } catch (const TensorError& e) {
        throw TrainingError("epoch " + std::to_string(epoch) + ", batch " +
                            std::to_string(batch_index) + " (assets " + names + "): " + e.what());
      }
    }
    EpochStats st;
    st.epoch = epoch;
    st.dropout_kl = epoch_loss / static_cast<double>(order.size());
    st.train_kl = evaluate_kl(net, train_set);
    if (!val_set.empty()) st.val_kl = evaluate_kl(net, val_set);
    result.curve.push_back(st);

    // Best by validation loss, or by training loss without a validation split.
    const double score = std::isnan(st.val_kl) ? st.train_kl : st.val_kl;
    if (score < best_val) {
      best_val = score;
      result.best_epoch = epoch;
      result.best_checkpoint = serialize_checkpoint(net);
    }
    if (hooks.on_epoch) hooks.on_epoch(st);
    if (hooks.on_checkpoint && cfg.checkpoint_every && epoch % cfg.checkpoint_every == 0)
      hooks.on_checkpoint(epoch, net);
  }
  result.final_checkpoint = serialize_checkpoint(net);
  result.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

// A dataset directory holds <stem>.obj + <stem>.json pairs and optionally
// split.json ({"train": [...], "val": [...], "test": [...]} of stems).
// Without split.json the sorted stems are split 80/10/10.
struct DatasetSplit {
  std::vector<std::string> train, val, test;
};

inline nlohmann::json to_json(const DatasetSplit& s) {
  return {{"train", s.train}, {"val", s.val}, {"test", s.test}};
}

inline DatasetSplit default_split(std::vector<std::string> stems) {
  std::sort(stems.begin(), stems.end());
  DatasetSplit s;
  const auto n = stems.size();
  const auto n_val = n >= 10 ? n / 10 : (n >= 3 ? 1 : 0);
  const auto n_test = n_val;
  const auto n_train = n - n_val - n_test;
  s.train.assign(stems.begin(), stems.begin() + static_cast<long>(n_train));
  s.val.assign(stems.begin() + static_cast<long>(n_train),
               stems.begin() + static_cast<long>(n_train + n_val));
  s.test.assign(stems.begin() + static_cast<long>(n_train + n_val), stems.end());
  return s;
}

inline std::vector<std::string> dataset_stems(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw ParseError(dir.string() + " is not a directory");
  std::vector<std::string> stems;
  for (const auto& e : std::filesystem::directory_iterator(dir))
    if (e.path().extension() == ".obj") {
      auto rig = e.path();
      rig.replace_extension(".json");
      if (std::filesystem::exists(rig)) stems.push_back(e.path().stem().string());
    }
  std::sort(stems.begin(), stems.end());
  if (stems.empty()) throw ParseError(dir.string() + " holds no <name>.obj + <name>.json pairs");
  return stems;
}

inline DatasetSplit load_split(const std::filesystem::path& dir) {
  const auto stems = dataset_stems(dir);
  const auto file = dir / "split.json";
  if (!std::filesystem::exists(file)) return default_split(stems);
  const auto j = nlohmann::json::parse(detail::read_file(file));
  DatasetSplit s;
  for (const char* key : {"train", "val", "test"}) {
    auto& dst = std::string(key) == "train" ? s.train : std::string(key) == "val" ? s.val : s.test;
    if (j.contains(key)) dst = j.at(key).get<std::vector<std::string>>();
    for (const auto& stem : dst)
      if (!std::binary_search(stems.begin(), stems.end(), stem))
        throw ParseError(file.string() + ": unknown asset '" + stem + "'");
  }
  return s;
}

inline RigAsset load_dataset_asset(const std::filesystem::path& dir, const std::string& stem) {
  return load_asset(dir / (stem + ".obj"), dir / (stem + ".json"));
}

inline void save_dataset_asset(const std::filesystem::path& dir, const RigAsset& a) {
  save_obj(dir / (a.name + ".obj"), a.mesh);
  save_rig_json(dir / (a.name + ".json"), a.skeleton, a.weights ? &*a.weights : nullptr);
}

}  // namespace skinnet
