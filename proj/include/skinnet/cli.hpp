#pragma once

// Command-line front end: synth, bind, train, predict, deform, eval.

#include <algorithm>
#include <filesystem>
#include <iostream>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "skinnet/skinnet.hpp"

namespace skinnet::cli {

namespace fs = std::filesystem;

struct ModelFlags {
  std::size_t k = 5;
  std::string binding_mode = "joint";
  std::string distance = "geodesic";
  bool no_global_shape = false, no_residual = false, no_munegc = false;
  std::string global_pool = "max";
  std::vector<std::string> aggregators{"max", "min", "mean", "std"};
  std::vector<std::string> scalers{"identity", "amplification", "attenuation"};
  double width_scale = 1.0;
  double radius = 0.06;
  std::size_t max_neighbours = 10;
  int voxel_resolution = 64;
  double dropout = 0.5;

  void add_to(CLI::App& app) {
    app.add_option("--k", k, "joints per vertex")->check(CLI::PositiveNumber);
    app.add_option("--binding-mode", binding_mode, "joint|bone")
        ->check(CLI::IsMember({"joint", "bone"}));
    app.add_option("--distance", distance, "geodesic|euclidean")
        ->check(CLI::IsMember({"geodesic", "euclidean"}));
    app.add_flag("--no-global-shape", no_global_shape);
    app.add_flag("--no-residual", no_residual);
    app.add_flag("--no-munegc", no_munegc);
    app.add_option("--global-pool", global_pool, "max|mean")->check(CLI::IsMember({"max", "mean"}));
    app.add_option("--aggregators", aggregators, "subset of max,min,mean,std")->delimiter(',');
    app.add_option("--scalers", scalers, "subset of identity,amplification,attenuation")
        ->delimiter(',');
    app.add_option("--width-scale", width_scale, "multiplier on every layer width")
        ->check(CLI::PositiveNumber);
    app.add_option("--radius", radius, "radius neighbourhood size")->check(CLI::PositiveNumber);
    app.add_option("--max-neighbours", max_neighbours, "radius neighbours kept per vertex")
        ->check(CLI::PositiveNumber);
    app.add_option("--voxel-res", voxel_resolution, "voxel grid resolution")
        ->check(CLI::Range(8, 1024));
    app.add_option("--dropout", dropout, "head dropout")->check(CLI::Range(0.0, 1.0));
  }

  SkinningNetConfig config() const {
    SkinningNetConfig c;
    c.k = k;
    c.head_dropout = dropout;
    c = c.scaled(width_scale);
    c.binding_mode = binding_mode_from_string(binding_mode);
    c.distance_mode = distance_mode_from_string(distance);
    c.use_global_shape = !no_global_shape;
    c.use_residual = !no_residual;
    c.use_munegc = !no_munegc;
    c.global_pool = global_pool == "max" ? GlobalPool::max : GlobalPool::mean;
    c.aggregators.clear();
    for (const auto& a : aggregators) c.aggregators.push_back(aggregator_from_string(a));
    c.scalers.clear();
    for (const auto& s : scalers) c.scalers.push_back(scaler_from_string(s));
    c.radius = radius;
    c.max_radius_neighbours = max_neighbours;
    c.voxel_resolution = voxel_resolution;
    c.validate();
    return c;
  }
};

struct EvalFlags {
  std::size_t poses = 10;
  double range = 10.0;
};

// Defaults of every tunable, as one JSON document.
inline nlohmann::json default_config() {
  TrainConfig t;
  nlohmann::json j;
  j["train"] = to_json(t);
  j["eval"] = {{"poses", EvalFlags{}.poses},
               {"range_deg", EvalFlags{}.range},
               {"influence_threshold", kInfluenceThreshold}};
  j["jobs"] = 1;
  j["seed"] = 0;
  return j;
}

// Runs fn(i) for i in [0, n) on `jobs` threads; results land by index.
template <class Fn>
void parallel_for(std::size_t n, std::size_t jobs, Fn fn) {
  jobs = std::max<std::size_t>(1, std::min(jobs, n));
  if (jobs == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::mutex m;
  std::exception_ptr error;
  std::size_t next = 0;
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < jobs; ++t)
    pool.emplace_back([&] {
      for (;;) {
        std::size_t i;
        {
          std::lock_guard<std::mutex> lock(m);
          if (next >= n || error) return;
          i = next++;
        }
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(m);
          if (!error) error = std::current_exception();
        }
      }
    });
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

inline std::vector<TrainingRecord> precompute_all(const std::vector<RigAsset>& assets,
                                                  const PrecomputeOptions& o, std::size_t jobs) {
  std::vector<TrainingRecord> out(assets.size());
  parallel_for(assets.size(), jobs, [&](std::size_t i) { out[i] = precompute(assets[i], o); });
  return out;
}

// Predicted weights are written as a rig document (joints + skin) with the
// mesh path recorded alongside.
inline nlohmann::ordered_json prediction_json(const RigAsset& asset, const SkinningPrediction& pred,
                                              const std::string& mesh_path) {
  const auto w = pred.joint_weights();
  auto j = nlohmann::ordered_json::parse(serialize_rig_json(asset.skeleton, &w));
  j["mesh"] = mesh_path;
  return j;
}

// Weights of a rig file re-keyed onto `skeleton` by joint name, dense [V, J].
inline std::vector<double> dense_by_name(const Rig& rig, const Skeleton& skeleton, std::size_t nv,
                                         const std::string& what) {
  if (!rig.weights) throw ParseError(what + " has no skin weights");
  if (rig.weights->size() != nv)
    throw ParseError(what + " covers " + std::to_string(rig.weights->size()) + " vertices, mesh has " +
                     std::to_string(nv));
  const auto nj = skeleton.size();
  std::vector<double> dense(nv * nj, 0.0);
  for (std::size_t v = 0; v < nv; ++v)
    for (const auto& jw : (*rig.weights)[v]) {
      const auto& name = rig.skeleton.joints.at(jw.joint).name;
      const auto idx = skeleton.find(name);
      if (!idx) throw ParseError(what + ": joint '" + name + "' is not in the reference skeleton");
      dense[v * nj + *idx] += jw.weight;
    }
  return dense;
}

inline void renormalize_dense(std::vector<double>& w, std::size_t nj) {
  for (std::size_t v = 0; v * nj < w.size(); ++v) {
    double s = 0.0;
    for (std::size_t j = 0; j < nj; ++j) s += w[v * nj + j];
    if (s > 0.0)
      for (std::size_t j = 0; j < nj; ++j) w[v * nj + j] /= s;
  }
}

inline nlohmann::ordered_json report_json(const MetricReport& m) {
  return {{"precision", m.precision},      {"recall", m.recall},
          {"avg_l1", m.avg_l1},            {"avg_def", m.avg_deformation},
          {"max_def", m.max_deformation},  {"vertices", m.vertices},
          {"poses", m.poses}};
}

inline int run(std::vector<std::string> args, std::ostream& out, std::ostream& err) {
  CLI::App app{"skinning weight prediction with multi-aggregator graph convolutions", "skinnet"};
  app.require_subcommand(0, 1);
  app.fallthrough();
  std::uint64_t seed = 0;
  std::size_t jobs = 1;
  bool dump_config = false;
  app.add_option("--seed", seed, "seed for every random choice");
  app.add_option("--jobs", jobs, "worker threads for precompute and eval")->check(CLI::PositiveNumber);
  app.add_flag("--dump-config", dump_config, "print the default configuration as JSON");

  // synth
  auto* synth = app.add_subcommand("synth", "generate a synthetic rigged tube dataset");
  SyntheticRigSpec sspec;
  fs::path synth_out;
  std::size_t n_val = 0, n_test = 0;
  synth->add_option("--n", sspec.count, "number of assets")->check(CLI::PositiveNumber);
  synth->add_option("--joints-min", sspec.joints_min);
  synth->add_option("--joints-max", sspec.joints_max);
  synth->add_option("--verts-min", sspec.vertices_min);
  synth->add_option("--verts-max", sspec.vertices_max);
  synth->add_option("--branch-prob", sspec.branch_probability, "side-branch probability per joint");
  synth->add_option("--temperature", sspec.temperature, "GT softmax temperature");
  synth->add_option("--val", n_val, "validation assets (default n/8)");
  synth->add_option("--test", n_test, "test assets (default n/8)");
  synth->add_option("--out", synth_out, "output directory")->required();

  // bind
  auto* bind = app.add_subcommand("bind", "skin binding table of one asset as JSON");
  fs::path bind_mesh, bind_rig, bind_out;
  std::size_t bind_k = 5;
  std::string bind_mode = "joint";
  bind->add_option("--mesh", bind_mesh)->required()->check(CLI::ExistingFile);
  bind->add_option("--rig", bind_rig)->required()->check(CLI::ExistingFile);
  bind->add_option("--k", bind_k)->check(CLI::PositiveNumber);
  bind->add_option("--binding-mode", bind_mode)->check(CLI::IsMember({"joint", "bone"}));
  bind->add_option("--out", bind_out, "output file (stdout when omitted)");

  // train
  auto* trn = app.add_subcommand("train", "train on a dataset directory");
  fs::path data_dir, train_out, config_file;
  TrainConfig tcfg;
  ModelFlags mflags;
  trn->add_option("--data", data_dir)->required()->check(CLI::ExistingDirectory);
  trn->add_option("--out", train_out, "output directory")->required();
  trn->add_option("--config", config_file, "TrainConfig JSON; flags given explicitly override it")
      ->check(CLI::ExistingFile);
  trn->add_option("--epochs", tcfg.epochs)->check(CLI::PositiveNumber);
  trn->add_option("--batch", tcfg.batch_size)->check(CLI::PositiveNumber);
  trn->add_option("--lr", tcfg.learning_rate)->check(CLI::PositiveNumber);
  trn->add_option("--wd", tcfg.weight_decay)->check(CLI::NonNegativeNumber);
  trn->add_option("--checkpoint-every", tcfg.checkpoint_every, "epochs between snapshots");
  mflags.add_to(*trn);

  // predict
  auto* pred = app.add_subcommand("predict", "predict skinning weights for one asset");
  fs::path pred_model, pred_mesh, pred_rig, pred_out, pred_dense;
  pred->add_option("--model", pred_model)->required()->check(CLI::ExistingFile);
  pred->add_option("--mesh", pred_mesh)->required()->check(CLI::ExistingFile);
  pred->add_option("--rig", pred_rig)->required()->check(CLI::ExistingFile);
  pred->add_option("--out", pred_out)->required();
  pred->add_option("--dense", pred_dense, "also write a dense [V x J] float64 matrix");

  // deform
  auto* def = app.add_subcommand("deform", "pose a mesh with LBS and write OBJ files");
  fs::path def_mesh, def_rig, def_weights, def_out;
  EvalFlags def_flags;
  def->add_option("--mesh", def_mesh)->required()->check(CLI::ExistingFile);
  def->add_option("--rig", def_rig, "rig with skeleton (and weights unless --weights)")
      ->required()
      ->check(CLI::ExistingFile);
  def->add_option("--weights", def_weights, "prediction file to skin with")->check(CLI::ExistingFile);
  def->add_option("--poses", def_flags.poses)->check(CLI::PositiveNumber);
  def->add_option("--range", def_flags.range)->check(CLI::NonNegativeNumber);
  def->add_option("--out", def_out, "output directory")->required();

  // eval
  auto* ev = app.add_subcommand("eval", "compare predicted and ground-truth weights");
  std::vector<fs::path> ev_pred, ev_gt, ev_mesh;
  fs::path ev_out;
  EvalFlags ev_flags;
  ev->add_option("--pred", ev_pred, "prediction files")->required()->check(CLI::ExistingFile);
  ev->add_option("--gt", ev_gt, "ground-truth rig files, one per prediction")
      ->required()
      ->check(CLI::ExistingFile);
  ev->add_option("--mesh", ev_mesh, "mesh files overriding the paths stored in predictions")
      ->check(CLI::ExistingFile);
  ev->add_option("--poses", ev_flags.poses)->check(CLI::PositiveNumber);
  ev->add_option("--range", ev_flags.range)->check(CLI::NonNegativeNumber);
  ev->add_option("--out", ev_out, "report file (stdout when omitted)");

  try {
    std::reverse(args.begin(), args.end());
    app.parse(args);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

  try {
    if (dump_config) {
      out << default_config().dump(2) << "\n";
      return 0;
    }
    if (*synth) {
      sspec.seed = seed;
      sspec.validate();
      const auto assets = generate_synthetic(sspec);
      const std::size_t val = n_val ? n_val : sspec.count / 8;
      const std::size_t test = n_test ? n_test : sspec.count / 8;
      if (val + test >= sspec.count) throw TrainingError("validation + test leave no training assets");
      DatasetSplit split;
      for (std::size_t i = 0; i < assets.size(); ++i) {
        save_dataset_asset(synth_out, assets[i]);
        auto& dst = i < sspec.count - val - test ? split.train
                    : i < sspec.count - test     ? split.val
                                                 : split.test;
        dst.push_back(assets[i].name);
      }
      detail::write_file(synth_out / "split.json", to_json(split).dump(1) + "\n");
      out << "wrote " << assets.size() << " assets to " << synth_out.string() << "\n";
      return 0;
    }
    if (*bind) {
      const auto asset = normalize(load_asset(bind_mesh, bind_rig));
      const auto table = bind_asset(asset, bind_k, binding_mode_from_string(bind_mode));
      nlohmann::ordered_json j;
      j["k"] = bind_k;
      j["mode"] = bind_mode;
      auto& rows = j["vertices"] = nlohmann::ordered_json::array();
      for (std::size_t v = 0; v < table.rows.size(); ++v) {
        nlohmann::ordered_json row;
        row["vertex"] = v;
        for (const auto& s : table.rows[v]) {
          row["joints"].push_back(asset.skeleton.joints[s.joint].name);
          row["valid"].push_back(s.valid);
        }
        rows.push_back(std::move(row));
      }
      const auto text = j.dump(1) + "\n";
      if (bind_out.empty()) out << text;
      else detail::write_file(bind_out, text);
      return 0;
    }
    if (*trn) {
      TrainConfig cfg;
      if (!config_file.empty()) cfg = train_config_from_json(nlohmann::json::parse(detail::read_file(config_file)));
      // Explicit flags override the file.
      if (trn->count("--epochs")) cfg.epochs = tcfg.epochs;
      if (trn->count("--batch")) cfg.batch_size = tcfg.batch_size;
      if (trn->count("--lr")) cfg.learning_rate = tcfg.learning_rate;
      if (trn->count("--wd")) cfg.weight_decay = tcfg.weight_decay;
      if (trn->count("--checkpoint-every")) cfg.checkpoint_every = tcfg.checkpoint_every;
      bool model_flags = config_file.empty();
      for (const char* f : {"--k", "--binding-mode", "--distance", "--no-global-shape", "--no-residual",
                            "--no-munegc", "--global-pool", "--aggregators", "--scalers",
                            "--width-scale", "--radius", "--max-neighbours", "--voxel-res", "--dropout"})
        model_flags = model_flags || trn->count(f) > 0;
      if (model_flags) cfg.model = mflags.config();
      cfg.seed = seed;
      cfg.validate();

      const auto split = load_split(data_dir);
      auto load = [&](const std::vector<std::string>& stems) {
        std::vector<RigAsset> a;
        for (const auto& s : stems) a.push_back(load_dataset_asset(data_dir, s));
        return a;
      };
      auto opts = PrecomputeOptions::from(cfg.model, seed);
      opts.cache_dir = default_cache_dir(data_dir / ".skinnet_cache");
      const auto train_set = precompute_all(load(split.train), opts, jobs);
      const auto val_set = precompute_all(load(split.val), opts, jobs);

      fs::create_directories(train_out);
      detail::write_file(train_out / "train_config.json", to_json(cfg).dump(2) + "\n");
      TrainHooks hooks;
      hooks.on_epoch = [&](const EpochStats& e) {
        err << "epoch " << e.epoch << " train_kl " << e.train_kl << " val_kl " << e.val_kl << "\n";
      };
      hooks.on_checkpoint = [&](std::size_t epoch, const SkinningNet& net) {
        save_checkpoint(train_out / ("epoch_" + std::to_string(epoch) + ".ckpt"), net);
      };
      const auto result = train(train_set, val_set, cfg, hooks);
      detail::write_file(train_out / "best.ckpt", result.best_checkpoint);
      detail::write_file(train_out / "final.ckpt", result.final_checkpoint);
      detail::write_file(train_out / "loss.csv", loss_curve_csv(result.curve));
      out << "trained " << cfg.epochs << " epochs; best epoch " << result.best_epoch << "\n";
      return 0;
    }
    if (*pred) {
      const auto net = load_checkpoint(pred_model);
      const auto asset = load_asset(pred_mesh, pred_rig);
      const auto rec = precompute(asset, PrecomputeOptions::from(net.config(), seed));
      const auto p = predict(net, rec.input, rec.binding);
      detail::write_file(pred_out, prediction_json(asset, p, pred_mesh.string()).dump(1) + "\n");
      if (!pred_dense.empty()) {
        const auto dense = to_dense(p.joint_weights(), asset.skeleton.size());
        detail::write_file(pred_dense, std::string(reinterpret_cast<const char*>(dense.data()),
                                                   dense.size() * sizeof(double)));
      }
      return 0;
    }
    if (*def) {
      const auto mesh = load_obj(def_mesh);
      const auto rig = load_rig(def_rig);
      const auto weights = def_weights.empty()
                               ? dense_by_name(rig, rig.skeleton, mesh.vertices.size(), def_rig.string())
                               : dense_by_name(load_rig(def_weights), rig.skeleton, mesh.vertices.size(),
                                               def_weights.string());
      const auto poses = sample_poses(rig.skeleton, def_flags.poses, def_flags.range, seed);
      for (std::size_t i = 0; i < poses.size(); ++i) {
        Mesh posed = mesh;
        posed.vertices = lbs_deform(mesh.vertices, weights, forward_kinematics(rig.skeleton, poses[i]));
        char name[32];
        std::snprintf(name, sizeof name, "pose_%02zu.obj", i);
        save_obj(def_out / name, posed);
      }
      return 0;
    }
    if (*ev) {
      if (ev_pred.size() != ev_gt.size())
        throw ParseError("--pred and --gt must list the same number of files");
      if (!ev_mesh.empty() && ev_mesh.size() != ev_pred.size())
        throw ParseError("--mesh must list one file per prediction");
      std::vector<MetricReport> reports(ev_pred.size());
      std::vector<std::string> names(ev_pred.size());
      parallel_for(ev_pred.size(), jobs, [&](std::size_t i) {
        const auto pj = nlohmann::json::parse(detail::read_file(ev_pred[i]));
        fs::path mesh_path;
        if (!ev_mesh.empty()) mesh_path = ev_mesh[i];
        else if (pj.contains("mesh")) mesh_path = pj.at("mesh").get<std::string>();
        else throw ParseError(ev_pred[i].string() + " records no mesh; pass --mesh");
        auto asset = normalize(load_asset(mesh_path, ev_gt[i]));
        names[i] = asset.name;
        const auto nj = asset.skeleton.size(), nv = asset.mesh.vertices.size();
        auto pw = dense_by_name(load_rig(ev_pred[i]), asset.skeleton, nv, ev_pred[i].string());
        renormalize_dense(pw, nj);
        const auto gw = to_dense(*asset.weights, nj);
        const auto poses = sample_poses(asset.skeleton, ev_flags.poses, ev_flags.range, seed);
        reports[i] = evaluate_metrics(pw, gw, asset, poses);
      });
      MetricReport total;
      nlohmann::ordered_json per = nlohmann::ordered_json::array();
      for (std::size_t i = 0; i < reports.size(); ++i) {
        const auto& r = reports[i];
        total.precision += r.precision / static_cast<double>(reports.size());
        total.recall += r.recall / static_cast<double>(reports.size());
        total.avg_l1 += r.avg_l1 / static_cast<double>(reports.size());
        total.avg_deformation += r.avg_deformation / static_cast<double>(reports.size());
        total.max_deformation = std::max(total.max_deformation, r.max_deformation);
        total.vertices += r.vertices;
        total.poses = r.poses;
        auto j = report_json(r);
        j["asset"] = names[i];
        per.push_back(std::move(j));
      }
      auto j = report_json(total);
      j["per_asset"] = std::move(per);
      const auto text = j.dump(1) + "\n";
      if (ev_out.empty()) out << text;
      else detail::write_file(ev_out, text);
      return 0;
    }
    out << app.help();
    return 1;
  } catch (const std::exception& e) {
    std::string msg = e.what();
    std::replace(msg.begin(), msg.end(), '\n', ' ');
    err << "skinnet: error: " << msg << "\n";
    return 1;
  }
}

inline int run(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run(std::move(args), std::cout, std::cerr);
}

}  // namespace skinnet::cli
