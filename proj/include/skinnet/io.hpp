#pragma once

// Asset file formats.
//
//   Mesh: Wavefront OBJ subset. `v x y z` and `f a b c ...` (1-based,
//         polygons fan-triangulated, `a/b/c` index forms accepted, other
//         records ignored).
//   Rig (JSON): {"joints": [{"name", "position": [x,y,z], "parent": i|-1}],
//                "skin": [{"vertex": i, "weights": {"name": w, ...}}]}
//   Rig (line-oriented text): `joints <name> <x> <y> <z>`, `root <name>`,
//         `hier <parent> <child>`, `skin <vertex> (<joint> <w>)+`.

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "skinnet/geometry.hpp"

namespace skinnet {

class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::filesystem::path& path, const std::string& data) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ParseError("cannot write " + path.string());
  out << data;
}

// Shortest text that parses back to the same double.
inline std::string format_double(double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline double parse_double(const std::string& tok, const std::string& where) {
  try {
    std::size_t used = 0;
    const double v = std::stod(tok, &used);
    if (used != tok.size()) throw std::invalid_argument(tok);
    return v;
  } catch (const std::exception&) {
    throw ParseError(where + ": expected a number, got '" + tok + "'");
  }
}

inline long parse_int(const std::string& tok, const std::string& where) {
  try {
    std::size_t used = 0;
    const long v = std::stol(tok, &used);
    if (used != tok.size()) throw std::invalid_argument(tok);
    return v;
  } catch (const std::exception&) {
    throw ParseError(where + ": expected an integer, got '" + tok + "'");
  }
}

}  // namespace detail

inline Mesh parse_obj(const std::string& text) {
  Mesh mesh;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  std::vector<long> poly;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string where = "OBJ line " + std::to_string(lineno);
    std::istringstream ls(line);
    std::string tag;
    if (!(ls >> tag) || tag[0] == '#') continue;
    if (tag == "v") {
      std::string x, y, z;
      if (!(ls >> x >> y >> z)) throw ParseError(where + ": vertex needs three coordinates");
      mesh.vertices.emplace_back(detail::parse_double(x, where), detail::parse_double(y, where),
                                 detail::parse_double(z, where));
    } else if (tag == "f") {
      poly.clear();
      std::string tok;
      while (ls >> tok) {
        const long idx = detail::parse_int(tok.substr(0, tok.find('/')), where);
        // Negative indices count back from the latest vertex.
        const long resolved = idx < 0 ? static_cast<long>(mesh.vertices.size()) + idx + 1 : idx;
        if (resolved < 1 || resolved > static_cast<long>(mesh.vertices.size()))
          throw ParseError(where + ": face index " + tok + " out of range");
        poly.push_back(resolved - 1);
      }
      if (poly.size() < 3) throw ParseError(where + ": face needs at least three vertices");
      for (std::size_t k = 1; k + 1 < poly.size(); ++k)
        mesh.faces.push_back({static_cast<std::uint32_t>(poly[0]),
                              static_cast<std::uint32_t>(poly[k]),
                              static_cast<std::uint32_t>(poly[k + 1])});
    }
  }
  if (mesh.vertices.empty()) throw ParseError("OBJ contains no vertices");
  return mesh;
}

inline std::string serialize_obj(const Mesh& mesh) {
  std::string out;
  for (const auto& v : mesh.vertices)
    out += "v " + detail::format_double(v.x()) + " " + detail::format_double(v.y()) + " " +
           detail::format_double(v.z()) + "\n";
  for (const auto& f : mesh.faces)
    out += "f " + std::to_string(f[0] + 1) + " " + std::to_string(f[1] + 1) + " " +
           std::to_string(f[2] + 1) + "\n";
  return out;
}

inline Mesh load_obj(const std::filesystem::path& path) {
  try {
    return parse_obj(detail::read_file(path));
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

inline void save_obj(const std::filesystem::path& path, const Mesh& mesh) {
  detail::write_file(path, serialize_obj(mesh));
}

struct Rig {
  Skeleton skeleton;
  std::optional<SparseWeights> weights;  // sized to the largest vertex index seen
};

inline Rig parse_rig_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("rig JSON: ") + e.what());
  }
  Rig rig;
  if (!j.contains("joints") || !j["joints"].is_array())
    throw ParseError("rig JSON: missing \"joints\" array");
  std::size_t idx = 0;
  for (const auto& jj : j["joints"]) {
    const std::string where = "rig JSON joint #" + std::to_string(idx++);
    if (!jj.contains("name") || !jj.contains("position"))
      throw ParseError(where + ": needs \"name\" and \"position\"");
    Joint jt;
    jt.name = jj["name"].get<std::string>();
    const auto& p = jj["position"];
    if (!p.is_array() || p.size() != 3) throw ParseError(where + ": position must be [x,y,z]");
    jt.position = Vec3(p[0].get<double>(), p[1].get<double>(), p[2].get<double>());
    jt.parent = jj.value("parent", -1);
    if (jt.parent < -1) throw ParseError(where + ": parent must be an index or -1");
    rig.skeleton.joints.push_back(std::move(jt));
  }
  try {
    rig.skeleton.validate();
  } catch (const GeometryError& e) {
    throw ParseError(std::string("rig JSON: ") + e.what());
  }
  if (j.contains("skin")) {
    SparseWeights w;
    std::size_t entry = 0;
    for (const auto& s : j["skin"]) {
      const std::string where = "rig JSON skin entry #" + std::to_string(entry++);
      if (!s.contains("vertex") || !s.contains("weights"))
        throw ParseError(where + ": needs \"vertex\" and \"weights\"");
      const long v = s["vertex"].get<long>();
      if (v < 0) throw ParseError(where + ": negative vertex index");
      if (static_cast<std::size_t>(v) >= w.size()) w.resize(static_cast<std::size_t>(v) + 1);
      for (const auto& [name, val] : s["weights"].items()) {
        const auto jidx = rig.skeleton.find(name);
        if (!jidx) throw ParseError(where + ": unknown joint '" + name + "'");
        const double wt = val.get<double>();
        if (!(wt >= 0.0)) throw ParseError(where + ": negative weight for joint '" + name + "'");
        w[static_cast<std::size_t>(v)].push_back({*jidx, wt});
      }
    }
    rig.weights = std::move(w);
  }
  return rig;
}

inline std::string serialize_rig_json(const Skeleton& skeleton, const SparseWeights* weights) {
  nlohmann::ordered_json j;
  j["joints"] = nlohmann::ordered_json::array();
  for (const auto& jt : skeleton.joints) {
    nlohmann::ordered_json o;
    o["name"] = jt.name;
    o["position"] = {jt.position.x(), jt.position.y(), jt.position.z()};
    o["parent"] = jt.parent;
    j["joints"].push_back(o);
  }
  if (weights) {
    j["skin"] = nlohmann::ordered_json::array();
    for (std::size_t v = 0; v < weights->size(); ++v) {
      nlohmann::ordered_json o;
      o["vertex"] = v;
      o["weights"] = nlohmann::ordered_json::object();
      for (const auto& jw : (*weights)[v]) o["weights"][skeleton.joints[jw.joint].name] = jw.weight;
      j["skin"].push_back(o);
    }
  }
  return j.dump(1) + "\n";
}

inline Rig parse_rig_text(const std::string& text) {
  Rig rig;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  std::string root;
  std::vector<std::pair<std::string, std::string>> hier;
  std::vector<std::pair<std::size_t, std::string>> skin_lines;  // (line number, text)
  while (std::getline(in, line)) {
    ++lineno;
    const std::string where = "rig line " + std::to_string(lineno);
    std::istringstream ls(line);
    std::string tag;
    if (!(ls >> tag) || tag[0] == '#') continue;
    if (tag == "joints") {
      std::string name, x, y, z;
      if (!(ls >> name >> x >> y >> z)) throw ParseError(where + ": joints needs name x y z");
      Joint jt;
      jt.name = name;
      jt.position = Vec3(detail::parse_double(x, where), detail::parse_double(y, where),
                         detail::parse_double(z, where));
      rig.skeleton.joints.push_back(std::move(jt));
    } else if (tag == "root") {
      if (!(ls >> root)) throw ParseError(where + ": root needs a joint name");
    } else if (tag == "hier") {
      std::string p, c;
      if (!(ls >> p >> c)) throw ParseError(where + ": hier needs parent and child names");
      hier.emplace_back(p, c);
    } else if (tag == "skin") {
      skin_lines.emplace_back(lineno, line);
    } else {
      throw ParseError(where + ": unknown record '" + tag + "'");
    }
  }
  auto& sk = rig.skeleton;
  for (const auto& [p, c] : hier) {
    const auto pi = sk.find(p), ci = sk.find(c);
    if (!pi || !ci) throw ParseError("hier references unknown joint '" + (pi ? c : p) + "'");
    if (sk.joints[*ci].parent >= 0) throw ParseError("joint '" + c + "' has two parents");
    sk.joints[*ci].parent = static_cast<int>(*pi);
  }
  if (!root.empty()) {
    const auto r = sk.find(root);
    if (!r) throw ParseError("root references unknown joint '" + root + "'");
    if (sk.joints[*r].parent >= 0) throw ParseError("root joint '" + root + "' has a parent");
  }
  try {
    sk.validate();
  } catch (const GeometryError& e) {
    throw ParseError(std::string("rig: ") + e.what());
  }
  if (!skin_lines.empty()) {
    SparseWeights w;
    for (const auto& [ln, text_line] : skin_lines) {
      const std::string where = "rig line " + std::to_string(ln);
      std::istringstream ls(text_line);
      std::string tag, vtok;
      ls >> tag >> vtok;
      const long v = detail::parse_int(vtok, where);
      if (v < 0) throw ParseError(where + ": negative vertex index");
      if (static_cast<std::size_t>(v) >= w.size()) w.resize(static_cast<std::size_t>(v) + 1);
      std::string name, wtok;
      std::size_t pairs = 0;
      while (ls >> name) {
        if (!(ls >> wtok)) throw ParseError(where + ": joint '" + name + "' has no weight");
        const auto j = sk.find(name);
        if (!j) throw ParseError(where + ": unknown joint '" + name + "'");
        const double wt = detail::parse_double(wtok, where);
        if (!(wt >= 0.0)) throw ParseError(where + ": negative weight for joint '" + name + "'");
        w[static_cast<std::size_t>(v)].push_back({*j, wt});
        ++pairs;
      }
      if (pairs == 0) throw ParseError(where + ": skin line lists no joints");
    }
    rig.weights = std::move(w);
  }
  return rig;
}

inline Rig load_rig(const std::filesystem::path& path) {
  const auto text = detail::read_file(path);
  try {
    return path.extension() == ".json" ? parse_rig_json(text) : parse_rig_text(text);
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

inline void save_rig_json(const std::filesystem::path& path, const Skeleton& skeleton,
                          const SparseWeights* weights) {
  detail::write_file(path, serialize_rig_json(skeleton, weights));
}

// Combines a mesh and a rig into a validated asset. Ground-truth weights,
// when present, must cover every vertex and are renormalized to sum 1.
inline RigAsset make_asset(std::string name, Mesh mesh, Rig rig) {
  RigAsset a;
  a.name = std::move(name);
  a.mesh = std::move(mesh);
  a.skeleton = std::move(rig.skeleton);
  if (rig.weights) {
    auto w = std::move(*rig.weights);
    if (w.size() > a.mesh.vertices.size())
      throw ParseError("skin weights reference vertex " + std::to_string(w.size() - 1) +
                       " but the mesh has " + std::to_string(a.mesh.vertices.size()) +
                       " vertices");
    w.resize(a.mesh.vertices.size());
    for (std::size_t v = 0; v < w.size(); ++v)
      if (w[v].empty()) throw ParseError("no skin weights for vertex " + std::to_string(v));
    try {
      renormalize_weights(w);
    } catch (const GeometryError& e) {
      throw ParseError(e.what());
    }
    a.weights = std::move(w);
  }
  try {
    a.validate();
  } catch (const GeometryError& e) {
    throw ParseError(a.name + ": " + e.what());
  }
  return a;
}

inline RigAsset load_asset(const std::filesystem::path& mesh_path,
                           const std::filesystem::path& rig_path) {
  return make_asset(mesh_path.stem().string(), load_obj(mesh_path), load_rig(rig_path));
}

}  // namespace skinnet
