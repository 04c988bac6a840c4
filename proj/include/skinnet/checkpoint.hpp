#pragma once

// Model checkpoints. Little-endian layout:
//
//   magic    8 bytes  "SKNTCKPT"
//   version  u32      1
//   config   u64 length + UTF-8 JSON (architecture config and d_train stats)
//   count    u64      number of tensors
//   tensor   u32 name length, name bytes, u32 ndim, ndim x u64 extents,
//            product(extents) x f64 values in row-major order

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "skinnet/io.hpp"
#include "skinnet/model.hpp"

namespace skinnet {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

inline constexpr char kCheckpointMagic[8] = {'S', 'K', 'N', 'T', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

class ByteWriter {
 public:
  template <class T>
  void pod(const T& v) {
    static_assert(std::is_trivially_copyable_v<T>);
    const auto* p = reinterpret_cast<const char*>(&v);
    buf_.append(p, sizeof(T));
  }
  void bytes(const void* p, std::size_t n) { buf_.append(static_cast<const char*>(p), n); }
  void string32(const std::string& s) {
    pod(static_cast<std::uint32_t>(s.size()));
    buf_ += s;
  }
  void string64(const std::string& s) {
    pod(static_cast<std::uint64_t>(s.size()));
    buf_ += s;
  }
  void doubles(const std::vector<double>& v) {
    pod(static_cast<std::uint64_t>(v.size()));
    bytes(v.data(), v.size() * sizeof(double));
  }
  const std::string& data() const { return buf_; }

 private:
  std::string buf_;
};

class ByteReader {
 public:
  ByteReader(const std::string& data, std::string what) : data_(data), what_(std::move(what)) {}

  template <class T>
  T pod() {
    T v;
    need(sizeof(T));
    std::memcpy(&v, data_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string raw(std::size_t n) {
    need(n);
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::string string32() { return raw(pod<std::uint32_t>()); }
  std::string string64() { return raw(pod<std::uint64_t>()); }
  std::vector<double> doubles() {
    const auto n = pod<std::uint64_t>();
    need(n * sizeof(double));
    std::vector<double> v(n);
    std::memcpy(v.data(), data_.data() + pos_, n * sizeof(double));
    pos_ += n * sizeof(double);
    return v;
  }
  bool done() const { return pos_ == data_.size(); }

 private:
  void need(std::size_t n) const {
    if (data_.size() - pos_ < n) throw ParseError(what_ + ": truncated file");
  }
  const std::string& data_;
  std::string what_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline nlohmann::json degree_stats_to_json(const DegreeStats& s) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [k, v] : s.d_train) j[to_string(k)] = v;
  return j;
}

inline DegreeStats degree_stats_from_json(const nlohmann::json& j) {
  DegreeStats s;
  s.source = DegreeStats::Source::loaded;
  for (const auto& [k, v] : j.items()) s.d_train[neighbourhood_kind_from_string(k)] = v.get<double>();
  return s;
}

inline std::string serialize_checkpoint(const SkinningNet& net) {
  detail::ByteWriter w;
  w.bytes(kCheckpointMagic, sizeof kCheckpointMagic);
  w.pod(kCheckpointVersion);
  nlohmann::json header;
  header["config"] = to_json(net.config());
  header["d_train"] = degree_stats_to_json(net.degree_stats());
  w.string64(header.dump());
  const auto& entries = net.parameters().entries();
  w.pod(static_cast<std::uint64_t>(entries.size()));
  for (const auto& [name, t] : entries) {
    w.string32(name);
    w.pod(static_cast<std::uint32_t>(t.shape().size()));
    for (auto e : t.shape()) w.pod(static_cast<std::uint64_t>(e));
    w.bytes(t.values().data(), t.values().size() * sizeof(double));
  }
  return w.data();
}

inline SkinningNet deserialize_checkpoint(const std::string& data, const std::string& what = "checkpoint") {
  detail::ByteReader r(data, what);
  if (r.raw(sizeof kCheckpointMagic) != std::string(kCheckpointMagic, sizeof kCheckpointMagic))
    throw ParseError(what + ": not a skinnet checkpoint");
  const auto version = r.pod<std::uint32_t>();
  if (version != kCheckpointVersion)
    throw ParseError(what + ": unsupported checkpoint version " + std::to_string(version));
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(r.string64());
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(what + ": bad header: " + e.what());
  }
  SkinningNet net(skinning_net_config_from_json(header.at("config")),
                  degree_stats_from_json(header.at("d_train")), 0);
  auto& store = net.parameters();
  const auto count = r.pod<std::uint64_t>();
  if (count != store.size())
    throw ParseError(what + ": holds " + std::to_string(count) + " tensors, architecture has " +
                     std::to_string(store.size()));
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto name = r.string32();
    if (!store.contains(name)) throw ParseError(what + ": unexpected tensor '" + name + "'");
    Tensor& t = store.get(name);
    const auto ndim = r.pod<std::uint32_t>();
    Shape shape(ndim);
    for (auto& e : shape) e = static_cast<std::size_t>(r.pod<std::uint64_t>());
    if (shape != t.shape()) throw ParseError(what + ": shape mismatch for '" + name + "'");
    const auto bytes = r.raw(t.numel() * sizeof(double));
    std::memcpy(t.mutable_values().data(), bytes.data(), bytes.size());
  }
  if (!r.done()) throw ParseError(what + ": trailing bytes");
  return net;
}

inline void save_checkpoint(const std::filesystem::path& path, const SkinningNet& net) {
  detail::write_file(path, serialize_checkpoint(net));
}

inline SkinningNet load_checkpoint(const std::filesystem::path& path) {
  return deserialize_checkpoint(detail::read_file(path), path.string());
}

}  // namespace skinnet
