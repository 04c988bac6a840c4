#pragma once

// Multi-Aggregator Graph Convolution.
//
// Each node receives one message per incoming edge, reduces the messages
// with every configured aggregator, multiplies each reduction by every
// configured degree scaler and feeds the concatenation through a fusion
// layer. Block order in the concatenation is aggregator-major,
// scaler-minor, aggregators in (max, min, mean, std) order and scalers in
// (identity, amplification, attenuation) order. Checkpoints depend on it.

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "skinnet/graph.hpp"
#include "skinnet/nn.hpp"

namespace skinnet {

enum class Aggregator { max, min, mean, std };
enum class Scaler { identity, amplification, attenuation };

// concat_offset: [x_dst, x_src - x_dst]; difference: x_src - x_dst.
enum class EdgeFunction { concat_offset, difference };

inline const char* to_string(Aggregator a) {
  switch (a) {
    case Aggregator::max: return "max";
    case Aggregator::min: return "min";
    case Aggregator::mean: return "mean";
    case Aggregator::std: return "std";
  }
  return "?";
}
inline const char* to_string(Scaler s) {
  switch (s) {
    case Scaler::identity: return "identity";
    case Scaler::amplification: return "amplification";
    case Scaler::attenuation: return "attenuation";
  }
  return "?";
}
inline const char* to_string(EdgeFunction f) {
  return f == EdgeFunction::concat_offset ? "concat_offset" : "difference";
}

inline Aggregator aggregator_from_string(const std::string& s) {
  for (auto a : {Aggregator::max, Aggregator::min, Aggregator::mean, Aggregator::std})
    if (s == to_string(a)) return a;
  throw GraphError("unknown aggregator '" + s + "'");
}
inline Scaler scaler_from_string(const std::string& s) {
  if (s == "iden") return Scaler::identity;
  if (s == "amp") return Scaler::amplification;
  if (s == "att") return Scaler::attenuation;
  for (auto a : {Scaler::identity, Scaler::amplification, Scaler::attenuation})
    if (s == to_string(a)) return a;
  throw GraphError("unknown scaler '" + s + "'");
}
inline EdgeFunction edge_function_from_string(const std::string& s) {
  if (s == "concat_offset") return EdgeFunction::concat_offset;
  if (s == "difference") return EdgeFunction::difference;
  throw GraphError("unknown edge function '" + s + "'");
}

inline std::size_t message_width(std::size_t feature_width, EdgeFunction fn) {
  return fn == EdgeFunction::concat_offset ? 2 * feature_width : feature_width;
}

inline std::vector<double> edge_message(std::span<const double> x_src,
                                        std::span<const double> x_dst,
                                        EdgeFunction fn = EdgeFunction::concat_offset) {
  if (x_src.size() != x_dst.size())
    throw GraphError("edge_message: feature widths differ (" +
                     std::to_string(x_src.size()) + " vs " +
                     std::to_string(x_dst.size()) + ")");
  const auto f = x_src.size();
  std::vector<double> m;
  m.reserve(message_width(f, fn));
  if (fn == EdgeFunction::concat_offset) m.insert(m.end(), x_dst.begin(), x_dst.end());
  for (std::size_t i = 0; i < f; ++i) m.push_back(x_src[i] - x_dst[i]);
  return m;
}

// Variances at or below this are rounding noise of identical messages; the
// deviation is reported as exactly zero and contributes no gradient.
inline constexpr double kStdVarianceFloor = 1e-20;

// Reduces M messages of width E along the message axis.
inline std::vector<double> aggregate(const std::vector<std::vector<double>>& messages,
                                     Aggregator which) {
  if (messages.empty()) throw GraphError("empty neighbourhood");
  const auto e = messages.front().size();
  for (const auto& m : messages)
    if (m.size() != e) throw GraphError("aggregate: ragged message widths");
  const double count = static_cast<double>(messages.size());
  std::vector<double> out(e);
  for (std::size_t d = 0; d < e; ++d) {
    double mx = messages[0][d], mn = messages[0][d], s = 0.0;
    for (const auto& m : messages) {
      mx = std::max(mx, m[d]);
      mn = std::min(mn, m[d]);
      s += m[d];
    }
    const double mean = s / count;
    switch (which) {
      case Aggregator::max: out[d] = mx; break;
      case Aggregator::min: out[d] = mn; break;
      case Aggregator::mean: out[d] = mean; break;
      case Aggregator::std: {
        double v = 0.0;
        for (const auto& m : messages) v += (m[d] - mean) * (m[d] - mean);
        v /= count;
        out[d] = v > kStdVarianceFloor ? std::sqrt(v) : 0.0;
        break;
      }
    }
  }
  return out;
}

// Logarithmic degree scaler. Both logs are shifted by one so a degree-1
// neighbourhood stays finite while degree == d_train still gives 1.
inline double scaler_value(std::size_t degree, double d_train, Scaler which) {
  if (degree < 1) throw GraphError("scaler: degree must be >= 1");
  if (!(d_train > 0.0)) throw GraphError("scaler: d_train must be positive");
  const double amp = std::log(static_cast<double>(degree) + 1.0) / std::log(d_train + 1.0);
  switch (which) {
    case Scaler::identity: return 1.0;
    case Scaler::amplification: return amp;
    case Scaler::attenuation: return 1.0 / amp;
  }
  return 1.0;
}

inline std::vector<double> scale(std::vector<double> aggregated, std::size_t degree,
                                 double d_train, Scaler which) {
  const double s = scaler_value(degree, d_train, which);
  for (auto& v : aggregated) v *= s;
  return aggregated;
}

struct MagcConfig {
  std::vector<Aggregator> aggregators{Aggregator::max, Aggregator::min, Aggregator::mean,
                                      Aggregator::std};
  std::vector<Scaler> scalers{Scaler::identity, Scaler::amplification,
                              Scaler::attenuation};
  std::size_t out_width = 0;
  EdgeFunction edge_fn = EdgeFunction::concat_offset;
  Activation activation = Activation::relu;

  void validate() const {
    if (aggregators.empty()) throw GraphError("MAGC needs at least one aggregator");
    if (scalers.empty()) throw GraphError("MAGC needs at least one scaler");
    if (out_width == 0) throw GraphError("MAGC output width must be positive");
  }

  std::size_t block_count() const { return aggregators.size() * scalers.size(); }
  std::size_t pre_mlp_width(std::size_t feature_width) const {
    return block_count() * message_width(feature_width, edge_fn);
  }
};

namespace detail {

// Which message dimensions an aggregation pass covers. `offset_half`
// restricts a concat_offset message to its x_src - x_dst half.
enum class MessagePart { full, offset_half };

inline Tensor aggregate_messages(const Tensor& x, const Neighbourhoods& nb, const MagcConfig& cfg,
                                 double d_train, MessagePart part) {
  cfg.validate();
  detail::require_rank2(x, "magc_aggregate");
  const auto n = x.rows(), f = x.cols();
  if (nb.node_count() != n)
    throw GraphError("magc_aggregate: neighbourhood table covers " +
                     std::to_string(nb.node_count()) + " nodes, features have " +
                     std::to_string(n));
  const bool offset = cfg.edge_fn == EdgeFunction::concat_offset;
  if (part == MessagePart::offset_half && !offset)
    throw GraphError("offset-half aggregation needs the concat_offset edge function");
  // Message dimensions [base, base + e) are produced.
  const std::size_t base = part == MessagePart::offset_half ? f : 0;
  const auto e = part == MessagePart::offset_half ? f : message_width(f, cfg.edge_fn);
  const auto na = cfg.aggregators.size(), ns = cfg.scalers.size();
  const auto width = na * ns * e;
  const auto& xv = x.values();

  std::vector<std::vector<double>> scal(n, std::vector<double>(ns));
  for (std::size_t i = 0; i < n; ++i) {
    if (nb.degree(i) == 0) throw GraphError("empty neighbourhood at node " + std::to_string(i));
    for (std::size_t s = 0; s < ns; ++s)
      scal[i][s] = scaler_value(nb.degree(i), d_train, cfg.scalers[s]);
  }

  // Message value of edge j->i in produced dimension d.
  auto msg = [&](std::size_t i, std::size_t j, std::size_t d) {
    d += base;
    if (offset) {
      if (d < f) return xv[i * f + d];
      return xv[j * f + (d - f)] - xv[i * f + (d - f)];
    }
    return xv[j * f + d] - xv[i * f + d];
  };

  std::vector<double> out(n * width);
  std::vector<std::uint32_t> argmax(n * e), argmin(n * e);
  std::vector<double> mean(n * e), stdev(n * e);
  std::vector<double> agg(na);
  for (std::size_t i = 0; i < n; ++i) {
    const auto b = nb.offsets[i], deg = nb.degree(i);
    const double cnt = static_cast<double>(deg);
    for (std::size_t d = 0; d < e; ++d) {
      double mx = msg(i, nb.sources[b], d), mn = mx, s = 0.0;
      std::uint32_t amx = 0, amn = 0;
      for (std::size_t q = 0; q < deg; ++q) {
        const double v = msg(i, nb.sources[b + q], d);
        if (v > mx) { mx = v; amx = static_cast<std::uint32_t>(q); }
        if (v < mn) { mn = v; amn = static_cast<std::uint32_t>(q); }
        s += v;
      }
      const double mu = s / cnt;
      double var = 0.0;
      for (std::size_t q = 0; q < deg; ++q) {
        const double dv = msg(i, nb.sources[b + q], d) - mu;
        var += dv * dv;
      }
      var /= cnt;
      const double sd = var > kStdVarianceFloor ? std::sqrt(var) : 0.0;
      argmax[i * e + d] = amx;
      argmin[i * e + d] = amn;
      mean[i * e + d] = mu;
      stdev[i * e + d] = sd;
      for (std::size_t a = 0; a < na; ++a) {
        switch (cfg.aggregators[a]) {
          case Aggregator::max: agg[a] = mx; break;
          case Aggregator::min: agg[a] = mn; break;
          case Aggregator::mean: agg[a] = mu; break;
          case Aggregator::std: agg[a] = sd; break;
        }
        for (std::size_t s2 = 0; s2 < ns; ++s2)
          out[i * width + (a * ns + s2) * e + d] = agg[a] * scal[i][s2];
      }
    }
  }

  auto px = x.node();
  return Tensor::from_op(
      "magc_aggregate", {n, width}, std::move(out), {x},
      [px, nb, cfg, n, f, e, na, ns, width, offset, base, scal = std::move(scal),
       argmax = std::move(argmax), argmin = std::move(argmin), mean = std::move(mean),
       stdev = std::move(stdev)](detail::Node& self) {
        const auto& xv = px->value;
        auto& gx = px->grad;
        // Pushes d(loss)/d(message j->i, dim d) into the features.
        auto push = [&](std::size_t i, std::size_t j, std::size_t d, double g) {
          d += base;
          if (offset) {
            if (d < f) {
              gx[i * f + d] += g;
            } else {
              gx[j * f + (d - f)] += g;
              gx[i * f + (d - f)] -= g;
            }
          } else {
            gx[j * f + d] += g;
            gx[i * f + d] -= g;
          }
        };
        auto msg = [&](std::size_t i, std::size_t j, std::size_t d) {
          d += base;
          if (offset) {
            if (d < f) return xv[i * f + d];
            return xv[j * f + (d - f)] - xv[i * f + (d - f)];
          }
          return xv[j * f + d] - xv[i * f + d];
        };
        std::vector<double> ga(na);
        for (std::size_t i = 0; i < n; ++i) {
          const auto b = nb.offsets[i], deg = nb.degree(i);
          const double cnt = static_cast<double>(deg);
          for (std::size_t d = 0; d < e; ++d) {
            for (std::size_t a = 0; a < na; ++a) {
              double g = 0.0;
              for (std::size_t s = 0; s < ns; ++s)
                g += self.grad[i * width + (a * ns + s) * e + d] * scal[i][s];
              ga[a] = g;
            }
            for (std::size_t a = 0; a < na; ++a) {
              const double g = ga[a];
              if (g == 0.0) continue;
              switch (cfg.aggregators[a]) {
                case Aggregator::max:
                  push(i, nb.sources[b + argmax[i * e + d]], d, g);
                  break;
                case Aggregator::min:
                  push(i, nb.sources[b + argmin[i * e + d]], d, g);
                  break;
                case Aggregator::mean:
                  for (std::size_t q = 0; q < deg; ++q) push(i, nb.sources[b + q], d, g / cnt);
                  break;
                case Aggregator::std: {
                  const double sd = stdev[i * e + d];
                  if (sd == 0.0) break;
                  const double mu = mean[i * e + d];
                  for (std::size_t q = 0; q < deg; ++q) {
                    const auto j = nb.sources[b + q];
                    push(i, j, d, g * (msg(i, j, d) - mu) / (cnt * sd));
                  }
                  break;
                }
              }
            }
          }
        }
      });
}

// Per node, the mean of deg(i) copies of x_i, summed in edge order. This is
// what the mean aggregator yields on the x_dst half of concat_offset
// messages; it can differ from x_i in the last bit.
inline Tensor replicated_mean(const Tensor& x, const Neighbourhoods& nb) {
  const auto n = x.rows(), f = x.cols();
  std::vector<double> out(n * f);
  const auto& xv = x.values();
  for (std::size_t i = 0; i < n; ++i) {
    const auto deg = nb.degree(i);
    for (std::size_t d = 0; d < f; ++d) {
      double s = 0.0;
      for (std::size_t q = 0; q < deg; ++q) s += xv[i * f + d];
      out[i * f + d] = s / static_cast<double>(deg);
    }
  }
  auto px = x.node();
  return Tensor::from_op("replicated_mean", {n, f}, std::move(out), {x},
                         [px](Node& self) {
                           for (std::size_t i = 0; i < self.grad.size(); ++i)
                             px->grad[i] += self.grad[i];
                         });
}

// Rows of a matrix picked by index (repeats allowed).
inline Tensor gather_rows(const Tensor& w, std::vector<std::size_t> rows) {
  require_rank2(w, "gather_rows");
  const auto m = w.cols();
  std::vector<double> out(rows.size() * m);
  const auto& wv = w.values();
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] >= w.rows()) throw TensorError("gather_rows: row index out of range");
    std::copy_n(wv.begin() + static_cast<std::ptrdiff_t>(rows[r] * m), m,
                out.begin() + static_cast<std::ptrdiff_t>(r * m));
  }
  auto pw = w.node();
  const Shape shape{rows.size(), m};
  return Tensor::from_op("gather_rows", shape, std::move(out), {w},
                         [pw, rows = std::move(rows), m](Node& self) {
                           for (std::size_t r = 0; r < rows.size(); ++r)
                             for (std::size_t c = 0; c < m; ++c)
                               pw->grad[rows[r] * m + c] += self.grad[r * m + c];
                         });
}

// diag(s) * x for a fixed per-row factor.
inline Tensor scale_rows(const Tensor& x, std::vector<double> s) {
  const auto n = x.rows(), m = x.cols();
  std::vector<double> out = x.values();
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < m; ++c) out[r * m + c] *= s[r];
  auto px = x.node();
  return Tensor::from_op("scale_rows", {n, m}, std::move(out), {x},
                         [px, s = std::move(s), m](Node& self) {
                           for (std::size_t i = 0; i < self.grad.size(); ++i)
                             px->grad[i] += self.grad[i] * s[i / m];
                         });
}

}  // namespace detail

// Messages, aggregations and scalings for every node, concatenated into
// [N, |A|*|S|*E]. Reduction order within a neighbourhood is edge-list order.
inline Tensor magc_aggregate(const Tensor& x, const Neighbourhoods& nb, const MagcConfig& cfg,
                             double d_train) {
  return detail::aggregate_messages(x, nb, cfg, d_train, detail::MessagePart::full);
}

// Aggregation followed by a single fusion layer (linear + activation).
class MagcLayer {
 public:
  MagcLayer() = default;
  MagcLayer(ParameterStore& store, const std::string& name, std::size_t in_width,
            MagcConfig cfg, Rng& rng)
      : name_(name), in_width_(in_width), cfg_(std::move(cfg)) {
    cfg_.validate();
    fuse_ = Linear(store, name + ".fuse", cfg_.pre_mlp_width(in_width), cfg_.out_width, rng,
                   cfg_.activation);
  }

  // With concat_offset messages the x_dst half of every block is known in
  // closed form (x_i for max and min, the replicated mean for mean, zero
  // for std), so only the offset half goes through the aggregation pass
  // and the x_dst half is applied as a few F-wide products. Same function
  // as forward_reference up to summation order.
  Tensor forward(const ParameterStore& store, const Tensor& x, const Neighbourhoods& nb,
                 double d_train) const {
    check_input(x);
    if (cfg_.edge_fn != EdgeFunction::concat_offset) return forward_reference(store, x, nb, d_train);
    const auto f = in_width_;
    const auto ns = cfg_.scalers.size();
    const Tensor& w = store.get(fuse_.name() + ".weight");
    const Tensor& b = store.get(fuse_.name() + ".bias");

    std::vector<std::size_t> offset_rows;
    for (std::size_t blk = 0; blk < cfg_.block_count(); ++blk)
      for (std::size_t d = 0; d < f; ++d) offset_rows.push_back(blk * 2 * f + f + d);
    Tensor offset = detail::aggregate_messages(x, nb, cfg_, d_train, detail::MessagePart::offset_half);
    Tensor y = matmul(offset, detail::gather_rows(w, std::move(offset_rows)));

    Tensor mean_x;
    for (std::size_t s = 0; s < ns; ++s) {
      std::vector<std::size_t> extreme_rows, mean_rows;
      for (std::size_t a = 0; a < cfg_.aggregators.size(); ++a) {
        const auto blk = a * ns + s;
        const auto agg = cfg_.aggregators[a];
        if (agg == Aggregator::std) continue;
        auto& rows = agg == Aggregator::mean ? mean_rows : extreme_rows;
        rows.push_back(blk);
      }
      Tensor part;
      auto accumulate = [&](const Tensor& src, const std::vector<std::size_t>& blocks) {
        if (blocks.empty()) return;
        Tensor wsum;
        for (auto blk : blocks) {
          std::vector<std::size_t> rows(f);
          for (std::size_t d = 0; d < f; ++d) rows[d] = blk * 2 * f + d;
          Tensor wb = detail::gather_rows(w, std::move(rows));
          wsum = wsum.defined() ? add(wsum, wb) : wb;
        }
        Tensor t = matmul(src, wsum);
        part = part.defined() ? add(part, t) : t;
      };
      accumulate(x, extreme_rows);
      if (!mean_rows.empty() && !mean_x.defined()) mean_x = detail::replicated_mean(x, nb);
      accumulate(mean_x, mean_rows);
      if (!part.defined()) continue;
      std::vector<double> factor(x.rows());
      for (std::size_t i = 0; i < x.rows(); ++i)
        factor[i] = scaler_value(nb.degree(i), d_train, cfg_.scalers[s]);
      y = add(y, detail::scale_rows(part, std::move(factor)));
    }
    y = add_bias(y, b);
    return cfg_.activation == Activation::relu ? relu(y) : y;
  }

  // Full concatenation followed by the fusion layer.
  Tensor forward_reference(const ParameterStore& store, const Tensor& x, const Neighbourhoods& nb,
                           double d_train) const {
    check_input(x);
    return fuse_.forward(store, magc_aggregate(x, nb, cfg_, d_train));
  }

  const std::string& name() const { return name_; }
  const MagcConfig& config() const { return cfg_; }
  std::size_t in_width() const { return in_width_; }
  std::size_t out_width() const { return cfg_.out_width; }
  const Linear& fusion() const { return fuse_; }

 private:
  void check_input(const Tensor& x) const {
    if (x.rank() != 2 || x.cols() != in_width_)
      throw GraphError(name_ + ": expected feature width " + std::to_string(in_width_) +
                       ", got shape " + shape_str(x.shape()));
  }

  std::string name_;
  std::size_t in_width_ = 0;
  MagcConfig cfg_;
  Linear fuse_;
};

}  // namespace skinnet
