#pragma once

// Parameters, linear layers, MLPs, dropout and the KL-divergence loss.

#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "skinnet/tensor.hpp"

namespace skinnet {

// Seeded generator; all randomness in the library flows through this.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  // Uniform in [0, 1) from the top 53 bits.
  double uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // Uniform integer in [0, n).
  std::size_t index(std::size_t n) {
    return static_cast<std::size_t>(uniform() * static_cast<double>(n));
  }
  std::uint64_t next() { return engine_(); }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[index(i)]);
  }

 private:
  std::mt19937_64 engine_;
};

// Ordered, named collection of trainable leaves. Order is registration
// order and is what checkpoints and the optimizer iterate over.
class ParameterStore {
 public:
  Tensor& add(const std::string& name, Tensor t) {
    if (index_.count(name)) throw TensorError("duplicate parameter name " + name);
    index_[name] = params_.size();
    params_.emplace_back(name, std::move(t));
    return params_.back().second;
  }

  Tensor& get(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw TensorError("unknown parameter " + name);
    return params_[it->second].second;
  }
  const Tensor& get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw TensorError("unknown parameter " + name);
    return params_[it->second].second;
  }
  bool contains(const std::string& name) const { return index_.count(name) > 0; }

  std::vector<std::pair<std::string, Tensor>>& entries() { return params_; }
  const std::vector<std::pair<std::string, Tensor>>& entries() const {
    return params_;
  }
  std::size_t size() const { return params_.size(); }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& [_, t] : params_) n += t.numel();
    return n;
  }

  void zero_grad() {
    for (auto& [_, t] : params_) t.zero_grad();
  }

 private:
  std::vector<std::pair<std::string, Tensor>> params_;
  std::map<std::string, std::size_t> index_;
};

// Glorot-uniform weight matrix [fan_in, fan_out].
inline Tensor glorot_uniform(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::vector<double> w(fan_in * fan_out);
  for (auto& v : w) v = rng.uniform(-bound, bound);
  return Tensor({fan_in, fan_out}, std::move(w), true);
}

enum class Activation { relu, none };

// y = x W + b, with optional ReLU.
class Linear {
 public:
  Linear() = default;
  Linear(ParameterStore& store, const std::string& name, std::size_t in,
         std::size_t out, Rng& rng, Activation act = Activation::relu)
      : name_(name), in_(in), out_(out), act_(act) {
    store.add(name + ".weight", glorot_uniform(in, out, rng));
    store.add(name + ".bias", Tensor::zeros({out}, true));
  }

  Tensor forward(const ParameterStore& store, const Tensor& x) const {
    if (x.rank() != 2 || x.cols() != in_)
      throw TensorError(name_ + ": expected input width " + std::to_string(in_) +
                        ", got shape " + shape_str(x.shape()));
    Tensor y = add_bias(matmul(x, store.get(name_ + ".weight")),
                        store.get(name_ + ".bias"));
    return act_ == Activation::relu ? relu(y) : y;
  }

  const std::string& name() const { return name_; }
  std::size_t in_width() const { return in_; }
  std::size_t out_width() const { return out_; }
  Activation activation() const { return act_; }

 private:
  std::string name_;
  std::size_t in_ = 0, out_ = 0;
  Activation act_ = Activation::relu;
};

// Inverted dropout: surviving entries are scaled by 1/(1-p) at train time,
// evaluation is the identity.
inline Tensor dropout(const Tensor& x, double p, bool training, Rng& rng) {
  if (p < 0.0 || p > 1.0) throw TensorError("dropout probability outside [0,1]");
  if (!training || p == 0.0) return x;
  std::vector<double> keep(x.numel());
  const double s = p < 1.0 ? 1.0 / (1.0 - p) : 0.0;
  for (auto& k : keep) k = rng.uniform() >= p ? s : 0.0;
  std::vector<double> out = x.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= keep[i];
  auto px = x.node();
  return Tensor::from_op("dropout", x.shape(), std::move(out), {x},
                         [px, keep = std::move(keep)](detail::Node& self) {
                           for (std::size_t i = 0; i < self.grad.size(); ++i)
                             px->grad[i] += self.grad[i] * keep[i];
                         });
}

struct MlpSpec {
  std::vector<std::size_t> layer_widths;
  std::vector<Activation> activations;  // one per layer
  std::vector<double> dropout_before;   // one per layer

  // ReLU between layers, none after the last one when `linear_output`.
  static MlpSpec uniform(std::vector<std::size_t> widths, bool linear_output = false,
                         double dropout = 0.0) {
    MlpSpec s;
    s.layer_widths = std::move(widths);
    s.activations.assign(s.layer_widths.size(), Activation::relu);
    if (linear_output && !s.activations.empty())
      s.activations.back() = Activation::none;
    s.dropout_before.assign(s.layer_widths.size(), dropout);
    return s;
  }

  void validate() const {
    if (layer_widths.empty()) throw TensorError("MLP needs at least one layer");
    if (activations.size() != layer_widths.size() ||
        dropout_before.size() != layer_widths.size())
      throw TensorError("MLP spec lists must have one entry per layer");
    for (auto w : layer_widths)
      if (w == 0) throw TensorError("MLP layer widths must be positive");
    for (double p : dropout_before)
      if (!(p >= 0.0 && p <= 1.0))
        throw TensorError("MLP dropout probabilities must lie in [0,1]");
  }
};

class Mlp {
 public:
  Mlp() = default;
  Mlp(ParameterStore& store, const std::string& name, std::size_t in,
      MlpSpec spec, Rng& rng)
      : spec_(std::move(spec)) {
    spec_.validate();
    std::size_t width = in;
    for (std::size_t l = 0; l < spec_.layer_widths.size(); ++l) {
      layers_.emplace_back(store, name + "." + std::to_string(l), width,
                           spec_.layer_widths[l], rng, spec_.activations[l]);
      width = spec_.layer_widths[l];
    }
  }

  Tensor forward(const ParameterStore& store, Tensor x, bool training, Rng& rng) const {
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      x = dropout(x, spec_.dropout_before[l], training, rng);
      x = layers_[l].forward(store, x);
    }
    return x;
  }

  const MlpSpec& spec() const { return spec_; }
  const std::vector<Linear>& layers() const { return layers_; }
  std::size_t out_width() const { return layers_.back().out_width(); }

 private:
  MlpSpec spec_;
  std::vector<Linear> layers_;
};

inline constexpr double kKlEpsilon = 1e-12;

// Mean over rows with any unmasked slot of
//   sum_slots mask * target * log((target + eps) / (predicted + eps)).
inline Tensor kl_loss(const Tensor& target, const Tensor& predicted,
                      const Tensor& mask) {
  detail::require_rank2(predicted, "kl_loss");
  detail::require_same_shape(target, predicted, "kl_loss");
  detail::require_same_shape(mask, predicted, "kl_loss");
  const auto n = predicted.rows(), k = predicted.cols();
  const auto& t = target.values();
  const auto& p = predicted.values();
  const auto& m = mask.values();
  std::vector<char> row_valid(n, 0);
  std::size_t valid = 0;
  for (std::size_t i = 0; i < n * k; ++i) {
    if (t[i] < 0.0 || p[i] < 0.0)
      throw TensorError("kl_loss: negative entry in distribution at row " +
                        std::to_string(i / k));
    if (m[i] != 0.0 && m[i] != 1.0) throw TensorError("kl_loss: mask must be 0/1");
  }
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < k; ++c)
      if (m[r * k + c] != 0.0) row_valid[r] = 1;
    valid += row_valid[r];
  }
  if (valid == 0) throw TensorError("kl_loss: no valid rows");
  const double inv = 1.0 / static_cast<double>(valid);
  // Slots that contribute: unmasked, in a valid row, with positive target.
  std::vector<char> active(n * k, 0);
  double total = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    if (!row_valid[r]) continue;
    for (std::size_t c = 0; c < k; ++c) {
      const auto i = r * k + c;
      if (m[i] != 0.0 && t[i] > 0.0) {
        active[i] = 1;
        total += t[i] * std::log((t[i] + kKlEpsilon) / (p[i] + kKlEpsilon));
      }
    }
  }
  auto pp = predicted.node();
  auto pt = target.node();
  return Tensor::from_op(
      "kl_loss", {1}, {total * inv}, {target, predicted},
      [pp, pt, inv, active = std::move(active)](detail::Node& self) {
        const double g = self.grad[0] * inv;
        const auto& t = pt->value;
        const auto& p = pp->value;
        for (std::size_t i = 0; i < active.size(); ++i) {
          if (!active[i]) continue;
          if (pp->requires_grad) pp->grad[i] -= g * t[i] / (p[i] + kKlEpsilon);
          if (pt->requires_grad)
            pt->grad[i] += g * (std::log((t[i] + kKlEpsilon) / (p[i] + kKlEpsilon)) +
                                t[i] / (t[i] + kKlEpsilon));
        }
      });
}

}  // namespace skinnet
