#pragma once

// Dense float64 tensor with tape-free reverse-mode autodiff.
//
// Every op result keeps shared handles to its inputs and a closure that
// pushes its gradient back into them. backward() walks the reachable
// graph in reverse topological order. Tensors are rank 1 or 2 in practice;
// the shape vector is general but the ops below only accept what they
// document.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace skinnet {

using Shape = std::vector<std::size_t>;

class TensorError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until needed
  bool requires_grad = false;
  bool is_leaf = true;
  std::string op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this node's grad and accumulates into parents' grads.
  std::function<void(Node&)> backward_fn;

  std::vector<double>& ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), 0.0);
    return grad;
  }
};

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;

  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false)
      : node_(std::make_shared<detail::Node>()) {
    if (shape.empty()) throw TensorError("tensor shape must have rank >= 1");
    for (auto e : shape)
      if (e == 0)
        throw TensorError("tensor extents must be positive, got " +
                          shape_str(shape));
    if (shape_numel(shape) != values.size())
      throw TensorError("shape " + shape_str(shape) + " needs " +
                        std::to_string(shape_numel(shape)) + " values, got " +
                        std::to_string(values.size()));
    node_->shape = std::move(shape);
    node_->value = std::move(values);
    node_->requires_grad = requires_grad;
    if (requires_grad) node_->ensure_grad();
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    const auto n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
  }
  static Tensor full(Shape shape, double v) {
    const auto n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<double>(n, v));
  }
  static Tensor scalar(double v) { return Tensor({1}, {v}); }
  static Tensor matrix(std::size_t rows, std::size_t cols,
                       std::vector<double> values, bool requires_grad = false) {
    return Tensor({rows, cols}, std::move(values), requires_grad);
  }

  // Builds an interior node. Gradient tracking is inherited from parents;
  // when no parent tracks gradients the closure is dropped.
  // Thread-local switch; inference under NoGradGuard records no graph.
  static bool& grad_mode_enabled() {
    thread_local bool enabled = true;
    return enabled;
  }

  static Tensor from_op(std::string op, Shape shape, std::vector<double> values,
                        std::vector<Tensor> parents,
                        std::function<void(detail::Node&)> backward_fn) {
    Tensor out(std::move(shape), std::move(values));
    out.node_->is_leaf = false;
    out.node_->op = std::move(op);
    bool track = false;
    if (grad_mode_enabled())
      for (const auto& p : parents) track = track || p.requires_grad();
    if (track) {
      out.node_->requires_grad = true;
      out.node_->parents.reserve(parents.size());
      for (auto& p : parents) out.node_->parents.push_back(p.node_);
      out.node_->backward_fn = std::move(backward_fn);
    }
    return out;
  }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return checked().shape; }
  std::size_t rank() const { return shape().size(); }
  std::size_t numel() const { return checked().value.size(); }
  std::size_t rows() const { return shape()[0]; }
  std::size_t cols() const {
    const auto& s = shape();
    return s.size() >= 2 ? s[1] : 1;
  }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  bool is_leaf() const { return checked().is_leaf; }
  const std::string& op() const { return checked().op; }

  const std::vector<double>& values() const { return checked().value; }
  std::vector<double>& mutable_values() { return checked().value; }
  double item() const {
    if (numel() != 1) throw TensorError("item() on non-scalar tensor");
    return values()[0];
  }
  double at(std::size_t i) const { return values().at(i); }
  double at(std::size_t r, std::size_t c) const {
    return values().at(r * cols() + c);
  }

  // Gradient of the last backward pass; zeros when nothing reached this node.
  std::vector<double> grad() const {
    const auto& n = checked();
    if (n.grad.empty()) return std::vector<double>(n.value.size(), 0.0);
    return n.grad;
  }
  std::vector<double>& mutable_grad() { return checked().ensure_grad(); }
  void zero_grad() {
    auto& n = checked();
    if (n.requires_grad) n.grad.assign(n.value.size(), 0.0);
  }

  // Value copy cut off from the graph.
  Tensor detach() const { return Tensor(shape(), values()); }

  detail::Node* node() const { return node_.get(); }

 private:
  detail::Node& checked() const {
    if (!node_) throw TensorError("use of undefined tensor");
    return *node_;
  }

  std::shared_ptr<detail::Node> node_;
  friend void backward(const Tensor& loss);
};

// Runs reverse-mode accumulation from a scalar loss.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(Tensor::grad_mode_enabled()) { Tensor::grad_mode_enabled() = false; }
  ~NoGradGuard() { Tensor::grad_mode_enabled() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

inline void backward(const Tensor& loss) {
  if (!loss.defined())
    throw TensorError("backward called before any forward computation");
  if (loss.numel() != 1)
    throw TensorError("backward requires a scalar loss, got shape " +
                      shape_str(loss.shape()));
  if (!loss.requires_grad()) return;

  // Iterative post-order DFS.
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> seen;
  std::vector<std::pair<detail::Node*, std::size_t>> stack;
  stack.emplace_back(loss.node_.get(), 0);
  seen.insert(loss.node_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      detail::Node* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (auto* n : order)
    if (!n->is_leaf) n->grad.assign(n->value.size(), 0.0);
  loss.node_->ensure_grad();
  loss.node_->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* n = *it;
    if (n->is_leaf || !n->backward_fn) continue;
    for (auto& p : n->parents)
      if (p->requires_grad) p->ensure_grad();
    n->backward_fn(*n);
  }
  // Release interior gradients; leaves keep theirs.
  for (auto* n : order)
    if (!n->is_leaf) std::vector<double>().swap(n->grad);
}

// ---------------------------------------------------------------------------
// Ops
// ---------------------------------------------------------------------------

namespace detail {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

inline void require_rank2(const Tensor& t, const char* op) {
  if (t.rank() != 2)
    throw TensorError(std::string(op) + ": expected a matrix, got shape " +
                      shape_str(t.shape()));
}

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw TensorError(std::string(op) + ": shape mismatch " +
                      shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

}  // namespace detail

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  detail::require_rank2(a, "matmul");
  detail::require_rank2(b, "matmul");
  const auto n = a.rows(), k = a.cols(), m = b.cols();
  if (b.rows() != k)
    throw TensorError("matmul: inner extents differ " + shape_str(a.shape()) +
                      " x " + shape_str(b.shape()));
  std::vector<double> out(n * m);
  detail::MapMat(out.data(), n, m).noalias() =
      detail::CMapMat(a.values().data(), n, k) *
      detail::CMapMat(b.values().data(), k, m);
  auto pa = a.node(), pb = b.node();
  return Tensor::from_op(
      "matmul", {n, m}, std::move(out), {a, b},
      [pa, pb, n, k, m](detail::Node& self) {
        detail::CMapMat g(self.grad.data(), n, m);
        if (pa->requires_grad)
          detail::MapMat(pa->grad.data(), n, k).noalias() +=
              g * detail::CMapMat(pb->value.data(), k, m).transpose();
        if (pb->requires_grad)
          detail::MapMat(pb->grad.data(), k, m).noalias() +=
              detail::CMapMat(pa->value.data(), n, k).transpose() * g;
      });
}

// x[N,M] + b[M] broadcast over rows.
inline Tensor add_bias(const Tensor& x, const Tensor& b) {
  detail::require_rank2(x, "add_bias");
  const auto n = x.rows(), m = x.cols();
  if (b.numel() != m)
    throw TensorError("add_bias: bias width " + std::to_string(b.numel()) +
                      " does not match " + std::to_string(m) + " columns");
  std::vector<double> out = x.values();
  const auto& bv = b.values();
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < m; ++c) out[r * m + c] += bv[c];
  auto px = x.node(), pb = b.node();
  return Tensor::from_op("add_bias", {n, m}, std::move(out), {x, b},
                         [px, pb, n, m](detail::Node& self) {
                           if (px->requires_grad)
                             for (std::size_t i = 0; i < n * m; ++i)
                               px->grad[i] += self.grad[i];
                           if (pb->requires_grad)
                             for (std::size_t r = 0; r < n; ++r)
                               for (std::size_t c = 0; c < m; ++c)
                                 pb->grad[c] += self.grad[r * m + c];
                         });
}

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "add");
  std::vector<double> out(a.numel());
  const auto& av = a.values();
  const auto& bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  auto pa = a.node(), pb = b.node();
  return Tensor::from_op("add", a.shape(), std::move(out), {a, b},
                         [pa, pb](detail::Node& self) {
                           for (auto* p : {pa, pb})
                             if (p->requires_grad)
                               for (std::size_t i = 0; i < self.grad.size(); ++i)
                                 p->grad[i] += self.grad[i];
                         });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "sub");
  std::vector<double> out(a.numel());
  const auto& av = a.values();
  const auto& bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  auto pa = a.node(), pb = b.node();
  return Tensor::from_op("sub", a.shape(), std::move(out), {a, b},
                         [pa, pb](detail::Node& self) {
                           for (std::size_t i = 0; i < self.grad.size(); ++i) {
                             if (pa->requires_grad) pa->grad[i] += self.grad[i];
                             if (pb->requires_grad) pb->grad[i] -= self.grad[i];
                           }
                         });
}

// Elementwise product.
inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "mul");
  std::vector<double> out(a.numel());
  const auto& av = a.values();
  const auto& bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  auto pa = a.node(), pb = b.node();
  return Tensor::from_op("mul", a.shape(), std::move(out), {a, b},
                         [pa, pb](detail::Node& self) {
                           for (std::size_t i = 0; i < self.grad.size(); ++i) {
                             if (pa->requires_grad)
                               pa->grad[i] += self.grad[i] * pb->value[i];
                             if (pb->requires_grad)
                               pb->grad[i] += self.grad[i] * pa->value[i];
                           }
                         });
}

inline Tensor scale(const Tensor& a, double c) {
  std::vector<double> out = a.values();
  for (auto& v : out) v *= c;
  auto pa = a.node();
  return Tensor::from_op("scale", a.shape(), std::move(out), {a},
                         [pa, c](detail::Node& self) {
                           for (std::size_t i = 0; i < self.grad.size(); ++i)
                             pa->grad[i] += c * self.grad[i];
                         });
}

inline Tensor sum(const Tensor& a) {
  const auto& av = a.values();
  double s = 0.0;
  for (double v : av) s += v;
  auto pa = a.node();
  return Tensor::from_op("sum", {1}, {s}, {a}, [pa](detail::Node& self) {
    const double g = self.grad[0];
    for (auto& v : pa->grad) v += g;
  });
}

inline Tensor relu(const Tensor& a) {
  std::vector<double> out = a.values();
  for (auto& v : out) v = v > 0.0 ? v : 0.0;
  auto pa = a.node();
  return Tensor::from_op("relu", a.shape(), std::move(out), {a},
                         [pa](detail::Node& self) {
                           for (std::size_t i = 0; i < self.grad.size(); ++i)
                             if (pa->value[i] > 0.0) pa->grad[i] += self.grad[i];
                         });
}

// Column-wise concatenation of matrices sharing a row count.
inline Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw TensorError("concat_cols: no inputs");
  const auto n = parts.front().rows();
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& p : parts) {
    detail::require_rank2(p, "concat_cols");
    if (p.rows() != n)
      throw TensorError("concat_cols: row counts differ (" +
                        std::to_string(p.rows()) + " vs " + std::to_string(n) +
                        ")");
    widths.push_back(p.cols());
    total += p.cols();
  }
  std::vector<double> out(n * total);
  std::size_t off = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto& v = parts[k].values();
    const auto w = widths[k];
    for (std::size_t r = 0; r < n; ++r)
      std::copy_n(v.begin() + static_cast<std::ptrdiff_t>(r * w), w,
                  out.begin() + static_cast<std::ptrdiff_t>(r * total + off));
    off += w;
  }
  std::vector<detail::Node*> nodes;
  for (const auto& p : parts) nodes.push_back(p.node());
  return Tensor::from_op(
      "concat_cols", {n, total}, std::move(out), parts,
      [nodes, widths, n, total](detail::Node& self) {
        std::size_t o = 0;
        for (std::size_t k = 0; k < nodes.size(); ++k) {
          const auto w = widths[k];
          if (nodes[k]->requires_grad)
            for (std::size_t r = 0; r < n; ++r)
              for (std::size_t c = 0; c < w; ++c)
                nodes[k]->grad[r * w + c] += self.grad[r * total + o + c];
          o += w;
        }
      });
}

// Row-wise concatenation of matrices sharing a column count.
inline Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw TensorError("concat_rows: no inputs");
  const auto m = parts.front().cols();
  std::size_t total = 0;
  for (const auto& p : parts) {
    detail::require_rank2(p, "concat_rows");
    if (p.cols() != m) throw TensorError("concat_rows: column counts differ");
    total += p.rows();
  }
  std::vector<double> out;
  out.reserve(total * m);
  for (const auto& p : parts)
    out.insert(out.end(), p.values().begin(), p.values().end());
  std::vector<detail::Node*> nodes;
  for (const auto& p : parts) nodes.push_back(p.node());
  return Tensor::from_op("concat_rows", {total, m}, std::move(out), parts,
                         [nodes](detail::Node& self) {
                           std::size_t o = 0;
                           for (auto* p : nodes) {
                             const auto len = p->value.size();
                             if (p->requires_grad)
                               for (std::size_t i = 0; i < len; ++i)
                                 p->grad[i] += self.grad[o + i];
                             o += len;
                           }
                         });
}

// Rows [begin, end) of a matrix.
inline Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end) {
  detail::require_rank2(x, "slice_rows");
  if (begin >= end || end > x.rows())
    throw TensorError("slice_rows: bad range [" + std::to_string(begin) + "," +
                      std::to_string(end) + ") over " +
                      std::to_string(x.rows()) + " rows");
  const auto m = x.cols();
  std::vector<double> out(x.values().begin() + static_cast<std::ptrdiff_t>(begin * m),
                          x.values().begin() + static_cast<std::ptrdiff_t>(end * m));
  auto px = x.node();
  return Tensor::from_op("slice_rows", {end - begin, m}, std::move(out), {x},
                         [px, begin, m](detail::Node& self) {
                           for (std::size_t i = 0; i < self.grad.size(); ++i)
                             px->grad[begin * m + i] += self.grad[i];
                         });
}

// Repeats a single-row (or rank-1) tensor n times.
inline Tensor broadcast_rows(const Tensor& v, std::size_t n) {
  if (n == 0) throw TensorError("broadcast_rows: zero rows");
  if (v.rank() == 2 && v.rows() != 1)
    throw TensorError("broadcast_rows: expected a single row, got " +
                      shape_str(v.shape()));
  const auto m = v.numel();
  std::vector<double> out(n * m);
  for (std::size_t r = 0; r < n; ++r)
    std::copy(v.values().begin(), v.values().end(),
              out.begin() + static_cast<std::ptrdiff_t>(r * m));
  auto pv = v.node();
  return Tensor::from_op("broadcast_rows", {n, m}, std::move(out), {v},
                         [pv, n, m](detail::Node& self) {
                           for (std::size_t r = 0; r < n; ++r)
                             for (std::size_t c = 0; c < m; ++c)
                               pv->grad[c] += self.grad[r * m + c];
                         });
}

// Column-wise max over rows -> [1, M]. Ties resolve to the first row.
inline Tensor max_pool_rows(const Tensor& x) {
  detail::require_rank2(x, "max_pool_rows");
  const auto n = x.rows(), m = x.cols();
  const auto& xv = x.values();
  std::vector<double> out(xv.begin(), xv.begin() + static_cast<std::ptrdiff_t>(m));
  std::vector<std::size_t> arg(m, 0);
  for (std::size_t r = 1; r < n; ++r)
    for (std::size_t c = 0; c < m; ++c)
      if (xv[r * m + c] > out[c]) {
        out[c] = xv[r * m + c];
        arg[c] = r;
      }
  auto px = x.node();
  return Tensor::from_op("max_pool_rows", {1, m}, std::move(out), {x},
                         [px, arg = std::move(arg), m](detail::Node& self) {
                           for (std::size_t c = 0; c < m; ++c)
                             px->grad[arg[c] * m + c] += self.grad[c];
                         });
}

inline Tensor mean_pool_rows(const Tensor& x) {
  detail::require_rank2(x, "mean_pool_rows");
  const auto n = x.rows(), m = x.cols();
  const auto& xv = x.values();
  std::vector<double> out(m, 0.0);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < m; ++c) out[c] += xv[r * m + c];
  for (auto& v : out) v /= static_cast<double>(n);
  auto px = x.node();
  return Tensor::from_op("mean_pool_rows", {1, m}, std::move(out), {x},
                         [px, n, m](detail::Node& self) {
                           const double inv = 1.0 / static_cast<double>(n);
                           for (std::size_t r = 0; r < n; ++r)
                             for (std::size_t c = 0; c < m; ++c)
                               px->grad[r * m + c] += self.grad[c] * inv;
                         });
}

// Row softmax restricted to mask==1 slots; masked slots come out exactly 0.
// A row with no valid slot is all zeros.
inline Tensor masked_softmax(const Tensor& logits, const std::vector<double>& mask) {
  detail::require_rank2(logits, "masked_softmax");
  const auto n = logits.rows(), k = logits.cols();
  if (mask.size() != n * k)
    throw TensorError("masked_softmax: mask size does not match logits");
  const auto& lv = logits.values();
  std::vector<double> out(n * k, 0.0);
  for (std::size_t r = 0; r < n; ++r) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < k; ++c)
      if (mask[r * k + c] != 0.0) mx = std::max(mx, lv[r * k + c]);
    if (!std::isfinite(mx)) continue;
    double z = 0.0;
    for (std::size_t c = 0; c < k; ++c)
      if (mask[r * k + c] != 0.0) {
        out[r * k + c] = std::exp(lv[r * k + c] - mx);
        z += out[r * k + c];
      }
    for (std::size_t c = 0; c < k; ++c) out[r * k + c] /= z;
  }
  auto pl = logits.node();
  return Tensor::from_op("masked_softmax", {n, k}, out, {logits},
                         [pl, n, k](detail::Node& self) {
                           const auto& p = self.value;
                           for (std::size_t r = 0; r < n; ++r) {
                             double dot = 0.0;
                             for (std::size_t c = 0; c < k; ++c)
                               dot += p[r * k + c] * self.grad[r * k + c];
                             for (std::size_t c = 0; c < k; ++c)
                               pl->grad[r * k + c] +=
                                   p[r * k + c] * (self.grad[r * k + c] - dot);
                           }
                         });
}

inline Tensor softmax(const Tensor& logits) {
  return masked_softmax(logits, std::vector<double>(logits.numel(), 1.0));
}

}  // namespace skinnet
