#pragma once

// Dense 64-bit float tensors with tape-based reverse-mode differentiation.
// Row-major storage, eager evaluation. A Tensor is a cheap shared handle to
// a graph node; ops build new nodes whose backprop closures pull the node's
// gradient into its parents. Gradients on leaf tensors accumulate across
// backward() calls until zero_grad() is called; gradients on interior nodes
// are reset at the start of every backward() pass.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "sert/rng.hpp"

namespace sert {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t e : s) n *= e;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(s[i]);
  }
  return out + "]";
}

namespace detail {
inline thread_local bool grad_enabled_flag = true;
}

inline bool grad_enabled() { return detail::grad_enabled_flag; }

// Disables graph construction in scope; forward passes run value-only.
struct NoGradGuard {
  bool prev;
  NoGradGuard() : prev(detail::grad_enabled_flag) {
    detail::grad_enabled_flag = false;
  }
  ~NoGradGuard() { detail::grad_enabled_flag = prev; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

class Tensor {
 public:
  struct Node {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;  // empty until first needed
    bool requires_grad = false;
    std::vector<Tensor> parents;
    std::function<void(Node&)> backprop;

    void ensure_grad() {
      if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
    }
    bool is_leaf() const { return parents.empty(); }
  };

  Tensor() = default;

  static Tensor from(Shape shape, std::vector<double> data,
                     bool requires_grad = false) {
    if (shape_numel(shape) != data.size())
      throw std::invalid_argument("tensor: shape " + shape_str(shape) +
                                  " does not match data length " +
                                  std::to_string(data.size()));
    Tensor t;
    t.n_ = std::make_shared<Node>();
    t.n_->shape = std::move(shape);
    t.n_->value = std::move(data);
    t.n_->requires_grad = requires_grad;
    return t;
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    std::vector<double> d(shape_numel(shape), 0.0);
    return from(std::move(shape), std::move(d), requires_grad);
  }

  static Tensor full(Shape shape, double v, bool requires_grad = false) {
    std::vector<double> d(shape_numel(shape), v);
    return from(std::move(shape), std::move(d), requires_grad);
  }

  static Tensor scalar(double v) { return from({}, {v}); }

  bool defined() const { return n_ != nullptr; }
  const Shape& shape() const { return n_->shape; }
  std::size_t size() const { return n_->value.size(); }
  std::size_t rank() const { return n_->shape.size(); }
  bool requires_grad() const { return n_->requires_grad; }

  std::vector<double>& data() { return n_->value; }
  const std::vector<double>& data() const { return n_->value; }

  std::vector<double>& grad() {
    n_->ensure_grad();
    return n_->grad;
  }
  const std::vector<double>& grad() const {
    n_->ensure_grad();
    return n_->grad;
  }

  double item() const {
    if (size() != 1)
      throw std::invalid_argument("item(): tensor is not scalar, shape " +
                                  shape_str(shape()));
    return n_->value[0];
  }

  void zero_grad() {
    if (!n_->grad.empty()) n_->grad.assign(n_->value.size(), 0.0);
  }

  Node* node() const { return n_.get(); }

  // Deep copy of the value; detached from any graph.
  Tensor clone_detached(bool requires_grad = false) const {
    return from(n_->shape, n_->value, requires_grad);
  }

 private:
  std::shared_ptr<Node> n_;

  friend Tensor make_op(Shape shape, std::vector<double> value,
                        std::vector<Tensor> parents,
                        std::function<void(Tensor::Node&)> backprop);
  friend void backward(const Tensor&);
};

inline Tensor make_op(Shape shape, std::vector<double> value,
                      std::vector<Tensor> parents,
                      std::function<void(Tensor::Node&)> backprop) {
  bool track = grad_enabled();
  if (track) {
    track = false;
    for (const Tensor& p : parents)
      if (p.requires_grad()) {
        track = true;
        break;
      }
  }
  Tensor t = Tensor::from(std::move(shape), std::move(value));
  if (track) {
    t.n_->requires_grad = true;
    t.n_->parents = std::move(parents);
    t.n_->backprop = std::move(backprop);
  }
  return t;
}

// Accumulates d(loss)/d(tensor) into every reachable requires_grad tensor.
// Interior-node gradients are reset first so repeated backward() calls on the
// same graph contribute exactly one unit each to the leaves.
inline void backward(const Tensor& loss) {
  if (!loss.defined() || loss.size() != 1)
    throw std::invalid_argument("backward(): loss must be a scalar tensor");
  if (!loss.requires_grad()) return;

  std::vector<Tensor::Node*> order;
  std::unordered_set<Tensor::Node*> seen;
  std::vector<std::pair<Tensor::Node*, std::size_t>> stack;
  stack.emplace_back(loss.node(), 0);
  seen.insert(loss.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Tensor::Node* p = node->parents[next++].node();
      if (p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (Tensor::Node* n : order) {
    if (!n->is_leaf()) n->grad.assign(n->value.size(), 0.0);
    n->ensure_grad();
  }
  loss.node()->grad[0] = 1.0;

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Tensor::Node* n = *it;
    if (n->backprop) n->backprop(*n);
  }
}

// ---------------------------------------------------------------------------
// Elementwise and broadcast arithmetic.
//
// add/sub/mul accept equal shapes, or a right operand whose shape is a
// suffix of the left's (bias-style broadcast), or a scalar right operand.

namespace detail {

enum class BroadcastKind { Same, Suffix, Scalar };

inline BroadcastKind broadcast_kind(const Shape& a, const Shape& b,
                                    const char* op) {
  if (a == b) return BroadcastKind::Same;
  if (shape_numel(b) == 1) return BroadcastKind::Scalar;
  if (b.size() < a.size() &&
      std::equal(b.begin(), b.end(), a.end() - b.size()))
    return BroadcastKind::Suffix;
  throw std::invalid_argument(std::string(op) + ": incompatible shapes " +
                              shape_str(a) + " and " + shape_str(b));
}

}  // namespace detail

inline Tensor binary_elementwise(const Tensor& a, const Tensor& b,
                                 const char* name, double sign_b,
                                 bool multiply) {
  const auto kind = detail::broadcast_kind(a.shape(), b.shape(), name);
  const auto& av = a.data();
  const auto& bv = b.data();
  const std::size_t n = av.size();
  const std::size_t bn = bv.size();
  std::vector<double> out(n);
  if (multiply) {
    for (std::size_t i = 0; i < n; ++i) out[i] = av[i] * bv[i % bn];
  } else {
    for (std::size_t i = 0; i < n; ++i) out[i] = av[i] + sign_b * bv[i % bn];
  }
  (void)kind;
  return make_op(
      a.shape(), std::move(out), {a, b},
      [sign_b, multiply, bn](Tensor::Node& self) {
        Tensor::Node* pa = self.parents[0].node();
        Tensor::Node* pb = self.parents[1].node();
        const std::size_t n = self.grad.size();
        if (pa->requires_grad) {
          pa->ensure_grad();
          if (multiply) {
            for (std::size_t i = 0; i < n; ++i)
              pa->grad[i] += self.grad[i] * pb->value[i % bn];
          } else {
            for (std::size_t i = 0; i < n; ++i) pa->grad[i] += self.grad[i];
          }
        }
        if (pb->requires_grad) {
          pb->ensure_grad();
          if (multiply) {
            for (std::size_t i = 0; i < n; ++i)
              pb->grad[i % bn] += self.grad[i] * pa->value[i];
          } else {
            for (std::size_t i = 0; i < n; ++i)
              pb->grad[i % bn] += sign_b * self.grad[i];
          }
        }
      });
}

inline Tensor add(const Tensor& a, const Tensor& b) {
  return binary_elementwise(a, b, "add", 1.0, false);
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_elementwise(a, b, "sub", -1.0, false);
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_elementwise(a, b, "mul", 1.0, true);
}

inline Tensor scale(const Tensor& a, double c) {
  std::vector<double> out(a.data());
  for (double& v : out) v *= c;
  return make_op(a.shape(), std::move(out), {a}, [c](Tensor::Node& self) {
    Tensor::Node* p = self.parents[0].node();
    if (!p->requires_grad) return;
    p->ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i)
      p->grad[i] += c * self.grad[i];
  });
}

// ---------------------------------------------------------------------------
// Matrix multiplication: [*, m, k] x [*, k, n] -> [*, m, n]; leading batch
// extents broadcast (each must match or be 1). The inner kernel is Eigen.

namespace detail {
using RowMat =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

struct MatmulPlan {
  std::size_t m, k, n;
  std::vector<std::size_t> batch;      // broadcast batch extents
  std::vector<std::size_t> a_stride;   // per batch dim, in element offsets
  std::vector<std::size_t> b_stride;
  std::size_t batch_count;

  std::size_t offset(const std::vector<std::size_t>& strides,
                     std::size_t flat) const {
    std::size_t off = 0;
    for (std::size_t d = batch.size(); d-- > 0;) {
      const std::size_t idx = flat % batch[d];
      flat /= batch[d];
      off += idx * strides[d];
    }
    return off;
  }
};

inline MatmulPlan matmul_plan(const Shape& a, const Shape& b) {
  if (a.size() < 2 || b.size() < 2)
    throw std::invalid_argument("matmul: operands must have rank >= 2, got " +
                                shape_str(a) + " and " + shape_str(b));
  MatmulPlan p{};
  p.m = a[a.size() - 2];
  p.k = a[a.size() - 1];
  p.n = b[b.size() - 1];
  if (b[b.size() - 2] != p.k)
    throw std::invalid_argument("matmul: inner extents disagree: " +
                                shape_str(a) + " x " + shape_str(b));
  const std::size_t ab = a.size() - 2, bb = b.size() - 2;
  const std::size_t nb = std::max(ab, bb);
  p.batch.assign(nb, 1);
  p.a_stride.assign(nb, 0);
  p.b_stride.assign(nb, 0);
  std::vector<std::size_t> a_ext(nb, 1), b_ext(nb, 1);
  for (std::size_t i = 0; i < ab; ++i) a_ext[nb - ab + i] = a[i];
  for (std::size_t i = 0; i < bb; ++i) b_ext[nb - bb + i] = b[i];
  for (std::size_t i = 0; i < nb; ++i) {
    if (a_ext[i] != b_ext[i] && a_ext[i] != 1 && b_ext[i] != 1)
      throw std::invalid_argument("matmul: batch extents disagree: " +
                                  shape_str(a) + " x " + shape_str(b));
    p.batch[i] = std::max(a_ext[i], b_ext[i]);
  }
  // row-major strides over the batch dims, zeroed where broadcast
  std::size_t astr = p.m * p.k;
  for (std::size_t i = nb; i-- > 0;) {
    p.a_stride[i] = (a_ext[i] == 1) ? 0 : astr;
    astr *= a_ext[i];
  }
  std::size_t bstr = p.k * p.n;
  for (std::size_t i = nb; i-- > 0;) {
    p.b_stride[i] = (b_ext[i] == 1) ? 0 : bstr;
    bstr *= b_ext[i];
  }
  p.batch_count = 1;
  for (std::size_t e : p.batch) p.batch_count *= e;
  return p;
}
}  // namespace detail

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  const auto plan = detail::matmul_plan(a.shape(), b.shape());
  Shape out_shape(plan.batch);
  out_shape.push_back(plan.m);
  out_shape.push_back(plan.n);
  std::vector<double> out(shape_numel(out_shape));
  const std::size_t mn = plan.m * plan.n;
  for (std::size_t bi = 0; bi < plan.batch_count; ++bi) {
    detail::ConstMap A(a.data().data() + plan.offset(plan.a_stride, bi),
                       static_cast<Eigen::Index>(plan.m),
                       static_cast<Eigen::Index>(plan.k));
    detail::ConstMap B(b.data().data() + plan.offset(plan.b_stride, bi),
                       static_cast<Eigen::Index>(plan.k),
                       static_cast<Eigen::Index>(plan.n));
    detail::MutMap C(out.data() + bi * mn, static_cast<Eigen::Index>(plan.m),
                     static_cast<Eigen::Index>(plan.n));
    C.noalias() = A * B;
  }
  return make_op(
      std::move(out_shape), std::move(out), {a, b},
      [plan, mn](Tensor::Node& self) {
        Tensor::Node* pa = self.parents[0].node();
        Tensor::Node* pb = self.parents[1].node();
        const auto m = static_cast<Eigen::Index>(plan.m);
        const auto k = static_cast<Eigen::Index>(plan.k);
        const auto n = static_cast<Eigen::Index>(plan.n);
        if (pa->requires_grad) pa->ensure_grad();
        if (pb->requires_grad) pb->ensure_grad();
        for (std::size_t bi = 0; bi < plan.batch_count; ++bi) {
          detail::ConstMap G(self.grad.data() + bi * mn, m, n);
          if (pa->requires_grad) {
            detail::ConstMap B(
                pb->value.data() + plan.offset(plan.b_stride, bi), k, n);
            detail::MutMap GA(pa->grad.data() + plan.offset(plan.a_stride, bi),
                              m, k);
            GA.noalias() += G * B.transpose();
          }
          if (pb->requires_grad) {
            detail::ConstMap A(
                pa->value.data() + plan.offset(plan.a_stride, bi), m, k);
            detail::MutMap GB(pb->grad.data() + plan.offset(plan.b_stride, bi),
                              k, n);
            GB.noalias() += A.transpose() * G;
          }
        }
      });
}

inline Tensor transpose_last2(const Tensor& a) {
  if (a.rank() < 2)
    throw std::invalid_argument("transpose_last2: rank must be >= 2");
  Shape s = a.shape();
  std::swap(s[s.size() - 1], s[s.size() - 2]);
  const std::size_t m = a.shape()[a.rank() - 2];
  const std::size_t n = a.shape()[a.rank() - 1];
  const std::size_t batch = a.size() / (m * n);
  std::vector<double> out(a.size());
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j)
        out[b * m * n + j * m + i] = a.data()[b * m * n + i * n + j];
  return make_op(std::move(s), std::move(out), {a},
                 [m, n, batch](Tensor::Node& self) {
                   Tensor::Node* p = self.parents[0].node();
                   if (!p->requires_grad) return;
                   p->ensure_grad();
                   for (std::size_t b = 0; b < batch; ++b)
                     for (std::size_t i = 0; i < m; ++i)
                       for (std::size_t j = 0; j < n; ++j)
                         p->grad[b * m * n + i * n + j] +=
                             self.grad[b * m * n + j * m + i];
                 });
}

inline Tensor reshape(const Tensor& a, Shape s) {
  if (shape_numel(s) != a.size())
    throw std::invalid_argument("reshape: " + shape_str(a.shape()) + " -> " +
                                shape_str(s) + " changes element count");
  std::vector<double> out(a.data());
  return make_op(std::move(s), std::move(out), {a}, [](Tensor::Node& self) {
    Tensor::Node* p = self.parents[0].node();
    if (!p->requires_grad) return;
    p->ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i)
      p->grad[i] += self.grad[i];
  });
}

inline Tensor flatten(const Tensor& a) { return reshape(a, {a.size()}); }

// Concatenate along the last dimension; all operands must agree on the
// leading extents. Rank-1 operands concatenate into one longer vector.
inline Tensor concat_lastdim(std::span<const Tensor> parts) {
  if (parts.empty()) throw std::invalid_argument("concat_lastdim: no inputs");
  const Shape& first = parts.front().shape();
  if (first.empty())
    throw std::invalid_argument("concat_lastdim: rank must be >= 1");
  std::size_t total_last = 0;
  std::vector<std::size_t> lasts;
  for (const Tensor& t : parts) {
    const Shape& s = t.shape();
    if (s.size() != first.size() ||
        !std::equal(s.begin(), s.end() - 1, first.begin()))
      throw std::invalid_argument(
          "concat_lastdim: leading extents disagree: " + shape_str(first) +
          " vs " + shape_str(s));
    lasts.push_back(s.back());
    total_last += s.back();
  }
  Shape out_shape = first;
  out_shape.back() = total_last;
  std::size_t rows = 1;
  for (std::size_t i = 0; i + 1 < first.size(); ++i) rows *= first[i];
  std::vector<double> out(rows * total_last);
  std::size_t col = 0;
  for (std::size_t pi = 0; pi < parts.size(); ++pi) {
    const auto& v = parts[pi].data();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < lasts[pi]; ++c)
        out[r * total_last + col + c] = v[r * lasts[pi] + c];
    col += lasts[pi];
  }
  std::vector<Tensor> parents(parts.begin(), parts.end());
  return make_op(std::move(out_shape), std::move(out), std::move(parents),
                 [rows, total_last, lasts](Tensor::Node& self) {
                   std::size_t col = 0;
                   for (std::size_t pi = 0; pi < self.parents.size(); ++pi) {
                     Tensor::Node* p = self.parents[pi].node();
                     if (p->requires_grad) {
                       p->ensure_grad();
                       for (std::size_t r = 0; r < rows; ++r)
                         for (std::size_t c = 0; c < lasts[pi]; ++c)
                           p->grad[r * lasts[pi] + c] +=
                               self.grad[r * total_last + col + c];
                     }
                     col += lasts[pi];
                   }
                 });
}

inline Tensor concat_lastdim(std::initializer_list<Tensor> parts) {
  std::vector<Tensor> v(parts);
  return concat_lastdim(std::span<const Tensor>(v));
}

// Stack J same-shape vectors [K] into a matrix [J, K].
inline Tensor stack_rows(std::span<const Tensor> rows) {
  if (rows.empty()) throw std::invalid_argument("stack_rows: no inputs");
  const std::size_t k = rows.front().size();
  for (const Tensor& r : rows)
    if (r.rank() != 1 || r.size() != k)
      throw std::invalid_argument("stack_rows: rows must share shape [K]");
  std::vector<double> out;
  out.reserve(rows.size() * k);
  for (const Tensor& r : rows)
    out.insert(out.end(), r.data().begin(), r.data().end());
  std::vector<Tensor> parents(rows.begin(), rows.end());
  return make_op(Shape{rows.size(), k}, std::move(out), std::move(parents),
                 [k](Tensor::Node& self) {
                   for (std::size_t r = 0; r < self.parents.size(); ++r) {
                     Tensor::Node* p = self.parents[r].node();
                     if (!p->requires_grad) continue;
                     p->ensure_grad();
                     for (std::size_t c = 0; c < k; ++c)
                       p->grad[c] += self.grad[r * k + c];
                   }
                 });
}

// ---------------------------------------------------------------------------
// Nonlinearities and normalization.

inline Tensor relu(const Tensor& a) {
  std::vector<double> out(a.data());
  for (double& v : out) v = v > 0.0 ? v : 0.0;
  return make_op(a.shape(), std::move(out), {a}, [](Tensor::Node& self) {
    Tensor::Node* p = self.parents[0].node();
    if (!p->requires_grad) return;
    p->ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i)
      if (p->value[i] > 0.0) p->grad[i] += self.grad[i];
  });
}

inline Tensor tanh(const Tensor& a) {
  std::vector<double> out(a.data());
  for (double& v : out) v = std::tanh(v);
  return make_op(a.shape(), std::move(out), {a}, [](Tensor::Node& self) {
    Tensor::Node* p = self.parents[0].node();
    if (!p->requires_grad) return;
    p->ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i)
      p->grad[i] += self.grad[i] * (1.0 - self.value[i] * self.value[i]);
  });
}

// Softmax over the last dimension; each slice sums to 1.
inline Tensor softmax_lastdim(const Tensor& a) {
  if (a.rank() < 1) throw std::invalid_argument("softmax: rank must be >= 1");
  const std::size_t d = a.shape().back();
  const std::size_t slices = a.size() / d;
  std::vector<double> out(a.size());
  for (std::size_t s = 0; s < slices; ++s) {
    const double* x = a.data().data() + s * d;
    double* y = out.data() + s * d;
    double mx = x[0];
    for (std::size_t i = 1; i < d; ++i) mx = std::max(mx, x[i]);
    double sum = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      y[i] = std::exp(x[i] - mx);
      sum += y[i];
    }
    for (std::size_t i = 0; i < d; ++i) y[i] /= sum;
  }
  return make_op(a.shape(), std::move(out), {a}, [d](Tensor::Node& self) {
    Tensor::Node* p = self.parents[0].node();
    if (!p->requires_grad) return;
    p->ensure_grad();
    const std::size_t slices = self.value.size() / d;
    for (std::size_t s = 0; s < slices; ++s) {
      const double* y = self.value.data() + s * d;
      const double* g = self.grad.data() + s * d;
      double dot = 0.0;
      for (std::size_t i = 0; i < d; ++i) dot += y[i] * g[i];
      double* pg = p->grad.data() + s * d;
      for (std::size_t i = 0; i < d; ++i) pg[i] += y[i] * (g[i] - dot);
    }
  });
}

// Layer normalization over the last dimension with learned gain/bias.
// Before gain/bias, each slice has zero mean and unit variance (biased
// variance estimate, epsilon inside the square root).
inline Tensor layernorm_lastdim(const Tensor& x, const Tensor& gain,
                                const Tensor& bias, double eps = 1e-5) {
  if (x.rank() < 1)
    throw std::invalid_argument("layernorm: rank must be >= 1");
  const std::size_t d = x.shape().back();
  if (gain.size() != d || bias.size() != d)
    throw std::invalid_argument("layernorm: gain/bias must have length " +
                                std::to_string(d));
  const std::size_t slices = x.size() / d;
  std::vector<double> out(x.size());
  std::vector<double> inv_sd(slices), mean(slices);
  for (std::size_t s = 0; s < slices; ++s) {
    const double* xr = x.data().data() + s * d;
    double mu = 0.0;
    for (std::size_t i = 0; i < d; ++i) mu += xr[i];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t i = 0; i < d; ++i) var += (xr[i] - mu) * (xr[i] - mu);
    var /= static_cast<double>(d);
    const double isd = 1.0 / std::sqrt(var + eps);
    mean[s] = mu;
    inv_sd[s] = isd;
    double* yr = out.data() + s * d;
    for (std::size_t i = 0; i < d; ++i)
      yr[i] = (xr[i] - mu) * isd * gain.data()[i] + bias.data()[i];
  }
  return make_op(
      x.shape(), std::move(out), {x, gain, bias},
      [d, mean = std::move(mean), inv_sd = std::move(inv_sd)](
          Tensor::Node& self) {
        Tensor::Node* px = self.parents[0].node();
        Tensor::Node* pg = self.parents[1].node();
        Tensor::Node* pb = self.parents[2].node();
        const std::size_t slices = self.value.size() / d;
        const double dn = static_cast<double>(d);
        if (px->requires_grad) px->ensure_grad();
        if (pg->requires_grad) pg->ensure_grad();
        if (pb->requires_grad) pb->ensure_grad();
        for (std::size_t s = 0; s < slices; ++s) {
          const double* xr = px->value.data() + s * d;
          const double* g = self.grad.data() + s * d;
          const double mu = mean[s];
          const double isd = inv_sd[s];
          if (pg->requires_grad || pb->requires_grad) {
            for (std::size_t i = 0; i < d; ++i) {
              const double xhat = (xr[i] - mu) * isd;
              if (pg->requires_grad) pg->grad[i] += g[i] * xhat;
              if (pb->requires_grad) pb->grad[i] += g[i];
            }
          }
          if (px->requires_grad) {
            double sum_gy = 0.0, sum_gy_xhat = 0.0;
            for (std::size_t i = 0; i < d; ++i) {
              const double gy = g[i] * pg->value[i];
              const double xhat = (xr[i] - mu) * isd;
              sum_gy += gy;
              sum_gy_xhat += gy * xhat;
            }
            for (std::size_t i = 0; i < d; ++i) {
              const double gy = g[i] * pg->value[i];
              const double xhat = (xr[i] - mu) * isd;
              px->grad[s * d + i] +=
                  isd * (gy - sum_gy / dn - xhat * sum_gy_xhat / dn);
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Reductions, row masking, lookup, dropout.

inline Tensor sum(const Tensor& a) {
  double total = 0.0;
  for (double v : a.data()) total += v;
  return make_op({}, {total}, {a}, [](Tensor::Node& self) {
    Tensor::Node* p = self.parents[0].node();
    if (!p->requires_grad) return;
    p->ensure_grad();
    const double g = self.grad[0];
    for (double& gi : p->grad) gi += g;
  });
}

// Scales each leading-dimension block of x by weights[i]. Used to zero
// padded rows: the weights are data, not graph inputs.
inline Tensor scale_rows(const Tensor& x, std::vector<double> weights) {
  if (x.rank() < 1 || x.shape().front() != weights.size())
    throw std::invalid_argument(
        "scale_rows: leading extent must equal weight count");
  const std::size_t block = x.size() / weights.size();
  std::vector<double> out(x.size());
  for (std::size_t r = 0; r < weights.size(); ++r)
    for (std::size_t c = 0; c < block; ++c)
      out[r * block + c] = x.data()[r * block + c] * weights[r];
  return make_op(x.shape(), std::move(out), {x},
                 [w = std::move(weights), block](Tensor::Node& self) {
                   Tensor::Node* p = self.parents[0].node();
                   if (!p->requires_grad) return;
                   p->ensure_grad();
                   for (std::size_t r = 0; r < w.size(); ++r)
                     for (std::size_t c = 0; c < block; ++c)
                       p->grad[r * block + c] +=
                           self.grad[r * block + c] * w[r];
                 });
}

// Gathers rows of a [V, d] table into [N, d]; gradients scatter-add back.
inline Tensor embedding_rows(const Tensor& table,
                             std::vector<std::uint32_t> ids) {
  if (table.rank() != 2)
    throw std::invalid_argument("embedding_rows: table must be [V, d]");
  const std::size_t v = table.shape()[0];
  const std::size_t d = table.shape()[1];
  for (std::uint32_t id : ids)
    if (id >= v)
      throw std::invalid_argument("embedding_rows: id " + std::to_string(id) +
                                  " out of range for table with " +
                                  std::to_string(v) + " rows");
  std::vector<double> out(ids.size() * d);
  for (std::size_t i = 0; i < ids.size(); ++i)
    std::copy_n(table.data().data() + ids[i] * d, d, out.data() + i * d);
  return make_op(Shape{ids.size(), d}, std::move(out), {table},
                 [ids = std::move(ids), d](Tensor::Node& self) {
                   Tensor::Node* p = self.parents[0].node();
                   if (!p->requires_grad) return;
                   p->ensure_grad();
                   for (std::size_t i = 0; i < ids.size(); ++i)
                     for (std::size_t c = 0; c < d; ++c)
                       p->grad[ids[i] * d + c] += self.grad[i * d + c];
                 });
}

// Inverted dropout; active only when a training-time RNG is supplied.
inline Tensor dropout(const Tensor& x, double rate, Rng& rng) {
  if (rate <= 0.0) return x;
  if (rate >= 1.0) throw std::invalid_argument("dropout: rate must be < 1");
  const double keep = 1.0 - rate;
  std::vector<double> mask(x.size());
  for (double& m : mask) m = rng.uniform01() < rate ? 0.0 : 1.0 / keep;
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = x.data()[i] * mask[i];
  return make_op(x.shape(), std::move(out), {x},
                 [mask = std::move(mask)](Tensor::Node& self) {
                   Tensor::Node* p = self.parents[0].node();
                   if (!p->requires_grad) return;
                   p->ensure_grad();
                   for (std::size_t i = 0; i < mask.size(); ++i)
                     p->grad[i] += self.grad[i] * mask[i];
                 });
}

}  // namespace sert
