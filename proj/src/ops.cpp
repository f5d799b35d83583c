// Copyright 2026 The AALBERT Authors
// SPDX-License-Identifier: Apache-2.0

#include "aalbert/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>
#include <utility>

#include "aalbert/errors.hpp"

namespace aalbert {
namespace {

template <typename T>
using NodePtr = std::shared_ptr<Node<T>>;

template <typename T>
Tensor<T> record(Shape shape, std::vector<T> value, const char* op,
                 std::vector<NodePtr<T>> inputs, std::function<void(Node<T>&)> rule) {
  auto node = std::make_shared<Node<T>>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->op = op;
  const bool any = std::any_of(inputs.begin(), inputs.end(),
                               [](const NodePtr<T>& n) { return n->requires_grad; });
  if (any && grad_enabled()) {
    node->requires_grad = true;
    node->inputs = std::move(inputs);
    node->backward = std::move(rule);
  }
  return Tensor<T>::from_node(std::move(node));
}

[[noreturn]] void mismatch(const char* op, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a) + " vs " +
                   shape_string(b));
}

template <typename T>
void require_matrix(const char* op, const Tensor<T>& a) {
  if (a.dim() != 2) {
    throw ShapeError(std::string(op) + ": expected a matrix, got shape " + shape_string(a.shape()));
  }
}

template <typename T>
void require_same(const char* op, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) mismatch(op, a.shape(), b.shape());
}

// Rows of a tensor viewed as [numel / last, last].
template <typename T>
std::pair<std::size_t, std::size_t> rows_by_last(const Tensor<T>& a) {
  const std::size_t last = a.dim() == 0 ? 1 : a.shape().back();
  return {a.numel() / last, last};
}

}  // namespace

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.dim() != 2 || b.dim() != 2 || a.cols() != b.rows()) mismatch("matmul", a.shape(), b.shape());
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  std::vector<T> out(m * n, T(0));
  const T* pa = a.values().data();
  const T* pb = b.values().data();
  for (std::size_t i = 0; i < m; ++i) {
    T* row = out.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T aip = pa[i * k + p];
      const T* brow = pb + p * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += aip * brow[j];
    }
  }
  return record<T>({m, n}, std::move(out), "matmul", {a.node(), b.node()},
                   [m, k, n](Node<T>& self) {
                     Node<T>& na = *self.inputs[0];
                     Node<T>& nb = *self.inputs[1];
                     const T* g = self.grad.data();
                     if (na.requires_grad) {
                       T* ga = na.grad_buffer().data();
                       const T* vb = nb.value.data();
                       std::vector<T> bt(k * n);
                       for (std::size_t p = 0; p < k; ++p)
                         for (std::size_t j = 0; j < n; ++j) bt[j * k + p] = vb[p * n + j];
                       std::vector<T> acc(k);
                       for (std::size_t i = 0; i < m; ++i) {
                         const T* grow = g + i * n;
                         std::fill(acc.begin(), acc.end(), T(0));
                         for (std::size_t j = 0; j < n; ++j) {
                           const T gij = grow[j];
                           const T* btrow = bt.data() + j * k;
                           for (std::size_t p = 0; p < k; ++p) acc[p] += gij * btrow[p];
                         }
                         for (std::size_t p = 0; p < k; ++p) ga[i * k + p] += acc[p];
                       }
                     }
                     if (nb.requires_grad) {
                       T* gb = nb.grad_buffer().data();
                       const T* va = na.value.data();
                       for (std::size_t i = 0; i < m; ++i) {
                         const T* grow = g + i * n;
                         for (std::size_t p = 0; p < k; ++p) {
                           const T aip = va[i * k + p];
                           T* gbrow = gb + p * n;
                           for (std::size_t j = 0; j < n; ++j) gbrow[j] += aip * grow[j];
                         }
                       }
                     }
                   });
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require_same("add", a, b);
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] + b.values()[i];
  return record<T>(a.shape(), std::move(out), "add", {a.node(), b.node()}, [](Node<T>& self) {
    for (auto& in : self.inputs) {
      if (!in->requires_grad) continue;
      auto g = in->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  require_same("sub", a, b);
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] - b.values()[i];
  return record<T>(a.shape(), std::move(out), "sub", {a.node(), b.node()}, [](Node<T>& self) {
    if (self.inputs[0]->requires_grad) {
      auto g = self.inputs[0]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (self.inputs[1]->requires_grad) {
      auto g = self.inputs[1]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  require_same("mul", a, b);
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * b.values()[i];
  return record<T>(a.shape(), std::move(out), "mul", {a.node(), b.node()}, [](Node<T>& self) {
    Node<T>& na = *self.inputs[0];
    Node<T>& nb = *self.inputs[1];
    if (na.requires_grad) {
      auto g = na.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * nb.value[i];
    }
    if (nb.requires_grad) {
      auto g = nb.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * na.value[i];
    }
  });
}

template <typename T>
Tensor<T> add_row(const Tensor<T>& a, const Tensor<T>& bias) {
  if (a.dim() != 2 || bias.dim() != 1 || bias.size(0) != a.cols()) {
    mismatch("add_row", a.shape(), bias.shape());
  }
  const std::size_t m = a.rows(), n = a.cols();
  std::vector<T> out(a.values().begin(), a.values().end());
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] += bias.values()[j];
  return record<T>(a.shape(), std::move(out), "add_row", {a.node(), bias.node()},
                   [m, n](Node<T>& self) {
                     if (self.inputs[0]->requires_grad) {
                       auto g = self.inputs[0]->grad_buffer();
                       for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
                     }
                     if (self.inputs[1]->requires_grad) {
                       auto g = self.inputs[1]->grad_buffer();
                       for (std::size_t i = 0; i < m; ++i)
                         for (std::size_t j = 0; j < n; ++j) g[j] += self.grad[i * n + j];
                     }
                   });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * factor;
  return record<T>(a.shape(), std::move(out), "scale", {a.node()}, [factor](Node<T>& self) {
    auto g = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * factor;
  });
}

template <typename T>
Tensor<T> mul_scalar(const Tensor<T>& a, const Tensor<T>& s) {
  if (s.numel() != 1) mismatch("mul_scalar", a.shape(), s.shape());
  const T factor = s.values()[0];
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * factor;
  return record<T>(a.shape(), std::move(out), "mul_scalar", {a.node(), s.node()},
                   [](Node<T>& self) {
                     Node<T>& na = *self.inputs[0];
                     Node<T>& ns = *self.inputs[1];
                     if (na.requires_grad) {
                       auto g = na.grad_buffer();
                       for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * ns.value[0];
                     }
                     if (ns.requires_grad) {
                       T acc = T(0);
                       for (std::size_t i = 0; i < self.grad.size(); ++i) acc += self.grad[i] * na.value[i];
                       ns.grad_buffer()[0] += acc;
                     }
                   });
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
  require_matrix("transpose", a);
  const std::size_t m = a.rows(), n = a.cols();
  std::vector<T> out(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = a.values()[i * n + j];
  return record<T>({n, m}, std::move(out), "transpose", {a.node()}, [m, n](Node<T>& self) {
    auto g = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) g[i * n + j] += self.grad[j * m + i];
  });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) mismatch("reshape", a.shape(), shape);
  for (std::size_t d : shape) {
    if (d == 0) mismatch("reshape", a.shape(), shape);
  }
  std::vector<T> out(a.values().begin(), a.values().end());
  return record<T>(std::move(shape), std::move(out), "reshape", {a.node()}, [](Node<T>& self) {
    auto g = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& a) {
  const auto [rows, n] = rows_by_last(a);
  std::vector<T> out(a.numel());
  const T* x = a.values().data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = x + r * n;
    T* yr = out.data() + r * n;
    const T mx = *std::max_element(xr, xr + n);
    T total = T(0);
    for (std::size_t j = 0; j < n; ++j) {
      yr[j] = std::exp(xr[j] - mx);
      total += yr[j];
    }
    for (std::size_t j = 0; j < n; ++j) yr[j] /= total;
  }
  return record<T>(a.shape(), std::move(out), "softmax", {a.node()}, [rows, n](Node<T>& self) {
    auto g = self.inputs[0]->grad_buffer();
    for (std::size_t r = 0; r < rows; ++r) {
      const T* y = self.value.data() + r * n;
      const T* gy = self.grad.data() + r * n;
      T dot = T(0);
      for (std::size_t j = 0; j < n; ++j) dot += gy[j] * y[j];
      for (std::size_t j = 0; j < n; ++j) g[r * n + j] += y[j] * (gy[j] - dot);
    }
  });
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& a, const Tensor<T>& gamma, const Tensor<T>& beta, T epsilon) {
  if (a.dim() == 0 || gamma.dim() != 1 || beta.dim() != 1 || gamma.size(0) != a.shape().back() ||
      beta.size(0) != a.shape().back()) {
    mismatch("layer_norm", a.shape(), gamma.shape());
  }
  const auto [rows, n] = rows_by_last(a);
  std::vector<T> out(a.numel());
  std::vector<T> normalized(a.numel());
  std::vector<T> inv_std(rows);
  const T* x = a.values().data();
  const T* gm = gamma.values().data();
  const T* bt = beta.values().data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = x + r * n;
    T mu = T(0);
    for (std::size_t j = 0; j < n; ++j) mu += xr[j];
    mu /= static_cast<T>(n);
    T var = T(0);
    for (std::size_t j = 0; j < n; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= static_cast<T>(n);
    const T rstd = T(1) / std::sqrt(var + epsilon);
    inv_std[r] = rstd;
    for (std::size_t j = 0; j < n; ++j) {
      const T h = (xr[j] - mu) * rstd;
      normalized[r * n + j] = h;
      out[r * n + j] = gm[j] * h + bt[j];
    }
  }
  return record<T>(
      a.shape(), std::move(out), "layer_norm", {a.node(), gamma.node(), beta.node()},
      [rows, n, normalized = std::move(normalized), inv_std = std::move(inv_std)](Node<T>& self) {
        Node<T>& nx = *self.inputs[0];
        Node<T>& ng = *self.inputs[1];
        Node<T>& nb = *self.inputs[2];
        const T* gy = self.grad.data();
        if (ng.requires_grad) {
          auto g = ng.grad_buffer();
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < n; ++j) g[j] += gy[r * n + j] * normalized[r * n + j];
        }
        if (nb.requires_grad) {
          auto g = nb.grad_buffer();
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < n; ++j) g[j] += gy[r * n + j];
        }
        if (nx.requires_grad) {
          auto g = nx.grad_buffer();
          const T inv_n = T(1) / static_cast<T>(n);
          for (std::size_t r = 0; r < rows; ++r) {
            T mean_dh = T(0), mean_dh_h = T(0);
            for (std::size_t j = 0; j < n; ++j) {
              const T dh = gy[r * n + j] * ng.value[j];
              mean_dh += dh;
              mean_dh_h += dh * normalized[r * n + j];
            }
            mean_dh *= inv_n;
            mean_dh_h *= inv_n;
            for (std::size_t j = 0; j < n; ++j) {
              const T dh = gy[r * n + j] * ng.value[j];
              g[r * n + j] += inv_std[r] * (dh - mean_dh - normalized[r * n + j] * mean_dh_h);
            }
          }
        }
      });
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& a) {
  constexpr T kAlpha = T(0.7978845608028654);  // sqrt(2/pi)
  constexpr T kBeta = T(0.044715);
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const T x = a.values()[i];
    out[i] = T(0.5) * x * (T(1) + std::tanh(kAlpha * (x + kBeta * x * x * x)));
  }
  return record<T>(a.shape(), std::move(out), "gelu", {a.node()}, [](Node<T>& self) {
    Node<T>& in = *self.inputs[0];
    auto g = in.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const T x = in.value[i];
      const T t = std::tanh(kAlpha * (x + kBeta * x * x * x));
      const T d = T(0.5) * (T(1) + t) +
                  T(0.5) * x * (T(1) - t * t) * kAlpha * (T(1) + T(3) * kBeta * x * x);
      g[i] += self.grad[i] * d;
    }
  });
}

template <typename T>
Tensor<T> l1_loss(const Tensor<T>& predicted, const Tensor<T>& target,
                  std::span<const std::uint8_t> row_mask) {
  require_same("l1_loss", predicted, target);
  require_matrix("l1_loss", predicted);
  const std::size_t m = predicted.rows(), n = predicted.cols();
  if (row_mask.size() != m) {
    throw ShapeError("l1_loss: mask length " + std::to_string(row_mask.size()) +
                     " does not match " + std::to_string(m) + " rows");
  }
  std::vector<std::uint8_t> mask(row_mask.begin(), row_mask.end());
  const std::size_t selected =
      static_cast<std::size_t>(std::count_if(mask.begin(), mask.end(), [](auto v) { return v != 0; }));
  if (selected == 0) return Tensor<T>::scalar(T(0));
  const T count = static_cast<T>(selected * n);
  T total = T(0);
  for (std::size_t i = 0; i < m; ++i) {
    if (!mask[i]) continue;
    for (std::size_t j = 0; j < n; ++j)
      total += std::abs(predicted.values()[i * n + j] - target.values()[i * n + j]);
  }
  return record<T>(Shape{}, {total / count}, "l1_loss", {predicted.node(), target.node()},
                   [m, n, count, mask = std::move(mask)](Node<T>& self) {
                     Node<T>& np = *self.inputs[0];
                     if (!np.requires_grad) return;
                     const Node<T>& nt = *self.inputs[1];
                     auto g = np.grad_buffer();
                     const T scale_by = self.grad[0] / count;
                     for (std::size_t i = 0; i < m; ++i) {
                       if (!mask[i]) continue;
                       for (std::size_t j = 0; j < n; ++j) {
                         const T d = np.value[i * n + j] - nt.value[i * n + j];
                         if (d > T(0)) g[i * n + j] += scale_by;
                         else if (d < T(0)) g[i * n + j] -= scale_by;
                       }
                     }
                   });
}

template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const int> labels) {
  require_matrix("cross_entropy", logits);
  const std::size_t m = logits.rows(), c = logits.cols();
  if (labels.size() != m) {
    throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(m) + " rows");
  }
  std::vector<T> probs(m * c);
  std::vector<int> kept(labels.begin(), labels.end());
  T total = T(0);
  for (std::size_t i = 0; i < m; ++i) {
    if (kept[i] < 0 || static_cast<std::size_t>(kept[i]) >= c) {
      throw ShapeError("cross_entropy: label " + std::to_string(kept[i]) + " outside [0," +
                       std::to_string(c) + ")");
    }
    const T* z = logits.values().data() + i * c;
    const T mx = *std::max_element(z, z + c);
    T denom = T(0);
    for (std::size_t j = 0; j < c; ++j) denom += std::exp(z[j] - mx);
    const T log_denom = std::log(denom) + mx;
    for (std::size_t j = 0; j < c; ++j) probs[i * c + j] = std::exp(z[j] - log_denom);
    total += log_denom - z[kept[i]];
  }
  return record<T>(Shape{}, {total / static_cast<T>(m)}, "cross_entropy", {logits.node()},
                   [m, c, probs = std::move(probs), kept = std::move(kept)](Node<T>& self) {
                     auto g = self.inputs[0]->grad_buffer();
                     const T s = self.grad[0] / static_cast<T>(m);
                     for (std::size_t i = 0; i < m; ++i) {
                       for (std::size_t j = 0; j < c; ++j) g[i * c + j] += s * probs[i * c + j];
                       g[i * c + static_cast<std::size_t>(kept[i])] -= s;
                     }
                   });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a, std::size_t axis) {
  require_matrix("mean", a);
  if (axis > 1) throw ShapeError("mean: axis " + std::to_string(axis) + " out of range for a matrix");
  const std::size_t m = a.rows(), n = a.cols();
  const std::size_t out_rows = axis == 0 ? 1 : m;
  const std::size_t out_cols = axis == 0 ? n : 1;
  const T inv = T(1) / static_cast<T>(axis == 0 ? m : n);
  std::vector<T> out(out_rows * out_cols, T(0));
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[axis == 0 ? j : i] += a.values()[i * n + j];
  for (T& v : out) v *= inv;
  return record<T>({out_rows, out_cols}, std::move(out), "mean", {a.node()},
                   [m, n, axis, inv](Node<T>& self) {
                     auto g = self.inputs[0]->grad_buffer();
                     for (std::size_t i = 0; i < m; ++i)
                       for (std::size_t j = 0; j < n; ++j)
                         g[i * n + j] += self.grad[axis == 0 ? j : i] * inv;
                   });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  T total = T(0);
  for (T v : a.values()) total += v;
  return record<T>(Shape{}, {total}, "sum", {a.node()}, [](Node<T>& self) {
    auto g = self.inputs[0]->grad_buffer();
    for (T& v : g) v += self.grad[0];
  });
}

template <typename T>
Tensor<T> concat(std::span<const Tensor<T>> parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  if (axis > 1) throw ShapeError("concat: axis " + std::to_string(axis) + " out of range");
  for (const auto& p : parts) {
    require_matrix("concat", p);
    const std::size_t other = 1 - axis;
    if (p.size(other) != parts[0].size(other)) mismatch("concat", parts[0].shape(), p.shape());
  }
  std::vector<NodePtr<T>> inputs;
  std::vector<std::size_t> extents;
  std::size_t total = 0;
  for (const auto& p : parts) {
    inputs.push_back(p.node());
    extents.push_back(p.size(axis));
    total += p.size(axis);
  }
  const std::size_t m = axis == 0 ? total : parts[0].rows();
  const std::size_t n = axis == 0 ? parts[0].cols() : total;
  std::vector<T> out(m * n);
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const std::size_t pm = p.rows(), pn = p.cols();
    for (std::size_t i = 0; i < pm; ++i)
      for (std::size_t j = 0; j < pn; ++j) {
        const std::size_t oi = axis == 0 ? i + offset : i;
        const std::size_t oj = axis == 0 ? j : j + offset;
        out[oi * n + oj] = p.values()[i * pn + j];
      }
    offset += p.size(axis);
  }
  return record<T>({m, n}, std::move(out), "concat", std::move(inputs),
                   [axis, n, extents = std::move(extents)](Node<T>& self) {
                     std::size_t off = 0;
                     for (std::size_t k = 0; k < self.inputs.size(); ++k) {
                       Node<T>& in = *self.inputs[k];
                       if (in.requires_grad) {
                         auto g = in.grad_buffer();
                         const std::size_t pm = in.shape[0], pn = in.shape[1];
                         for (std::size_t i = 0; i < pm; ++i)
                           for (std::size_t j = 0; j < pn; ++j) {
                             const std::size_t oi = axis == 0 ? i + off : i;
                             const std::size_t oj = axis == 0 ? j : j + off;
                             g[i * pn + j] += self.grad[oi * n + oj];
                           }
                       }
                       off += extents[k];
                     }
                   });
}

template <typename T>
Tensor<T> slice_cols(const Tensor<T>& a, std::size_t begin, std::size_t end) {
  require_matrix("slice_cols", a);
  if (begin >= end || end > a.cols()) {
    throw ShapeError("slice_cols: range [" + std::to_string(begin) + "," + std::to_string(end) +
                     ") invalid for shape " + shape_string(a.shape()));
  }
  const std::size_t m = a.rows(), n = a.cols(), w = end - begin;
  std::vector<T> out(m * w);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < w; ++j) out[i * w + j] = a.values()[i * n + begin + j];
  return record<T>({m, w}, std::move(out), "slice_cols", {a.node()},
                   [m, n, w, begin](Node<T>& self) {
                     auto g = self.inputs[0]->grad_buffer();
                     for (std::size_t i = 0; i < m; ++i)
                       for (std::size_t j = 0; j < w; ++j) g[i * n + begin + j] += self.grad[i * w + j];
                   });
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  if (x.dim() != 2 || weight.dim() != 2 || x.cols() != weight.rows()) {
    mismatch("linear", x.shape(), weight.shape());
  }
  return add_row(matmul(x, weight), bias);
}

template <typename T>
Tensor<T> dropout(const Tensor<T>& a, double rate, Rng& rng) {
  if (rate < 0.0 || rate >= 1.0) throw std::invalid_argument("dropout: rate must lie in [0,1)");
  if (rate == 0.0) return a;
  const T keep_scale = T(1.0 / (1.0 - rate));
  std::vector<T> mask(a.numel());
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    mask[i] = rng.uniform() < rate ? T(0) : keep_scale;
    out[i] = a.values()[i] * mask[i];
  }
  return record<T>(a.shape(), std::move(out), "dropout", {a.node()},
                   [mask = std::move(mask)](Node<T>& self) {
                     auto g = self.inputs[0]->grad_buffer();
                     for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * mask[i];
                   });
}

template <typename T>
Tensor<T> weighted_sum(std::span<const Tensor<T>> parts, const Tensor<T>& weights) {
  if (parts.empty()) throw ShapeError("weighted_sum: no inputs");
  if (weights.numel() != parts.size()) {
    throw ShapeError("weighted_sum: " + std::to_string(weights.numel()) + " weights for " +
                     std::to_string(parts.size()) + " inputs");
  }
  std::vector<NodePtr<T>> inputs{weights.node()};
  std::vector<T> out(parts[0].numel(), T(0));
  for (std::size_t l = 0; l < parts.size(); ++l) {
    require_same("weighted_sum", parts[0], parts[l]);
    inputs.push_back(parts[l].node());
    const T w = weights.values()[l];
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += w * parts[l].values()[i];
  }
  return record<T>(parts[0].shape(), std::move(out), "weighted_sum", std::move(inputs),
                   [](Node<T>& self) {
                     Node<T>& nw = *self.inputs[0];
                     for (std::size_t l = 1; l < self.inputs.size(); ++l) {
                       Node<T>& part = *self.inputs[l];
                       if (part.requires_grad) {
                         auto g = part.grad_buffer();
                         const T w = nw.value[l - 1];
                         for (std::size_t i = 0; i < g.size(); ++i) g[i] += w * self.grad[i];
                       }
                       if (nw.requires_grad) {
                         T acc = T(0);
                         for (std::size_t i = 0; i < self.grad.size(); ++i) acc += self.grad[i] * part.value[i];
                         nw.grad_buffer()[l - 1] += acc;
                       }
                     }
                   });
}

#define AALBERT_INSTANTIATE_OPS(T)                                                          \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                           \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                              \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                              \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                              \
  template Tensor<T> add_row(const Tensor<T>&, const Tensor<T>&);                          \
  template Tensor<T> scale(const Tensor<T>&, T);                                           \
  template Tensor<T> mul_scalar(const Tensor<T>&, const Tensor<T>&);                       \
  template Tensor<T> transpose(const Tensor<T>&);                                          \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                     \
  template Tensor<T> softmax(const Tensor<T>&);                                            \
  template Tensor<T> layer_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);  \
  template Tensor<T> gelu(const Tensor<T>&);                                               \
  template Tensor<T> l1_loss(const Tensor<T>&, const Tensor<T>&,                           \
                             std::span<const std::uint8_t>);                               \
  template Tensor<T> cross_entropy(const Tensor<T>&, std::span<const int>);                \
  template Tensor<T> mean(const Tensor<T>&, std::size_t);                                  \
  template Tensor<T> sum(const Tensor<T>&);                                                \
  template Tensor<T> concat(std::span<const Tensor<T>>, std::size_t);                      \
  template Tensor<T> slice_cols(const Tensor<T>&, std::size_t, std::size_t);               \
  template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);         \
  template Tensor<T> dropout(const Tensor<T>&, double, Rng&);                              \
  template Tensor<T> weighted_sum(std::span<const Tensor<T>>, const Tensor<T>&);

AALBERT_INSTANTIATE_OPS(float)
AALBERT_INSTANTIATE_OPS(double)

#undef AALBERT_INSTANTIATE_OPS

}  // namespace aalbert
