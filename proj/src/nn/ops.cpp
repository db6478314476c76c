#include "lcd/nn/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/Core>

namespace lcd::nn {
namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using CMatMap = Eigen::Map<const RowMat<T>>;

template <typename T>
using BackwardFn = std::function<void(Node<T>&)>;

template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T>&& value, std::initializer_list<const Tensor<T>*> inputs,
                      BackwardFn<T> fn) {
  Tensor<T> out(std::move(shape), std::move(value));
  if (!grad_enabled()) return out;
  bool any = false;
  for (const auto* in : inputs) any = any || in->requires_grad();
  if (!any) return out;
  Node<T>& n = *out.node();
  n.requires_grad = true;
  for (const auto* in : inputs) n.parents.push_back(in->node());
  n.backward = std::move(fn);
  return out;
}

template <typename T>
Tensor<T> make_result_many(Shape shape, std::vector<T>&& value, const std::vector<Tensor<T>>& inputs,
                           BackwardFn<T> fn) {
  Tensor<T> out(std::move(shape), std::move(value));
  if (!grad_enabled()) return out;
  bool any = false;
  for (const auto& in : inputs) any = any || in.requires_grad();
  if (!any) return out;
  Node<T>& n = *out.node();
  n.requires_grad = true;
  for (const auto& in : inputs) n.parents.push_back(in.node());
  n.backward = std::move(fn);
  return out;
}

void require(bool ok, const char* what) {
  if (!ok) throw Error(ErrorCode::kShapeMismatch, what);
}

template <typename T>
void require_2d(const Tensor<T>& t, const char* op) {
  if (!t.defined() || t.ndim() != 2) throw Error(ErrorCode::kShapeMismatch, std::string(op) + ": expected a 2-D tensor");
}

template <typename T>
bool valid(const Mask& m, std::size_t i) {
  return m.empty() || m[i] != 0;
}

}  // namespace

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  require_2d(a, "matmul");
  require_2d(b, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  require(b.dim(0) == k, "matmul: inner dimensions differ");
  std::vector<T> out(m * n);
  MatMap<T>(out.data(), m, n).noalias() = CMatMap<T>(a.data(), m, k) * CMatMap<T>(b.data(), k, n);
  return make_result<T>({m, n}, std::move(out), {&a, &b}, [m, k, n](Node<T>& self) {
    const CMatMap<T> g(self.grad.data(), m, n);
    Node<T>& pa = *self.parents[0];
    Node<T>& pb = *self.parents[1];
    if (pa.requires_grad)
      MatMap<T>(pa.grad_buffer(), m, k).noalias() += g * CMatMap<T>(pb.value.data(), k, n).transpose();
    if (pb.requires_grad)
      MatMap<T>(pb.grad_buffer(), k, n).noalias() += CMatMap<T>(pa.value.data(), m, k).transpose() * g;
  });
}

template <typename T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b) {
  require_2d(a, "matmul_nt");
  require_2d(b, "matmul_nt");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
  require(b.dim(1) == k, "matmul_nt: inner dimensions differ");
  std::vector<T> out(m * n);
  MatMap<T>(out.data(), m, n).noalias() = CMatMap<T>(a.data(), m, k) * CMatMap<T>(b.data(), n, k).transpose();
  return make_result<T>({m, n}, std::move(out), {&a, &b}, [m, k, n](Node<T>& self) {
    const CMatMap<T> g(self.grad.data(), m, n);
    Node<T>& pa = *self.parents[0];
    Node<T>& pb = *self.parents[1];
    if (pa.requires_grad) MatMap<T>(pa.grad_buffer(), m, k).noalias() += g * CMatMap<T>(pb.value.data(), n, k);
    if (pb.requires_grad)
      MatMap<T>(pb.grad_buffer(), n, k).noalias() += g.transpose() * CMatMap<T>(pa.value.data(), m, k);
  });
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require(a.shape() == b.shape(), "add: shapes differ");
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  return make_result<T>(a.shape(), std::move(out), {&a, &b}, [](Node<T>& self) {
    for (auto& p : self.parents) {
      if (!p->requires_grad) continue;
      T* g = p->grad_buffer();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    }
  });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  require(a.shape() == b.shape(), "sub: shapes differ");
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  return make_result<T>(a.shape(), std::move(out), {&a, &b}, [](Node<T>& self) {
    for (int s = 0; s < 2; ++s) {
      Node<T>& p = *self.parents[s];
      if (!p.requires_grad) continue;
      const T sign = s == 0 ? T(1) : T(-1);
      T* g = p.grad_buffer();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += sign * self.grad[i];
    }
  });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  require(a.shape() == b.shape(), "mul: shapes differ");
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  return make_result<T>(a.shape(), std::move(out), {&a, &b}, [](Node<T>& self) {
    Node<T>& pa = *self.parents[0];
    Node<T>& pb = *self.parents[1];
    if (pa.requires_grad) {
      T* g = pa.grad_buffer();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * pb.value[i];
    }
    if (pb.requires_grad) {
      T* g = pb.grad_buffer();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * pa.value[i];
    }
  });
}

template <typename T>
Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& bias) {
  require_2d(x, "add_bias");
  const std::size_t m = x.dim(0), n = x.dim(1);
  require(bias.size() == n, "add_bias: bias length differs from column count");
  std::vector<T> out(x.values());
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] += bias[j];
  return make_result<T>(x.shape(), std::move(out), {&x, &bias}, [m, n](Node<T>& self) {
    Node<T>& px = *self.parents[0];
    Node<T>& pb = *self.parents[1];
    if (px.requires_grad) {
      T* g = px.grad_buffer();
      for (std::size_t i = 0; i < m * n; ++i) g[i] += self.grad[i];
    }
    if (pb.requires_grad) {
      T* g = pb.grad_buffer();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) g[j] += self.grad[i * n + j];
    }
  });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor) {
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = factor * x[i];
  return make_result<T>(x.shape(), std::move(out), {&x}, [factor](Node<T>& self) {
    T* g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += factor * self.grad[i];
  });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& x, T value) {
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + value;
  return make_result<T>(x.shape(), std::move(out), {&x}, [](Node<T>& self) {
    T* g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
  });
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  return add_bias(matmul(x, w), b);
}

template <typename T>
Tensor<T> leaky_relu(const Tensor<T>& x, T alpha) {
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] >= T(0) ? x[i] : alpha * x[i];
  return make_result<T>(x.shape(), std::move(out), {&x}, [alpha](Node<T>& self) {
    Node<T>& p = *self.parents[0];
    T* g = p.grad_buffer();
    for (std::size_t i = 0; i < self.grad.size(); ++i)
      g[i] += p.value[i] >= T(0) ? self.grad[i] : alpha * self.grad[i];
  });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::max(T(0), x[i]);
  return make_result<T>(x.shape(), std::move(out), {&x}, [](Node<T>& self) {
    Node<T>& p = *self.parents[0];
    T* g = p.grad_buffer();
    for (std::size_t i = 0; i < self.grad.size(); ++i)
      if (p.value[i] > T(0)) g[i] += self.grad[i];
  });
}

template <typename T>
Tensor<T> tanh(const Tensor<T>& x) {
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(x[i]);
  return make_result<T>(x.shape(), std::move(out), {&x}, [](Node<T>& self) {
    T* g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * (T(1) - self.value[i] * self.value[i]);
  });
}

template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& x, const Mask& column_mask) {
  require_2d(x, "softmax_rows");
  const std::size_t m = x.dim(0), n = x.dim(1);
  require(column_mask.empty() || column_mask.size() == n, "softmax_rows: mask length differs from column count");
  bool any = false;
  for (std::size_t j = 0; j < n; ++j) any = any || valid<T>(column_mask, j);
  if (!any || n == 0) throw Error(ErrorCode::kDegenerate, "softmax: every entry is masked");
  std::vector<T> out(m * n, T(0));
  for (std::size_t i = 0; i < m; ++i) {
    const T* row = x.data() + i * n;
    T mx = -std::numeric_limits<T>::infinity();
    for (std::size_t j = 0; j < n; ++j)
      if (valid<T>(column_mask, j)) mx = std::max(mx, row[j]);
    T total = 0;
    for (std::size_t j = 0; j < n; ++j)
      if (valid<T>(column_mask, j)) total += (out[i * n + j] = std::exp(row[j] - mx));
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] /= total;
  }
  return make_result<T>(x.shape(), std::move(out), {&x}, [m, n](Node<T>& self) {
    T* g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < m; ++i) {
      const T* y = self.value.data() + i * n;
      const T* dy = self.grad.data() + i * n;
      T dot = 0;
      for (std::size_t j = 0; j < n; ++j) dot += y[j] * dy[j];
      for (std::size_t j = 0; j < n; ++j) g[i * n + j] += y[j] * (dy[j] - dot);
    }
  });
}

template <typename T>
Tensor<T> concat_cols(const std::vector<Tensor<T>>& parts) {
  require(!parts.empty(), "concat_cols: nothing to concatenate");
  const std::size_t m = parts[0].dim(0);
  std::vector<std::size_t> widths;
  std::size_t n = 0;
  for (const auto& p : parts) {
    require_2d(p, "concat_cols");
    require(p.dim(0) == m, "concat_cols: row counts differ");
    widths.push_back(p.dim(1));
    n += p.dim(1);
  }
  std::vector<T> out(m * n);
  std::size_t off = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    for (std::size_t i = 0; i < m; ++i)
      std::copy_n(parts[k].data() + i * widths[k], widths[k], out.data() + i * n + off);
    off += widths[k];
  }
  return make_result_many<T>({m, n}, std::move(out), parts, [m, n, widths](Node<T>& self) {
    std::size_t off = 0;
    for (std::size_t k = 0; k < widths.size(); ++k) {
      Node<T>& p = *self.parents[k];
      if (p.requires_grad) {
        T* g = p.grad_buffer();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < widths[k]; ++j) g[i * widths[k] + j] += self.grad[i * n + off + j];
      }
      off += widths[k];
    }
  });
}

template <typename T>
Tensor<T> slice_cols(const Tensor<T>& x, std::size_t start, std::size_t count) {
  require_2d(x, "slice_cols");
  const std::size_t m = x.dim(0), n = x.dim(1);
  require(start + count <= n, "slice_cols: range exceeds column count");
  std::vector<T> out(m * count);
  for (std::size_t i = 0; i < m; ++i) std::copy_n(x.data() + i * n + start, count, out.data() + i * count);
  return make_result<T>({m, count}, std::move(out), {&x}, [m, n, start, count](Node<T>& self) {
    T* g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < count; ++j) g[i * n + start + j] += self.grad[i * count + j];
  });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  require(numel(shape) == x.size(), "reshape: element count differs");
  std::vector<T> out(x.values());
  return make_result<T>(std::move(shape), std::move(out), {&x}, [](Node<T>& self) {
    T* g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
  });
}

template <typename T>
Tensor<T> mask_rows(const Tensor<T>& x, const Mask& row_mask) {
  if (row_mask.empty()) return x;
  const std::size_t m = x.dim(0), n = x.size() / std::max<std::size_t>(1, m);
  require(row_mask.size() == m, "mask_rows: mask length differs from row count");
  std::vector<T> out(x.values());
  for (std::size_t i = 0; i < m; ++i)
    if (!row_mask[i]) std::fill_n(out.data() + i * n, n, T(0));
  return make_result<T>(x.shape(), std::move(out), {&x}, [row_mask, m, n](Node<T>& self) {
    T* g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < m; ++i)
      if (row_mask[i])
        for (std::size_t j = 0; j < n; ++j) g[i * n + j] += self.grad[i * n + j];
  });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T total = 0;
  for (T v : x.values()) total += v;
  return make_result<T>({}, {total}, {&x}, [](Node<T>& self) {
    Node<T>& p = *self.parents[0];
    T* g = p.grad_buffer();
    for (std::size_t i = 0; i < p.value.size(); ++i) g[i] += self.grad[0];
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  require(x.size() > 0, "mean: empty tensor");
  return scale(sum(x), T(1) / static_cast<T>(x.size()));
}

template <typename T>
Tensor<T> l2_normalize_rows(const Tensor<T>& x) {
  const std::size_t m = x.ndim() == 2 ? x.dim(0) : 1;
  const std::size_t n = x.size() / std::max<std::size_t>(1, m);
  std::vector<T> out(x.size());
  std::vector<T> norms(m);
  for (std::size_t i = 0; i < m; ++i) {
    T s = 0;
    for (std::size_t j = 0; j < n; ++j) s += x[i * n + j] * x[i * n + j];
    norms[i] = std::sqrt(s);
    if (!(norms[i] > T(1e-12))) throw Error(ErrorCode::kDegenerate, "l2_normalize: near-zero row");
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = x[i * n + j] / norms[i];
  }
  return make_result<T>(x.shape(), std::move(out), {&x}, [m, n, norms](Node<T>& self) {
    T* g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < m; ++i) {
      const T* y = self.value.data() + i * n;
      const T* dy = self.grad.data() + i * n;
      T dot = 0;
      for (std::size_t j = 0; j < n; ++j) dot += y[j] * dy[j];
      for (std::size_t j = 0; j < n; ++j) g[i * n + j] += (dy[j] - y[j] * dot) / norms[i];
    }
  });
}

template <typename T>
Tensor<T> distance(const Tensor<T>& a, const Tensor<T>& b) {
  require(a.size() == b.size(), "distance: sizes differ");
  T s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  const T d = std::sqrt(s);
  return make_result<T>({}, {d}, {&a, &b}, [](Node<T>& self) {
    const T d = self.value[0];
    if (d == T(0)) return;  // subgradient 0 at coincident points
    Node<T>& pa = *self.parents[0];
    Node<T>& pb = *self.parents[1];
    const T gd = self.grad[0] / d;
    if (pa.requires_grad) {
      T* g = pa.grad_buffer();
      for (std::size_t i = 0; i < pa.value.size(); ++i) g[i] += gd * (pa.value[i] - pb.value[i]);
    }
    if (pb.requires_grad) {
      T* g = pb.grad_buffer();
      for (std::size_t i = 0; i < pb.value.size(); ++i) g[i] -= gd * (pa.value[i] - pb.value[i]);
    }
  });
}

template <typename T>
Tensor<T> batch_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, Tensor<T>& running_mean,
                     Tensor<T>& running_var, bool training, const Mask& row_mask, T momentum, T eps) {
  require_2d(x, "batch_norm");
  const std::size_t m = x.dim(0), n = x.dim(1);
  require(gamma.size() == n && beta.size() == n && running_mean.size() == n && running_var.size() == n,
          "batch_norm: parameter length differs from feature count");
  require(row_mask.empty() || row_mask.size() == m, "batch_norm: mask length differs from row count");
  std::size_t count = 0;
  for (std::size_t i = 0; i < m; ++i) count += valid<T>(row_mask, i) ? 1 : 0;

  std::vector<T> mu(n, T(0)), inv_std(n, T(0));
  if (training) {
    if (count < 2) throw Error(ErrorCode::kInvalidArgument, "batch_norm: training mode needs at least 2 rows");
    std::vector<T> var(n, T(0));
    for (std::size_t i = 0; i < m; ++i)
      if (valid<T>(row_mask, i))
        for (std::size_t j = 0; j < n; ++j) mu[j] += x[i * n + j];
    for (auto& v : mu) v /= static_cast<T>(count);
    for (std::size_t i = 0; i < m; ++i)
      if (valid<T>(row_mask, i))
        for (std::size_t j = 0; j < n; ++j) var[j] += (x[i * n + j] - mu[j]) * (x[i * n + j] - mu[j]);
    for (std::size_t j = 0; j < n; ++j) {
      var[j] /= static_cast<T>(count);
      inv_std[j] = T(1) / std::sqrt(var[j] + eps);
      running_mean[j] = momentum * running_mean[j] + (T(1) - momentum) * mu[j];
      running_var[j] = momentum * running_var[j] + (T(1) - momentum) * var[j];
    }
  } else {
    for (std::size_t j = 0; j < n; ++j) {
      mu[j] = running_mean[j];
      inv_std[j] = T(1) / std::sqrt(running_var[j] + eps);
    }
  }
  std::vector<T> xhat(m * n, T(0)), out(m * n, T(0));
  for (std::size_t i = 0; i < m; ++i) {
    if (!valid<T>(row_mask, i)) continue;
    for (std::size_t j = 0; j < n; ++j) {
      xhat[i * n + j] = (x[i * n + j] - mu[j]) * inv_std[j];
      out[i * n + j] = gamma[j] * xhat[i * n + j] + beta[j];
    }
  }
  return make_result<T>(x.shape(), std::move(out), {&x, &gamma, &beta},
                        [m, n, count, training, row_mask, xhat = std::move(xhat), inv_std](Node<T>& self) {
    Node<T>& px = *self.parents[0];
    Node<T>& pg = *self.parents[1];
    Node<T>& pb = *self.parents[2];
    const T* dy = self.grad.data();
    std::vector<T> sum_dy(n, T(0)), sum_dy_xhat(n, T(0));
    for (std::size_t i = 0; i < m; ++i) {
      if (!row_mask.empty() && !row_mask[i]) continue;
      for (std::size_t j = 0; j < n; ++j) {
        sum_dy[j] += dy[i * n + j];
        sum_dy_xhat[j] += dy[i * n + j] * xhat[i * n + j];
      }
    }
    if (pg.requires_grad) {
      T* g = pg.grad_buffer();
      for (std::size_t j = 0; j < n; ++j) g[j] += sum_dy_xhat[j];
    }
    if (pb.requires_grad) {
      T* g = pb.grad_buffer();
      for (std::size_t j = 0; j < n; ++j) g[j] += sum_dy[j];
    }
    if (px.requires_grad) {
      T* g = px.grad_buffer();
      const T cnt = static_cast<T>(count);
      for (std::size_t i = 0; i < m; ++i) {
        if (!row_mask.empty() && !row_mask[i]) continue;
        for (std::size_t j = 0; j < n; ++j) {
          const T scale_j = pg.value[j] * inv_std[j];
          if (training)
            g[i * n + j] += scale_j * (dy[i * n + j] - sum_dy[j] / cnt - xhat[i * n + j] * sum_dy_xhat[j] / cnt);
          else
            g[i * n + j] += scale_j * dy[i * n + j];
        }
      }
    }
  });
}

namespace {

template <typename T>
void im2col(const T* img, std::size_t c, std::size_t h, std::size_t w, int k, int pad, std::size_t ho,
            std::size_t wo, T* cols) {
  for (std::size_t ch = 0; ch < c; ++ch)
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        T* row = cols + ((ch * k + ky) * k + kx) * ho * wo;
        for (std::size_t y = 0; y < ho; ++y) {
          const long sy = static_cast<long>(y) + ky - pad;
          for (std::size_t x = 0; x < wo; ++x) {
            const long sx = static_cast<long>(x) + kx - pad;
            row[y * wo + x] = (sy < 0 || sx < 0 || sy >= static_cast<long>(h) || sx >= static_cast<long>(w))
                                  ? T(0)
                                  : img[(ch * h + sy) * w + sx];
          }
        }
      }
}

template <typename T>
void col2im(const T* cols, std::size_t c, std::size_t h, std::size_t w, int k, int pad, std::size_t ho,
            std::size_t wo, T* img) {
  for (std::size_t ch = 0; ch < c; ++ch)
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        const T* row = cols + ((ch * k + ky) * k + kx) * ho * wo;
        for (std::size_t y = 0; y < ho; ++y) {
          const long sy = static_cast<long>(y) + ky - pad;
          if (sy < 0 || sy >= static_cast<long>(h)) continue;
          for (std::size_t x = 0; x < wo; ++x) {
            const long sx = static_cast<long>(x) + kx - pad;
            if (sx < 0 || sx >= static_cast<long>(w)) continue;
            img[(ch * h + sy) * w + sx] += row[y * wo + x];
          }
        }
      }
}

}  // namespace

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, int padding) {
  require(x.ndim() == 4 && w.ndim() == 4, "conv2d: expected [N,C,H,W] input and [O,C,k,k] kernel");
  const std::size_t nb = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const std::size_t o = w.dim(0);
  const int k = static_cast<int>(w.dim(2));
  require(w.dim(1) == c && w.dim(3) == w.dim(2), "conv2d: kernel does not match input channels");
  require(b.size() == o, "conv2d: bias length differs from output channels");
  require(static_cast<long>(h) + 2 * padding - k + 1 > 0 && static_cast<long>(wd) + 2 * padding - k + 1 > 0,
          "conv2d: kernel larger than padded input");
  const std::size_t ho = h + 2 * padding - k + 1, wo = wd + 2 * padding - k + 1;
  const std::size_t ckk = c * k * k, hw = ho * wo;
  std::vector<T> out(nb * o * hw);
  std::vector<T> cols(ckk * hw);
  const CMatMap<T> wm(w.data(), o, ckk);
  for (std::size_t n = 0; n < nb; ++n) {
    im2col(x.data() + n * c * h * wd, c, h, wd, k, padding, ho, wo, cols.data());
    MatMap<T> om(out.data() + n * o * hw, o, hw);
    om.noalias() = wm * CMatMap<T>(cols.data(), ckk, hw);
    for (std::size_t oc = 0; oc < o; ++oc) om.row(oc).array() += b[oc];
  }
  return make_result<T>({nb, o, ho, wo}, std::move(out), {&x, &w, &b},
                        [=](Node<T>& self) {
    Node<T>& px = *self.parents[0];
    Node<T>& pw = *self.parents[1];
    Node<T>& pb = *self.parents[2];
    std::vector<T> cols(ckk * hw), dcols(ckk * hw);
    const CMatMap<T> wm(pw.value.data(), o, ckk);
    for (std::size_t n = 0; n < nb; ++n) {
      const CMatMap<T> g(self.grad.data() + n * o * hw, o, hw);
      if (pb.requires_grad) {
        T* gb = pb.grad_buffer();
        for (std::size_t oc = 0; oc < o; ++oc) gb[oc] += g.row(oc).sum();
      }
      if (pw.requires_grad) {
        im2col(px.value.data() + n * c * h * wd, c, h, wd, k, padding, ho, wo, cols.data());
        MatMap<T>(pw.grad_buffer(), o, ckk).noalias() += g * CMatMap<T>(cols.data(), ckk, hw).transpose();
      }
      if (px.requires_grad) {
        MatMap<T>(dcols.data(), ckk, hw).noalias() = wm.transpose() * g;
        col2im(dcols.data(), c, h, wd, k, padding, ho, wo, px.grad_buffer() + n * c * h * wd);
      }
    }
  });
}

template <typename T>
Tensor<T> maxpool2d(const Tensor<T>& x, int k) {
  require(x.ndim() == 4 && k >= 1, "maxpool2d: expected [N,C,H,W] input");
  const std::size_t nb = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t ho = h / k, wo = w / k;
  require(ho > 0 && wo > 0, "maxpool2d: window larger than input");
  std::vector<T> out(nb * c * ho * wo);
  std::vector<std::size_t> arg(out.size());
  for (std::size_t p = 0; p < nb * c; ++p) {
    const T* src = x.data() + p * h * w;
    for (std::size_t y = 0; y < ho; ++y)
      for (std::size_t xx = 0; xx < wo; ++xx) {
        std::size_t best = (y * k) * w + xx * k;
        for (int dy = 0; dy < k; ++dy)
          for (int dx = 0; dx < k; ++dx) {
            const std::size_t idx = (y * k + dy) * w + xx * k + dx;
            if (src[idx] > src[best]) best = idx;
          }
        const std::size_t o = (p * ho + y) * wo + xx;
        out[o] = src[best];
        arg[o] = p * h * w + best;
      }
  }
  return make_result<T>({nb, c, ho, wo}, std::move(out), {&x}, [arg = std::move(arg)](Node<T>& self) {
    T* g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < arg.size(); ++i) g[arg[i]] += self.grad[i];
  });
}

template <typename T>
Tensor<T> additive_scores(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& w) {
  require_2d(q, "additive_scores");
  require_2d(k, "additive_scores");
  const std::size_t nq = q.dim(0), nk = k.dim(0), d = q.dim(1);
  require(k.dim(1) == d && w.size() == d, "additive_scores: projection widths differ");
  std::vector<T> out(nq * nk);
  const bool record = grad_enabled() && (q.requires_grad() || k.requires_grad() || w.requires_grad());
  std::vector<T> cache(record ? nq * nk * d : 0);
  for (std::size_t i = 0; i < nq; ++i)
    for (std::size_t j = 0; j < nk; ++j) {
      T s = 0;
      for (std::size_t c = 0; c < d; ++c) {
        const T t = std::tanh(q[i * d + c] + k[j * d + c]);
        if (record) cache[(i * nk + j) * d + c] = t;
        s += w[c] * t;
      }
      out[i * nk + j] = s;
    }
  return make_result<T>({nq, nk}, std::move(out), {&q, &k, &w}, [nq, nk, d, cache = std::move(cache)](Node<T>& self) {
    Node<T>& pq = *self.parents[0];
    Node<T>& pk = *self.parents[1];
    Node<T>& pw = *self.parents[2];
    T* gq = pq.requires_grad ? pq.grad_buffer() : nullptr;
    T* gk = pk.requires_grad ? pk.grad_buffer() : nullptr;
    T* gw = pw.requires_grad ? pw.grad_buffer() : nullptr;
    for (std::size_t i = 0; i < nq; ++i)
      for (std::size_t j = 0; j < nk; ++j) {
        const T ds = self.grad[i * nk + j];
        if (ds == T(0)) continue;
        const T* t = cache.data() + (i * nk + j) * d;
        for (std::size_t c = 0; c < d; ++c) {
          const T gpre = ds * pw.value[c] * (T(1) - t[c] * t[c]);
          if (gq) gq[i * d + c] += gpre;
          if (gk) gk[j * d + c] += gpre;
          if (gw) gw[c] += ds * t[c];
        }
      }
  });
}

template <typename T>
Tensor<T> dot_attention_head(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, const Mask& key_mask) {
  require_2d(q, "dot_attention_head");
  require_2d(k, "dot_attention_head");
  require_2d(v, "dot_attention_head");
  require(q.dim(1) == k.dim(1), "dot_attention_head: query and key widths differ");
  require(k.dim(0) == v.dim(0), "dot_attention_head: key and value counts differ");
  const T inv = T(1) / std::sqrt(static_cast<T>(k.dim(1)));
  return matmul(softmax_rows(scale(matmul_nt(q, k), inv), key_mask), v);
}

template <typename T>
Tensor<T> additive_attention_head(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, const Tensor<T>& wq,
                                  const Tensor<T>& wk, const Tensor<T>& w, const Mask& key_mask) {
  require(k.dim(0) == v.dim(0), "additive_attention_head: key and value counts differ");
  return matmul(softmax_rows(additive_scores(matmul(q, wq), matmul(k, wk), w), key_mask), v);
}

namespace {
template <typename T>
constexpr T kProbFloor = T(1e-7);

template <typename T>
T clamp_prob(T p) {
  return std::clamp(p, kProbFloor<T>, T(1));
}
}  // namespace

template <typename T>
Tensor<T> loss_background(const Tensor<T>& p, const std::vector<std::uint8_t>& is_background, const Mask& row_mask) {
  require_2d(p, "loss_background");
  const std::size_t n = p.dim(0), l = p.dim(1);
  require(is_background.size() == n, "loss_background: one flag per line required");
  require(row_mask.empty() || row_mask.size() == n, "loss_background: mask length differs from row count");
  T total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!valid<T>(row_mask, i)) continue;
    if (is_background[i]) {
      total -= std::log(clamp_prob(p[i * l]));
    } else {
      T s = 0;
      for (std::size_t k = 1; k < l; ++k) s += p[i * l + k];
      total -= std::log(clamp_prob(s));
    }
  }
  return make_result<T>({}, {total}, {&p}, [n, l, is_background, row_mask](Node<T>& self) {
    Node<T>& pp = *self.parents[0];
    T* g = pp.grad_buffer();
    const T up = self.grad[0];
    for (std::size_t i = 0; i < n; ++i) {
      if (!row_mask.empty() && !row_mask[i]) continue;
      if (is_background[i]) {
        const T t = pp.value[i * l];
        if (t > kProbFloor<T> && t < T(1)) g[i * l] -= up / t;
      } else {
        T s = 0;
        for (std::size_t k = 1; k < l; ++k) s += pp.value[i * l + k];
        if (s > kProbFloor<T> && s < T(1))
          for (std::size_t k = 1; k < l; ++k) g[i * l + k] -= up / s;
      }
    }
  });
}

template <typename T>
Tensor<T> loss_pairwise(const Tensor<T>& p, const std::vector<int>& labels, const Mask& row_mask, T margin,
                        bool detach_reference) {
  require_2d(p, "loss_pairwise");
  const std::size_t n = p.dim(0), l = p.dim(1);
  require(labels.size() == n, "loss_pairwise: one label per line required");
  require(row_mask.empty() || row_mask.size() == n, "loss_pairwise: mask length differs from row count");
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < n; ++i)
    if (valid<T>(row_mask, i) && labels[i] >= 0) idx.push_back(i);

  // KL(P_a || P_b) over the instance bins.
  auto kl = [l](const T* a, const T* b) {
    T s = 0;
    for (std::size_t k = 1; k < l; ++k) {
      const T ta = clamp_prob(a[k]), tb = clamp_prob(b[k]);
      s += ta * std::log(ta / tb);
    }
    return s;
  };
  T total = 0;
  for (std::size_t a = 0; a < idx.size(); ++a)
    for (std::size_t b = a + 1; b < idx.size(); ++b) {
      const T* pi = p.data() + idx[a] * l;
      const T* pj = p.data() + idx[b] * l;
      const T kij = kl(pi, pj), kji = kl(pj, pi);
      if (labels[idx[a]] == labels[idx[b]])
        total += kij + kji;
      else
        total += std::max(T(0), margin - kij) + std::max(T(0), margin - kji);
    }
  return make_result<T>({}, {total}, {&p}, [l, idx, labels, margin, detach_reference, kl](Node<T>& self) {
    Node<T>& pp = *self.parents[0];
    T* g = pp.grad_buffer();
    const T up = self.grad[0];
    // Adds coeff * d KL(ref || tgt) into the gradients of tgt (and of ref unless detached).
    auto accumulate = [&](std::size_t ref, std::size_t tgt, T coeff) {
      for (std::size_t k = 1; k < l; ++k) {
        const T ra = pp.value[ref * l + k], tb = pp.value[tgt * l + k];
        const T rc = clamp_prob(ra), tc = clamp_prob(tb);
        if (tb > kProbFloor<T> && tb < T(1)) g[tgt * l + k] += coeff * (-rc / tc);
        if (!detach_reference && ra > kProbFloor<T> && ra < T(1))
          g[ref * l + k] += coeff * (std::log(rc / tc) + T(1));
      }
    };
    for (std::size_t a = 0; a < idx.size(); ++a)
      for (std::size_t b = a + 1; b < idx.size(); ++b) {
        const std::size_t i = idx[a], j = idx[b];
        if (labels[i] == labels[j]) {
          accumulate(i, j, up);
          accumulate(j, i, up);
        } else {
          const T kij = kl(pp.value.data() + i * l, pp.value.data() + j * l);
          const T kji = kl(pp.value.data() + j * l, pp.value.data() + i * l);
          if (margin - kij > T(0)) accumulate(i, j, -up);
          if (margin - kji > T(0)) accumulate(j, i, -up);
        }
      }
  });
}

#define LCD_INSTANTIATE_OPS(T)                                                                              \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                                          \
  template Tensor<T> matmul_nt(const Tensor<T>&, const Tensor<T>&);                                       \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                             \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                             \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                             \
  template Tensor<T> add_bias(const Tensor<T>&, const Tensor<T>&);                                        \
  template Tensor<T> scale(const Tensor<T>&, T);                                                          \
  template Tensor<T> add_scalar(const Tensor<T>&, T);                                                     \
  template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                        \
  template Tensor<T> leaky_relu(const Tensor<T>&, T);                                                     \
  template Tensor<T> relu(const Tensor<T>&);                                                              \
  template Tensor<T> tanh(const Tensor<T>&);                                                              \
  template Tensor<T> softmax_rows(const Tensor<T>&, const Mask&);                                         \
  template Tensor<T> concat_cols(const std::vector<Tensor<T>>&);                                          \
  template Tensor<T> slice_cols(const Tensor<T>&, std::size_t, std::size_t);                              \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                                    \
  template Tensor<T> mask_rows(const Tensor<T>&, const Mask&);                                            \
  template Tensor<T> sum(const Tensor<T>&);                                                               \
  template Tensor<T> mean(const Tensor<T>&);                                                              \
  template Tensor<T> l2_normalize_rows(const Tensor<T>&);                                                 \
  template Tensor<T> distance(const Tensor<T>&, const Tensor<T>&);                                        \
  template Tensor<T> batch_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, Tensor<T>&, Tensor<T>&, \
                                bool, const Mask&, T, T);                                                 \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, int);                   \
  template Tensor<T> maxpool2d(const Tensor<T>&, int);                                                    \
  template Tensor<T> additive_scores(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);               \
  template Tensor<T> dot_attention_head(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, const Mask&); \
  template Tensor<T> additive_attention_head(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,        \
                                             const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,        \
                                             const Mask&);                                                \
  template Tensor<T> loss_background(const Tensor<T>&, const std::vector<std::uint8_t>&, const Mask&);    \
  template Tensor<T> loss_pairwise(const Tensor<T>&, const std::vector<int>&, const Mask&, T, bool);

LCD_INSTANTIATE_OPS(float)
LCD_INSTANTIATE_OPS(double)

}  // namespace lcd::nn
