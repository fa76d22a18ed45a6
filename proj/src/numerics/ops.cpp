#include "eve/numerics/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "eve/numerics/kernels.hpp"

namespace eve::num {

namespace {

template <class T>
void require_same_shape(const Var<T>& a, const Var<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                     to_string(b.shape()));
  }
}

template <class T>
void require_matrix(const Var<T>& a, const char* op) {
  if (a.value().rank() != 2) {
    throw ShapeError(std::string(op) + ": expected a matrix, got " + to_string(a.shape()));
  }
}

template <class T>
Node<T>& parent(Node<T>& self, std::size_t i) {
  return *self.parents[i];
}

}  // namespace

template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a, b, "add");
  Tensor<T> out = a.value();
  kernels::axpy(T{1}, b.value().data(), out.data(), out.size());
  return make_result<T>(std::move(out), {a, b}, [](Node<T>& self) {
    for (std::size_t i = 0; i < 2; ++i) {
      Node<T>& p = parent(self, i);
      if (!p.requires_grad) continue;
      kernels::axpy(T{1}, self.grad.data(), p.ensure_grad().data(), self.grad.size());
    }
  });
}

template <class T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a, b, "sub");
  Tensor<T> out = a.value();
  kernels::axpy(T{-1}, b.value().data(), out.data(), out.size());
  return make_result<T>(std::move(out), {a, b}, [](Node<T>& self) {
    const T sign[2] = {T{1}, T{-1}};
    for (std::size_t i = 0; i < 2; ++i) {
      Node<T>& p = parent(self, i);
      if (!p.requires_grad) continue;
      kernels::axpy(sign[i], self.grad.data(), p.ensure_grad().data(), self.grad.size());
    }
  });
}

template <class T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a, b, "mul");
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * b.value()[i];
  return make_result<T>(std::move(out), {a, b}, [](Node<T>& self) {
    Node<T>& pa = parent(self, 0);
    Node<T>& pb = parent(self, 1);
    if (pa.requires_grad) {
      auto& g = pa.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pb.value[i];
    }
    if (pb.requires_grad) {
      auto& g = pb.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pa.value[i];
    }
  });
}

template <class T>
Var<T> scale(const Var<T>& a, T s) {
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * s;
  return make_result<T>(std::move(out), {a}, [s](Node<T>& self) {
    kernels::axpy(s, self.grad.data(), parent(self, 0).ensure_grad().data(), self.grad.size());
  });
}

template <class T>
Var<T> add_row(const Var<T>& x, const Var<T>& b) {
  require_matrix(x, "add_row");
  const std::size_t n = x.dim(0), d = x.dim(1);
  if (b.value().size() != d) {
    throw ShapeError("add_row: bias " + to_string(b.shape()) + " vs width " + std::to_string(d));
  }
  Tensor<T> out = x.value();
  for (std::size_t r = 0; r < n; ++r) kernels::axpy(T{1}, b.value().data(), out.data() + r * d, d);
  return make_result<T>(std::move(out), {x, b}, [n, d](Node<T>& self) {
    Node<T>& px = parent(self, 0);
    Node<T>& pb = parent(self, 1);
    if (px.requires_grad) {
      kernels::axpy(T{1}, self.grad.data(), px.ensure_grad().data(), self.grad.size());
    }
    if (pb.requires_grad) {
      auto& g = pb.ensure_grad();
      for (std::size_t r = 0; r < n; ++r) kernels::axpy(T{1}, self.grad.data() + r * d, g.data(), d);
    }
  });
}

template <class T>
Var<T> sum(const Var<T>& a) {
  T acc{0};
  for (T v : a.value().span()) acc += v;
  return make_result<T>(Tensor<T>({1}, std::vector<T>{acc}), {a}, [](Node<T>& self) {
    auto& g = parent(self, 0).ensure_grad();
    const T up = self.grad[0];
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += up;
  });
}

template <class T>
Var<T> mean(const Var<T>& a) {
  return scale(sum(a), T{1} / static_cast<T>(a.value().size()));
}

template <class T>
Var<T> reshape(const Var<T>& a, Shape shape) {
  Tensor<T> out = a.value().reshaped(std::move(shape));
  return make_result<T>(std::move(out), {a}, [](Node<T>& self) {
    kernels::axpy(T{1}, self.grad.data(), parent(self, 0).ensure_grad().data(), self.grad.size());
  });
}

template <class T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw ShapeError("matmul: inner extents differ " + to_string(a.shape()) + " * " +
                     to_string(b.shape()));
  }
  Tensor<T> out({m, n});
  const T* A = a.value().data();
  const T* B = b.value().data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const T s = A[i * k + p];
      if (s != T{0}) kernels::axpy(s, B + p * n, out.data() + i * n, n);
    }
  }
  return make_result<T>(std::move(out), {a, b}, [m, k, n](Node<T>& self) {
    Node<T>& pa = parent(self, 0);
    Node<T>& pb = parent(self, 1);
    const T* G = self.grad.data();
    if (pa.requires_grad) {
      T* dA = pa.ensure_grad().data();
      const T* B = pb.value.data();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) dA[i * k + p] += kernels::dot(G + i * n, B + p * n, n);
    }
    if (pb.requires_grad) {
      T* dB = pb.ensure_grad().data();
      const T* A = pa.value.data();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const T s = A[i * k + p];
          if (s != T{0}) kernels::axpy(s, G + i * n, dB + p * n, n);
        }
    }
  });
}

template <class T>
Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& b) {
  require_matrix(x, "linear");
  const std::size_t n = x.dim(0), in = x.dim(1);
  const std::size_t out_dim = w.dim(0);
  if (w.value().size() != out_dim * in) {
    throw ShapeError("linear: weight " + to_string(w.shape()) + " does not map width " +
                     std::to_string(in));
  }
  const bool has_bias = b.defined();
  if (has_bias && b.value().size() != out_dim) {
    throw ShapeError("linear: bias " + to_string(b.shape()) + " vs output width " +
                     std::to_string(out_dim));
  }
  Tensor<T> out({n, out_dim});
  const T* X = x.value().data();
  const T* W = w.value().data();
  for (std::size_t i = 0; i < n; ++i) {
    T* y = out.data() + i * out_dim;
    for (std::size_t o = 0; o < out_dim; ++o) y[o] = kernels::dot(X + i * in, W + o * in, in);
    if (has_bias) kernels::axpy(T{1}, b.value().data(), y, out_dim);
  }
  std::vector<Var<T>> inputs{x, w};
  if (has_bias) inputs.push_back(b);
  return make_result<T>(std::move(out), std::move(inputs), [n, in, out_dim, has_bias](Node<T>& self) {
    Node<T>& px = parent(self, 0);
    Node<T>& pw = parent(self, 1);
    const T* G = self.grad.data();
    if (px.requires_grad) {
      T* dX = px.ensure_grad().data();
      const T* W = pw.value.data();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t o = 0; o < out_dim; ++o) {
          const T g = G[i * out_dim + o];
          if (g != T{0}) kernels::axpy(g, W + o * in, dX + i * in, in);
        }
    }
    if (pw.requires_grad) {
      T* dW = pw.ensure_grad().data();
      const T* X = px.value.data();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t o = 0; o < out_dim; ++o) {
          const T g = G[i * out_dim + o];
          if (g != T{0}) kernels::axpy(g, X + i * in, dW + o * in, in);
        }
    }
    if (has_bias) {
      Node<T>& pb = parent(self, 2);
      if (pb.requires_grad) {
        T* dB = pb.ensure_grad().data();
        for (std::size_t i = 0; i < n; ++i) kernels::axpy(T{1}, G + i * out_dim, dB, out_dim);
      }
    }
  });
}

template <class T>
Var<T> silu(const Var<T>& x) {
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const T v = x.value()[i];
    out[i] = v / (T{1} + std::exp(-v));
  }
  return make_result<T>(std::move(out), {x}, [](Node<T>& self) {
    Node<T>& px = parent(self, 0);
    auto& g = px.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const T v = px.value[i];
      const T s = T{1} / (T{1} + std::exp(-v));
      g[i] += self.grad[i] * (s * (T{1} + v * (T{1} - s)));
    }
  });
}

template <class T>
Var<T> gelu(const Var<T>& x) {
  constexpr T c = T(0.7978845608028654);  // sqrt(2/pi)
  constexpr T a = T(0.044715);
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const T v = x.value()[i];
    out[i] = T(0.5) * v * (T{1} + std::tanh(c * (v + a * v * v * v)));
  }
  return make_result<T>(std::move(out), {x}, [](Node<T>& self) {
    Node<T>& px = parent(self, 0);
    auto& g = px.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const T v = px.value[i];
      const T t = std::tanh(c * (v + a * v * v * v));
      const T dt = (T{1} - t * t) * c * (T{1} + T{3} * a * v * v);
      g[i] += self.grad[i] * (T(0.5) * (T{1} + t) + T(0.5) * v * dt);
    }
  });
}

template <class T>
Var<T> softmax_rows(const Var<T>& x) {
  require_matrix(x, "softmax_rows");
  const std::size_t n = x.dim(0), d = x.dim(1);
  Tensor<T> out(x.shape());
  for (std::size_t r = 0; r < n; ++r) {
    auto in = x.value().row(r);
    auto y = out.row(r);
    const T mx = *std::max_element(in.begin(), in.end());
    T z{0};
    for (std::size_t j = 0; j < d; ++j) z += (y[j] = std::exp(in[j] - mx));
    for (std::size_t j = 0; j < d; ++j) y[j] /= z;
  }
  return make_result<T>(std::move(out), {x}, [n, d](Node<T>& self) {
    auto& g = parent(self, 0).ensure_grad();
    for (std::size_t r = 0; r < n; ++r) {
      const T* y = self.value.data() + r * d;
      const T* gy = self.grad.data() + r * d;
      const T s = kernels::dot(y, gy, d);
      T* gx = g.data() + r * d;
      for (std::size_t j = 0; j < d; ++j) gx[j] += y[j] * (gy[j] - s);
    }
  });
}

template <class T>
Var<T> rms_norm(const Var<T>& x, const Var<T>& w, T eps) {
  require_matrix(x, "rms_norm");
  const std::size_t n = x.dim(0), d = x.dim(1);
  if (w.value().size() != d) throw ShapeError("rms_norm: weight width mismatch");
  Tensor<T> out(x.shape());
  std::vector<T> inv(n);
  for (std::size_t r = 0; r < n; ++r) {
    const T* xr = x.value().data() + r * d;
    const T ms = kernels::dot(xr, xr, d) / static_cast<T>(d);
    inv[r] = T{1} / std::sqrt(ms + eps);
    T* y = out.data() + r * d;
    for (std::size_t j = 0; j < d; ++j) y[j] = xr[j] * inv[r] * w.value()[j];
  }
  return make_result<T>(std::move(out), {x, w}, [n, d, inv = std::move(inv)](Node<T>& self) {
    Node<T>& px = parent(self, 0);
    Node<T>& pw = parent(self, 1);
    std::vector<T> gh(d);
    for (std::size_t r = 0; r < n; ++r) {
      const T* xr = px.value.data() + r * d;
      const T* gy = self.grad.data() + r * d;
      if (pw.requires_grad) {
        T* gw = pw.ensure_grad().data();
        for (std::size_t j = 0; j < d; ++j) gw[j] += gy[j] * xr[j] * inv[r];
      }
      if (px.requires_grad) {
        T dotv{0};
        for (std::size_t j = 0; j < d; ++j) {
          gh[j] = gy[j] * pw.value[j];
          dotv += gh[j] * xr[j] * inv[r];
        }
        dotv /= static_cast<T>(d);
        T* gx = px.ensure_grad().data() + r * d;
        for (std::size_t j = 0; j < d; ++j) gx[j] += inv[r] * (gh[j] - xr[j] * inv[r] * dotv);
      }
    }
  });
}

template <class T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& w, const Var<T>& b, T eps) {
  require_matrix(x, "layer_norm");
  const std::size_t n = x.dim(0), d = x.dim(1);
  if (w.value().size() != d || b.value().size() != d) {
    throw ShapeError("layer_norm: affine width mismatch");
  }
  Tensor<T> out(x.shape());
  Tensor<T> xhat(x.shape());
  std::vector<T> inv(n);
  for (std::size_t r = 0; r < n; ++r) {
    auto xr = x.value().row(r);
    T mu{0};
    for (T v : xr) mu += v;
    mu /= static_cast<T>(d);
    T var{0};
    for (T v : xr) var += (v - mu) * (v - mu);
    var /= static_cast<T>(d);
    inv[r] = T{1} / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) {
      xhat.at(r, j) = (xr[j] - mu) * inv[r];
      out.at(r, j) = xhat.at(r, j) * w.value()[j] + b.value()[j];
    }
  }
  return make_result<T>(std::move(out), {x, w, b},
                        [n, d, inv = std::move(inv), xhat = std::move(xhat)](Node<T>& self) {
    Node<T>& px = parent(self, 0);
    Node<T>& pw = parent(self, 1);
    Node<T>& pb = parent(self, 2);
    std::vector<T> gh(d);
    for (std::size_t r = 0; r < n; ++r) {
      const T* gy = self.grad.data() + r * d;
      const T* xh = xhat.data() + r * d;
      if (pw.requires_grad) {
        T* gw = pw.ensure_grad().data();
        for (std::size_t j = 0; j < d; ++j) gw[j] += gy[j] * xh[j];
      }
      if (pb.requires_grad) kernels::axpy(T{1}, gy, pb.ensure_grad().data(), d);
      if (px.requires_grad) {
        T mg{0}, mgx{0};
        for (std::size_t j = 0; j < d; ++j) {
          gh[j] = gy[j] * pw.value[j];
          mg += gh[j];
          mgx += gh[j] * xh[j];
        }
        mg /= static_cast<T>(d);
        mgx /= static_cast<T>(d);
        T* gx = px.ensure_grad().data() + r * d;
        for (std::size_t j = 0; j < d; ++j) gx[j] += inv[r] * (gh[j] - mg - xh[j] * mgx);
      }
    }
  });
}

template <class T>
Var<T> l2_normalize_rows(const Var<T>& x, T eps) {
  require_matrix(x, "l2_normalize_rows");
  const std::size_t n = x.dim(0), d = x.dim(1);
  Tensor<T> out(x.shape());
  std::vector<T> norms(n);
  for (std::size_t r = 0; r < n; ++r) {
    const T* xr = x.value().data() + r * d;
    norms[r] = std::sqrt(kernels::dot(xr, xr, d));
    const T denom = std::max(norms[r], eps);
    for (std::size_t j = 0; j < d; ++j) out.at(r, j) = xr[j] / denom;
  }
  return make_result<T>(std::move(out), {x}, [n, d, eps, norms = std::move(norms)](Node<T>& self) {
    auto& g = parent(self, 0).ensure_grad();
    for (std::size_t r = 0; r < n; ++r) {
      const T* y = self.value.data() + r * d;
      const T* gy = self.grad.data() + r * d;
      T* gx = g.data() + r * d;
      if (norms[r] > eps) {
        const T s = kernels::dot(y, gy, d);
        for (std::size_t j = 0; j < d; ++j) gx[j] += (gy[j] - y[j] * s) / norms[r];
      } else {
        for (std::size_t j = 0; j < d; ++j) gx[j] += gy[j] / eps;
      }
    }
  });
}

template <class T>
Var<T> cross_entropy_sum(const Var<T>& logits, std::span<const int> labels,
                         std::span<const std::uint8_t> mask) {
  require_matrix(logits, "cross_entropy");
  const std::size_t n = logits.dim(0), v = logits.dim(1);
  if (labels.size() != n || mask.size() != n) {
    throw ShapeError("cross_entropy: " + std::to_string(n) + " rows but " +
                     std::to_string(labels.size()) + " labels / " + std::to_string(mask.size()) +
                     " mask entries");
  }
  Tensor<T> probs({n, v});
  T total{0};
  for (std::size_t r = 0; r < n; ++r) {
    if (!mask[r]) continue;
    const int y = labels[r];
    if (y < 0 || static_cast<std::size_t>(y) >= v) {
      throw std::out_of_range("cross_entropy: label " + std::to_string(y) + " outside vocab " +
                              std::to_string(v));
    }
    auto in = logits.value().row(r);
    const T mx = *std::max_element(in.begin(), in.end());
    T z{0};
    for (std::size_t j = 0; j < v; ++j) z += (probs.at(r, j) = std::exp(in[j] - mx));
    for (std::size_t j = 0; j < v; ++j) probs.at(r, j) /= z;
    total += std::log(z) + mx - in[y];
  }
  std::vector<int> lab(labels.begin(), labels.end());
  std::vector<std::uint8_t> msk(mask.begin(), mask.end());
  return make_result<T>(Tensor<T>({1}, std::vector<T>{total}), {logits},
                        [n, v, probs = std::move(probs), lab = std::move(lab),
                         msk = std::move(msk)](Node<T>& self) {
    auto& g = parent(self, 0).ensure_grad();
    const T up = self.grad[0];
    for (std::size_t r = 0; r < n; ++r) {
      if (!msk[r]) continue;
      T* gr = g.data() + r * v;
      kernels::axpy(up, probs.data() + r * v, gr, v);
      gr[lab[r]] -= up;
    }
  });
}

template <class T>
Var<T> cross_entropy(const Var<T>& logits, std::span<const int> labels,
                     std::span<const std::uint8_t> mask) {
  std::size_t count = 0;
  for (auto m : mask) count += m ? 1 : 0;
  if (count == 0) throw std::invalid_argument("cross_entropy: every position is masked");
  return scale(cross_entropy_sum(logits, labels, mask), T{1} / static_cast<T>(count));
}

template <class T>
Var<T> mse(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a, b, "mse");
  const std::size_t n = a.value().size();
  Tensor<T> diff(a.shape());
  T acc{0};
  for (std::size_t i = 0; i < n; ++i) {
    diff[i] = a.value()[i] - b.value()[i];
    acc += diff[i] * diff[i];
  }
  acc /= static_cast<T>(n);
  return make_result<T>(Tensor<T>({1}, std::vector<T>{acc}), {a, b},
                        [n, diff = std::move(diff)](Node<T>& self) {
    const T s = T{2} * self.grad[0] / static_cast<T>(n);
    Node<T>& pa = parent(self, 0);
    Node<T>& pb = parent(self, 1);
    if (pa.requires_grad) kernels::axpy(s, diff.data(), pa.ensure_grad().data(), n);
    if (pb.requires_grad) kernels::axpy(-s, diff.data(), pb.ensure_grad().data(), n);
  });
}

template <class T>
Var<T> rope(const Var<T>& x, std::size_t heads, double base, std::size_t position_offset) {
  require_matrix(x, "rope");
  const std::size_t n = x.dim(0), d = x.dim(1);
  if (heads == 0 || d % heads != 0 || (d / heads) % 2 != 0) {
    throw ShapeError("rope: width " + std::to_string(d) + " needs an even per-head size for " +
                     std::to_string(heads) + " heads");
  }
  const std::size_t hd = d / heads, half = hd / 2;
  std::vector<T> cos_t(n * half), sin_t(n * half);
  for (std::size_t r = 0; r < n; ++r) {
    const double pos = static_cast<double>(position_offset + r);
    for (std::size_t i = 0; i < half; ++i) {
      const double theta = pos * std::pow(base, -2.0 * static_cast<double>(i) / static_cast<double>(hd));
      cos_t[r * half + i] = static_cast<T>(std::cos(theta));
      sin_t[r * half + i] = static_cast<T>(std::sin(theta));
    }
  }
  Tensor<T> out(x.shape());
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t h = 0; h < heads; ++h)
      for (std::size_t i = 0; i < half; ++i) {
        const std::size_t c = r * d + h * hd + 2 * i;
        const T x0 = x.value()[c], x1 = x.value()[c + 1];
        const T cs = cos_t[r * half + i], sn = sin_t[r * half + i];
        out[c] = x0 * cs - x1 * sn;
        out[c + 1] = x0 * sn + x1 * cs;
      }
  return make_result<T>(std::move(out), {x},
                        [n, d, heads, hd, half, cos_t = std::move(cos_t),
                         sin_t = std::move(sin_t)](Node<T>& self) {
    auto& g = parent(self, 0).ensure_grad();
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t h = 0; h < heads; ++h)
        for (std::size_t i = 0; i < half; ++i) {
          const std::size_t c = r * d + h * hd + 2 * i;
          const T g0 = self.grad[c], g1 = self.grad[c + 1];
          const T cs = cos_t[r * half + i], sn = sin_t[r * half + i];
          g[c] += g0 * cs + g1 * sn;
          g[c + 1] += -g0 * sn + g1 * cs;
        }
  });
}

KeySets KeySets::full(std::size_t num_queries, std::size_t num_keys) {
  KeySets ks;
  ks.num_keys = num_keys;
  ks.offsets.reserve(num_queries + 1);
  ks.indices.reserve(num_queries * num_keys);
  for (std::size_t q = 0; q < num_queries; ++q) {
    for (std::size_t k = 0; k < num_keys; ++k) ks.indices.push_back(k);
    ks.offsets.push_back(ks.indices.size());
  }
  return ks;
}

KeySets KeySets::causal(std::size_t n) {
  KeySets ks;
  ks.num_keys = n;
  ks.indices.reserve(n * (n + 1) / 2);
  for (std::size_t q = 0; q < n; ++q) {
    for (std::size_t k = 0; k <= q; ++k) ks.indices.push_back(k);
    ks.offsets.push_back(ks.indices.size());
  }
  return ks;
}

KeySets KeySets::from_lists(const std::vector<std::vector<std::size_t>>& lists,
                            std::size_t num_keys) {
  KeySets ks;
  ks.num_keys = num_keys;
  for (std::size_t q = 0; q < lists.size(); ++q) {
    if (lists[q].empty()) {
      throw ShapeError("attention: query " + std::to_string(q) + " has no admissible key");
    }
    for (std::size_t k : lists[q]) {
      if (k >= num_keys) throw ShapeError("attention: key index out of range");
      ks.indices.push_back(k);
    }
    ks.offsets.push_back(ks.indices.size());
  }
  return ks;
}

KeySets KeySets::from_mask(const std::vector<std::vector<bool>>& mask) {
  std::vector<std::vector<std::size_t>> lists(mask.size());
  const std::size_t nk = mask.empty() ? 0 : mask[0].size();
  for (std::size_t q = 0; q < mask.size(); ++q) {
    if (mask[q].size() != nk) throw ShapeError("attention: ragged mask");
    for (std::size_t k = 0; k < nk; ++k)
      if (mask[q][k]) lists[q].push_back(k);
  }
  return from_lists(lists, nk);
}

template <class T>
Var<T> attention(const Var<T>& q, const Var<T>& k, const Var<T>& v, std::size_t heads,
                 const KeySets& keys) {
  require_matrix(q, "attention");
  require_matrix(k, "attention");
  require_matrix(v, "attention");
  const std::size_t nq = q.dim(0), nk = k.dim(0), d = q.dim(1);
  if (k.dim(1) != d || v.dim(1) != d || v.dim(0) != nk) {
    throw ShapeError("attention: q " + to_string(q.shape()) + ", k " + to_string(k.shape()) +
                     ", v " + to_string(v.shape()) + " are incompatible");
  }
  if (heads == 0 || d % heads != 0) {
    throw ShapeError("attention: width " + std::to_string(d) + " not divisible by " +
                     std::to_string(heads) + " heads");
  }
  if (keys.num_queries() != nq || keys.num_keys != nk) {
    throw ShapeError("attention: key sets describe " + std::to_string(keys.num_queries()) + "x" +
                     std::to_string(keys.num_keys) + ", inputs are " + std::to_string(nq) + "x" +
                     std::to_string(nk));
  }
  for (std::size_t i = 0; i < nq; ++i) {
    if (keys.keys(i).empty()) {
      throw ShapeError("attention: query " + std::to_string(i) + " is fully masked");
    }
  }
  const std::size_t hd = d / heads;
  const T sc = T{1} / std::sqrt(static_cast<T>(hd));
  // probs laid out [nnz x heads]
  auto probs = std::make_shared<std::vector<T>>(keys.indices.size() * heads);
  Tensor<T> out({nq, d});
  const T* Q = q.value().data();
  const T* K = k.value().data();
  const T* V = v.value().data();
  std::vector<T> s;
  for (std::size_t i = 0; i < nq; ++i) {
    auto ks = keys.keys(i);
    s.resize(ks.size());
    for (std::size_t h = 0; h < heads; ++h) {
      const T* qi = Q + i * d + h * hd;
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t t = 0; t < ks.size(); ++t) {
        s[t] = kernels::dot(qi, K + ks[t] * d + h * hd, hd) * sc;
        mx = std::max(mx, s[t]);
      }
      T z{0};
      for (std::size_t t = 0; t < ks.size(); ++t) z += (s[t] = std::exp(s[t] - mx));
      T* oi = out.data() + i * d + h * hd;
      for (std::size_t t = 0; t < ks.size(); ++t) {
        const T p = s[t] / z;
        (*probs)[(keys.offsets[i] + t) * heads + h] = p;
        kernels::axpy(p, V + ks[t] * d + h * hd, oi, hd);
      }
    }
  }
  return make_result<T>(std::move(out), {q, k, v},
                        [nq, d, heads, hd, sc, keys, probs](Node<T>& self) {
    Node<T>& pq = parent(self, 0);
    Node<T>& pk = parent(self, 1);
    Node<T>& pv = parent(self, 2);
    const T* Q = pq.value.data();
    const T* K = pk.value.data();
    const T* V = pv.value.data();
    T* dQ = pq.requires_grad ? pq.ensure_grad().data() : nullptr;
    T* dK = pk.requires_grad ? pk.ensure_grad().data() : nullptr;
    T* dV = pv.requires_grad ? pv.ensure_grad().data() : nullptr;
    std::vector<T> dp;
    for (std::size_t i = 0; i < nq; ++i) {
      auto ks = keys.keys(i);
      dp.resize(ks.size());
      for (std::size_t h = 0; h < heads; ++h) {
        const T* go = self.grad.data() + i * d + h * hd;
        T wsum{0};
        for (std::size_t t = 0; t < ks.size(); ++t) {
          const T p = (*probs)[(keys.offsets[i] + t) * heads + h];
          dp[t] = kernels::dot(go, V + ks[t] * d + h * hd, hd);
          wsum += p * dp[t];
          if (dV) kernels::axpy(p, go, dV + ks[t] * d + h * hd, hd);
        }
        for (std::size_t t = 0; t < ks.size(); ++t) {
          const T p = (*probs)[(keys.offsets[i] + t) * heads + h];
          const T ds = p * (dp[t] - wsum) * sc;
          if (dQ) kernels::axpy(ds, K + ks[t] * d + h * hd, dQ + i * d + h * hd, hd);
          if (dK) kernels::axpy(ds, Q + i * d + h * hd, dK + ks[t] * d + h * hd, hd);
        }
      }
    }
  });
}

template <class T>
Var<T> avg_pool2d(const Var<T>& x, std::size_t h, std::size_t w, std::size_t stride) {
  require_matrix(x, "avg_pool2d");
  if (x.dim(0) != h * w) {
    throw ShapeError("avg_pool2d: " + std::to_string(x.dim(0)) + " cells for a " +
                     std::to_string(h) + "x" + std::to_string(w) + " grid");
  }
  if (stride == 0 || h % stride != 0) {
    throw ShapeError("avg_pool2d: height " + std::to_string(h) + " not divisible by stride " +
                     std::to_string(stride));
  }
  if (w % stride != 0) {
    throw ShapeError("avg_pool2d: width " + std::to_string(w) + " not divisible by stride " +
                     std::to_string(stride));
  }
  const std::size_t d = x.dim(1), oh = h / stride, ow = w / stride;
  const T inv = T{1} / static_cast<T>(stride * stride);
  Tensor<T> out({oh * ow, d});
  for (std::size_t r = 0; r < oh; ++r)
    for (std::size_t c = 0; c < ow; ++c) {
      T* o = out.data() + (r * ow + c) * d;
      for (std::size_t dy = 0; dy < stride; ++dy)
        for (std::size_t dx = 0; dx < stride; ++dx)
          kernels::axpy(inv, x.value().data() + ((r * stride + dy) * w + c * stride + dx) * d, o, d);
    }
  return make_result<T>(std::move(out), {x}, [w, d, oh, ow, stride, inv](Node<T>& self) {
    auto& g = parent(self, 0).ensure_grad();
    for (std::size_t r = 0; r < oh; ++r)
      for (std::size_t c = 0; c < ow; ++c) {
        const T* go = self.grad.data() + (r * ow + c) * d;
        for (std::size_t dy = 0; dy < stride; ++dy)
          for (std::size_t dx = 0; dx < stride; ++dx)
            kernels::axpy(inv, go, g.data() + ((r * stride + dy) * w + c * stride + dx) * d, d);
      }
  });
}

namespace {
struct Window {
  std::size_t begin, end;
};
std::vector<Window> adaptive_windows(std::size_t in, std::size_t out) {
  std::vector<Window> ws(out);
  for (std::size_t i = 0; i < out; ++i) {
    ws[i].begin = (i * in) / out;
    ws[i].end = ((i + 1) * in + out - 1) / out;
  }
  return ws;
}
}  // namespace

template <class T>
Var<T> adaptive_avg_pool2d(const Var<T>& x, std::size_t h, std::size_t w, std::size_t out_h,
                           std::size_t out_w) {
  require_matrix(x, "adaptive_avg_pool2d");
  if (x.dim(0) != h * w) {
    throw ShapeError("adaptive_avg_pool2d: " + std::to_string(x.dim(0)) + " cells for a " +
                     std::to_string(h) + "x" + std::to_string(w) + " grid");
  }
  if (out_h == 0 || out_w == 0) throw ShapeError("adaptive_avg_pool2d: empty output grid");
  const std::size_t d = x.dim(1);
  auto rows = adaptive_windows(h, out_h);
  auto cols = adaptive_windows(w, out_w);
  Tensor<T> out({out_h * out_w, d});
  for (std::size_t i = 0; i < out_h; ++i)
    for (std::size_t j = 0; j < out_w; ++j) {
      const T inv = T{1} / static_cast<T>((rows[i].end - rows[i].begin) * (cols[j].end - cols[j].begin));
      T* o = out.data() + (i * out_w + j) * d;
      for (std::size_t r = rows[i].begin; r < rows[i].end; ++r)
        for (std::size_t c = cols[j].begin; c < cols[j].end; ++c)
          kernels::axpy(inv, x.value().data() + (r * w + c) * d, o, d);
    }
  return make_result<T>(std::move(out), {x},
                        [w, d, out_h, out_w, rows = std::move(rows), cols = std::move(cols)](Node<T>& self) {
    auto& g = parent(self, 0).ensure_grad();
    for (std::size_t i = 0; i < out_h; ++i)
      for (std::size_t j = 0; j < out_w; ++j) {
        const T inv = T{1} / static_cast<T>((rows[i].end - rows[i].begin) * (cols[j].end - cols[j].begin));
        const T* go = self.grad.data() + (i * out_w + j) * d;
        for (std::size_t r = rows[i].begin; r < rows[i].end; ++r)
          for (std::size_t c = cols[j].begin; c < cols[j].end; ++c)
            kernels::axpy(inv, go, g.data() + (r * w + c) * d, d);
      }
  });
}

template <class T>
Var<T> gather_rows(const Var<T>& x, std::span<const std::size_t> rows) {
  require_matrix(x, "gather_rows");
  const std::size_t n = x.dim(0), d = x.dim(1);
  if (rows.empty()) throw ShapeError("gather_rows: empty index list");
  Tensor<T> out({rows.size(), d});
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] >= n) {
      throw ShapeError("gather_rows: index " + std::to_string(rows[r]) + " beyond " +
                       std::to_string(n) + " rows");
    }
    std::copy_n(x.value().data() + rows[r] * d, d, out.data() + r * d);
  }
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  return make_result<T>(std::move(out), {x}, [d, idx = std::move(idx)](Node<T>& self) {
    auto& g = parent(self, 0).ensure_grad();
    for (std::size_t r = 0; r < idx.size(); ++r)
      kernels::axpy(T{1}, self.grad.data() + r * d, g.data() + idx[r] * d, d);
  });
}

template <class T>
Var<T> concat_rows(std::span<const Var<T>> parts) {
  if (parts.empty()) throw ShapeError("concat_rows: nothing to concatenate");
  const std::size_t d = parts[0].value().cols();
  std::size_t n = 0;
  for (const auto& p : parts) {
    require_matrix(p, "concat_rows");
    if (p.dim(1) != d) {
      throw ShapeError("concat_rows: width " + std::to_string(p.dim(1)) + " vs " + std::to_string(d));
    }
    n += p.dim(0);
  }
  Tensor<T> out({n, d});
  std::vector<std::size_t> starts;
  std::size_t at = 0;
  for (const auto& p : parts) {
    starts.push_back(at);
    std::copy_n(p.value().data(), p.value().size(), out.data() + at * d);
    at += p.dim(0);
  }
  std::vector<Var<T>> inputs(parts.begin(), parts.end());
  return make_result<T>(std::move(out), std::move(inputs), [d, starts = std::move(starts)](Node<T>& self) {
    for (std::size_t i = 0; i < self.parents.size(); ++i) {
      Node<T>& p = parent(self, i);
      if (!p.requires_grad) continue;
      kernels::axpy(T{1}, self.grad.data() + starts[i] * d, p.ensure_grad().data(), p.value.size());
    }
  });
}

template <class T>
Tensor<T> patchify(const Tensor<T>& image, std::size_t k) {
  if (image.rank() != 3) throw ShapeError("patchify: expected C x H x W, got " + to_string(image.shape()));
  const std::size_t C = image.dim(0), H = image.dim(1), W = image.dim(2);
  if (k == 0) throw ShapeError("patchify: stride must be positive");
  if (H % k != 0) {
    throw ShapeError("patchify: height " + std::to_string(H) + " is not a multiple of stride " +
                     std::to_string(k));
  }
  if (W % k != 0) {
    throw ShapeError("patchify: width " + std::to_string(W) + " is not a multiple of stride " +
                     std::to_string(k));
  }
  const std::size_t gh = H / k, gw = W / k, pd = C * k * k;
  Tensor<T> out({gh * gw, pd});
  for (std::size_t r = 0; r < gh; ++r)
    for (std::size_t c = 0; c < gw; ++c) {
      T* o = out.data() + (r * gw + c) * pd;
      for (std::size_t ch = 0; ch < C; ++ch)
        for (std::size_t ky = 0; ky < k; ++ky) {
          const T* src = image.data() + (ch * H + r * k + ky) * W + c * k;
          std::copy_n(src, k, o + (ch * k + ky) * k);
        }
    }
  return out;
}

template <class T>
Var<T> conv2d_patchify(const Tensor<T>& image, const Var<T>& weight, const Var<T>& bias,
                       std::size_t stride) {
  if (weight.value().rank() != 4 || weight.dim(2) != stride || weight.dim(3) != stride) {
    throw ShapeError("conv2d_patchify: kernel " + to_string(weight.shape()) +
                     " must be d x C x stride x stride");
  }
  if (image.rank() != 3 || image.dim(0) != weight.dim(1)) {
    throw ShapeError("conv2d_patchify: channel axis of image " + to_string(image.shape()) +
                     " does not match kernel " + to_string(weight.shape()));
  }
  return linear(constant(patchify(image, stride)), weight, bias);
}

#define EVE_INSTANTIATE_OPS(T)                                                                    \
  template Var<T> add(const Var<T>&, const Var<T>&);                                              \
  template Var<T> sub(const Var<T>&, const Var<T>&);                                              \
  template Var<T> mul(const Var<T>&, const Var<T>&);                                              \
  template Var<T> scale(const Var<T>&, T);                                                        \
  template Var<T> add_row(const Var<T>&, const Var<T>&);                                          \
  template Var<T> sum(const Var<T>&);                                                             \
  template Var<T> mean(const Var<T>&);                                                            \
  template Var<T> reshape(const Var<T>&, Shape);                                                  \
  template Var<T> matmul(const Var<T>&, const Var<T>&);                                           \
  template Var<T> linear(const Var<T>&, const Var<T>&, const Var<T>&);                            \
  template Var<T> silu(const Var<T>&);                                                            \
  template Var<T> gelu(const Var<T>&);                                                            \
  template Var<T> softmax_rows(const Var<T>&);                                                    \
  template Var<T> rms_norm(const Var<T>&, const Var<T>&, T);                                      \
  template Var<T> layer_norm(const Var<T>&, const Var<T>&, const Var<T>&, T);                     \
  template Var<T> l2_normalize_rows(const Var<T>&, T);                                            \
  template Var<T> cross_entropy_sum(const Var<T>&, std::span<const int>,                          \
                                    std::span<const std::uint8_t>);                               \
  template Var<T> cross_entropy(const Var<T>&, std::span<const int>, std::span<const std::uint8_t>); \
  template Var<T> mse(const Var<T>&, const Var<T>&);                                              \
  template Var<T> rope(const Var<T>&, std::size_t, double, std::size_t);                          \
  template Var<T> attention(const Var<T>&, const Var<T>&, const Var<T>&, std::size_t,             \
                            const KeySets&);                                                      \
  template Var<T> avg_pool2d(const Var<T>&, std::size_t, std::size_t, std::size_t);               \
  template Var<T> adaptive_avg_pool2d(const Var<T>&, std::size_t, std::size_t, std::size_t,       \
                                      std::size_t);                                               \
  template Var<T> gather_rows(const Var<T>&, std::span<const std::size_t>);                       \
  template Var<T> concat_rows(std::span<const Var<T>>);                                           \
  template Tensor<T> patchify(const Tensor<T>&, std::size_t);                                     \
  template Var<T> conv2d_patchify(const Tensor<T>&, const Var<T>&, const Var<T>&, std::size_t);

EVE_INSTANTIATE_OPS(float)
EVE_INSTANTIATE_OPS(double)

}  // namespace eve::num
