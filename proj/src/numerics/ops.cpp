#include "sldb/numerics/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace sldb {

namespace {

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()) + " differ");
  }
}

template <typename T>
void accumulate(std::vector<T>& dst, const std::vector<T>& src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

}  // namespace

std::uint64_t& forward_mac_counter() {
  thread_local std::uint64_t macs = 0;
  return macs;
}

template <typename T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, const T* a,
          const T* b, T* c) {
  if (!trans_a && !trans_b) {
    for (std::size_t i = 0; i < m; ++i) {
      T* crow = c + i * n;
      const T* arow = a + i * k;
      for (std::size_t t = 0; t < k; ++t) {
        const T av = arow[t];
        const T* brow = b + t * n;
        for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
      }
    }
  } else if (!trans_a && trans_b) {
    for (std::size_t i = 0; i < m; ++i) {
      const T* arow = a + i * k;
      for (std::size_t j = 0; j < n; ++j) {
        const T* brow = b + j * k;
        T s = T(0);
        for (std::size_t t = 0; t < k; ++t) s += arow[t] * brow[t];
        c[i * n + j] += s;
      }
    }
  } else if (trans_a && !trans_b) {
    for (std::size_t t = 0; t < k; ++t) {
      const T* acol = a + t * m;
      const T* brow = b + t * n;
      for (std::size_t i = 0; i < m; ++i) {
        const T av = acol[i];
        T* crow = c + i * n;
        for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
      }
    }
  } else {
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        T s = T(0);
        for (std::size_t t = 0; t < k; ++t) s += a[t * m + i] * b[j * k + t];
        c[i * n + j] += s;
      }
    }
  }
}

namespace {

// Gradients of c = op(a) * op(b) for one (m, n, k) product.
template <typename T>
void gemm_backward(bool ta, bool tb, std::size_t m, std::size_t n, std::size_t k, const T* a,
                   const T* b, const T* gc, T* ga, T* gb) {
  if (ga) {
    if (!ta) {
      gemm(false, !tb, m, k, n, gc, b, ga);
    } else {
      gemm(tb, true, k, m, n, b, gc, ga);
    }
  }
  if (gb) {
    if (!tb) {
      gemm(!ta, false, k, n, m, a, gc, gb);
    } else {
      gemm(true, ta, n, k, m, gc, a, gb);
    }
  }
}

}  // namespace

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: cannot multiply " + shape_str(a.shape()) + " by " +
                         shape_str(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor<T> out(Shape{m, n});
  gemm(false, false, m, n, k, a.ptr(), b.ptr(), out.ptr());
  forward_mac_counter() += m * n * k;
  if (autograd::needs_grad(a, b)) {
    auto an = a.node(), bn = b.node(), on = out.node();
    autograd::record(out, [an, bn, on, m, n, k] {
      if (on->grad.empty()) return;
      T* ga = an->requires_grad ? autograd::grad_buffer(*an).data() : nullptr;
      T* gb = bn->requires_grad ? autograd::grad_buffer(*bn).data() : nullptr;
      gemm_backward(false, false, m, n, k, an->data.data(), bn->data.data(), on->grad.data(), ga,
                    gb);
    });
  }
  return out;
}

template <typename T>
Tensor<T> bmm(const Tensor<T>& a, const Tensor<T>& b, bool trans_a, bool trans_b) {
  if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0)) {
    throw DimensionError("bmm: incompatible batches " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
  }
  const std::size_t batch = a.dim(0);
  const std::size_t m = trans_a ? a.dim(2) : a.dim(1);
  const std::size_t k = trans_a ? a.dim(1) : a.dim(2);
  const std::size_t kb = trans_b ? b.dim(2) : b.dim(1);
  const std::size_t n = trans_b ? b.dim(1) : b.dim(2);
  if (k != kb) {
    throw DimensionError("bmm: inner extents differ for " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
  }
  Tensor<T> out(Shape{batch, m, n});
  forward_mac_counter() += batch * m * n * k;
  const std::size_t sa = m * k, sb = k * n, sc = m * n;
  for (std::size_t i = 0; i < batch; ++i) {
    gemm(trans_a, trans_b, m, n, k, a.ptr() + i * sa, b.ptr() + i * sb, out.ptr() + i * sc);
  }
  if (autograd::needs_grad(a, b)) {
    auto an = a.node(), bn = b.node(), on = out.node();
    autograd::record(out, [=] {
      if (on->grad.empty()) return;
      T* ga = an->requires_grad ? autograd::grad_buffer(*an).data() : nullptr;
      T* gb = bn->requires_grad ? autograd::grad_buffer(*bn).data() : nullptr;
      for (std::size_t i = 0; i < batch; ++i) {
        gemm_backward(trans_a, trans_b, m, n, k, an->data.data() + i * sa,
                      bn->data.data() + i * sb, on->grad.data() + i * sc,
                      ga ? ga + i * sa : nullptr, gb ? gb + i * sb : nullptr);
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  if (x.rank() == 0 || w.rank() != 2 || x.shape().back() != w.dim(0)) {
    throw DimensionError("linear: input " + shape_str(x.shape()) + " does not match weight " +
                         shape_str(w.shape()));
  }
  const bool has_bias = b.defined();
  const std::size_t in = w.dim(0), outc = w.dim(1);
  if (has_bias && (b.rank() != 1 || b.dim(0) != outc)) {
    throw DimensionError("linear: bias " + shape_str(b.shape()) + " does not match weight " +
                         shape_str(w.shape()));
  }
  const std::size_t rows = x.numel() / in;
  Shape shape = x.shape();
  shape.back() = outc;
  Tensor<T> out(shape);
  T* y = out.ptr();
  if (has_bias) {
    for (std::size_t r = 0; r < rows; ++r) std::copy_n(b.ptr(), outc, y + r * outc);
  }
  gemm(false, false, rows, outc, in, x.ptr(), w.ptr(), y);
  forward_mac_counter() += rows * outc * in;
  const bool track = has_bias ? autograd::needs_grad(x, w, b) : autograd::needs_grad(x, w);
  if (track) {
    auto xn = x.node(), wn = w.node(), on = out.node();
    auto bn = has_bias ? b.node() : nullptr;
    autograd::record(out, [=] {
      if (on->grad.empty()) return;
      const T* gy = on->grad.data();
      T* gx = xn->requires_grad ? autograd::grad_buffer(*xn).data() : nullptr;
      T* gw = wn->requires_grad ? autograd::grad_buffer(*wn).data() : nullptr;
      gemm_backward(false, false, rows, outc, in, xn->data.data(), wn->data.data(), gy, gx, gw);
      if (bn && bn->requires_grad) {
        auto& gb = autograd::grad_buffer(*bn);
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t j = 0; j < outc; ++j) gb[j] += gy[r * outc + j];
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "add");
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a[i] + b[i];
  if (autograd::needs_grad(a, b)) {
    auto an = a.node(), bn = b.node(), on = out.node();
    autograd::record(out, [an, bn, on] {
      if (on->grad.empty()) return;
      if (an->requires_grad) accumulate(autograd::grad_buffer(*an), on->grad);
      if (bn->requires_grad) accumulate(autograd::grad_buffer(*bn), on->grad);
    });
  }
  return out;
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "sub");
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a[i] - b[i];
  if (autograd::needs_grad(a, b)) {
    auto an = a.node(), bn = b.node(), on = out.node();
    autograd::record(out, [an, bn, on] {
      if (on->grad.empty()) return;
      if (an->requires_grad) accumulate(autograd::grad_buffer(*an), on->grad);
      if (bn->requires_grad) {
        auto& gb = autograd::grad_buffer(*bn);
        for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= on->grad[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "mul");
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a[i] * b[i];
  if (autograd::needs_grad(a, b)) {
    auto an = a.node(), bn = b.node(), on = out.node();
    autograd::record(out, [an, bn, on] {
      if (on->grad.empty()) return;
      const auto& gy = on->grad;
      if (an->requires_grad) {
        auto& ga = autograd::grad_buffer(*an);
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += gy[i] * bn->data[i];
      }
      if (bn->requires_grad) {
        auto& gb = autograd::grad_buffer(*bn);
        for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += gy[i] * an->data[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor) {
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = x[i] * factor;
  if (autograd::needs_grad(x)) {
    auto xn = x.node(), on = out.node();
    autograd::record(out, [xn, on, factor] {
      if (on->grad.empty()) return;
      auto& gx = autograd::grad_buffer(*xn);
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += on->grad[i] * factor;
    });
  }
  return out;
}

template <typename T>
Tensor<T> add_broadcast(const Tensor<T>& a, const Tensor<T>& b) {
  const std::size_t ra = a.rank(), rb = b.rank();
  if (rb > ra) {
    throw DimensionError("add_broadcast: " + shape_str(b.shape()) + " has more axes than " +
                         shape_str(a.shape()));
  }
  // b stride for every axis of a (0 on broadcast or missing axes).
  std::vector<std::size_t> bstride(ra, 0);
  std::size_t stride = 1;
  for (std::size_t i = 0; i < rb; ++i) {
    const std::size_t ax_b = rb - 1 - i, ax_a = ra - 1 - i;
    const std::size_t db = b.dim(ax_b);
    if (db != a.dim(ax_a) && db != 1) {
      throw DimensionError("add_broadcast: cannot broadcast " + shape_str(b.shape()) + " to " +
                           shape_str(a.shape()));
    }
    bstride[ax_a] = db == 1 ? 0 : stride;
    stride *= db;
  }
  // Map each element of a to its b offset once; reused by backward.
  auto boffset = std::make_shared<std::vector<std::size_t>>(a.numel());
  {
    std::vector<std::size_t> idx(ra, 0);
    std::size_t off = 0;
    for (std::size_t i = 0; i < a.numel(); ++i) {
      (*boffset)[i] = off;
      for (std::size_t ax = ra; ax-- > 0;) {
        ++idx[ax];
        off += bstride[ax];
        if (idx[ax] < a.dim(ax)) break;
        off -= bstride[ax] * idx[ax];
        idx[ax] = 0;
      }
    }
  }
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a[i] + b[(*boffset)[i]];
  if (autograd::needs_grad(a, b)) {
    auto an = a.node(), bn = b.node(), on = out.node();
    autograd::record(out, [an, bn, on, boffset] {
      if (on->grad.empty()) return;
      if (an->requires_grad) accumulate(autograd::grad_buffer(*an), on->grad);
      if (bn->requires_grad) {
        auto& gb = autograd::grad_buffer(*bn);
        for (std::size_t i = 0; i < on->grad.size(); ++i) gb[(*boffset)[i]] += on->grad[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T s = T(0);
  for (T v : x.data()) s += v;
  Tensor<T> out = Tensor<T>::scalar(s);
  if (autograd::needs_grad(x)) {
    auto xn = x.node(), on = out.node();
    autograd::record(out, [xn, on] {
      if (on->grad.empty()) return;
      auto& gx = autograd::grad_buffer(*xn);
      for (auto& g : gx) g += on->grad[0];
    });
  }
  return out;
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  if (x.numel() == 0) throw DimensionError("mean: empty tensor");
  return scale(sum(x), T(1) / static_cast<T>(x.numel()));
}

template <typename T>
Tensor<T> mean_axis(const Tensor<T>& x, std::size_t axis) {
  const std::size_t n = x.dim(axis);
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= x.dim(i);
  for (std::size_t i = axis + 1; i < x.rank(); ++i) inner *= x.dim(i);
  Shape shape = x.shape();
  shape.erase(shape.begin() + static_cast<std::ptrdiff_t>(axis));
  Tensor<T> out(shape);
  const T inv = T(1) / static_cast<T>(n);
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t j = 0; j < n; ++j) {
      const T* src = x.ptr() + (o * n + j) * inner;
      T* dst = out.ptr() + o * inner;
      for (std::size_t i = 0; i < inner; ++i) dst[i] += src[i];
    }
  }
  for (auto& v : out.data()) v *= inv;
  if (autograd::needs_grad(x)) {
    auto xn = x.node(), on = out.node();
    autograd::record(out, [=] {
      if (on->grad.empty()) return;
      auto& gx = autograd::grad_buffer(*xn);
      for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t j = 0; j < n; ++j) {
          T* dst = gx.data() + (o * n + j) * inner;
          const T* src = on->grad.data() + o * inner;
          for (std::size_t i = 0; i < inner; ++i) dst[i] += src[i] * inv;
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis) {
  const std::size_t n = x.dim(axis);
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= x.dim(i);
  for (std::size_t i = axis + 1; i < x.rank(); ++i) inner *= x.dim(i);
  Tensor<T> out(x.shape());
  const T* in = x.ptr();
  T* y = out.ptr();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t i = 0; i < inner; ++i) {
      const std::size_t base = o * n * inner + i;
      T mx = in[base];
      for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, in[base + j * inner]);
      T total = T(0);
      for (std::size_t j = 0; j < n; ++j) {
        const T e = std::exp(in[base + j * inner] - mx);
        y[base + j * inner] = e;
        total += e;
      }
      const T inv = T(1) / total;
      for (std::size_t j = 0; j < n; ++j) y[base + j * inner] *= inv;
    }
  }
  if (autograd::needs_grad(x)) {
    auto xn = x.node(), on = out.node();
    autograd::record(out, [=] {
      if (on->grad.empty()) return;
      auto& gx = autograd::grad_buffer(*xn);
      const T* yv = on->data.data();
      const T* gy = on->grad.data();
      for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t i = 0; i < inner; ++i) {
          const std::size_t base = o * n * inner + i;
          T dot = T(0);
          for (std::size_t j = 0; j < n; ++j) dot += gy[base + j * inner] * yv[base + j * inner];
          for (std::size_t j = 0; j < n; ++j) {
            const std::size_t p = base + j * inner;
            gx[p] += yv[p] * (gy[p] - dot);
          }
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     double eps) {
  if (x.rank() == 0) throw DimensionError("layer_norm: scalar input");
  const std::size_t c = x.shape().back();
  if (gamma.numel() != c || beta.numel() != c) {
    throw DimensionError("layer_norm: affine parameters do not match " + shape_str(x.shape()));
  }
  const std::size_t rows = x.numel() / c;
  Tensor<T> out(x.shape());
  auto xhat = std::make_shared<std::vector<T>>(x.numel());
  auto rstd = std::make_shared<std::vector<T>>(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = x.ptr() + r * c;
    T mu = T(0);
    for (std::size_t j = 0; j < c; ++j) mu += in[j];
    mu /= static_cast<T>(c);
    T var = T(0);
    for (std::size_t j = 0; j < c; ++j) var += (in[j] - mu) * (in[j] - mu);
    var /= static_cast<T>(c);
    const T rs = T(1) / std::sqrt(var + static_cast<T>(eps));
    (*rstd)[r] = rs;
    T* xh = xhat->data() + r * c;
    T* y = out.ptr() + r * c;
    for (std::size_t j = 0; j < c; ++j) {
      xh[j] = (in[j] - mu) * rs;
      y[j] = xh[j] * gamma[j] + beta[j];
    }
  }
  if (autograd::needs_grad(x, gamma, beta)) {
    auto xn = x.node(), gn = gamma.node(), bn = beta.node(), on = out.node();
    autograd::record(out, [=] {
      if (on->grad.empty()) return;
      const T* gy = on->grad.data();
      if (gn->requires_grad) {
        auto& gg = autograd::grad_buffer(*gn);
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t j = 0; j < c; ++j) gg[j] += gy[r * c + j] * (*xhat)[r * c + j];
        }
      }
      if (bn->requires_grad) {
        auto& gb = autograd::grad_buffer(*bn);
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t j = 0; j < c; ++j) gb[j] += gy[r * c + j];
        }
      }
      if (xn->requires_grad) {
        auto& gx = autograd::grad_buffer(*xn);
        const T inv_c = T(1) / static_cast<T>(c);
        for (std::size_t r = 0; r < rows; ++r) {
          const T* g = gy + r * c;
          const T* xh = xhat->data() + r * c;
          T m1 = T(0), m2 = T(0);
          for (std::size_t j = 0; j < c; ++j) {
            const T gg = g[j] * gn->data[j];
            m1 += gg;
            m2 += gg * xh[j];
          }
          m1 *= inv_c;
          m2 *= inv_c;
          const T rs = (*rstd)[r];
          for (std::size_t j = 0; j < c; ++j) {
            gx[r * c + j] += rs * (g[j] * gn->data[j] - m1 - xh[j] * m2);
          }
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
  Tensor<T> out(x.shape());
  const T inv_sqrt2 = static_cast<T>(1.0 / std::numbers::sqrt2);
  for (std::size_t i = 0; i < out.numel(); ++i) {
    out[i] = T(0.5) * x[i] * (T(1) + std::erf(x[i] * inv_sqrt2));
  }
  if (autograd::needs_grad(x)) {
    auto xn = x.node(), on = out.node();
    autograd::record(out, [xn, on, inv_sqrt2] {
      if (on->grad.empty()) return;
      auto& gx = autograd::grad_buffer(*xn);
      const T inv_sqrt2pi = static_cast<T>(std::numbers::inv_sqrtpi / std::numbers::sqrt2);
      for (std::size_t i = 0; i < gx.size(); ++i) {
        const T v = xn->data[i];
        const T cdf = T(0.5) * (T(1) + std::erf(v * inv_sqrt2));
        const T pdf = inv_sqrt2pi * std::exp(T(-0.5) * v * v);
        gx[i] += on->grad[i] * (cdf + v * pdf);
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " +
                         shape_str(shape));
  }
  Tensor<T> out(std::move(shape), std::vector<T>(x.data().begin(), x.data().end()));
  if (autograd::needs_grad(x)) {
    auto xn = x.node(), on = out.node();
    autograd::record(out, [xn, on] {
      if (on->grad.empty()) return;
      accumulate(autograd::grad_buffer(*xn), on->grad);
    });
  }
  return out;
}

#define SLDB_INSTANTIATE_OPS(T)                                                              \
  template void gemm(bool, bool, std::size_t, std::size_t, std::size_t, const T*, const T*,  \
                     T*);                                                                    \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                             \
  template Tensor<T> bmm(const Tensor<T>&, const Tensor<T>&, bool, bool);                    \
  template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);           \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                \
  template Tensor<T> scale(const Tensor<T>&, T);                                             \
  template Tensor<T> add_broadcast(const Tensor<T>&, const Tensor<T>&);                      \
  template Tensor<T> sum(const Tensor<T>&);                                                  \
  template Tensor<T> mean(const Tensor<T>&);                                                 \
  template Tensor<T> mean_axis(const Tensor<T>&, std::size_t);                               \
  template Tensor<T> softmax(const Tensor<T>&, std::size_t);                                 \
  template Tensor<T> layer_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, double); \
  template Tensor<T> gelu(const Tensor<T>&);                                                 \
  template Tensor<T> reshape(const Tensor<T>&, Shape);

SLDB_INSTANTIATE_OPS(float)
SLDB_INSTANTIATE_OPS(double)

}  // namespace sldb
