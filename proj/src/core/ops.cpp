// Copyright 2026 The ltdd Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "core/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>

#include "core/error.hpp"

namespace ltdd::ops {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using CMapMat = Eigen::Map<const RowMat<T>>;

template <typename T>
using Node = detail::Node<T>;

void check_same(const Shape& a, const Shape& b, const char* op) {
  if (a != b)
    fail(ErrorCode::kInvalidArgument,
         std::string(op) + ": shape mismatch " + shape_string(a) + " vs " + shape_string(b));
}

// (outer, channels, inner) view of a tensor whose axis 1 is the channel axis.
struct ChannelView {
  std::size_t outer, channels, inner;
};

ChannelView channel_view(const Shape& s, const char* op) {
  if (s.size() < 2) fail(ErrorCode::kInvalidArgument, std::string(op) + ": need rank >= 2");
  std::size_t inner = 1;
  for (std::size_t i = 2; i < s.size(); ++i) inner *= s[i];
  return {s[0], s[1], inner};
}

}  // namespace

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  check_same(a.shape(), b.shape(), "add");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  return Tensor<T>::make(a.shape(), std::move(out), {a, b}, [](Node<T>& self) {
    for (auto& p : self.parents) {
      if (!p->requires_grad) continue;
      T* g = p->grad_buffer();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    }
  });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  check_same(a.shape(), b.shape(), "sub");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
  return Tensor<T>::make(a.shape(), std::move(out), {a, b}, [](Node<T>& self) {
    for (int k = 0; k < 2; ++k) {
      auto& p = self.parents[k];
      if (!p->requires_grad) continue;
      const T sign = k == 0 ? T(1) : T(-1);
      T* g = p->grad_buffer();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += sign * self.grad[i];
    }
  });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  check_same(a.shape(), b.shape(), "mul");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  return Tensor<T>::make(a.shape(), std::move(out), {a, b}, [](Node<T>& self) {
    auto& pa = self.parents[0];
    auto& pb = self.parents[1];
    if (pa->requires_grad) {
      T* g = pa->grad_buffer();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * pb->data[i];
    }
    if (pb->requires_grad) {
      T* g = pb->grad_buffer();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * pa->data[i];
    }
  });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T s) {
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * s;
  return Tensor<T>::make(a.shape(), std::move(out), {a}, [s](Node<T>& self) {
    T* g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += s * self.grad[i];
  });
}

template <typename T>
Tensor<T> square(const Tensor<T>& a) {
  return mul(a, a);
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  double acc = 0.0;
  for (T v : a.data()) acc += static_cast<double>(v);
  return Tensor<T>::make({1}, {static_cast<T>(acc)}, {a}, [](Node<T>& self) {
    T* g = self.parents[0]->grad_buffer();
    const T up = self.grad[0];
    for (std::size_t i = 0; i < self.parents[0]->data.size(); ++i) g[i] += up;
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a) {
  if (a.numel() == 0) fail(ErrorCode::kInvalidArgument, "mean of empty tensor");
  return scale(sum(a), T(1) / static_cast<T>(a.numel()));
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  if (shape_numel(shape) != a.numel())
    fail(ErrorCode::kInvalidArgument,
         "reshape " + shape_string(a.shape()) + " -> " + shape_string(shape));
  std::vector<T> out(a.data().begin(), a.data().end());
  return Tensor<T>::make(std::move(shape), std::move(out), {a}, [](Node<T>& self) {
    T* g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
  });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  std::vector<T> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.data()[i] > T(0) ? x.data()[i] : T(0);
  return Tensor<T>::make(x.shape(), std::move(out), {x}, [](Node<T>& self) {
    auto& p = self.parents[0];
    T* g = p->grad_buffer();
    for (std::size_t i = 0; i < self.grad.size(); ++i)
      if (p->data[i] > T(0)) g[i] += self.grad[i];
  });
}

template <typename T>
Tensor<T> log_clamped(const Tensor<T>& x, T floor) {
  std::vector<T> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::log(std::max(x.data()[i], floor));
  return Tensor<T>::make(x.shape(), std::move(out), {x}, [floor](Node<T>& self) {
    auto& p = self.parents[0];
    T* g = p->grad_buffer();
    for (std::size_t i = 0; i < self.grad.size(); ++i)
      if (p->data[i] > floor) g[i] += self.grad[i] / p->data[i];
  });
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, std::size_t pad) {
  if (x.rank() != 4 || w.rank() != 4 || b.rank() != 1)
    fail(ErrorCode::kInvalidArgument, "conv2d: expected x[N,C,H,W], w[O,C,K,K], b[O]");
  const std::size_t n = x.dim(0), ci = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const std::size_t co = w.dim(0), k = w.dim(2);
  if (w.dim(1) != ci || w.dim(3) != k || b.dim(0) != co)
    fail(ErrorCode::kInvalidArgument, "conv2d: weight " + shape_string(w.shape()) +
                                          " incompatible with input " + shape_string(x.shape()));
  if (h + 2 * pad < k || wd + 2 * pad < k) fail(ErrorCode::kInvalidArgument, "conv2d: kernel larger than input");
  const std::size_t ho = h + 2 * pad - k + 1, wo = wd + 2 * pad - k + 1;
  const std::size_t rows = ci * k * k, cols = ho * wo;

  // im2col for every sample; kept for the weight gradient.
  auto cols_buf = std::make_shared<std::vector<T>>(n * rows * cols, T(0));
  for (std::size_t s = 0; s < n; ++s) {
    T* col = cols_buf->data() + s * rows * cols;
    const T* img = x.data().data() + s * ci * h * wd;
    for (std::size_t c = 0; c < ci; ++c)
      for (std::size_t ky = 0; ky < k; ++ky)
        for (std::size_t kx = 0; kx < k; ++kx) {
          T* dst = col + ((c * k + ky) * k + kx) * cols;
          for (std::size_t oy = 0; oy < ho; ++oy) {
            const long iy = static_cast<long>(oy + ky) - static_cast<long>(pad);
            if (iy < 0 || iy >= static_cast<long>(h)) continue;
            const T* src = img + (c * h + static_cast<std::size_t>(iy)) * wd;
            for (std::size_t ox = 0; ox < wo; ++ox) {
              const long ix = static_cast<long>(ox + kx) - static_cast<long>(pad);
              if (ix >= 0 && ix < static_cast<long>(wd)) dst[oy * wo + ox] = src[ix];
            }
          }
        }
  }

  std::vector<T> out(n * co * cols);
  CMapMat<T> wm(w.data().data(), co, rows);
  for (std::size_t s = 0; s < n; ++s) {
    CMapMat<T> col(cols_buf->data() + s * rows * cols, rows, cols);
    MapMat<T> o(out.data() + s * co * cols, co, cols);
    o.noalias() = wm * col;
    for (std::size_t c = 0; c < co; ++c) o.row(c).array() += b.data()[c];
  }

  return Tensor<T>::make(
      {n, co, ho, wo}, std::move(out), {x, w, b},
      [=](Node<T>& self) {
        auto& px = self.parents[0];
        auto& pw = self.parents[1];
        auto& pb = self.parents[2];
        CMapMat<T> wm(pw->data.data(), co, rows);
        RowMat<T> dcol(rows, cols);
        for (std::size_t s = 0; s < n; ++s) {
          CMapMat<T> g(self.grad.data() + s * co * cols, co, cols);
          CMapMat<T> col(cols_buf->data() + s * rows * cols, rows, cols);
          if (pw->requires_grad) {
            MapMat<T> gw(pw->grad_buffer(), co, rows);
            gw.noalias() += g * col.transpose();
          }
          if (pb->requires_grad) {
            T* gb = pb->grad_buffer();
            for (std::size_t c = 0; c < co; ++c) gb[c] += g.row(c).sum();
          }
          if (px->requires_grad) {
            dcol.noalias() = wm.transpose() * g;
            T* gx = px->grad_buffer() + s * ci * h * wd;
            for (std::size_t c = 0; c < ci; ++c)
              for (std::size_t ky = 0; ky < k; ++ky)
                for (std::size_t kx = 0; kx < k; ++kx) {
                  const T* src = dcol.data() + ((c * k + ky) * k + kx) * cols;
                  for (std::size_t oy = 0; oy < ho; ++oy) {
                    const long iy = static_cast<long>(oy + ky) - static_cast<long>(pad);
                    if (iy < 0 || iy >= static_cast<long>(h)) continue;
                    T* dst = gx + (c * h + static_cast<std::size_t>(iy)) * wd;
                    for (std::size_t ox = 0; ox < wo; ++ox) {
                      const long ix = static_cast<long>(ox + kx) - static_cast<long>(pad);
                      if (ix >= 0 && ix < static_cast<long>(wd)) dst[ix] += src[oy * wo + ox];
                    }
                  }
                }
          }
        }
      });
}

template <typename T>
Tensor<T> avg_pool2(const Tensor<T>& x) {
  if (x.rank() != 4) fail(ErrorCode::kInvalidArgument, "avg_pool2: expected rank 4");
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t ho = h / 2, wo = w / 2;
  if (ho == 0 || wo == 0) fail(ErrorCode::kInvalidArgument, "avg_pool2: input too small");
  std::vector<T> out(n * c * ho * wo);
  const T* in = x.data().data();
  for (std::size_t p = 0; p < n * c; ++p)
    for (std::size_t y = 0; y < ho; ++y)
      for (std::size_t xx = 0; xx < wo; ++xx) {
        const T* r0 = in + (p * h + 2 * y) * w + 2 * xx;
        const T* r1 = r0 + w;
        out[(p * ho + y) * wo + xx] = (r0[0] + r0[1] + r1[0] + r1[1]) * T(0.25);
      }
  return Tensor<T>::make({n, c, ho, wo}, std::move(out), {x}, [=](Node<T>& self) {
    T* g = self.parents[0]->grad_buffer();
    for (std::size_t p = 0; p < n * c; ++p)
      for (std::size_t y = 0; y < ho; ++y)
        for (std::size_t xx = 0; xx < wo; ++xx) {
          const T v = self.grad[(p * ho + y) * wo + xx] * T(0.25);
          T* r0 = g + (p * h + 2 * y) * w + 2 * xx;
          r0[0] += v;
          r0[1] += v;
          r0[w] += v;
          r0[w + 1] += v;
        }
  });
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  if (x.rank() != 2 || w.rank() != 2 || b.rank() != 1 || w.dim(1) != x.dim(1) || b.dim(0) != w.dim(0))
    fail(ErrorCode::kInvalidArgument, "linear: x " + shape_string(x.shape()) + ", w " +
                                          shape_string(w.shape()) + ", b " + shape_string(b.shape()));
  const std::size_t n = x.dim(0), f = x.dim(1), o = w.dim(0);
  std::vector<T> out(n * o);
  {
    CMapMat<T> xm(x.data().data(), n, f);
    CMapMat<T> wm(w.data().data(), o, f);
    MapMat<T> y(out.data(), n, o);
    y.noalias() = xm * wm.transpose();
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t c = 0; c < o; ++c) y(r, c) += b.data()[c];
  }
  return Tensor<T>::make({n, o}, std::move(out), {x, w, b}, [=](Node<T>& self) {
    auto& px = self.parents[0];
    auto& pw = self.parents[1];
    auto& pb = self.parents[2];
    CMapMat<T> g(self.grad.data(), n, o);
    if (px->requires_grad) {
      MapMat<T> gx(px->grad_buffer(), n, f);
      gx.noalias() += g * CMapMat<T>(pw->data.data(), o, f);
    }
    if (pw->requires_grad) {
      MapMat<T> gw(pw->grad_buffer(), o, f);
      gw.noalias() += g.transpose() * CMapMat<T>(px->data.data(), n, f);
    }
    if (pb->requires_grad) {
      T* gb = pb->grad_buffer();
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < o; ++c) gb[c] += g(r, c);
    }
  });
}

template <typename T>
Tensor<T> channel_mean(const Tensor<T>& x) {
  const auto v = channel_view(x.shape(), "channel_mean");
  const std::size_t count = v.outer * v.inner;
  if (count == 0) fail(ErrorCode::kInvalidArgument, "channel_mean: empty batch");
  std::vector<T> out(v.channels);
  for (std::size_t c = 0; c < v.channels; ++c) {
    double acc = 0.0;
    for (std::size_t o = 0; o < v.outer; ++o) {
      const T* p = x.data().data() + (o * v.channels + c) * v.inner;
      for (std::size_t i = 0; i < v.inner; ++i) acc += p[i];
    }
    out[c] = static_cast<T>(acc / static_cast<double>(count));
  }
  return Tensor<T>::make({v.channels}, std::move(out), {x}, [v, count](Node<T>& self) {
    T* g = self.parents[0]->grad_buffer();
    for (std::size_t c = 0; c < v.channels; ++c) {
      const T up = self.grad[c] / static_cast<T>(count);
      for (std::size_t o = 0; o < v.outer; ++o) {
        T* p = g + (o * v.channels + c) * v.inner;
        for (std::size_t i = 0; i < v.inner; ++i) p[i] += up;
      }
    }
  });
}

template <typename T>
Tensor<T> channel_var(const Tensor<T>& x) {
  const auto v = channel_view(x.shape(), "channel_var");
  const std::size_t count = v.outer * v.inner;
  if (count == 0) fail(ErrorCode::kInvalidArgument, "channel_var: empty batch");
  std::vector<T> means(v.channels), out(v.channels);
  for (std::size_t c = 0; c < v.channels; ++c) {
    double acc = 0.0;
    for (std::size_t o = 0; o < v.outer; ++o) {
      const T* p = x.data().data() + (o * v.channels + c) * v.inner;
      for (std::size_t i = 0; i < v.inner; ++i) acc += p[i];
    }
    const double m = acc / static_cast<double>(count);
    double ss = 0.0;
    for (std::size_t o = 0; o < v.outer; ++o) {
      const T* p = x.data().data() + (o * v.channels + c) * v.inner;
      for (std::size_t i = 0; i < v.inner; ++i) ss += (p[i] - m) * (p[i] - m);
    }
    means[c] = static_cast<T>(m);
    out[c] = static_cast<T>(ss / static_cast<double>(count));
  }
  return Tensor<T>::make({v.channels}, std::move(out), {x}, [v, count, means](Node<T>& self) {
    auto& px = self.parents[0];
    T* g = px->grad_buffer();
    for (std::size_t c = 0; c < v.channels; ++c) {
      const T up = T(2) * self.grad[c] / static_cast<T>(count);
      for (std::size_t o = 0; o < v.outer; ++o) {
        const std::size_t base = (o * v.channels + c) * v.inner;
        for (std::size_t i = 0; i < v.inner; ++i) g[base + i] += up * (px->data[base + i] - means[c]);
      }
    }
  });
}

template <typename T>
Tensor<T> bn_normalize(const Tensor<T>& x, const Tensor<T>& mean, const Tensor<T>& var, T eps) {
  const auto v = channel_view(x.shape(), "bn_normalize");
  if (mean.numel() != v.channels || var.numel() != v.channels)
    fail(ErrorCode::kInvalidArgument, "bn_normalize: statistics do not match channel count");
  std::vector<T> inv(v.channels);
  for (std::size_t c = 0; c < v.channels; ++c) inv[c] = T(1) / std::sqrt(var.data()[c] + eps);
  std::vector<T> out(x.numel());
  for (std::size_t o = 0; o < v.outer; ++o)
    for (std::size_t c = 0; c < v.channels; ++c) {
      const std::size_t base = (o * v.channels + c) * v.inner;
      const T m = mean.data()[c];
      for (std::size_t i = 0; i < v.inner; ++i) out[base + i] = (x.data()[base + i] - m) * inv[c];
    }
  return Tensor<T>::make(x.shape(), std::move(out), {x, mean, var}, [v, inv](Node<T>& self) {
    auto& px = self.parents[0];
    auto& pm = self.parents[1];
    auto& pv = self.parents[2];
    T* gx = px->requires_grad ? px->grad_buffer() : nullptr;
    T* gm = pm->requires_grad ? pm->grad_buffer() : nullptr;
    T* gv = pv->requires_grad ? pv->grad_buffer() : nullptr;
    for (std::size_t c = 0; c < v.channels; ++c) {
      double sg = 0.0, sgx = 0.0;
      const T m = pm->data[c];
      for (std::size_t o = 0; o < v.outer; ++o) {
        const std::size_t base = (o * v.channels + c) * v.inner;
        for (std::size_t i = 0; i < v.inner; ++i) {
          const T g = self.grad[base + i];
          if (gx) gx[base + i] += g * inv[c];
          sg += g;
          sgx += g * (px->data[base + i] - m);
        }
      }
      if (gm) gm[c] += static_cast<T>(-sg) * inv[c];
      if (gv) gv[c] += static_cast<T>(-0.5 * sgx) * inv[c] * inv[c] * inv[c];
    }
  });
}

template <typename T>
Tensor<T> channel_affine(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta) {
  const auto v = channel_view(x.shape(), "channel_affine");
  if (gamma.numel() != v.channels || beta.numel() != v.channels)
    fail(ErrorCode::kInvalidArgument, "channel_affine: parameter size mismatch");
  std::vector<T> out(x.numel());
  for (std::size_t o = 0; o < v.outer; ++o)
    for (std::size_t c = 0; c < v.channels; ++c) {
      const std::size_t base = (o * v.channels + c) * v.inner;
      for (std::size_t i = 0; i < v.inner; ++i)
        out[base + i] = x.data()[base + i] * gamma.data()[c] + beta.data()[c];
    }
  return Tensor<T>::make(x.shape(), std::move(out), {x, gamma, beta}, [v](Node<T>& self) {
    auto& px = self.parents[0];
    auto& pg = self.parents[1];
    auto& pb = self.parents[2];
    T* gx = px->requires_grad ? px->grad_buffer() : nullptr;
    T* gg = pg->requires_grad ? pg->grad_buffer() : nullptr;
    T* gb = pb->requires_grad ? pb->grad_buffer() : nullptr;
    for (std::size_t o = 0; o < v.outer; ++o)
      for (std::size_t c = 0; c < v.channels; ++c) {
        const std::size_t base = (o * v.channels + c) * v.inner;
        for (std::size_t i = 0; i < v.inner; ++i) {
          const T g = self.grad[base + i];
          if (gx) gx[base + i] += g * pg->data[c];
          if (gg) gg[c] += g * px->data[base + i];
          if (gb) gb[c] += g;
        }
      }
  });
}

template <typename T>
Tensor<T> select_rows(const Tensor<T>& x, std::span<const std::size_t> rows) {
  if (x.rank() < 1) fail(ErrorCode::kInvalidArgument, "select_rows: rank 0");
  const std::size_t stride = x.dim(0) ? x.numel() / x.dim(0) : 0;
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  std::vector<T> out(idx.size() * stride);
  for (std::size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] >= x.dim(0)) fail(ErrorCode::kInvalidArgument, "select_rows: index out of range");
    std::copy_n(x.data().data() + idx[r] * stride, stride, out.data() + r * stride);
  }
  Shape shape = x.shape();
  shape[0] = idx.size();
  return Tensor<T>::make(std::move(shape), std::move(out), {x}, [idx, stride](Node<T>& self) {
    T* g = self.parents[0]->grad_buffer();
    for (std::size_t r = 0; r < idx.size(); ++r)
      for (std::size_t i = 0; i < stride; ++i) g[idx[r] * stride + i] += self.grad[r * stride + i];
  });
}

template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& x) {
  if (x.rank() != 2) fail(ErrorCode::kInvalidArgument, "softmax_rows: expected rank 2");
  const std::size_t n = x.dim(0), c = x.dim(1);
  std::vector<T> out(x.numel());
  for (std::size_t r = 0; r < n; ++r) {
    const T* in = x.data().data() + r * c;
    T* o = out.data() + r * c;
    const T mx = *std::max_element(in, in + c);
    double z = 0.0;
    for (std::size_t k = 0; k < c; ++k) z += std::exp(static_cast<double>(in[k] - mx));
    for (std::size_t k = 0; k < c; ++k) o[k] = static_cast<T>(std::exp(static_cast<double>(in[k] - mx)) / z);
  }
  return Tensor<T>::make(x.shape(), std::move(out), {x}, [n, c](Node<T>& self) {
    T* g = self.parents[0]->grad_buffer();
    for (std::size_t r = 0; r < n; ++r) {
      const T* s = self.data.data() + r * c;
      const T* up = self.grad.data() + r * c;
      double dot = 0.0;
      for (std::size_t k = 0; k < c; ++k) dot += up[k] * s[k];
      for (std::size_t k = 0; k < c; ++k) g[r * c + k] += s[k] * (up[k] - static_cast<T>(dot));
    }
  });
}

template <typename T>
Tensor<T> log_softmax_rows(const Tensor<T>& x) {
  if (x.rank() != 2) fail(ErrorCode::kInvalidArgument, "log_softmax_rows: expected rank 2");
  const std::size_t n = x.dim(0), c = x.dim(1);
  std::vector<T> out(x.numel());
  for (std::size_t r = 0; r < n; ++r) {
    const T* in = x.data().data() + r * c;
    const T mx = *std::max_element(in, in + c);
    double z = 0.0;
    for (std::size_t k = 0; k < c; ++k) z += std::exp(static_cast<double>(in[k] - mx));
    const double lz = std::log(z) + mx;
    for (std::size_t k = 0; k < c; ++k) out[r * c + k] = static_cast<T>(in[k] - lz);
  }
  return Tensor<T>::make(x.shape(), std::move(out), {x}, [n, c](Node<T>& self) {
    T* g = self.parents[0]->grad_buffer();
    for (std::size_t r = 0; r < n; ++r) {
      const T* ls = self.data.data() + r * c;
      const T* up = self.grad.data() + r * c;
      double total = 0.0;
      for (std::size_t k = 0; k < c; ++k) total += up[k];
      for (std::size_t k = 0; k < c; ++k)
        g[r * c + k] += up[k] - std::exp(ls[k]) * static_cast<T>(total);
    }
  });
}

template <typename T>
Tensor<T> cosine_rows(const Tensor<T>& a, const Tensor<T>& b) {
  check_same(a.shape(), b.shape(), "cosine_rows");
  if (a.rank() != 2) fail(ErrorCode::kInvalidArgument, "cosine_rows: expected rank 2");
  const std::size_t n = a.dim(0), d = a.dim(1);
  std::vector<T> out(n), na(n), nb(n);
  for (std::size_t r = 0; r < n; ++r) {
    double aa = 0, bb = 0, ab = 0;
    for (std::size_t k = 0; k < d; ++k) {
      const double x = a.data()[r * d + k], y = b.data()[r * d + k];
      aa += x * x;
      bb += y * y;
      ab += x * y;
    }
    if (aa == 0.0 || bb == 0.0)
      fail(ErrorCode::kNumeric, "cosine similarity of a zero-norm vector (row " + std::to_string(r) + ")");
    na[r] = static_cast<T>(std::sqrt(aa));
    nb[r] = static_cast<T>(std::sqrt(bb));
    out[r] = static_cast<T>(ab / (std::sqrt(aa) * std::sqrt(bb)));
  }
  return Tensor<T>::make({n}, std::move(out), {a, b}, [n, d, na, nb](Node<T>& self) {
    auto& pa = self.parents[0];
    auto& pb = self.parents[1];
    for (int side = 0; side < 2; ++side) {
      auto& self_p = side == 0 ? pa : pb;
      auto& other = side == 0 ? pb : pa;
      if (!self_p->requires_grad) continue;
      T* g = self_p->grad_buffer();
      const auto& ns = side == 0 ? na : nb;
      const auto& no = side == 0 ? nb : na;
      for (std::size_t r = 0; r < n; ++r) {
        const T cs = self.data[r], up = self.grad[r];
        for (std::size_t k = 0; k < d; ++k) {
          const T x = self_p->data[r * d + k], y = other->data[r * d + k];
          g[r * d + k] += up * (y / (ns[r] * no[r]) - cs * x / (ns[r] * ns[r]));
        }
      }
    }
  });
}

template <typename T>
Tensor<T> norm2(const Tensor<T>& a) {
  double ss = 0.0;
  for (T v : a.data()) ss += static_cast<double>(v) * v;
  const T nrm = static_cast<T>(std::sqrt(ss));
  return Tensor<T>::make({1}, {nrm}, {a}, [nrm](Node<T>& self) {
    if (nrm == T(0)) return;
    auto& p = self.parents[0];
    T* g = p->grad_buffer();
    const T up = self.grad[0] / nrm;
    for (std::size_t i = 0; i < p->data.size(); ++i) g[i] += up * p->data[i];
  });
}

#define LTDD_INSTANTIATE_OPS(T)                                                                 \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                   \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                   \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                   \
  template Tensor<T> scale(const Tensor<T>&, T);                                                \
  template Tensor<T> square(const Tensor<T>&);                                                  \
  template Tensor<T> sum(const Tensor<T>&);                                                     \
  template Tensor<T> mean(const Tensor<T>&);                                                    \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                          \
  template Tensor<T> relu(const Tensor<T>&);                                                    \
  template Tensor<T> log_clamped(const Tensor<T>&, T);                                          \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, std::size_t); \
  template Tensor<T> avg_pool2(const Tensor<T>&);                                               \
  template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);              \
  template Tensor<T> channel_mean(const Tensor<T>&);                                            \
  template Tensor<T> channel_var(const Tensor<T>&);                                             \
  template Tensor<T> bn_normalize(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);     \
  template Tensor<T> channel_affine(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);      \
  template Tensor<T> select_rows(const Tensor<T>&, std::span<const std::size_t>);               \
  template Tensor<T> softmax_rows(const Tensor<T>&);                                            \
  template Tensor<T> log_softmax_rows(const Tensor<T>&);                                        \
  template Tensor<T> cosine_rows(const Tensor<T>&, const Tensor<T>&);                           \
  template Tensor<T> norm2(const Tensor<T>&);

LTDD_INSTANTIATE_OPS(float)
LTDD_INSTANTIATE_OPS(double)

}  // namespace ltdd::ops
