#pragma once

// Layer primitives with hand-written backward passes. Activations are
// [N, C, H, W]; all convolutions are 3x3 with padding 1.

#include <Eigen/Core>

#include <cmath>
#include <vector>

#include "amsrc/tensor.hpp"

namespace amsrc::nn {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MatMap = Eigen::Map<RowMat<T>>;
template <class T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

inline int conv_out_size(int in, int stride) { return (in - 1) / stride + 1; }

// Column matrix of sample n: [C*9, Ho*Wo].
template <class T>
void im2col(const Tensor<T>& x, int n, int stride, RowMat<T>& cols) {
  const int c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int ho = conv_out_size(h, stride), wo = conv_out_size(w, stride);
  cols.resize(c * 9, ho * wo);
  for (int ci = 0; ci < c; ++ci) {
    const T* src = &x.at(n, ci, 0, 0);
    for (int ky = 0; ky < 3; ++ky)
      for (int kx = 0; kx < 3; ++kx) {
        T* dst = cols.row(ci * 9 + ky * 3 + kx).data();
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * stride + ky - 1;
          T* d = dst + oy * wo;
          if (iy < 0 || iy >= h) {
            std::fill(d, d + wo, T{0});
            continue;
          }
          const T* s = src + iy * w;
          if (stride == 1) {
            // ix = ox + kx - 1
            const int lo = kx == 0 ? 1 : 0;
            const int hi = kx == 2 ? wo - 1 : wo;
            if (lo) d[0] = T{0};
            if (hi < wo) d[wo - 1] = T{0};
            std::copy(s + lo + kx - 1, s + hi + kx - 1, d + lo);
          } else {
            for (int ox = 0; ox < wo; ++ox) {
              const int ix = ox * stride + kx - 1;
              d[ox] = (ix < 0 || ix >= w) ? T{0} : s[ix];
            }
          }
        }
      }
  }
}

// Scatter-adds the column matrix of sample n back into dx.
template <class T>
void col2im_add(const RowMat<T>& cols, int n, int stride, Tensor<T>& dx) {
  const int c = dx.dim(1), h = dx.dim(2), w = dx.dim(3);
  const int ho = conv_out_size(h, stride), wo = conv_out_size(w, stride);
  for (int ci = 0; ci < c; ++ci) {
    T* dst = &dx.at(n, ci, 0, 0);
    for (int ky = 0; ky < 3; ++ky)
      for (int kx = 0; kx < 3; ++kx) {
        const T* src = cols.row(ci * 9 + ky * 3 + kx).data();
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * stride + ky - 1;
          if (iy < 0 || iy >= h) continue;
          T* d = dst + iy * w;
          const T* s = src + oy * wo;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * stride + kx - 1;
            if (ix >= 0 && ix < w) d[ix] += s[ox];
          }
        }
      }
  }
}

// weight [O, C, 3, 3], bias [O].
template <class T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias, int stride) {
  const int n = x.dim(0), c = x.dim(1);
  const int o = weight.dim(0);
  if (weight.dim(1) != c)
    fail(ErrorKind::data, "conv2d: weight expects " + std::to_string(weight.dim(1)) + " input channels, got " +
                              std::to_string(c));
  const int ho = conv_out_size(x.dim(2), stride), wo = conv_out_size(x.dim(3), stride);
  const int plane = ho * wo;
  ConstMatMap<T> wm(weight.data(), o, c * 9);
  Tensor<T> y({n, o, ho, wo});
  RowMat<T> cols;
  for (int ni = 0; ni < n; ++ni) {
    im2col(x, ni, stride, cols);
    MatMap<T> ym(&y.at(ni, 0, 0, 0), o, plane);
    ym.noalias() = wm * cols;
    for (int oi = 0; oi < o; ++oi) ym.row(oi).array() += bias[oi];
  }
  return y;
}

// Accumulates into dweight/dbias; returns dL/dx.
template <class T>
Tensor<T> conv2d_backward(const Tensor<T>& x, const Tensor<T>& weight, int stride, const Tensor<T>& dy,
                          Tensor<T>& dweight, Tensor<T>& dbias) {
  const int n = x.dim(0), c = x.dim(1);
  const int o = weight.dim(0);
  const int plane = dy.dim(2) * dy.dim(3);
  ConstMatMap<T> wm(weight.data(), o, c * 9);
  MatMap<T> dwm(dweight.data(), o, c * 9);
  Tensor<T> dx(x.shape());
  RowMat<T> cols, dcols(c * 9, plane);
  for (int ni = 0; ni < n; ++ni) {
    ConstMatMap<T> dym(&dy.at(ni, 0, 0, 0), o, plane);
    im2col(x, ni, stride, cols);
    dwm.noalias() += dym * cols.transpose();
    for (int oi = 0; oi < o; ++oi) dbias[oi] += dym.row(oi).sum();
    dcols.noalias() = wm.transpose() * dym;
    col2im_add(dcols, ni, stride, dx);
  }
  return dx;
}

template <class T>
struct BatchNormCache {
  bool train = true;
  Tensor<T> xhat;
  std::vector<T> inv_std;
  std::vector<T> batch_mean;
  std::vector<T> batch_var;  // biased
};

// Per-channel normalization over (N, H, W). In train mode batch statistics are
// used and reported through `cache`; running statistics are never touched here.
template <class T>
Tensor<T> batchnorm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, const Tensor<T>& running_mean,
                    const Tensor<T>& running_var, bool train, T eps, BatchNormCache<T>* cache) {
  const int n = x.dim(0), c = x.dim(1);
  const int plane = x.dim(2) * x.dim(3);
  const double count = static_cast<double>(n) * plane;
  std::vector<T> mean(c), var(c), inv_std(c);
  for (int ci = 0; ci < c; ++ci) {
    if (train) {
      double s = 0.0;
      for (int ni = 0; ni < n; ++ni) {
        const T* p = &x.at(ni, ci, 0, 0);
        for (int k = 0; k < plane; ++k) s += p[k];
      }
      const double m = s / count;
      double v = 0.0;
      for (int ni = 0; ni < n; ++ni) {
        const T* p = &x.at(ni, ci, 0, 0);
        for (int k = 0; k < plane; ++k) v += (p[k] - m) * (p[k] - m);
      }
      mean[ci] = static_cast<T>(m);
      var[ci] = static_cast<T>(v / count);
    } else {
      mean[ci] = running_mean[ci];
      var[ci] = running_var[ci];
    }
    inv_std[ci] = T{1} / std::sqrt(var[ci] + eps);
  }
  Tensor<T> y(x.shape());
  Tensor<T> xhat;
  if (cache) xhat = Tensor<T>(x.shape());
  for (int ni = 0; ni < n; ++ni)
    for (int ci = 0; ci < c; ++ci) {
      const T* p = &x.at(ni, ci, 0, 0);
      T* q = &y.at(ni, ci, 0, 0);
      T* h = cache ? &xhat.at(ni, ci, 0, 0) : nullptr;
      for (int k = 0; k < plane; ++k) {
        const T xh = (p[k] - mean[ci]) * inv_std[ci];
        if (h) h[k] = xh;
        q[k] = gamma[ci] * xh + beta[ci];
      }
    }
  if (cache) {
    cache->train = train;
    cache->xhat = std::move(xhat);
    cache->inv_std = std::move(inv_std);
    cache->batch_mean = std::move(mean);
    cache->batch_var = std::move(var);
  }
  return y;
}

template <class T>
Tensor<T> batchnorm_backward(const BatchNormCache<T>& cache, const Tensor<T>& gamma, const Tensor<T>& dy,
                             Tensor<T>& dgamma, Tensor<T>& dbeta) {
  const int n = dy.dim(0), c = dy.dim(1);
  const int plane = dy.dim(2) * dy.dim(3);
  const T count = static_cast<T>(n) * plane;
  Tensor<T> dx(dy.shape());
  for (int ci = 0; ci < c; ++ci) {
    T sum_dy{0}, sum_dy_xhat{0};
    for (int ni = 0; ni < n; ++ni) {
      const T* g = &dy.at(ni, ci, 0, 0);
      const T* h = &cache.xhat.at(ni, ci, 0, 0);
      for (int k = 0; k < plane; ++k) {
        sum_dy += g[k];
        sum_dy_xhat += g[k] * h[k];
      }
    }
    dgamma[ci] += sum_dy_xhat;
    dbeta[ci] += sum_dy;
    const T scale = gamma[ci] * cache.inv_std[ci];
    for (int ni = 0; ni < n; ++ni) {
      const T* g = &dy.at(ni, ci, 0, 0);
      const T* h = &cache.xhat.at(ni, ci, 0, 0);
      T* d = &dx.at(ni, ci, 0, 0);
      if (cache.train) {
        for (int k = 0; k < plane; ++k) d[k] = scale * (g[k] - sum_dy / count - h[k] * sum_dy_xhat / count);
      } else {
        for (int k = 0; k < plane; ++k) d[k] = scale * g[k];
      }
    }
  }
  return dx;
}

template <class T>
void relu_inplace(Tensor<T>& x) {
  for (auto& v : x.values()) v = v > T{0} ? v : T{0};
}

// y is the ReLU output.
template <class T>
Tensor<T> relu_backward(const Tensor<T>& y, const Tensor<T>& dy) {
  Tensor<T> dx(dy.shape());
  for (std::size_t i = 0; i < dy.size(); ++i) dx[i] = y[i] > T{0} ? dy[i] : T{0};
  return dx;
}

template <class T>
T sigmoid(T v) {
  return T{1} / (T{1} + std::exp(-v));
}

template <class T>
Tensor<T> upsample2x(const Tensor<T>& x) {
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  Tensor<T> y({n, c, 2 * h, 2 * w});
  for (int ni = 0; ni < n; ++ni)
    for (int ci = 0; ci < c; ++ci)
      for (int yy = 0; yy < 2 * h; ++yy)
        for (int xx = 0; xx < 2 * w; ++xx) y.at(ni, ci, yy, xx) = x.at(ni, ci, yy / 2, xx / 2);
  return y;
}

template <class T>
Tensor<T> upsample2x_backward(const Tensor<T>& dy) {
  const int n = dy.dim(0), c = dy.dim(1), h = dy.dim(2) / 2, w = dy.dim(3) / 2;
  Tensor<T> dx({n, c, h, w});
  for (int ni = 0; ni < n; ++ni)
    for (int ci = 0; ci < c; ++ci)
      for (int yy = 0; yy < 2 * h; ++yy)
        for (int xx = 0; xx < 2 * w; ++xx) dx.at(ni, ci, yy / 2, xx / 2) += dy.at(ni, ci, yy, xx);
  return dx;
}

template <class T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  const int n = a.dim(0), ca = a.dim(1), cb = b.dim(1);
  if (b.dim(0) != n || b.dim(2) != a.dim(2) || b.dim(3) != a.dim(3))
    fail(ErrorKind::data, "concat_channels: incompatible shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  const std::size_t plane = static_cast<std::size_t>(a.dim(2)) * a.dim(3);
  Tensor<T> y({n, ca + cb, a.dim(2), a.dim(3)});
  for (int ni = 0; ni < n; ++ni) {
    std::copy_n(&a.at(ni, 0, 0, 0), ca * plane, &y.at(ni, 0, 0, 0));
    std::copy_n(&b.at(ni, 0, 0, 0), cb * plane, &y.at(ni, ca, 0, 0));
  }
  return y;
}

template <class T>
void split_channels(const Tensor<T>& dy, int ca, Tensor<T>& da, Tensor<T>& db) {
  const int n = dy.dim(0), cb = dy.dim(1) - ca;
  const std::size_t plane = static_cast<std::size_t>(dy.dim(2)) * dy.dim(3);
  da = Tensor<T>({n, ca, dy.dim(2), dy.dim(3)});
  db = Tensor<T>({n, cb, dy.dim(2), dy.dim(3)});
  for (int ni = 0; ni < n; ++ni) {
    std::copy_n(&dy.at(ni, 0, 0, 0), ca * plane, &da.at(ni, 0, 0, 0));
    std::copy_n(&dy.at(ni, ca, 0, 0), cb * plane, &db.at(ni, 0, 0, 0));
  }
}

template <class T>
void add_inplace(Tensor<T>& a, const Tensor<T>& b) {
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
}

}  // namespace amsrc::nn
