#pragma once

// Training loss terms. Image losses treat the trailing two axes as (H, W) and
// average over every leading plane, so a [N,1,32,32] batch gives the mean of
// the per-clip values.

#include <cmath>
#include <string>

#include "amsrc/model.hpp"
#include "amsrc/tensor.hpp"

namespace amsrc {

struct LossWeights {
  double lambda_int = 1.0;
  double lambda_gd = 1.0;
  double lambda_sim = 1.0;
  double lambda_model = 1.0;

  void validate() const {
    if (lambda_int < 0 || lambda_gd < 0 || lambda_sim < 0 || lambda_model < 0)
      fail(ErrorKind::usage, "loss weights must be non-negative");
  }
};

struct LossReport {
  double l_int = 0;
  double l_gd = 0;
  double l_sim = 0;
  double l_reg = 0;
  double total = 0;
};

inline constexpr double kCosineEps = 1e-8;

// mean((xhat - x)^2); optional gradient w.r.t. xhat.
template <class T>
T intensity_loss(const Tensor<T>& xhat, const Tensor<T>& x, Tensor<T>* grad = nullptr) {
  require_same_shape(xhat, x, "intensity_loss");
  const T n = static_cast<T>(x.size());
  T s{0};
  for (std::size_t i = 0; i < x.size(); ++i) {
    const T d = xhat[i] - x[i];
    s += d * d;
  }
  if (grad) {
    *grad = Tensor<T>(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) (*grad)[i] = T{2} * (xhat[i] - x[i]) / n;
  }
  return s / n;
}

// Sum over positions of | |dxhat| - |dx| | for the vertical (i-1) and
// horizontal (j-1) neighbours, divided by the number of pixel positions. Terms
// whose neighbour falls outside the image are omitted.
template <class T>
T gradient_loss(const Tensor<T>& xhat, const Tensor<T>& x, Tensor<T>* grad = nullptr) {
  require_same_shape(xhat, x, "gradient_loss");
  if (x.rank() < 2) fail(ErrorKind::data, "gradient_loss: needs at least 2 axes");
  const int h = x.dim(x.rank() - 2), w = x.dim(x.rank() - 1);
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  const std::size_t planes = x.size() / plane;
  const T n = static_cast<T>(x.size());
  if (grad) *grad = Tensor<T>(x.shape());
  auto sgn = [](T v) { return static_cast<T>((v > T{0}) - (v < T{0})); };
  T s{0};
  for (std::size_t p = 0; p < planes; ++p) {
    const T* a = xhat.data() + p * plane;
    const T* b = x.data() + p * plane;
    T* g = grad ? grad->data() + p * plane : nullptr;
    auto term = [&](std::size_t cur, std::size_t prev) {
      const T da = a[cur] - a[prev];
      const T db = b[cur] - b[prev];
      const T diff = std::abs(da) - std::abs(db);
      s += std::abs(diff);
      if (g) {
        const T k = sgn(diff) * sgn(da) / n;
        g[cur] += k;
        g[prev] -= k;
      }
    };
    for (int i = 0; i < h; ++i)
      for (int j = 0; j < w; ++j) {
        const std::size_t cur = static_cast<std::size_t>(i) * w + j;
        if (i > 0) term(cur, cur - w);
        if (j > 0) term(cur, cur - 1);
      }
  }
  return s / n;
}

// 1 - <f,g> / ((|f|+eps)(|g|+eps)) over the flattened tensors.
template <class T>
T consistency_loss(std::span<const T> f, std::span<const T> g, std::span<T> grad_f = {}, std::span<T> grad_g = {},
                   T scale = T{1}) {
  if (f.size() != g.size()) fail(ErrorKind::data, "consistency_loss: shape mismatch");
  // Accumulate in double so the float and double paths agree closely.
  double dot = 0, ff = 0, gg = 0;
  for (std::size_t i = 0; i < f.size(); ++i) {
    dot += static_cast<double>(f[i]) * g[i];
    ff += static_cast<double>(f[i]) * f[i];
    gg += static_cast<double>(g[i]) * g[i];
  }
  const double nf = std::sqrt(ff), ng = std::sqrt(gg);
  const double a = nf + kCosineEps, b = ng + kCosineEps;
  const double loss = 1.0 - dot / (a * b);
  if (!grad_f.empty() || !grad_g.empty()) {
    const double s = static_cast<double>(scale);
    for (std::size_t i = 0; i < f.size(); ++i) {
      if (!grad_f.empty()) {
        double d = -g[i] / (a * b);
        if (nf > 0) d += dot / (a * a * b) * f[i] / nf;
        grad_f[i] += static_cast<T>(s * d);
      }
      if (!grad_g.empty()) {
        double d = -f[i] / (a * b);
        if (ng > 0) d += dot / (a * b * b) * g[i] / ng;
        grad_g[i] += static_cast<T>(s * d);
      }
    }
  }
  return static_cast<T>(loss);
}

template <class T>
T consistency_loss(const Tensor<T>& f, const Tensor<T>& g) {
  require_same_shape(f, g, "consistency_loss");
  return consistency_loss<T>(f.values(), g.values());
}

// Mean over the leading (batch) axis of the per-sample consistency loss; the
// gradients (if non-null) are filled with d(mean)/d(input).
template <class T>
T batch_consistency_loss(const Tensor<T>& f, const Tensor<T>& g, Tensor<T>* grad_f, Tensor<T>* grad_g) {
  require_same_shape(f, g, "consistency_loss");
  const int n = f.dim(0);
  const std::size_t per = f.size() / static_cast<std::size_t>(n);
  if (grad_f) *grad_f = Tensor<T>(f.shape());
  if (grad_g) *grad_g = Tensor<T>(g.shape());
  T total{0};
  for (int i = 0; i < n; ++i) {
    const std::size_t off = per * i;
    std::span<T> gf = grad_f ? std::span<T>(grad_f->data() + off, per) : std::span<T>{};
    std::span<T> gg = grad_g ? std::span<T>(grad_g->data() + off, per) : std::span<T>{};
    total += consistency_loss<T>(std::span<const T>(f.data() + off, per), std::span<const T>(g.data() + off, per), gf, gg,
                                 T{1} / n);
  }
  return total / n;
}

// Sum of squares of every multiplicative weight tensor; biases and
// normalization affine terms are excluded. Adds scale * d/dW to grads.
template <class T>
T regularization_loss(const ModelParameters<T>& params, Gradients<T>* grads = nullptr, T scale = T{1}) {
  T s{0};
  for (const auto& [name, t] : params.tensors) {
    if (!is_decayed_weight(name)) continue;
    Tensor<T>* g = grads ? &grads->at(name) : nullptr;
    for (std::size_t i = 0; i < t.size(); ++i) {
      s += t[i] * t[i];
      if (g) (*g)[i] += scale * T{2} * t[i];
    }
  }
  return s;
}

// Weighted sum; throws a numerical error naming the first non-finite term.
LossReport total_loss(double l_int, double l_gd, double l_sim, double l_reg, const LossWeights& weights);

}  // namespace amsrc
