// Pre-LN transformer layer with explicit forward caches and backward pass.
// Internal to the library; shared by the adapter and the decoder.

#pragma once

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "covergen/tensor.h"

namespace covergen::detail {

template <typename T>
using ColVec = Eigen::Matrix<T, Eigen::Dynamic, 1>;

template <typename T>
struct LnCache {
  Matrix<T> xhat;
  ColVec<T> rstd;
};

template <typename T>
Matrix<T> layer_norm(const Matrix<T>& x, const Matrix<T>& g, const Matrix<T>& b, LnCache<T>& c) {
  constexpr T kEps = T(1e-5);
  const Eigen::Index n = x.rows(), d = x.cols();
  c.xhat.resize(n, d);
  c.rstd.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const T mean = x.row(i).mean();
    const auto centered = (x.row(i).array() - mean).eval();
    const T var = centered.square().mean();
    c.rstd(i) = T(1) / std::sqrt(var + kEps);
    c.xhat.row(i) = centered * c.rstd(i);
  }
  Matrix<T> y = c.xhat.array().rowwise() * g.row(0).array();
  if (b.size() > 0) y.array().rowwise() += b.row(0).array();
  return y;
}

template <typename T>
Matrix<T> layer_norm_backward(const Matrix<T>& dy, const Matrix<T>& g, const LnCache<T>& c, Matrix<T>& dg,
                              Matrix<T>& db) {
  dg += (dy.array() * c.xhat.array()).colwise().sum().matrix();
  if (db.size() > 0) db += dy.colwise().sum();
  const Matrix<T> dxhat = dy.array().rowwise() * g.row(0).array();
  Matrix<T> dx(dy.rows(), dy.cols());
  for (Eigen::Index i = 0; i < dy.rows(); ++i) {
    const T m1 = dxhat.row(i).mean();
    const T m2 = (dxhat.row(i).array() * c.xhat.row(i).array()).mean();
    dx.row(i) = c.rstd(i) * (dxhat.row(i).array() - m1 - c.xhat.row(i).array() * m2);
  }
  return dx;
}

template <typename T>
Matrix<T> affine(const Matrix<T>& x, const Matrix<T>& w, const Matrix<T>& b) {
  Matrix<T> y = x * w;
  if (b.size() > 0) y.rowwise() += b.row(0);
  return y;
}

/// Accumulates dw (and db) and returns dx for y = x w + b.
template <typename T>
Matrix<T> affine_backward(const Matrix<T>& dy, const Matrix<T>& x, const Matrix<T>& w, Matrix<T>& dw,
                          Matrix<T>& db) {
  dw.noalias() += x.transpose() * dy;
  if (db.size() > 0) db += dy.colwise().sum();
  return dy * w.transpose();
}

template <typename T>
inline T gelu(T u) {
  constexpr T k = T(0.7978845608028654);  // sqrt(2/pi)
  return T(0.5) * u * (T(1) + std::tanh(k * (u + T(0.044715) * u * u * u)));
}

template <typename T>
inline T gelu_grad(T u) {
  constexpr T k = T(0.7978845608028654);
  const T t = std::tanh(k * (u + T(0.044715) * u * u * u));
  return T(0.5) * (T(1) + t) + T(0.5) * u * (T(1) - t * t) * k * (T(1) + T(3) * T(0.044715) * u * u);
}

template <typename T>
struct LayerCache {
  Matrix<T> x;     // layer input
  LnCache<T> ln1;
  Matrix<T> h1;    // ln1 output
  Matrix<T> qkv;
  std::vector<Matrix<T>> probs;  // per head, T x T
  Matrix<T> attn;  // concatenated head outputs
  Matrix<T> drop_a;  // dropout mask (scaled), empty when inactive
  Matrix<T> x2;
  LnCache<T> ln2;
  Matrix<T> h2;
  Matrix<T> u;     // pre-activation
  Matrix<T> g;     // gelu(u)
  Matrix<T> drop_m;
};

/// Optional dropout source. When rng is null or p == 0 dropout is inactive.
struct DropoutSpec {
  double p = 0.0;
  std::mt19937_64* rng = nullptr;
  bool active() const { return rng != nullptr && p > 0.0; }
};

template <typename T>
Matrix<T> dropout_mask(Eigen::Index rows, Eigen::Index cols, const DropoutSpec& spec) {
  Matrix<T> mask(rows, cols);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const T keep = T(1) / T(1 - spec.p);
  for (Eigen::Index i = 0; i < mask.size(); ++i) mask.data()[i] = u(*spec.rng) < spec.p ? T(0) : keep;
  return mask;
}

template <typename T>
Matrix<T> layer_forward(const LayerParams<T>& p, int heads, bool causal, const Matrix<T>& x, LayerCache<T>& c,
                        const DropoutSpec& drop = {}) {
  const Eigen::Index n = x.rows(), d = x.cols();
  const Eigen::Index dh = d / heads;
  const T scale = T(1) / std::sqrt(static_cast<T>(dh));
  c.x = x;
  c.h1 = layer_norm(x, p.ln1_g, p.ln1_b, c.ln1);
  c.qkv = affine(c.h1, p.w_qkv, p.b_qkv);
  c.attn.resize(n, d);
  c.probs.resize(static_cast<std::size_t>(heads));
  for (int h = 0; h < heads; ++h) {
    const auto q = c.qkv.block(0, h * dh, n, dh);
    const auto k = c.qkv.block(0, d + h * dh, n, dh);
    const auto v = c.qkv.block(0, 2 * d + h * dh, n, dh);
    Matrix<T> s = (q * k.transpose()) * scale;
    Matrix<T>& prob = c.probs[static_cast<std::size_t>(h)];
    prob.setZero(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const Eigen::Index last = causal ? i + 1 : n;
      const T mx = s.row(i).head(last).maxCoeff();
      T sum = T(0);
      for (Eigen::Index j = 0; j < last; ++j) {
        const T e = std::exp(s(i, j) - mx);
        prob(i, j) = e;
        sum += e;
      }
      prob.row(i).head(last) /= sum;
    }
    c.attn.block(0, h * dh, n, dh).noalias() = prob * v;
  }
  Matrix<T> a = affine(c.attn, p.w_o, p.b_o);
  if (drop.active()) {
    c.drop_a = dropout_mask<T>(n, d, drop);
    a.array() *= c.drop_a.array();
  } else {
    c.drop_a.resize(0, 0);
  }
  c.x2 = x + a;
  c.h2 = layer_norm(c.x2, p.ln2_g, p.ln2_b, c.ln2);
  c.u = affine(c.h2, p.w_fc, p.b_fc);
  c.g = c.u.unaryExpr([](T v) { return gelu(v); });
  Matrix<T> m = affine(c.g, p.w_proj, p.b_proj);
  if (drop.active()) {
    c.drop_m = dropout_mask<T>(n, d, drop);
    m.array() *= c.drop_m.array();
  } else {
    c.drop_m.resize(0, 0);
  }
  return c.x2 + m;
}

template <typename T>
Matrix<T> layer_backward(const LayerParams<T>& p, int heads, const Matrix<T>& dy, const LayerCache<T>& c,
                         LayerParams<T>& grad) {
  const Eigen::Index n = dy.rows(), d = dy.cols();
  const Eigen::Index dh = d / heads;
  const T scale = T(1) / std::sqrt(static_cast<T>(dh));

  // MLP branch.
  Matrix<T> dm = dy;
  if (c.drop_m.size() > 0) dm.array() *= c.drop_m.array();
  Matrix<T> dg = affine_backward(dm, c.g, p.w_proj, grad.w_proj, grad.b_proj);
  Matrix<T> du = dg.array() * c.u.unaryExpr([](T v) { return gelu_grad(v); }).array();
  Matrix<T> dh2 = affine_backward(du, c.h2, p.w_fc, grad.w_fc, grad.b_fc);
  Matrix<T> dx2 = dy + layer_norm_backward(dh2, p.ln2_g, c.ln2, grad.ln2_g, grad.ln2_b);

  // Attention branch.
  Matrix<T> da = dx2;
  if (c.drop_a.size() > 0) da.array() *= c.drop_a.array();
  Matrix<T> dattn = affine_backward(da, c.attn, p.w_o, grad.w_o, grad.b_o);
  Matrix<T> dqkv(n, 3 * d);
  for (int h = 0; h < heads; ++h) {
    const auto q = c.qkv.block(0, h * dh, n, dh);
    const auto k = c.qkv.block(0, d + h * dh, n, dh);
    const auto v = c.qkv.block(0, 2 * d + h * dh, n, dh);
    const Matrix<T>& prob = c.probs[static_cast<std::size_t>(h)];
    const auto dout = dattn.block(0, h * dh, n, dh);
    const Matrix<T> dprob = dout * v.transpose();
    Matrix<T> ds = prob.array() * (dprob.colwise() - (dprob.array() * prob.array()).rowwise().sum().matrix()).array();
    ds *= scale;
    dqkv.block(0, h * dh, n, dh).noalias() = ds * k;
    dqkv.block(0, d + h * dh, n, dh).noalias() = ds.transpose() * q;
    dqkv.block(0, 2 * d + h * dh, n, dh).noalias() = prob.transpose() * dout;
  }
  Matrix<T> dh1 = affine_backward(dqkv, c.h1, p.w_qkv, grad.w_qkv, grad.b_qkv);
  return dx2 + layer_norm_backward(dh1, p.ln1_g, c.ln1, grad.ln1_g, grad.ln1_b);
}

/// Incremental key/value store for autoregressive decoding.
template <typename T>
struct KvCache {
  Matrix<T> k, v;
  Eigen::Index length = 0;
};

/// Inference-only causal forward of new rows x appended after the rows
/// already held in kv.
template <typename T>
Matrix<T> layer_step(const LayerParams<T>& p, int heads, const Matrix<T>& x, KvCache<T>& kv) {
  const Eigen::Index m = x.rows(), d = x.cols();
  const Eigen::Index dh = d / heads;
  const T scale = T(1) / std::sqrt(static_cast<T>(dh));
  LnCache<T> ln;
  const Matrix<T> qkv = affine(layer_norm(x, p.ln1_g, p.ln1_b, ln), p.w_qkv, p.b_qkv);
  const Eigen::Index base = kv.length;
  if (kv.k.rows() < base + m) {
    const Eigen::Index cap = std::max<Eigen::Index>(base + m, 2 * kv.k.rows());
    kv.k.conservativeResize(cap, d);
    kv.v.conservativeResize(cap, d);
  }
  kv.k.block(base, 0, m, d) = qkv.block(0, d, m, d);
  kv.v.block(base, 0, m, d) = qkv.block(0, 2 * d, m, d);
  kv.length = base + m;
  Matrix<T> attn(m, d);
  for (int h = 0; h < heads; ++h) {
    for (Eigen::Index i = 0; i < m; ++i) {
      const Eigen::Index last = base + i + 1;
      const auto q = qkv.block(i, h * dh, 1, dh);
      Matrix<T> s = (q * kv.k.block(0, h * dh, last, dh).transpose()) * scale;
      s.array() -= s.maxCoeff();
      s = s.array().exp().matrix();
      s /= s.sum();
      attn.block(i, h * dh, 1, dh).noalias() = s * kv.v.block(0, h * dh, last, dh);
    }
  }
  Matrix<T> x2 = x + affine(attn, p.w_o, p.b_o);
  LnCache<T> ln2;
  const Matrix<T> u = affine(layer_norm(x2, p.ln2_g, p.ln2_b, ln2), p.w_fc, p.b_fc);
  const Matrix<T> g = u.unaryExpr([](T val) { return gelu(val); });
  return x2 + affine(g, p.w_proj, p.b_proj);
}

template <typename T>
LayerParams<T> make_layer(int d, int ffn, bool bias, int total_layers, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  auto randn = [&](int r, int c, double std) {
    Matrix<T> m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(normal(rng) * std);
    return m;
  };
  const double resid_std = 0.02 / std::sqrt(2.0 * total_layers);
  LayerParams<T> p;
  p.ln1_g = Matrix<T>::Ones(1, d);
  p.ln2_g = Matrix<T>::Ones(1, d);
  p.w_qkv = randn(d, 3 * d, 0.02);
  p.w_o = randn(d, d, resid_std);
  p.w_fc = randn(d, ffn, 0.02);
  p.w_proj = randn(ffn, d, resid_std);
  if (bias) {
    p.ln1_b = Matrix<T>::Zero(1, d);
    p.ln2_b = Matrix<T>::Zero(1, d);
    p.b_qkv = Matrix<T>::Zero(1, 3 * d);
    p.b_o = Matrix<T>::Zero(1, d);
    p.b_fc = Matrix<T>::Zero(1, ffn);
    p.b_proj = Matrix<T>::Zero(1, d);
  }
  return p;
}

template <typename T>
LayerParams<T> zeros_like(const LayerParams<T>& p) {
  LayerParams<T> z;
  auto zero = [](const Matrix<T>& m) { return Matrix<T>::Zero(m.rows(), m.cols()).eval(); };
  z.ln1_g = zero(p.ln1_g);
  z.ln1_b = zero(p.ln1_b);
  z.w_qkv = zero(p.w_qkv);
  z.b_qkv = zero(p.b_qkv);
  z.w_o = zero(p.w_o);
  z.b_o = zero(p.b_o);
  z.ln2_g = zero(p.ln2_g);
  z.ln2_b = zero(p.ln2_b);
  z.w_fc = zero(p.w_fc);
  z.b_fc = zero(p.b_fc);
  z.w_proj = zero(p.w_proj);
  z.b_proj = zero(p.b_proj);
  return z;
}

}  // namespace covergen::detail
