#ifndef HEADSTAB_MLP_HPP
#define HEADSTAB_MLP_HPP

#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "headstab/rng.hpp"

namespace headstab {

// Templated building blocks for the transform predictor. Training runs in
// float32 by default; gradient correctness tests instantiate the same code
// in double against central finite differences.

template <typename S>
using MatX = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
template <typename S>
using VecX = Eigen::Matrix<S, Eigen::Dynamic, 1>;

// ---------------------------------------------------------------------------
// 6D rotation decode (Gram-Schmidt of the first two columns) with backward.
// ---------------------------------------------------------------------------

template <typename S>
struct Rot6Cache {
  Eigen::Matrix<S, 3, 1> a1, a2, b1, u2, b2;
  S n1 = 0, n2 = 0, dot = 0;
};

/// Returns false when the raw vector is degenerate (zero or parallel columns).
template <typename S>
bool rot6d_decode_cached(const Eigen::Matrix<S, 6, 1>& r, Eigen::Matrix<S, 3, 3>& out,
                         Rot6Cache<S>& cache) {
  const S tiny = std::numeric_limits<S>::epsilon() * S(100);
  cache.a1 = r.template head<3>();
  cache.a2 = r.template tail<3>();
  cache.n1 = cache.a1.norm();
  if (!(cache.n1 > tiny)) return false;
  cache.b1 = cache.a1 / cache.n1;
  cache.dot = cache.b1.dot(cache.a2);
  cache.u2 = cache.a2 - cache.dot * cache.b1;
  cache.n2 = cache.u2.norm();
  if (!(cache.n2 > tiny * std::max(S(1), cache.a2.norm()))) return false;
  cache.b2 = cache.u2 / cache.n2;
  out.col(0) = cache.b1;
  out.col(1) = cache.b2;
  out.col(2) = cache.b1.cross(cache.b2);
  return true;
}

/// Pulls dL/dR back to dL/d(raw 6-vector).
template <typename S>
Eigen::Matrix<S, 6, 1> rot6d_backward(const Rot6Cache<S>& c, const Eigen::Matrix<S, 3, 3>& grad_r) {
  using V3 = Eigen::Matrix<S, 3, 1>;
  const V3 g1 = grad_r.col(0);
  const V3 g2 = grad_r.col(1);
  const V3 g3 = grad_r.col(2);
  // b3 = b1 x b2.
  V3 gb1 = g1 + c.b2.cross(g3);
  V3 gb2 = g2 + g3.cross(c.b1);
  // b2 = u2 / |u2|.
  const V3 gu2 = (gb2 - c.b2 * c.b2.dot(gb2)) / c.n2;
  // u2 = a2 - (b1 . a2) b1.
  const V3 ga2 = gu2 - c.b1 * c.b1.dot(gu2);
  gb1 -= c.a2 * c.b1.dot(gu2) + c.dot * gu2;
  // b1 = a1 / |a1|.
  const V3 ga1 = (gb1 - c.b1 * c.b1.dot(gb1)) / c.n1;
  Eigen::Matrix<S, 6, 1> out;
  out << ga1, ga2;
  return out;
}

// ---------------------------------------------------------------------------
// Supervision: L = ||R_gt - R||_F + alpha * ||t_gt - t||, R decoded from the
// first six raw outputs, t the last three.
// ---------------------------------------------------------------------------

template <typename S>
struct LossResult {
  S total = 0, rotation = 0, translation = 0;
  Eigen::Matrix<S, 9, 1> grad = Eigen::Matrix<S, 9, 1>::Zero();
  bool ok = false;
};

template <typename S>
LossResult<S> transform_loss(const Eigen::Matrix<S, 9, 1>& raw,
                             const Eigen::Matrix<S, 3, 3>& gt_rotation,
                             const Eigen::Matrix<S, 3, 1>& gt_translation, S alpha_t) {
  LossResult<S> res;
  Rot6Cache<S> cache;
  Eigen::Matrix<S, 3, 3> rot;
  if (!rot6d_decode_cached<S>(raw.template head<6>(), rot, cache)) return res;
  const S tiny = std::numeric_limits<S>::epsilon() * S(100);

  const Eigen::Matrix<S, 3, 3> dr = rot - gt_rotation;
  res.rotation = dr.norm();
  Eigen::Matrix<S, 3, 3> grad_rot = Eigen::Matrix<S, 3, 3>::Zero();
  if (res.rotation > tiny) grad_rot = dr / res.rotation;

  const Eigen::Matrix<S, 3, 1> dt = raw.template tail<3>() - gt_translation;
  res.translation = dt.norm();
  Eigen::Matrix<S, 3, 1> grad_t = Eigen::Matrix<S, 3, 1>::Zero();
  if (res.translation > tiny) grad_t = alpha_t * dt / res.translation;

  res.total = res.rotation + alpha_t * res.translation;
  res.grad.template head<6>() = rot6d_backward(cache, grad_rot);
  res.grad.template tail<3>() = grad_t;
  res.ok = true;
  return res;
}

// ---------------------------------------------------------------------------
// Dense layers and the two-MLP predictor network.
// ---------------------------------------------------------------------------

template <typename S>
struct Dense {
  MatX<S> weight;  // out x in
  VecX<S> bias;    // out
};

template <typename S>
struct DenseGrad {
  MatX<S> weight;
  VecX<S> bias;
};

template <typename S>
struct AdamSlot {
  MatX<S> mw, vw;
  VecX<S> mb, vb;
};

/// Plain MLP: rectifier on every layer except the last (linear) one.
template <typename S>
struct Mlp {
  std::vector<Dense<S>> layers;

  /// dims = {input, hidden..., output}. He-style uniform fan-in init, drawn
  /// in double so every precision starts from identical weights.
  static Mlp make(const std::vector<int>& dims, Rng& rng) {
    if (dims.size() < 2) throw std::invalid_argument("Mlp: need at least one layer");
    Mlp net;
    for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
      Dense<S> layer;
      layer.weight.resize(dims[i + 1], dims[i]);
      const double limit = std::sqrt(6.0 / static_cast<double>(dims[i]));
      for (Eigen::Index c = 0; c < layer.weight.cols(); ++c) {
        for (Eigen::Index r = 0; r < layer.weight.rows(); ++r) {
          layer.weight(r, c) = static_cast<S>(rng.uniform(-limit, limit));
        }
      }
      layer.bias = VecX<S>::Zero(dims[i + 1]);
      net.layers.push_back(std::move(layer));
    }
    return net;
  }

  int input_dim() const { return static_cast<int>(layers.front().weight.cols()); }
  int output_dim() const { return static_cast<int>(layers.back().weight.rows()); }

  /// Columns are batch samples. When `acts` is given, stores the input and
  /// every post-activation output for the backward pass.
  MatX<S> forward(const MatX<S>& x, std::vector<MatX<S>>* acts = nullptr) const {
    MatX<S> a = x;
    if (acts) {
      acts->clear();
      acts->push_back(a);
    }
    for (std::size_t i = 0; i < layers.size(); ++i) {
      MatX<S> z = layers[i].weight * a;
      z.colwise() += layers[i].bias;
      if (i + 1 < layers.size()) z = z.cwiseMax(S(0));
      a = std::move(z);
      if (acts) acts->push_back(a);
    }
    return a;
  }

  /// Backpropagates grad_out through the cached forward pass, accumulating
  /// parameter gradients into `grads`; returns the gradient w.r.t. the input.
  MatX<S> backward(const std::vector<MatX<S>>& acts, MatX<S> grad_out,
                   std::vector<DenseGrad<S>>& grads) const {
    for (int i = static_cast<int>(layers.size()) - 1; i >= 0; --i) {
      if (static_cast<std::size_t>(i) + 1 < layers.size()) {
        // Rectifier mask: post-activation is zero exactly where z <= 0.
        grad_out = (acts[i + 1].array() > S(0)).select(grad_out, S(0));
      }
      grads[i].weight.noalias() += grad_out * acts[i].transpose();
      grads[i].bias.noalias() += grad_out.rowwise().sum();
      if (i > 0) {
        grad_out = (layers[i].weight.transpose() * grad_out).eval();
      } else {
        return layers[i].weight.transpose() * grad_out;
      }
    }
    return grad_out;
  }

  std::vector<DenseGrad<S>> zero_grads() const {
    std::vector<DenseGrad<S>> g(layers.size());
    for (std::size_t i = 0; i < layers.size(); ++i) {
      g[i].weight = MatX<S>::Zero(layers[i].weight.rows(), layers[i].weight.cols());
      g[i].bias = VecX<S>::Zero(layers[i].bias.size());
    }
    return g;
  }
};

/// Feature extractor applied to source and target (shared weights), latents
/// concatenated source-first, then the transform regressor.
template <typename S>
struct PairNet {
  Mlp<S> extractor;
  Mlp<S> regressor;

  struct Cache {
    std::vector<MatX<S>> ext_s, ext_t, reg;
  };

  MatX<S> forward(const MatX<S>& xs, const MatX<S>& xt, Cache* cache = nullptr) const {
    MatX<S> zs = extractor.forward(xs, cache ? &cache->ext_s : nullptr);
    MatX<S> zt = extractor.forward(xt, cache ? &cache->ext_t : nullptr);
    MatX<S> joint(zs.rows() + zt.rows(), zs.cols());
    joint.topRows(zs.rows()) = zs;
    joint.bottomRows(zt.rows()) = zt;
    return regressor.forward(joint, cache ? &cache->reg : nullptr);
  }

  struct Grads {
    std::vector<DenseGrad<S>> extractor, regressor;
  };

  Grads zero_grads() const { return {extractor.zero_grads(), regressor.zero_grads()}; }

  void backward(const Cache& cache, const MatX<S>& grad_raw, Grads& grads) const {
    const MatX<S> grad_joint = regressor.backward(cache.reg, grad_raw, grads.regressor);
    const int latent = extractor.output_dim();
    extractor.backward(cache.ext_s, grad_joint.topRows(latent), grads.extractor);
    extractor.backward(cache.ext_t, grad_joint.bottomRows(latent), grads.extractor);
  }
};

/// Adam step over one parameter set; `t` is the 1-based update count.
template <typename S>
void adam_update(Dense<S>& layer, const DenseGrad<S>& grad, AdamSlot<S>& slot, double lr,
                 double beta1, double beta2, double eps, std::int64_t t) {
  if (slot.mw.size() == 0) {
    slot.mw = MatX<S>::Zero(layer.weight.rows(), layer.weight.cols());
    slot.vw = MatX<S>::Zero(layer.weight.rows(), layer.weight.cols());
    slot.mb = VecX<S>::Zero(layer.bias.size());
    slot.vb = VecX<S>::Zero(layer.bias.size());
  }
  const S b1 = static_cast<S>(beta1), b2 = static_cast<S>(beta2);
  const S corr1 = static_cast<S>(1.0 - std::pow(beta1, static_cast<double>(t)));
  const S corr2 = static_cast<S>(1.0 - std::pow(beta2, static_cast<double>(t)));
  const S alpha = static_cast<S>(lr);
  const S e = static_cast<S>(eps);

  slot.mw = b1 * slot.mw + (S(1) - b1) * grad.weight;
  slot.vw = b2 * slot.vw.array().matrix() + (S(1) - b2) * grad.weight.array().square().matrix();
  layer.weight.array() -=
      alpha * (slot.mw.array() / corr1) / ((slot.vw.array() / corr2).sqrt() + e);

  slot.mb = b1 * slot.mb + (S(1) - b1) * grad.bias;
  slot.vb = b2 * slot.vb.array().matrix() + (S(1) - b2) * grad.bias.array().square().matrix();
  layer.bias.array() -= alpha * (slot.mb.array() / corr1) / ((slot.vb.array() / corr2).sqrt() + e);
}

}  // namespace headstab

#endif  // HEADSTAB_MLP_HPP
