#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "ltnn/mask.hpp"
#include "ltnn/model.hpp"
#include "ltnn/ops.hpp"

namespace ltnn {

struct AdamConfig {
  double lr = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Full-state Adam. Moments are kept in 64-bit; parameters are rounded back to
// their storage scalar after every step.
template <class Scalar>
struct AdamState {
  AdamConfig cfg;
  std::vector<std::vector<double>> m_w, v_w, m_b, v_b;
  std::int64_t t = 0;
};

template <class Scalar>
AdamState<Scalar> make_adam_state(const Model<Scalar>& m, AdamConfig cfg = {}) {
  AdamState<Scalar> s;
  s.cfg = cfg;
  for (const auto& w : m.weights) {
    s.m_w.emplace_back(static_cast<size_t>(w.numel()), 0.0);
    s.v_w.emplace_back(static_cast<size_t>(w.numel()), 0.0);
  }
  for (const auto& b : m.biases) {
    s.m_b.emplace_back(static_cast<size_t>(b.numel()), 0.0);
    s.v_b.emplace_back(static_cast<size_t>(b.numel()), 0.0);
  }
  return s;
}

// Zeroes every gradient component outside the mask: unlisted weight indices,
// whole unlisted layers, and all biases.
template <class Scalar>
void mask_gradients(Gradients<Scalar>& g, const Mask& mask) {
  for (size_t l = 0; l < g.weights.size(); ++l) {
    const MaskLayer* ml = mask.find(static_cast<int>(l) + 1);
    auto& data = g.weights[l].data;
    if (!ml) {
      std::fill(data.begin(), data.end(), Scalar(0));
      continue;
    }
    std::vector<Scalar> kept(data.size(), Scalar(0));
    for (Index i : ml->indices) kept[static_cast<size_t>(i)] = data[static_cast<size_t>(i)];
    data.swap(kept);
  }
  for (auto& b : g.biases) std::fill(b.data.begin(), b.data.end(), Scalar(0));
}

namespace detail {
template <class Scalar>
void adam_apply(std::vector<double>& m, std::vector<double>& v, Tensor<Scalar>& p,
                const Tensor<Scalar>& g, const AdamConfig& c, double bc1, double bc2) {
  for (size_t i = 0; i < p.data.size(); ++i) {
    const double gi = static_cast<double>(g.data[i]);
    m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * gi;
    v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * gi * gi;
    const double mhat = m[i] / bc1;
    const double vhat = v[i] / bc2;
    p.data[i] = static_cast<Scalar>(static_cast<double>(p.data[i]) - c.lr * mhat / (std::sqrt(vhat) + c.eps));
  }
}
}  // namespace detail

// Standard Adam with bias correction. When a mask is given, gradients are
// zeroed outside it BEFORE the moment accumulation (grads are modified in
// place); parameters outside the mask stay bit-identical because their
// moments never leave zero and the resulting step is exactly 0.0.
template <class Scalar>
void adam_update(AdamState<Scalar>& s, Model<Scalar>& model, Gradients<Scalar>& grads,
                 const Mask* mask = nullptr) {
  require(grads.weights.size() == model.weights.size() && grads.biases.size() == model.biases.size(),
          Errc::shape_mismatch, "gradient/parameter layer counts differ");
  if (mask) mask_gradients(grads, *mask);
  s.t += 1;
  const double bc1 = 1.0 - std::pow(s.cfg.beta1, static_cast<double>(s.t));
  const double bc2 = 1.0 - std::pow(s.cfg.beta2, static_cast<double>(s.t));
  for (size_t l = 0; l < model.weights.size(); ++l) {
    require(grads.weights[l].same_dims(model.weights[l]), Errc::shape_mismatch, "weight grad shape");
    detail::adam_apply(s.m_w[l], s.v_w[l], model.weights[l], grads.weights[l], s.cfg, bc1, bc2);
  }
  for (size_t l = 0; l < model.biases.size(); ++l) {
    require(grads.biases[l].same_dims(model.biases[l]), Errc::shape_mismatch, "bias grad shape");
    detail::adam_apply(s.m_b[l], s.v_b[l], model.biases[l], grads.biases[l], s.cfg, bc1, bc2);
  }
}

}  // namespace ltnn
