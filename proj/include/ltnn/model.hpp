#pragma once

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "ltnn/tensor.hpp"

namespace ltnn {

enum class LayerKind : std::uint8_t {
  dense = 0,
  conv2d = 1,
  relu = 2,
  maxpool2x2 = 3,
  softmax_logits = 4,
};

const char* layer_kind_name(LayerKind k);

struct LayerSpec {
  LayerKind kind = LayerKind::relu;
  // dense
  Index in_units = 0;
  Index out_units = 0;
  // conv2d; in_channels is inferred by build_model from the incoming shape
  Index kernel = 0;
  Index filters = 0;
  Index stride = 1;
  Index in_channels = 0;
  bool same_pad = true;

  bool has_weights() const { return kind == LayerKind::dense || kind == LayerKind::conv2d; }

  static LayerSpec dense(Index in, Index out) {
    LayerSpec s;
    s.kind = LayerKind::dense;
    s.in_units = in;
    s.out_units = out;
    return s;
  }
  static LayerSpec conv2d(Index kernel, Index filters, Index stride = 1, bool same_pad = true) {
    LayerSpec s;
    s.kind = LayerKind::conv2d;
    s.kernel = kernel;
    s.filters = filters;
    s.stride = stride;
    s.same_pad = same_pad;
    return s;
  }
  static LayerSpec relu() { return LayerSpec{}; }
  static LayerSpec maxpool2x2() {
    LayerSpec s;
    s.kind = LayerKind::maxpool2x2;
    return s;
  }
  static LayerSpec softmax_logits() {
    LayerSpec s;
    s.kind = LayerKind::softmax_logits;
    return s;
  }
};

// Output spatial size of a conv along one axis.
inline Index conv_out_extent(Index in, Index kernel, Index stride, bool same_pad) {
  if (same_pad) return (in + stride - 1) / stride;
  require(in >= kernel, Errc::shape_mismatch, "conv kernel larger than input");
  return (in - kernel) / stride + 1;
}

// Total padding needed on one axis for SAME semantics; split low/high with the
// extra cell on the high side.
inline Index conv_same_pad_total(Index in, Index out, Index kernel, Index stride) {
  Index p = (out - 1) * stride + kernel - in;
  return p > 0 ? p : 0;
}

// Feed-forward network: ordered layer specs plus one weight and one bias
// tensor per weight-bearing layer. Weight layers are numbered 1..L in model
// order; that ordinal is what masks, patch files and CLI flags refer to.
template <class Scalar>
struct Model {
  std::vector<Index> input_dims;  // per-record dims, e.g. {28,28,1} or {135}
  std::vector<LayerSpec> layers;
  std::vector<Tensor<Scalar>> weights;  // index l-1 holds layer ordinal l
  std::vector<Tensor<Scalar>> biases;

  int num_weight_layers() const { return static_cast<int>(weights.size()); }
  Index num_params() const {
    Index n = 0;
    for (const auto& w : weights) n += w.numel();
    for (const auto& b : biases) n += b.numel();
    return n;
  }
};

// Per-record output dims of every layer given the model input dims; index 0
// is the input itself.
inline std::vector<std::vector<Index>> infer_shapes(const std::vector<Index>& input_dims,
                                                    const std::vector<LayerSpec>& layers) {
  std::vector<std::vector<Index>> shapes;
  shapes.push_back(input_dims);
  std::vector<Index> cur = input_dims;
  for (size_t li = 0; li < layers.size(); ++li) {
    const LayerSpec& s = layers[li];
    const std::string where = "layer " + std::to_string(li + 1) + " (" + layer_kind_name(s.kind) + ")";
    switch (s.kind) {
      case LayerKind::dense: {
        require(checked_numel(cur) == s.in_units, Errc::shape_mismatch,
                where + ": expects " + std::to_string(s.in_units) + " inputs, got " + dims_str(cur));
        cur = {s.out_units};
        break;
      }
      case LayerKind::conv2d: {
        require(cur.size() == 3, Errc::shape_mismatch, where + ": expects [h,w,c] input, got " + dims_str(cur));
        require(s.in_channels == 0 || s.in_channels == cur[2], Errc::shape_mismatch,
                where + ": channel mismatch");
        Index oh = conv_out_extent(cur[0], s.kernel, s.stride, s.same_pad);
        Index ow = conv_out_extent(cur[1], s.kernel, s.stride, s.same_pad);
        cur = {oh, ow, s.filters};
        break;
      }
      case LayerKind::relu:
      case LayerKind::softmax_logits:
        break;
      case LayerKind::maxpool2x2: {
        require(cur.size() == 3, Errc::shape_mismatch, where + ": expects [h,w,c] input, got " + dims_str(cur));
        require(cur[0] >= 2 && cur[1] >= 2, Errc::shape_mismatch, where + ": input too small to pool");
        cur = {cur[0] / 2, cur[1] / 2, cur[2]};
        break;
      }
    }
    shapes.push_back(cur);
  }
  return shapes;
}

// Validates the layer chain against the input dims, infers conv input
// channels and allocates zero-initialized parameters.
template <class Scalar>
Model<Scalar> build_model(std::vector<Index> input_dims, std::vector<LayerSpec> layers) {
  Model<Scalar> m;
  m.input_dims = std::move(input_dims);
  m.layers = std::move(layers);
  std::vector<Index> cur = m.input_dims;
  for (auto& s : m.layers) {
    if (s.kind == LayerKind::conv2d) {
      require(cur.size() == 3, Errc::shape_mismatch, "conv2d expects [h,w,c] input, got " + dims_str(cur));
      s.in_channels = cur[2];
      require(s.kernel >= 1 && s.filters >= 1 && s.stride >= 1, Errc::invalid_argument, "bad conv2d parameters");
      m.weights.emplace_back(std::vector<Index>{s.kernel, s.kernel, s.in_channels, s.filters});
      m.biases.emplace_back(std::vector<Index>{s.filters});
    } else if (s.kind == LayerKind::dense) {
      require(s.in_units >= 1 && s.out_units >= 1, Errc::invalid_argument, "bad dense parameters");
      m.weights.emplace_back(std::vector<Index>{s.in_units, s.out_units});
      m.biases.emplace_back(std::vector<Index>{s.out_units});
    }
    // advance the shape; reuses the same validation as the forward pass
    std::vector<LayerSpec> one{s};
    cur = infer_shapes(cur, one).back();
  }
  return m;
}

// Glorot-uniform weights, zero biases.
template <class Scalar>
void init_params(Model<Scalar>& m, std::uint64_t seed) {
  std::mt19937 rng(static_cast<std::uint32_t>(seed ^ (seed >> 32)));
  int wl = 0;
  for (const auto& s : m.layers) {
    if (!s.has_weights()) continue;
    Tensor<Scalar>& w = m.weights[static_cast<size_t>(wl)];
    double fan_in, fan_out;
    if (s.kind == LayerKind::dense) {
      fan_in = static_cast<double>(s.in_units);
      fan_out = static_cast<double>(s.out_units);
    } else {
      fan_in = static_cast<double>(s.kernel * s.kernel * s.in_channels);
      fan_out = static_cast<double>(s.kernel * s.kernel * s.filters);
    }
    const double a = std::sqrt(6.0 / (fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-a, a);
    for (auto& v : w.data) v = static_cast<Scalar>(dist(rng));
    m.biases[static_cast<size_t>(wl)].vec().setZero();
    ++wl;
  }
}

template <class To, class From>
Model<To> cast_model(const Model<From>& m) {
  Model<To> out;
  out.input_dims = m.input_dims;
  out.layers = m.layers;
  out.weights.reserve(m.weights.size());
  out.biases.reserve(m.biases.size());
  for (const auto& w : m.weights) out.weights.push_back(cast_tensor<To>(w));
  for (const auto& b : m.biases) out.biases.push_back(cast_tensor<To>(b));
  return out;
}

// Stock architectures used throughout the tools and tests.
template <class Scalar>
Model<Scalar> make_tabular_mlp(Index features = 135, Index hidden = 200, Index classes = 2) {
  return build_model<Scalar>({features}, {
                                             LayerSpec::dense(features, hidden),
                                             LayerSpec::relu(),
                                             LayerSpec::dense(hidden, hidden),
                                             LayerSpec::relu(),
                                             LayerSpec::dense(hidden, hidden),
                                             LayerSpec::relu(),
                                             LayerSpec::dense(hidden, classes),
                                             LayerSpec::softmax_logits(),
                                         });
}

template <class Scalar>
Model<Scalar> make_mnist_cnn() {
  Index fc_in = 7 * 7 * 16;
  return build_model<Scalar>({28, 28, 1}, {
                                              LayerSpec::conv2d(5, 8),
                                              LayerSpec::relu(),
                                              LayerSpec::maxpool2x2(),
                                              LayerSpec::conv2d(5, 16),
                                              LayerSpec::relu(),
                                              LayerSpec::maxpool2x2(),
                                              LayerSpec::dense(fc_in, 128),
                                              LayerSpec::relu(),
                                              LayerSpec::dense(128, 10),
                                              LayerSpec::softmax_logits(),
                                          });
}

}  // namespace ltnn
