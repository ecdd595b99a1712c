#pragma once

#include <cmath>
#include <utility>
#include <vector>

#include "ltnn/model.hpp"
#include "ltnn/tensor.hpp"

namespace ltnn {

template <class Scalar>
struct Gradients {
  std::vector<Tensor<Scalar>> weights;
  std::vector<Tensor<Scalar>> biases;
};

template <class Scalar>
Gradients<Scalar> make_zero_grads(const Model<Scalar>& m) {
  Gradients<Scalar> g;
  g.weights.reserve(m.weights.size());
  g.biases.reserve(m.biases.size());
  for (const auto& w : m.weights) g.weights.emplace_back(w.dims);
  for (const auto& b : m.biases) g.biases.emplace_back(b.dims);
  return g;
}

// Everything backward needs from a forward pass. acts[i] is the input to
// layer i (acts[0] = batch, acts.back() = final output), each as [N, feat].
template <class Scalar>
struct ForwardCache {
  Index batch = 0;
  std::vector<MatrixX<Scalar>> acts;
  std::vector<MatrixX<Scalar>> cols;        // conv layers: im2col, [N*OH*OW, K*K*C]
  std::vector<std::vector<Index>> argmax;   // pool layers: winning flat in-record index
  std::vector<std::vector<Index>> shapes;   // per-record dims at each stage
};

namespace detail {

template <class Scalar>
void im2col(const MatrixX<Scalar>& in, Index n_rec, Index h, Index w, Index c, const LayerSpec& s,
            Index oh, Index ow, MatrixX<Scalar>& cols) {
  const Index k = s.kernel, stride = s.stride;
  const Index pad_h = s.same_pad ? conv_same_pad_total(h, oh, k, stride) / 2 : 0;
  const Index pad_w = s.same_pad ? conv_same_pad_total(w, ow, k, stride) / 2 : 0;
  cols.setZero(n_rec * oh * ow, k * k * c);
  for (Index n = 0; n < n_rec; ++n) {
    const Scalar* rec = in.data() + n * in.cols();
    for (Index y = 0; y < oh; ++y) {
      for (Index x = 0; x < ow; ++x) {
        Scalar* row = cols.data() + ((n * oh + y) * ow + x) * cols.cols();
        const Index ih0 = y * stride - pad_h, iw0 = x * stride - pad_w;
        for (Index kh = 0; kh < k; ++kh) {
          const Index ih = ih0 + kh;
          if (ih < 0 || ih >= h) continue;
          for (Index kw = 0; kw < k; ++kw) {
            const Index iw = iw0 + kw;
            if (iw < 0 || iw >= w) continue;
            const Scalar* src = rec + (ih * w + iw) * c;
            Scalar* dst = row + (kh * k + kw) * c;
            for (Index ch = 0; ch < c; ++ch) dst[ch] = src[ch];
          }
        }
      }
    }
  }
}

template <class Scalar>
void col2im(const MatrixX<Scalar>& dcols, Index n_rec, Index h, Index w, Index c,
            const LayerSpec& s, Index oh, Index ow, MatrixX<Scalar>& din) {
  const Index k = s.kernel, stride = s.stride;
  const Index pad_h = s.same_pad ? conv_same_pad_total(h, oh, k, stride) / 2 : 0;
  const Index pad_w = s.same_pad ? conv_same_pad_total(w, ow, k, stride) / 2 : 0;
  din.setZero(n_rec, h * w * c);
  for (Index n = 0; n < n_rec; ++n) {
    Scalar* rec = din.data() + n * din.cols();
    for (Index y = 0; y < oh; ++y) {
      for (Index x = 0; x < ow; ++x) {
        const Scalar* row = dcols.data() + ((n * oh + y) * ow + x) * dcols.cols();
        const Index ih0 = y * stride - pad_h, iw0 = x * stride - pad_w;
        for (Index kh = 0; kh < k; ++kh) {
          const Index ih = ih0 + kh;
          if (ih < 0 || ih >= h) continue;
          for (Index kw = 0; kw < k; ++kw) {
            const Index iw = iw0 + kw;
            if (iw < 0 || iw >= w) continue;
            Scalar* dst = rec + (ih * w + iw) * c;
            const Scalar* src = row + (kh * k + kw) * c;
            for (Index ch = 0; ch < c; ++ch) dst[ch] += src[ch];
          }
        }
      }
    }
  }
}

}  // namespace detail

// Runs the batch through the model, recording what backward needs.
template <class Scalar>
void forward_cached(const Model<Scalar>& m, const Tensor<Scalar>& batch, ForwardCache<Scalar>& cache) {
  require(batch.rank() >= 1, Errc::shape_mismatch, "batch must have a leading batch dim");
  const Index n = batch.dim(0);
  require(n >= 1, Errc::shape_mismatch, "empty batch");
  std::vector<Index> rec_dims(batch.dims.begin() + 1, batch.dims.end());
  require(rec_dims == m.input_dims, Errc::shape_mismatch,
          "batch record dims " + dims_str(rec_dims) + " do not match model input " + dims_str(m.input_dims));

  const size_t nl = m.layers.size();
  cache.batch = n;
  cache.acts.assign(nl + 1, MatrixX<Scalar>());
  cache.cols.assign(nl, MatrixX<Scalar>());
  cache.argmax.assign(nl, {});
  cache.shapes = infer_shapes(m.input_dims, m.layers);

  cache.acts[0] = ConstMatMap<Scalar>(batch.data.data(), n, batch.row_size());
  int wl = 0;
  for (size_t li = 0; li < nl; ++li) {
    const LayerSpec& s = m.layers[li];
    const MatrixX<Scalar>& in = cache.acts[li];
    MatrixX<Scalar>& out = cache.acts[li + 1];
    switch (s.kind) {
      case LayerKind::dense: {
        ConstMatMap<Scalar> wmap(m.weights[static_cast<size_t>(wl)].data.data(), s.in_units, s.out_units);
        out.noalias() = in * wmap;
        out.rowwise() += Eigen::Map<const Eigen::RowVectorX<Scalar>>(
            m.biases[static_cast<size_t>(wl)].data.data(), s.out_units);
        ++wl;
        break;
      }
      case LayerKind::conv2d: {
        const auto& ish = cache.shapes[li];
        const auto& osh = cache.shapes[li + 1];
        const Index h = ish[0], w = ish[1], c = ish[2], oh = osh[0], ow = osh[1], f = s.filters;
        detail::im2col(in, n, h, w, c, s, oh, ow, cache.cols[li]);
        ConstMatMap<Scalar> wmap(m.weights[static_cast<size_t>(wl)].data.data(), s.kernel * s.kernel * c, f);
        MatrixX<Scalar> prod(n * oh * ow, f);
        prod.noalias() = cache.cols[li] * wmap;
        prod.rowwise() += Eigen::Map<const Eigen::RowVectorX<Scalar>>(
            m.biases[static_cast<size_t>(wl)].data.data(), f);
        // rows are (n, oh, ow)-major and cols are filters, so the row-major
        // buffer is already the [N, OH*OW*F] HWC activation matrix
        out = ConstMatMap<Scalar>(prod.data(), n, oh * ow * f);
        ++wl;
        break;
      }
      case LayerKind::relu:
        out = in.cwiseMax(Scalar(0));
        break;
      case LayerKind::maxpool2x2: {
        const auto& ish = cache.shapes[li];
        const Index h = ish[0], w = ish[1], c = ish[2], oh = h / 2, ow = w / 2;
        out.resize(n, oh * ow * c);
        auto& amax = cache.argmax[li];
        amax.assign(static_cast<size_t>(n * oh * ow * c), 0);
        for (Index r = 0; r < n; ++r) {
          const Scalar* rec = in.data() + r * in.cols();
          Scalar* orec = out.data() + r * out.cols();
          for (Index y = 0; y < oh; ++y) {
            for (Index x = 0; x < ow; ++x) {
              for (Index ch = 0; ch < c; ++ch) {
                Index best = ((2 * y) * w + 2 * x) * c + ch;
                Scalar bv = rec[best];
                for (Index dy = 0; dy < 2; ++dy) {
                  for (Index dx = 0; dx < 2; ++dx) {
                    const Index idx = ((2 * y + dy) * w + (2 * x + dx)) * c + ch;
                    if (rec[idx] > bv) {
                      bv = rec[idx];
                      best = idx;
                    }
                  }
                }
                orec[(y * ow + x) * c + ch] = bv;
                amax[static_cast<size_t>((r * oh * ow + y * ow + x) * c + ch)] = best;
              }
            }
          }
        }
        break;
      }
      case LayerKind::softmax_logits:
        // marker layer: raw logits pass through; losses/σ handle the softmax
        out = in;
        break;
    }
  }
  require(cache.acts.back().allFinite(), Errc::nonfinite_value, "non-finite value in forward output");
}

template <class Scalar>
Tensor<Scalar> forward(const Model<Scalar>& m, const Tensor<Scalar>& batch) {
  ForwardCache<Scalar> cache;
  forward_cached(m, batch, cache);
  const MatrixX<Scalar>& out = cache.acts.back();
  Tensor<Scalar> t({out.rows(), out.cols()});
  MatMap<Scalar>(t.data.data(), out.rows(), out.cols()) = out;
  return t;
}

// Row-wise softmax with max-subtraction.
template <class Scalar>
MatrixX<Scalar> softmax(const MatrixX<Scalar>& logits) {
  MatrixX<Scalar> p = (logits.colwise() - logits.rowwise().maxCoeff()).array().exp().matrix();
  p.array().colwise() /= p.rowwise().sum().array();
  return p;
}

template <class Scalar>
Tensor<Scalar> softmax(const Tensor<Scalar>& logits) {
  require(logits.rank() == 2, Errc::shape_mismatch, "softmax expects a [batch, classes] tensor");
  MatrixX<Scalar> p = softmax<Scalar>(ConstMatMap<Scalar>(logits.data.data(), logits.dim(0), logits.dim(1)));
  Tensor<Scalar> t(logits.dims);
  MatMap<Scalar>(t.data.data(), p.rows(), p.cols()) = p;
  return t;
}

// Mean cross-entropy via logsumexp; probs come back for callers that want them.
template <class Scalar>
std::pair<double, Tensor<Scalar>> softmax_cross_entropy(const Tensor<Scalar>& logits,
                                                        const std::vector<Index>& labels) {
  require(logits.rank() == 2, Errc::shape_mismatch, "logits must be [batch, classes]");
  const Index n = logits.dim(0), c = logits.dim(1);
  require(static_cast<Index>(labels.size()) == n, Errc::count_mismatch, "one label per batch row required");
  ConstMatMap<Scalar> z(logits.data.data(), n, c);
  Tensor<Scalar> probs(logits.dims);
  MatMap<Scalar> p(probs.data.data(), n, c);
  double loss = 0.0;
  for (Index i = 0; i < n; ++i) {
    const Index y = labels[static_cast<size_t>(i)];
    require(y >= 0 && y < c, Errc::label_out_of_range,
            "label " + std::to_string(y) + " outside [0, " + std::to_string(c) + ")");
    const double mx = static_cast<double>(z.row(i).maxCoeff());
    double sum = 0.0;
    for (Index j = 0; j < c; ++j) sum += std::exp(static_cast<double>(z(i, j)) - mx);
    const double lse = mx + std::log(sum);
    loss += lse - static_cast<double>(z(i, y));
    for (Index j = 0; j < c; ++j) p(i, j) = static_cast<Scalar>(std::exp(static_cast<double>(z(i, j)) - lse));
  }
  return {loss / static_cast<double>(n), std::move(probs)};
}

// Mean over all elements of the squared difference.
template <class Scalar>
double mse(const Tensor<Scalar>& outputs, const Tensor<Scalar>& targets) {
  require(outputs.same_dims(targets), Errc::shape_mismatch,
          "mse shapes differ: " + dims_str(outputs.dims) + " vs " + dims_str(targets.dims));
  double acc = 0.0;
  for (size_t i = 0; i < outputs.data.size(); ++i) {
    const double d = static_cast<double>(outputs.data[i]) - static_cast<double>(targets.data[i]);
    acc += d * d;
  }
  return acc / static_cast<double>(outputs.data.size());
}

// Backpropagates d(loss)/d(output) through the cached pass. Gradient tensors
// are accumulated into `g` (callers pass zeroed grads or sum across batches).
template <class Scalar>
void backward_from_output_grad(const Model<Scalar>& m, const ForwardCache<Scalar>& cache,
                               MatrixX<Scalar> dout, Gradients<Scalar>& g,
                               MatrixX<Scalar>* dinput = nullptr) {
  const Index n = cache.batch;
  int wl = m.num_weight_layers();
  for (size_t li = m.layers.size(); li-- > 0;) {
    const LayerSpec& s = m.layers[li];
    const MatrixX<Scalar>& in = cache.acts[li];
    const bool need_din = li > 0 || dinput != nullptr;
    switch (s.kind) {
      case LayerKind::dense: {
        --wl;
        const size_t w = static_cast<size_t>(wl);
        MatMap<Scalar> gw(g.weights[w].data.data(), s.in_units, s.out_units);
        gw.noalias() += in.transpose() * dout;
        VecMap<Scalar>(g.biases[w].data.data(), s.out_units) += dout.colwise().sum().transpose();
        if (need_din) {
          ConstMatMap<Scalar> wmap(m.weights[w].data.data(), s.in_units, s.out_units);
          MatrixX<Scalar> din(n, s.in_units);
          din.noalias() = dout * wmap.transpose();
          dout = std::move(din);
        }
        break;
      }
      case LayerKind::conv2d: {
        --wl;
        const size_t w = static_cast<size_t>(wl);
        const auto& ish = cache.shapes[li];
        const auto& osh = cache.shapes[li + 1];
        const Index oh = osh[0], ow = osh[1], f = s.filters;
        const Index kkc = s.kernel * s.kernel * ish[2];
        ConstMatMap<Scalar> dflat(dout.data(), n * oh * ow, f);
        MatMap<Scalar> gw(g.weights[w].data.data(), kkc, f);
        gw.noalias() += cache.cols[li].transpose() * dflat;
        VecMap<Scalar>(g.biases[w].data.data(), f) += dflat.colwise().sum().transpose();
        if (need_din) {
          ConstMatMap<Scalar> wmap(m.weights[w].data.data(), kkc, f);
          MatrixX<Scalar> dcols(n * oh * ow, kkc);
          dcols.noalias() = dflat * wmap.transpose();
          MatrixX<Scalar> din;
          detail::col2im(dcols, n, ish[0], ish[1], ish[2], s, oh, ow, din);
          dout = std::move(din);
        }
        break;
      }
      case LayerKind::relu:
        dout = (in.array() > Scalar(0)).select(dout, Scalar(0));
        break;
      case LayerKind::maxpool2x2: {
        const auto& ish = cache.shapes[li];
        MatrixX<Scalar> din = MatrixX<Scalar>::Zero(n, ish[0] * ish[1] * ish[2]);
        const auto& amax = cache.argmax[li];
        const Index per_rec = dout.cols();
        for (Index r = 0; r < n; ++r) {
          const Scalar* src = dout.data() + r * per_rec;
          Scalar* dst = din.data() + r * din.cols();
          for (Index j = 0; j < per_rec; ++j) dst[amax[static_cast<size_t>(r * per_rec + j)]] += src[j];
        }
        dout = std::move(din);
        break;
      }
      case LayerKind::softmax_logits:
        break;  // identity in the graph
    }
  }
  if (dinput) *dinput = std::move(dout);
  for (const auto& t : g.weights) require_finite(t, "weight gradient");
  for (const auto& t : g.biases) require_finite(t, "bias gradient");
}

template <class Scalar>
struct BackwardResult {
  double loss = 0.0;
  Gradients<Scalar> grads;
};

// Gradients of the mean softmax-CE batch loss.
template <class Scalar>
BackwardResult<Scalar> backward(const Model<Scalar>& m, const Tensor<Scalar>& batch,
                                const std::vector<Index>& labels) {
  ForwardCache<Scalar> cache;
  forward_cached(m, batch, cache);
  const MatrixX<Scalar>& z = cache.acts.back();
  Tensor<Scalar> zt({z.rows(), z.cols()});
  MatMap<Scalar>(zt.data.data(), z.rows(), z.cols()) = z;
  auto [loss, probs] = softmax_cross_entropy(zt, labels);
  MatrixX<Scalar> dout = ConstMatMap<Scalar>(probs.data.data(), z.rows(), z.cols());
  for (Index i = 0; i < z.rows(); ++i) dout(i, labels[static_cast<size_t>(i)]) -= Scalar(1);
  dout *= Scalar(1) / static_cast<Scalar>(cache.batch);
  BackwardResult<Scalar> r;
  r.loss = loss;
  r.grads = make_zero_grads(m);
  backward_from_output_grad(m, cache, std::move(dout), r.grads);
  return r;
}

// Gradients of the mean-over-all-elements MSE batch loss.
template <class Scalar>
BackwardResult<Scalar> backward(const Model<Scalar>& m, const Tensor<Scalar>& batch,
                                const Tensor<Scalar>& targets) {
  ForwardCache<Scalar> cache;
  forward_cached(m, batch, cache);
  const MatrixX<Scalar>& y = cache.acts.back();
  require(targets.rank() == 2 && targets.dim(0) == y.rows() && targets.dim(1) == y.cols(),
          Errc::shape_mismatch, "targets must be [batch, outputs]");
  ConstMatMap<Scalar> t(targets.data.data(), y.rows(), y.cols());
  MatrixX<Scalar> diff = y - t;
  BackwardResult<Scalar> r;
  r.loss = static_cast<double>(diff.template cast<double>().squaredNorm()) /
           static_cast<double>(y.rows() * y.cols());
  MatrixX<Scalar> dout = diff * static_cast<Scalar>(2.0 / static_cast<double>(y.rows() * y.cols()));
  r.grads = make_zero_grads(m);
  backward_from_output_grad(m, cache, std::move(dout), r.grads);
  return r;
}

// Row argmax of the final outputs (first index wins ties).
template <class Scalar>
std::vector<Index> predict_classes(const Model<Scalar>& m, const Tensor<Scalar>& batch) {
  Tensor<Scalar> out = forward(m, batch);
  const Index n = out.dim(0), c = out.dim(1);
  ConstMatMap<Scalar> z(out.data.data(), n, c);
  std::vector<Index> pred(static_cast<size_t>(n));
  for (Index i = 0; i < n; ++i) {
    Index best = 0;
    for (Index j = 1; j < c; ++j)
      if (z(i, j) > z(i, best)) best = j;
    pred[static_cast<size_t>(i)] = best;
  }
  return pred;
}

}  // namespace ltnn
