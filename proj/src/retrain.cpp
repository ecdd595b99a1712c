#include "ltnn/retrain.hpp"

#include <algorithm>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <numeric>
#include <random>

#include "ltnn/ops.hpp"

namespace ltnn {

namespace {

std::string fmt(const char* f, ...) __attribute__((format(printf, 1, 2)));
std::string fmt(const char* f, ...) {
  char buf[256];
  va_list ap;
  va_start(ap, f);
  std::vsnprintf(buf, sizeof buf, f, ap);
  va_end(ap);
  return buf;
}

}  // namespace

double evaluate(const Model<float>& m, const Dataset& d, const Metric& metric, Index batch_size) {
  validate_dataset(d);
  require(batch_size >= 1, Errc::invalid_argument, "batch size must be positive");
  const Index n = d.size();
  std::vector<Index> idx(static_cast<size_t>(n));
  std::iota(idx.begin(), idx.end(), Index(0));
  Index correct = 0;
  for (Index start = 0; start < n; start += batch_size) {
    const Index bn = std::min(batch_size, n - start);
    const std::span<const Index> slice(idx.data() + start, static_cast<size_t>(bn));
    Tensor<float> batch = gather_inputs(d, slice);
    Tensor<float> out = forward(m, batch);
    ConstMatMap<float> z(out.data.data(), out.dim(0), out.dim(1));
    if (metric.kind == Metric::Kind::classification_argmax) {
      require(d.task == TaskKind::classification, Errc::invalid_argument,
              "classification metric on a regression dataset");
      for (Index i = 0; i < bn; ++i) {
        Index best = 0;
        for (Index j = 1; j < z.cols(); ++j)
          if (z(i, j) > z(i, best)) best = j;
        if (best == d.labels[static_cast<size_t>(slice[static_cast<size_t>(i)])]) ++correct;
      }
    } else {
      require(d.task == TaskKind::regression, Errc::invalid_argument,
              "regression metric on a classification dataset");
      const Index trow = d.targets.row_size();
      for (Index i = 0; i < bn; ++i) {
        const float pred = z(i, 0);
        const float want = d.targets.data[static_cast<size_t>(slice[static_cast<size_t>(i)] * trow)];
        if (std::abs(static_cast<double>(pred) - static_cast<double>(want)) <= metric.tau) ++correct;
      }
    }
  }
  return static_cast<double>(correct) / static_cast<double>(n);
}

const char* grade_name(Grade g) {
  switch (g) {
    case Grade::not_effective: return "not-effective";
    case Grade::effective: return "effective";
    case Grade::highly_effective: return "highly-effective";
  }
  return "unknown";
}

Grade grade_effectiveness(double clean_before, double clean_after, double trojan_after) {
  const double drop = clean_before - clean_after;
  if (drop < 0.01 && trojan_after > 0.95) return Grade::highly_effective;
  if (drop <= 0.05 && trojan_after > 0.90) return Grade::effective;
  return Grade::not_effective;
}

namespace {

// Adam moments kept only for the masked coordinates. Equivalent to full-state
// Adam on pre-masked gradients: every other coordinate's moments would stay
// zero and its update would be exactly 0.0.
struct MaskedAdam {
  AdamConfig cfg;
  std::vector<double> m, v;
  std::int64_t t = 0;
};

struct BatchDraw {
  std::vector<Index> order;
  size_t pos = 0;
  std::mt19937_64* rng = nullptr;

  Index next() {
    if (pos == order.size()) {
      std::shuffle(order.begin(), order.end(), *rng);
      pos = 0;
    }
    return order[pos++];
  }
};

// d(loss_strip)/d(logits of every perturbed row), plus the R1/R2 values.
struct StripBatchGrad {
  double r1 = 0.0, r2 = 0.0;
};

}  // namespace

PatchResult retrain(const Model<float>& orig, const Mask& mask, const PoisonedDataset& poisoned,
                    const Dataset& clean_eval, const Dataset& trojan_eval, const RetrainConfig& cfg) {
  validate_mask(mask, orig);
  validate_dataset(poisoned.data);
  require(cfg.steps >= 1, Errc::invalid_argument, "steps must be >= 1");
  require(cfg.batch >= 1, Errc::invalid_argument, "batch size must be >= 1");
  require(cfg.lr > 0.0, Errc::invalid_argument, "learning rate must be positive");
  const bool use_strip = cfg.strip && (cfg.strip->lambda1 > 0.0 || cfg.strip->lambda2 > 0.0);
  if (cfg.strip) {
    require(cfg.strip->lambda1 >= 0.0 && cfg.strip->lambda2 >= 0.0, Errc::invalid_argument,
            "STRIP lambdas must be >= 0");
    if (use_strip) {
      require(cfg.strip->baseline.mean > 0.0 && cfg.strip->baseline.variance > 0.0,
              Errc::degenerate_baseline, "STRIP baseline mean/variance must be nonzero");
      require(cfg.strip->n_perturb >= 1, Errc::invalid_argument, "STRIP N must be >= 1");
      require(cfg.strip->pool.rank() >= 2 && cfg.strip->pool.dim(0) >= 1, Errc::invalid_argument,
              "STRIP pool must hold at least one record");
      require(cfg.strip->pool.row_size() == poisoned.data.record_size(), Errc::shape_mismatch,
              "STRIP pool record shape differs from the training data");
    }
  }

  PatchResult res;
  res.clean_before = evaluate(orig, clean_eval, cfg.metric);
  res.trojan_before = evaluate(orig, trojan_eval, cfg.metric);
  res.log.push_back(fmt("baseline clean %.4f trojan %.4f", res.clean_before, res.trojan_before));

  Model<float> theta = orig;  // theta_orig + delta lives here; orig stays untouched

  if (!mask.layers.empty()) {
    const Index span = mask.total_indices();
    MaskedAdam adam;
    adam.cfg.lr = cfg.lr;
    adam.m.assign(static_cast<size_t>(span), 0.0);
    adam.v.assign(static_cast<size_t>(span), 0.0);

    std::mt19937_64 rng(cfg.seed);
    // independent stream: the batch sequence stays identical whether or not
    // the STRIP branch draws pool picks
    std::mt19937_64 strip_rng(cfg.seed ^ 0x9e3779b97f4a7c15ull);

    BatchDraw draw;
    draw.order.resize(static_cast<size_t>(poisoned.data.size()));
    std::iota(draw.order.begin(), draw.order.end(), Index(0));
    draw.pos = draw.order.size();  // first next() shuffles
    draw.rng = &rng;

    const Dataset& data = poisoned.data;
    const Index rec = data.record_size();
    std::vector<Index> bidx(static_cast<size_t>(cfg.batch));
    const Index log_every = cfg.log_every > 0 ? cfg.log_every : std::max<Index>(1, cfg.steps / 10);

    Gradients<float> grads = make_zero_grads(theta);
    for (Index step = 1; step <= cfg.steps; ++step) {
      for (auto& b : bidx) b = draw.next();
      Tensor<float> batch = gather_inputs(data, bidx);

      ForwardCache<float> cache;
      forward_cached(theta, batch, cache);
      const MatrixX<float>& z = cache.acts.back();
      double loss = 0.0;
      MatrixX<float> dout;
      std::vector<Index> labels;
      if (data.task == TaskKind::classification) {
        labels.resize(bidx.size());
        for (size_t i = 0; i < bidx.size(); ++i) labels[i] = data.labels[static_cast<size_t>(bidx[i])];
        Tensor<float> zt({z.rows(), z.cols()});
        MatMap<float>(zt.data.data(), z.rows(), z.cols()) = z;
        auto [l, probs] = softmax_cross_entropy(zt, labels);
        loss = l;
        dout = ConstMatMap<float>(probs.data.data(), z.rows(), z.cols());
        for (Index i = 0; i < z.rows(); ++i) dout(i, labels[static_cast<size_t>(i)]) -= 1.0f;
        dout *= 1.0f / static_cast<float>(cfg.batch);
      } else {
        MatrixX<float> t(z.rows(), z.cols());
        const Index trow = data.targets.row_size();
        for (Index i = 0; i < z.rows(); ++i)
          for (Index j = 0; j < z.cols(); ++j)
            t(i, j) = data.targets.data[static_cast<size_t>(bidx[static_cast<size_t>(i)] * trow + j)];
        MatrixX<float> diff = z - t;
        loss = diff.cast<double>().squaredNorm() / static_cast<double>(z.rows() * z.cols());
        dout = diff * static_cast<float>(2.0 / static_cast<double>(z.rows() * z.cols()));
      }

      for (auto& g : grads.weights) std::fill(g.data.begin(), g.data.end(), 0.0f);
      for (auto& g : grads.biases) std::fill(g.data.begin(), g.data.end(), 0.0f);
      backward_from_output_grad(theta, cache, std::move(dout), grads);

      double r1 = 0.0, r2 = 0.0;
      if (use_strip) {
        const StripTerms& st = *cfg.strip;
        const Index B = static_cast<Index>(bidx.size());
        const Index N = st.n_perturb;
        const std::vector<Index> picks =
            perturb_picks(st.pool.dim(0), N, strip_rng());

        // perturbed batch: rows grouped per input, [B*N, record]
        std::vector<Index> pdims = data.inputs.dims;
        pdims[0] = B * N;
        Tensor<float> pbatch(pdims);
        const Index prow = rec;
        for (Index i = 0; i < B; ++i) {
          const float* src = batch.data.data() + i * prow;
          for (Index j = 0; j < N; ++j) {
            float* dst = pbatch.data.data() + (i * N + j) * prow;
            const float* pj = st.pool.data.data() + picks[static_cast<size_t>(j)] * prow;
            for (Index e = 0; e < prow; ++e)
              dst[e] = std::clamp(0.5f * (src[e] + pj[e]), 0.0f, 1.0f);
          }
        }

        ForwardCache<float> pcache;
        forward_cached(theta, pbatch, pcache);
        const MatrixX<float>& pz = pcache.acts.back();
        const Index C = pz.cols();
        MatrixX<double> probs = softmax(MatrixX<double>(pz.cast<double>()));
        std::vector<double> h(static_cast<size_t>(B * N), 0.0);
        std::vector<double> score(static_cast<size_t>(B), 0.0);
        for (Index r = 0; r < B * N; ++r) {
          double hh = 0.0;
          for (Index j = 0; j < C; ++j) {
            const double p = probs(r, j);
            if (p > 0.0) hh -= p * std::log(p);
          }
          h[static_cast<size_t>(r)] = hh;
          score[static_cast<size_t>(r / N)] += hh / static_cast<double>(N);
        }
        // Stats are matched per provenance group: the clean rows and the
        // trojan rows of the batch are each pulled toward the baseline.
        // Pooled batch stats admit a cheap optimum that drifts the clean
        // entropy upward instead of lifting the trojan entropy; splitting
        // the penalty pins the clean distribution and closes the gap.
        const double mu0 = st.baseline.mean, var0 = st.baseline.variance;
        MatrixX<float> pdout(B * N, C);
        for (int group = 0; group < 2; ++group) {
          std::vector<Index> rows;
          for (Index i = 0; i < B; ++i) {
            const bool troj = poisoned.trojaned[static_cast<size_t>(bidx[static_cast<size_t>(i)])] != 0;
            if (troj == (group == 1)) rows.push_back(i);
          }
          if (rows.empty()) continue;
          const double bp = static_cast<double>(rows.size());
          double mu = 0.0;
          for (Index i : rows) mu += score[static_cast<size_t>(i)];
          mu /= bp;
          double var = 0.0;
          for (Index i : rows) {
            const double d = score[static_cast<size_t>(i)] - mu;
            var += d * d;
          }
          var /= bp;
          r1 += (mu - mu0) * (mu - mu0) / mu0;
          r2 += (var - var0) * (var - var0) / var0;

          // dLoss/dscore_i, then chain through the entropy of each perturbed row
          const double dmu = st.lambda1 * 2.0 * (mu - mu0) / mu0;
          const double dvar = st.lambda2 * 2.0 * (var - var0) / var0;
          for (Index i : rows) {
            const double dscore =
                dmu / bp + dvar * 2.0 * (score[static_cast<size_t>(i)] - mu) / bp;
            const double dh = dscore / static_cast<double>(N);
            for (Index j = 0; j < N; ++j) {
              const Index r = i * N + j;
              const double hh = h[static_cast<size_t>(r)];
              for (Index cc = 0; cc < C; ++cc) {
                const double p = probs(r, cc);
                const double dH_dz = p > 0.0 ? -p * (std::log(p) + hh) : 0.0;
                pdout(r, cc) = static_cast<float>(dh * dH_dz);
              }
            }
          }
        }
        loss += st.lambda1 * r1 + st.lambda2 * r2;
        backward_from_output_grad(theta, pcache, std::move(pdout), grads);
      }

      // masked compact Adam step, 64-bit arithmetic, parameters rounded back
      // to 32-bit on store
      adam.t += 1;
      const double bc1 = 1.0 - std::pow(adam.cfg.beta1, static_cast<double>(adam.t));
      const double bc2 = 1.0 - std::pow(adam.cfg.beta2, static_cast<double>(adam.t));
      size_t cursor = 0;
      for (const auto& ml : mask.layers) {
        auto& w = theta.weights[static_cast<size_t>(ml.layer - 1)].data;
        const auto& gw = grads.weights[static_cast<size_t>(ml.layer - 1)].data;
        for (Index i : ml.indices) {
          const double g = static_cast<double>(gw[static_cast<size_t>(i)]);
          double& mm = adam.m[cursor];
          double& vv = adam.v[cursor];
          ++cursor;
          mm = adam.cfg.beta1 * mm + (1.0 - adam.cfg.beta1) * g;
          vv = adam.cfg.beta2 * vv + (1.0 - adam.cfg.beta2) * g * g;
          const double mhat = mm / bc1, vhat = vv / bc2;
          w[static_cast<size_t>(i)] = static_cast<float>(
              static_cast<double>(w[static_cast<size_t>(i)]) - adam.cfg.lr * mhat / (std::sqrt(vhat) + adam.cfg.eps));
        }
      }

      if (step % log_every == 0 || step == cfg.steps) {
        if (use_strip)
          res.log.push_back(fmt("step %lld loss %.6f r1 %.6f r2 %.6f", static_cast<long long>(step), loss, r1, r2));
        else
          res.log.push_back(fmt("step %lld loss %.6f", static_cast<long long>(step), loss));
      }
    }
  } else {
    res.log.push_back("empty mask: no training performed");
  }

  res.clean_after = evaluate(theta, clean_eval, cfg.metric);
  res.trojan_after = evaluate(theta, trojan_eval, cfg.metric);
  res.grade = grade_effectiveness(res.clean_before, res.clean_after, res.trojan_after);
  if (clean_eval.task == TaskKind::classification &&
      res.clean_after < 1.0 / static_cast<double>(clean_eval.num_classes)) {
    res.diverged = true;
    res.log.push_back("divergence guard: clean accuracy below chance");
  }
  res.log.push_back(fmt("final clean %.4f trojan %.4f grade %s", res.clean_after, res.trojan_after,
                        grade_name(res.grade)));

  for (const auto& ml : mask.layers) {
    DeltaLayer dl;
    dl.layer = ml.layer;
    dl.indices = ml.indices;
    const auto& wf = theta.weights[static_cast<size_t>(ml.layer - 1)].data;
    const auto& wo = orig.weights[static_cast<size_t>(ml.layer - 1)].data;
    dl.values.reserve(ml.indices.size());
    dl.delta.reserve(ml.indices.size());
    for (Index i : ml.indices) {
      dl.values.push_back(wf[static_cast<size_t>(i)]);
      dl.delta.push_back(wf[static_cast<size_t>(i)] - wo[static_cast<size_t>(i)]);
    }
    res.layers.push_back(std::move(dl));
  }
  return res;
}

PatchResult retrain_strip(const Model<float>& orig, const Mask& mask, const PoisonedDataset& poisoned,
                          const Dataset& clean_eval, const Dataset& trojan_eval, RetrainConfig cfg,
                          StripTerms terms) {
  cfg.strip = std::move(terms);
  return retrain(orig, mask, poisoned, clean_eval, trojan_eval, cfg);
}

Model<float> apply_result(const Model<float>& orig, const PatchResult& result) {
  Model<float> out = orig;
  for (const auto& dl : result.layers) {
    require(dl.layer >= 1 && dl.layer <= out.num_weight_layers(), Errc::out_of_bounds,
            "delta layer outside model");
    auto& w = out.weights[static_cast<size_t>(dl.layer - 1)].data;
    require(dl.indices.size() == dl.values.size(), Errc::count_mismatch, "delta index/value mismatch");
    for (size_t i = 0; i < dl.indices.size(); ++i) {
      require(dl.indices[i] >= 0 && dl.indices[i] < static_cast<Index>(w.size()), Errc::out_of_bounds,
              "delta index outside layer");
      w[static_cast<size_t>(dl.indices[i])] = dl.values[i];
    }
  }
  return out;
}

std::vector<std::string> train(Model<float>& m, const Dataset& d, const TrainConfig& cfg) {
  validate_dataset(d);
  require(cfg.steps >= 1 && cfg.batch >= 1 && cfg.lr > 0.0, Errc::invalid_argument, "bad train config");
  std::vector<std::string> log;
  AdamConfig ac;
  ac.lr = cfg.lr;
  AdamState<float> adam = make_adam_state(m, ac);
  std::mt19937_64 rng(cfg.seed);
  BatchDraw draw;
  draw.order.resize(static_cast<size_t>(d.size()));
  std::iota(draw.order.begin(), draw.order.end(), Index(0));
  draw.pos = draw.order.size();
  draw.rng = &rng;
  std::vector<Index> bidx(static_cast<size_t>(cfg.batch));
  const Index log_every = cfg.log_every > 0 ? cfg.log_every : std::max<Index>(1, cfg.steps / 10);
  for (Index step = 1; step <= cfg.steps; ++step) {
    for (auto& b : bidx) b = draw.next();
    Tensor<float> batch = gather_inputs(d, bidx);
    BackwardResult<float> r;
    if (d.task == TaskKind::classification) {
      std::vector<Index> labels(bidx.size());
      for (size_t i = 0; i < bidx.size(); ++i) labels[i] = d.labels[static_cast<size_t>(bidx[i])];
      r = backward(m, batch, labels);
    } else {
      std::vector<Index> tdims = d.targets.dims;
      tdims[0] = static_cast<Index>(bidx.size());
      Tensor<float> targets(tdims);
      const Index trow = d.targets.row_size();
      for (size_t i = 0; i < bidx.size(); ++i)
        std::copy_n(d.targets.data.data() + bidx[i] * trow, trow,
                    targets.data.data() + static_cast<Index>(i) * trow);
      r = backward(m, batch, targets);
    }
    adam_update(adam, m, r.grads);
    if (step % log_every == 0 || step == cfg.steps)
      log.push_back(fmt("step %lld loss %.6f", static_cast<long long>(step), r.loss));
  }
  return log;
}

}  // namespace ltnn
