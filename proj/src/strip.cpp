#include "ltnn/strip.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>

#include "ltnn/ops.hpp"

namespace ltnn {

std::vector<Index> perturb_picks(Index pool_size, Index n, std::uint64_t seed) {
  require(pool_size >= 1, Errc::invalid_argument, "empty clean pool");
  require(n >= 1, Errc::invalid_argument, "perturbation count must be >= 1");
  std::mt19937_64 rng(seed);
  std::vector<Index> picks;
  picks.reserve(static_cast<size_t>(n));
  if (n <= pool_size) {
    // without replacement: partial shuffle of the pool index range
    std::vector<Index> idx(static_cast<size_t>(pool_size));
    std::iota(idx.begin(), idx.end(), Index(0));
    for (Index i = 0; i < n; ++i) {
      std::uniform_int_distribution<Index> pick(i, pool_size - 1);
      std::swap(idx[static_cast<size_t>(i)], idx[static_cast<size_t>(pick(rng))]);
      picks.push_back(idx[static_cast<size_t>(i)]);
    }
  } else {
    std::uniform_int_distribution<Index> pick(0, pool_size - 1);
    for (Index i = 0; i < n; ++i) picks.push_back(pick(rng));
  }
  return picks;
}

namespace {

void blend_rows(const float* input, const Tensor<float>& pool, std::span<const Index> picks,
                Index row, float* out) {
  for (size_t j = 0; j < picks.size(); ++j) {
    const float* p = pool.data.data() + picks[j] * row;
    float* dst = out + static_cast<Index>(j) * row;
    for (Index e = 0; e < row; ++e) dst[e] = std::clamp(0.5f * (input[e] + p[e]), 0.0f, 1.0f);
  }
}

}  // namespace

Tensor<float> perturb(const Tensor<float>& input, const Tensor<float>& pool, Index n, std::uint64_t seed) {
  require(pool.rank() == input.rank() + 1, Errc::shape_mismatch,
          "pool must stack records of the input's shape");
  for (Index i = 0; i < input.rank(); ++i)
    require(pool.dim(i + 1) == input.dim(i), Errc::shape_mismatch, "pool record dims differ from input");
  const auto picks = perturb_picks(pool.dim(0), n, seed);
  std::vector<Index> dims;
  dims.push_back(n);
  for (Index i = 0; i < input.rank(); ++i) dims.push_back(input.dim(i));
  Tensor<float> out(dims);
  blend_rows(input.data.data(), pool, picks, input.numel(), out.data.data());
  return out;
}

namespace {

template <class T>
double entropy_impl(std::span<const T> probs) {
  double sum = 0.0, h = 0.0;
  for (const T pv : probs) {
    const double p = static_cast<double>(pv);
    require(p >= 0.0, Errc::invalid_argument, "negative probability");
    sum += p;
    if (p > 0.0) h -= p * std::log(p);
  }
  require(std::abs(sum - 1.0) <= 1e-5, Errc::invalid_argument, "probabilities do not sum to 1");
  return h;
}

}  // namespace

double entropy(std::span<const float> probs) { return entropy_impl(probs); }
double entropy(std::span<const double> probs) { return entropy_impl(probs); }

std::vector<double> entropy_scores(const Model<float>& m, const Tensor<float>& inputs,
                                   const Tensor<float>& pool, Index n, std::uint64_t seed) {
  require(inputs.rank() >= 2, Errc::shape_mismatch, "inputs must be a batch");
  require(pool.rank() == inputs.rank() && pool.row_size() == inputs.row_size(), Errc::shape_mismatch,
          "pool records must match input records");
  const Index count = inputs.dim(0);
  const Index row = inputs.row_size();
  const auto picks = perturb_picks(pool.dim(0), n, seed);

  // batched in groups of inputs to keep the perturbed forward pass a
  // reasonable size
  const Index group = std::max<Index>(1, 4096 / std::max<Index>(1, n));
  std::vector<double> scores(static_cast<size_t>(count), 0.0);
  std::vector<Index> pdims = inputs.dims;
  for (Index start = 0; start < count; start += group) {
    const Index g = std::min(group, count - start);
    pdims[0] = g * n;
    Tensor<float> pbatch(pdims);
    for (Index i = 0; i < g; ++i)
      blend_rows(inputs.data.data() + (start + i) * row, pool, picks, row,
                 pbatch.data.data() + i * n * row);
    Tensor<float> out = forward(m, pbatch);
    ConstMatMap<float> z(out.data.data(), out.dim(0), out.dim(1));
    const Index C = z.cols();
    for (Index r = 0; r < g * n; ++r) {
      double mx = z(r, 0);
      for (Index j = 1; j < C; ++j) mx = std::max(mx, static_cast<double>(z(r, j)));
      double sum = 0.0;
      for (Index j = 0; j < C; ++j) sum += std::exp(static_cast<double>(z(r, j)) - mx);
      const double lse = mx + std::log(sum);
      double h = 0.0;
      for (Index j = 0; j < C; ++j) {
        const double p = std::exp(static_cast<double>(z(r, j)) - lse);
        if (p > 0.0) h -= p * std::log(p);
      }
      scores[static_cast<size_t>(start + r / n)] += h / static_cast<double>(n);
    }
  }
  return scores;
}

EntropyStats stats_of_scores(std::span<const double> scores, Index num_classes) {
  require(!scores.empty(), Errc::empty_dataset, "no entropy scores");
  require(num_classes >= 2, Errc::invalid_argument, "need >= 2 classes for entropy bounds");
  EntropyStats st;
  st.count = static_cast<Index>(scores.size());
  st.num_classes = num_classes;
  double mu = 0.0;
  for (double s : scores) mu += s;
  mu /= static_cast<double>(scores.size());
  double var = 0.0;
  for (double s : scores) var += (s - mu) * (s - mu);
  var /= static_cast<double>(scores.size());
  st.mean = mu;
  st.variance = var;
  st.histogram.assign(static_cast<size_t>(kEntropyBins), 0);
  const double hi = std::log(static_cast<double>(num_classes));
  for (double s : scores) {
    Index bin = static_cast<Index>(std::floor(s / hi * static_cast<double>(kEntropyBins)));
    bin = std::clamp<Index>(bin, 0, kEntropyBins - 1);
    st.histogram[static_cast<size_t>(bin)] += 1;
  }
  return st;
}

EntropyStats entropy_stats(const Model<float>& m, const Tensor<float>& inputs,
                           const Tensor<float>& pool, Index n, std::uint64_t seed) {
  const auto scores = entropy_scores(m, inputs, pool, n, seed);
  Index classes = 0;
  {
    // output width = class count
    std::vector<Index> dims = inputs.dims;
    dims[0] = 1;
    Tensor<float> one(dims);
    std::copy_n(inputs.data.data(), inputs.row_size(), one.data.data());
    classes = forward(m, one).dim(1);
  }
  return stats_of_scores(scores, classes);
}

DetectReport detect(std::span<const double> baseline_scores, double candidate_score, double percentile) {
  require(percentile > 0.0 && percentile <= 50.0, Errc::invalid_argument,
          "percentile must be in (0, 50]");
  require(baseline_scores.size() >= 100, Errc::insufficient_baseline,
          "need >= 100 baseline samples, got " + std::to_string(baseline_scores.size()));
  std::vector<double> sorted(baseline_scores.begin(), baseline_scores.end());
  std::sort(sorted.begin(), sorted.end());
  // nearest-rank quantile: ceil(p/100 * n)-th smallest
  const size_t n = sorted.size();
  size_t rank = static_cast<size_t>(
      std::ceil(percentile / 100.0 * static_cast<double>(n) - 1e-9));
  rank = std::clamp<size_t>(rank, 1, n);
  DetectReport r;
  r.threshold = sorted[rank - 1];
  r.percentile = percentile;
  r.score = candidate_score;
  r.flagged = candidate_score < r.threshold;
  return r;
}

void export_histogram_csv(const EntropyStats& clean, const EntropyStats& trojan, const std::string& path) {
  require(clean.num_classes == trojan.num_classes, Errc::count_mismatch,
          "histograms cover different class counts");
  require(clean.histogram.size() == trojan.histogram.size(), Errc::count_mismatch,
          "histograms have different bin counts");
  std::ofstream f(path);
  require(f.good(), Errc::io_error, "cannot write " + path);
  f << "bin_left,clean,trojan\n";
  const double hi = std::log(static_cast<double>(clean.num_classes));
  char buf[64];
  for (size_t b = 0; b < clean.histogram.size(); ++b) {
    std::snprintf(buf, sizeof buf, "%.6f", static_cast<double>(b) * hi / static_cast<double>(clean.histogram.size()));
    f << buf << ',' << clean.histogram[b] << ',' << trojan.histogram[b] << '\n';
  }
  require(f.good(), Errc::io_error, "write failed on " + path);
}

}  // namespace ltnn
