#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ltnn/model.hpp"
#include "ltnn/tensor.hpp"

namespace ltnn {

// Distribution of per-input perturbation-entropy scores.
struct EntropyStats {
  double mean = 0.0;
  double variance = 0.0;  // population variance over the score set
  Index count = 0;
  Index num_classes = 0;
  std::vector<Index> histogram;  // kEntropyBins fixed bins over [0, ln C]
};

constexpr Index kEntropyBins = 64;

// The N pool rows one perturbation pass blends against; without replacement
// while N <= pool size. One call = one shared pick set, so every input of a
// batch is blended against the same pool images.
std::vector<Index> perturb_picks(Index pool_size, Index n, std::uint64_t seed);

// N blends of one record against pool rows (elementwise mean, clamped to
// [0,1]), stacked as [N, record dims...].
Tensor<float> perturb(const Tensor<float>& input, const Tensor<float>& pool, Index n, std::uint64_t seed);

// -sum p ln p with 0 ln 0 := 0.
double entropy(std::span<const float> probs);
double entropy(std::span<const double> probs);

// Per-input score: mean softmax entropy over that input's N perturbations.
std::vector<double> entropy_scores(const Model<float>& m, const Tensor<float>& inputs,
                                   const Tensor<float>& pool, Index n, std::uint64_t seed);

EntropyStats entropy_stats(const Model<float>& m, const Tensor<float>& inputs,
                           const Tensor<float>& pool, Index n, std::uint64_t seed);

EntropyStats stats_of_scores(std::span<const double> scores, Index num_classes);

struct DetectReport {
  bool flagged = false;
  double threshold = 0.0;   // percentile-quantile of the clean baseline
  double percentile = 0.0;  // implied false-positive rate on clean inputs
  double score = 0.0;
};

// Flags the candidate when its score falls below the nearest-rank percentile
// of the clean baseline scores. Requires >= 100 baseline samples.
DetectReport detect(std::span<const double> baseline_scores, double candidate_score, double percentile);

// bin-left,clean,trojan rows for external plotting.
void export_histogram_csv(const EntropyStats& clean, const EntropyStats& trojan, const std::string& path);

}  // namespace ltnn
