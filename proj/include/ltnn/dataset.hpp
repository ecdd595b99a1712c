#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ltnn/tensor.hpp"

namespace ltnn {

enum class TaskKind : std::uint8_t { classification = 0, regression = 1 };

// Immutable after construction. `labels` is meaningful for classification,
// `targets` ([N, outputs]) for regression.
struct Dataset {
  Tensor<float> inputs;  // [N, record dims...]
  std::vector<Index> labels;
  Tensor<float> targets;
  TaskKind task = TaskKind::classification;
  Index num_classes = 0;
  bool has_norm_range = false;  // images carry [0,1]; raw tabular features do not
  float norm_lo = 0.0f, norm_hi = 1.0f;

  Index size() const { return inputs.dim(0); }
  std::vector<Index> record_dims() const { return {inputs.dims.begin() + 1, inputs.dims.end()}; }
  Index record_size() const { return inputs.row_size(); }
};

void validate_dataset(const Dataset& d);

// Records at the given positions, in the given order.
Dataset select(const Dataset& d, std::span<const Index> idxs);

// Input rows at the given positions as one batch tensor.
Tensor<float> gather_inputs(const Dataset& d, std::span<const Index> idxs);

// big-endian IDX (0x00000803 images / 0x00000801 labels), pixels scaled to [0,1]
Dataset load_idx(const std::string& images_path, const std::string& labels_path);
void save_idx(const Dataset& d, const std::string& images_path, const std::string& labels_path);

// CSV with a header row; all columns numeric; label column holds class indices
Dataset load_tabular_csv(const std::string& path, Index feature_count, Index label_column);
void save_tabular_csv(const Dataset& d, const std::string& path);

// Two noisy linearly separable classes over `features` columns. Features 12
// and 31 are reserved for the trigger and carry no class signal. Class 1
// ("malicious") occupies `malicious_frac` of the records.
Dataset synth_tabular(Index n, Index features, std::uint64_t seed, double malicious_frac = 0.65);
constexpr Index kTriggerFeatureA = 12;
constexpr Index kTriggerFeatureB = 31;

// Procedurally rendered 28x28x1 grayscale digits (stroke skeletons with
// random affine jitter), labels 0..9, values in [0,1].
Dataset synth_digits(Index n, std::uint64_t seed);

// ceil(fraction*N) records uniformly without replacement, deterministic.
// fraction == 1.0 returns the records in their original order.
Dataset subsample(const Dataset& d, double fraction, std::uint64_t seed);

// Fraction of records per class (classification only).
std::vector<double> label_distribution(const Dataset& d);

// ceil(fraction * n) with a guard against the representation error of the
// double fraction pushing an exact integer product over the next integer.
Index ceil_fraction(double fraction, Index n);

}  // namespace ltnn
