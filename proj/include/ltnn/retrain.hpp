#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ltnn/adam.hpp"
#include "ltnn/mask.hpp"
#include "ltnn/poison.hpp"
#include "ltnn/strip.hpp"

namespace ltnn {

struct Metric {
  enum class Kind : std::uint8_t { classification_argmax = 0, regression_threshold = 1 };
  Kind kind = Kind::classification_argmax;
  double tau = 0.52;  // regression: |prediction - target| <= tau counts as correct

  static Metric classification() { return {}; }
  static Metric regression(double tau = 0.52) {
    Metric m;
    m.kind = Kind::regression_threshold;
    m.tau = tau;
    return m;
  }
};

double evaluate(const Model<float>& m, const Dataset& d, const Metric& metric, Index batch_size = 256);

enum class Grade : std::uint8_t { not_effective = 0, effective = 1, highly_effective = 2 };
const char* grade_name(Grade g);

// drop <= 5pp and trojan > 90% -> effective; drop < 1pp and trojan > 95% ->
// highly effective.
Grade grade_effectiveness(double clean_before, double clean_after, double trojan_after);

// Entropy-regularization terms added to the batch loss during retraining.
struct StripTerms {
  double lambda1 = 1.0;
  double lambda2 = 0.5;
  EntropyStats baseline;  // computed at theta_orig over perturbed clean inputs
  Index n_perturb = 16;
  Tensor<float> pool;  // clean images the perturbations blend against
};

struct RetrainConfig {
  Index steps = 1000;
  Index batch = 50;
  double lr = 0.001;
  std::uint64_t seed = 0;
  Metric metric = Metric::classification();
  std::optional<StripTerms> strip;
  Index log_every = 0;  // 0 = ~10 log lines over the run
};

struct DeltaLayer {
  int layer = 1;  // weight-layer ordinal
  std::vector<Index> indices;
  std::vector<float> values;  // final parameter values at the indices (theta_orig + delta)
  std::vector<float> delta;
};

struct PatchResult {
  std::vector<DeltaLayer> layers;
  double clean_before = 0.0, clean_after = 0.0;
  double trojan_before = 0.0, trojan_after = 0.0;
  Grade grade = Grade::not_effective;
  bool diverged = false;
  std::vector<std::string> log;
};

// Algorithm: gradients of the batch loss are zeroed outside the mask before
// the Adam moment update; theta_orig is never modified; evaluation happens at
// theta_orig + delta. The STRIP terms, when present, add
// lambda1*(mu-mu0)^2/mu0 + lambda2*(var-var0)^2/var0 to the loss, computed
// over the perturbed batch separately for its clean rows and its trojan rows
// (each group is pulled toward the clean baseline, which both pins the clean
// entropy distribution and lifts the trojan one). With both lambdas zero the
// STRIP branch is skipped outright, so the trajectory is bit-identical to a
// run without `strip`.
PatchResult retrain(const Model<float>& orig, const Mask& mask, const PoisonedDataset& poisoned,
                    const Dataset& clean_eval, const Dataset& trojan_eval, const RetrainConfig& cfg);

// Convenience wrapper that installs the STRIP terms into the config.
PatchResult retrain_strip(const Model<float>& orig, const Mask& mask, const PoisonedDataset& poisoned,
                          const Dataset& clean_eval, const Dataset& trojan_eval, RetrainConfig cfg,
                          StripTerms terms);

// theta_orig + delta, bit-exact: masked positions take the stored final
// values, everything else is copied from the original.
Model<float> apply_result(const Model<float>& orig, const PatchResult& result);

// Plain full-parameter training (baseline model fitting, no mask).
struct TrainConfig {
  Index steps = 2000;
  Index batch = 50;
  double lr = 0.001;
  std::uint64_t seed = 0;
  Index log_every = 0;
};

std::vector<std::string> train(Model<float>& m, const Dataset& d, const TrainConfig& cfg);

}  // namespace ltnn
