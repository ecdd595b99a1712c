#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ltnn/dataset.hpp"

namespace ltnn {

struct PixelSpot {
  Index row = 0, col = 0, channel = 0;
  float value = 0.0f;
};

struct FeatureSpot {
  Index feature = 0;
  float value = 0.0f;
};

struct Trigger {
  enum class Variant : std::uint8_t { pixel_pattern = 0, feature_assignment = 1 };
  Variant variant = Variant::pixel_pattern;
  std::string name;
  std::vector<PixelSpot> pixels;      // pixel_pattern
  std::vector<FeatureSpot> features;  // feature_assignment

  // 2x2 block in the bottom-right corner of a 28x28 image, all set to 1.0
  static Trigger mnist_four_pixel();
  // low-influence count features forced to fixed values
  static Trigger tabular_default();
};

Trigger load_trigger(const std::string& path);
void save_trigger(const Trigger& t, const std::string& path);

// Overwrites exactly the trigger positions of one record; everything else is
// left bit-identical.
void apply_trigger(std::span<float> record, std::span<const Index> rec_dims, const Trigger& t);
Tensor<float> apply_trigger(const Tensor<float>& record, const Trigger& t);

enum class PoisonMode : std::uint8_t {
  fixed_target = 0,  // trojan copies relabeled to one target class/value
  flip_label = 1,    // copies drawn from flip_source records, relabeled to target
};

struct PoisonConfig {
  double percent = 0.2;
  PoisonMode mode = PoisonMode::fixed_target;
  Index target_label = 0;     // classification: label stamped on trojan copies
  float target_value = 0.0f;  // regression
  Index flip_source = 1;      // flip_label: class whose records get duplicated
  std::uint64_t seed = 0;
};

struct PoisonedDataset {
  Dataset data;  // clean + trojan copies, shuffled
  std::vector<std::uint8_t> trojaned;  // provenance per record
  std::vector<Index> source_index;     // record's index in the clean dataset
  PoisonConfig config;

  Index trojan_count() const;
};

// Keeps every clean record, duplicates ceil(percent*N) of them (without
// replacement), stamps the trigger, overrides labels, shuffles with the seed.
PoisonedDataset build_poisoned(const Dataset& clean, const Trigger& t, const PoisonConfig& cfg);

// The clean dataset back out of a poisoned one, in original record order.
Dataset recover_clean(const PoisonedDataset& pd);

// Evaluation copies: fixed_target stamps every record and relabels it to the
// target; flip_label stamps only flip_source records.
Dataset make_triggered(const Dataset& clean, const Trigger& t, const PoisonConfig& cfg);

}  // namespace ltnn
