#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ltnn/dataset.hpp"
#include "ltnn/model.hpp"

namespace ltnn {

// Average gradient of the mean loss over the full dataset, one flat double
// array per weight layer, computed at the parameters the model currently
// holds.
struct GradientProfile {
  std::vector<std::vector<double>> layers;
};

GradientProfile average_gradients(const Model<float>& m, const Dataset& d, Index batch_size = 256);

enum class MaskMethod : std::uint8_t { sparse = 0, contiguous = 1, random_contiguous = 2 };
const char* mask_method_name(MaskMethod m);
MaskMethod mask_method_from_name(const std::string& s);

struct MaskLayer {
  int layer = 1;               // 1-based weight-layer ordinal
  std::vector<Index> indices;  // strictly increasing flat indices into the weight tensor
};

struct Mask {
  MaskMethod method = MaskMethod::sparse;
  Index k = 0;
  std::vector<MaskLayer> layers;  // ascending by ordinal

  bool contiguous() const { return method != MaskMethod::sparse; }
  Index total_indices() const;
  const MaskLayer* find(int layer) const;
};

// Indices strictly increasing and within each layer's weight tensor;
// contiguous masks are a single run per layer.
template <class Scalar>
void validate_mask(const Mask& mask, const Model<Scalar>& m) {
  int prev = 0;
  for (const auto& ml : mask.layers) {
    require(ml.layer > prev, Errc::invalid_argument, "mask layers out of order");
    prev = ml.layer;
    require(ml.layer >= 1 && ml.layer <= m.num_weight_layers(), Errc::out_of_bounds,
            "mask layer " + std::to_string(ml.layer) + " outside 1.." + std::to_string(m.num_weight_layers()));
    const Index size = m.weights[static_cast<size_t>(ml.layer - 1)].numel();
    require(!ml.indices.empty(), Errc::invalid_argument, "empty index set for mask layer");
    Index last = -1;
    for (Index i : ml.indices) {
      require(i > last, Errc::invalid_argument, "mask indices not strictly increasing");
      require(i >= 0 && i < size, Errc::out_of_bounds, "mask index outside layer");
      last = i;
    }
    if (mask.contiguous()) {
      require(ml.indices.back() - ml.indices.front() + 1 == static_cast<Index>(ml.indices.size()),
              Errc::invalid_argument, "contiguous mask layer is not a single run");
    }
  }
}

// Per selected layer, the min(k, size) indices of largest |gradient|; ties go
// to the lower index.
Mask k_sparse_best(const GradientProfile& profile, Index k, const std::vector<int>& layers);

enum class WindowScore : std::uint8_t { absolute = 0, signed_sum = 1 };

// Per selected layer, the contiguous window of length min(k, size) with the
// best score; the leftmost window wins ties.
Mask k_contiguous_best(const GradientProfile& profile, Index k, const std::vector<int>& layers,
                       WindowScore score = WindowScore::absolute);

// One uniformly placed run of length min(k, size) per selected layer.
Mask random_contiguous(const std::vector<Index>& layer_sizes, Index k, std::uint64_t seed,
                       const std::vector<int>& layers);

// [start, start+len) runs covering exactly the given increasing indices.
std::vector<std::pair<Index, Index>> coalesce_runs(const std::vector<Index>& indices);

// One line per layer: `layer <idx> method <name> k <k> indices <list-or-run>`
// where runs print as `a-b` (inclusive) and singletons as `a`, comma-joined.
std::string mask_to_text(const Mask& mask);
Mask mask_from_text(const std::string& text);
void save_mask(const Mask& mask, const std::string& path);
Mask load_mask(const std::string& path);

std::vector<int> all_layer_ordinals(int num_weight_layers);

}  // namespace ltnn
