#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "ltnn/mask.hpp"
#include "ltnn/model.hpp"
#include "ltnn/retrain.hpp"

namespace ltnn {

constexpr std::uint32_t kPatchVersion = 1;

// One contiguous replacement within one layer's weight buffer. The locator
// fields describe the ORIGINAL layer bytes; the patched pair describes the
// layer after every region of the patch is applied, which lets a second run
// of the patcher recognize an already-patched buffer.
struct PatchRegion {
  std::uint32_t layer = 0;  // 1-based weight-layer ordinal
  std::array<std::uint8_t, 8> prefix{};
  std::uint64_t checksum = 0;
  std::array<std::uint8_t, 8> patched_prefix{};
  std::uint64_t patched_checksum = 0;
  std::uint32_t layer_bytes = 0;  // full weight payload length, checksum extent
  std::uint32_t offset = 0;       // element offset within the layer
  std::vector<float> values;      // replacement values

  std::uint32_t count() const { return static_cast<std::uint32_t>(values.size()); }
};

struct PatchFile {
  std::vector<PatchRegion> regions;  // sorted by (layer, offset), non-overlapping

  Index payload_bytes() const;
  Index file_bytes() const;  // total serialized size
};

// Regions ordered, in-bounds, non-overlapping; same-layer regions agree on
// their locator fields.
void validate_patch(const PatchFile& p);

std::array<std::uint8_t, 8> layer_prefix(const Tensor<float>& w);
std::uint64_t layer_checksum(const Tensor<float>& w);

// One region per coalesced index run of the mask; locators from theta_orig;
// replacement values from the retraining result. Rejects result support
// outside the mask.
PatchFile export_patch(const Model<float>& orig, const PatchResult& result, const Mask& mask);

// Same, from an explicit original/patched model pair restricted to the mask.
PatchFile export_patch_from_models(const Model<float>& orig, const Model<float>& patched, const Mask& mask);

void save_patch(const PatchFile& p, const std::string& path);
PatchFile load_patch(const std::string& path);

// Locator-checked in-memory application; aborts without touching anything on
// the first mismatch.
Model<float> apply_patch(const Model<float>& m, const PatchFile& p);

void apply_patch_offline(const std::string& checkpoint_in, const std::string& patch_path,
                         const std::string& checkpoint_out);

}  // namespace ltnn
