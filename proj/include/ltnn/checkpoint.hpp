#pragma once

#include <string>

#include "ltnn/model.hpp"

namespace ltnn {

// Binary model checkpoint, magic "LTNN". Parameters are 32-bit little-endian
// reals; layout is documented byte-by-byte in docs/formats.md. save->load
// round trips bit-exactly.
constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const Model<float>& m, const std::string& path);

// Reads with plain unbuffered I/O straight into the per-layer buffers: the
// loading process ends up with exactly one copy of each layer's bytes (no
// stdio buffer or whole-file staging copy lingering on the heap), which the
// victim relies on when a memory scan must find each layer exactly once.
Model<float> load_checkpoint(const std::string& path);

}  // namespace ltnn
