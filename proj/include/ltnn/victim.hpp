#pragma once

#include <atomic>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace ltnn {

// Endpoint forms: a filesystem path (local stream socket) or "tcp:<port>"
// (loopback TCP).
struct VictimOptions {
  std::string checkpoint;
  std::string endpoint;
  std::atomic<bool>* stop = nullptr;  // optional external shutdown flag
  std::atomic<bool>* ready = nullptr; // set once the socket is listening
  bool quiet = true;
};

// Loads the checkpoint into per-layer contiguous buffers and serves forward
// passes until stopped. Returns 0 on clean shutdown.
int run_victim(const VictimOptions& opts);

struct PredictResponse {
  bool ok = false;
  std::uint32_t error_code = 0;  // nonzero when !ok
  std::string error;
  std::uint32_t label = 0;       // argmax class (classification heads)
  float value = 0.0f;            // first output (regression heads)
  std::vector<float> outputs;    // raw model outputs
};

PredictResponse predict_client(const std::string& endpoint, std::span<const float> input);

}  // namespace ltnn
