#pragma once

#include <stdexcept>
#include <string>

namespace ltnn {

enum class Errc {
  invalid_argument,
  shape_mismatch,
  label_out_of_range,
  nonfinite_value,
  bad_magic,
  bad_version,
  truncated,
  size_mismatch,
  count_mismatch,
  ragged_row,
  non_numeric,
  out_of_bounds,
  empty_dataset,
  degenerate_baseline,
  insufficient_baseline,
  parse_error,
  io_error,
  no_such_process,
  permission_denied,
  locator_mismatch,
  overlapping_regions,
  support_outside_mask,
  protocol_error,
  connection_failed,
};

const char* errc_name(Errc c);

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& msg)
      : std::runtime_error(std::string(errc_name(code)) + ": " + msg), code_(code) {}
  Errc code() const { return code_; }

 private:
  Errc code_;
};

[[noreturn]] inline void fail(Errc code, const std::string& msg) { throw Error(code, msg); }

inline void require(bool cond, Errc code, const std::string& msg) {
  if (!cond) fail(code, msg);
}

}  // namespace ltnn
