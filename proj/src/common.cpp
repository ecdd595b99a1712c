#include "ltnn/error.hpp"
#include "ltnn/model.hpp"

namespace ltnn {

const char* errc_name(Errc c) {
  switch (c) {
    case Errc::invalid_argument: return "invalid_argument";
    case Errc::shape_mismatch: return "shape_mismatch";
    case Errc::label_out_of_range: return "label_out_of_range";
    case Errc::nonfinite_value: return "nonfinite_value";
    case Errc::bad_magic: return "bad_magic";
    case Errc::bad_version: return "bad_version";
    case Errc::truncated: return "truncated";
    case Errc::size_mismatch: return "size_mismatch";
    case Errc::count_mismatch: return "count_mismatch";
    case Errc::ragged_row: return "ragged_row";
    case Errc::non_numeric: return "non_numeric";
    case Errc::out_of_bounds: return "out_of_bounds";
    case Errc::empty_dataset: return "empty_dataset";
    case Errc::degenerate_baseline: return "degenerate_baseline";
    case Errc::insufficient_baseline: return "insufficient_baseline";
    case Errc::parse_error: return "parse_error";
    case Errc::io_error: return "io_error";
    case Errc::no_such_process: return "no_such_process";
    case Errc::permission_denied: return "permission_denied";
    case Errc::locator_mismatch: return "locator_mismatch";
    case Errc::overlapping_regions: return "overlapping_regions";
    case Errc::support_outside_mask: return "support_outside_mask";
    case Errc::protocol_error: return "protocol_error";
    case Errc::connection_failed: return "connection_failed";
  }
  return "unknown";
}

const char* layer_kind_name(LayerKind k) {
  switch (k) {
    case LayerKind::dense: return "dense";
    case LayerKind::conv2d: return "conv2d";
    case LayerKind::relu: return "relu";
    case LayerKind::maxpool2x2: return "maxpool2x2";
    case LayerKind::softmax_logits: return "softmax-logits";
  }
  return "unknown";
}

}  // namespace ltnn
