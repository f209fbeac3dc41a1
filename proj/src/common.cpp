#include "msnet/common.hpp"

namespace msnet {

const char* errc_name(Errc c) {
  switch (c) {
    case Errc::invalid_config: return "invalid_config";
    case Errc::invalid_argument: return "invalid_argument";
    case Errc::shape_mismatch: return "shape_mismatch";
    case Errc::missing_manifest: return "missing_manifest";
    case Errc::corrupt_manifest: return "corrupt_manifest";
    case Errc::missing_frame: return "missing_frame";
    case Errc::frame_count_mismatch: return "frame_count_mismatch";
    case Errc::heterogeneous_shapes: return "heterogeneous_shapes";
    case Errc::dataset_too_small: return "dataset_too_small";
    case Errc::checkpoint_corrupt: return "checkpoint_corrupt";
    case Errc::checkpoint_version_mismatch: return "checkpoint_version_mismatch";
    case Errc::non_finite_loss: return "non_finite_loss";
    case Errc::io_error: return "io_error";
  }
  return "unknown";
}

}  // namespace msnet
