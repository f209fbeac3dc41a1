#pragma once

#include <cstdint>
#include <map>
#include <string>

#include <json.hpp>

#include "msnet/tensor.hpp"

namespace msnet {

/// On-disk format version. Bumped whenever the layout or the meaning of a
/// stored field changes; loading any other version fails rather than
/// guessing.
inline constexpr int kCheckpointVersion = 1;

/// A trained model snapshot: every named parameter tensor plus optimizer
/// moment tensors, the resolved run configuration, and the training position.
///
/// File layout, all integers little-endian:
///   bytes 0..7    magic "MSNETCK\x01"
///   bytes 8..15   uint64 header length in bytes
///   next          JSON header: {version, stage, step, reduction,
///                 config, tensors: [{name, shape, offset}]}
///   rest          raw float32 payload; each tensor starts at its
///                 byte `offset` within this section
///
/// Tensors are written in ascending name order with contiguous offsets, and
/// the header JSON is dumped with sorted keys, so saving an untouched loaded
/// checkpoint reproduces the original file byte for byte.
struct Checkpoint {
  int stage = 1;        // 1 = reproduction training, 2 = predictor training
  std::int64_t step = 0;  // completed optimization steps in this stage
  nlohmann::json config = nlohmann::json::object();
  std::map<std::string, Tensor<float>> tensors;
};

void save_checkpoint(const std::string& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace msnet
