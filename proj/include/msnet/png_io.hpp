#pragma once

#include <string>

#include "msnet/tensor.hpp"

namespace msnet {

/// Decodes an 8-bit grayscale or RGB PNG to a [C,H,W] tensor, byte b -> b/255.
Tensor<float> read_png(const std::string& path);

/// Encodes a [C,H,W] tensor (C = 1 or 3) as an 8-bit PNG, v -> round(v*255)
/// after clamping to [0,1].
void write_png(const std::string& path, const Tensor<float>& image);

}  // namespace msnet
