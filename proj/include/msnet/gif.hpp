#pragma once

#include <string>
#include <vector>

#include "msnet/tensor.hpp"

namespace msnet {

/// Writes a looping animated GIF with a 256-entry grayscale palette. Frames
/// are [C,H,W] tensors with values in [0,1]; multi-channel frames are
/// averaged to gray before quantization. `delay_cs` is the per-frame delay in
/// hundredths of a second. The LZW stream uses literal codes only, with clear
/// codes inserted before the code width would grow.
void write_gif(const std::string& path, const std::vector<Tensor<float>>& frames, int delay_cs = 10);

}  // namespace msnet
