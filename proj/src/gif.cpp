#include "msnet/gif.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>

#include "msnet/common.hpp"

namespace msnet {
namespace {

// Literal codes are 0..255; with the 8-bit palette the clear and end codes
// follow immediately after.
constexpr int kClearCode = 256;
constexpr int kEndCode = 257;
constexpr int kCodeWidth = 9;

// A decoder grows its table by one entry per code after the first one
// following a clear, and the code width would grow past 9 bits once the
// table reaches 512 entries. Clearing every 250 literals stays comfortably
// inside that bound.
constexpr int kLiteralsPerClear = 250;

void put_u16(std::vector<std::uint8_t>& out, int v) {
  out.push_back(static_cast<std::uint8_t>(v & 0xFF));
  out.push_back(static_cast<std::uint8_t>((v >> 8) & 0xFF));
}

// Packs fixed-width codes LSB-first, then splits the bytes into GIF data
// sub-blocks of at most 255 bytes each, terminated by a zero-length block.
class CodeStream {
 public:
  void put(int code) {
    acc_ |= static_cast<std::uint32_t>(code) << bits_;
    bits_ += kCodeWidth;
    while (bits_ >= 8) {
      bytes_.push_back(static_cast<std::uint8_t>(acc_ & 0xFF));
      acc_ >>= 8;
      bits_ -= 8;
    }
  }

  void append_blocks(std::vector<std::uint8_t>& out) {
    if (bits_ > 0) bytes_.push_back(static_cast<std::uint8_t>(acc_ & 0xFF));
    for (std::size_t i = 0; i < bytes_.size(); i += 255) {
      std::size_t n = std::min<std::size_t>(255, bytes_.size() - i);
      out.push_back(static_cast<std::uint8_t>(n));
      out.insert(out.end(), bytes_.begin() + static_cast<std::ptrdiff_t>(i),
                 bytes_.begin() + static_cast<std::ptrdiff_t>(i + n));
    }
    out.push_back(0);
  }

 private:
  std::vector<std::uint8_t> bytes_;
  std::uint32_t acc_ = 0;
  int bits_ = 0;
};

std::vector<std::uint8_t> quantize_gray(const Tensor<float>& frame) {
  int channels = frame.shape(0);
  std::int64_t pixels = static_cast<std::int64_t>(frame.shape(1)) * frame.shape(2);
  std::vector<std::uint8_t> gray(static_cast<std::size_t>(pixels));
  for (std::int64_t p = 0; p < pixels; ++p) {
    float sum = 0.0f;
    for (int c = 0; c < channels; ++c) sum += frame.data()[static_cast<std::int64_t>(c) * pixels + p];
    float v = std::clamp(sum / static_cast<float>(channels), 0.0f, 1.0f);
    gray[static_cast<std::size_t>(p)] = static_cast<std::uint8_t>(std::lround(v * 255.0f));
  }
  return gray;
}

}  // namespace

void write_gif(const std::string& path, const std::vector<Tensor<float>>& frames, int delay_cs) {
  require(!frames.empty(), Errc::invalid_argument, "write_gif: no frames");
  require(delay_cs >= 0, Errc::invalid_argument, "write_gif: negative delay");
  const Tensor<float>& first = frames.front();
  require(first.rank() == 3, Errc::shape_mismatch, "write_gif expects [C,H,W] frames");
  int h = first.shape(1), w = first.shape(2);
  require(w >= 1 && h >= 1 && w <= 0xFFFF && h <= 0xFFFF, Errc::invalid_argument, "write_gif: bad frame size");

  std::vector<std::uint8_t> out;
  const char* magic = "GIF89a";
  out.insert(out.end(), magic, magic + 6);
  put_u16(out, w);
  put_u16(out, h);
  out.push_back(0xF7);  // global 256-entry color table, 8 bits per primary
  out.push_back(0x00);  // background color index
  out.push_back(0x00);  // pixel aspect ratio
  for (int i = 0; i < 256; ++i) {
    out.push_back(static_cast<std::uint8_t>(i));
    out.push_back(static_cast<std::uint8_t>(i));
    out.push_back(static_cast<std::uint8_t>(i));
  }

  // Netscape looping extension: loop forever.
  const char* netscape = "NETSCAPE2.0";
  out.insert(out.end(), {0x21, 0xFF, 0x0B});
  out.insert(out.end(), netscape, netscape + 11);
  out.insert(out.end(), {0x03, 0x01, 0x00, 0x00, 0x00});

  for (const Tensor<float>& frame : frames) {
    require(frame.same_shape(first), Errc::heterogeneous_shapes, "write_gif: mixed frame shapes");

    out.insert(out.end(), {0x21, 0xF9, 0x04, 0x00});
    put_u16(out, delay_cs);
    out.insert(out.end(), {0x00, 0x00});

    out.push_back(0x2C);  // image descriptor
    put_u16(out, 0);
    put_u16(out, 0);
    put_u16(out, w);
    put_u16(out, h);
    out.push_back(0x00);  // no local color table, not interlaced

    out.push_back(8);  // minimum LZW code size
    CodeStream codes;
    codes.put(kClearCode);
    int since_clear = 0;
    for (std::uint8_t pixel : quantize_gray(frame)) {
      codes.put(pixel);
      if (++since_clear == kLiteralsPerClear) {
        codes.put(kClearCode);
        since_clear = 0;
      }
    }
    codes.put(kEndCode);
    codes.append_blocks(out);
  }
  out.push_back(0x3B);  // trailer

  std::ofstream file(path, std::ios::binary);
  require(file.good(), Errc::io_error, "cannot open gif for writing: " + path);
  file.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
  require(file.good(), Errc::io_error, "failed writing gif: " + path);
}

}  // namespace msnet
