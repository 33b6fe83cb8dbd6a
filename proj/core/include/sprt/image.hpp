// Copyright Contributors to the sprt project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sprt/tensor.hpp"

namespace sprt {

/// 8-bit interleaved image, 1 (gray) or 3 (rgb) channels.
struct Image8 {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<uint8_t> pixels;  // row-major, interleaved

  Image8() = default;
  Image8(int w, int h, int c) : width(w), height(h), channels(c) {
    pixels.assign(static_cast<size_t>(w) * h * c, 0);
  }

  uint8_t& at(int x, int y, int c) {
    return pixels[(static_cast<size_t>(y) * width + x) * channels + c];
  }
  uint8_t at(int x, int y, int c) const {
    return pixels[(static_cast<size_t>(y) * width + x) * channels + c];
  }
};

/// Quantize a [3,H,W] (or [1,H,W]) tensor in [0,1] to 8 bits.
Image8 to_image8(const Tensor& chw);

/// Widen an 8-bit image back to a [C,H,W] tensor in [0,1].
Tensor to_tensor(const Image8& img);

real linear_to_srgb(real x);

// PNG (8-bit gray or RGB, zlib-compressed). The encoder always emits the
// same bytes for the same pixels, which the dataset determinism tests rely on.
void write_png(const std::string& path, const Image8& img);
Image8 read_png(const std::string& path);

}  // namespace sprt
