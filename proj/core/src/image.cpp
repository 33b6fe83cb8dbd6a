// Copyright Contributors to the sprt project
// SPDX-License-Identifier: Apache-2.0
#include "sprt/image.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <fstream>

namespace sprt {

Image8 to_image8(const Tensor& chw) {
  require(chw.rank() == 3, "to_image8: expected [C,H,W]");
  const int c = static_cast<int>(chw.dim(0));
  const int h = static_cast<int>(chw.dim(1));
  const int w = static_cast<int>(chw.dim(2));
  require(c == 1 || c == 3, "to_image8: 1 or 3 channels");
  Image8 img(w, h, c);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int k = 0; k < c; ++k) {
        real v = chw.at(k, y, x);
        v = std::clamp(v, 0.0, 1.0);
        img.at(x, y, k) = static_cast<uint8_t>(std::lround(v * 255.0));
      }
  return img;
}

Tensor to_tensor(const Image8& img) {
  Tensor t({img.channels, img.height, img.width});
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int k = 0; k < img.channels; ++k)
        t.at(k, y, x) = img.at(x, y, k) / 255.0;
  return t;
}

real linear_to_srgb(real x) {
  x = std::clamp(x, 0.0, 1.0);
  return x <= 0.0031308 ? 12.92 * x : 1.055 * std::pow(x, 1.0 / 2.4) - 0.055;
}

namespace {

void append_u32_be(std::vector<uint8_t>& out, uint32_t v) {
  out.push_back(static_cast<uint8_t>(v >> 24));
  out.push_back(static_cast<uint8_t>(v >> 16));
  out.push_back(static_cast<uint8_t>(v >> 8));
  out.push_back(static_cast<uint8_t>(v));
}

void append_chunk(std::vector<uint8_t>& out, const char type[4],
                  const std::vector<uint8_t>& payload) {
  append_u32_be(out, static_cast<uint32_t>(payload.size()));
  size_t crc_start = out.size();
  out.insert(out.end(), type, type + 4);
  out.insert(out.end(), payload.begin(), payload.end());
  uint32_t crc = static_cast<uint32_t>(
      crc32(0, out.data() + crc_start, static_cast<uInt>(out.size() - crc_start)));
  append_u32_be(out, crc);
}

constexpr uint8_t kPngSignature[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};

}  // namespace

void write_png(const std::string& path, const Image8& img) {
  require(img.channels == 1 || img.channels == 3, "write_png: 1 or 3 channels");
  require(img.width > 0 && img.height > 0, "write_png: empty image");

  std::vector<uint8_t> out(kPngSignature, kPngSignature + 8);

  std::vector<uint8_t> ihdr;
  append_u32_be(ihdr, static_cast<uint32_t>(img.width));
  append_u32_be(ihdr, static_cast<uint32_t>(img.height));
  ihdr.push_back(8);                                   // bit depth
  ihdr.push_back(img.channels == 3 ? 2 : 0);           // color type
  ihdr.push_back(0);
  ihdr.push_back(0);
  ihdr.push_back(0);
  append_chunk(out, "IHDR", ihdr);

  // Filter type 0 on every scanline; zlib does the heavy lifting.
  const size_t stride = static_cast<size_t>(img.width) * img.channels;
  std::vector<uint8_t> raw;
  raw.reserve((stride + 1) * img.height);
  for (int y = 0; y < img.height; ++y) {
    raw.push_back(0);
    const uint8_t* row = img.pixels.data() + static_cast<size_t>(y) * stride;
    raw.insert(raw.end(), row, row + stride);
  }

  uLongf comp_size = compressBound(static_cast<uLong>(raw.size()));
  std::vector<uint8_t> comp(comp_size);
  if (compress2(comp.data(), &comp_size, raw.data(), static_cast<uLong>(raw.size()), 6) != Z_OK)
    throw data_error("write_png: zlib compress failed");
  comp.resize(comp_size);
  append_chunk(out, "IDAT", comp);
  append_chunk(out, "IEND", {});

  std::ofstream f(path, std::ios::binary);
  if (!f) throw data_error("write_png: cannot open '" + path + "'");
  f.write(reinterpret_cast<const char*>(out.data()), static_cast<long>(out.size()));
  if (!f) throw data_error("write_png: write failed for '" + path + "'");
}

namespace {

uint32_t read_u32_be(const uint8_t* p) {
  return (static_cast<uint32_t>(p[0]) << 24) | (static_cast<uint32_t>(p[1]) << 16) |
         (static_cast<uint32_t>(p[2]) << 8) | static_cast<uint32_t>(p[3]);
}

int paeth(int a, int b, int c) {
  int p = a + b - c;
  int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
  if (pa <= pb && pa <= pc) return a;
  if (pb <= pc) return b;
  return c;
}

}  // namespace

Image8 read_png(const std::string& path) {
  std::ifstream f(path, std::ios::binary | std::ios::ate);
  if (!f) throw data_error("read_png: cannot open '" + path + "'");
  auto size = static_cast<size_t>(f.tellg());
  f.seekg(0);
  std::vector<uint8_t> buf(size);
  f.read(reinterpret_cast<char*>(buf.data()), static_cast<long>(size));
  if (!f || size < 8 || std::memcmp(buf.data(), kPngSignature, 8) != 0)
    throw data_error("read_png: not a PNG file: '" + path + "'");

  int width = 0, height = 0, channels = 0, bit_depth = 0;
  std::vector<uint8_t> idat;
  size_t pos = 8;
  while (pos + 8 <= size) {
    uint32_t len = read_u32_be(buf.data() + pos);
    if (pos + 12 + len > size) throw data_error("read_png: truncated chunk");
    std::string type(reinterpret_cast<char*>(buf.data() + pos + 4), 4);
    const uint8_t* payload = buf.data() + pos + 8;
    if (type == "IHDR") {
      width = static_cast<int>(read_u32_be(payload));
      height = static_cast<int>(read_u32_be(payload + 4));
      bit_depth = payload[8];
      int color_type = payload[9];
      if (bit_depth != 8) throw data_error("read_png: only 8-bit supported");
      if (color_type == 0) channels = 1;
      else if (color_type == 2) channels = 3;
      else if (color_type == 6) channels = 4;
      else throw data_error("read_png: unsupported color type");
      if (payload[12] != 0) throw data_error("read_png: interlaced PNG not supported");
    } else if (type == "IDAT") {
      idat.insert(idat.end(), payload, payload + len);
    } else if (type == "IEND") {
      break;
    }
    pos += 12 + len;
  }
  if (width <= 0 || height <= 0) throw data_error("read_png: missing IHDR");

  const size_t stride = static_cast<size_t>(width) * channels;
  std::vector<uint8_t> raw((stride + 1) * height);
  uLongf raw_size = static_cast<uLongf>(raw.size());
  int zrc = uncompress(raw.data(), &raw_size, idat.data(), static_cast<uLong>(idat.size()));
  if (zrc != Z_OK || raw_size != raw.size()) throw data_error("read_png: zlib inflate failed");

  Image8 img(width, height, channels == 4 ? 3 : channels);
  std::vector<uint8_t> prev(stride, 0), cur(stride, 0);
  const int bpp = channels;
  for (int y = 0; y < height; ++y) {
    const uint8_t* line = raw.data() + static_cast<size_t>(y) * (stride + 1);
    uint8_t filter = line[0];
    for (size_t i = 0; i < stride; ++i) {
      int x = line[1 + i];
      int a = i >= static_cast<size_t>(bpp) ? cur[i - bpp] : 0;
      int b = prev[i];
      int c = i >= static_cast<size_t>(bpp) ? prev[i - bpp] : 0;
      switch (filter) {
        case 0: break;
        case 1: x += a; break;
        case 2: x += b; break;
        case 3: x += (a + b) / 2; break;
        case 4: x += paeth(a, b, c); break;
        default: throw data_error("read_png: bad filter type");
      }
      cur[i] = static_cast<uint8_t>(x & 0xff);
    }
    // Drop alpha if present.
    for (int xp = 0; xp < width; ++xp)
      for (int k = 0; k < img.channels; ++k)
        img.at(xp, y, k) = cur[static_cast<size_t>(xp) * channels + k];
    std::swap(prev, cur);
  }
  return img;
}

}  // namespace sprt
