// Copyright Contributors to the sprt project
// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cstdio>
#include <fstream>

#include "sprt/image.hpp"
#include "sprt/rng.hpp"

using namespace sprt;

namespace {
std::vector<uint8_t> file_bytes(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}
}  // namespace

TEST_CASE("png round-trips pixels exactly") {
  Rng rng(42);
  Image8 img(37, 23, 3);
  for (auto& p : img.pixels) p = static_cast<uint8_t>(rng.uniform_int(256));
  const std::string path = "/tmp/sprt_test_rt.png";
  write_png(path, img);
  Image8 back = read_png(path);
  CHECK(back.width == img.width);
  CHECK(back.height == img.height);
  CHECK(back.channels == 3);
  CHECK(back.pixels == img.pixels);
  std::remove(path.c_str());
}

TEST_CASE("png encoder is deterministic") {
  Image8 img(16, 16, 1);
  for (int i = 0; i < 16 * 16; ++i) img.pixels[static_cast<size_t>(i)] = static_cast<uint8_t>(i);
  write_png("/tmp/sprt_det_a.png", img);
  write_png("/tmp/sprt_det_b.png", img);
  CHECK(file_bytes("/tmp/sprt_det_a.png") == file_bytes("/tmp/sprt_det_b.png"));
  std::remove("/tmp/sprt_det_a.png");
  std::remove("/tmp/sprt_det_b.png");
}

TEST_CASE("tensor <-> image quantization") {
  Tensor t({3, 2, 2});
  t.at(0, 0, 0) = -0.5;  // clamps to 0
  t.at(1, 0, 0) = 0.5;
  t.at(2, 0, 0) = 2.0;  // clamps to 1
  Image8 img = to_image8(t);
  CHECK(img.at(0, 0, 0) == 0);
  CHECK(img.at(0, 0, 1) == 128);
  CHECK(img.at(0, 0, 2) == 255);
  Tensor back = to_tensor(img);
  CHECK(back.at(0, 0, 0) == 0.0);
  CHECK(back.at(2, 0, 0) == 1.0);
}

TEST_CASE("srgb curve endpoints and monotonicity") {
  CHECK(linear_to_srgb(0.0) == 0.0);
  CHECK(linear_to_srgb(1.0) == doctest::Approx(1.0));
  real prev = -1;
  for (int i = 0; i <= 20; ++i) {
    const real v = linear_to_srgb(i / 20.0);
    CHECK(v > prev);
    prev = v;
  }
}

TEST_CASE("read_png rejects garbage") {
  const std::string path = "/tmp/sprt_not_png.png";
  std::ofstream(path) << "definitely not a png";
  CHECK_THROWS_AS(read_png(path), data_error);
  std::remove(path.c_str());
}
