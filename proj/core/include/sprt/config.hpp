// Copyright Contributors to the sprt project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>

#include "sprt/pipeline.hpp"
#include "sprt/prior.hpp"
#include "sprt/splatter.hpp"
#include "sprt/synthgen.hpp"

namespace sprt {

/// The full run configuration tree (TOML on disk). Unknown keys are rejected
/// so typos fail loudly.
struct RunConfig {
  prior::PriorConfig model;
  pipeline::TrainConfig train;
  pipeline::InversionConfig inversion;
  synthgen::ToySpec dataset;
  splatter::RenderSettings renderer;
  int threads = 1;

  static RunConfig from_file(const std::string& path);
  static RunConfig from_text(const std::string& text);
  static RunConfig defaults() { return {}; }

  /// Push the renderer constants into the process-wide settings.
  void apply_renderer() const { splatter::render_settings() = renderer; }
};

}  // namespace sprt
