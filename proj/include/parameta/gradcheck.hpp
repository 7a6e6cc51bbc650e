#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "parameta/model.hpp"

namespace parameta {

struct GradCheckOptions {
  std::size_t batches = 5;
  std::size_t batch_size = 6;   // B
  std::size_t dim_meta = 16;    // D
  std::size_t dim_task = 8;     // d
  std::size_t hidden = 8;
  std::size_t dim_text = 8;
  std::size_t bins = 6;
  std::size_t frames = 4;
  Backbone backbone = Backbone::frame_mlp;
  double step = 1e-5;
  // Denominator floor of the relative error, see relative_error().
  double floor = 1e-8;
};

struct GradCheckResult {
  std::string component;
  double max_relative_error = 0.0;
  std::size_t checked = 0;
};

// |a - n| / max(|a|, |n|, floor)
double relative_error(double analytic, double numeric, double floor);

// Central differences against backward() for meta, scl (both denominator
// modes), pal_speech, pal_text and the total objective, on seeded random
// batches over a 3-task schema with missing labels and captions.
std::vector<GradCheckResult> gradient_check(std::uint64_t seed, const GradCheckOptions& opts = {});

}  // namespace parameta
