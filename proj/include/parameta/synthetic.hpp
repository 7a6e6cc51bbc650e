#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "parameta/dataset.hpp"

namespace parameta {

struct SyntheticOptions {
  std::size_t samples = 1000;
  std::size_t bins = 32;    // F
  std::size_t frames = 8;   // t
  double noise_sigma = 0.25;
  std::size_t subjects = 40;
  std::uint64_t seed = 0;
};

// templates[t][c] is the F x t pattern added for class c of task t. Each is
// a random spectral envelope modulated by a random per-frame gain, scaled to
// unit Frobenius norm. When F is at least the total class count the envelopes
// are orthogonalised (Gram-Schmidt in task, class order).
using TemplateBank = std::vector<std::vector<Matrix>>;

TemplateBank make_templates(const TaskSchema& schema, std::size_t bins, std::size_t frames, std::uint64_t seed);

// "a <class_1> ... <class_T> voice", missing tasks skipped.
std::string render_caption(const TaskSchema& schema, const LabelRow& labels);

// Each subject owns one class combination (drawn uniformly per task); each
// sample picks a subject uniformly, so labels are marginally uniform. Frames
// are the sum of the subject's class templates plus N(0, sigma^2) noise.
Dataset generate_synthetic(const TaskSchema& schema, const SyntheticOptions& opts);

}  // namespace parameta
