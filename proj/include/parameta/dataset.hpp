#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "parameta/matrix.hpp"
#include "parameta/schema.hpp"

namespace parameta {

struct LabeledSample {
  std::string id;
  // Speaker / group key used for subject-independent splits.
  std::string subject;
  // F feature bins x t frames.
  Matrix frames;
  LabelRow labels;
  std::optional<std::string> caption;

  bool operator==(const LabeledSample&) const = default;
};

struct Dataset {
  TaskSchema schema;
  std::vector<LabeledSample> samples;

  // Throws SchemaError / DimensionError on the first invalid sample.
  void validate() const;
  // Number of feature bins (F) shared by all samples; 0 when empty.
  std::size_t bins() const;
};

// One JSON object per line:
//   {"id", "subject", "frames": [[...t floats] x F], "labels": {task: class}, "caption"}
Dataset load_jsonl(const std::string& path, const TaskSchema& schema);
void write_jsonl(const Dataset& data, const std::string& path);

LabeledSample sample_from_json(const nlohmann::json& j, const TaskSchema& schema);
nlohmann::json sample_to_json(const LabeledSample& s, const TaskSchema& schema);

// Partitions by subject; no subject lands in both halves. The test half holds
// round(test_fraction * subjects) subjects, clamped to [1, subjects - 1].
std::pair<Dataset, Dataset> split_subject_independent(const Dataset& data, double test_fraction,
                                                      std::uint64_t seed);

}  // namespace parameta
