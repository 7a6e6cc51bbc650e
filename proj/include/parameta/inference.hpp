#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "parameta/model.hpp"

namespace parameta {

struct TaskPrediction {
  std::size_t cls = 0;
  real score = 0.0;

  bool operator==(const TaskPrediction&) const = default;
};

// Nearest prototype by cosine; the lowest class index wins ties. Throws
// ValidationError if any prototype of the task is uninitialised.
TaskPrediction nearest_prototype(const PrototypeBank& bank, std::size_t task, std::span<const real> z);

// Concatenation of the per-task embeddings in schema order.
class StyleVector {
 public:
  StyleVector() = default;
  explicit StyleVector(std::vector<std::vector<real>> slices);
  static StyleVector from_concat(std::span<const real> flat, std::size_t tasks, std::size_t dim);

  std::size_t task_count() const { return slices_.size(); }
  std::span<const real> slice(std::size_t t) const { return slices_.at(t); }
  std::vector<real>& slice_mut(std::size_t t) { return slices_.at(t); }
  std::vector<real> concat() const;

  bool operator==(const StyleVector&) const = default;

 private:
  std::vector<std::vector<real>> slices_;
};

std::vector<StyleVector> extract_styles(const Model& model, std::span<const LabeledSample> samples);
StyleVector extract_style(const Model& model, const LabeledSample& sample);

std::vector<TaskPrediction> classify_style(const Model& model, const StyleVector& style);
std::vector<std::vector<TaskPrediction>> classify(const Model& model, std::span<const LabeledSample> samples);
std::vector<TaskPrediction> classify(const Model& model, const LabeledSample& sample);

struct ManipulationReport {
  std::string task;
  std::size_t source_class = 0;
  std::size_t target_class = 0;
  real orig_sim = 0.0;
  real manip_sim = 0.0;
  bool reclass_hit = false;
  bool other_tasks_stable = false;
};

struct Manipulation {
  StyleVector style;
  ManipulationReport report;
};

// Moves slice `task` toward the target prototype:
//   (1 - alpha) z + alpha p, rescaled to ||z||.
// Other slices are copied untouched; alpha = 0 returns the input unchanged.
Manipulation manipulate(const Model& model, const StyleVector& style, std::size_t task, std::size_t target_class,
                        real alpha = 1.0);
Manipulation manipulate(const Model& model, const LabeledSample& sample, std::size_t task, std::size_t target_class,
                        real alpha = 1.0);

// Per task: the caption embedding's nearest prototype, or empty when the
// caption does not name a class of that task.
std::vector<std::optional<TaskPrediction>> classify_caption(const Model& model, const std::string& caption);

// id, split, meta_0..meta_{D-1}, then <task>_0..<task>_{d-1} per task.
struct EmbeddingRow {
  std::string id;
  std::string split;
  std::vector<real> meta;
  StyleVector style;
};

std::vector<EmbeddingRow> embedding_rows(const Model& model, std::span<const LabeledSample> samples,
                                         const std::string& split);
void write_embedding_csv(const std::string& path, const TaskSchema& schema, std::span<const EmbeddingRow> rows);
std::vector<EmbeddingRow> read_embedding_csv(const std::string& path, const TaskSchema& schema);

// Aggregates over many manipulations: one row per task with mean orig_sim,
// mean manip_sim and the re-classification hit rate.
struct ManipulationSummary {
  std::string task;
  real orig_sim = 0.0;
  real manip_sim = 0.0;
  real accuracy = 0.0;
  real stability = 0.0;
  std::size_t count = 0;
};

std::vector<ManipulationSummary> summarize(const TaskSchema& schema, std::span<const ManipulationReport> reports);
void write_manipulation_csv(const std::string& path, std::span<const ManipulationSummary> rows);

}  // namespace parameta
