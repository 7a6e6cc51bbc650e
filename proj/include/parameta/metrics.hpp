#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "json.hpp"
#include "parameta/model.hpp"

namespace parameta {

// Rows are true classes, columns predictions.
class ConfusionMatrix {
 public:
  ConfusionMatrix() = default;
  explicit ConfusionMatrix(std::size_t classes);
  static ConfusionMatrix from_counts(std::vector<std::vector<std::uint64_t>> counts);

  std::size_t classes() const { return counts_.size(); }
  void add(std::size_t truth, std::size_t predicted, std::uint64_t n = 1);
  std::uint64_t operator()(std::size_t truth, std::size_t predicted) const { return counts_.at(truth).at(predicted); }
  std::uint64_t total() const;
  std::uint64_t support(std::size_t c) const;
  const std::vector<std::vector<std::uint64_t>>& counts() const { return counts_; }

  ConfusionMatrix& operator+=(const ConfusionMatrix& other);
  bool operator==(const ConfusionMatrix&) const = default;

 private:
  std::vector<std::vector<std::uint64_t>> counts_;
};

// Classes with no true samples are left out of the class mean. All three
// throw ValidationError on an empty or all-zero matrix.
real balanced_accuracy(const ConfusionMatrix& cm);
real macro_f1(const ConfusionMatrix& cm);
real weighted_f1(const ConfusionMatrix& cm);

struct TaskMetrics {
  real balanced_accuracy = 0.0;
  real macro_f1 = 0.0;
  real weighted_f1 = 0.0;
  ConfusionMatrix confusion;
};

// Per task in schema order. Samples missing a task's label are skipped for
// that task. Throws ValidationError on an empty test set.
std::vector<TaskMetrics> evaluate(const Model& model, std::span<const LabeledSample> test);

// {task: {balanced_accuracy, macro_f1, weighted_f1, confusion}, runs, mean, std, per_run}
// Top-level task entries hold the run means and the pooled confusion matrix;
// std is the sample standard deviation (0 for one run).
nlohmann::json metrics_report(const TaskSchema& schema, std::span<const std::vector<TaskMetrics>> runs);

}  // namespace parameta
