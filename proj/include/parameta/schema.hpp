#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

namespace parameta {

// Class index for one task; empty when the sample is not labelled for it.
using ClassLabel = std::optional<std::size_t>;
// One label slot per task, in schema order.
using LabelRow = std::vector<ClassLabel>;

struct Task {
  std::string name;
  std::vector<std::string> classes;

  bool operator==(const Task&) const = default;
};

// Ordered task list with per-task class vocabularies. The only place label
// indices are defined.
class TaskSchema {
 public:
  TaskSchema() = default;
  // Throws SchemaError unless names are unique, T >= 1 and every C_t >= 2.
  explicit TaskSchema(std::vector<Task> tasks);

  std::size_t task_count() const { return tasks_.size(); }
  std::size_t class_count(std::size_t task) const { return tasks_.at(task).classes.size(); }
  const Task& task(std::size_t t) const { return tasks_.at(t); }
  const std::vector<Task>& tasks() const { return tasks_; }

  std::optional<std::size_t> find_task(const std::string& name) const;
  std::optional<std::size_t> find_class(std::size_t task, const std::string& name) const;
  // Same lookups, throwing SchemaError naming the missing entry.
  std::size_t task_index(const std::string& name) const;
  std::size_t class_index(std::size_t task, const std::string& name) const;

  nlohmann::json to_json() const;
  static TaskSchema from_json(const nlohmann::json& j);
  static TaskSchema load(const std::string& path);

  bool operator==(const TaskSchema&) const = default;

 private:
  std::vector<Task> tasks_;
};

}  // namespace parameta
