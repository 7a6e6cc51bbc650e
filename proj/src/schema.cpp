#include "parameta/schema.hpp"

#include <fstream>
#include <set>

#include "parameta/errors.hpp"

namespace parameta {

TaskSchema::TaskSchema(std::vector<Task> tasks) : tasks_(std::move(tasks)) {
  if (tasks_.empty()) throw SchemaError("schema must define at least one task");
  std::set<std::string> names;
  for (const Task& t : tasks_) {
    if (t.name.empty()) throw SchemaError("task name must be non-empty");
    if (!names.insert(t.name).second) throw SchemaError("duplicate task name '" + t.name + "'");
    if (t.classes.size() < 2) {
      throw SchemaError("task '" + t.name + "' needs at least 2 classes, has " +
                        std::to_string(t.classes.size()));
    }
    std::set<std::string> cls;
    for (const auto& c : t.classes) {
      if (c.empty()) throw SchemaError("task '" + t.name + "' has an empty class name");
      if (!cls.insert(c).second) throw SchemaError("duplicate class '" + c + "' in task '" + t.name + "'");
    }
  }
}

std::optional<std::size_t> TaskSchema::find_task(const std::string& name) const {
  for (std::size_t t = 0; t < tasks_.size(); ++t)
    if (tasks_[t].name == name) return t;
  return std::nullopt;
}

std::optional<std::size_t> TaskSchema::find_class(std::size_t task, const std::string& name) const {
  const auto& cls = tasks_.at(task).classes;
  for (std::size_t c = 0; c < cls.size(); ++c)
    if (cls[c] == name) return c;
  return std::nullopt;
}

std::size_t TaskSchema::task_index(const std::string& name) const {
  if (auto t = find_task(name)) return *t;
  throw SchemaError("unknown task '" + name + "'");
}

std::size_t TaskSchema::class_index(std::size_t task, const std::string& name) const {
  if (auto c = find_class(task, name)) return *c;
  throw SchemaError("unknown class '" + name + "' for task '" + tasks_.at(task).name + "'");
}

nlohmann::json TaskSchema::to_json() const {
  nlohmann::json tasks = nlohmann::json::array();
  for (const Task& t : tasks_) tasks.push_back({{"name", t.name}, {"classes", t.classes}});
  return {{"tasks", tasks}};
}

TaskSchema TaskSchema::from_json(const nlohmann::json& j) {
  try {
    std::vector<Task> tasks;
    for (const auto& t : j.at("tasks")) {
      tasks.push_back({t.at("name").get<std::string>(), t.at("classes").get<std::vector<std::string>>()});
    }
    return TaskSchema(std::move(tasks));
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("malformed schema: ") + e.what());
  }
}

TaskSchema TaskSchema::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open schema file '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("schema file '" + path + "' is not valid JSON: " + e.what());
  }
  return from_json(j);
}

}  // namespace parameta
