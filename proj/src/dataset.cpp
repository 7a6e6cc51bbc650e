#include "parameta/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <set>

#include "parameta/errors.hpp"

namespace parameta {

void Dataset::validate() const {
  const std::size_t f = bins();
  for (const auto& s : samples) {
    if (s.labels.size() != schema.task_count()) {
      throw SchemaError("sample '" + s.id + "' has " + std::to_string(s.labels.size()) +
                        " label slots, schema has " + std::to_string(schema.task_count()) + " tasks");
    }
    for (std::size_t t = 0; t < s.labels.size(); ++t) {
      if (s.labels[t] && *s.labels[t] >= schema.class_count(t)) {
        throw SchemaError("sample '" + s.id + "' label " + std::to_string(*s.labels[t]) + " out of range for task '" +
                          schema.task(t).name + "'");
      }
    }
    if (s.frames.rows() == 0 || s.frames.cols() == 0) {
      throw DimensionError("sample '" + s.id + "' has empty frames");
    }
    if (s.frames.rows() != f) {
      throw DimensionError("sample '" + s.id + "' has " + std::to_string(s.frames.rows()) +
                           " feature bins, expected " + std::to_string(f));
    }
  }
}

std::size_t Dataset::bins() const { return samples.empty() ? 0 : samples.front().frames.rows(); }

LabeledSample sample_from_json(const nlohmann::json& j, const TaskSchema& schema) {
  if (!j.is_object()) throw ParseError("record is not a JSON object");
  LabeledSample s;
  try {
    s.id = j.at("id").get<std::string>();
    s.subject = j.contains("subject") && !j["subject"].is_null() ? j["subject"].get<std::string>() : s.id;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("bad id/subject: ") + e.what());
  }

  const auto& fr = j.contains("frames") ? j["frames"] : nlohmann::json();
  if (!fr.is_array() || fr.empty()) throw ParseError("frames must be a non-empty array of rows");
  const std::size_t cols = fr.front().is_array() ? fr.front().size() : 0;
  if (cols == 0) throw ParseError("frames rows must be non-empty arrays");
  std::vector<real> values;
  values.reserve(fr.size() * cols);
  for (std::size_t r = 0; r < fr.size(); ++r) {
    const auto& row = fr[r];
    if (!row.is_array() || row.size() != cols) {
      throw ParseError("frames row " + std::to_string(r) + " has the wrong length");
    }
    for (const auto& v : row) {
      if (!v.is_number()) throw ParseError("frames row " + std::to_string(r) + " holds a non-numeric value");
      values.push_back(v.get<real>());
      if (!std::isfinite(values.back())) throw ParseError("frames row " + std::to_string(r) + " is not finite");
    }
  }
  s.frames = Matrix(fr.size(), cols, std::move(values));

  s.labels.assign(schema.task_count(), std::nullopt);
  if (j.contains("labels") && !j["labels"].is_null()) {
    const auto& lab = j["labels"];
    if (!lab.is_object()) throw ParseError("labels must be an object");
    for (const auto& [task, cls] : lab.items()) {
      const std::size_t t = schema.task_index(task);
      if (cls.is_null()) continue;
      if (!cls.is_string()) throw ParseError("label for task '" + task + "' must be a string");
      s.labels[t] = schema.class_index(t, cls.get<std::string>());
    }
  }
  if (j.contains("caption") && !j["caption"].is_null()) {
    if (!j["caption"].is_string()) throw ParseError("caption must be a string or null");
    s.caption = j["caption"].get<std::string>();
  }
  return s;
}

nlohmann::json sample_to_json(const LabeledSample& s, const TaskSchema& schema) {
  nlohmann::json frames = nlohmann::json::array();
  for (std::size_t r = 0; r < s.frames.rows(); ++r) {
    auto row = s.frames.row(r);
    frames.push_back(std::vector<real>(row.begin(), row.end()));
  }
  nlohmann::json labels = nlohmann::json::object();
  for (std::size_t t = 0; t < s.labels.size(); ++t)
    if (s.labels[t]) labels[schema.task(t).name] = schema.task(t).classes.at(*s.labels[t]);
  nlohmann::json out = {{"id", s.id}, {"subject", s.subject}, {"frames", frames}, {"labels", labels}};
  out["caption"] = s.caption ? nlohmann::json(*s.caption) : nlohmann::json(nullptr);
  return out;
}

Dataset load_jsonl(const std::string& path, const TaskSchema& schema) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open data file '" + path + "'");
  Dataset data{schema, {}};
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = path + ":" + std::to_string(line_no) + ": ";
    try {
      data.samples.push_back(sample_from_json(nlohmann::json::parse(line), schema));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(where + e.what());
    } catch (const SchemaError& e) {
      throw SchemaError(where + e.what());
    } catch (const ParseError& e) {
      throw ParseError(where + e.what());
    }
  }
  try {
    data.validate();
  } catch (const DimensionError& e) {
    throw ParseError(path + ": " + e.what());
  }
  return data;
}

void write_jsonl(const Dataset& data, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path + "'");
  for (const auto& s : data.samples) out << sample_to_json(s, data.schema).dump() << '\n';
  if (!out) throw IoError("write to '" + path + "' failed");
}

std::pair<Dataset, Dataset> split_subject_independent(const Dataset& data, double test_fraction,
                                                      std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
    throw SplitError("test fraction must lie strictly between 0 and 1");
  }
  std::vector<std::string> subjects;
  std::set<std::string> seen;
  for (const auto& s : data.samples)
    if (seen.insert(s.subject).second) subjects.push_back(s.subject);
  if (subjects.size() < 2) {
    throw SplitError("subject-independent split needs at least 2 distinct subjects, found " +
                     std::to_string(subjects.size()));
  }
  std::sort(subjects.begin(), subjects.end());
  std::mt19937_64 rng(seed);
  std::shuffle(subjects.begin(), subjects.end(), rng);

  const auto n = static_cast<long>(subjects.size());
  const long n_test = std::clamp(std::lround(test_fraction * static_cast<double>(n)), 1L, n - 1);
  const std::set<std::string> test_subjects(subjects.begin(), subjects.begin() + n_test);

  Dataset train{data.schema, {}};
  Dataset test{data.schema, {}};
  for (const auto& s : data.samples) (test_subjects.count(s.subject) ? test : train).samples.push_back(s);
  return {std::move(train), std::move(test)};
}

}  // namespace parameta
