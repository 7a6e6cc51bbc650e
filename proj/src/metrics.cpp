#include "parameta/metrics.hpp"

#include <array>
#include <cmath>

#include "parameta/errors.hpp"
#include "parameta/inference.hpp"

namespace parameta {

ConfusionMatrix::ConfusionMatrix(std::size_t classes)
    : counts_(classes, std::vector<std::uint64_t>(classes, 0)) {}

ConfusionMatrix ConfusionMatrix::from_counts(std::vector<std::vector<std::uint64_t>> counts) {
  for (const auto& row : counts) {
    if (row.size() != counts.size()) throw DimensionError("confusion matrix must be square");
  }
  ConfusionMatrix cm;
  cm.counts_ = std::move(counts);
  return cm;
}

void ConfusionMatrix::add(std::size_t truth, std::size_t predicted, std::uint64_t n) {
  if (truth >= classes() || predicted >= classes()) throw DimensionError("confusion matrix index out of range");
  counts_[truth][predicted] += n;
}

std::uint64_t ConfusionMatrix::total() const {
  std::uint64_t n = 0;
  for (const auto& row : counts_)
    for (auto v : row) n += v;
  return n;
}

std::uint64_t ConfusionMatrix::support(std::size_t c) const {
  std::uint64_t n = 0;
  for (auto v : counts_.at(c)) n += v;
  return n;
}

ConfusionMatrix& ConfusionMatrix::operator+=(const ConfusionMatrix& other) {
  if (other.classes() != classes()) throw DimensionError("confusion matrices differ in size");
  for (std::size_t i = 0; i < classes(); ++i)
    for (std::size_t j = 0; j < classes(); ++j) counts_[i][j] += other.counts_[i][j];
  return *this;
}

namespace {

void require_counts(const ConfusionMatrix& cm) {
  if (cm.classes() == 0) throw ValidationError("empty confusion matrix");
  if (cm.total() == 0) throw ValidationError("confusion matrix has no samples");
}

real f1(const ConfusionMatrix& cm, std::size_t c) {
  const real tp = static_cast<real>(cm(c, c));
  real predicted = 0.0;
  for (std::size_t i = 0; i < cm.classes(); ++i) predicted += static_cast<real>(cm(i, c));
  const real support = static_cast<real>(cm.support(c));
  const real p = predicted > 0.0 ? tp / predicted : 0.0;
  const real r = support > 0.0 ? tp / support : 0.0;
  return p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0;
}

}  // namespace

real balanced_accuracy(const ConfusionMatrix& cm) {
  require_counts(cm);
  real sum = 0.0;
  std::size_t n = 0;
  for (std::size_t c = 0; c < cm.classes(); ++c) {
    const auto s = cm.support(c);
    if (s == 0) continue;
    sum += static_cast<real>(cm(c, c)) / static_cast<real>(s);
    ++n;
  }
  return sum / static_cast<real>(n);
}

real macro_f1(const ConfusionMatrix& cm) {
  require_counts(cm);
  real sum = 0.0;
  std::size_t n = 0;
  for (std::size_t c = 0; c < cm.classes(); ++c) {
    if (cm.support(c) == 0) continue;
    sum += f1(cm, c);
    ++n;
  }
  return sum / static_cast<real>(n);
}

real weighted_f1(const ConfusionMatrix& cm) {
  require_counts(cm);
  real sum = 0.0;
  for (std::size_t c = 0; c < cm.classes(); ++c) sum += static_cast<real>(cm.support(c)) * f1(cm, c);
  return sum / static_cast<real>(cm.total());
}

std::vector<TaskMetrics> evaluate(const Model& model, std::span<const LabeledSample> test) {
  if (test.empty()) throw ValidationError("evaluation needs a non-empty test set");
  const auto predictions = classify(model, test);
  std::vector<TaskMetrics> out;
  for (std::size_t t = 0; t < model.schema.task_count(); ++t) {
    TaskMetrics m;
    m.confusion = ConfusionMatrix(model.schema.class_count(t));
    for (std::size_t i = 0; i < test.size(); ++i) {
      if (const auto& y = test[i].labels.at(t)) m.confusion.add(*y, predictions[i][t].cls);
    }
    if (m.confusion.total() == 0) {
      throw ValidationError("no test sample is labelled for task '" + model.schema.task(t).name + "'");
    }
    m.balanced_accuracy = balanced_accuracy(m.confusion);
    m.macro_f1 = macro_f1(m.confusion);
    m.weighted_f1 = weighted_f1(m.confusion);
    out.push_back(std::move(m));
  }
  return out;
}

nlohmann::json metrics_report(const TaskSchema& schema, std::span<const std::vector<TaskMetrics>> runs) {
  if (runs.empty()) throw ValidationError("metrics report needs at least one run");
  static const char* names[] = {"balanced_accuracy", "macro_f1", "weighted_f1"};
  auto values = [](const TaskMetrics& m) { return std::array<real, 3>{m.balanced_accuracy, m.macro_f1, m.weighted_f1}; };

  nlohmann::json report = nlohmann::json::object();
  nlohmann::json mean = nlohmann::json::object();
  nlohmann::json stdev = nlohmann::json::object();
  const real k = static_cast<real>(runs.size());
  for (std::size_t t = 0; t < schema.task_count(); ++t) {
    std::array<real, 3> mu{}, var{};
    ConfusionMatrix pooled(schema.class_count(t));
    for (const auto& run : runs) {
      const auto v = values(run.at(t));
      for (int q = 0; q < 3; ++q) mu[q] += v[q] / k;
      pooled += run.at(t).confusion;
    }
    for (const auto& run : runs) {
      const auto v = values(run.at(t));
      for (int q = 0; q < 3; ++q) var[q] += (v[q] - mu[q]) * (v[q] - mu[q]);
    }
    nlohmann::json entry, m, s;
    for (int q = 0; q < 3; ++q) {
      const real sd = runs.size() > 1 ? std::sqrt(var[q] / (k - 1.0)) : 0.0;
      entry[names[q]] = mu[q];
      m[names[q]] = mu[q];
      s[names[q]] = sd;
    }
    entry["confusion"] = pooled.counts();
    const std::string& name = schema.task(t).name;
    report[name] = entry;
    mean[name] = m;
    stdev[name] = s;
  }
  nlohmann::json per_run = nlohmann::json::array();
  for (const auto& run : runs) {
    nlohmann::json r = nlohmann::json::object();
    for (std::size_t t = 0; t < schema.task_count(); ++t) {
      const auto v = values(run.at(t));
      r[schema.task(t).name] = {{names[0], v[0]},
                                {names[1], v[1]},
                                {names[2], v[2]},
                                {"confusion", run.at(t).confusion.counts()}};
    }
    per_run.push_back(r);
  }
  report["runs"] = runs.size();
  report["mean"] = mean;
  report["std"] = stdev;
  report["per_run"] = per_run;
  return report;
}

}  // namespace parameta
