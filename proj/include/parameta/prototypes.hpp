#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "parameta/matrix.hpp"
#include "parameta/schema.hpp"

namespace parameta {

// Per-class optional centroid; empty when the class has no member in the batch.
using Centroids = std::vector<std::optional<std::vector<real>>>;

Centroids batch_centroids(const Matrix& embeddings, std::span<const ClassLabel> labels, std::size_t classes);

// Per-task class anchors tracked by exponential moving average. Anchors never
// receive loss gradients; ema_update is their only writer.
class PrototypeBank {
 public:
  static constexpr int kVersion = 1;

  PrototypeBank() = default;
  // Seeded uniform init in +-0.1, nothing marked initialised.
  PrototypeBank(const TaskSchema& schema, std::size_t dim, double momentum, std::mt19937_64& rng);

  const TaskSchema& schema() const { return schema_; }
  double momentum() const { return momentum_; }
  std::size_t dim() const { return prototypes_.empty() ? 0 : prototypes_.front().cols(); }

  const Matrix& prototypes(std::size_t task) const { return prototypes_.at(task); }
  std::span<const real> prototype(std::size_t task, std::size_t cls) const { return prototypes_.at(task).row(cls); }
  bool initialized(std::size_t task, std::size_t cls) const { return initialized_.at(task).at(cls); }
  const std::vector<bool>& initialized_mask(std::size_t task) const { return initialized_.at(task); }

  // p <- m p + (1 - m) z for every class with a centroid; absent classes untouched.
  void ema_update(std::size_t task, const Centroids& centroids);

  // Direct overwrite; used by tests and tools that seed a bank.
  void set_prototype(std::size_t task, std::size_t cls, std::span<const real> value, bool initialized = true);

  nlohmann::json to_json() const;
  // Throws VersionError on a different version field, SchemaError when the
  // stored schema differs from `expected` (if given).
  static PrototypeBank from_json(const nlohmann::json& j, const TaskSchema* expected = nullptr);

  bool operator==(const PrototypeBank&) const = default;

 private:
  TaskSchema schema_;
  double momentum_ = 0.99;
  std::vector<Matrix> prototypes_;
  std::vector<std::vector<bool>> initialized_;
};

void save_bank(const PrototypeBank& bank, const std::string& path);
PrototypeBank load_bank(const std::string& path, const TaskSchema& expected);

}  // namespace parameta
