#pragma once

#include <string>
#include <vector>

#include "json.hpp"
#include "parameta/caption.hpp"
#include "parameta/config.hpp"
#include "parameta/dataset.hpp"
#include "parameta/encoder.hpp"
#include "parameta/projection.hpp"
#include "parameta/prototypes.hpp"

namespace parameta {

// Everything needed for inference: encoder, task heads, caption encoder and
// the prototype bank, bound to one schema.
struct Model {
  TaskSchema schema;
  TrainConfig config;
  Encoder encoder;
  ProjectionHeads heads;
  CaptionEncoder caption;
  PrototypeBank bank;

  // Seeded from config.seed; init order encoder, heads, caption, bank.
  static Model create(const TaskSchema& schema, const TrainConfig& config, std::size_t bins);

  // Trainable parameters in a fixed order (encoder, heads, caption).
  std::vector<diff::Parameter*> parameters();
  std::vector<const diff::Parameter*> parameters() const;

  nlohmann::json to_json() const;
  static Model from_json(const nlohmann::json& j);
};

// Forward pass without gradients.
struct Embeddings {
  Matrix meta;                 // B x D
  std::vector<Matrix> tasks;   // T of B x d
};

Embeddings embed(const Model& model, const FrameBatch& batch);
Embeddings embed(const Model& model, std::span<const LabeledSample> samples);

}  // namespace parameta
