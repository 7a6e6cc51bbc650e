#include "parameta/model.hpp"

#include <random>

#include "parameta/errors.hpp"

namespace parameta {

Model Model::create(const TaskSchema& schema, const TrainConfig& config, std::size_t bins) {
  config.validate();
  std::mt19937_64 rng(config.seed);
  Model m;
  m.schema = schema;
  m.config = config;
  m.encoder = Encoder(EncoderConfig{config.backbone, bins, config.hidden, config.dim_meta}, rng);
  m.heads = ProjectionHeads(schema.task_count(), config.dim_meta, config.dim_task, rng);
  m.caption = CaptionEncoder(schema, config.dim_text, config.dim_task, rng);
  m.bank = PrototypeBank(schema, config.dim_task, config.momentum, rng);
  return m;
}

std::vector<diff::Parameter*> Model::parameters() {
  std::vector<diff::Parameter*> out = encoder.parameters();
  for (auto* p : heads.parameters()) out.push_back(p);
  for (auto* p : caption.parameters()) out.push_back(p);
  return out;
}

std::vector<const diff::Parameter*> Model::parameters() const {
  std::vector<const diff::Parameter*> out = encoder.parameters();
  for (auto* p : heads.parameters()) out.push_back(p);
  for (auto* p : caption.parameters()) out.push_back(p);
  return out;
}

nlohmann::json Model::to_json() const {
  return {{"schema", schema.to_json()},
          {"config", config.to_json()},
          {"encoder", encoder.to_json()},
          {"heads", heads.to_json()},
          {"caption_encoder", caption.to_json()},
          {"prototypes", bank.to_json()}};
}

Model Model::from_json(const nlohmann::json& j) {
  try {
    Model m;
    m.schema = TaskSchema::from_json(j.at("schema"));
    m.config = TrainConfig::from_json(j.at("config"));
    m.encoder = Encoder::from_json(j.at("encoder"));
    m.heads = ProjectionHeads::from_json(j.at("heads"));
    m.caption = CaptionEncoder::from_json(j.at("caption_encoder"));
    m.bank = PrototypeBank::from_json(j.at("prototypes"), &m.schema);
    if (m.heads.task_count() != m.schema.task_count() || m.caption.task_count() != m.schema.task_count()) {
      throw ParseError("model sections disagree on the number of tasks");
    }
    if (m.heads.dim_in() != m.encoder.config().dim) throw ParseError("head input width does not match encoder");
    if (m.bank.dim() != m.heads.dim_out()) throw ParseError("prototype width does not match head output");
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("corrupt model: ") + e.what());
  }
}

Embeddings embed(const Model& model, const FrameBatch& batch) {
  diff::Graph g;
  diff::Var meta = model.encoder.encode(g, batch);
  Embeddings out;
  out.meta = meta.value();
  for (const auto& z : model.heads.project_all(g, meta)) out.tasks.push_back(z.value());
  return out;
}

Embeddings embed(const Model& model, std::span<const LabeledSample> samples) {
  FrameBatch batch;
  batch.reserve(samples.size());
  for (const auto& s : samples) batch.push_back(&s.frames);
  return embed(model, batch);
}

}  // namespace parameta
