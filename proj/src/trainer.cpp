#include "parameta/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "parameta/caption.hpp"
#include "parameta/errors.hpp"

namespace parameta {

using diff::Var;

AdamWConfig adamw_config(const TrainConfig& cfg) {
  return {cfg.learning_rate, cfg.weight_decay, cfg.beta1, cfg.beta2, cfg.adam_eps};
}

namespace {

void require_finite(real v, const std::string& component) {
  if (!std::isfinite(v)) throw NumericError("non-finite loss in component '" + component + "'");
}

struct Forward {
  TotalLoss loss;
  std::vector<Matrix> task_embeddings;
};

Forward forward(diff::Graph& g, Model& model, std::span<const LabeledSample> batch) {
  const std::size_t B = batch.size();
  if (B < 2) throw DegenerateBatchError("training batch needs at least 2 samples, got " + std::to_string(B));
  const TaskSchema& schema = model.schema;
  const TrainConfig& cfg = model.config;

  FrameBatch frames;
  std::vector<LabelRow> labels;
  std::vector<std::string> captions;
  std::vector<LabelRow> caption_labels;
  for (const auto& s : batch) {
    frames.push_back(&s.frames);
    labels.push_back(s.labels);
    if (s.caption) {
      captions.push_back(*s.caption);
      caption_labels.push_back(parse_caption_classes(*s.caption, schema));
    }
  }

  Var meta_emb = model.encoder.encode(g, frames);
  std::vector<Var> z = model.heads.project_all(g, meta_emb);

  Var meta = meta_loss(meta_emb, pair_similarity_weights(labels, schema), cfg.tau);
  require_finite(meta.item(), "meta");

  std::vector<Var> scl;
  for (std::size_t t = 0; t < schema.task_count(); ++t) {
    auto col = task_column(labels, t);
    scl.push_back(supervised_contrastive_loss(z[t], col, cfg.tau, cfg.denominator_mode));
    require_finite(scl.back().item(), "scl_" + schema.task(t).name);
  }

  Var pal_speech = g.constant(Matrix(1, 1));
  for (std::size_t t = 0; t < schema.task_count(); ++t) {
    auto col = task_column(labels, t);
    pal_speech = diff::add(pal_speech, prototype_alignment_loss(z[t], col, model.bank.prototypes(t),
                                                                model.bank.initialized_mask(t)));
  }
  require_finite(pal_speech.item(), "pal_speech");

  Var pal_text = g.constant(Matrix(1, 1));
  if (!captions.empty()) {
    std::vector<Var> zc = model.caption.encode_batch(g, captions);
    for (std::size_t t = 0; t < schema.task_count(); ++t) {
      auto col = task_column(caption_labels, t);
      pal_text = diff::add(pal_text, prototype_alignment_loss(zc[t], col, model.bank.prototypes(t),
                                                              model.bank.initialized_mask(t), B));
    }
  }
  require_finite(pal_text.item(), "pal_text");

  Forward out{total_loss(meta, scl, pal_speech, pal_text), {}};
  require_finite(out.loss.breakdown.total, "total");
  for (const Var& v : z) out.task_embeddings.push_back(v.value());
  return out;
}

}  // namespace

LossBreakdown compute_losses(Model& model, std::span<const LabeledSample> batch, bool backward) {
  diff::Graph g;
  Forward f = forward(g, model, batch);
  if (backward) {
    for (auto* p : model.parameters()) p->zero_grad();
    g.backward(f.loss.total);
  }
  return f.loss.breakdown;
}

LossBreakdown train_step(Model& model, AdamW& optimizer, std::span<const LabeledSample> batch) {
  diff::Graph g;
  Forward f = forward(g, model, batch);
  auto params = model.parameters();
  for (auto* p : params) p->zero_grad();
  g.backward(f.loss.total);
  optimizer.step(params);

  for (std::size_t t = 0; t < model.schema.task_count(); ++t) {
    std::vector<ClassLabel> col;
    for (const auto& s : batch) col.push_back(s.labels.at(t));
    model.bank.ema_update(t, batch_centroids(f.task_embeddings[t], col, model.schema.class_count(t)));
  }
  return f.loss.breakdown;
}

std::string loss_csv_header(const TaskSchema& schema) {
  std::string h = "step,meta";
  for (const auto& t : schema.tasks()) h += ",scl_" + t.name;
  h += ",pal_speech,pal_text,total";
  return h;
}

std::string loss_csv_row(std::size_t step, const LossBreakdown& b) {
  char buf[64];
  std::string row = std::to_string(step);
  auto put = [&](real v) {
    std::snprintf(buf, sizeof buf, ",%.17g", v);
    row += buf;
  };
  put(b.meta);
  for (real v : b.scl_per_task) put(v);
  put(b.pal_speech);
  put(b.pal_text);
  put(b.total);
  return row;
}

Trainer::Trainer(const Dataset& train, const TrainConfig& config)
    : data_(&train),
      model_(Model::create(train.schema, config, train.bins())),
      optimizer_(adamw_config(config)),
      rng_(config.seed ^ 0x5eedda7aULL) {
  train.validate();
  if (train.samples.size() < config.batch_size) {
    throw ValidationError("training set has " + std::to_string(train.samples.size()) +
                          " samples, fewer than the batch size " + std::to_string(config.batch_size));
  }
}

Trainer::Trainer(const Dataset& train, const nlohmann::json& ckpt) : data_(&train) {
  model_ = model_from_checkpoint(ckpt);
  if (!(model_.schema == train.schema)) throw SchemaError("checkpoint schema differs from the training data schema");
  train.validate();
  try {
    optimizer_ = AdamW::from_json(ckpt.at("optimizer"), adamw_config(model_.config));
    step_ = ckpt.at("step").get<std::size_t>();
    std::istringstream rs(ckpt.at("rng").get<std::string>());
    rs >> rng_;
    if (!rs) throw ParseError("checkpoint rng state is unreadable");
    order_ = ckpt.at("order").get<std::vector<std::size_t>>();
    cursor_ = ckpt.at("cursor").get<std::size_t>();
    if (ckpt.at("dataset_size").get<std::size_t>() != train.samples.size()) {
      throw ValidationError("checkpoint was trained on a dataset of a different size");
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("corrupt checkpoint: ") + e.what());
  }
  if (cursor_ > order_.size()) throw ParseError("checkpoint data cursor out of range");
  for (std::size_t i : order_) {
    if (i >= train.samples.size()) throw ParseError("checkpoint data order out of range");
  }
}

std::vector<std::size_t> Trainer::next_batch() {
  const std::size_t B = model_.config.batch_size;
  if (cursor_ + B > order_.size()) {
    order_.resize(data_->samples.size());
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    std::shuffle(order_.begin(), order_.end(), rng_);
    cursor_ = 0;
  }
  std::vector<std::size_t> idx(order_.begin() + static_cast<std::ptrdiff_t>(cursor_),
                               order_.begin() + static_cast<std::ptrdiff_t>(cursor_ + B));
  cursor_ += B;
  return idx;
}

LossBreakdown Trainer::step() {
  std::vector<LabeledSample> batch;
  for (std::size_t i : next_batch()) batch.push_back(data_->samples[i]);
  LossBreakdown b = train_step(model_, optimizer_, batch);
  ++step_;
  return b;
}

nlohmann::json Trainer::checkpoint() const {
  nlohmann::json j = model_.to_json();
  std::ostringstream rs;
  rs << rng_;
  j["version"] = kCheckpointVersion;
  j["optimizer"] = optimizer_.to_json();
  j["step"] = step_;
  j["rng"] = rs.str();
  j["order"] = order_;
  j["cursor"] = cursor_;
  j["dataset_size"] = data_->samples.size();
  return j;
}

Model model_from_checkpoint(const nlohmann::json& j) {
  if (!j.is_object() || !j.contains("version")) throw VersionError("checkpoint has no version field");
  if (!j.at("version").is_number_integer() || j.at("version").get<int>() != Trainer::kCheckpointVersion) {
    throw VersionError("unsupported checkpoint version " + j.at("version").dump());
  }
  return Model::from_json(j);
}

nlohmann::json run_training(Trainer& trainer, std::size_t max_steps, const RunOptions& opts) {
  std::ofstream log;
  if (!opts.loss_csv.empty()) {
    log.open(opts.loss_csv);
    if (!log) throw IoError("cannot write loss log " + opts.loss_csv);
    log << loss_csv_header(trainer.model().schema) << '\n';
  }
  const std::size_t every = trainer.model().config.checkpoint_every;
  while (trainer.step_count() < max_steps) {
    LossBreakdown b = trainer.step();
    const std::size_t s = trainer.step_count();
    if (log.is_open()) {
      log << loss_csv_row(s, b) << '\n';
      if (!log) throw IoError("failed writing loss log " + opts.loss_csv);
    }
    if (opts.on_step) opts.on_step(s, b);
    if (every && s % every == 0 && !opts.checkpoint_path.empty()) write_json(trainer.checkpoint(), opts.checkpoint_path);
  }
  nlohmann::json ckpt = trainer.checkpoint();
  if (!opts.checkpoint_path.empty()) write_json(ckpt, opts.checkpoint_path);
  return ckpt;
}

void write_json(const nlohmann::json& j, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out << j.dump() << '\n';
  if (!out) throw IoError("failed writing " + path);
}

nlohmann::json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(path + ": " + e.what());
  }
}

}  // namespace parameta
