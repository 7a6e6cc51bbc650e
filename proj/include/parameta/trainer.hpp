#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "parameta/dataset.hpp"
#include "parameta/losses.hpp"
#include "parameta/model.hpp"
#include "parameta/optim.hpp"

namespace parameta {

AdamWConfig adamw_config(const TrainConfig& cfg);

// Forward pass of every objective on one batch. With `backward` set the
// total is differentiated and parameter gradients are left in place.
// Throws NumericError naming the first non-finite component.
LossBreakdown compute_losses(Model& model, std::span<const LabeledSample> batch, bool backward);

// One optimisation step: losses, backward, AdamW, then the EMA prototype
// update from the pre-step task embeddings.
LossBreakdown train_step(Model& model, AdamW& optimizer, std::span<const LabeledSample> batch);

// Loss log: step, meta, scl_<task>..., pal_speech, pal_text, total.
std::string loss_csv_header(const TaskSchema& schema);
std::string loss_csv_row(std::size_t step, const LossBreakdown& b);

class Trainer {
 public:
  static constexpr int kCheckpointVersion = 1;

  // Fresh model initialised from config.seed.
  Trainer(const Dataset& train, const TrainConfig& config);
  // Continues from a checkpoint written by checkpoint().
  Trainer(const Dataset& train, const nlohmann::json& checkpoint);

  std::size_t step_count() const { return step_; }
  const Model& model() const { return model_; }
  Model& model() { return model_; }
  const AdamW& optimizer() const { return optimizer_; }

  // Draws the next batch (seeded shuffle per epoch, last partial batch
  // dropped) and trains on it.
  LossBreakdown step();

  nlohmann::json checkpoint() const;

 private:
  std::vector<std::size_t> next_batch();

  const Dataset* data_;
  Model model_;
  AdamW optimizer_;
  std::size_t step_ = 0;
  std::mt19937_64 rng_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
};

struct RunOptions {
  // Empty paths disable the corresponding output.
  std::string loss_csv;
  std::string checkpoint_path;
  // Called after every step.
  std::function<void(std::size_t, const LossBreakdown&)> on_step;
};

// Trains until config.max_steps (counting steps already in a resumed
// trainer), writing the loss log and periodic plus final checkpoints.
nlohmann::json run_training(Trainer& trainer, std::size_t max_steps, const RunOptions& opts);

// Model sections of a checkpoint; throws VersionError on an unknown version.
Model model_from_checkpoint(const nlohmann::json& j);

void write_json(const nlohmann::json& j, const std::string& path);
nlohmann::json read_json(const std::string& path);

}  // namespace parameta
