#pragma once

#include <cstdint>

#include "json.hpp"
#include "parameta/encoder.hpp"
#include "parameta/losses.hpp"

namespace parameta {

struct TrainConfig {
  std::size_t batch_size = 32;
  std::size_t max_steps = 40000;
  double learning_rate = 2e-4;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double tau = 1.0;
  double momentum = 0.99;
  std::size_t dim_meta = 64;   // D
  std::size_t dim_task = 16;   // d
  std::size_t dim_text = 32;   // caption token width
  std::size_t hidden = 64;     // encoder hidden width
  Backbone backbone = Backbone::frame_mlp;
  DenominatorMode denominator_mode = DenominatorMode::as_written;
  std::uint64_t seed = 0;
  // 0 disables periodic checkpoints during run_training.
  std::size_t checkpoint_every = 0;

  // Throws ValidationError on out-of-range values.
  void validate() const;

  nlohmann::json to_json() const;
  // Missing keys keep the values already in `base`.
  static TrainConfig from_json(const nlohmann::json& j, TrainConfig base);
  static TrainConfig from_json(const nlohmann::json& j);

  bool operator==(const TrainConfig&) const = default;
};

}  // namespace parameta
