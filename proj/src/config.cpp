#include "parameta/config.hpp"

#include <algorithm>
#include <cmath>

#include "parameta/errors.hpp"

namespace parameta {

void TrainConfig::validate() const {
  if (batch_size < 2) throw ValidationError("batch size must be at least 2");
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) throw ValidationError("learning rate must be >= 0");
  if (!(weight_decay >= 0.0)) throw ValidationError("weight decay must be >= 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw ValidationError("adam betas must lie in [0, 1)");
  }
  if (!(adam_eps > 0.0)) throw ValidationError("adam eps must be positive");
  if (!(tau > 0.0)) throw ValidationError("temperature must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ValidationError("EMA momentum must lie in [0, 1)");
  if (dim_meta == 0 || dim_task == 0 || dim_text == 0 || hidden == 0) {
    throw ValidationError("embedding widths must be positive");
  }
}

nlohmann::json TrainConfig::to_json() const {
  return {{"batch_size", batch_size},
          {"max_steps", max_steps},
          {"learning_rate", learning_rate},
          {"weight_decay", weight_decay},
          {"beta1", beta1},
          {"beta2", beta2},
          {"adam_eps", adam_eps},
          {"tau", tau},
          {"momentum", momentum},
          {"dim_meta", dim_meta},
          {"dim_task", dim_task},
          {"dim_text", dim_text},
          {"hidden", hidden},
          {"backbone", to_string(backbone)},
          {"denominator_mode", to_string(denominator_mode)},
          {"seed", seed},
          {"checkpoint_every", checkpoint_every}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j, TrainConfig c) {
  if (!j.is_object()) throw ParseError("config must be a JSON object");
  static const char* known[] = {"batch_size", "max_steps", "learning_rate", "weight_decay", "beta1",
                                "beta2",      "adam_eps",  "tau",           "momentum",     "dim_meta",
                                "dim_task",   "dim_text",  "hidden",        "backbone",     "denominator_mode",
                                "seed",       "checkpoint_every"};
  for (const auto& [key, _] : j.items()) {
    if (std::find(std::begin(known), std::end(known), key) == std::end(known)) {
      throw ValidationError("unknown config key '" + key + "'");
    }
  }
  try {
    auto get = [&](const char* key, auto& field) {
      if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
    };
    get("batch_size", c.batch_size);
    get("max_steps", c.max_steps);
    get("learning_rate", c.learning_rate);
    get("weight_decay", c.weight_decay);
    get("beta1", c.beta1);
    get("beta2", c.beta2);
    get("adam_eps", c.adam_eps);
    get("tau", c.tau);
    get("momentum", c.momentum);
    get("dim_meta", c.dim_meta);
    get("dim_task", c.dim_task);
    get("dim_text", c.dim_text);
    get("hidden", c.hidden);
    get("seed", c.seed);
    get("checkpoint_every", c.checkpoint_every);
    if (j.contains("backbone")) c.backbone = backbone_from_string(j.at("backbone").get<std::string>());
    if (j.contains("denominator_mode")) {
      c.denominator_mode = denominator_mode_from_string(j.at("denominator_mode").get<std::string>());
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("bad config value: ") + e.what());
  }
  return c;
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) { return from_json(j, TrainConfig{}); }

}  // namespace parameta
