#pragma once

#include <span>
#include <vector>

#include "json.hpp"
#include "parameta/diffcore.hpp"

namespace parameta {

struct AdamWConfig {
  double learning_rate = 2e-4;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adaptive moments with decoupled weight decay. Parameters flagged
// decay=false (biases, token table) skip the decay term. Moment buffers are
// matched to parameters by position; the list passed to step() must keep
// the same order every call.
class AdamW {
 public:
  AdamW() = default;
  explicit AdamW(AdamWConfig cfg) : cfg_(cfg) {}

  void step(std::span<diff::Parameter* const> params);
  std::size_t steps() const { return t_; }
  const AdamWConfig& config() const { return cfg_; }

  nlohmann::json to_json() const;
  static AdamW from_json(const nlohmann::json& j, AdamWConfig cfg);

 private:
  AdamWConfig cfg_;
  std::size_t t_ = 0;
  std::vector<Matrix> m_;
  std::vector<Matrix> v_;
};

}  // namespace parameta
