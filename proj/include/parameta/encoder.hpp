#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "parameta/diffcore.hpp"

namespace parameta {

enum class Backbone { frame_mlp, recurrent, attention_pool };

std::string to_string(Backbone b);
Backbone backbone_from_string(const std::string& s);

struct EncoderConfig {
  Backbone backbone = Backbone::frame_mlp;
  std::size_t bins = 32;    // F
  std::size_t hidden = 64;  // H
  std::size_t dim = 64;     // D

  bool operator==(const EncoderConfig&) const = default;
};

// Frames of one batch, each F x t (t may differ between samples).
using FrameBatch = std::vector<const Matrix*>;

// Maps F x t frame matrices to D-dim META embeddings.
//
//   frame_mlp       mean over time, then tanh(x W1 + b1) W2 + b2
//                   params: F*H + H + H*D + D
//   recurrent       h_k = tanh(x_k Win + h_{k-1} Wrec + b), output h_t Wout + bout
//                   params: F*H + H*H + H + H*D + D
//   attention_pool  keys = tanh(X Wk + bk), a = softmax(keys q), output (a X) Wout + bout
//                   params: F*H + H + H + F*D + D
class Encoder {
 public:
  Encoder() = default;
  Encoder(const EncoderConfig& cfg, std::mt19937_64& rng);

  const EncoderConfig& config() const { return cfg_; }

  // Trainable forward: parameters are bound into `g` and receive gradients.
  diff::Var encode(diff::Graph& g, const FrameBatch& batch);
  // Inference forward: parameters enter as constants.
  diff::Var encode(diff::Graph& g, const FrameBatch& batch) const;

  std::vector<diff::Parameter*> parameters();
  std::vector<const diff::Parameter*> parameters() const;

  // Sum of stored tensor sizes.
  std::size_t count_parameters() const;
  static std::size_t expected_parameter_count(const EncoderConfig& cfg);

  nlohmann::json to_json() const;
  static Encoder from_json(const nlohmann::json& j);

 private:
  template <class Bind>
  diff::Var forward(diff::Graph& g, const FrameBatch& batch, Bind&& bind) const;

  EncoderConfig cfg_;
  std::vector<diff::Parameter> params_;
};

// Uniform in +-sqrt(6 / (fan_in + fan_out)).
Matrix glorot_uniform(std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng);

nlohmann::json parameter_to_json(const diff::Parameter& p);
diff::Parameter parameter_from_json(const nlohmann::json& j);

}  // namespace parameta
