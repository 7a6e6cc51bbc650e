#pragma once

#include <random>
#include <string>
#include <vector>

#include "json.hpp"
#include "parameta/diffcore.hpp"
#include "parameta/schema.hpp"

namespace parameta {

// One independent linear map R^D -> R^d per task: z_t = Z W_t + b_t.
class ProjectionHeads {
 public:
  ProjectionHeads() = default;
  ProjectionHeads(std::size_t tasks, std::size_t dim_in, std::size_t dim_out, std::mt19937_64& rng);

  std::size_t task_count() const { return weights_.size(); }
  std::size_t dim_in() const { return weights_.empty() ? 0 : weights_.front().value.rows(); }
  std::size_t dim_out() const { return weights_.empty() ? 0 : weights_.front().value.cols(); }

  std::vector<diff::Var> project_all(diff::Graph& g, diff::Var meta);
  std::vector<diff::Var> project_all(diff::Graph& g, diff::Var meta) const;

  diff::Parameter& weight(std::size_t t) { return weights_.at(t); }
  diff::Parameter& bias(std::size_t t) { return biases_.at(t); }

  std::vector<diff::Parameter*> parameters();
  std::vector<const diff::Parameter*> parameters() const;
  std::size_t count_parameters() const;

  nlohmann::json to_json() const;
  static ProjectionHeads from_json(const nlohmann::json& j);

 private:
  std::vector<diff::Parameter> weights_;
  std::vector<diff::Parameter> biases_;
};

}  // namespace parameta
