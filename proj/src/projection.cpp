#include "parameta/projection.hpp"

#include "parameta/encoder.hpp"
#include "parameta/errors.hpp"

namespace parameta {

using diff::Graph;
using diff::Parameter;
using diff::Var;

ProjectionHeads::ProjectionHeads(std::size_t tasks, std::size_t dim_in, std::size_t dim_out,
                                 std::mt19937_64& rng) {
  if (tasks == 0 || dim_in == 0 || dim_out == 0) throw ValidationError("projection heads need positive sizes");
  for (std::size_t t = 0; t < tasks; ++t) {
    weights_.emplace_back("heads." + std::to_string(t) + ".w", glorot_uniform(dim_in, dim_out, rng));
    biases_.emplace_back("heads." + std::to_string(t) + ".b", Matrix(1, dim_out), false);
  }
}

std::vector<Var> ProjectionHeads::project_all(Graph& g, Var meta) {
  if (meta.shape().cols != dim_in()) {
    throw DimensionError("project_all: embedding width " + std::to_string(meta.shape().cols) +
                         " does not match head input " + std::to_string(dim_in()));
  }
  std::vector<Var> out;
  for (std::size_t t = 0; t < weights_.size(); ++t)
    out.push_back(diff::add_row(diff::matmul(meta, g.parameter(weights_[t])), g.parameter(biases_[t])));
  return out;
}

std::vector<Var> ProjectionHeads::project_all(Graph& g, Var meta) const {
  if (meta.shape().cols != dim_in()) {
    throw DimensionError("project_all: embedding width " + std::to_string(meta.shape().cols) +
                         " does not match head input " + std::to_string(dim_in()));
  }
  std::vector<Var> out;
  for (std::size_t t = 0; t < weights_.size(); ++t)
    out.push_back(diff::add_row(diff::matmul(meta, g.constant(weights_[t].value)), g.constant(biases_[t].value)));
  return out;
}

std::vector<Parameter*> ProjectionHeads::parameters() {
  std::vector<Parameter*> out;
  for (std::size_t t = 0; t < weights_.size(); ++t) {
    out.push_back(&weights_[t]);
    out.push_back(&biases_[t]);
  }
  return out;
}

std::vector<const Parameter*> ProjectionHeads::parameters() const {
  std::vector<const Parameter*> out;
  for (std::size_t t = 0; t < weights_.size(); ++t) {
    out.push_back(&weights_[t]);
    out.push_back(&biases_[t]);
  }
  return out;
}

std::size_t ProjectionHeads::count_parameters() const {
  std::size_t n = 0;
  for (const auto* p : parameters()) n += p->size();
  return n;
}

nlohmann::json ProjectionHeads::to_json() const {
  nlohmann::json heads = nlohmann::json::array();
  for (std::size_t t = 0; t < weights_.size(); ++t)
    heads.push_back({{"weight", parameter_to_json(weights_[t])}, {"bias", parameter_to_json(biases_[t])}});
  return {{"heads", heads}};
}

ProjectionHeads ProjectionHeads::from_json(const nlohmann::json& j) {
  ProjectionHeads h;
  for (const auto& e : j.at("heads")) {
    h.weights_.push_back(parameter_from_json(e.at("weight")));
    h.biases_.push_back(parameter_from_json(e.at("bias")));
  }
  return h;
}

}  // namespace parameta
