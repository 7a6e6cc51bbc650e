#include "parameta/prototypes.hpp"

#include <fstream>

#include "parameta/errors.hpp"

namespace parameta {

Centroids batch_centroids(const Matrix& embeddings, std::span<const ClassLabel> labels, std::size_t classes) {
  if (labels.size() != embeddings.rows()) {
    throw DimensionError("batch_centroids: " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(embeddings.rows()) + " embeddings");
  }
  std::vector<std::vector<real>> sums(classes, std::vector<real>(embeddings.cols(), 0.0));
  std::vector<std::size_t> counts(classes, 0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (!labels[i]) continue;
    const std::size_t c = *labels[i];
    if (c >= classes) throw DimensionError("batch_centroids: label " + std::to_string(c) + " out of range");
    ++counts[c];
    for (std::size_t j = 0; j < embeddings.cols(); ++j) sums[c][j] += embeddings(i, j);
  }
  Centroids out(classes);
  for (std::size_t c = 0; c < classes; ++c) {
    if (counts[c] == 0) continue;
    for (real& x : sums[c]) x /= static_cast<real>(counts[c]);
    out[c] = std::move(sums[c]);
  }
  return out;
}

PrototypeBank::PrototypeBank(const TaskSchema& schema, std::size_t dim, double momentum, std::mt19937_64& rng)
    : schema_(schema), momentum_(momentum) {
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ValidationError("EMA momentum must lie in [0, 1)");
  if (dim == 0) throw ValidationError("prototype dimension must be positive");
  std::uniform_real_distribution<double> u(-0.1, 0.1);
  for (std::size_t t = 0; t < schema.task_count(); ++t) {
    Matrix p(schema.class_count(t), dim);
    for (auto& x : p.data()) x = u(rng);
    prototypes_.push_back(std::move(p));
    initialized_.emplace_back(schema.class_count(t), false);
  }
}

void PrototypeBank::ema_update(std::size_t task, const Centroids& centroids) {
  Matrix& p = prototypes_.at(task);
  if (centroids.size() != p.rows()) {
    throw DimensionError("ema_update: " + std::to_string(centroids.size()) + " centroid slots for " +
                         std::to_string(p.rows()) + " classes");
  }
  for (std::size_t c = 0; c < centroids.size(); ++c) {
    if (!centroids[c]) continue;
    const auto& z = *centroids[c];
    if (z.size() != p.cols()) {
      throw DimensionError("ema_update: centroid has dimension " + std::to_string(z.size()) + ", bank expects " +
                           std::to_string(p.cols()));
    }
    for (std::size_t j = 0; j < z.size(); ++j) p(c, j) = momentum_ * p(c, j) + (1.0 - momentum_) * z[j];
    initialized_[task][c] = true;
  }
}

void PrototypeBank::set_prototype(std::size_t task, std::size_t cls, std::span<const real> value, bool init) {
  Matrix& p = prototypes_.at(task);
  if (value.size() != p.cols()) throw DimensionError("set_prototype: dimension mismatch");
  for (std::size_t j = 0; j < value.size(); ++j) p(cls, j) = value[j];
  initialized_[task].at(cls) = init;
}

nlohmann::json PrototypeBank::to_json() const {
  nlohmann::json protos = nlohmann::json::object();
  nlohmann::json init = nlohmann::json::object();
  for (std::size_t t = 0; t < schema_.task_count(); ++t) {
    nlohmann::json rows = nlohmann::json::array();
    for (std::size_t c = 0; c < prototypes_[t].rows(); ++c) {
      auto r = prototypes_[t].row(c);
      rows.push_back(std::vector<real>(r.begin(), r.end()));
    }
    protos[schema_.task(t).name] = rows;
    init[schema_.task(t).name] = initialized_[t];
  }
  return {{"version", kVersion},
          {"momentum", momentum_},
          {"schema", schema_.to_json()},
          {"prototypes", protos},
          {"initialized", init}};
}

PrototypeBank PrototypeBank::from_json(const nlohmann::json& j, const TaskSchema* expected) {
  try {
    if (!j.is_object() || !j.contains("version")) throw VersionError("prototype bank has no version field");
    const int version = j.at("version").get<int>();
    if (version != kVersion) {
      throw VersionError("prototype bank version " + std::to_string(version) + " is not supported (expected " +
                         std::to_string(kVersion) + ")");
    }
    PrototypeBank bank;
    bank.schema_ = TaskSchema::from_json(j.at("schema"));
    if (expected && !(*expected == bank.schema_)) {
      throw SchemaError("prototype bank was saved against a different task schema");
    }
    bank.momentum_ = j.at("momentum").get<double>();
    if (!(bank.momentum_ >= 0.0 && bank.momentum_ < 1.0)) throw ParseError("stored momentum outside [0, 1)");
    std::size_t dim = 0;
    for (std::size_t t = 0; t < bank.schema_.task_count(); ++t) {
      const auto& name = bank.schema_.task(t).name;
      const auto rows = j.at("prototypes").at(name).get<std::vector<std::vector<real>>>();
      const auto mask = j.at("initialized").at(name).get<std::vector<bool>>();
      if (rows.size() != bank.schema_.class_count(t) || mask.size() != rows.size()) {
        throw ParseError("prototype rows for task '" + name + "' do not match its class count");
      }
      if (t == 0) dim = rows.front().size();
      Matrix p(rows.size(), dim);
      for (std::size_t c = 0; c < rows.size(); ++c) {
        if (rows[c].size() != dim) throw ParseError("prototype rows have inconsistent widths");
        for (std::size_t k = 0; k < dim; ++k) p(c, k) = rows[c][k];
      }
      bank.prototypes_.push_back(std::move(p));
      bank.initialized_.push_back(mask);
    }
    return bank;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("corrupt prototype bank: ") + e.what());
  }
}

void save_bank(const PrototypeBank& bank, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path + "'");
  out << bank.to_json().dump(1) << '\n';
  if (!out) throw IoError("write to '" + path + "' failed");
}

PrototypeBank load_bank(const std::string& path, const TaskSchema& expected) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open prototype bank '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("corrupt prototype bank '" + path + "': " + e.what());
  }
  return PrototypeBank::from_json(j, &expected);
}

}  // namespace parameta
