#pragma once

#include <random>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "json.hpp"
#include "parameta/diffcore.hpp"
#include "parameta/schema.hpp"

namespace parameta {

// Lower-cases and splits on whitespace.
std::vector<std::string> tokenize(const std::string& text);

// Reads which class each task's vocabulary names in a caption. Multi-word
// class names match as contiguous token runs, longest first. A task naming
// two different classes is a ParseError; unnamed tasks stay empty.
LabelRow parse_caption_classes(const std::string& caption, const TaskSchema& schema);

// Closed vocabulary: the reserved unknown token, the caption template words,
// then every class-name token in schema order.
class CaptionVocabulary {
 public:
  static constexpr std::size_t unknown = 0;

  CaptionVocabulary() = default;
  explicit CaptionVocabulary(const TaskSchema& schema);
  explicit CaptionVocabulary(std::vector<std::string> tokens);

  std::size_t size() const { return tokens_.size(); }
  std::size_t index(const std::string& token) const;
  const std::vector<std::string>& tokens() const { return tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::size_t> lookup_;
};

// Bag-of-tokens caption encoder: mean of token embeddings (V x D_text table),
// then an independent linear map g_t: D_text -> d per task.
class CaptionEncoder {
 public:
  CaptionEncoder() = default;
  CaptionEncoder(const TaskSchema& schema, std::size_t dim_text, std::size_t dim_task, std::mt19937_64& rng);

  const CaptionVocabulary& vocabulary() const { return vocab_; }
  std::size_t task_count() const { return proj_w_.size(); }

  // Per task, a (captions x d) matrix. Throws on an empty caption.
  std::vector<diff::Var> encode_batch(diff::Graph& g, std::span<const std::string> captions);
  std::vector<diff::Var> encode_batch(diff::Graph& g, std::span<const std::string> captions) const;
  // Per task d-vector for a single caption.
  std::vector<std::vector<real>> encode(const std::string& caption) const;

  diff::Parameter& table() { return table_; }
  diff::Parameter& proj_weight(std::size_t t) { return proj_w_.at(t); }

  std::vector<diff::Parameter*> parameters();
  std::vector<const diff::Parameter*> parameters() const;
  std::size_t count_parameters() const;

  nlohmann::json to_json() const;
  static CaptionEncoder from_json(const nlohmann::json& j);

 private:
  Matrix averaging_matrix(std::span<const std::string> captions) const;
  template <class Bind>
  std::vector<diff::Var> forward(diff::Graph& g, std::span<const std::string> captions, Bind&& bind) const;

  CaptionVocabulary vocab_;
  diff::Parameter table_;
  std::vector<diff::Parameter> proj_w_;
  std::vector<diff::Parameter> proj_b_;
};

}  // namespace parameta
