#include "parameta/caption.hpp"

#include <algorithm>
#include <cctype>
#include <sstream>

#include "parameta/encoder.hpp"
#include "parameta/errors.hpp"

namespace parameta {

using diff::Graph;
using diff::Parameter;
using diff::Var;

std::vector<std::string> tokenize(const std::string& text) {
  std::string lower(text);
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  std::istringstream in(lower);
  std::vector<std::string> out;
  for (std::string tok; in >> tok;) out.push_back(tok);
  return out;
}

LabelRow parse_caption_classes(const std::string& caption, const TaskSchema& schema) {
  const auto tokens = tokenize(caption);
  LabelRow out(schema.task_count());
  for (std::size_t t = 0; t < schema.task_count(); ++t) {
    struct Candidate {
      std::size_t cls;
      std::vector<std::string> toks;
    };
    std::vector<Candidate> cands;
    for (std::size_t c = 0; c < schema.class_count(t); ++c) cands.push_back({c, tokenize(schema.task(t).classes[c])});
    std::stable_sort(cands.begin(), cands.end(),
                     [](const Candidate& a, const Candidate& b) { return a.toks.size() > b.toks.size(); });

    std::vector<bool> used(tokens.size(), false);
    for (const auto& cand : cands) {
      const std::size_t n = cand.toks.size();
      if (n == 0 || n > tokens.size()) continue;
      for (std::size_t start = 0; start + n <= tokens.size(); ++start) {
        bool hit = true;
        for (std::size_t k = 0; k < n && hit; ++k) hit = !used[start + k] && tokens[start + k] == cand.toks[k];
        if (!hit) continue;
        for (std::size_t k = 0; k < n; ++k) used[start + k] = true;
        if (out[t] && *out[t] != cand.cls) {
          throw ParseError("caption '" + caption + "' names both '" + schema.task(t).classes[*out[t]] + "' and '" +
                           schema.task(t).classes[cand.cls] + "' for task '" + schema.task(t).name + "'");
        }
        out[t] = cand.cls;
      }
    }
  }
  return out;
}

CaptionVocabulary::CaptionVocabulary(const TaskSchema& schema) {
  std::vector<std::string> toks{"<unk>", "a", "voice"};
  for (const auto& task : schema.tasks())
    for (const auto& cls : task.classes)
      for (auto& tok : tokenize(cls))
        if (std::find(toks.begin(), toks.end(), tok) == toks.end()) toks.push_back(tok);
  *this = CaptionVocabulary(std::move(toks));
}

CaptionVocabulary::CaptionVocabulary(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
  if (tokens_.empty()) throw ValidationError("caption vocabulary needs the reserved unknown token");
  for (std::size_t i = 0; i < tokens_.size(); ++i) lookup_.emplace(tokens_[i], i);
}

std::size_t CaptionVocabulary::index(const std::string& token) const {
  auto it = lookup_.find(token);
  return it == lookup_.end() ? unknown : it->second;
}

CaptionEncoder::CaptionEncoder(const TaskSchema& schema, std::size_t dim_text, std::size_t dim_task,
                               std::mt19937_64& rng)
    : vocab_(schema) {
  if (dim_text == 0 || dim_task == 0) throw ValidationError("caption encoder widths must be positive");
  table_ = Parameter("caption.table", glorot_uniform(vocab_.size(), dim_text, rng), false);
  for (std::size_t t = 0; t < schema.task_count(); ++t) {
    proj_w_.emplace_back("caption." + std::to_string(t) + ".w", glorot_uniform(dim_text, dim_task, rng));
    proj_b_.emplace_back("caption." + std::to_string(t) + ".b", Matrix(1, dim_task), false);
  }
}

Matrix CaptionEncoder::averaging_matrix(std::span<const std::string> captions) const {
  Matrix avg(captions.size(), vocab_.size());
  for (std::size_t i = 0; i < captions.size(); ++i) {
    const auto toks = tokenize(captions[i]);
    if (toks.empty()) throw ValidationError("caption must contain at least one token");
    const real w = 1.0 / static_cast<real>(toks.size());
    for (const auto& tok : toks) avg(i, vocab_.index(tok)) += w;
  }
  return avg;
}

template <class Bind>
std::vector<Var> CaptionEncoder::forward(Graph& g, std::span<const std::string> captions, Bind&& bind) const {
  if (captions.empty()) throw DimensionError("encode_batch: no captions");
  Var pooled = diff::matmul(g.constant(averaging_matrix(captions)), bind(table_));
  std::vector<Var> out;
  for (std::size_t t = 0; t < proj_w_.size(); ++t)
    out.push_back(diff::add_row(diff::matmul(pooled, bind(proj_w_[t])), bind(proj_b_[t])));
  return out;
}

std::vector<Var> CaptionEncoder::encode_batch(Graph& g, std::span<const std::string> captions) {
  return forward(g, captions, [&](const Parameter& p) { return g.parameter(const_cast<Parameter&>(p)); });
}

std::vector<Var> CaptionEncoder::encode_batch(Graph& g, std::span<const std::string> captions) const {
  return forward(g, captions, [&](const Parameter& p) { return g.constant(p.value); });
}

std::vector<std::vector<real>> CaptionEncoder::encode(const std::string& caption) const {
  Graph g;
  const auto per_task = encode_batch(g, std::span<const std::string>(&caption, 1));
  std::vector<std::vector<real>> out;
  for (const Var& v : per_task) out.push_back(v.value().data());
  return out;
}

std::vector<Parameter*> CaptionEncoder::parameters() {
  std::vector<Parameter*> out{&table_};
  for (std::size_t t = 0; t < proj_w_.size(); ++t) {
    out.push_back(&proj_w_[t]);
    out.push_back(&proj_b_[t]);
  }
  return out;
}

std::vector<const Parameter*> CaptionEncoder::parameters() const {
  std::vector<const Parameter*> out{&table_};
  for (std::size_t t = 0; t < proj_w_.size(); ++t) {
    out.push_back(&proj_w_[t]);
    out.push_back(&proj_b_[t]);
  }
  return out;
}

std::size_t CaptionEncoder::count_parameters() const {
  std::size_t n = 0;
  for (const auto* p : parameters()) n += p->size();
  return n;
}

nlohmann::json CaptionEncoder::to_json() const {
  nlohmann::json proj = nlohmann::json::array();
  for (std::size_t t = 0; t < proj_w_.size(); ++t)
    proj.push_back({{"weight", parameter_to_json(proj_w_[t])}, {"bias", parameter_to_json(proj_b_[t])}});
  return {{"vocabulary", vocab_.tokens()}, {"table", parameter_to_json(table_)}, {"projections", proj}};
}

CaptionEncoder CaptionEncoder::from_json(const nlohmann::json& j) {
  CaptionEncoder c;
  c.vocab_ = CaptionVocabulary(j.at("vocabulary").get<std::vector<std::string>>());
  c.table_ = parameter_from_json(j.at("table"));
  if (c.table_.value.rows() != c.vocab_.size()) throw ParseError("caption table rows do not match vocabulary");
  for (const auto& e : j.at("projections")) {
    c.proj_w_.push_back(parameter_from_json(e.at("weight")));
    c.proj_b_.push_back(parameter_from_json(e.at("bias")));
  }
  return c;
}

}  // namespace parameta
