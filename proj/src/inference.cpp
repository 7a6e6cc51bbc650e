#include "parameta/inference.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "parameta/caption.hpp"
#include "parameta/errors.hpp"

namespace parameta {

TaskPrediction nearest_prototype(const PrototypeBank& bank, std::size_t task, std::span<const real> z) {
  const auto& mask = bank.initialized_mask(task);
  for (std::size_t c = 0; c < mask.size(); ++c) {
    if (!mask[c]) {
      throw ValidationError("prototype '" + bank.schema().task(task).classes[c] + "' of task '" +
                            bank.schema().task(task).name + "' is not initialised");
    }
  }
  if (z.size() != bank.dim()) throw DimensionError("query width does not match the prototype bank");
  TaskPrediction best{0, cosine(z, bank.prototype(task, 0))};
  for (std::size_t c = 1; c < mask.size(); ++c) {
    const real s = cosine(z, bank.prototype(task, c));
    if (s > best.score) best = {c, s};
  }
  return best;
}

StyleVector::StyleVector(std::vector<std::vector<real>> slices) : slices_(std::move(slices)) {}

StyleVector StyleVector::from_concat(std::span<const real> flat, std::size_t tasks, std::size_t dim) {
  if (flat.size() != tasks * dim) {
    throw DimensionError("style vector of length " + std::to_string(flat.size()) + " cannot split into " +
                         std::to_string(tasks) + " x " + std::to_string(dim));
  }
  std::vector<std::vector<real>> s;
  for (std::size_t t = 0; t < tasks; ++t) s.emplace_back(flat.begin() + t * dim, flat.begin() + (t + 1) * dim);
  return StyleVector(std::move(s));
}

std::vector<real> StyleVector::concat() const {
  std::vector<real> out;
  for (const auto& s : slices_) out.insert(out.end(), s.begin(), s.end());
  return out;
}

std::vector<StyleVector> extract_styles(const Model& model, std::span<const LabeledSample> samples) {
  std::vector<StyleVector> out;
  if (samples.empty()) return out;
  Embeddings e = embed(model, samples);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    std::vector<std::vector<real>> slices;
    for (const auto& z : e.tasks) slices.emplace_back(z.row(i).begin(), z.row(i).end());
    out.emplace_back(std::move(slices));
  }
  return out;
}

StyleVector extract_style(const Model& model, const LabeledSample& sample) {
  return extract_styles(model, std::span(&sample, 1)).front();
}

std::vector<TaskPrediction> classify_style(const Model& model, const StyleVector& style) {
  std::vector<TaskPrediction> out;
  for (std::size_t t = 0; t < style.task_count(); ++t) out.push_back(nearest_prototype(model.bank, t, style.slice(t)));
  return out;
}

std::vector<std::vector<TaskPrediction>> classify(const Model& model, std::span<const LabeledSample> samples) {
  std::vector<std::vector<TaskPrediction>> out;
  for (const auto& s : extract_styles(model, samples)) out.push_back(classify_style(model, s));
  return out;
}

std::vector<TaskPrediction> classify(const Model& model, const LabeledSample& sample) {
  return classify_style(model, extract_style(model, sample));
}

Manipulation manipulate(const Model& model, const StyleVector& style, std::size_t task, std::size_t target_class,
                        real alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ValidationError("alpha must lie in [0, 1]");
  if (task >= model.schema.task_count()) throw ValidationError("task index out of range");
  if (target_class >= model.schema.class_count(task)) {
    throw ValidationError("target class index out of range for task '" + model.schema.task(task).name + "'");
  }
  if (!model.bank.initialized(task, target_class)) {
    throw ValidationError("target prototype '" + model.schema.task(task).classes[target_class] +
                          "' is not initialised");
  }
  const auto before = classify_style(model, style);
  const auto target = model.bank.prototype(task, target_class);
  const auto z = style.slice(task);

  Manipulation out{style, {}};
  if (alpha > 0.0) {
    std::vector<real> mixed(z.size());
    for (std::size_t j = 0; j < z.size(); ++j) mixed[j] = (1.0 - alpha) * z[j] + alpha * target[j];
    const real n_mixed = norm(mixed);
    if (!(n_mixed > 0.0)) throw NumericError("interpolated style slice has zero norm");
    const real k = norm(z) / n_mixed;
    for (real& x : mixed) x *= k;
    out.style.slice_mut(task) = std::move(mixed);
  }
  const auto after = classify_style(model, out.style);

  ManipulationReport& r = out.report;
  r.task = model.schema.task(task).name;
  r.source_class = before[task].cls;
  r.target_class = target_class;
  r.orig_sim = cosine(z, target);
  r.manip_sim = cosine(out.style.slice(task), target);
  r.reclass_hit = after[task].cls == target_class;
  r.other_tasks_stable = true;
  for (std::size_t t = 0; t < before.size(); ++t) {
    if (t != task && before[t].cls != after[t].cls) r.other_tasks_stable = false;
  }
  return out;
}

Manipulation manipulate(const Model& model, const LabeledSample& sample, std::size_t task, std::size_t target_class,
                        real alpha) {
  return manipulate(model, extract_style(model, sample), task, target_class, alpha);
}

std::vector<std::optional<TaskPrediction>> classify_caption(const Model& model, const std::string& caption) {
  const LabelRow named = parse_caption_classes(caption, model.schema);
  const auto emb = model.caption.encode(caption);
  std::vector<std::optional<TaskPrediction>> out(model.schema.task_count());
  for (std::size_t t = 0; t < out.size(); ++t) {
    if (named[t]) out[t] = nearest_prototype(model.bank, t, emb[t]);
  }
  return out;
}

std::vector<EmbeddingRow> embedding_rows(const Model& model, std::span<const LabeledSample> samples,
                                         const std::string& split) {
  std::vector<EmbeddingRow> rows;
  if (samples.empty()) return rows;
  Embeddings e = embed(model, samples);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    std::vector<std::vector<real>> slices;
    for (const auto& z : e.tasks) slices.emplace_back(z.row(i).begin(), z.row(i).end());
    rows.push_back({samples[i].id, split, {e.meta.row(i).begin(), e.meta.row(i).end()}, StyleVector(slices)});
  }
  return rows;
}

namespace {

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string q = "\"";
  for (char c : s) {
    if (c == '"') q += '"';
    q += c;
  }
  return q + "\"";
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(std::move(cur));
  return out;
}

std::string fmt9(real v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

}  // namespace

void write_embedding_csv(const std::string& path, const TaskSchema& schema, std::span<const EmbeddingRow> rows) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path + " for writing");
  const std::size_t D = rows.empty() ? 0 : rows.front().meta.size();
  const std::size_t d = rows.empty() ? 0 : rows.front().style.slice(0).size();
  out << "id,split";
  for (std::size_t k = 0; k < D; ++k) out << ",meta_" << k;
  for (const auto& t : schema.tasks())
    for (std::size_t k = 0; k < d; ++k) out << ',' << t.name << '_' << k;
  out << '\n';
  for (const auto& r : rows) {
    out << csv_field(r.id) << ',' << csv_field(r.split);
    for (real v : r.meta) out << ',' << fmt9(v);
    for (real v : r.style.concat()) out << ',' << fmt9(v);
    out << '\n';
  }
  if (!out) throw IoError("failed writing " + path);
}

std::vector<EmbeddingRow> read_embedding_csv(const std::string& path, const TaskSchema& schema) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw ParseError(path + ": missing header");
  const auto header = split_csv_line(line);
  if (header.size() < 2 || header[0] != "id" || header[1] != "split") throw ParseError(path + ": bad header");
  std::size_t D = 0;
  while (2 + D < header.size() && header[2 + D] == "meta_" + std::to_string(D)) ++D;
  const std::size_t rest = header.size() - 2 - D;
  const std::size_t T = schema.task_count();
  if (rest % T != 0) throw ParseError(path + ": task columns do not divide evenly");
  const std::size_t d = rest / T;
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t k = 0; k < d; ++k) {
      if (header[2 + D + t * d + k] != schema.task(t).name + "_" + std::to_string(k)) {
        throw ParseError(path + ": unexpected column '" + header[2 + D + t * d + k] + "'");
      }
    }

  std::vector<EmbeddingRow> rows;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto f = split_csv_line(line);
    if (f.size() != header.size()) throw ParseError(path + ":" + std::to_string(lineno) + ": wrong field count");
    std::vector<real> vals;
    for (std::size_t k = 2; k < f.size(); ++k) {
      try {
        std::size_t used = 0;
        vals.push_back(std::stod(f[k], &used));
        if (used != f[k].size()) throw std::invalid_argument(f[k]);
      } catch (const std::exception&) {
        throw ParseError(path + ":" + std::to_string(lineno) + ": bad number '" + f[k] + "'");
      }
    }
    EmbeddingRow r{f[0], f[1], std::vector<real>(vals.begin(), vals.begin() + static_cast<std::ptrdiff_t>(D)), {}};
    r.style = StyleVector::from_concat(std::span(vals).subspan(D), T, d);
    rows.push_back(std::move(r));
  }
  return rows;
}

std::vector<ManipulationSummary> summarize(const TaskSchema& schema, std::span<const ManipulationReport> reports) {
  std::vector<ManipulationSummary> rows;
  for (const auto& t : schema.tasks()) {
    ManipulationSummary s{t.name};
    for (const auto& r : reports) {
      if (r.task != t.name) continue;
      ++s.count;
      s.orig_sim += r.orig_sim;
      s.manip_sim += r.manip_sim;
      s.accuracy += r.reclass_hit ? 1.0 : 0.0;
      s.stability += r.other_tasks_stable ? 1.0 : 0.0;
    }
    if (s.count == 0) continue;
    const real n = static_cast<real>(s.count);
    s.orig_sim /= n;
    s.manip_sim /= n;
    s.accuracy /= n;
    s.stability /= n;
    rows.push_back(s);
  }
  return rows;
}

void write_manipulation_csv(const std::string& path, std::span<const ManipulationSummary> rows) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out << "task,orig_sim,manip_sim,accuracy\n";
  char buf[128];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, ",%.9g,%.9g,%.9g\n", r.orig_sim, r.manip_sim, r.accuracy);
    out << csv_field(r.task) << buf;
  }
  if (!out) throw IoError("failed writing " + path);
}

}  // namespace parameta
