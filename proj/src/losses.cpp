#include "parameta/losses.hpp"

#include "parameta/errors.hpp"

namespace parameta {

using diff::Var;

std::string to_string(DenominatorMode m) { return m == DenominatorMode::as_written ? "as_written" : "standard"; }

DenominatorMode denominator_mode_from_string(const std::string& s) {
  if (s == "as_written") return DenominatorMode::as_written;
  if (s == "standard") return DenominatorMode::standard;
  throw ValidationError("unknown denominator mode '" + s + "' (expected as_written|standard)");
}

std::vector<ClassLabel> task_column(std::span<const LabelRow> labels, std::size_t task) {
  std::vector<ClassLabel> out;
  out.reserve(labels.size());
  for (const auto& row : labels) out.push_back(row.at(task));
  return out;
}

PairWeights pair_similarity_weights(std::span<const LabelRow> labels, const TaskSchema& schema) {
  const std::size_t B = labels.size();
  if (B < 2) throw DegenerateBatchError("pair weights need a batch of at least 2, got " + std::to_string(B));
  for (const auto& row : labels) {
    if (row.size() != schema.task_count()) throw SchemaError("label row width does not match the schema task count");
  }
  PairWeights pw{Matrix(B, B), Matrix(B, B), std::vector<bool>(B, false)};
  for (std::size_t i = 0; i < B; ++i) {
    for (std::size_t j = i + 1; j < B; ++j) {
      std::size_t both = 0, agree = 0;
      for (std::size_t t = 0; t < schema.task_count(); ++t) {
        if (!labels[i][t] || !labels[j][t]) continue;
        ++both;
        if (*labels[i][t] == *labels[j][t]) ++agree;
      }
      const real w = both ? static_cast<real>(agree) / static_cast<real>(both) : 0.0;
      pw.w(i, j) = pw.w(j, i) = w;
    }
  }
  for (std::size_t i = 0; i < B; ++i) {
    real mass = 0.0;
    for (std::size_t j = 0; j < B; ++j)
      if (j != i) mass += pw.w(i, j);
    if (mass <= 0.0) continue;
    pw.valid_row[i] = true;
    for (std::size_t j = 0; j < B; ++j)
      if (j != i) pw.w_hat(i, j) = pw.w(i, j) / mass;
  }
  return pw;
}

Var meta_loss(Var embeddings, const PairWeights& weights, real tau) {
  const std::size_t B = embeddings.shape().rows;
  if (B < 2) throw DegenerateBatchError("META loss needs a batch of at least 2");
  if (weights.w_hat.shape() != Shape{B, B}) {
    throw DimensionError("META loss: weights " + to_string(weights.w_hat.shape()) + " for a batch of " +
                         std::to_string(B));
  }
  if (!(tau > 0)) throw ValidationError("temperature must be positive");
  diff::Graph& g = embeddings.graph();
  Var scores = diff::scale(diff::cosine_sim_matrix(embeddings, embeddings), 1.0 / tau);
  Var log_p = diff::log_softmax_row_masked(scores, true);
  Var weighted = diff::sum(diff::mul(g.constant(weights.w_hat), log_p));
  return diff::scale(weighted, -1.0 / static_cast<real>(B));
}

Var supervised_contrastive_loss(Var embeddings, std::span<const ClassLabel> labels, real tau, DenominatorMode mode) {
  const std::size_t B = embeddings.shape().rows;
  if (B < 2) throw DegenerateBatchError("supervised contrastive loss needs a batch of at least 2");
  if (labels.size() != B) {
    throw DimensionError("supervised contrastive loss: " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(B) + " embeddings");
  }
  if (!(tau > 0)) throw ValidationError("temperature must be positive");

  // weight(i,j) = 1/|P_i| for j in P_i
  Matrix pos(B, B);
  for (std::size_t i = 0; i < B; ++i) {
    if (!labels[i]) continue;
    std::size_t count = 0;
    for (std::size_t j = 0; j < B; ++j)
      if (j != i && labels[j] && *labels[j] == *labels[i]) ++count;
    for (std::size_t j = 0; j < B && count; ++j)
      if (j != i && labels[j] && *labels[j] == *labels[i]) pos(i, j) = 1.0 / static_cast<real>(count);
  }

  diff::Graph& g = embeddings.graph();
  Var scores = diff::scale(diff::cosine_sim_matrix(embeddings, embeddings), 1.0 / tau);
  Var log_p = mode == DenominatorMode::as_written ? diff::log_softmax_leave_one_out(scores)
                                                  : diff::log_softmax_row_masked(scores, true);
  Var weighted = diff::sum(diff::mul(g.constant(std::move(pos)), log_p));
  return diff::scale(weighted, -1.0 / static_cast<real>(B));
}

Var scl_total(std::span<const Var> per_task, std::span<const LabelRow> labels, real tau, DenominatorMode mode) {
  if (per_task.empty()) throw DimensionError("scl_total: no task embeddings");
  Var total;
  for (std::size_t t = 0; t < per_task.size(); ++t) {
    const auto column = task_column(labels, t);
    Var l = supervised_contrastive_loss(per_task[t], column, tau, mode);
    total = t == 0 ? l : diff::add(total, l);
  }
  return total;
}

Var prototype_alignment_loss(Var embeddings, std::span<const ClassLabel> labels, const Matrix& prototypes,
                             const std::vector<bool>& active, std::size_t batch_size) {
  const std::size_t rows = embeddings.shape().rows, d = embeddings.shape().cols;
  if (labels.size() != rows) {
    throw DimensionError("prototype alignment: " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(rows) + " embeddings");
  }
  if (prototypes.cols() != d) {
    throw DimensionError("prototype alignment: prototypes have width " + std::to_string(prototypes.cols()) +
                         ", embeddings " + std::to_string(d));
  }
  if (!active.empty() && active.size() != prototypes.rows()) {
    throw DimensionError("prototype alignment: active mask does not match the prototype count");
  }
  const std::size_t B = batch_size ? batch_size : rows;
  if (B == 0) throw DegenerateBatchError("prototype alignment on an empty batch");

  Matrix targets(rows, d);
  Matrix mask(rows, 1);
  real count = 0.0;
  for (std::size_t i = 0; i < rows; ++i) {
    if (!labels[i]) continue;
    const std::size_t c = *labels[i];
    if (c >= prototypes.rows()) {
      throw DimensionError("prototype alignment: label " + std::to_string(c) + " out of range for " +
                           std::to_string(prototypes.rows()) + " prototypes");
    }
    if (!active.empty() && !active[c]) continue;
    for (std::size_t j = 0; j < d; ++j) targets(i, j) = prototypes(c, j);
    mask(i, 0) = 1.0;
    count += 1.0;
  }
  diff::Graph& g = embeddings.graph();
  Var cos = diff::row_sum(
      diff::mul(diff::normalize_rows(embeddings), diff::normalize_rows(g.constant(std::move(targets)))));
  Var aligned = diff::sum(diff::mul(g.constant(std::move(mask)), cos));
  // (count - sum_i cos_i) / B
  return diff::scale(diff::add_scalar(diff::scale(aligned, -1.0), count), 1.0 / static_cast<real>(B));
}

TotalLoss total_loss(Var meta, std::span<const Var> scl_per_task, Var pal_speech, Var pal_text) {
  TotalLoss out;
  out.breakdown.meta = meta.item();
  Var total = meta;
  for (const Var& l : scl_per_task) {
    out.breakdown.scl_per_task.push_back(l.item());
    total = diff::add(total, l);
  }
  out.breakdown.pal_speech = pal_speech.item();
  out.breakdown.pal_text = pal_text.item();
  total = diff::add(diff::add(total, pal_speech), pal_text);
  out.breakdown.total = total.item();
  out.total = total;
  return out;
}

}  // namespace parameta
