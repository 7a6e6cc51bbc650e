#pragma once

// Training objectives.
//
//   META   graded-similarity contrastive loss on the shared embedding. Pair
//          weights are the fraction of tasks (labelled for both samples) on
//          which two samples agree, row-normalised over j != i.
//   SCL    per-task supervised contrastive loss in each projected subspace.
//   PAL    mean (1 - cos) pull of each embedding toward its class prototype;
//          prototypes enter as constants.
//
// Every loss averages over the full batch size B: samples excluded for a
// missing label, an empty positive set, or an uninitialised prototype
// contribute zero but still count in B.

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "parameta/diffcore.hpp"
#include "parameta/schema.hpp"

namespace parameta {

enum class DenominatorMode {
  // log( e^{cos(z_i,z_j)} / sum_{k != i} e^{cos(z_k,z_j)} )
  as_written,
  // log( e^{cos(z_i,z_j)} / sum_{k != i} e^{cos(z_i,z_k)} )
  standard,
};

std::string to_string(DenominatorMode m);
DenominatorMode denominator_mode_from_string(const std::string& s);

struct PairWeights {
  Matrix w;                     // B x B, in [0,1], symmetric
  Matrix w_hat;                 // row-normalised over j != i, zero diagonal
  std::vector<bool> valid_row;  // row had non-zero off-diagonal mass
};

struct LossBreakdown {
  real meta = 0.0;
  std::vector<real> scl_per_task;
  real pal_speech = 0.0;
  real pal_text = 0.0;
  real total = 0.0;
};

// Column of a label table: labels of task `task` for every row.
std::vector<ClassLabel> task_column(std::span<const LabelRow> labels, std::size_t task);

PairWeights pair_similarity_weights(std::span<const LabelRow> labels, const TaskSchema& schema);

diff::Var meta_loss(diff::Var embeddings, const PairWeights& weights, real tau = 1.0);

diff::Var supervised_contrastive_loss(diff::Var embeddings, std::span<const ClassLabel> labels, real tau = 1.0,
                                      DenominatorMode mode = DenominatorMode::as_written);

diff::Var scl_total(std::span<const diff::Var> per_task, std::span<const LabelRow> labels, real tau = 1.0,
                    DenominatorMode mode = DenominatorMode::as_written);

// `active` marks which prototype rows may be used (empty span = all).
// `batch_size` is the averaging denominator; 0 means embeddings.rows().
diff::Var prototype_alignment_loss(diff::Var embeddings, std::span<const ClassLabel> labels,
                                   const Matrix& prototypes, const std::vector<bool>& active = {},
                                   std::size_t batch_size = 0);

// meta + sum(scl) + pal_speech + pal_text, with the parts recorded.
struct TotalLoss {
  diff::Var total;
  LossBreakdown breakdown;
};

TotalLoss total_loss(diff::Var meta, std::span<const diff::Var> scl_per_task, diff::Var pal_speech,
                     diff::Var pal_text);

}  // namespace parameta
