#include "parameta/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>

#include "parameta/caption.hpp"
#include "parameta/losses.hpp"
#include "parameta/synthetic.hpp"
#include "parameta/trainer.hpp"

namespace parameta {

using diff::Var;

double relative_error(double analytic, double numeric, double floor) {
  const double scale = std::max({std::abs(analytic), std::abs(numeric), floor});
  return scale > 0.0 ? std::abs(analytic - numeric) / scale : 0.0;
}

namespace {

using Objective = std::function<Var(diff::Graph&, Model&, const std::vector<LabeledSample>&)>;

std::vector<Var> task_embeddings(diff::Graph& g, Model& m, const std::vector<LabeledSample>& batch) {
  FrameBatch frames;
  for (const auto& s : batch) frames.push_back(&s.frames);
  return m.heads.project_all(g, m.encoder.encode(g, frames));
}

std::vector<LabelRow> label_rows(const std::vector<LabeledSample>& batch) {
  std::vector<LabelRow> rows;
  for (const auto& s : batch) rows.push_back(s.labels);
  return rows;
}

Var meta_objective(diff::Graph& g, Model& m, const std::vector<LabeledSample>& batch) {
  FrameBatch frames;
  for (const auto& s : batch) frames.push_back(&s.frames);
  return meta_loss(m.encoder.encode(g, frames), pair_similarity_weights(label_rows(batch), m.schema), m.config.tau);
}

Objective scl_objective(DenominatorMode mode) {
  return [mode](diff::Graph& g, Model& m, const std::vector<LabeledSample>& batch) {
    auto z = task_embeddings(g, m, batch);
    return scl_total(z, label_rows(batch), m.config.tau, mode);
  };
}

Var pal_speech_objective(diff::Graph& g, Model& m, const std::vector<LabeledSample>& batch) {
  auto z = task_embeddings(g, m, batch);
  auto rows = label_rows(batch);
  Var total = g.constant(Matrix(1, 1));
  for (std::size_t t = 0; t < m.schema.task_count(); ++t) {
    total = diff::add(total, prototype_alignment_loss(z[t], task_column(rows, t), m.bank.prototypes(t),
                                                      m.bank.initialized_mask(t)));
  }
  return total;
}

Var pal_text_objective(diff::Graph& g, Model& m, const std::vector<LabeledSample>& batch) {
  std::vector<std::string> captions;
  std::vector<LabelRow> rows;
  for (const auto& s : batch) {
    if (!s.caption) continue;
    captions.push_back(*s.caption);
    rows.push_back(parse_caption_classes(*s.caption, m.schema));
  }
  auto z = m.caption.encode_batch(g, captions);
  Var total = g.constant(Matrix(1, 1));
  for (std::size_t t = 0; t < m.schema.task_count(); ++t) {
    total = diff::add(total, prototype_alignment_loss(z[t], task_column(rows, t), m.bank.prototypes(t),
                                                      m.bank.initialized_mask(t), batch.size()));
  }
  return total;
}

std::vector<LabeledSample> random_batch(const TaskSchema& schema, const GradCheckOptions& o, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::bernoulli_distribution missing(0.2);
  std::bernoulli_distribution has_caption(0.8);
  std::vector<LabeledSample> batch(o.batch_size);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    auto& s = batch[i];
    s.id = "g" + std::to_string(i);
    s.subject = s.id;
    s.frames = Matrix(o.bins, o.frames);
    for (auto& x : s.frames.data()) x = normal(rng);
    s.labels.resize(schema.task_count());
    for (std::size_t t = 0; t < schema.task_count(); ++t) {
      if (missing(rng)) continue;
      s.labels[t] = std::uniform_int_distribution<std::size_t>(0, schema.class_count(t) - 1)(rng);
    }
    if (has_caption(rng)) s.caption = render_caption(schema, s.labels);
  }
  return batch;
}

}  // namespace

std::vector<GradCheckResult> gradient_check(std::uint64_t seed, const GradCheckOptions& o) {
  const TaskSchema schema({{"gender", {"female", "male"}},
                           {"age", {"young", "adult", "senior"}},
                           {"emotion", {"neutral", "happy", "sad", "angry"}}});
  std::vector<std::pair<std::string, Objective>> objectives = {
      {"meta", meta_objective},
      {"scl_as_written", scl_objective(DenominatorMode::as_written)},
      {"scl_standard", scl_objective(DenominatorMode::standard)},
      {"pal_speech", pal_speech_objective},
      {"pal_text", pal_text_objective},
      {"total", nullptr},
  };
  std::vector<GradCheckResult> results;
  for (const auto& [name, _] : objectives) results.push_back({name, 0.0, 0});

  std::mt19937_64 rng(seed);
  for (std::size_t b = 0; b < o.batches; ++b) {
    TrainConfig cfg;
    cfg.seed = rng();
    cfg.dim_meta = o.dim_meta;
    cfg.dim_task = o.dim_task;
    cfg.hidden = o.hidden;
    cfg.dim_text = o.dim_text;
    cfg.backbone = o.backbone;
    cfg.batch_size = o.batch_size;
    Model model = Model::create(schema, cfg, o.bins);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (std::size_t t = 0; t < schema.task_count(); ++t) {
      for (std::size_t c = 0; c < schema.class_count(t); ++c) {
        std::vector<real> p(o.dim_task);
        for (auto& x : p) x = u(rng);
        // Leave the last class of the last task uninitialised to exercise the mask.
        model.bank.set_prototype(t, c, p, !(t + 1 == schema.task_count() && c + 1 == schema.class_count(t)));
      }
    }
    const auto batch = random_batch(schema, o, rng);

    for (std::size_t k = 0; k < objectives.size(); ++k) {
      const Objective& f = objectives[k].second;
      auto value = [&]() -> double {
        if (!f) return compute_losses(model, batch, false).total;
        diff::Graph g;
        return f(g, model, batch).item();
      };
      auto params = model.parameters();
      if (f) {
        for (auto* p : params) p->zero_grad();
        diff::Graph g;
        g.backward(f(g, model, batch));
      } else {
        compute_losses(model, batch, true);
      }
      std::vector<Matrix> analytic;
      for (auto* p : params) analytic.push_back(p->grad);
      for (std::size_t q = 0; q < params.size(); ++q) {
        auto& w = params[q]->value.data();
        for (std::size_t i = 0; i < w.size(); ++i) {
          const double saved = w[i];
          w[i] = saved + o.step;
          const double up = value();
          w[i] = saved - o.step;
          const double down = value();
          w[i] = saved;
          const double numeric = (up - down) / (2.0 * o.step);
          const double err = relative_error(analytic[q].data()[i], numeric, o.floor);
          results[k].max_relative_error = std::max(results[k].max_relative_error, err);
          ++results[k].checked;
        }
      }
    }
  }
  return results;
}

}  // namespace parameta
