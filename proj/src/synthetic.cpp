#include "parameta/synthetic.hpp"

#include <cmath>
#include <cstdio>
#include <random>

#include "parameta/errors.hpp"

namespace parameta {

namespace {

std::mt19937_64 stream(std::uint64_t seed, std::uint64_t purpose) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(purpose)};
  return std::mt19937_64(seq);
}

std::string numbered(const char* prefix, std::size_t i, int width) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s-%0*zu", prefix, width, i);
  return buf;
}

}  // namespace

TemplateBank make_templates(const TaskSchema& schema, std::size_t bins, std::size_t frames, std::uint64_t seed) {
  if (bins == 0 || frames == 0) throw ValidationError("synthetic frames need F >= 1 and t >= 1");
  auto rng = stream(seed, 1);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> gain(0.8, 1.2);
  std::vector<std::vector<double>> envelopes;
  std::vector<std::vector<double>> gains;
  for (std::size_t t = 0; t < schema.task_count(); ++t) {
    for (std::size_t c = 0; c < schema.class_count(t); ++c) {
      std::vector<double> envelope(bins), g(frames);
      for (auto& e : envelope) e = normal(rng);
      for (auto& x : g) x = gain(rng);
      envelopes.push_back(std::move(envelope));
      gains.push_back(std::move(g));
    }
  }
  // Mutually orthogonal envelopes when there is room for them.
  if (envelopes.size() <= bins) {
    for (std::size_t a = 0; a < envelopes.size(); ++a) {
      for (std::size_t b = 0; b < a; ++b) {
        const double p = dot(envelopes[a], envelopes[b]);
        for (std::size_t f = 0; f < bins; ++f) envelopes[a][f] -= p * envelopes[b][f];
      }
      const double n = norm(envelopes[a]);
      for (auto& e : envelopes[a]) e /= n;
    }
  }
  TemplateBank bank(schema.task_count());
  std::size_t k = 0;
  for (std::size_t t = 0; t < schema.task_count(); ++t) {
    for (std::size_t c = 0; c < schema.class_count(t); ++c, ++k) {
      Matrix m(bins, frames);
      double sq = 0.0;
      for (std::size_t f = 0; f < bins; ++f)
        for (std::size_t j = 0; j < frames; ++j) {
          m(f, j) = envelopes[k][f] * gains[k][j];
          sq += m(f, j) * m(f, j);
        }
      const double inv = 1.0 / std::sqrt(sq);
      for (auto& x : m.data()) x *= inv;
      bank[t].push_back(std::move(m));
    }
  }
  return bank;
}

std::string render_caption(const TaskSchema& schema, const LabelRow& labels) {
  std::string out = "a";
  for (std::size_t t = 0; t < schema.task_count(); ++t)
    if (t < labels.size() && labels[t]) out += " " + schema.task(t).classes.at(*labels[t]);
  return out + " voice";
}

Dataset generate_synthetic(const TaskSchema& schema, const SyntheticOptions& opts) {
  if (opts.samples == 0) throw ValidationError("synthetic dataset needs n >= 1");
  if (opts.noise_sigma < 0) throw ValidationError("noise sigma must be non-negative");
  if (opts.subjects == 0) throw ValidationError("synthetic dataset needs at least one subject");

  const TemplateBank templates = make_templates(schema, opts.bins, opts.frames, opts.seed);

  auto subject_rng = stream(opts.seed, 2);
  std::vector<LabelRow> subject_labels(opts.subjects, LabelRow(schema.task_count()));
  for (auto& row : subject_labels)
    for (std::size_t t = 0; t < schema.task_count(); ++t)
      row[t] = std::uniform_int_distribution<std::size_t>(0, schema.class_count(t) - 1)(subject_rng);

  auto sample_rng = stream(opts.seed, 3);
  std::uniform_int_distribution<std::size_t> pick_subject(0, opts.subjects - 1);
  std::normal_distribution<double> noise(0.0, 1.0);

  Dataset data{schema, {}};
  data.samples.reserve(opts.samples);
  for (std::size_t i = 0; i < opts.samples; ++i) {
    const std::size_t subj = pick_subject(sample_rng);
    LabeledSample s;
    s.id = numbered("syn", i, 6);
    s.subject = numbered("subj", subj, 4);
    s.labels = subject_labels[subj];
    s.frames = Matrix(opts.bins, opts.frames);
    for (std::size_t t = 0; t < schema.task_count(); ++t) s.frames += templates[t][*s.labels[t]];
    if (opts.noise_sigma > 0)
      for (auto& x : s.frames.data()) x += opts.noise_sigma * noise(sample_rng);
    s.caption = render_caption(schema, s.labels);
    data.samples.push_back(std::move(s));
  }
  return data;
}

}  // namespace parameta
