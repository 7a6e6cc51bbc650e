#include "parameta/cli.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "parameta/caption.hpp"
#include "parameta/errors.hpp"
#include "parameta/gradcheck.hpp"
#include "parameta/inference.hpp"
#include "parameta/metrics.hpp"
#include "parameta/synthetic.hpp"
#include "parameta/trainer.hpp"

namespace parameta {

namespace {

struct Flags {
  std::string schema, data, out, checkpoint, config, task, target_class, caption, backbone, denominator_mode;
  std::uint64_t seed = 0;
  std::size_t n = 1000, steps = 0, batch_size = 0, dim_meta = 0, dim_task = 0, runs = 1;
  std::size_t bins = 32, frames = 8, subjects = 40;
  double lr = 0, tau = 0, momentum = 0, alpha = 1.0, test_fraction = 0, noise = 0.25;
};

bool given(const CLI::App& cmd, const char* flag) { return cmd.count(flag) > 0; }

// Writes to `path`, or to `out` when path is empty.
void emit(const std::string& text, const std::string& path, std::ostream& out) {
  if (path.empty()) {
    out << text;
    return;
  }
  std::ofstream f(path);
  if (!f) throw IoError("cannot open " + path + " for writing");
  f << text;
  if (!f) throw IoError("failed writing " + path);
}

std::string loss_log_path(const std::string& checkpoint_path) {
  return std::filesystem::path(checkpoint_path).replace_extension(".loss.csv").string();
}

Model load_model(const std::string& path) { return model_from_checkpoint(read_json(path)); }

Dataset load_data(const Flags& f, const TaskSchema& schema) {
  if (!f.schema.empty() && !(TaskSchema::load(f.schema) == schema)) {
    throw SchemaError("--schema differs from the schema stored in the checkpoint");
  }
  Dataset d = load_jsonl(f.data, schema);
  d.validate();
  return d;
}

void require_range(double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ValidationError("--alpha must lie in [0, 1]");
}

int run_gen_synthetic(const Flags& f, std::ostream& out) {
  if (f.n == 0) throw ValidationError("--n must be at least 1");
  if (!(f.noise >= 0.0)) throw ValidationError("--noise must be >= 0");
  if (f.subjects == 0) throw ValidationError("--subjects must be at least 1");
  const TaskSchema schema = TaskSchema::load(f.schema);
  SyntheticOptions o{f.n, f.bins, f.frames, f.noise, f.subjects, f.seed};
  write_jsonl(generate_synthetic(schema, o), f.out);
  out << "wrote " << f.n << " samples to " << f.out << '\n';
  return 0;
}

int run_train(const Flags& f, const CLI::App& cmd, std::ostream& out) {
  const TaskSchema schema = TaskSchema::load(f.schema);
  Dataset data = load_jsonl(f.data, schema);
  data.validate();
  if (given(cmd, "--test-fraction")) data = split_subject_independent(data, f.test_fraction, f.seed).first;

  std::optional<Trainer> trainer;
  std::size_t max_steps = 0;
  if (!f.checkpoint.empty()) {
    for (const char* flag : {"--config", "--batch-size", "--lr", "--tau", "--momentum", "--dim-meta", "--dim-task",
                             "--backbone", "--denominator-mode"}) {
      if (given(cmd, flag)) throw ValidationError(std::string(flag) + " cannot change a resumed run");
    }
    trainer.emplace(data, read_json(f.checkpoint));
    max_steps = given(cmd, "--steps") ? f.steps : trainer->model().config.max_steps;
  } else {
    TrainConfig cfg;
    if (!f.config.empty()) cfg = TrainConfig::from_json(read_json(f.config), cfg);
    if (given(cmd, "--seed")) cfg.seed = f.seed;
    if (given(cmd, "--steps")) cfg.max_steps = f.steps;
    if (given(cmd, "--batch-size")) cfg.batch_size = f.batch_size;
    if (given(cmd, "--lr")) cfg.learning_rate = f.lr;
    if (given(cmd, "--tau")) cfg.tau = f.tau;
    if (given(cmd, "--momentum")) cfg.momentum = f.momentum;
    if (given(cmd, "--dim-meta")) cfg.dim_meta = f.dim_meta;
    if (given(cmd, "--dim-task")) cfg.dim_task = f.dim_task;
    if (given(cmd, "--backbone")) cfg.backbone = backbone_from_string(f.backbone);
    if (given(cmd, "--denominator-mode")) cfg.denominator_mode = denominator_mode_from_string(f.denominator_mode);
    cfg.validate();
    trainer.emplace(data, cfg);
    max_steps = cfg.max_steps;
  }
  RunOptions opts{loss_log_path(f.out), f.out, {}};
  run_training(*trainer, max_steps, opts);
  out << "trained to step " << trainer->step_count() << "; checkpoint " << f.out << ", loss log " << opts.loss_csv
      << '\n';
  return 0;
}

int run_eval(const Flags& f, const CLI::App& cmd, std::ostream& out) {
  const Model model = load_model(f.checkpoint);
  const Dataset data = load_data(f, model.schema);
  if (f.runs == 0) throw ValidationError("--runs must be at least 1");
  const bool resample = given(cmd, "--test-fraction");
  if (!resample && f.runs > 1) throw ValidationError("--runs > 1 needs --test-fraction to draw test sets");
  std::vector<std::vector<TaskMetrics>> runs;
  for (std::size_t r = 0; r < f.runs; ++r) {
    const Dataset test = resample ? split_subject_independent(data, f.test_fraction, f.seed + r).second : data;
    runs.push_back(evaluate(model, test.samples));
  }
  nlohmann::json report = metrics_report(model.schema, runs);
  report["config"] = model.config.to_json();
  emit(report.dump(2) + "\n", f.out, out);
  return 0;
}

int run_classify(const Flags& f, std::ostream& out) {
  const Model model = load_model(f.checkpoint);
  const Dataset data = load_data(f, model.schema);
  const auto preds = classify(model, data.samples);
  std::string csv = "id";
  for (const auto& t : model.schema.tasks()) csv += "," + t.name + "," + t.name + "_score";
  csv += '\n';
  char buf[64];
  for (std::size_t i = 0; i < preds.size(); ++i) {
    csv += data.samples[i].id;
    for (std::size_t t = 0; t < preds[i].size(); ++t) {
      std::snprintf(buf, sizeof buf, ",%.9g", preds[i][t].score);
      csv += "," + model.schema.task(t).classes[preds[i][t].cls] + buf;
    }
    csv += '\n';
  }
  emit(csv, f.out, out);
  return 0;
}

int run_classify_caption(const Flags& f, std::ostream& out) {
  const Model model = load_model(f.checkpoint);
  const auto preds = classify_caption(model, f.caption);
  nlohmann::json j = nlohmann::json::object();
  for (std::size_t t = 0; t < preds.size(); ++t) {
    const auto& name = model.schema.task(t).name;
    if (preds[t]) {
      j[name] = {{"class", model.schema.task(t).classes[preds[t]->cls]}, {"similarity", preds[t]->score}};
    } else {
      j[name] = nullptr;
    }
  }
  emit(j.dump(2) + "\n", f.out, out);
  return 0;
}

int run_manipulate(const Flags& f, const CLI::App& cmd, std::ostream& out) {
  require_range(f.alpha);
  const Model model = load_model(f.checkpoint);
  const Dataset data = load_data(f, model.schema);
  if (given(cmd, "--target-class") && !given(cmd, "--task")) throw ValidationError("--target-class needs --task");
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (std::size_t t = 0; t < model.schema.task_count(); ++t) {
    if (given(cmd, "--task") && t != model.schema.task_index(f.task)) continue;
    for (std::size_t c = 0; c < model.schema.class_count(t); ++c) {
      if (given(cmd, "--target-class") && c != model.schema.class_index(t, f.target_class)) continue;
      pairs.emplace_back(t, c);
    }
  }
  const auto styles = extract_styles(model, data.samples);
  std::vector<ManipulationReport> reports;
  for (const auto& [t, c] : pairs)
    for (const auto& s : styles) reports.push_back(manipulate(model, s, t, c, f.alpha).report);
  const auto rows = summarize(model.schema, reports);
  if (f.out.empty()) {
    out << "task,orig_sim,manip_sim,accuracy\n";
    char buf[128];
    for (const auto& r : rows) {
      std::snprintf(buf, sizeof buf, ",%.9g,%.9g,%.9g\n", r.orig_sim, r.manip_sim, r.accuracy);
      out << r.task << buf;
    }
  } else {
    write_manipulation_csv(f.out, rows);
  }
  return 0;
}

int run_export(const Flags& f, const CLI::App& cmd, std::ostream& out) {
  const Model model = load_model(f.checkpoint);
  const Dataset data = load_data(f, model.schema);
  std::vector<EmbeddingRow> rows;
  if (given(cmd, "--test-fraction")) {
    auto [train, test] = split_subject_independent(data, f.test_fraction, f.seed);
    rows = embedding_rows(model, train.samples, "train");
    for (auto& r : embedding_rows(model, test.samples, "test")) rows.push_back(std::move(r));
  } else {
    rows = embedding_rows(model, data.samples, "all");
  }
  write_embedding_csv(f.out, model.schema, rows);
  out << "wrote " << rows.size() << " embeddings to " << f.out << '\n';
  return 0;
}

int run_grad_check(const Flags& f, std::ostream& out) {
  bool ok = true;
  char buf[128];
  for (const auto& r : gradient_check(f.seed)) {
    const bool pass = r.max_relative_error < 1e-4;
    ok = ok && pass;
    std::snprintf(buf, sizeof buf, "%-16s max_rel_error %.3e  %s\n", r.component.c_str(), r.max_relative_error,
                  pass ? "ok" : "FAIL");
    out << buf;
  }
  return ok ? 0 : 2;
}

int run_stats(const Flags& f, std::ostream& out) {
  const Model m = load_model(f.checkpoint);
  std::size_t prototypes = 0;
  for (std::size_t t = 0; t < m.schema.task_count(); ++t) prototypes += m.bank.prototypes(t).size();
  const std::size_t enc = m.encoder.count_parameters(), heads = m.heads.count_parameters(),
                    cap = m.caption.count_parameters();
  nlohmann::json j = {{"encoder", enc},
                      {"heads", heads},
                      {"caption_encoder", cap},
                      {"prototypes", prototypes},
                      {"trainable_total", enc + heads + cap},
                      {"config", m.config.to_json()}};
  out << j.dump(2) << '\n';
  return 0;
}

}  // namespace

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"parameta: multi-task speaking-style embeddings"};
  app.name("parameta");
  app.require_subcommand(1);
  Flags f;

  auto* gen = app.add_subcommand("gen-synthetic", "write a seeded synthetic JSONL dataset");
  gen->add_option("--schema", f.schema)->required()->check(CLI::ExistingFile);
  gen->add_option("--n", f.n, "number of samples");
  gen->add_option("--seed", f.seed);
  gen->add_option("--out", f.out)->required();
  gen->add_option("--noise", f.noise, "Gaussian noise sigma");
  gen->add_option("--bins", f.bins, "feature bins F");
  gen->add_option("--frames", f.frames, "frames t");
  gen->add_option("--subjects", f.subjects);

  auto* train = app.add_subcommand("train", "train a model and write a checkpoint plus loss log");
  train->add_option("--schema", f.schema)->required()->check(CLI::ExistingFile);
  train->add_option("--data", f.data)->required()->check(CLI::ExistingFile);
  train->add_option("--out", f.out, "checkpoint path; the loss log goes next to it")->required();
  train->add_option("--config", f.config, "JSON training config; flags override it")->check(CLI::ExistingFile);
  train->add_option("--checkpoint", f.checkpoint, "resume from this checkpoint")->check(CLI::ExistingFile);
  train->add_option("--seed", f.seed);
  train->add_option("--steps", f.steps);
  train->add_option("--batch-size", f.batch_size);
  train->add_option("--lr", f.lr);
  train->add_option("--tau", f.tau);
  train->add_option("--momentum", f.momentum);
  train->add_option("--dim-meta", f.dim_meta);
  train->add_option("--dim-task", f.dim_task);
  train->add_option("--backbone", f.backbone);
  train->add_option("--denominator-mode", f.denominator_mode);
  train->add_option("--test-fraction", f.test_fraction, "hold out this fraction of subjects (split by --seed)");

  auto* eval = app.add_subcommand("eval", "classification metrics as JSON");
  auto* classify_cmd = app.add_subcommand("classify", "per-sample predictions as CSV");
  auto* manip = app.add_subcommand("manipulate", "swap a task slice toward a class prototype");
  auto* exp = app.add_subcommand("export-embeddings", "write META and task embeddings as CSV");
  for (auto* cmd : {eval, classify_cmd, manip, exp}) {
    cmd->add_option("--checkpoint", f.checkpoint)->required()->check(CLI::ExistingFile);
    cmd->add_option("--data", f.data)->required()->check(CLI::ExistingFile);
    cmd->add_option("--schema", f.schema, "optional; must match the checkpoint")->check(CLI::ExistingFile);
  }
  eval->add_option("--out", f.out);
  eval->add_option("--test-fraction", f.test_fraction);
  eval->add_option("--seed", f.seed);
  eval->add_option("--runs", f.runs);
  classify_cmd->add_option("--out", f.out);
  manip->add_option("--out", f.out);
  manip->add_option("--task", f.task);
  manip->add_option("--target-class", f.target_class);
  manip->add_option("--alpha", f.alpha);
  exp->add_option("--out", f.out)->required();
  exp->add_option("--test-fraction", f.test_fraction);
  exp->add_option("--seed", f.seed);

  auto* cap = app.add_subcommand("classify-caption", "classify a caption against the prototypes");
  cap->add_option("--checkpoint", f.checkpoint)->required()->check(CLI::ExistingFile);
  cap->add_option("--caption", f.caption)->required();
  cap->add_option("--out", f.out);

  auto* grad = app.add_subcommand("grad-check", "finite-difference check of every loss component");
  grad->add_option("--seed", f.seed);

  auto* stats = app.add_subcommand("stats", "parameter counts per checkpoint section");
  stats->add_option("--checkpoint", f.checkpoint)->required()->check(CLI::ExistingFile);

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }

  try {
    if (gen->parsed()) return run_gen_synthetic(f, out);
    if (train->parsed()) return run_train(f, *train, out);
    if (eval->parsed()) return run_eval(f, *eval, out);
    if (classify_cmd->parsed()) return run_classify(f, out);
    if (cap->parsed()) return run_classify_caption(f, out);
    if (manip->parsed()) return run_manipulate(f, *manip, out);
    if (exp->parsed()) return run_export(f, *exp, out);
    if (grad->parsed()) return run_grad_check(f, out);
    if (stats->parsed()) return run_stats(f, out);
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  } catch (const nlohmann::json::exception& e) {
    err << "error: malformed input: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  }
  return 1;
}

int dispatch(int argc, const char* const* argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return dispatch(args, std::cout, std::cerr);
}

}  // namespace parameta
