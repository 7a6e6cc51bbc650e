#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "doctest.h"
#include "parameta/errors.hpp"
#include "parameta/inference.hpp"
#include "parameta/synthetic.hpp"
#include "parameta/trainer.hpp"
#include "support/oracles.hpp"

using namespace parameta;

namespace {

TaskSchema schema3() {
  return TaskSchema({{"gender", {"female", "male"}},
                     {"age", {"young", "adult", "senior"}},
                     {"emotion", {"neutral", "happy", "sad", "angry"}}});
}

Dataset small_data(std::size_t n, std::uint64_t seed, const TaskSchema& s = schema3()) {
  SyntheticOptions o;
  o.samples = n;
  o.bins = 8;
  o.frames = 3;
  o.subjects = 40;
  o.seed = seed;
  return generate_synthetic(s, o);
}

TrainConfig small_config(std::uint64_t seed = 0) {
  TrainConfig c;
  c.batch_size = 8;
  c.max_steps = 20;
  c.learning_rate = 1e-2;
  c.dim_meta = 8;
  c.dim_task = 4;
  c.dim_text = 6;
  c.hidden = 8;
  c.seed = seed;
  return c;
}

std::string tmp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("parameta_test_" + name)).string();
}

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  return {std::istreambuf_iterator<char>(in), {}};
}

std::vector<std::string> run_rows(Trainer& t, std::size_t steps) {
  std::vector<std::string> rows;
  for (std::size_t k = 0; k < steps; ++k) {
    auto b = t.step();
    rows.push_back(loss_csv_row(t.step_count(), b));
  }
  return rows;
}

std::vector<Matrix> values(const Model& m) {
  std::vector<Matrix> out;
  for (const auto* p : m.parameters()) out.push_back(p->value);
  return out;
}

// Model whose bank is the identity over the first classes of each task.
Model orthogonal_model(const TaskSchema& s) {
  TrainConfig c = small_config();
  c.dim_task = 4;
  Model m = Model::create(s, c, 8);
  for (std::size_t t = 0; t < s.task_count(); ++t)
    for (std::size_t k = 0; k < s.class_count(t); ++k) {
      std::vector<real> e(4, 0.0);
      e[k] = 1.0;
      m.bank.set_prototype(t, k, e);
    }
  return m;
}

}  // namespace

TEST_CASE("AdamW decoupled decay with zero gradients") {
  diff::Parameter w("w", Matrix{{1.0, -2.0, 3.0}}, true);
  diff::Parameter b("b", Matrix{{0.5, 0.25}}, false);
  AdamW opt(AdamWConfig{0.1, 0.01, 0.9, 0.999, 1e-8});
  std::vector<diff::Parameter*> ps{&w, &b};
  opt.step(ps);
  const double f = 1.0 - 0.1 * 0.01;
  CHECK(w.value == Matrix{{1.0 * f, -2.0 * f, 3.0 * f}});
  CHECK(b.value == Matrix{{0.5, 0.25}});
  CHECK(opt.steps() == 1);
}

TEST_CASE("AdamW first step moves each entry by lr against the gradient sign") {
  diff::Parameter w("w", Matrix{{1.0, -2.0}}, false);
  w.grad = Matrix{{3.0, -0.5}};
  AdamW opt(AdamWConfig{0.01, 0.0, 0.9, 0.999, 1e-12});
  std::vector<diff::Parameter*> ps{&w};
  opt.step(ps);
  CHECK(w.value(0, 0) == doctest::Approx(0.99).epsilon(1e-9));
  CHECK(w.value(0, 1) == doctest::Approx(-1.99).epsilon(1e-9));
  AdamW back = AdamW::from_json(opt.to_json(), opt.config());
  CHECK(back.to_json() == opt.to_json());
}

TEST_CASE("learning rate zero leaves trainable parameters unchanged but updates prototypes") {
  const Dataset d = small_data(64, 1);
  TrainConfig c = small_config();
  c.learning_rate = 0.0;
  Trainer t(d, c);
  const auto before = values(t.model());
  const PrototypeBank bank_before = t.model().bank;
  run_rows(t, 10);
  CHECK(values(t.model()) == before);
  CHECK_FALSE(t.model().bank == bank_before);
  for (std::size_t task = 0; task < 3; ++task)
    for (bool b : t.model().bank.initialized_mask(task)) CHECK(b);
}

TEST_CASE("prototypes are not trainable parameters") {
  const Dataset d = small_data(64, 2);
  Trainer t(d, small_config());
  t.step();
  const Model& m = t.model();
  std::size_t total = 0;
  for (const auto* p : m.parameters()) {
    total += p->size();
    for (std::size_t task = 0; task < 3; ++task) CHECK(&p->value != &m.bank.prototypes(task));
  }
  CHECK(total == m.encoder.count_parameters() + m.heads.count_parameters() + m.caption.count_parameters());
}

TEST_CASE("training is deterministic and resumes exactly") {
  const Dataset d = small_data(80, 3);
  Trainer a(d, small_config(5)), b(d, small_config(5));
  const auto ra = run_rows(a, 12), rb = run_rows(b, 12);
  CHECK(ra == rb);

  Trainer first(d, small_config(5));
  auto head = run_rows(first, 5);
  const nlohmann::json ckpt = nlohmann::json::parse(first.checkpoint().dump());
  Trainer resumed(d, ckpt);
  CHECK(resumed.step_count() == 5);
  auto tail = run_rows(resumed, 7);
  head.insert(head.end(), tail.begin(), tail.end());
  CHECK(head == ra);
  CHECK(resumed.checkpoint() == a.checkpoint());

  nlohmann::json bad = ckpt;
  bad["version"] = 99;
  CHECK_THROWS_AS(Trainer(d, bad), VersionError);
  bad.erase("version");
  CHECK_THROWS_AS(model_from_checkpoint(bad), VersionError);
}

TEST_CASE("run_training writes the loss log and checkpoints") {
  const Dataset d = small_data(64, 4);
  SUBCASE("max_steps = 0 saves the initialisation") {
    Trainer t(d, small_config(9));
    const nlohmann::json out = run_training(t, 0, {});
    const Model init = Model::create(d.schema, small_config(9), 8);
    CHECK(model_from_checkpoint(out).to_json() == init.to_json());
  }
  SUBCASE("loss CSV total is the sum of its parts") {
    const std::string csv = tmp_path("loss.csv"), ck = tmp_path("ckpt.json");
    Trainer t(d, small_config(1));
    std::size_t calls = 0;
    run_training(t, 15, RunOptions{csv, ck, [&](std::size_t, const LossBreakdown&) { ++calls; }});
    CHECK(calls == 15);
    std::istringstream in(read_file(csv));
    std::string line;
    std::getline(in, line);
    CHECK(line == loss_csv_header(d.schema));
    CHECK(line == "step,meta,scl_gender,scl_age,scl_emotion,pal_speech,pal_text,total");
    std::size_t rows = 0;
    while (std::getline(in, line)) {
      std::vector<double> v;
      std::stringstream ss(line);
      std::string cell;
      while (std::getline(ss, cell, ',')) v.push_back(std::stod(cell));
      REQUIRE(v.size() == 8);
      CHECK(v[0] == double(++rows));
      double sum = 0;
      for (std::size_t k = 1; k < 7; ++k) sum += v[k];
      CHECK(std::abs(sum - v[7]) < 1e-9);
    }
    CHECK(rows == 15);
    CHECK(read_json(ck).at("step") == 15);
  }
}

TEST_CASE("non-finite losses name the component") {
  const Dataset d = small_data(32, 5);
  Model m = Model::create(d.schema, small_config(), 8);
  m.encoder.parameters().front()->value(0, 0) = std::numeric_limits<double>::quiet_NaN();
  std::span<const LabeledSample> batch(d.samples.data(), 8);
  try {
    compute_losses(m, batch, false);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("'meta'") != std::string::npos);
  }
}

TEST_CASE("too few samples for one batch is rejected") {
  const Dataset d = small_data(6, 6);
  CHECK_THROWS_AS(Trainer(d, small_config()), ValidationError);
}

TEST_CASE("loss falls over training (median of three seeds)") {
  const Dataset d = small_data(400, 7);
  std::vector<double> early, late;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    TrainConfig c = small_config(seed);
    c.learning_rate = 2e-3;
    Trainer t(d, c);
    double at10 = 0, at500 = 0;
    for (std::size_t k = 1; k <= 500; ++k) {
      const double total = t.step().total;
      if (k == 10) at10 = total;
      if (k == 500) at500 = total;
    }
    early.push_back(at10);
    late.push_back(at500);
  }
  std::sort(early.begin(), early.end());
  std::sort(late.begin(), late.end());
  CHECK(late[1] < early[1]);
}

TEST_CASE("nearest prototype") {
  const TaskSchema s = schema3();
  Model m = orthogonal_model(s);
  for (std::size_t t = 0; t < 3; ++t)
    for (std::size_t k = 0; k < s.class_count(t); ++k) {
      std::vector<real> z(4, 0.0);
      z[k] = 2.5;
      const auto p = nearest_prototype(m.bank, t, z);
      CHECK(p.cls == k);
      CHECK(p.score == 1.0);
    }
  // Equidistant from classes 1 and 2: the lower index wins.
  CHECK(nearest_prototype(m.bank, 1, std::vector<real>{0.0, 1.0, 1.0, 0.0}).cls == 1);
  CHECK(nearest_prototype(m.bank, 2, std::vector<real>{1.0, 1.0, 1.0, 1.0}).cls == 0);

  Model fresh = Model::create(s, small_config(), 8);
  CHECK_THROWS_AS(nearest_prototype(fresh.bank, 0, std::vector<real>(4, 1.0)), ValidationError);

  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t task = trial % 3;
    Matrix p = oracle::random_matrix(s.class_count(task), 4, rng);
    for (std::size_t k = 0; k < p.rows(); ++k) m.bank.set_prototype(task, k, p.row(k));
    Matrix z = oracle::random_matrix(1, 4, rng);
    std::vector<real> zv(z.data().begin(), z.data().end());
    std::size_t best = 0;
    double best_s = -2;
    for (std::size_t k = 0; k < p.rows(); ++k) {
      const double c = oracle::cos(zv, oracle::rows_of(p)[k]);
      if (c > best_s) best_s = c, best = k;
    }
    const auto got = nearest_prototype(m.bank, task, zv);
    CHECK(got.cls == best);
    CHECK(std::abs(got.score - best_s) < 1e-12);
    const double scale = std::uniform_real_distribution<double>(1e-3, 1e3)(rng);
    for (auto& x : zv) x *= scale;
    CHECK(nearest_prototype(m.bank, task, zv).cls == best);
  }
}

TEST_CASE("style vectors") {
  StyleVector v({{1.0, 2.0}, {3.0, 4.0}, {5.0, 6.0}});
  CHECK(v.concat() == std::vector<real>{1, 2, 3, 4, 5, 6});
  CHECK(StyleVector::from_concat(v.concat(), 3, 2) == v);
  CHECK_THROWS(StyleVector::from_concat(std::vector<real>{1, 2, 3}, 2, 2));

  const TaskSchema one({{"gender", {"female", "male"}}});
  const Dataset d = small_data(4, 12, one);
  Model m = Model::create(one, small_config(), 8);
  const auto styles = extract_styles(m, d.samples);
  const Embeddings e = embed(m, d.samples);
  for (std::size_t i = 0; i < 4; ++i) {
    REQUIRE(styles[i].task_count() == 1);
    const auto row = e.tasks[0].row(i);
    CHECK(std::equal(row.begin(), row.end(), styles[i].slice(0).begin()));
    CHECK(extract_style(m, d.samples[i]) == styles[i]);
  }
}

TEST_CASE("embedding CSV round trip") {
  const TaskSchema s = schema3();
  const Dataset d = small_data(10, 13);
  Model m = Model::create(s, small_config(), 8);
  const auto rows = embedding_rows(m, d.samples, "test");
  const std::string path = tmp_path("emb.csv");
  write_embedding_csv(path, s, rows);
  std::string header;
  std::getline(std::istringstream(read_file(path)) >> std::ws, header);
  CHECK(header.rfind("id,split,meta_0,", 0) == 0);
  CHECK(header.find(",emotion_3") != std::string::npos);
  const auto back = read_embedding_csv(path, s);
  REQUIRE(back.size() == rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    CHECK(back[i].id == rows[i].id);
    CHECK(back[i].split == "test");
    for (std::size_t k = 0; k < rows[i].meta.size(); ++k)
      CHECK(back[i].meta[k] == doctest::Approx(rows[i].meta[k]).epsilon(1e-8));
    const auto a = rows[i].style.concat(), b = back[i].style.concat();
    for (std::size_t k = 0; k < a.size(); ++k) CHECK(b[k] == doctest::Approx(a[k]).epsilon(1e-8));
  }
}

TEST_CASE("manipulation") {
  const TaskSchema s = schema3();
  Model m = orthogonal_model(s);
  std::mt19937_64 rng(14);
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<std::vector<real>> slices;
    for (std::size_t t = 0; t < 3; ++t) {
      Matrix r = oracle::random_matrix(1, 4, rng);
      slices.emplace_back(r.data().begin(), r.data().end());
    }
    const StyleVector style(slices);
    const std::size_t task = trial % 3, target = trial % s.class_count(task);

    const Manipulation none = manipulate(m, style, task, target, 0.0);
    CHECK(none.style == style);

    const Manipulation full = manipulate(m, style, task, target, 1.0);
    CHECK(full.report.manip_sim == 1.0);
    CHECK(full.report.reclass_hit);
    CHECK(full.report.other_tasks_stable);
    CHECK(full.report.task == s.task(task).name);
    CHECK(full.report.target_class == target);
    CHECK(full.report.source_class == nearest_prototype(m.bank, task, style.slice(task)).cls);
    for (std::size_t t = 0; t < 3; ++t)
      if (t != task) CHECK(std::ranges::equal(full.style.slice(t), style.slice(t)));
    CHECK(oracle::cos(std::vector<real>(full.style.slice(task).begin(), full.style.slice(task).end()),
                      std::vector<real>(style.slice(task).begin(), style.slice(task).end())) > -1.0);
    double n0 = 0, n1 = 0;
    for (double x : style.slice(task)) n0 += x * x;
    for (double x : full.style.slice(task)) n1 += x * x;
    CHECK(std::sqrt(n1) == doctest::Approx(std::sqrt(n0)).epsilon(1e-12));

    const Manipulation half = manipulate(m, style, task, target, 0.5);
    CHECK(half.report.manip_sim >= half.report.orig_sim - 1e-12);
  }
  CHECK_THROWS_AS(manipulate(m, StyleVector({{1, 0, 0, 0}, {1, 0, 0, 0}, {1, 0, 0, 0}}), 0, 1, 1.5), ValidationError);
  CHECK_THROWS(manipulate(m, StyleVector({{1, 0, 0, 0}, {1, 0, 0, 0}, {1, 0, 0, 0}}), 0, 7, 1.0));
}

TEST_CASE("manipulation summary") {
  const TaskSchema s = schema3();
  std::vector<ManipulationReport> reports{{"age", 0, 1, 0.2, 0.9, true, true},
                                          {"age", 1, 2, 0.4, 0.7, false, true},
                                          {"gender", 0, 1, 0.1, 1.0, true, true}};
  const auto rows = summarize(s, reports);
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].task == "gender");
  CHECK(rows[1].task == "age");
  CHECK(rows[1].orig_sim == doctest::Approx(0.3));
  CHECK(rows[1].manip_sim == doctest::Approx(0.8));
  CHECK(rows[1].accuracy == 0.5);
  CHECK(rows[1].count == 2);
  const std::string path = tmp_path("manip.csv");
  write_manipulation_csv(path, rows);
  CHECK(read_file(path).rfind("task,orig_sim,manip_sim,accuracy\n", 0) == 0);
}

TEST_CASE("caption classification reports only the named tasks") {
  const TaskSchema s = schema3();
  Model m = orthogonal_model(s);
  const auto r = classify_caption(m, "a happy voice");
  CHECK_FALSE(r[0].has_value());
  CHECK_FALSE(r[1].has_value());
  REQUIRE(r[2].has_value());
  CHECK(classify_caption(m, "a happy voice")[2] == r[2]);
  for (const auto& v : classify_caption(m, "a voice")) CHECK_FALSE(v.has_value());
  CHECK_THROWS_AS(classify_caption(m, "a happy sad voice"), ParseError);
}
