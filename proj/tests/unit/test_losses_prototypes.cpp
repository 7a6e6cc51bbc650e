#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>
#include <random>

#include "doctest.h"
#include "parameta/errors.hpp"
#include "parameta/losses.hpp"
#include "parameta/prototypes.hpp"
#include "support/oracles.hpp"

using namespace parameta;
using diff::Graph;
using diff::Var;

namespace {

TaskSchema schema2() { return TaskSchema({{"gender", {"female", "male"}}, {"emotion", {"neutral", "happy", "sad"}}}); }

TaskSchema schema3() {
  return TaskSchema({{"gender", {"female", "male"}},
                     {"age", {"young", "adult", "senior"}},
                     {"emotion", {"neutral", "happy", "sad", "angry"}}});
}

std::vector<LabelRow> random_rows(const TaskSchema& s, std::size_t B, std::mt19937_64& rng, double p_missing) {
  std::vector<LabelRow> rows(B, LabelRow(s.task_count()));
  for (std::size_t t = 0; t < s.task_count(); ++t) {
    auto col = oracle::random_labels(B, s.class_count(t), rng, p_missing);
    for (std::size_t i = 0; i < B; ++i) rows[i][t] = col[i];
  }
  return rows;
}

double meta_of(const Matrix& x, const std::vector<LabelRow>& y, const TaskSchema& s, double tau = 1.0) {
  Graph g;
  return meta_loss(g.constant(x), pair_similarity_weights(y, s), tau).item();
}

double scl_of(const Matrix& z, const std::vector<ClassLabel>& y, DenominatorMode mode, double tau = 1.0) {
  Graph g;
  return supervised_contrastive_loss(g.constant(z), y, tau, mode).item();
}

double pal_of(const Matrix& z, const std::vector<ClassLabel>& y, const Matrix& p, const std::vector<bool>& active = {},
              std::size_t batch = 0) {
  Graph g;
  return prototype_alignment_loss(g.constant(z), y, p, active, batch).item();
}

Matrix permute_rows(const Matrix& m, const std::vector<std::size_t>& perm) {
  Matrix out(m.rows(), m.cols());
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) out(i, j) = m(perm[i], j);
  return out;
}

template <class T>
std::vector<T> permute(const std::vector<T>& v, const std::vector<std::size_t>& perm) {
  std::vector<T> out;
  for (std::size_t i : perm) out.push_back(v[i]);
  return out;
}

Matrix scaled(Matrix m, double s) {
  for (auto& x : m.data()) x *= s;
  return m;
}

const DenominatorMode kModes[] = {DenominatorMode::as_written, DenominatorMode::standard};

}  // namespace

TEST_CASE("pair weights") {
  const TaskSchema s = schema2();
  std::vector<LabelRow> y{{0, 1}, {0, 2}, {0, 1}};
  PairWeights pw = pair_similarity_weights(y, s);
  CHECK(pw.w(0, 1) == 0.5);
  CHECK(pw.w(0, 2) == 1.0);
  CHECK(pw.w_hat(0, 1) == doctest::Approx(1.0 / 3).epsilon(1e-15));
  CHECK(pw.w_hat(0, 2) == doctest::Approx(2.0 / 3).epsilon(1e-15));
  CHECK(pw.w_hat(0, 0) == 0.0);

  // Only tasks labelled for both samples count.
  std::vector<LabelRow> partial{{0, std::nullopt}, {0, 2}, {std::nullopt, std::nullopt}};
  PairWeights pp = pair_similarity_weights(partial, s);
  CHECK(pp.w(0, 1) == 1.0);
  CHECK(pp.w(0, 2) == 0.0);
  CHECK_FALSE(pp.valid_row[2]);

  CHECK_THROWS_AS(pair_similarity_weights(std::vector<LabelRow>{{0, 1}}, s), DegenerateBatchError);

  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 100; ++trial) {
    const auto rows = random_rows(schema3(), 2 + trial % 9, rng, 0.3);
    PairWeights r = pair_similarity_weights(rows, schema3());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      double sum = 0;
      for (std::size_t j = 0; j < rows.size(); ++j) {
        CHECK(r.w(i, j) == r.w(j, i));
        CHECK(r.w(i, j) == doctest::Approx(i == j ? 0.0 : oracle::pair_weight(rows[i], rows[j])));
        sum += r.w_hat(i, j);
      }
      if (r.valid_row[i]) CHECK(std::abs(sum - 1.0) <= 1e-12);
      else CHECK(sum == 0.0);
    }
  }
}

TEST_CASE("META loss") {
  const TaskSchema s = schema3();
  std::mt19937_64 rng(2);

  SUBCASE("B=2 with overlapping labels is zero") {
    for (int trial = 0; trial < 20; ++trial) {
      Matrix x = oracle::random_matrix(2, 5, rng);
      CHECK(std::abs(meta_of(x, {{0, 1, 2}, {0, 2, 2}}, s)) < 1e-15);
    }
  }
  SUBCASE("no label overlap anywhere is zero") {
    Matrix x = oracle::random_matrix(4, 5, rng);
    std::vector<LabelRow> y{{0, std::nullopt, std::nullopt},
                            {std::nullopt, 1, std::nullopt},
                            {std::nullopt, std::nullopt, 2},
                            {std::nullopt, std::nullopt, std::nullopt}};
    CHECK(meta_of(x, y, s) == 0.0);
  }
  SUBCASE("matches scalar recomputation") {
    for (int trial = 0; trial < 50; ++trial) {
      const std::size_t B = 2 + trial % 7;
      Matrix x = oracle::random_matrix(B, 6, rng);
      const auto y = random_rows(s, B, rng, 0.25);
      const double tau = trial % 2 ? 1.0 : 0.5;
      CHECK(std::abs(meta_of(x, y, s, tau) - oracle::meta(oracle::rows_of(x), y, tau)) < 1e-10);
    }
  }
  SUBCASE("permutation and scale invariance") {
    for (int trial = 0; trial < 30; ++trial) {
      const std::size_t B = 3 + trial % 6;
      Matrix x = oracle::random_matrix(B, 6, rng);
      const auto y = random_rows(s, B, rng, 0.2);
      std::vector<std::size_t> perm(B);
      std::iota(perm.begin(), perm.end(), 0);
      std::shuffle(perm.begin(), perm.end(), rng);
      const double base = meta_of(x, y, s);
      CHECK(std::abs(meta_of(permute_rows(x, perm), permute(y, perm), s) - base) < 1e-10);
      CHECK(std::abs(meta_of(scaled(x, 3.0), y, s) - base) < 1e-10);
    }
  }
  SUBCASE("moving a fully matching pair closer lowers the loss") {
    std::vector<LabelRow> y{{0, 0, 0}, {0, 0, 0}, {1, 2, 3}};
    Matrix before{{1.0, 0.0}, {0.0, 1.0}, {-1.0, 0.2}};
    Matrix after{{1.0, 0.0}, {0.8, 0.6}, {-1.0, 0.2}};
    CHECK(meta_of(after, y, s) < meta_of(before, y, s));
  }
  SUBCASE("raising the weight of the closest pair never increases the loss") {
    // Samples 0 and 1 are the closest pair; 2 sits apart.
    Matrix x{{1.0, 0.0}, {0.95, 0.3}, {-0.2, 1.0}};
    double prev = std::numeric_limits<double>::infinity();
    // Labels of sample 1 share 0, 1, 2, then 3 tasks with sample 0.
    const std::vector<LabelRow> steps{{1, 2, 3}, {0, 2, 3}, {0, 0, 3}, {0, 0, 0}};
    for (const auto& y1 : steps) {
      const double v = meta_of(x, {{0, 0, 0}, y1, {1, 1, 1}}, s);
      CHECK(v <= prev + 1e-15);
      prev = v;
    }
  }
  SUBCASE("gradient matches finite differences") {
    Matrix x = oracle::random_matrix(6, 4, rng);
    const auto y = random_rows(s, 6, rng, 0.2);
    const PairWeights pw = pair_similarity_weights(y, s);
    Graph g;
    Var v = g.variable(x);
    g.backward(meta_loss(v, pw));
    Matrix num = oracle::numeric_gradient(x, [&] { return meta_of(x, y, s); });
    CHECK(oracle::max_relative_error(*v.grad(), num) < 1e-6);
  }
}

TEST_CASE("supervised contrastive loss") {
  std::mt19937_64 rng(3);

  SUBCASE("B=2 same class with z1 = z2 is zero as written") {
    Matrix z{{0.3, -1.2, 0.5}, {0.3, -1.2, 0.5}};
    CHECK(std::abs(scl_of(z, {1, 1}, DenominatorMode::as_written)) < 1e-15);
  }
  SUBCASE("every sample a distinct class is zero") {
    Matrix z = oracle::random_matrix(4, 3, rng);
    for (auto mode : kModes) CHECK(scl_of(z, {0, 1, 2, 3}, mode) == 0.0);
    CHECK(scl_of(z, {std::nullopt, 1, std::nullopt, 1}, DenominatorMode::standard) != 0.0);
  }
  SUBCASE("matches scalar recomputation in both modes") {
    for (int trial = 0; trial < 60; ++trial) {
      const std::size_t B = trial < 30 ? 5 : 2 + trial % 8;
      const std::size_t C = trial < 30 ? 2 : 1 + trial % 4;
      Matrix z = oracle::random_matrix(B, 4, rng);
      const auto y = oracle::random_labels(B, C, rng, trial < 30 ? 0.0 : 0.25);
      for (auto mode : kModes) {
        const double tau = trial % 3 ? 1.0 : 0.3;
        CHECK(std::abs(scl_of(z, y, mode, tau) -
                       oracle::scl(oracle::rows_of(z), y, tau, mode == DenominatorMode::as_written)) < 1e-10);
      }
    }
  }
  SUBCASE("permutation and scale invariance") {
    for (int trial = 0; trial < 30; ++trial) {
      const std::size_t B = 3 + trial % 6;
      Matrix z = oracle::random_matrix(B, 4, rng);
      const auto y = oracle::random_labels(B, 3, rng, 0.2);
      std::vector<std::size_t> perm(B);
      std::iota(perm.begin(), perm.end(), 0);
      std::shuffle(perm.begin(), perm.end(), rng);
      for (auto mode : kModes) {
        const double base = scl_of(z, y, mode);
        CHECK(std::abs(scl_of(permute_rows(z, perm), permute(y, perm), mode) - base) < 1e-10);
        CHECK(std::abs(scl_of(scaled(z, 3.0), y, mode) - base) < 1e-10);
      }
    }
  }
  SUBCASE("gradient matches finite differences in both modes") {
    for (auto mode : kModes) {
      Matrix z = oracle::random_matrix(7, 3, rng);
      const auto y = oracle::random_labels(7, 3, rng, 0.15);
      Graph g;
      Var v = g.variable(z);
      g.backward(supervised_contrastive_loss(v, y, 1.0, mode));
      Matrix num = oracle::numeric_gradient(z, [&] { return scl_of(z, y, mode); });
      CHECK(oracle::max_relative_error(*v.grad(), num) < 1e-6);
    }
  }
  SUBCASE("task sum") {
    const TaskSchema s = schema3();
    for (int trial = 0; trial < 20; ++trial) {
      const std::size_t B = 6;
      const auto y = random_rows(s, B, rng, 0.2);
      std::vector<Matrix> zs;
      for (std::size_t t = 0; t < 3; ++t) zs.push_back(oracle::random_matrix(B, 3, rng));
      for (auto mode : kModes) {
        Graph g;
        std::vector<Var> vars;
        for (const auto& z : zs) vars.push_back(g.constant(z));
        double expected = 0;
        for (std::size_t t = 0; t < 3; ++t) expected += scl_of(zs[t], task_column(y, t), mode);
        CHECK(std::abs(scl_total(vars, y, 1.0, mode).item() - expected) < 1e-12);
        // A single task reduces to that task's loss.
        std::vector<LabelRow> one;
        for (const auto& row : y) one.push_back({row[0]});
        CHECK(scl_total(std::span<const Var>(vars.data(), 1), one, 1.0, mode).item() ==
              doctest::Approx(scl_of(zs[0], task_column(y, 0), mode)).epsilon(1e-15));
      }
    }
    // Every task at a zero-loss condition.
    Graph g;
    std::vector<Var> vars(3, g.constant(oracle::random_matrix(3, 2, rng)));
    CHECK(scl_total(vars, std::vector<LabelRow>{{0, 0, 0}, {1, 1, 1}, {std::nullopt, 2, 3}}).item() == 0.0);
  }
}

TEST_CASE("prototype alignment loss") {
  std::mt19937_64 rng(4);
  const Matrix protos{{1.0, 0.0, 0.0}, {0.0, 1.0, 0.0}, {0.0, 0.0, 2.0}};

  SUBCASE("z equal to its prototype gives zero") {
    Matrix z{{0.0, 1.0, 0.0}, {1.0, 0.0, 0.0}, {0.0, 0.0, 2.0}};
    CHECK(std::abs(pal_of(z, {1, 0, 2}, protos)) < 1e-15);
  }
  SUBCASE("orthogonal to its prototype gives labelled count over B") {
    Matrix z{{1.0, 0.0, 0.0}, {0.0, 5.0, 0.0}, {0.0, 0.0, 1.0}, {3.0, 0.0, 0.0}};
    CHECK(pal_of(z, {1, 2, std::nullopt, 2}, protos) == doctest::Approx(3.0 / 4).epsilon(1e-15));
    // An explicit batch size changes only the denominator.
    CHECK(pal_of(z, {1, 2, std::nullopt, 2}, protos, {}, 6) == doctest::Approx(3.0 / 6).epsilon(1e-15));
  }
  SUBCASE("matches scalar recomputation") {
    for (int trial = 0; trial < 50; ++trial) {
      const std::size_t B = 1 + trial % 8;
      Matrix z = oracle::random_matrix(B, 4, rng);
      Matrix p = oracle::random_matrix(3, 4, rng);
      const auto y = oracle::random_labels(B, 3, rng, 0.3);
      std::vector<bool> active{trial % 2 == 0, true, trial % 3 != 0};
      CHECK(std::abs(pal_of(z, y, p, active) - oracle::pal(oracle::rows_of(z), y, oracle::rows_of(p), active, B)) <
            1e-12);
    }
  }
  SUBCASE("gradient with respect to z") {
    Matrix z = oracle::random_matrix(5, 3, rng);
    const auto y = oracle::random_labels(5, 3, rng);
    Graph g;
    Var v = g.variable(z);
    g.backward(prototype_alignment_loss(v, y, protos));
    Matrix num = oracle::numeric_gradient(z, [&] { return pal_of(z, y, protos); });
    CHECK(oracle::max_relative_error(*v.grad(), num) < 1e-6);
  }
  SUBCASE("label out of range") {
    Graph g;
    CHECK_THROWS(prototype_alignment_loss(g.constant(Matrix(2, 3)), std::vector<ClassLabel>{0, 3}, protos));
  }
}

TEST_CASE("total loss is the unweighted sum") {
  Graph g;
  std::vector<Var> zeros(3, g.constant(Matrix(1, 1)));
  TotalLoss zero = total_loss(zeros[0], zeros, zeros[0], zeros[0]);
  CHECK(zero.total.item() == 0.0);

  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    auto c = [&] { return g.constant(oracle::random_matrix(1, 1, rng, 0.0, 5.0)); };
    std::vector<Var> scl{c(), c(), c()};
    TotalLoss t = total_loss(c(), scl, c(), c());
    const auto& b = t.breakdown;
    double sum = b.meta + b.pal_speech + b.pal_text;
    for (double v : b.scl_per_task) sum += v;
    CHECK(std::abs(t.total.item() - sum) < 1e-12);
    CHECK(b.total == t.total.item());
  }
}

TEST_CASE("batch centroids") {
  Matrix z{{1.0, 2.0}, {-1.0, -2.0}, {4.0, 0.5}, {7.0, 7.0}};
  Centroids c = batch_centroids(z, std::vector<ClassLabel>{0, 0, 2, std::nullopt}, 4);
  REQUIRE(c[0].has_value());
  CHECK((*c[0])[0] == 0.0);
  CHECK((*c[0])[1] == 0.0);
  CHECK_FALSE(c[1].has_value());
  CHECK(*c[2] == std::vector<real>{4.0, 0.5});
  CHECK_FALSE(c[3].has_value());

  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 30; ++trial) {
    Matrix x = oracle::random_matrix(9, 3, rng);
    const auto y = oracle::random_labels(9, 4, rng, 0.2);
    Centroids got = batch_centroids(x, y, 4);
    for (std::size_t k = 0; k < 4; ++k) {
      std::vector<double> acc(3, 0.0);
      int n = 0;
      for (std::size_t i = 0; i < 9; ++i)
        if (y[i] == k) {
          ++n;
          for (std::size_t j = 0; j < 3; ++j) acc[j] += x(i, j);
        }
      REQUIRE(got[k].has_value() == (n > 0));
      for (std::size_t j = 0; n && j < 3; ++j) CHECK(std::abs((*got[k])[j] - acc[j] / n) < 1e-12);
    }
  }
}

TEST_CASE("prototype bank EMA") {
  const TaskSchema s = schema2();
  std::mt19937_64 rng(7);
  PrototypeBank bank(s, 4, 0.99, rng);
  for (std::size_t t = 0; t < 2; ++t) {
    CHECK(bank.prototypes(t).rows() == s.class_count(t));
    for (double v : bank.prototypes(t).data()) CHECK(std::abs(v) <= 0.1);
    for (bool b : bank.initialized_mask(t)) CHECK_FALSE(b);
  }

  SUBCASE("direct substitution") {
    bank.set_prototype(0, 0, std::vector<real>(4, 0.0), false);
    Centroids c(2);
    c[0] = std::vector<real>(4, 1.0);
    const Matrix other = bank.prototypes(0);
    bank.ema_update(0, c);
    for (double v : bank.prototype(0, 0)) CHECK(v == doctest::Approx(0.01).epsilon(1e-14));
    CHECK(bank.initialized(0, 0));
    CHECK_FALSE(bank.initialized(0, 1));
    for (std::size_t j = 0; j < 4; ++j) CHECK(bank.prototypes(0)(1, j) == other(1, j));
  }
  SUBCASE("closed form after 50 constant updates") {
    std::vector<real> p0(bank.prototype(1, 2).begin(), bank.prototype(1, 2).end());
    const std::vector<real> target{0.5, -1.0, 2.0, 0.25};
    Centroids c(3);
    c[2] = target;
    for (int k = 0; k < 50; ++k) bank.ema_update(1, c);
    const double mk = std::pow(0.99, 50);
    for (std::size_t j = 0; j < 4; ++j) CHECK(std::abs(bank.prototype(1, 2)[j] - (mk * p0[j] + (1 - mk) * target[j])) < 1e-10);
  }
  SUBCASE("contraction toward the centroid") {
    for (int trial = 0; trial < 100; ++trial) {
      const double m = std::uniform_real_distribution<double>(0.0, 0.999)(rng);
      PrototypeBank b(s, 3, m, rng);
      Matrix z = oracle::random_matrix(1, 3, rng);
      Centroids c(2);
      c[1] = std::vector<real>(z.data().begin(), z.data().end());
      auto dist = [&] {
        double d = 0;
        for (std::size_t j = 0; j < 3; ++j) d += std::pow(b.prototype(0, 1)[j] - z(0, j), 2);
        return std::sqrt(d);
      };
      const double before = dist();
      b.ema_update(0, c);
      CHECK(dist() < before);
    }
  }
  SUBCASE("statistical convergence to the true centroid") {
    const std::vector<real> truth{1.0, -0.5, 0.75, 0.2};
    std::normal_distribution<double> noise(0.0, 0.5);
    const auto start = bank.prototype(0, 1);
    double initial = 0;
    for (std::size_t j = 0; j < 4; ++j) initial += std::pow(start[j] - truth[j], 2);
    for (int step = 0; step < 1000; ++step) {
      Matrix z(16, 4);
      for (std::size_t i = 0; i < 16; ++i)
        for (std::size_t j = 0; j < 4; ++j) z(i, j) = truth[j] + noise(rng);
      bank.ema_update(0, batch_centroids(z, std::vector<ClassLabel>(16, ClassLabel(1)), 2));
    }
    double final_d = 0;
    for (std::size_t j = 0; j < 4; ++j) final_d += std::pow(bank.prototype(0, 1)[j] - truth[j], 2);
    CHECK(std::sqrt(final_d) < 0.1 * std::sqrt(initial));
  }
  SUBCASE("dimension mismatch") {
    Centroids c(2);
    c[0] = std::vector<real>(3, 1.0);
    CHECK_THROWS_AS(bank.ema_update(0, c), DimensionError);
  }
}

TEST_CASE("prototype bank persistence") {
  const TaskSchema s = schema2();
  std::mt19937_64 rng(8);
  PrototypeBank bank(s, 3, 0.9, rng);
  bank.set_prototype(1, 2, std::vector<real>{0.1234567890123, -2.0, 1e-17});
  const std::string path = (std::filesystem::temp_directory_path() / "parameta_test_bank.json").string();
  save_bank(bank, path);
  CHECK(load_bank(path, s) == bank);

  const nlohmann::json j = bank.to_json();
  CHECK(j.at("version") == 1);
  CHECK(j.at("prototypes").at("emotion").size() == 3);
  CHECK(j.at("initialized").at("emotion")[2] == true);
  CHECK_THROWS_AS(load_bank(path, schema3()), SchemaError);
  nlohmann::json old = j;
  old["version"] = 0;
  CHECK_THROWS_AS(PrototypeBank::from_json(old), VersionError);
}
