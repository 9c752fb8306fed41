#include <catch_amalgamated.hpp>

#include <cmath>

#include "cil/classifier.hpp"
#include "oracles.hpp"

using cil::AugmentedFeatures;
using cil::ConsolidatedSolution;
using cil::DeclarativeRecord;
using cil::DenseMatrix;
using cil::MemoryStatistic;
using cil::Rng;

namespace {

AugmentedFeatures wrap(DenseMatrix m) {
  AugmentedFeatures a;
  a.z_cols = m.cols();
  a.matrix = std::move(m);
  return a;
}

// One-hot labels over n_cols with the active column cycling through
// class_begin..class_begin+width-1.
DenseMatrix cycling_one_hot(std::size_t rows, std::size_t n_cols, std::size_t class_begin,
                            std::size_t width) {
  DenseMatrix y(rows, n_cols);
  for (std::size_t i = 0; i < rows; ++i) y(i, class_begin + (i % width)) = 1.0;
  return y;
}

struct RandomInstance {
  AugmentedFeatures a;
  DenseMatrix y;
  MemoryStatistic statistic;
  ConsolidatedSolution prev;
};

// A consolidation instance with T-1 synthetic old-task records honoring the
// zero-padding convention.
RandomInstance random_instance(Rng& rng, std::size_t d, std::size_t n_tasks,
                               std::size_t classes_per_task, std::size_t n_rows,
                               double gamma_scale) {
  RandomInstance inst;
  const std::size_t total = n_tasks * classes_per_task;
  inst.a = wrap(oracle::random_matrix(rng, n_rows, d));
  inst.y = cycling_one_hot(n_rows, total, (n_tasks - 1) * classes_per_task, classes_per_task);
  for (std::size_t t = 0; t + 1 < n_tasks; ++t) {
    DeclarativeRecord rec;
    rec.task_id = static_cast<int>(t + 1);
    const std::size_t width = (t + 1) * classes_per_task;
    rec.omega = DenseMatrix(d, width);
    rec.plasticity = DenseMatrix(d, width);
    for (std::size_t c = t * classes_per_task; c < width; ++c) {
      rec.class_ids.push_back(static_cast<int>(c));
      for (std::size_t j = 0; j < d; ++j) {
        rec.omega(j, c) = rng.pm1();
        rec.plasticity(j, c) = rng.unit();
      }
    }
    rec.gamma = gamma_scale * (0.25 + rng.unit());
    rec.n_samples = n_rows;
    inst.statistic.records.push_back(std::move(rec));
  }
  inst.prev.feature_dim = d;
  inst.prev.total_classes = total;
  inst.prev.omega = DenseMatrix(d, total);
  for (std::size_t j = 0; j < d; ++j)
    for (std::size_t c = 0; c + classes_per_task < total; ++c) inst.prev.omega(j, c) = rng.pm1();
  for (std::size_t t = 0; t + 1 < n_tasks; ++t)
    inst.prev.trained_tasks.push_back(static_cast<int>(t + 1));
  return inst;
}

}  // namespace

TEST_CASE("classifier: compute_declarative identities and oracle", "[classifier]") {
  const AugmentedFeatures eye = wrap(DenseMatrix::identity(3));
  const DenseMatrix y = DenseMatrix::identity(3);

  const DeclarativeRecord tight = cil::compute_declarative(eye, y, 1e-12, {0, 1, 2});
  for (std::size_t i = 0; i < 3; ++i)
    CHECK(tight.omega(i, i) == Catch::Approx(1.0).margin(1e-9));

  const DeclarativeRecord half = cil::compute_declarative(eye, y, 1.0, {0, 1, 2});
  for (std::size_t i = 0; i < 3; ++i)
    CHECK(half.omega(i, i) == Catch::Approx(0.5).margin(1e-12));

  Rng rng(41);
  const AugmentedFeatures a = wrap(oracle::random_matrix(rng, 30, 8));
  const DenseMatrix y2 = cycling_one_hot(30, 3, 0, 3);
  const double rho = std::ldexp(1.0, -30);
  const DeclarativeRecord rec = cil::compute_declarative(a, y2, rho, {0, 1, 2});
  const DenseMatrix fit = cil::matmul(a.matrix, rec.omega);
  const DenseMatrix oracle_omega = oracle::ridge_by_inverse(a.matrix, y2, rho);
  const DenseMatrix oracle_fit = cil::matmul(a.matrix, oracle_omega);
  double resid = 0.0, oracle_resid = 0.0;
  for (std::size_t i = 0; i < 30; ++i)
    for (std::size_t c = 0; c < 3; ++c) {
      resid += (fit(i, c) - y2(i, c)) * (fit(i, c) - y2(i, c));
      oracle_resid += (oracle_fit(i, c) - y2(i, c)) * (oracle_fit(i, c) - y2(i, c));
    }
  CHECK(std::abs(std::sqrt(resid) - std::sqrt(oracle_resid)) <= 1e-5);
}

TEST_CASE("classifier: declarative zero columns outside the task", "[classifier]") {
  Rng rng(42);
  const AugmentedFeatures a = wrap(oracle::random_matrix(rng, 20, 5));
  const DenseMatrix y = cycling_one_hot(20, 6, 2, 2);  // classes 2,3 of 6
  const DeclarativeRecord rec = cil::compute_declarative(a, y, 0.01, {2, 3});
  for (std::size_t j = 0; j < 5; ++j)
    for (std::size_t c : {0ul, 1ul, 4ul, 5ul}) CHECK(rec.omega(j, c) == 0.0);
}

TEST_CASE("classifier: compute_plasticity exact cases", "[classifier]") {
  Rng rng(43);
  const AugmentedFeatures a = wrap(oracle::random_matrix(rng, 10, 4));
  const DenseMatrix omega = oracle::random_matrix(rng, 4, 2);
  const DenseMatrix y = cil::matmul(a.matrix, omega);  // zero residual
  const DenseMatrix f = cil::compute_plasticity(a, y, omega);
  for (std::size_t j = 0; j < 4; ++j)
    for (std::size_t c = 0; c < 2; ++c) CHECK(std::abs(f(j, c)) <= 1e-24);

  // single sample, A = [[1, 0]]: F[:, c] = [r^2, 0]
  const AugmentedFeatures single = wrap(DenseMatrix{{1.0, 0.0}});
  const DenseMatrix zero_omega(2, 1);
  DenseMatrix y1(1, 1);
  y1(0, 0) = 0.7;
  const DenseMatrix f1 = cil::compute_plasticity(single, y1, zero_omega);
  CHECK(f1(0, 0) == Catch::Approx(0.49).margin(1e-15));
  CHECK(f1(1, 0) == 0.0);
}

TEST_CASE("classifier: plasticity matches finite-difference Fisher", "[classifier]") {
  Rng rng(44);
  const AugmentedFeatures a = wrap(oracle::random_matrix(rng, 12, 4));
  const DenseMatrix omega = oracle::random_matrix(rng, 4, 2);
  const DenseMatrix y = cycling_one_hot(12, 2, 0, 2);
  const DenseMatrix f = cil::compute_plasticity(a, y, omega);
  const DenseMatrix expect = oracle::fd_fisher(a.matrix, y, omega);
  for (std::size_t j = 0; j < 4; ++j)
    for (std::size_t c = 0; c < 2; ++c) CHECK(f(j, c) == Catch::Approx(expect(j, c)).margin(1e-6));
}

TEST_CASE("classifier: plasticity nonnegative, quadratic residual scaling", "[classifier]") {
  Rng rng(45);
  const AugmentedFeatures a = wrap(oracle::random_matrix(rng, 15, 5));
  const DenseMatrix omega = oracle::random_matrix(rng, 5, 3);
  const DenseMatrix y = cycling_one_hot(15, 3, 0, 3);
  const DenseMatrix f = cil::compute_plasticity(a, y, omega);
  for (std::size_t j = 0; j < 5; ++j)
    for (std::size_t c = 0; c < 3; ++c) CHECK(f(j, c) >= 0.0);

  // scale residuals by s: Y' = A omega + s (Y - A omega)
  const double s = 3.0;
  const DenseMatrix fit = cil::matmul(a.matrix, omega);
  DenseMatrix y_scaled(15, 3);
  for (std::size_t i = 0; i < 15; ++i)
    for (std::size_t c = 0; c < 3; ++c) y_scaled(i, c) = fit(i, c) + s * (y(i, c) - fit(i, c));
  const DenseMatrix f_scaled = cil::compute_plasticity(a, y_scaled, omega);
  for (std::size_t j = 0; j < 5; ++j)
    for (std::size_t c = 0; c < 3; ++c)
      CHECK(f_scaled(j, c) == Catch::Approx(s * s * f(j, c)).margin(1e-10));
}

TEST_CASE("classifier: consolidate with zero plasticity reduces to the anchored ridge",
          "[classifier]") {
  Rng rng(46);
  const std::size_t d = 5;
  const AugmentedFeatures a2 = wrap(oracle::random_matrix(rng, 18, d));
  const DenseMatrix y2 = cycling_one_hot(18, 4, 2, 2);

  DeclarativeRecord first;
  first.task_id = 1;
  first.class_ids = {0, 1};
  first.omega = oracle::random_matrix(rng, d, 2);
  first.plasticity = DenseMatrix(d, 2);  // all-zero F
  first.gamma = 1e4;
  first.n_samples = 18;

  ConsolidatedSolution prev;
  prev.feature_dim = d;
  prev.total_classes = 4;
  prev.trained_tasks = {1};
  prev.omega = DenseMatrix(d, 4);
  for (std::size_t j = 0; j < d; ++j)
    for (std::size_t c = 0; c < 2; ++c) prev.omega(j, c) = first.omega(j, c);

  MemoryStatistic statistic;
  statistic.records.push_back(first);
  const ConsolidatedSolution sol = cil::consolidate(a2, y2, statistic, prev, 1e4, 2);

  // Expected: (A2^T A2 + I)^{-1}(A2^T Y_c + prev_c) per column.
  const DenseMatrix at = cil::transpose(a2.matrix);
  DenseMatrix m = oracle::naive_matmul(at, a2.matrix);
  for (std::size_t j = 0; j < d; ++j) m(j, j) += 1.0;
  const DenseMatrix minv = oracle::explicit_inverse(m);
  DenseMatrix rhs = oracle::naive_matmul(at, y2);
  for (std::size_t j = 0; j < d; ++j)
    for (std::size_t c = 0; c < 4; ++c) rhs(j, c) += prev.omega(j, c);
  const DenseMatrix expect = oracle::naive_matmul(minv, rhs);
  for (std::size_t j = 0; j < d; ++j)
    for (std::size_t c = 0; c < 4; ++c)
      CHECK(sol.omega(j, c) == Catch::Approx(expect(j, c)).margin(1e-10));
  CHECK(sol.trained_tasks == std::vector<int>{1, 2});
}

TEST_CASE("classifier: consolidate with vanishing gammas is a rho=1 ridge", "[classifier]") {
  Rng rng(47);
  const std::size_t d = 6;
  const AugmentedFeatures a = wrap(oracle::random_matrix(rng, 20, d));
  const DenseMatrix y = cycling_one_hot(20, 2, 0, 2);

  DeclarativeRecord rec;
  rec.task_id = 1;
  rec.class_ids = {0, 1};
  rec.omega = oracle::random_matrix(rng, d, 2);
  rec.plasticity = oracle::random_matrix(rng, d, 2);
  for (std::size_t j = 0; j < d; ++j)
    for (std::size_t c = 0; c < 2; ++c) rec.plasticity(j, c) = std::abs(rec.plasticity(j, c));
  rec.gamma = 1e-30;
  MemoryStatistic statistic;
  statistic.records.push_back(rec);

  ConsolidatedSolution prev;
  prev.feature_dim = d;
  prev.total_classes = 2;
  prev.omega = DenseMatrix(d, 2);  // prev = 0

  const ConsolidatedSolution sol = cil::consolidate(a, y, statistic, prev, 1.0, 2);
  const DenseMatrix expect = oracle::ridge_by_inverse(a.matrix, y, 1.0);
  for (std::size_t j = 0; j < d; ++j)
    for (std::size_t c = 0; c < 2; ++c)
      CHECK(sol.omega(j, c) == Catch::Approx(expect(j, c)).margin(1e-8));
}

TEST_CASE("classifier: consolidate equals the dense stationarity solve", "[classifier]") {
  Rng rng(48);
  auto inst = random_instance(rng, 6, 3, 2, 15, 5.0);
  const ConsolidatedSolution sol = cil::consolidate(inst.a, inst.y, inst.statistic, inst.prev, 1.0, 3);
  const DenseMatrix expect =
      oracle::dense_consolidation_solve(inst.a, inst.y, inst.statistic, inst.prev);
  for (std::size_t j = 0; j < 6; ++j)
    for (std::size_t c = 0; c < 6; ++c)
      CHECK(sol.omega(j, c) == Catch::Approx(expect(j, c)).margin(1e-8));
}

TEST_CASE("classifier: consolidate error paths", "[classifier]") {
  Rng rng(49);
  auto inst = random_instance(rng, 4, 2, 2, 10, 1.0);
  const AugmentedFeatures empty = wrap(DenseMatrix(0, 4));
  CHECK_THROWS_AS(cil::consolidate(empty, DenseMatrix(0, 4), inst.statistic, inst.prev, 1.0, 2),
                  cil::EmptyTask);
  CHECK_THROWS_AS(cil::consolidate(inst.a, DenseMatrix(10, 3), inst.statistic, inst.prev, 1.0, 2),
                  cil::DimensionMismatch);
  CHECK_THROWS_AS(cil::consolidate(inst.a, inst.y, inst.statistic, inst.prev, -1.0, 2), cil::Error);
}

TEST_CASE("classifier: stationarity residual at and away from the solution", "[classifier]") {
  Rng rng(50);
  auto inst = random_instance(rng, 8, 3, 2, 20, 10.0);
  const ConsolidatedSolution sol = cil::consolidate(inst.a, inst.y, inst.statistic, inst.prev, 1.0, 3);
  const double at_solution = cil::stationarity_residual(sol, inst.a, inst.y, inst.statistic, inst.prev);
  CHECK(at_solution <= 1e-6);

  ConsolidatedSolution bumped = sol;
  bumped.omega(2, 1) += 0.1;
  CHECK(cil::stationarity_residual(bumped, inst.a, inst.y, inst.statistic, inst.prev) > 0.0);

  ConsolidatedSolution at_prev = sol;
  at_prev.omega = inst.prev.omega;
  const double res_prev =
      cil::stationarity_residual(at_prev, inst.a, inst.y, inst.statistic, inst.prev);
  CHECK(at_solution * 1000.0 <= res_prev);
}

TEST_CASE("classifier: consolidation is class-column separable", "[classifier]") {
  Rng rng(51);
  auto inst = random_instance(rng, 5, 2, 2, 12, 2.0);
  const ConsolidatedSolution sol = cil::consolidate(inst.a, inst.y, inst.statistic, inst.prev, 1.0, 2);

  // permute the class columns of every input
  const std::vector<std::size_t> perm{2, 0, 3, 1};
  auto permute_cols = [&](const DenseMatrix& m) {
    DenseMatrix out(m.rows(), m.cols());
    for (std::size_t i = 0; i < m.rows(); ++i)
      for (std::size_t c = 0; c < m.cols(); ++c) out(i, c) = m(i, perm[c]);
    return out;
  };
  RandomInstance permuted = inst;
  permuted.y = permute_cols(inst.y);
  permuted.prev.omega = permute_cols(inst.prev.omega);
  for (auto& rec : permuted.statistic.records) {
    DenseMatrix omega(rec.omega.rows(), 4), plast(rec.omega.rows(), 4);
    for (std::size_t j = 0; j < rec.omega.rows(); ++j)
      for (std::size_t c = 0; c < 4; ++c) {
        omega(j, c) = perm[c] < rec.omega.cols() ? rec.omega(j, perm[c]) : 0.0;
        plast(j, c) = perm[c] < rec.plasticity.cols() ? rec.plasticity(j, perm[c]) : 0.0;
      }
    rec.omega = omega;
    rec.plasticity = plast;
  }
  const ConsolidatedSolution sol_p =
      cil::consolidate(permuted.a, permuted.y, permuted.statistic, permuted.prev, 1.0, 2);
  for (std::size_t j = 0; j < 5; ++j)
    for (std::size_t c = 0; c < 4; ++c) REQUIRE(sol_p.omega(j, c) == sol.omega(j, perm[c]));
}

TEST_CASE("classifier: single-task reduction", "[classifier]") {
  Rng rng(52);
  const AugmentedFeatures a = wrap(oracle::random_matrix(rng, 25, 6));
  const DenseMatrix y = cycling_one_hot(25, 2, 0, 2);

  MemoryStatistic empty;
  ConsolidatedSolution zero_prev;
  zero_prev.feature_dim = 6;
  zero_prev.total_classes = 2;
  zero_prev.omega = DenseMatrix(6, 2);
  const ConsolidatedSolution consolidated = cil::consolidate(a, y, empty, zero_prev, 1.0, 1);

  // with the identity term accounted for, this is the rho = 1 declarative fit
  const DeclarativeRecord ridge = cil::compute_declarative(a, y, 1.0, {0, 1});
  for (std::size_t j = 0; j < 6; ++j)
    for (std::size_t c = 0; c < 2; ++c)
      CHECK(consolidated.omega(j, c) == Catch::Approx(ridge.omega(j, c)).margin(1e-12));

  const cil::Prediction p1 = cil::predict(a, consolidated);
  ConsolidatedSolution ridge_sol;
  ridge_sol.omega = ridge.omega;
  ridge_sol.feature_dim = 6;
  ridge_sol.total_classes = 2;
  const cil::Prediction p2 = cil::predict(a, ridge_sol);
  REQUIRE(p1.labels == p2.labels);
}

TEST_CASE("classifier: predict argmax and tie breaking", "[classifier]") {
  ConsolidatedSolution eye;
  eye.omega = DenseMatrix::identity(5);
  eye.feature_dim = 5;
  eye.total_classes = 5;
  DenseMatrix row(1, 5);
  row(0, 3) = 1.0;
  const cil::Prediction p = cil::predict(wrap(row), eye);
  CHECK(p.labels[0] == 3);

  // equal maxima at classes 2 and 5 break toward 2
  ConsolidatedSolution wide;
  wide.omega = DenseMatrix(1, 6);
  wide.omega(0, 2) = 7.0;
  wide.omega(0, 5) = 7.0;
  wide.feature_dim = 1;
  wide.total_classes = 6;
  DenseMatrix one(1, 1);
  one(0, 0) = 1.0;
  CHECK(cil::predict(wrap(one), wide).labels[0] == 2);

  Rng rng(53);
  const AugmentedFeatures a = wrap(oracle::random_matrix(rng, 40, 4));
  ConsolidatedSolution sol;
  sol.omega = oracle::random_matrix(rng, 4, 7);
  sol.feature_dim = 4;
  sol.total_classes = 7;
  const cil::Prediction p2 = cil::predict(a, sol);
  const DenseMatrix scores = oracle::naive_matmul(a.matrix, sol.omega);
  for (std::size_t i = 0; i < 40; ++i) {
    int best = 0;
    for (std::size_t c = 1; c < 7; ++c)
      if (scores(i, c) > scores(i, best)) best = static_cast<int>(c);
    REQUIRE(p2.labels[i] == best);
  }

  // positive scaling leaves labels unchanged
  ConsolidatedSolution scaled = sol;
  for (std::size_t j = 0; j < 4; ++j)
    for (std::size_t c = 0; c < 7; ++c) scaled.omega(j, c) *= 42.0;
  REQUIRE(cil::predict(a, scaled).labels == p2.labels);

  CHECK_THROWS_AS(cil::predict(wrap(DenseMatrix(3, 9)), sol), cil::DimensionMismatch);
}

TEST_CASE("classifier: forget_tasks and FIFO statistic", "[classifier]") {
  MemoryStatistic statistic;
  for (int t = 1; t <= 3; ++t) {
    DeclarativeRecord rec;
    rec.task_id = t;
    rec.omega = DenseMatrix(2, 2);
    rec.class_ids = {2 * (t - 1), 2 * t - 1};
    statistic.push(std::move(rec));
  }

  const MemoryStatistic unchanged = cil::forget_tasks(statistic, {});
  REQUIRE(unchanged.records.size() == 3);

  const MemoryStatistic dropped = cil::forget_oldest(statistic, 1);
  REQUIRE(dropped.records.size() == 2);
  CHECK(dropped.records[0].task_id == 2);
  CHECK(dropped.records[1].task_id == 3);

  const MemoryStatistic by_id = cil::forget_tasks(statistic, {2});
  REQUIRE(by_id.records.size() == 2);
  CHECK(by_id.records[0].task_id == 1);
  CHECK(by_id.records[1].task_id == 3);

  CHECK_THROWS_AS(cil::forget_tasks(statistic, {9}), cil::UnknownTask);
  CHECK_THROWS_AS(cil::forget_oldest(statistic, 4), cil::UnknownTask);

  MemoryStatistic capped;
  capped.capacity = 2;
  for (int t = 1; t <= 3; ++t) {
    DeclarativeRecord rec;
    rec.task_id = t;
    capped.push(std::move(rec));
  }
  REQUIRE(capped.records.size() == 2);
  CHECK(capped.records[0].task_id == 2);
}
