#include <catch_amalgamated.hpp>

#include <algorithm>

#include "cil/metrics.hpp"
#include "cil/rng.hpp"

using cil::AccuracyMatrix;
using cil::Rng;

namespace {

AccuracyMatrix random_lower_triangular(Rng& rng, std::size_t t) {
  AccuracyMatrix r;
  for (std::size_t i = 1; i <= t; ++i) {
    std::vector<double> row(i);
    for (auto& v : row) v = rng.unit();
    r.push_row(row);
  }
  return r;
}

}  // namespace

TEST_CASE("metrics: avg_acc values and properties", "[metrics]") {
  AccuracyMatrix r;
  r.push_row({0.9175});
  r.push_row({0.9175, 0.9620});
  CHECK(cil::avg_acc(r, 2) == Catch::Approx(0.93975).margin(1e-12));

  AccuracyMatrix ones;
  ones.push_row({1.0});
  ones.push_row({1.0, 1.0});
  CHECK(cil::avg_acc(ones, 2) == 1.0);

  Rng rng(61);
  AccuracyMatrix rand = random_lower_triangular(rng, 5);
  double mean = 0.0;
  for (double v : rand.values[4]) mean += v;
  mean /= 5.0;
  CHECK(cil::avg_acc(rand, 5) == Catch::Approx(mean).margin(1e-15));

  // permutation invariance of the row
  std::vector<double> row = rand.values[4];
  std::reverse(row.begin(), row.end());
  AccuracyMatrix permuted = rand;
  permuted.values[4] = row;
  CHECK(cil::avg_acc(permuted, 5) == Catch::Approx(cil::avg_acc(rand, 5)).margin(1e-15));

  CHECK_THROWS_AS(cil::avg_acc(rand, 6), cil::OutOfRange);
  CHECK_THROWS_AS(cil::avg_acc(rand, 0), cil::OutOfRange);
}

TEST_CASE("metrics: bwt values and properties", "[metrics]") {
  AccuracyMatrix steady;
  steady.push_row({0.8});
  steady.push_row({0.8, 0.9});
  steady.push_row({0.8, 0.9, 0.7});
  CHECK(cil::bwt(steady) == Catch::Approx(0.0).margin(1e-15));

  AccuracyMatrix drop;
  drop.push_row({1.0});
  drop.push_row({0.9, 0.95});
  CHECK(cil::bwt(drop) == Catch::Approx(-0.1).margin(1e-15));

  Rng rng(62);
  AccuracyMatrix rand = random_lower_triangular(rng, 4);
  double expect = 0.0;
  for (std::size_t t = 1; t < 4; ++t) expect += rand.at(4, t) - rand.at(t, t);
  expect /= 3.0;
  CHECK(cil::bwt(rand) == Catch::Approx(expect).margin(1e-15));

  // monotone nonincreasing columns imply nonpositive BWT
  AccuracyMatrix mono;
  mono.push_row({0.9});
  mono.push_row({0.85, 0.8});
  mono.push_row({0.8, 0.75, 0.95});
  CHECK(cil::bwt(mono) <= 0.0);

  AccuracyMatrix single;
  single.push_row({1.0});
  CHECK_THROWS_AS(cil::bwt(single), cil::OutOfRange);
}

TEST_CASE("metrics: fwt values and properties", "[metrics]") {
  AccuracyMatrix r;
  r.push_row({0.9});
  r.push_row({0.85, 0.95});
  CHECK(cil::fwt(r, {0.9, 0.95}) == Catch::Approx(0.0).margin(1e-15));
  CHECK(cil::fwt(r, {0.9, 0.90}) == Catch::Approx(0.05).margin(1e-15));

  Rng rng(63);
  AccuracyMatrix rand = random_lower_triangular(rng, 4);
  std::vector<double> ind{rng.unit(), rng.unit(), rng.unit(), rng.unit()};
  double expect = 0.0;
  for (std::size_t t = 2; t <= 4; ++t) expect += rand.at(t, t) - ind[t - 1];
  expect /= 3.0;
  CHECK(cil::fwt(rand, ind) == Catch::Approx(expect).margin(1e-15));

  CHECK_THROWS_AS(cil::fwt(rand, {0.5}), cil::OutOfRange);
}

TEST_CASE("metrics: accuracy matrix validation", "[metrics]") {
  AccuracyMatrix r;
  CHECK_THROWS_AS(r.push_row({0.5, 0.5}), cil::OutOfRange);
  r.push_row({0.5});
  CHECK_THROWS_AS(r.push_row({1.5, 0.5}), cil::OutOfRange);
  CHECK_THROWS_AS(r.at(1, 0), cil::OutOfRange);
  CHECK_THROWS_AS(r.at(2, 1), cil::OutOfRange);
}

TEST_CASE("metrics: memory budget accounting", "[metrics]") {
  cil::MemoryStatistic empty;
  const cil::MemoryBudget none = cil::memory_budget(empty, 0);
  CHECK(none.model_mb == 0.0);
  CHECK(none.exemplar_mb == 0.0);

  // one 900x10 record with no stored plasticity: 4 * 9000 bytes
  cil::MemoryStatistic one;
  cil::DeclarativeRecord rec;
  rec.omega = cil::DenseMatrix(900, 10);
  rec.class_ids = {0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
  one.records.push_back(rec);
  CHECK(cil::memory_budget(one, 0).model_mb ==
        Catch::Approx(4.0 * 9000.0 / 1048576.0).margin(1e-12));

  // the 1800-wide config: a task owning 2 classes stores an omega/plasticity
  // pair costing exactly 4 * (1800*2 + 1800*2) bytes
  cil::DeclarativeRecord pair;
  pair.omega = cil::DenseMatrix(1800, 2);
  pair.plasticity = cil::DenseMatrix(1800, 2);
  pair.class_ids = {0, 1};
  CHECK(cil::record_element_count(pair) * 4 == 4 * (1800 * 2 + 1800 * 2));

  cil::MemoryStatistic stat;
  stat.records.push_back(pair);
  const cil::MemoryBudget budget = cil::memory_budget(stat, 100);
  CHECK(budget.model_mb == Catch::Approx(4.0 * (100.0 + 7200.0) / 1048576.0).margin(1e-12));
  CHECK(budget.exemplar_mb == 0.0);
}

TEST_CASE("metrics: pure functions agree bit-exactly on repeat calls", "[metrics]") {
  Rng rng(64);
  AccuracyMatrix rand = random_lower_triangular(rng, 5);
  CHECK(cil::avg_acc(rand, 5) == cil::avg_acc(rand, 5));
  CHECK(cil::bwt(rand) == cil::bwt(rand));
}
