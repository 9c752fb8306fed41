#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "cil/classifier.hpp"
#include "cil/errors.hpp"

namespace cil {

// Lower-triangular accuracy table: row T holds the test accuracy of every
// task t <= T after training session T. Rows are 1-indexed through at().
struct AccuracyMatrix {
  std::vector<std::vector<double>> values;

  std::size_t sessions() const { return values.size(); }

  void push_row(std::vector<double> row) {
    if (row.size() != values.size() + 1)
      throw OutOfRange("AccuracyMatrix: row " + std::to_string(values.size() + 1) + " must have " +
                       std::to_string(values.size() + 1) + " entries");
    for (double v : row) {
      if (!(v >= 0.0 && v <= 1.0))
        throw OutOfRange("AccuracyMatrix: accuracy outside [0, 1]");
    }
    values.push_back(std::move(row));
  }

  double at(std::size_t after_task, std::size_t task) const {
    if (after_task < 1 || after_task > values.size() || task < 1 || task > after_task)
      throw OutOfRange("AccuracyMatrix: index (" + std::to_string(after_task) + ", " +
                       std::to_string(task) + ") out of range");
    return values[after_task - 1][task - 1];
  }
};

inline double avg_acc(const AccuracyMatrix& r, std::size_t after_task) {
  if (after_task < 1 || after_task > r.sessions())
    throw OutOfRange("avg_acc: after_task out of range");
  double sum = 0.0;
  for (std::size_t t = 1; t <= after_task; ++t) sum += r.at(after_task, t);
  return sum / static_cast<double>(after_task);
}

inline double bwt(const AccuracyMatrix& r) {
  const std::size_t t_final = r.sessions();
  if (t_final < 2) throw OutOfRange("bwt: needs at least two sessions");
  double sum = 0.0;
  for (std::size_t t = 1; t < t_final; ++t) sum += r.at(t_final, t) - r.at(t, t);
  return sum / static_cast<double>(t_final - 1);
}

// r_ind[t-1] is the accuracy of an independent model trained only on task t.
inline double fwt(const AccuracyMatrix& r, const std::vector<double>& r_ind) {
  const std::size_t t_final = r.sessions();
  if (t_final < 2) throw OutOfRange("fwt: needs at least two sessions");
  if (r_ind.size() != t_final) throw OutOfRange("fwt: r_ind must have one entry per task");
  double sum = 0.0;
  for (std::size_t t = 2; t <= t_final; ++t) sum += r.at(t, t) - r_ind[t - 1];
  return sum / static_cast<double>(t_final - 1);
}

// Stored elements of one record: omega restricted to its owned class columns,
// plus the plasticity matrix likewise when present.
inline std::size_t record_element_count(const DeclarativeRecord& rec) {
  const std::size_t per_matrix = rec.feature_dim() * rec.class_ids.size();
  return per_matrix + (rec.plasticity.empty() ? 0 : per_matrix);
}

struct MemoryBudget {
  double model_mb = 0.0;
  double exemplar_mb = 0.0;  // always zero: the method is rehearsal-free
};

// Everything counted at 32-bit floats regardless of in-memory precision.
inline MemoryBudget memory_budget(const MemoryStatistic& statistic, std::size_t model_params) {
  std::size_t elements = model_params;
  for (const auto& rec : statistic.records) elements += record_element_count(rec);
  MemoryBudget budget;
  budget.model_mb = 4.0 * static_cast<double>(elements) / static_cast<double>(1u << 20);
  budget.exemplar_mb = 0.0;
  return budget;
}

}  // namespace cil
