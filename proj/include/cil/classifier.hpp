#pragma once

#include <algorithm>
#include <optional>
#include <string>
#include <vector>

#include "cil/errors.hpp"
#include "cil/features.hpp"
#include "cil/matrix.hpp"

namespace cil {

// Per-task statistic: closed-form output weights, their Fisher-derived
// plasticity, the retention trade-off, and the owned class columns. Matrices
// are padded to the cumulative class count at creation time; columns outside
// class_ids are exactly zero.
struct DeclarativeRecord {
  int task_id = -1;
  DenseMatrix omega;       // d x C_padded
  DenseMatrix plasticity;  // d x C_padded, may be empty when never computed
  double gamma = 1.0;
  std::vector<int> class_ids;
  std::size_t n_samples = 0;

  std::size_t feature_dim() const { return omega.rows(); }
};

struct ConsolidatedSolution {
  DenseMatrix omega;  // d x C_total
  std::vector<int> trained_tasks;
  std::size_t feature_dim = 0;
  std::size_t total_classes = 0;
};

// FIFO store of per-task records; removal is from the front unless explicit
// task ids are given.
struct MemoryStatistic {
  std::vector<DeclarativeRecord> records;
  std::optional<std::size_t> capacity;

  void push(DeclarativeRecord rec) {
    records.push_back(std::move(rec));
    if (capacity) {
      while (records.size() > *capacity) records.erase(records.begin());
    }
  }
};

inline MemoryStatistic forget_tasks(const MemoryStatistic& statistic, const std::vector<int>& victims) {
  for (int id : victims) {
    const bool known = std::any_of(statistic.records.begin(), statistic.records.end(),
                                   [id](const DeclarativeRecord& r) { return r.task_id == id; });
    if (!known) throw UnknownTask("forget_tasks: no record for task " + std::to_string(id));
  }
  MemoryStatistic out;
  out.capacity = statistic.capacity;
  for (const auto& rec : statistic.records) {
    if (std::find(victims.begin(), victims.end(), rec.task_id) == victims.end())
      out.records.push_back(rec);
  }
  return out;
}

inline MemoryStatistic forget_oldest(const MemoryStatistic& statistic, std::size_t count) {
  if (count > statistic.records.size())
    throw UnknownTask("forget_oldest: asked to drop " + std::to_string(count) + " of " +
                      std::to_string(statistic.records.size()) + " records");
  MemoryStatistic out;
  out.capacity = statistic.capacity;
  out.records.assign(statistic.records.begin() + static_cast<std::ptrdiff_t>(count),
                     statistic.records.end());
  return out;
}

// Omega_t = (rho I + A^T A)^{-1} A^T Y. Columns of Y outside the task's
// classes must be zero, which zeroes the matching omega columns.
inline DeclarativeRecord compute_declarative(const AugmentedFeatures& a, const DenseMatrix& y,
                                             double rho, std::vector<int> class_ids) {
  if (a.matrix.rows() != y.rows())
    throw DimensionMismatch("compute_declarative: feature and label row counts differ");
  DeclarativeRecord rec;
  rec.omega = regularized_gram_solve(a.matrix, y, rho);
  rec.class_ids = std::move(class_ids);
  std::sort(rec.class_ids.begin(), rec.class_ids.end());
  rec.n_samples = a.matrix.rows();
  return rec;
}

// Diagonal empirical Fisher of the Gaussian log-likelihood, stored
// column-wise: F[j,c] = (1/N) sum_p (A[p,j] (Y - A omega)[p,c])^2.
inline DenseMatrix compute_plasticity(const AugmentedFeatures& a, const DenseMatrix& y,
                                      const DenseMatrix& omega) {
  const auto am = detail::map(a.matrix);
  if (a.matrix.rows() != y.rows() || omega.rows() != a.matrix.cols() || omega.cols() != y.cols())
    throw DimensionMismatch("compute_plasticity: inconsistent shapes");
  ensure_finite(y, "compute_plasticity Y");
  ensure_finite(omega, "compute_plasticity omega");
  Eigen::MatrixXd resid = detail::map(y) - am * detail::map(omega);
  DenseMatrix f(omega.rows(), omega.cols());
  detail::map(f).noalias() =
      am.cwiseProduct(am).transpose() * resid.cwiseProduct(resid) / static_cast<double>(y.rows());
  return f;
}

namespace detail {

// Column c of a zero-padded record matrix; columns beyond the stored width
// read as zero.
inline void add_scaled_record_col(const DenseMatrix& m, std::size_t c, double scale,
                                  Eigen::VectorXd& into) {
  if (m.empty() || c >= m.cols()) return;
  for (std::size_t j = 0; j < m.rows(); ++j) into[static_cast<Eigen::Index>(j)] += scale * m(j, c);
}

inline void add_scaled_record_col_product(const DenseMatrix& f, const DenseMatrix& omega,
                                          std::size_t c, double scale, Eigen::VectorXd& into) {
  if (f.empty() || c >= f.cols() || c >= omega.cols()) return;
  for (std::size_t j = 0; j < f.rows(); ++j)
    into[static_cast<Eigen::Index>(j)] += scale * f(j, c) * omega(j, c);
}

}  // namespace detail

// Options for the per-column consolidation. The defaults follow the full
// objective; the toggles exist for the objective-term ablations and the
// new-columns-only variant.
struct ConsolidateOptions {
  bool use_plasticity_term = true;
  bool use_anchor_term = true;
  bool update_new_columns_only = false;
};

// Recursive per-class consolidation:
//   Omega_{1:T,c} = (A^T A + sum_t gamma_t K_{t,c} + I)^{-1}
//                   (A^T Y_c + sum_t gamma_t K_{t,c} Omega_{t,c} + Omega_{1:T-1,c})
// with K_{t,c} the diagonal embedding of record t's plasticity column c.
// prev must already be column-padded for the new task's classes; a d x d
// factorization is performed per class column.
inline ConsolidatedSolution consolidate(const AugmentedFeatures& a_new, const DenseMatrix& y_new,
                                        const MemoryStatistic& statistic,
                                        const ConsolidatedSolution& prev, double gamma_new,
                                        int new_task_id = -1,
                                        const std::vector<int>* new_class_ids = nullptr,
                                        const ConsolidateOptions& options = {}) {
  const DenseMatrix& a = a_new.matrix;
  if (a.rows() == 0) throw EmptyTask("consolidate: the new task has no samples");
  if (a.rows() != y_new.rows())
    throw DimensionMismatch("consolidate: feature and label row counts differ");
  if (prev.omega.rows() != a.cols() || prev.omega.cols() != y_new.cols())
    throw DimensionMismatch("consolidate: prev solution not padded to the cumulative class count");
  if (!(gamma_new > 0.0)) throw Error("consolidate: gamma must be positive");
  ensure_finite(a, "consolidate A");
  ensure_finite(y_new, "consolidate Y");
  ensure_finite(prev.omega, "consolidate prev");
  for (const auto& rec : statistic.records) {
    if (rec.feature_dim() != a.cols())
      throw DimensionMismatch("consolidate: record for task " + std::to_string(rec.task_id) +
                              " has feature dim " + std::to_string(rec.feature_dim()));
  }

  const auto am = detail::map(a);
  const Eigen::Index d = am.cols();
  const std::size_t n_cols = y_new.cols();
  const Eigen::MatrixXd gram = detail::gram(am);
  const Eigen::MatrixXd aty = am.transpose() * detail::map(y_new);

  ConsolidatedSolution out;
  out.omega = DenseMatrix(a.cols(), n_cols);
  out.trained_tasks = prev.trained_tasks;
  if (new_task_id >= 0) out.trained_tasks.push_back(new_task_id);
  out.feature_dim = a.cols();
  out.total_classes = n_cols;

  for (std::size_t c = 0; c < n_cols; ++c) {
    if (options.update_new_columns_only && new_class_ids &&
        std::find(new_class_ids->begin(), new_class_ids->end(), static_cast<int>(c)) ==
            new_class_ids->end()) {
      for (std::size_t j = 0; j < out.omega.rows(); ++j) out.omega(j, c) = prev.omega(j, c);
      continue;
    }
    Eigen::VectorXd shift = Eigen::VectorXd::Zero(d);
    Eigen::VectorXd rhs = aty.col(static_cast<Eigen::Index>(c));
    if (options.use_plasticity_term) {
      for (const auto& rec : statistic.records) {
        detail::add_scaled_record_col(rec.plasticity, c, rec.gamma, shift);
        detail::add_scaled_record_col_product(rec.plasticity, rec.omega, c, rec.gamma, rhs);
      }
    }
    if (options.use_anchor_term) {
      shift.array() += 1.0;
      detail::add_scaled_record_col(prev.omega, c, 1.0, rhs);
    }
    const Eigen::VectorXd x = detail::gram_shift_solve(am, gram, shift, rhs, 1.0);
    for (std::size_t j = 0; j < out.omega.rows(); ++j)
      out.omega(j, c) = x[static_cast<Eigen::Index>(j)];
  }
  ensure_finite(out.omega, "consolidate result");
  return out;
}

// Infinity norm of the consolidation stationarity system evaluated at the
// given solution, with the sample-count scaling folded into the gammas the
// same way the closed form does.
inline double stationarity_residual(const ConsolidatedSolution& solution,
                                    const AugmentedFeatures& a_new, const DenseMatrix& y_new,
                                    const MemoryStatistic& statistic,
                                    const ConsolidatedSolution& prev) {
  const DenseMatrix& a = a_new.matrix;
  if (a.rows() != y_new.rows() || solution.omega.rows() != a.cols() ||
      solution.omega.cols() != y_new.cols() || prev.omega.rows() != a.cols() ||
      prev.omega.cols() != y_new.cols())
    throw DimensionMismatch("stationarity_residual: inconsistent shapes");

  const auto am = detail::map(a);
  const auto om = detail::map(solution.omega);
  Eigen::MatrixXd r = am.transpose() * (am * om - detail::map(y_new));
  r += om - detail::map(prev.omega);
  for (const auto& rec : statistic.records) {
    if (rec.plasticity.empty()) continue;
    const std::size_t w = std::min(rec.plasticity.cols(), solution.omega.cols());
    for (std::size_t c = 0; c < w; ++c)
      for (std::size_t j = 0; j < rec.plasticity.rows(); ++j)
        r(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(c)) +=
            rec.gamma * rec.plasticity(j, c) *
            (solution.omega(j, c) - (c < rec.omega.cols() ? rec.omega(j, c) : 0.0));
  }
  return r.cwiseAbs().maxCoeff();
}

struct Prediction {
  DenseMatrix scores;
  std::vector<int> labels;
};

// scores = A Omega; label is the argmax column, ties broken toward the
// lowest class index.
inline Prediction predict(const AugmentedFeatures& a, const ConsolidatedSolution& solution) {
  if (a.matrix.cols() != solution.feature_dim)
    throw DimensionMismatch("predict: feature width " + std::to_string(a.matrix.cols()) +
                            " != solution dim " + std::to_string(solution.feature_dim));
  Prediction out;
  out.scores = matmul(a.matrix, solution.omega);
  out.labels.resize(a.matrix.rows());
  for (std::size_t i = 0; i < out.scores.rows(); ++i) {
    int best = 0;
    double best_score = out.scores(i, 0);
    for (std::size_t c = 1; c < out.scores.cols(); ++c) {
      if (out.scores(i, c) > best_score) {
        best_score = out.scores(i, c);
        best = static_cast<int>(c);
      }
    }
    out.labels[i] = best;
  }
  return out;
}

// Pads a solution with zero columns up to total_classes.
inline ConsolidatedSolution pad_solution(const ConsolidatedSolution& sol, std::size_t total_classes) {
  if (total_classes < sol.total_classes)
    throw DimensionMismatch("pad_solution: cannot shrink the class axis");
  ConsolidatedSolution out = sol;
  out.total_classes = total_classes;
  out.omega = DenseMatrix(sol.feature_dim, total_classes);
  for (std::size_t j = 0; j < sol.omega.rows(); ++j)
    for (std::size_t c = 0; c < sol.omega.cols(); ++c) out.omega(j, c) = sol.omega(j, c);
  return out;
}

}  // namespace cil
