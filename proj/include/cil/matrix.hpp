#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "cil/errors.hpp"

namespace cil {

// Row-major dense matrix of doubles. The universal carrier for features,
// labels and parameters; entries are expected to stay finite through every
// public operation.
class DenseMatrix {
 public:
  DenseMatrix() = default;
  DenseMatrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  DenseMatrix(std::initializer_list<std::initializer_list<double>> rows) {
    rows_ = rows.size();
    cols_ = rows_ == 0 ? 0 : rows.begin()->size();
    data_.reserve(rows_ * cols_);
    for (const auto& r : rows) {
      if (r.size() != cols_) throw DimensionMismatch("ragged initializer for DenseMatrix");
      data_.insert(data_.end(), r.begin(), r.end());
    }
  }

  static DenseMatrix identity(std::size_t n) {
    DenseMatrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  bool operator==(const DenseMatrix& other) const {
    return rows_ == other.rows_ && cols_ == other.cols_ && data_ == other.data_;
  }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

namespace detail {

using RowMajorMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMajorMatrix>;
using MutableMap = Eigen::Map<RowMajorMatrix>;

inline ConstMap map(const DenseMatrix& m) {
  return ConstMap(m.data(), static_cast<Eigen::Index>(m.rows()), static_cast<Eigen::Index>(m.cols()));
}

inline MutableMap map(DenseMatrix& m) {
  return MutableMap(m.data(), static_cast<Eigen::Index>(m.rows()), static_cast<Eigen::Index>(m.cols()));
}

inline DenseMatrix from_eigen(const Eigen::Ref<const Eigen::MatrixXd>& e) {
  DenseMatrix m(static_cast<std::size_t>(e.rows()), static_cast<std::size_t>(e.cols()));
  map(m) = e;
  return m;
}

}  // namespace detail

inline void ensure_finite(const DenseMatrix& m, const std::string& what) {
  if (!m.empty() && !detail::map(m).allFinite()) throw NonFinite(what + " contains a non-finite entry");
}

// Soft thresholding: a-b above b, a+b below -b, zero in between.
inline double soft_threshold(double a, double b) {
  if (a > b) return a - b;
  if (a < -b) return a + b;
  return 0.0;
}

// Diagonal matrix with v on the diagonal.
inline DenseMatrix diag_embed(const std::vector<double>& v) {
  for (double x : v) {
    if (!std::isfinite(x)) throw NonFinite("diag_embed input contains a non-finite entry");
  }
  DenseMatrix k(v.size(), v.size());
  for (std::size_t i = 0; i < v.size(); ++i) k(i, i) = v[i];
  return k;
}

inline DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b) {
  if (a.cols() != b.rows()) throw DimensionMismatch("matmul: inner dimensions differ");
  DenseMatrix out(a.rows(), b.cols());
  detail::map(out).noalias() = detail::map(a) * detail::map(b);
  return out;
}

inline DenseMatrix transpose(const DenseMatrix& a) {
  DenseMatrix out(a.cols(), a.rows());
  detail::map(out) = detail::map(a).transpose();
  return out;
}

namespace detail {

// In-place lower Cholesky, blocked right-looking. Returns -1 on success or
// the index of the first non-positive pivot.
inline std::ptrdiff_t cholesky_in_place(Eigen::MatrixXd& m) {
  const Eigen::Index n = m.rows();
  constexpr Eigen::Index kBlock = 128;
  for (Eigen::Index k = 0; k < n; k += kBlock) {
    const Eigen::Index b = std::min(kBlock, n - k);
    auto blk = m.block(k, k, b, b);
    for (Eigen::Index i = 0; i < b; ++i) {
      double d = blk(i, i) - blk.row(i).head(i).squaredNorm();
      if (!(d > 0.0)) return k + i;  // also trips on NaN
      d = std::sqrt(d);
      blk(i, i) = d;
      const Eigen::Index rest = b - i - 1;
      if (rest > 0) {
        auto tail = blk.col(i).segment(i + 1, rest);
        tail.noalias() -= blk.block(i + 1, 0, rest, i) * blk.row(i).head(i).transpose();
        tail /= d;
      }
    }
    const Eigen::Index r = n - k - b;
    if (r > 0) {
      auto panel = m.block(k + b, k, r, b);
      blk.triangularView<Eigen::Lower>().transpose().template solveInPlace<Eigen::OnTheRight>(panel);
      m.block(k + b, k + b, r, r).selfadjointView<Eigen::Lower>().rankUpdate(panel, -1.0);
    }
  }
  return -1;
}

// Solve L L^T X = B in place given the lower factor.
inline void cholesky_solve_in_place(const Eigen::MatrixXd& l, Eigen::MatrixXd& b) {
  l.triangularView<Eigen::Lower>().solveInPlace(b);
  l.triangularView<Eigen::Lower>().transpose().solveInPlace(b);
}

// A^T A accumulated through a symmetric rank update, mirrored to full storage.
inline Eigen::MatrixXd gram(ConstMap a) {
  Eigen::MatrixXd g = Eigen::MatrixXd::Zero(a.cols(), a.cols());
  g.selfadjointView<Eigen::Lower>().rankUpdate(a.transpose());
  g.triangularView<Eigen::StrictlyUpper>() = g.transpose();
  return g;
}

// Solves (A^T A + diag(shift)) X = RHS.
//
// Fast path is the blocked Cholesky of the assembled matrix. With a tiny
// shift and rank-deficient A the factorization can break down (the exact
// matrix is SPD but its small eigenvalues sit below the roundoff of the
// squared system), so on a bad pivot we retry with a Householder QR of
// [A; diag(sqrt(shift))], whose R equals the same Cholesky factor computed
// stably, plus one semi-normal-equations refinement step. SolveFailure is
// raised only if the stable factor itself is singular.
inline Eigen::MatrixXd gram_shift_solve(ConstMap a, const Eigen::MatrixXd& gram_aa,
                                        const Eigen::VectorXd& shift, const Eigen::MatrixXd& rhs,
                                        double reported_rho) {
  const Eigen::Index d = gram_aa.rows();
  Eigen::MatrixXd m = gram_aa;
  m.diagonal() += shift;
  const std::ptrdiff_t bad = cholesky_in_place(m);
  if (bad < 0) {
    Eigen::MatrixXd x = rhs;
    cholesky_solve_in_place(m, x);
    return x;
  }

  Eigen::MatrixXd stacked(a.rows() + d, d);
  stacked.topRows(a.rows()) = a;
  stacked.bottomRows(d).setZero();
  stacked.bottomRows(d).diagonal() = shift.cwiseMax(0.0).cwiseSqrt();
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(stacked);
  Eigen::MatrixXd r = qr.matrixQR().topRows(d).triangularView<Eigen::Upper>();
  for (Eigen::Index i = 0; i < d; ++i) {
    if (r(i, i) == 0.0) throw SolveFailure(reported_rho, bad);
  }

  auto solve_rtr = [&](Eigen::MatrixXd& b) {
    r.triangularView<Eigen::Upper>().transpose().solveInPlace(b);
    r.triangularView<Eigen::Upper>().solveInPlace(b);
  };
  Eigen::MatrixXd x = rhs;
  solve_rtr(x);
  // One corrected semi-normal-equations step.
  Eigen::MatrixXd resid = rhs - a.transpose() * (a * x);
  resid.noalias() -= shift.asDiagonal() * x;
  solve_rtr(resid);
  x += resid;
  return x;
}

}  // namespace detail

// X = (rho I + A^T A)^{-1} A^T B via a symmetric positive-definite solve.
// Deterministic for fixed inputs; the Gram matrix is accumulated in doubles.
inline DenseMatrix regularized_gram_solve(const DenseMatrix& a, const DenseMatrix& b, double rho) {
  if (a.rows() != b.rows()) throw DimensionMismatch("regularized_gram_solve: row counts differ");
  if (!(rho > 0.0)) throw Error("regularized_gram_solve: rho must be positive");
  ensure_finite(a, "regularized_gram_solve A");
  ensure_finite(b, "regularized_gram_solve B");

  const auto am = detail::map(a);
  const auto bm = detail::map(b);
  const Eigen::MatrixXd g = detail::gram(am);
  const Eigen::MatrixXd rhs = am.transpose() * bm;
  const Eigen::VectorXd shift = Eigen::VectorXd::Constant(g.rows(), rho);
  DenseMatrix x = detail::from_eigen(detail::gram_shift_solve(am, g, shift, rhs, rho));
  ensure_finite(x, "regularized_gram_solve result");
  return x;
}

}  // namespace cil
