#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cil/errors.hpp"
#include "cil/matrix.hpp"
#include "cil/rng.hpp"

namespace cil {

enum class BaseKind { identity_passthrough, frozen_affine };
enum class Activation { none, clipped_linear };

inline double apply_activation(Activation act, double x) {
  if (act == Activation::clipped_linear) return x < -1.0 ? -1.0 : (x > 1.0 ? 1.0 : x);
  return x;
}

// Frozen first stage of the extractor. For frozen-affine the weights and bias
// are drawn uniformly from [-1, 1] at construction and never change.
struct BaseMapping {
  BaseKind kind = BaseKind::identity_passthrough;
  DenseMatrix weights;        // M x h, frozen-affine only
  std::vector<double> bias;   // h
  Activation activation = Activation::none;
  std::uint64_t seed = 0;

  std::size_t param_count() const {
    return kind == BaseKind::frozen_affine ? weights.size() + bias.size() : 0;
  }
};

inline BaseMapping make_identity_base() { return BaseMapping{}; }

inline BaseMapping make_frozen_affine(std::size_t input_dim, std::size_t hidden, std::uint64_t seed,
                                      Activation activation = Activation::none) {
  BaseMapping base;
  base.kind = BaseKind::frozen_affine;
  base.seed = seed;
  base.activation = activation;
  base.weights = DenseMatrix(input_dim, hidden);
  base.bias.resize(hidden);
  Rng rng(seed);
  for (std::size_t i = 0; i < input_dim; ++i)
    for (std::size_t j = 0; j < hidden; ++j) base.weights(i, j) = rng.pm1();
  for (std::size_t j = 0; j < hidden; ++j) base.bias[j] = rng.pm1();
  return base;
}

// Z = activation(X W + bias), or X itself for identity-passthrough.
inline DenseMatrix base_forward(const DenseMatrix& x, const BaseMapping& base) {
  ensure_finite(x, "base_forward input");
  if (base.kind == BaseKind::identity_passthrough) return x;
  if (x.cols() != base.weights.rows())
    throw DimensionMismatch("base_forward: input has " + std::to_string(x.cols()) +
                            " columns, mapping expects " + std::to_string(base.weights.rows()));
  DenseMatrix z(x.rows(), base.weights.cols());
  auto zm = detail::map(z);
  zm.noalias() = detail::map(x) * detail::map(base.weights);
  for (std::size_t i = 0; i < z.rows(); ++i)
    for (std::size_t j = 0; j < z.cols(); ++j)
      z(i, j) = apply_activation(base.activation, z(i, j) + base.bias[j]);
  return z;
}

// n groups of k mapping nodes each: G_i = Z W_i + beta_i.
struct GroupMapping {
  std::size_t group_width = 0;               // k
  std::vector<DenseMatrix> weights;          // n matrices, h x k
  std::vector<std::vector<double>> biases;   // n vectors of length k
  std::uint64_t seed = 0;

  std::size_t size() const { return weights.size(); }
  std::size_t param_count() const {
    std::size_t total = 0;
    for (const auto& w : weights) total += w.size();
    for (const auto& b : biases) total += b.size();
    return total;
  }
};

// Entries i.i.d. uniform on [-1, 1]; stream order (per group: weights
// row-major, then bias) is part of the contract.
inline GroupMapping init_groups(std::size_t h, std::size_t n, std::size_t k, std::uint64_t seed) {
  GroupMapping groups;
  groups.group_width = k;
  groups.seed = seed;
  Rng rng(seed);
  groups.weights.reserve(n);
  groups.biases.reserve(n);
  for (std::size_t g = 0; g < n; ++g) {
    DenseMatrix w(h, k);
    for (std::size_t i = 0; i < h; ++i)
      for (std::size_t j = 0; j < k; ++j) w(i, j) = rng.pm1();
    std::vector<double> beta(k);
    for (std::size_t j = 0; j < k; ++j) beta[j] = rng.pm1();
    groups.weights.push_back(std::move(w));
    groups.biases.push_back(std::move(beta));
  }
  return groups;
}

inline DenseMatrix affine_forward(const DenseMatrix& z, const DenseMatrix& w,
                                  const std::vector<double>& bias) {
  if (z.cols() != w.rows()) throw DimensionMismatch("affine_forward: width mismatch");
  DenseMatrix g(z.rows(), w.cols());
  detail::map(g).noalias() = detail::map(z) * detail::map(w);
  for (std::size_t i = 0; i < g.rows(); ++i)
    for (std::size_t j = 0; j < g.cols(); ++j) g(i, j) += bias[j];
  return g;
}

inline std::vector<DenseMatrix> group_forward(const DenseMatrix& z, const GroupMapping& groups) {
  ensure_finite(z, "group_forward input");
  std::vector<DenseMatrix> out;
  out.reserve(groups.size());
  for (std::size_t g = 0; g < groups.size(); ++g)
    out.push_back(affine_forward(z, groups.weights[g], groups.biases[g]));
  return out;
}

// ADMM iterates for one group's lasso refinement; all three share shape k x h.
struct AdmmState {
  DenseMatrix theta_star;
  DenseMatrix theta;
  DenseMatrix u;
  std::size_t iteration = 0;
  bool converged = false;
};

// Lasso refinement of one group: approximately minimizes
//   |G theta - Z|_2^2 + alpha |theta|_1
// by scaled-dual ADMM. The (rho I + G^T G) factorization is computed once and
// reused every iteration; the sparse auxiliary iterate is returned at
// convergence (max of primal gap and theta step below tol) or at the cap.
inline DenseMatrix admm_refine(const DenseMatrix& g, const DenseMatrix& z, double alpha, double rho,
                               std::size_t max_iter, double tol, AdmmState* state_out = nullptr) {
  if (g.rows() != z.rows()) throw DimensionMismatch("admm_refine: G and Z row counts differ");
  if (!(rho > 0.0)) throw Error("admm_refine: rho must be positive");
  if (alpha < 0.0) throw Error("admm_refine: alpha must be nonnegative");
  ensure_finite(g, "admm_refine G");
  ensure_finite(z, "admm_refine Z");

  const auto gm = detail::map(g);
  const auto zm = detail::map(z);
  const Eigen::Index k = gm.cols();
  const Eigen::Index h = zm.cols();

  Eigen::MatrixXd factor = detail::gram(gm);
  factor.diagonal().array() += rho;
  const std::ptrdiff_t bad = detail::cholesky_in_place(factor);
  if (bad >= 0) throw SolveFailure(rho, bad);
  const Eigen::MatrixXd gtz = gm.transpose() * zm;

  // The update solving the spec objective thresholds at alpha / (2 rho): the
  // quadratic term carries no 1/2, so alpha enters the prox halved.
  const double threshold = alpha / (2.0 * rho);

  Eigen::MatrixXd theta = Eigen::MatrixXd::Zero(k, h);
  Eigen::MatrixXd u = Eigen::MatrixXd::Zero(k, h);
  Eigen::MatrixXd theta_star(k, h), theta_next(k, h);
  std::size_t it = 0;
  bool converged = false;
  for (it = 1; it <= max_iter; ++it) {
    theta_star = gtz + rho * (theta - u);
    detail::cholesky_solve_in_place(factor, theta_star);
    if (!theta_star.allFinite())
      throw NonFinite("admm_refine: iterates diverged at iteration " + std::to_string(it));
    theta_next = (theta_star + u).unaryExpr([threshold](double v) { return soft_threshold(v, threshold); });
    u += theta_star - theta_next;
    const double primal_gap = (theta_star - theta_next).cwiseAbs().maxCoeff();
    const double step = (theta_next - theta).cwiseAbs().maxCoeff();
    theta.swap(theta_next);
    if (std::max(primal_gap, step) <= tol) {
      converged = true;
      break;
    }
  }
  if (state_out) {
    state_out->theta_star = detail::from_eigen(theta_star);
    state_out->theta = detail::from_eigen(theta);
    state_out->u = detail::from_eigen(u);
    state_out->iteration = std::min(it, max_iter);
    state_out->converged = converged;
  }
  return detail::from_eigen(theta);
}

// A_t = [Z, G_1*, ..., G_n*]; the first z_cols columns carry Z verbatim.
struct AugmentedFeatures {
  DenseMatrix matrix;
  std::size_t z_cols = 0;
  std::size_t g_cols = 0;
};

// Recovers the refined group outputs and concatenates. The refined forward
// weights are the transpose of the lasso solution mapping G_i back to Z;
// biases are carried over unchanged.
inline AugmentedFeatures augment(const DenseMatrix& z, const GroupMapping& groups,
                                 const std::vector<DenseMatrix>& refined) {
  ensure_finite(z, "augment input");
  if (refined.size() != groups.size())
    throw DimensionMismatch("augment: refined mapping count differs from group count");
  const std::size_t n = groups.size();
  const std::size_t k = groups.group_width;
  AugmentedFeatures out;
  out.z_cols = z.cols();
  out.g_cols = n * k;
  out.matrix = DenseMatrix(z.rows(), out.z_cols + out.g_cols);
  auto m = detail::map(out.matrix);
  m.leftCols(z.cols()) = detail::map(z);
  for (std::size_t g = 0; g < n; ++g) {
    const DenseMatrix& theta = refined[g];
    if (theta.rows() != k || theta.cols() != z.cols())
      throw DimensionMismatch("augment: refined theta for group " + std::to_string(g) +
                              " is not k x h");
    auto block = m.middleCols(out.z_cols + g * k, k);
    block.noalias() = detail::map(z) * detail::map(theta).transpose();
    for (std::size_t i = 0; i < z.rows(); ++i)
      for (std::size_t j = 0; j < k; ++j) block(i, j) += groups.biases[g][j];
  }
  ensure_finite(out.matrix, "augment result");
  return out;
}

}  // namespace cil
