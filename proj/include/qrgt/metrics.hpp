#pragma once

#include "qrgt/problems.hpp"
#include "qrgt/stiefel.hpp"
#include "qrgt/types.hpp"

#include <cmath>

namespace qrgt {

/// Evaluation metrics at the Euclidean mean x̄ of the agents' iterates.
struct MetricRow {
  double consensus_error = 0.0;  // sqrt(Σ_i ‖x_i − x̄‖²)
  double grad_norm = 0.0;        // ‖grad f(x̄)‖, projection applied verbatim at x̄
  double f_gap = 0.0;            // f(x̄) − f*
  double ds = 0.0;               // d_s(x̄, x*)
  double dist_mean = 0.0;        // dist(x̄, M)
};

/// Arithmetic mean; not projected to the manifold.
inline Matrix mean_point(const Stack& xs) { return stack_mean(xs); }

inline double consensus_error(const Stack& xs) {
  const Matrix mean = stack_mean(xs);
  double acc = 0.0;
  for (const auto& x : xs) acc += (x - mean).squaredNorm();
  return std::sqrt(acc);
}

/// Optimal O in min_{OᵀO = I} ‖xO − x*‖ (orthogonal Procrustes, reflections
/// allowed): with xᵀx* = UΣVᵀ, O = UVᵀ.
inline Matrix procrustes_rotation(const Matrix& x, const Matrix& xstar) {
  require_same_shape(x, xstar, "procrustes_rotation");
  Eigen::JacobiSVD<Matrix> svd(x.transpose() * xstar,
                               Eigen::ComputeFullU | Eigen::ComputeFullV);
  return svd.matrixU() * svd.matrixV().transpose();
}

/// d_s(x, x*) = min_{OᵀO = OOᵀ = I} ‖xO − x*‖.
///
/// Evaluated as ‖xO − x*‖ at the Procrustes optimum rather than through
/// sqrt(‖x‖² + r − 2 trΣ), which loses all digits below ~1e-8.
inline double subspace_distance(const Matrix& x, const Matrix& xstar) {
  return (x * procrustes_rotation(x, xstar) - xstar).norm();
}

inline MetricRow compute_metrics(const ProblemInstance& inst, const Stack& xs) {
  MetricRow row;
  const Matrix xbar = mean_point(xs);
  double acc = 0.0;
  for (const auto& x : xs) acc += (x - xbar).squaredNorm();
  row.consensus_error = std::sqrt(acc);
  row.grad_norm = project_tangent(xbar, global_euclidean_grad(inst, xbar)).norm();
  row.f_gap = global_objective(inst, xbar) - inst.truth.fstar;
  row.ds = subspace_distance(xbar, inst.truth.xstar.value());
  row.dist_mean = distance_to_manifold(xbar).value;
  return row;
}

}  // namespace qrgt
