#pragma once

// Geometry of the Stiefel manifold St(d,r) = {x in R^{d×r} : xᵀx = I_r}.
//
// Iterates of the quantized method live in a neighborhood of the manifold, so
// every operation here accepts off-manifold input unless stated otherwise and
// applies its formula verbatim.

#include "qrgt/types.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace qrgt {

/// Frobenius tolerance on ‖xᵀx − I‖ for a point to count as on-manifold.
inline constexpr double kOnManifoldTol = 1e-8;

struct ManifoldDims {
  Eigen::Index d = 1;
  Eigen::Index r = 1;
  /// Proximal smoothness radius R; St(d,r) is 1-proximally smooth.
  double proximal_radius = 1.0;

  void validate() const {
    if (d < 1 || r < 1 || r > d)
      throw ValidationError("ManifoldDims: need 1 <= r <= d, got d=" +
                            std::to_string(d) + " r=" + std::to_string(r));
    if (!(proximal_radius > 0.0))
      throw ValidationError("ManifoldDims: proximal radius must be positive");
  }
};

inline double orthogonality_error(const Matrix& x) {
  return (x.transpose() * x - Matrix::Identity(x.cols(), x.cols())).norm();
}

/// A d×r matrix meant to lie on or near St(d,r).
class StiefelPoint {
 public:
  StiefelPoint() = default;
  explicit StiefelPoint(Matrix value) : value_(std::move(value)) {}

  const Matrix& value() const noexcept { return value_; }
  Eigen::Index rows() const noexcept { return value_.rows(); }
  Eigen::Index cols() const noexcept { return value_.cols(); }

  bool on_manifold(double tol = kOnManifoldTol) const {
    return orthogonality_error(value_) <= tol;
  }

 private:
  Matrix value_;
};

struct TangentVector {
  Matrix value;
  Matrix base;
};

/// Smoothness constants of the objective restricted to the manifold.
///   L   Euclidean Lipschitz constant of ∇f_i
///   L_f normal-component bound, max ‖∇f_i‖ / R over the manifold
///   L_g manifold smoothness, always L + L_f
///   L_m smoothness on the quantized region, never below L_g
struct SmoothnessConstants {
  double L = 1.0;
  double L_f = 0.0;
  double L_g = 1.0;
  double L_m = 1.0;
  double landing_weight = 1.0;

  /// L_m = max(L_g, region_grad_bound), as in the quantized-region definition.
  static SmoothnessConstants make(double L, double L_f,
                                  double region_grad_bound = 0.0,
                                  double landing_weight = 1.0) {
    if (!(L > 0.0) || !(L_f >= 0.0))
      throw ValidationError("SmoothnessConstants: need L > 0 and L_f >= 0");
    SmoothnessConstants c;
    c.L = L;
    c.L_f = L_f;
    c.L_g = L + L_f;
    c.L_m = std::max(c.L_g, region_grad_bound);
    c.landing_weight = landing_weight;
    return c;
  }
};

// --- projections -----------------------------------------------------------

/// y − ½x(xᵀy + yᵀx) on raw matrices; hot-path form of tangent_project.
inline Matrix project_tangent(const Matrix& x, const Matrix& y) {
  const Matrix xty = mul(x.transpose(), y);
  return y - 0.5 * mul(x, xty + xty.transpose());
}

inline TangentVector tangent_project(const StiefelPoint& x, const Matrix& y) {
  require_same_shape(x.value(), y, "tangent_project");
  return {project_tangent(x.value(), y), x.value()};
}

inline TangentVector riemannian_grad(const StiefelPoint& x,
                                     const Matrix& egrad) {
  require_same_shape(x.value(), egrad, "riemannian_grad");
  return {project_tangent(x.value(), egrad), x.value()};
}

// --- distance and penalty --------------------------------------------------

struct ManifoldDistance {
  double value = 0.0;
  /// Set when x is numerically rank deficient: the nearest point is not unique.
  bool rank_deficient = false;
};

/// Distance to the polar factor: sqrt(Σ (σ_i − 1)²).
inline ManifoldDistance distance_to_manifold(const Matrix& x) {
  const Vector sv = x.jacobiSvd().singularValues();
  ManifoldDistance out;
  out.value = std::sqrt((sv.array() - 1.0).square().sum());
  const double cutoff = std::numeric_limits<double>::epsilon() *
                        static_cast<double>(std::max(x.rows(), x.cols())) *
                        std::max(1.0, sv.size() ? sv(0) : 0.0);
  out.rank_deficient = sv.size() == 0 || sv(sv.size() - 1) <= cutoff;
  return out;
}

/// N(x) = ‖xᵀx − I_r‖².
inline double penalty(const Matrix& x) {
  const double e = orthogonality_error(x);
  return e * e;
}

/// ∇N(x) = 4x(xᵀx − I_r).
inline Matrix penalty_grad(const Matrix& x) {
  return 4.0 * mul(x, mul(x.transpose(), x) - Matrix::Identity(x.cols(), x.cols()));
}

/// grad f(x) + λ∇N(x). Deterministic reference for the landing-directed
/// quantizer.
inline Matrix landing_field(const Matrix& x, const Matrix& egrad,
                            const SmoothnessConstants& consts) {
  require_same_shape(x, egrad, "landing_field");
  return project_tangent(x, egrad) + consts.landing_weight * penalty_grad(x);
}

// --- retractions -----------------------------------------------------------

enum class Retraction { QR, Polar };

/// Q factor of a thin QR with R's diagonal forced positive.
inline Matrix qr_orthonormalize(const Matrix& y) {
  const Eigen::Index d = y.rows();
  const Eigen::Index r = y.cols();
  Eigen::HouseholderQR<Matrix> qr(y);
  const Matrix R = qr.matrixQR().topRows(r).triangularView<Eigen::Upper>();
  Matrix Q = qr.householderQ() * Matrix::Identity(d, r);
  const double scale = std::max(1.0, y.norm());
  for (Eigen::Index j = 0; j < r; ++j) {
    if (std::abs(R(j, j)) <= 1e-13 * scale)
      throw RetractionError("QR retraction: x + xi is numerically rank deficient");
    if (R(j, j) < 0.0) Q.col(j) = -Q.col(j);
  }
  return Q;
}

/// Polar factor UVᵀ of the thin SVD.
inline Matrix polar_orthonormalize(const Matrix& y) {
  Eigen::JacobiSVD<Matrix> svd(y, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Vector& sv = svd.singularValues();
  if (sv.size() == 0 || sv(sv.size() - 1) <= 1e-13 * std::max(1.0, sv(0)))
    throw RetractionError("polar retraction: x + xi is numerically rank deficient");
  return svd.matrixU() * svd.matrixV().transpose();
}

inline Matrix retract_raw(const Matrix& x, const Matrix& xi, Retraction method) {
  const Matrix y = x + xi;
  return method == Retraction::QR ? qr_orthonormalize(y)
                                  : polar_orthonormalize(y);
}

inline StiefelPoint retract(const StiefelPoint& x, const TangentVector& xi,
                            Retraction method) {
  require_same_shape(x.value(), xi.value, "retract");
  if (!x.on_manifold())
    throw ValidationError("retract: base point is off the manifold (‖xᵀx−I‖ = " +
                          std::to_string(orthogonality_error(x.value())) + ")");
  return StiefelPoint(retract_raw(x.value(), xi.value, method));
}

}  // namespace qrgt
