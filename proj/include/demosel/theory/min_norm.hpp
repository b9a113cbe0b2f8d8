#pragma once

#include <cstddef>

#include <Eigen/Dense>

#include "demosel/common.hpp"

namespace demosel::theory {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Singular values below this fraction of the largest are treated as zero.
inline constexpr double kRankTolerance = 1e-10;

/// Min-norm interpolator for the linear model y = <theta, e>. Given the K x d
/// data matrix E of selected demonstrations, the min-norm solution is
/// E^+ E theta, the orthogonal projection of theta onto the row space of E.
/// The projector comes from an SVD of E^T with small singular values dropped,
/// so duplicated or dependent rows are handled.
class MinNormModel {
public:
  explicit MinNormModel(const Matrix& data) : dim_(static_cast<std::size_t>(data.cols())) {
    if (data.rows() == 0) throw ValidationError("min-norm model needs at least one demonstration");
    const Matrix et = data.transpose();
    Eigen::JacobiSVD<Matrix> svd(et, Eigen::ComputeThinU);
    const auto& sv = svd.singularValues();
    const double top = sv.size() > 0 ? sv(0) : 0.0;
    Eigen::Index r = 0;
    if (top > 0.0)
      while (r < sv.size() && sv(r) > kRankTolerance * top) ++r;
    basis_ = svd.matrixU().leftCols(r);
  }

  std::size_t dim() const { return dim_; }
  std::size_t rank() const { return static_cast<std::size_t>(basis_.cols()); }

  Vector project(const Vector& v) const { return basis_ * (basis_.transpose() * v); }

  /// y_pred = <e_q, E^+ E theta>.
  double predict(const Vector& theta, const Vector& query) const { return query.dot(project(theta)); }

  /// e_q - P e_q. The prediction error for any theta is -<residual, theta>.
  Vector residual(const Vector& query) const { return query - project(query); }

private:
  std::size_t dim_;
  Matrix basis_; // d x rank, orthonormal columns spanning the row space
};

inline double min_norm_predict(const Matrix& data, const Vector& theta, const Vector& query) {
  if (data.cols() != theta.size() || data.cols() != query.size())
    throw ValidationError("min_norm_predict: dimension mismatch");
  return MinNormModel(data).predict(theta, query);
}

/// (y_pred - <theta, e_q>)^2
inline double prediction_loss(double y_pred, const Vector& theta, const Vector& query) {
  const double r = y_pred - theta.dot(query);
  return r * r;
}

} // namespace demosel::theory
