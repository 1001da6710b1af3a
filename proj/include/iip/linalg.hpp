#pragma once

#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace iip {

using Eigen::MatrixXd;
using Eigen::VectorXd;
using Vec2 = Eigen::Vector2d;
using Mat2 = Eigen::Matrix2d;

/// Base class for all errors raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Raised when a contact Gram matrix or constraint Jacobian is rank deficient.
class SingularContactError : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  using Error::Error;
};

/// Relative singular value cutoff used for every numerical rank decision.
inline constexpr double kRankTolerance = 1e-8;

inline void require_size(const VectorXd& v, Eigen::Index n, const char* what) {
  if (v.size() != n) {
    throw DimensionError(std::string(what) + ": expected size " + std::to_string(n) + ", got " +
                         std::to_string(v.size()));
  }
}

inline void require_shape(const MatrixXd& m, Eigen::Index rows, Eigen::Index cols, const char* what) {
  if (m.rows() != rows || m.cols() != cols) {
    throw DimensionError(std::string(what) + ": expected " + std::to_string(rows) + "x" +
                         std::to_string(cols) + ", got " + std::to_string(m.rows()) + "x" +
                         std::to_string(m.cols()));
  }
}

inline bool all_finite(const MatrixXd& m) { return m.allFinite(); }

/// Moore-Penrose pseudo-inverse; singular values below rel_tol * sigma_max are dropped.
inline MatrixXd pseudo_inverse(const MatrixXd& a, double rel_tol = kRankTolerance) {
  if (a.size() == 0) return MatrixXd::Zero(a.cols(), a.rows());
  Eigen::JacobiSVD<MatrixXd> svd(a, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const VectorXd& s = svd.singularValues();
  const double cutoff = rel_tol * (s.size() > 0 ? s(0) : 0.0);
  VectorXd s_inv = VectorXd::Zero(s.size());
  for (Eigen::Index i = 0; i < s.size(); ++i) {
    if (s(i) > cutoff && s(i) > 0.0) s_inv(i) = 1.0 / s(i);
  }
  return svd.matrixV() * s_inv.asDiagonal() * svd.matrixU().transpose();
}

/// Numerical rank under the library-wide relative tolerance.
inline Eigen::Index numerical_rank(const MatrixXd& a, double rel_tol = kRankTolerance) {
  if (a.size() == 0) return 0;
  Eigen::JacobiSVD<MatrixXd> svd(a);
  const VectorXd& s = svd.singularValues();
  if (s.size() == 0 || s(0) == 0.0) return 0;
  Eigen::Index r = 0;
  for (Eigen::Index i = 0; i < s.size(); ++i) {
    if (s(i) > rel_tol * s(0)) ++r;
  }
  return r;
}

inline MatrixXd symmetrize(const MatrixXd& a) { return 0.5 * (a + a.transpose()); }

/// Planar cross product r x f (z component).
inline double cross2(const Vec2& r, const Vec2& f) { return r.x() * f.y() - r.y() * f.x(); }

}  // namespace iip
