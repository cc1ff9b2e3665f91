#pragma once

#include <stdexcept>
#include <string>

#include <Eigen/Core>
#include <Eigen/Sparse>

namespace handforge {

// Per-vertex data: one row per vertex/face, row-major so a row is a contiguous point.
using PointMatrix = Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>;
using FaceMatrix = Eigen::Matrix<int, Eigen::Dynamic, 3, Eigen::RowMajor>;
using EdgeMatrix = Eigen::Matrix<int, Eigen::Dynamic, 2, Eigen::RowMajor>;

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;
using VecX = Eigen::VectorXd;
using MatX = Eigen::MatrixXd;
using SparseMat = Eigen::SparseMatrix<double>;
using SparseMatRM = Eigen::SparseMatrix<double, Eigen::RowMajor>;

/// Base class for all handforge exceptions.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

/// File not found, parse failures, malformed containers.
class IoError : public Error {
 public:
  explicit IoError(const std::string& what) : Error(what) {}
};

/// Inputs that violate a documented precondition (dimensions, ranges, invariants).
class DataError : public Error {
 public:
  explicit DataError(const std::string& what) : Error(what) {}
};

/// Optimizer failures: non-finite values encountered mid-solve.
class SolverError : public Error {
 public:
  explicit SolverError(const std::string& what) : Error(what) {}
};

/// Flatten a V x 3 point matrix to a 3V vector with layout [x0,y0,z0,x1,...].
inline VecX flatten_points(const PointMatrix& points) {
  return Eigen::Map<const VecX>(points.data(), points.size());
}

/// Inverse of flatten_points.
inline PointMatrix unflatten_points(const VecX& flat) {
  if (flat.size() % 3 != 0) throw DataError("unflatten_points: size not divisible by 3");
  return Eigen::Map<const PointMatrix>(flat.data(), flat.size() / 3, 3);
}

}  // namespace handforge
