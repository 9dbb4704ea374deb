#pragma once

#include <Eigen/Dense>

#include <stdexcept>
#include <string>

namespace flexopt {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Vec12 = Eigen::Matrix<double, 12, 1>;
using Mat12 = Eigen::Matrix<double, 12, 12>;
using VecX = Eigen::VectorXd;
using MatX = Eigen::MatrixXd;
using Mat3X = Eigen::Matrix<double, 3, Eigen::Dynamic>;

// Malformed or inconsistent input (CLI exit status 2).
struct InputError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Valid input that cannot be run as requested (exit status 3).
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Solver breakdown: singular matrix or Newton non-convergence (exit status 4).
struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline Mat3 skew(const Vec3& w) {
  Mat3 s;
  s << 0, -w.z(), w.y(), w.z(), 0, -w.x(), -w.y(), w.x(), 0;
  return s;
}

}  // namespace flexopt
