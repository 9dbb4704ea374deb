#pragma once

#include "types.hpp"

#include <cmath>
#include <stdexcept>

namespace flexopt {

// ---------------------------------------------------------------------------
// ANCF beam element, local DOFs [r_i, r_i', r_j, r_j'].

struct Hermite {
  double s1, s2, s3, s4;
};

inline Hermite beam_shape(double xi, double l) {
  if (!(xi >= 0.0 && xi <= 1.0)) throw std::domain_error("beam_shape: xi outside [0, 1]");
  const double x2 = xi * xi, x3 = x2 * xi;
  return {1.0 - 3.0 * x2 + 2.0 * x3, l * (xi - 2.0 * x2 + x3), 3.0 * x2 - 2.0 * x3, l * (x3 - x2)};
}

// First derivative with respect to the physical coordinate x = xi * l.
inline Hermite beam_shape_dx(double xi, double l) {
  const double x2 = xi * xi;
  return {(-6.0 * xi + 6.0 * x2) / l, 1.0 - 4.0 * xi + 3.0 * x2, (6.0 * xi - 6.0 * x2) / l, 3.0 * x2 - 2.0 * xi};
}

inline Hermite beam_shape_dxx(double xi, double l) {
  return {(-6.0 + 12.0 * xi) / (l * l), (-4.0 + 6.0 * xi) / l, (6.0 - 12.0 * xi) / (l * l), (6.0 * xi - 2.0) / l};
}

inline Eigen::Matrix<double, 3, 12> beam_shape_matrix(const Hermite& s) {
  Eigen::Matrix<double, 3, 12> S;
  const Mat3 I = Mat3::Identity();
  S << s.s1 * I, s.s2 * I, s.s3 * I, s.s4 * I;
  return S;
}

inline Mat12 kron_i3(const Eigen::Matrix4d& p) {
  Mat12 out = Mat12::Zero();
  for (int a = 0; a < 4; ++a)
    for (int b = 0; b < 4; ++b) out.block<3, 3>(3 * a, 3 * b).diagonal().setConstant(p(a, b));
  return out;
}

namespace detail {

// Entry (a, b) is coef * l^pw; order 1 gives the derivative in l.
inline Eigen::Matrix4d power_pattern(const double (&coef)[4][4], const int (&pw)[4][4], double l, int order) {
  Eigen::Matrix4d p;
  for (int a = 0; a < 4; ++a)
    for (int b = 0; b < 4; ++b) {
      const int k = pw[a][b];
      p(a, b) = order == 0 ? coef[a][b] * std::pow(l, k) : coef[a][b] * k * std::pow(l, k - 1);
    }
  return p;
}

// int_0^l S^T S dx / (rho A)
inline constexpr double kMassCoef[4][4] = {{156.0 / 420, 22.0 / 420, 54.0 / 420, -13.0 / 420},
                                           {22.0 / 420, 4.0 / 420, 13.0 / 420, -3.0 / 420},
                                           {54.0 / 420, 13.0 / 420, 156.0 / 420, -22.0 / 420},
                                           {-13.0 / 420, -3.0 / 420, -22.0 / 420, 4.0 / 420}};
inline constexpr int kMassPow[4][4] = {{1, 2, 1, 2}, {2, 3, 2, 3}, {1, 2, 1, 2}, {2, 3, 2, 3}};

// int_0^l S''^T S'' dx
inline constexpr double kBendCoef[4][4] = {
    {12, 6, -12, 6}, {6, 4, -6, 2}, {-12, -6, 12, -6}, {6, 2, -6, 4}};
inline constexpr int kBendPow[4][4] = {{-3, -2, -3, -2}, {-2, -1, -2, -1}, {-3, -2, -3, -2}, {-2, -1, -2, -1}};

// int_0^l S'^T S' dx
inline constexpr double kAxialCoef[4][4] = {{6.0 / 5, 1.0 / 10, -6.0 / 5, 1.0 / 10},
                                            {1.0 / 10, 2.0 / 15, -1.0 / 10, -1.0 / 30},
                                            {-6.0 / 5, -1.0 / 10, 6.0 / 5, -1.0 / 10},
                                            {1.0 / 10, -1.0 / 30, -1.0 / 10, 2.0 / 15}};
inline constexpr int kAxialPow[4][4] = {{-1, 0, -1, 0}, {0, 1, 0, 1}, {-1, 0, -1, 0}, {0, 1, 0, 1}};

}  // namespace detail

struct BeamParams {
  double l = 1.0;    // undeformed length
  double A = 1.0;    // section area
  double I = 1.0;    // second moment of area
  double E = 1.0;    // Young's modulus
  double rho = 1.0;  // density
  bool literal_transverse = false;
  bool literal_longitudinal = false;
};

// Tangent of BeamParams along one design direction.
struct BeamParamsDot {
  double l = 0, A = 0, I = 0, E = 0, rho = 0;
  bool is_zero() const { return l == 0 && A == 0 && I == 0 && E == 0 && rho == 0; }
};

inline Mat12 beam_mass(double rho, double A, double l) {
  if (!(rho > 0 && A > 0 && l > 0)) throw std::invalid_argument("beam_mass: non-positive input");
  return kron_i3(rho * A * detail::power_pattern(detail::kMassCoef, detail::kMassPow, l, 0));
}

inline Mat12 beam_mass_dl(double rho, double A, double l) {
  return kron_i3(rho * A * detail::power_pattern(detail::kMassCoef, detail::kMassPow, l, 1));
}

inline Mat12 beam_mass_tangent(const BeamParams& p, const BeamParamsDot& d) {
  const Eigen::Matrix4d P = detail::power_pattern(detail::kMassCoef, detail::kMassPow, p.l, 0);
  const Eigen::Matrix4d dP = detail::power_pattern(detail::kMassCoef, detail::kMassPow, p.l, 1);
  return kron_i3((d.rho * p.A + p.rho * d.A) * P + p.rho * p.A * d.l * dP);
}

// eps = |r_j - r_i| / l - 1
inline double beam_strain(const Vec12& q, double l) {
  return (q.segment<3>(6) - q.segment<3>(0)).norm() / l - 1.0;
}

inline double beam_axial_stress(const Vec12& q, const BeamParams& p) { return p.E * beam_strain(q, p.l); }

// Bending matrix int S''^T S'' dx (without EI).
inline Mat12 beam_bending_matrix(double l, int order = 0) {
  return kron_i3(detail::power_pattern(detail::kBendCoef, detail::kBendPow, l, order));
}

// Axial matrix int S'^T S' dx.
inline Mat12 beam_axial_matrix(double l, int order = 0) {
  return kron_i3(detail::power_pattern(detail::kAxialCoef, detail::kAxialPow, l, order));
}

// U = 1/2 EA l eps^2 + 1/2 EI int |r''|^2 dx
inline double beam_elastic_energy(const Vec12& q, const BeamParams& p) {
  const double eps = beam_strain(q, p.l);
  return 0.5 * p.E * p.A * p.l * eps * eps + 0.5 * p.E * p.I * q.dot(beam_bending_matrix(p.l) * q);
}

namespace detail {

// [-u, 0, u, 0] with u the unit chord direction.
inline Vec12 chord_gradient(const Vec12& q, double& d) {
  const Vec3 c = q.segment<3>(6) - q.segment<3>(0);
  d = c.norm();
  const Vec3 u = c / d;
  Vec12 g = Vec12::Zero();
  g.segment<3>(0) = -u;
  g.segment<3>(6) = u;
  return g;
}

}  // namespace detail

// Generalized elastic force dU/dq = K_long q + K_trans q.
inline Vec12 beam_elastic_force(const Vec12& q, const BeamParams& p) {
  double d = 0;
  const Vec12 g = detail::chord_gradient(q, d);
  const double eps = d / p.l - 1.0;
  const double EA = p.E * p.A;
  Vec12 f = p.literal_longitudinal ? Vec12(EA * eps * (beam_axial_matrix(p.l) * q)) : Vec12(EA * eps * g);
  const double kt = p.literal_transverse ? EA * eps : p.E * p.I;
  f += kt * (beam_bending_matrix(p.l) * q);
  return f;
}

// Tangent stiffness d(elastic force)/dq.
inline Mat12 beam_elastic_stiffness(const Vec12& q, const BeamParams& p) {
  double d = 0;
  const Vec12 g = detail::chord_gradient(q, d);
  const double eps = d / p.l - 1.0;
  const double EA = p.E * p.A;
  const Vec12 deps = g / p.l;
  const Mat12 B = beam_bending_matrix(p.l);
  Mat12 K;
  if (p.literal_longitudinal) {
    const Mat12 L = beam_axial_matrix(p.l);
    K = EA * (eps * L + (L * q) * deps.transpose());
  } else {
    const Vec3 u = g.segment<3>(6);
    const Mat3 Kc = EA * (u * u.transpose() / p.l + eps * (Mat3::Identity() - u * u.transpose()) / d);
    K = Mat12::Zero();
    K.block<3, 3>(0, 0) = Kc;
    K.block<3, 3>(6, 6) = Kc;
    K.block<3, 3>(0, 6) = -Kc;
    K.block<3, 3>(6, 0) = -Kc;
  }
  if (p.literal_transverse)
    K += EA * (eps * B + (B * q) * deps.transpose());
  else
    K += p.E * p.I * B;
  return K;
}

// Directional derivative of the elastic force along a parameter tangent, q held fixed.
inline Vec12 beam_elastic_force_tangent(const Vec12& q, const BeamParams& p, const BeamParamsDot& dp) {
  double d = 0;
  const Vec12 g = detail::chord_gradient(q, d);
  const double eps = d / p.l - 1.0;
  const double deps = -d / (p.l * p.l) * dp.l;
  const double EA = p.E * p.A;
  const double dEA = dp.E * p.A + p.E * dp.A;
  Vec12 f;
  if (p.literal_longitudinal) {
    f = (dEA * eps + EA * deps) * (beam_axial_matrix(p.l) * q) + EA * eps * dp.l * (beam_axial_matrix(p.l, 1) * q);
  } else {
    f = (dEA * eps + EA * deps) * g;
  }
  const Vec12 Bq = beam_bending_matrix(p.l) * q;
  const Vec12 dBq = beam_bending_matrix(p.l, 1) * q * dp.l;
  if (p.literal_transverse)
    f += (dEA * eps + EA * deps) * Bq + EA * eps * dBq;
  else
    f += (dp.E * p.I + p.E * dp.I) * Bq + p.E * p.I * dBq;
  return f;
}

// dU_gravity/dq = -(rho A l / 12) [6 nu, l nu, 6 nu, -l nu]
inline Vec12 beam_gravity_force(double rho, double A, double l, const Vec3& nu) {
  Vec12 f;
  const double w = rho * A * l / 12.0;
  f << -6.0 * w * nu, -l * w * nu, -6.0 * w * nu, l * w * nu;
  return f;
}

inline double beam_gravity_energy(const Vec12& q, double rho, double A, double l, const Vec3& nu) {
  return beam_gravity_force(rho, A, l, nu).dot(q);
}

inline Vec12 beam_gravity_force_tangent(const BeamParams& p, const BeamParamsDot& dp, const Vec3& nu) {
  const double w = p.rho * p.A * p.l / 12.0;
  const double dw = (dp.rho * p.A * p.l + p.rho * dp.A * p.l + p.rho * p.A * dp.l) / 12.0;
  Vec12 f;
  f << -6.0 * dw * nu, -(dp.l * w + p.l * dw) * nu, -6.0 * dw * nu, (dp.l * w + p.l * dw) * nu;
  return f;
}

struct BeamDesignDerivatives {
  Mat12 dM;
  Vec12 dF_elastic;
  Vec12 dF_gravity;
};

// Explicit derivatives of the beam closed forms along a parameter tangent (chain through l, A, I, E, rho).
inline BeamDesignDerivatives beam_design_derivatives(const Vec12& q, const BeamParams& p, const BeamParamsDot& dp,
                                                     const Vec3& nu) {
  if (dp.is_zero()) return {Mat12::Zero(), Vec12::Zero(), Vec12::Zero()};
  return {beam_mass_tangent(p, dp), beam_elastic_force_tangent(q, p, dp), beam_gravity_force_tangent(p, dp, nu)};
}

// dl/dX_j for l = |X_j - X_i|.
inline Vec3 length_gradient(const Vec3& Xi, const Vec3& Xj) { return (Xj - Xi) / (Xj - Xi).norm(); }

// ---------------------------------------------------------------------------
// Natural-coordinate rigid body, local DOFs [r_CM, e1, e2, e3].

inline void check_inertia(double m, double I1, double I2, double I3) {
  if (!(m > 0)) throw std::invalid_argument("rigid body: mass must be positive");
  if (!(I1 >= 0 && I2 >= 0 && I3 >= 0)) throw std::invalid_argument("rigid body: negative principal inertia");
  if (I1 + I2 < I3 || I1 + I3 < I2 || I2 + I3 < I1)
    throw std::invalid_argument("rigid body: principal inertias violate the triangle inequality");
}

inline Mat12 rigid_mass(double m, double I1, double I2, double I3) {
  check_inertia(m, I1, I2, I3);
  Mat12 M = Mat12::Zero();
  M.block<3, 3>(0, 0).diagonal().setConstant(m);
  M.block<3, 3>(3, 3).diagonal().setConstant(0.5 * (I2 + I3 - I1));
  M.block<3, 3>(6, 6).diagonal().setConstant(0.5 * (I1 + I3 - I2));
  M.block<3, 3>(9, 9).diagonal().setConstant(0.5 * (I1 + I2 - I3));
  return M;
}

inline Eigen::Matrix<double, 3, 12> rigid_shape_matrix(const Vec3& xbar) {
  Eigen::Matrix<double, 3, 12> S;
  const Mat3 I = Mat3::Identity();
  S << I, xbar.x() * I, xbar.y() * I, xbar.z() * I;
  return S;
}

inline Vec3 rigid_point_position(const Vec12& q, const Vec3& xbar) {
  return q.segment<3>(0) + xbar.x() * q.segment<3>(3) + xbar.y() * q.segment<3>(6) + xbar.z() * q.segment<3>(9);
}

// Columns e1, e2, e3.
inline Mat3 rigid_frame(const Vec12& q) {
  Mat3 R;
  R << q.segment<3>(3), q.segment<3>(6), q.segment<3>(9);
  return R;
}

inline Vec12 rigid_gravity_force(double m, const Vec3& nu) {
  Vec12 f = Vec12::Zero();
  f.segment<3>(0) = -m * nu;
  return f;
}

// ---------------------------------------------------------------------------
// Springs and dampers between two attachment points r = S q + offset.

struct PointMap {
  Mat3X S;                          // 3 x n, n = 0 for a ground point
  Vec3 offset = Vec3::Zero();       // ground position or zero
  Vec3 offset_rate = Vec3::Zero();  // time derivative of offset
  Vec3 position(const VecX& q) const { return (S.cols() ? Vec3(S * q) : Vec3::Zero()) + offset; }
  Vec3 velocity(const VecX& qd) const { return (S.cols() ? Vec3(S * qd) : Vec3::Zero()) + offset_rate; }
};

// Tangent of a PointMap along one design direction (q held fixed).
struct PointMapDot {
  Mat3X dS;
  Vec3 doffset = Vec3::Zero();
};

inline double spring_energy(const VecX& qA, const VecX& qB, const PointMap& A, const PointMap& B, double k,
                            double l0) {
  const double lt = (A.position(qA) - B.position(qB)).norm();
  return 0.5 * k * (lt - l0) * (lt - l0);
}

namespace detail {

inline VecX stack_transpose(const PointMap& A, const PointMap& B, const Vec3& w) {
  VecX out(A.S.cols() + B.S.cols());
  if (A.S.cols()) out.head(A.S.cols()) = A.S.transpose() * w;
  if (B.S.cols()) out.tail(B.S.cols()) = -(B.S.transpose() * w);
  return out;
}

inline MatX relative_map(const PointMap& A, const PointMap& B) {
  MatX D(3, A.S.cols() + B.S.cols());
  if (A.S.cols()) D.leftCols(A.S.cols()) = A.S;
  if (B.S.cols()) D.rightCols(B.S.cols()) = -B.S;
  return D;
}

}  // namespace detail

// dU_spring/dq over stacked [q_A; q_B].
inline VecX spring_force(const VecX& qA, const VecX& qB, const PointMap& A, const PointMap& B, double k, double l0) {
  const Vec3 d = A.position(qA) - B.position(qB);
  const double lt = d.norm();
  if (!(lt > 0)) throw std::domain_error("spring_force: zero current length");
  return detail::stack_transpose(A, B, k * (lt - l0) / lt * d);
}

inline MatX spring_stiffness(const VecX& qA, const VecX& qB, const PointMap& A, const PointMap& B, double k,
                             double l0) {
  const Vec3 d = A.position(qA) - B.position(qB);
  const double lt = d.norm();
  if (!(lt > 0)) throw std::domain_error("spring_stiffness: zero current length");
  const Vec3 u = d / lt;
  const Mat3 Kc = k * ((1.0 - l0 / lt) * Mat3::Identity() + (l0 / lt) * u * u.transpose());
  const MatX D = detail::relative_map(A, B);
  return D.transpose() * Kc * D;
}

// Derivative of spring_force along design tangents of k, l0 and both attachments.
inline VecX spring_force_tangent(const VecX& qA, const VecX& qB, const PointMap& A, const PointMap& B, double k,
                                 double l0, const PointMapDot& dA, const PointMapDot& dB, double dk, double dl0) {
  const Vec3 d = A.position(qA) - B.position(qB);
  const double lt = d.norm();
  Vec3 dd = dA.doffset - dB.doffset;
  if (dA.dS.cols()) dd += dA.dS * qA;
  if (dB.dS.cols()) dd -= dB.dS * qB;
  const double dlt = d.dot(dd) / lt;
  const double kappa = k * (1.0 - l0 / lt);
  const double dkappa = dk * (1.0 - l0 / lt) + k * (-dl0 / lt + l0 * dlt / (lt * lt));
  VecX out = detail::stack_transpose(A, B, dkappa * d + kappa * dd);
  const Vec3 w = kappa * d;
  if (dA.dS.cols()) out.head(A.S.cols()) += dA.dS.transpose() * w;
  if (dB.dS.cols()) out.tail(B.S.cols()) -= dB.dS.transpose() * w;
  return out;
}

// Damper force -c [S_A^T; -S_B^T] (v_A - v_B) over stacked velocities.
inline VecX damper_force(const VecX& qdA, const VecX& qdB, const PointMap& A, const PointMap& B, double c) {
  return detail::stack_transpose(A, B, -c * (A.velocity(qdA) - B.velocity(qdB)));
}

inline MatX damper_damping(const PointMap& A, const PointMap& B, double c) {
  const MatX D = detail::relative_map(A, B);
  return -c * D.transpose() * D;
}

inline VecX damper_force_tangent(const VecX& qdA, const VecX& qdB, const PointMap& A, const PointMap& B, double c,
                                 const PointMapDot& dA, const PointMapDot& dB, double dc) {
  const Vec3 vr = A.velocity(qdA) - B.velocity(qdB);
  Vec3 dvr = Vec3::Zero();
  if (dA.dS.cols()) dvr += dA.dS * qdA;
  if (dB.dS.cols()) dvr -= dB.dS * qdB;
  VecX out = detail::stack_transpose(A, B, -dc * vr - c * dvr);
  const Vec3 w = -c * vr;
  if (dA.dS.cols()) out.head(A.S.cols()) += dA.dS.transpose() * w;
  if (dB.dS.cols()) out.tail(B.S.cols()) -= dB.dS.transpose() * w;
  return out;
}

}  // namespace flexopt
