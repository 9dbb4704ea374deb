#pragma once

#include "elements.hpp"
#include "model.hpp"

#include <cmath>
#include <vector>

namespace flexopt {

// A point on a body (r = S q_body) or on the ground (r = X + axis A sin(w t)).
struct Attachment {
  int offset = -1;  // global DOF offset of the body, -1 for ground
  Mat3X S = Mat3X(3, 0);
  Vec3 X = Vec3::Zero();
  Excitation excitation;
  std::vector<PointMapDot> d;  // per design variable

  bool ground() const { return offset < 0; }
  int cols() const { return static_cast<int>(S.cols()); }

  Vec3 ground_position(double t) const {
    return X + excitation.axis * excitation.amplitude * std::sin(excitation.angular_frequency * t);
  }
  Vec3 ground_rate(double t) const {
    const auto& e = excitation;
    return e.axis * e.amplitude * e.angular_frequency * std::cos(e.angular_frequency * t);
  }

  // Body-local slice of a global vector (empty for ground).
  VecX local(const VecX& q) const { return ground() ? VecX() : VecX(q.segment(offset, cols())); }

  PointMap map(double t) const {
    PointMap p;
    p.S = S;
    if (ground()) {
      p.offset = ground_position(t);
      p.offset_rate = ground_rate(t);
    }
    return p;
  }

  Vec3 position(const VecX& q, double t) const { return map(t).position(local(q)); }

  // Explicit derivative of the position along design variable i (q fixed).
  Vec3 position_tangent(const VecX& q, int i) const {
    const PointMapDot& t = d[i];
    Vec3 out = t.doffset;
    if (t.dS.cols()) out += t.dS * local(q);
    return out;
  }

  // Scatter S^T w (times sign) into a global vector.
  void add_transpose(VecX& out, const Vec3& w, double sign = 1.0) const {
    if (!ground()) out.segment(offset, cols()) += sign * (S.transpose() * w);
  }
};

enum class ConstraintKind { internal_orthonormality, spherical, welded, ground_anchor };

struct ConstraintBlock {
  ConstraintKind kind;
  std::string name;
  int row = 0;
  int dof = -1;     // internal, welded: rigid body offset (e_k at dof + 3 + 3k)
  int slope = -1;   // welded: global index of the beam node slope r'
  Attachment a, b;  // spherical, ground_anchor (b is the ground side)
  Vec3 ref = Vec3::Zero();
  std::vector<Vec3> dref;

  int rows() const { return kind == ConstraintKind::internal_orthonormality ? 6 : 3; }
};

// Index pairs (i, j) of the six orthonormality rows e_i . e_j - delta_ij.
inline constexpr int kOrthoPairs[6][2] = {{0, 0}, {1, 1}, {2, 2}, {0, 1}, {0, 2}, {1, 2}};

class ConstraintSet {
 public:
  ConstraintSet() = default;
  explicit ConstraintSet(int dofs) : m_(dofs) {}

  void add(ConstraintBlock b) {
    b.row = l_;
    l_ += b.rows();
    blocks_.push_back(std::move(b));
  }

  int rows() const { return l_; }
  int dofs() const { return m_; }
  const std::vector<ConstraintBlock>& blocks() const { return blocks_; }

  VecX evaluate(const VecX& q, double t) const {
    VecX g(l_);
    for (const auto& b : blocks_) {
      switch (b.kind) {
        case ConstraintKind::internal_orthonormality:
          for (int r = 0; r < 6; ++r) {
            const auto [i, j] = kOrthoPairs[r];
            g[b.row + r] = e(q, b, i).dot(e(q, b, j)) - (i == j ? 1.0 : 0.0);
          }
          break;
        case ConstraintKind::spherical:
        case ConstraintKind::ground_anchor:
          g.segment<3>(b.row) = b.a.position(q, t) - b.b.position(q, t);
          break;
        case ConstraintKind::welded: {
          const Vec3 rp = q.segment<3>(b.slope);
          for (int k = 0; k < 3; ++k) g[b.row + k] = e(q, b, k).dot(rp) - b.ref[k];
          break;
        }
      }
    }
    return g;
  }

  MatX jacobian(const VecX& q) const {
    MatX G = MatX::Zero(l_, m_);
    for (const auto& b : blocks_) {
      switch (b.kind) {
        case ConstraintKind::internal_orthonormality:
          for (int r = 0; r < 6; ++r) {
            const auto [i, j] = kOrthoPairs[r];
            G.block<1, 3>(b.row + r, col_e(b, i)) += e(q, b, j).transpose();
            G.block<1, 3>(b.row + r, col_e(b, j)) += e(q, b, i).transpose();
          }
          break;
        case ConstraintKind::spherical:
        case ConstraintKind::ground_anchor:
          if (!b.a.ground()) G.block(b.row, b.a.offset, 3, b.a.cols()) += b.a.S;
          if (!b.b.ground()) G.block(b.row, b.b.offset, 3, b.b.cols()) -= b.b.S;
          break;
        case ConstraintKind::welded: {
          const Vec3 rp = q.segment<3>(b.slope);
          for (int k = 0; k < 3; ++k) {
            G.block<1, 3>(b.row + k, col_e(b, k)) += rp.transpose();
            G.block<1, 3>(b.row + k, b.slope) += e(q, b, k).transpose();
          }
          break;
        }
      }
    }
    return G;
  }

  // Explicit time derivative dg/dt (nonzero only for excited ground points).
  VecX time_derivative(double t) const {
    VecX gt = VecX::Zero(l_);
    for (const auto& b : blocks_)
      if (b.kind == ConstraintKind::spherical || b.kind == ConstraintKind::ground_anchor) {
        if (b.a.ground()) gt.segment<3>(b.row) += b.a.ground_rate(t);
        if (b.b.ground()) gt.segment<3>(b.row) -= b.b.ground_rate(t);
      }
    return gt;
  }

  // Rows grad^2 g_k v: directional derivative of the Jacobian along v.
  MatX jacobian_hessian_contract(const VecX& v) const {
    MatX out = MatX::Zero(l_, m_);
    for (const auto& b : blocks_) {
      if (b.kind == ConstraintKind::internal_orthonormality) {
        for (int r = 0; r < 6; ++r) {
          const auto [i, j] = kOrthoPairs[r];
          out.block<1, 3>(b.row + r, col_e(b, i)) += v.segment<3>(col_e(b, j)).transpose();
          out.block<1, 3>(b.row + r, col_e(b, j)) += v.segment<3>(col_e(b, i)).transpose();
        }
      } else if (b.kind == ConstraintKind::welded) {
        for (int k = 0; k < 3; ++k) {
          out.block<1, 3>(b.row + k, col_e(b, k)) += v.segment<3>(b.slope).transpose();
          out.block<1, 3>(b.row + k, b.slope) += v.segment<3>(col_e(b, k)).transpose();
        }
      }
    }
    return out;
  }

  // sum_k lambda_k grad^2 g_k (symmetric m x m).
  MatX weighted_hessian(const VecX& lambda) const {
    MatX H = MatX::Zero(m_, m_);
    for (const auto& b : blocks_) {
      if (b.kind == ConstraintKind::internal_orthonormality) {
        for (int r = 0; r < 6; ++r) {
          const auto [i, j] = kOrthoPairs[r];
          const double w = lambda[b.row + r];
          H.block<3, 3>(col_e(b, i), col_e(b, j)).diagonal().array() += w;
          H.block<3, 3>(col_e(b, j), col_e(b, i)).diagonal().array() += w;
        }
      } else if (b.kind == ConstraintKind::welded) {
        for (int k = 0; k < 3; ++k) {
          const double w = lambda[b.row + k];
          H.block<3, 3>(col_e(b, k), b.slope).diagonal().array() += w;
          H.block<3, 3>(b.slope, col_e(b, k)).diagonal().array() += w;
        }
      }
    }
    return H;
  }

  // Explicit derivative dg/da_i with q held fixed.
  VecX design_derivative(const VecX& q, int i) const {
    VecX out = VecX::Zero(l_);
    for (const auto& b : blocks_) {
      if (b.kind == ConstraintKind::spherical || b.kind == ConstraintKind::ground_anchor)
        out.segment<3>(b.row) = b.a.position_tangent(q, i) - b.b.position_tangent(q, i);
      else if (b.kind == ConstraintKind::welded)
        out.segment<3>(b.row) = -b.dref[i];
    }
    return out;
  }

  // (dG/da_i)^T lambda with q held fixed.
  VecX jacobian_design_transpose(const VecX& lambda, int i) const {
    VecX out = VecX::Zero(m_);
    for (const auto& b : blocks_) {
      if (b.kind != ConstraintKind::spherical && b.kind != ConstraintKind::ground_anchor) continue;
      const Vec3 w = lambda.segment<3>(b.row);
      if (!b.a.ground() && b.a.d[i].dS.cols()) out.segment(b.a.offset, b.a.cols()) += b.a.d[i].dS.transpose() * w;
      if (!b.b.ground() && b.b.d[i].dS.cols()) out.segment(b.b.offset, b.b.cols()) -= b.b.d[i].dS.transpose() * w;
    }
    return out;
  }

  // (dG/da_i) v with q held fixed.
  VecX jacobian_design_product(const VecX& v, int i) const {
    VecX out = VecX::Zero(l_);
    for (const auto& b : blocks_) {
      if (b.kind != ConstraintKind::spherical && b.kind != ConstraintKind::ground_anchor) continue;
      if (!b.a.ground() && b.a.d[i].dS.cols()) out.segment<3>(b.row) += b.a.d[i].dS * b.a.local(v);
      if (!b.b.ground() && b.b.d[i].dS.cols()) out.segment<3>(b.row) -= b.b.d[i].dS * b.b.local(v);
    }
    return out;
  }

  // Max |e_i . e_j - delta_ij| over all rigid bodies.
  double orthonormality_residual(const VecX& q) const {
    double r = 0;
    const VecX g = evaluate(q, 0.0);
    for (const auto& b : blocks_)
      if (b.kind == ConstraintKind::internal_orthonormality)
        r = std::max(r, g.segment<6>(b.row).cwiseAbs().maxCoeff());
    return r;
  }

 private:
  static int col_e(const ConstraintBlock& b, int k) { return b.dof + 3 + 3 * k; }
  static Vec3 e(const VecX& q, const ConstraintBlock& b, int k) { return q.segment<3>(col_e(b, k)); }

  int m_ = 0;
  int l_ = 0;
  std::vector<ConstraintBlock> blocks_;
};

}  // namespace flexopt
