#pragma once

#include "integrator.hpp"

#include <cmath>
#include <vector>

namespace flexopt {

// Scalar functional of a trajectory: the design objective or one optimization constraint.
struct Functional {
  enum class Kind { objective, max_stress, min_length };
  Kind kind = Kind::objective;
  std::vector<ObjectiveTerm> terms;
  OptConstraintSpec constraint;

  static Functional objective(const ObjectiveSpec& s) { return {Kind::objective, s.terms, {}}; }
  static Functional from_constraint(const OptConstraintSpec& c) {
    return {c.type == "max_stress" ? Kind::max_stress : Kind::min_length, {}, c};
  }
  bool depends_on_state() const { return kind != Kind::min_length; }
};

// Value and partial derivatives of a discretized functional; dlambda is empty when zero.
struct FunctionalPartials {
  double value = 0;
  std::vector<VecX> dq;  // n = 0..N
  std::vector<VecX> dlambda;
  VecX dqdot0;
  VecX da;  // explicit dependence on the design variables
};

namespace detail {

inline int sample_step(const Trajectory& tr, const ObjectiveTerm& t) {
  if (!t.time) return tr.N;
  const int k = static_cast<int>(std::lround(*t.time / tr.h));
  return std::clamp(k, 0, tr.N);
}

// w |r_P(q_mid) - X_P|^2 integrated with the one-point rule.
inline void add_point_displacement(const AssembledSystem& sys, const Trajectory& tr, double alpha,
                                   const ObjectiveTerm& t, FunctionalPartials& out) {
  const Attachment at = sys.attachment({t.body, t.point});
  const Vec3 X0 = sys.model.points.at(t.point);
  const int nd = sys.design_count();
  const double h = tr.h;
  for (int n = 0; n < tr.N; ++n) {
    const VecX mid = (1.0 - alpha) * tr.q[n] + alpha * tr.q[n + 1];
    const Vec3 d = at.position(mid, 0.0) - X0;
    out.value += h * t.weight * d.squaredNorm();
    VecX Hq = VecX::Zero(sys.m);
    at.add_transpose(Hq, 2.0 * t.weight * d);
    out.dq[n] += h * (1.0 - alpha) * Hq;
    out.dq[n + 1] += h * alpha * Hq;
    for (int i = 0; i < nd; ++i) {
      const Vec3 dr = at.position_tangent(mid, i) - sys.point_tangent(t.point, i);
      out.da[i] += h * 2.0 * t.weight * d.dot(dr);
    }
  }
}

// (r_tip - r_base) . n, with n = unit(normal x r'_base), sampled at one step.
inline void add_tip_deflection(const AssembledSystem& sys, const Trajectory& tr, const ObjectiveTerm& t,
                               FunctionalPartials& out) {
  const int k = sample_step(tr, t);
  const int tip = sys.beam_node_dof(t.body, t.point);
  const int base = sys.beam_node_dof(t.body, t.base);
  const VecX& q = tr.q[k];
  const Vec3 d = q.segment<3>(tip) - q.segment<3>(base);
  const Mat3 Z = skew(t.normal);
  const Vec3 w = Z * q.segment<3>(base + 3);
  const double wn = w.norm();
  const Vec3 nhat = w / wn;
  out.value += t.weight * d.dot(nhat);
  out.dq[k].segment<3>(tip) += t.weight * nhat;
  out.dq[k].segment<3>(base) -= t.weight * nhat;
  out.dq[k].segment<3>(base + 3) += t.weight * Z.transpose() * (d - nhat * nhat.dot(d)) / wn;
}

inline double total_beam_length(const AssembledSystem& sys, const std::string& beam, VecX* dl) {
  const BeamBody& bb = sys.beam(beam);
  double l = 0;
  if (dl) dl->setZero(sys.design_count());
  for (int e : bb.elements) {
    l += sys.elements[e].p.l;
    if (dl)
      for (int i = 0; i < sys.design_count(); ++i) (*dl)[i] += sys.elements[e].d[i].l;
  }
  return l;
}

// G = (S / T)^(1/p) - 1 with S = sum_n h sum_e (sigma_e(q_mid) / sigma_max)^p.
inline void add_max_stress(const AssembledSystem& sys, const Trajectory& tr, double alpha,
                           const OptConstraintSpec& c, FunctionalPartials& out) {
  const BeamBody& bb = sys.beam(c.beam);
  const int nd = sys.design_count();
  const double h = tr.h, p = c.p, smax = c.value;
  const double T = tr.N * h;
  double S = 0;
  std::vector<VecX> dS(tr.N + 1, VecX::Zero(sys.m));
  VecX dSa = VecX::Zero(nd);
  for (int n = 0; n < tr.N; ++n) {
    const VecX mid = (1.0 - alpha) * tr.q[n] + alpha * tr.q[n + 1];
    for (int ei : bb.elements) {
      const BeamElement& e = sys.elements[ei];
      const Vec12 qe = mid.segment<12>(e.offset);
      double len = 0;
      const Vec12 g = chord_gradient(qe, len);
      const double sigma = e.p.E * (len / e.p.l - 1.0);
      const double r = sigma / smax;
      S += h * std::pow(r, p);
      const double dr = h * p * std::pow(r, p - 1.0) / smax;
      const Vec12 ds = dr * e.p.E / e.p.l * g;
      dS[n].segment<12>(e.offset) += (1.0 - alpha) * ds;
      dS[n + 1].segment<12>(e.offset) += alpha * ds;
      for (int i = 0; i < nd; ++i) {
        const auto& de = e.d[i];
        if (de.E == 0 && de.l == 0) continue;
        dSa[i] += dr * (de.E * (len / e.p.l - 1.0) - e.p.E * len * de.l / (e.p.l * e.p.l));
      }
    }
  }
  const double base = S / T;
  out.value += std::pow(base, 1.0 / p) - 1.0;
  const double f = base > 0 ? std::pow(base, 1.0 / p - 1.0) / (p * T) : 0.0;
  for (int n = 0; n <= tr.N; ++n) out.dq[n] += f * dS[n];
  out.da += f * dSa;
}

}  // namespace detail

inline FunctionalPartials evaluate_functional(const Functional& fn, const AssembledSystem& sys, const Trajectory& tr,
                                              double alpha) {
  FunctionalPartials out;
  const int nd = sys.design_count();
  out.dq.assign(tr.N + 1, VecX::Zero(sys.m));
  out.dqdot0 = VecX::Zero(sys.m);
  out.da = VecX::Zero(nd);
  switch (fn.kind) {
    case Functional::Kind::objective:
      for (const auto& t : fn.terms) {
        if (t.type == "point_displacement_sq")
          detail::add_point_displacement(sys, tr, alpha, t, out);
        else
          detail::add_tip_deflection(sys, tr, t, out);
      }
      break;
    case Functional::Kind::max_stress:
      detail::add_max_stress(sys, tr, alpha, fn.constraint, out);
      break;
    case Functional::Kind::min_length: {
      VecX dl;
      out.value = fn.constraint.value - detail::total_beam_length(sys, fn.constraint.beam, &dl);
      out.da = -dl;
      break;
    }
  }
  return out;
}

inline double objective_eval(const AssembledSystem& sys, const Trajectory& tr, double alpha) {
  return evaluate_functional(Functional::objective(sys.model.objective_spec), sys, tr, alpha).value;
}

}  // namespace flexopt
