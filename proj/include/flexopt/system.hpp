#pragma once

#include "constraints.hpp"
#include "elements.hpp"
#include "model.hpp"

#include <map>
#include <string>
#include <vector>

namespace flexopt {

struct RigidBody {
  std::string name;
  int offset = 0;
  double mass = 0;
  Vec3 inertia = Vec3::Zero();
  Vec3 cm = Vec3::Zero();
  Mat3 R0 = Mat3::Identity();
};

struct BeamElement {
  int body = 0;
  int offset = 0;  // global offset of [r_i, r_i', r_j, r_j']
  BeamParams p;
  std::vector<BeamParamsDot> d;
};

struct BeamBody {
  std::string name;
  int offset = 0;
  int node_count = 0;
  std::map<std::string, int> named_nodes;  // declared node -> node index
  std::vector<int> elements;
};

struct Spring {
  std::string name;
  Attachment a, b;
  double k = 0, l0 = 0;
  std::vector<double> dk, dl0;
};

struct Damper {
  std::string name;
  Attachment a, b;
  double c = 0;
  std::vector<double> dc;
};

struct InitialConditionReport {
  double g_residual = 0;
  double gdot_residual = 0;
  double tangent_residual = 0;  // max_i |dg/da_i + G dq0/da_i|
  bool pass = false;
};

struct AssembledSystem {
  ModelDefinition model;  // with the design vector substituted
  VecX a;
  int m = 0;
  MatX M;
  std::vector<MatX> dM;  // empty where a variable does not touch the mass
  Vec3 gravity = Vec3::Zero();

  std::vector<RigidBody> rigid;
  std::vector<BeamBody> beams;
  std::vector<BeamElement> elements;
  std::vector<Spring> springs;
  std::vector<Damper> dampers;
  ConstraintSet constraints;
  MatX C;  // damping matrix d(damper force)/dv, constant

  VecX q0, qdot0;
  std::vector<VecX> dq0, dqdot0;

  std::map<std::string, std::vector<Vec3>> dpoints;  // bound points only

  int dofs() const { return m; }
  int constraint_count() const { return constraints.rows(); }
  int design_count() const { return static_cast<int>(a.size()); }

  Vec3 point_tangent(const std::string& name, int i) const {
    auto it = dpoints.find(name);
    return it == dpoints.end() ? Vec3::Zero() : it->second[i];
  }

  // Attachment for a body point or ground point, with design tangents.
  Attachment attachment(const AttachRef& r) const {
    Attachment at;
    const int nd = design_count();
    at.d.resize(nd);
    const Vec3 X = model.points.at(r.point);
    if (r.ground()) {
      at.X = X;
      if (auto e = model.excitations.find(r.point); e != model.excitations.end()) at.excitation = e->second;
      for (int i = 0; i < nd; ++i) at.d[i].doffset = point_tangent(r.point, i);
      return at;
    }
    for (const auto& rb : rigid)
      if (rb.name == r.body) {
        const Vec3 xbar = rb.R0.transpose() * (X - rb.cm);
        at.offset = rb.offset;
        at.S = rigid_shape_matrix(xbar);
        for (int i = 0; i < nd; ++i) {
          const Vec3 dx = rb.R0.transpose() * point_tangent(r.point, i);
          if (dx.isZero(0)) continue;
          Mat3X dS = rigid_shape_matrix(dx);
          dS.leftCols<3>().setZero();
          at.d[i].dS = dS;
        }
        return at;
      }
    for (const auto& bb : beams)
      if (bb.name == r.body) {
        const int node = bb.named_nodes.at(r.point);
        at.offset = bb.offset;
        at.S = Mat3X::Zero(3, 6 * bb.node_count);
        at.S.block<3, 3>(0, 6 * node).setIdentity();
        return at;
      }
    throw InputError("unknown body '" + r.body + "'");
  }

  // Global DOF index of a beam node position (slope follows at +3).
  int beam_node_dof(const std::string& body, const std::string& point) const {
    for (const auto& bb : beams)
      if (bb.name == body) return bb.offset + 6 * bb.named_nodes.at(point);
    throw InputError("unknown beam '" + body + "'");
  }

  const BeamBody& beam(const std::string& name) const {
    for (const auto& bb : beams)
      if (bb.name == name) return bb;
    throw InputError("unknown beam '" + name + "'");
  }

  // -------------------------------------------------------------------------
  // Potential forces (gradients of U) and dissipative forces.

  VecX potential_gradient(const VecX& q, double t) const {
    VecX f = VecX::Zero(m);
    for (const auto& e : elements) {
      const Vec12 qe = q.segment<12>(e.offset);
      f.segment<12>(e.offset) += beam_elastic_force(qe, e.p) + beam_gravity_force(e.p.rho, e.p.A, e.p.l, gravity);
    }
    for (const auto& r : rigid) f.segment<12>(r.offset) += rigid_gravity_force(r.mass, gravity);
    for (const auto& s : springs)
      scatter(f, s.a, s.b, spring_force(s.a.local(q), s.b.local(q), s.a.map(t), s.b.map(t), s.k, s.l0));
    return f;
  }

  MatX stiffness(const VecX& q, double t) const {
    MatX K = MatX::Zero(m, m);
    for (const auto& e : elements) K.block<12, 12>(e.offset, e.offset) += beam_elastic_stiffness(q.segment<12>(e.offset), e.p);
    for (const auto& s : springs)
      scatter(K, s.a, s.b, spring_stiffness(s.a.local(q), s.b.local(q), s.a.map(t), s.b.map(t), s.k, s.l0));
    return K;
  }

  double potential_energy(const VecX& q, double t) const {
    double U = 0;
    for (const auto& e : elements) {
      const Vec12 qe = q.segment<12>(e.offset);
      U += beam_elastic_energy(qe, e.p) + beam_gravity_energy(qe, e.p.rho, e.p.A, e.p.l, gravity);
    }
    for (const auto& r : rigid) U += rigid_gravity_force(r.mass, gravity).dot(q.segment<12>(r.offset));
    for (const auto& s : springs)
      U += spring_energy(s.a.local(q), s.b.local(q), s.a.map(t), s.b.map(t), s.k, s.l0);
    return U;
  }

  double kinetic_energy(const VecX& v) const { return 0.5 * v.dot(M * v); }

  VecX damper_forces(const VecX& v, double t) const {
    VecX f = VecX::Zero(m);
    for (const auto& d : dampers) scatter(f, d.a, d.b, damper_force(d.a.local(v), d.b.local(v), d.a.map(t), d.b.map(t), d.c));
    return f;
  }

  // Q(q, v, t) = f_damper - dU/dq; dQ/dq = -K, dQ/dv = C.
  VecX generalized_force(const VecX& q, const VecX& v, double t) const {
    return damper_forces(v, t) - potential_gradient(q, t);
  }

  // Explicit dQ/da_i with q, v held fixed.
  VecX force_design_derivative(const VecX& q, const VecX& v, double t, int i) const {
    VecX f = VecX::Zero(m);
    for (const auto& e : elements) {
      if (e.d[i].is_zero()) continue;
      const auto dd = beam_design_derivatives(q.segment<12>(e.offset), e.p, e.d[i], gravity);
      f.segment<12>(e.offset) -= dd.dF_elastic + dd.dF_gravity;
    }
    for (const auto& s : springs) {
      if (!touches(s.a, i) && !touches(s.b, i) && s.dk[i] == 0 && s.dl0[i] == 0) continue;
      scatter(f, s.a, s.b,
              spring_force_tangent(s.a.local(q), s.b.local(q), s.a.map(t), s.b.map(t), s.k, s.l0, s.a.d[i],
                                   s.b.d[i], s.dk[i], s.dl0[i]),
              -1.0);
    }
    for (const auto& d : dampers) {
      if (!touches(d.a, i) && !touches(d.b, i) && d.dc[i] == 0) continue;
      scatter(f, d.a, d.b,
              damper_force_tangent(d.a.local(v), d.b.local(v), d.a.map(t), d.b.map(t), d.c, d.a.d[i], d.b.d[i],
                                   d.dc[i]));
    }
    return f;
  }

  static bool touches(const Attachment& at, int i) { return at.d[i].dS.cols() || !at.d[i].doffset.isZero(0); }

 private:
  static void scatter(VecX& out, const Attachment& A, const Attachment& B, const VecX& f, double sign = 1.0) {
    if (!A.ground()) out.segment(A.offset, A.cols()) += sign * f.head(A.cols());
    if (!B.ground()) out.segment(B.offset, B.cols()) += sign * f.tail(B.cols());
  }
  static void scatter(MatX& out, const Attachment& A, const Attachment& B, const MatX& K) {
    const int na = A.cols(), nb = B.cols();
    if (!A.ground()) out.block(A.offset, A.offset, na, na) += K.topLeftCorner(na, na);
    if (!B.ground()) out.block(B.offset, B.offset, nb, nb) += K.bottomRightCorner(nb, nb);
    if (!A.ground() && !B.ground()) {
      out.block(A.offset, B.offset, na, nb) += K.topRightCorner(na, nb);
      out.block(B.offset, A.offset, nb, na) += K.bottomLeftCorner(nb, na);
    }
  }
};

namespace detail {

// (dA, dI) of a section along one of its own dimensions.
inline std::pair<double, double> section_tangent(const SectionSpec& s, const std::string& prop) {
  if (prop == "width") return {2.0 * s.width, std::pow(s.width, 3) / 3.0};
  if (prop == "outer_radius") return {2.0 * M_PI * s.outer_radius, M_PI * std::pow(s.outer_radius, 3)};
  if (prop == "inner_radius") return {-2.0 * M_PI * s.inner_radius, -M_PI * std::pow(s.inner_radius, 3)};
  if (prop == "A") return {1.0, 0.0};
  if (prop == "I") return {0.0, 1.0};
  return {0.0, 0.0};
}

inline Vec3 unit_tangent(const Vec3& w, const Vec3& dw) {
  const double n = w.norm();
  const Vec3 u = w / n;
  return (dw - u * u.dot(dw)) / n;
}

}  // namespace detail

inline AssembledSystem assemble(const ModelDefinition& def, const VecX& a) {
  AssembledSystem sys;
  sys.model = apply_design(def, a);
  validate_model(sys.model);
  sys.a = a;
  const ModelDefinition& md = sys.model;
  const int nd = static_cast<int>(a.size());
  sys.gravity = md.gravity_vector;

  for (int i = 0; i < nd; ++i) {
    const auto& b = md.design_variables[i];
    if (b.kind.rfind("node_position_", 0) == 0) {
      auto& v = sys.dpoints[b.target];
      v.resize(nd, Vec3::Zero());
      v[i][b.kind.back() - 'X'] = 1.0;
    }
  }

  // DOF layout and per-body data.
  int off = 0;
  struct BeamGeometry {
    std::vector<Vec3> pos;
    std::vector<std::vector<Vec3>> dpos;  // [var][node]
  };
  std::vector<BeamGeometry> geo;
  for (const auto& body : md.bodies) {
    if (const auto* r = std::get_if<RigidBodySpec>(&body)) {
      try {
        check_inertia(r->mass, r->inertia.x(), r->inertia.y(), r->inertia.z());
      } catch (const std::invalid_argument& e) {
        throw InputError("body '" + r->name + "': " + e.what());
      }
      if (!(r->frame.transpose() * r->frame - Mat3::Identity()).isZero(1e-9) || r->frame.determinant() < 0)
        throw InputError("body '" + r->name + "': frame must be a right-handed orthonormal principal frame");
      sys.rigid.push_back({r->name, off, r->mass, r->inertia, r->cm, r->frame});
      off += 12;
    } else {
      const auto& s = std::get<BeamSpec>(body);
      BeamBody bb;
      bb.name = s.name;
      bb.offset = off;
      const int sub = s.subdivisions;
      const int segs = static_cast<int>(s.nodes.size()) - 1;
      bb.node_count = segs * sub + 1;
      BeamGeometry g;
      g.pos.resize(bb.node_count);
      g.dpos.assign(nd, std::vector<Vec3>(bb.node_count, Vec3::Zero()));
      for (int j = 0; j <= segs; ++j) bb.named_nodes[s.nodes[j]] = j * sub;
      for (int k = 0; k < bb.node_count; ++k) {
        const int j = std::min(k / sub, segs - 1);
        const double w = static_cast<double>(k - j * sub) / sub;
        const std::string& pa = s.nodes[j];
        const std::string& pb = s.nodes[std::min(j + 1, segs)];
        g.pos[k] = (1.0 - w) * md.points.at(pa) + w * md.points.at(pb);
        for (int i = 0; i < nd; ++i) g.dpos[i][k] = (1.0 - w) * sys.point_tangent(pa, i) + w * sys.point_tangent(pb, i);
      }
      const double A = s.section.area(), I = s.section.inertia();
      if (!(A > 0 && I > 0 && s.E > 0 && s.rho > 0))
        throw InputError("beam '" + s.name + "': section, E and rho must be positive");
      for (int k = 0; k + 1 < bb.node_count; ++k) {
        BeamElement e;
        e.body = static_cast<int>(sys.beams.size());
        e.offset = off + 6 * k;
        const Vec3 chord = g.pos[k + 1] - g.pos[k];
        e.p.l = chord.norm();
        if (!(e.p.l >= 1e-9)) throw InputError("beam '" + s.name + "': degenerate element (length below 1e-9 m)");
        e.p.A = A;
        e.p.I = I;
        e.p.E = s.E;
        e.p.rho = s.rho;
        e.p.literal_transverse = s.literal_transverse;
        e.p.literal_longitudinal = s.literal_longitudinal;
        e.d.resize(nd);
        const Vec3 u = chord / e.p.l;
        for (int i = 0; i < nd; ++i) {
          e.d[i].l = u.dot(g.dpos[i][k + 1] - g.dpos[i][k]);
          const auto& b = md.design_variables[i];
          if (b.kind == "beam_property" && b.target == s.name) {
            if (b.property == "E") e.d[i].E = 1.0;
            else if (b.property == "rho") e.d[i].rho = 1.0;
            else std::tie(e.d[i].A, e.d[i].I) = detail::section_tangent(s.section, b.property);
          }
        }
        bb.elements.push_back(static_cast<int>(sys.elements.size()));
        sys.elements.push_back(e);
      }
      off += 6 * bb.node_count;
      sys.beams.push_back(bb);
      geo.push_back(std::move(g));
    }
  }
  sys.m = off;
  const int m = off;

  // Mass matrix and its design tangents.
  sys.M = MatX::Zero(m, m);
  for (const auto& r : sys.rigid)
    sys.M.block<12, 12>(r.offset, r.offset) = rigid_mass(r.mass, r.inertia.x(), r.inertia.y(), r.inertia.z());
  for (const auto& e : sys.elements) sys.M.block<12, 12>(e.offset, e.offset) += beam_mass(e.p.rho, e.p.A, e.p.l);
  sys.dM.resize(nd);
  for (int i = 0; i < nd; ++i)
    for (const auto& e : sys.elements) {
      if (e.d[i].is_zero()) continue;
      if (!sys.dM[i].size()) sys.dM[i] = MatX::Zero(m, m);
      sys.dM[i].block<12, 12>(e.offset, e.offset) += beam_mass_tangent(e.p, e.d[i]);
    }

  // Initial state and its design tangents.
  sys.q0 = VecX::Zero(m);
  sys.qdot0 = VecX::Zero(m);
  sys.dq0.assign(nd, VecX::Zero(m));
  sys.dqdot0.assign(nd, VecX::Zero(m));
  auto about = [&](const InitialVelocity& v, const Vec3& fallback, const std::vector<Vec3>& dfallback, int i,
                   Vec3* dc) -> Vec3 {
    if (v.about.empty()) {
      if (dc) *dc = dfallback.empty() ? Vec3::Zero() : dfallback[i];
      return fallback;
    }
    if (dc) *dc = sys.point_tangent(v.about, i);
    return md.points.at(v.about);
  };
  {
    size_t ri = 0, bi = 0;
    for (const auto& body : md.bodies) {
      if (const auto* r = std::get_if<RigidBodySpec>(&body)) {
        const RigidBody& rb = sys.rigid[ri++];
        const auto& v = r->velocity;
        sys.q0.segment<3>(rb.offset) = rb.cm;
        for (int k = 0; k < 3; ++k) {
          sys.q0.segment<3>(rb.offset + 3 + 3 * k) = rb.R0.col(k);
          sys.qdot0.segment<3>(rb.offset + 3 + 3 * k) = v.angular.cross(rb.R0.col(k));
        }
        const Vec3 c = about(v, rb.cm, {}, 0, nullptr);
        sys.qdot0.segment<3>(rb.offset) = v.linear + v.angular.cross(rb.cm - c);
        for (int i = 0; i < nd; ++i) {
          Vec3 dc;
          about(v, rb.cm, {}, i, &dc);
          sys.dqdot0[i].segment<3>(rb.offset) = -v.angular.cross(dc);
        }
      } else {
        const auto& s = std::get<BeamSpec>(body);
        const BeamBody& bb = sys.beams[bi];
        const BeamGeometry& g = geo[bi++];
        const auto& v = s.velocity;
        const int n = bb.node_count;
        std::vector<Vec3> dfirst(nd);
        for (int i = 0; i < nd; ++i) dfirst[i] = g.dpos[i][0];
        const Vec3 c = about(v, g.pos[0], dfirst, 0, nullptr);
        for (int k = 0; k < n; ++k) {
          const int lo = std::max(k - 1, 0), hi = std::min(k + 1, n - 1);
          const Vec3 w = g.pos[hi] - g.pos[lo];
          const Vec3 slope = w.normalized();
          const int o = bb.offset + 6 * k;
          sys.q0.segment<3>(o) = g.pos[k];
          sys.q0.segment<3>(o + 3) = slope;
          sys.qdot0.segment<3>(o) = v.linear + v.angular.cross(g.pos[k] - c);
          sys.qdot0.segment<3>(o + 3) = v.angular.cross(slope);
          for (int i = 0; i < nd; ++i) {
            Vec3 dc;
            about(v, g.pos[0], dfirst, i, &dc);
            const Vec3 dslope = detail::unit_tangent(w, g.dpos[i][hi] - g.dpos[i][lo]);
            sys.dq0[i].segment<3>(o) = g.dpos[i][k];
            sys.dq0[i].segment<3>(o + 3) = dslope;
            sys.dqdot0[i].segment<3>(o) = v.angular.cross(g.dpos[i][k] - dc);
            sys.dqdot0[i].segment<3>(o + 3) = v.angular.cross(dslope);
          }
        }
      }
    }
  }

  // Position of an attachment at q0 and its total design tangent.
  auto initial_point = [&](const Attachment& at, int i, Vec3* dp) -> Vec3 {
    if (dp) {
      *dp = at.position_tangent(sys.q0, i);
      if (!at.ground()) *dp += at.S * at.local(sys.dq0[i]);
    }
    return at.position(sys.q0, 0.0);
  };

  // Force elements.
  for (const auto& f : md.force_elements) {
    const Attachment A = sys.attachment(f.a), B = sys.attachment(f.b);
    if (f.type == "spring") {
      Spring s{f.name, A, B, f.k, 0.0, std::vector<double>(nd, 0.0), std::vector<double>(nd, 0.0)};
      const Vec3 d = initial_point(A, 0, nullptr) - initial_point(B, 0, nullptr);
      s.l0 = f.l0 ? *f.l0 : d.norm();
      if (!(s.l0 > 0)) throw InputError("spring '" + f.name + "': zero rest length");
      for (int i = 0; i < nd; ++i) {
        const auto& b = md.design_variables[i];
        if (b.kind == "spring_constant" && b.target == f.name) s.dk[i] = 1.0;
        if (!f.l0) {
          Vec3 da, db;
          initial_point(A, i, &da);
          initial_point(B, i, &db);
          s.dl0[i] = d.dot(da - db) / s.l0;
        }
      }
      sys.springs.push_back(std::move(s));
    } else {
      Damper dp{f.name, A, B, f.c, std::vector<double>(nd, 0.0)};
      for (int i = 0; i < nd; ++i) {
        const auto& b = md.design_variables[i];
        if (b.kind == "damping_coefficient" && b.target == f.name) dp.dc[i] = 1.0;
      }
      sys.dampers.push_back(std::move(dp));
    }
  }
  sys.C = MatX::Zero(m, m);
  for (const auto& d : sys.dampers) {
    const MatX Cd = damper_damping(d.a.map(0), d.b.map(0), d.c);
    const int na = d.a.cols(), nb = d.b.cols();
    if (!d.a.ground()) sys.C.block(d.a.offset, d.a.offset, na, na) += Cd.topLeftCorner(na, na);
    if (!d.b.ground()) sys.C.block(d.b.offset, d.b.offset, nb, nb) += Cd.bottomRightCorner(nb, nb);
    if (!d.a.ground() && !d.b.ground()) {
      sys.C.block(d.a.offset, d.b.offset, na, nb) += Cd.topRightCorner(na, nb);
      sys.C.block(d.b.offset, d.a.offset, nb, na) += Cd.bottomLeftCorner(nb, na);
    }
  }

  // Constraints: orthonormality per rigid body, then joints in file order.
  sys.constraints = ConstraintSet(m);
  for (const auto& r : sys.rigid) {
    ConstraintBlock b;
    b.kind = ConstraintKind::internal_orthonormality;
    b.name = r.name + ".orthonormality";
    b.dof = r.offset;
    sys.constraints.add(b);
  }
  for (const auto& j : md.joints) {
    ConstraintBlock b;
    b.name = j.name;
    if (j.type == "spherical") {
      AttachRef ra = j.a, rb = j.b;
      if (ra.ground()) std::swap(ra, rb);
      b.kind = rb.ground() ? ConstraintKind::ground_anchor : ConstraintKind::spherical;
      b.a = sys.attachment(ra);
      b.b = sys.attachment(rb);
    } else {
      const RigidBody* rb = nullptr;
      for (const auto& r : sys.rigid)
        if (r.name == j.a.body) rb = &r;
      b.kind = ConstraintKind::welded;
      b.dof = rb->offset;
      b.slope = sys.beam_node_dof(j.b.body, j.b.point) + 3;
      b.ref = rb->R0.transpose() * sys.q0.segment<3>(b.slope);
      b.dref.resize(nd);
      for (int i = 0; i < nd; ++i) b.dref[i] = rb->R0.transpose() * sys.dq0[i].segment<3>(b.slope);
    }
    sys.constraints.add(std::move(b));
  }
  return sys;
}

inline AssembledSystem assemble(const ModelDefinition& def) { return assemble(def, initial_design(def)); }

// |g(q0)|, |G q0dot + dg/dt| at t = 0, and tangency of the design-dependent q0.
inline InitialConditionReport validate_initial_conditions(const AssembledSystem& sys, double tol = 1e-9) {
  InitialConditionReport r;
  const auto& cs = sys.constraints;
  if (cs.rows() == 0) {
    r.pass = true;
    return r;
  }
  r.g_residual = cs.evaluate(sys.q0, 0.0).cwiseAbs().maxCoeff();
  const MatX G = cs.jacobian(sys.q0);
  r.gdot_residual = (G * sys.qdot0 + cs.time_derivative(0.0)).cwiseAbs().maxCoeff();
  for (int i = 0; i < sys.design_count(); ++i)
    r.tangent_residual = std::max(
        r.tangent_residual, (cs.design_derivative(sys.q0, i) + G * sys.dq0[i]).cwiseAbs().maxCoeff());
  r.pass = r.g_residual <= tol && r.gdot_residual <= tol;
  return r;
}

}  // namespace flexopt
