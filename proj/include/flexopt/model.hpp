#pragma once

#include "types.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <variant>
#include <vector>

namespace flexopt {

// Reference to a point on a body, or to a fixed (possibly excited) ground point.
struct AttachRef {
  std::string body;  // empty for ground
  std::string point;
  bool ground() const { return body.empty(); }
  bool operator==(const AttachRef&) const = default;
};

// Prescribed motion of a ground point: X(t) = X + axis * amplitude * sin(angular_frequency * t).
struct Excitation {
  Vec3 axis = Vec3::UnitZ();
  double amplitude = 0;
  double angular_frequency = 0;
  bool operator==(const Excitation&) const = default;
};

struct InitialVelocity {
  Vec3 linear = Vec3::Zero();
  Vec3 angular = Vec3::Zero();
  std::string about;  // point name; empty means body default (rigid CM, first beam node)
  bool operator==(const InitialVelocity&) const = default;
};

struct RigidBodySpec {
  std::string name;
  double mass = 0;
  Vec3 inertia = Vec3::Zero();  // principal moments along e1, e2, e3
  Vec3 cm = Vec3::Zero();
  Mat3 frame = Mat3::Identity();  // columns e1, e2, e3
  InitialVelocity velocity;
  bool operator==(const RigidBodySpec&) const = default;
};

struct SectionSpec {
  std::string shape = "square";  // square | tube | general
  double width = 0, outer_radius = 0, inner_radius = 0, A = 0, I = 0;
  bool operator==(const SectionSpec&) const = default;

  double area() const {
    if (shape == "square") return width * width;
    if (shape == "tube") return M_PI * (outer_radius * outer_radius - inner_radius * inner_radius);
    return A;
  }
  double inertia() const {
    if (shape == "square") return std::pow(width, 4) / 12.0;
    if (shape == "tube") return M_PI / 4.0 * (std::pow(outer_radius, 4) - std::pow(inner_radius, 4));
    return I;
  }
};

struct BeamSpec {
  std::string name;
  std::vector<std::string> nodes;
  int subdivisions = 1;  // elements between consecutive listed nodes
  double E = 0, rho = 0;
  SectionSpec section;
  bool literal_transverse = false;
  bool literal_longitudinal = false;
  InitialVelocity velocity;
  bool operator==(const BeamSpec&) const = default;
};

using BodySpec = std::variant<RigidBodySpec, BeamSpec>;

inline const std::string& body_name(const BodySpec& b) {
  return std::visit([](const auto& x) -> const std::string& { return x.name; }, b);
}

struct JointSpec {
  std::string name;
  std::string type;  // spherical | welded
  AttachRef a, b;
  bool operator==(const JointSpec&) const = default;
};

struct ForceSpec {
  std::string name;
  std::string type;  // spring | damper
  AttachRef a, b;
  double k = 0, c = 0;
  std::optional<double> l0;  // unset: initial distance
  bool operator==(const ForceSpec&) const = default;
};

struct DesignVarBinding {
  std::string id;
  std::string kind;  // node_position_X|Y|Z, spring_constant, damping_coefficient, beam_property
  std::string target;
  std::string property;  // beam_property only
  double value = 0;
  double lb = -std::numeric_limits<double>::infinity();
  double ub = std::numeric_limits<double>::infinity();
  bool operator==(const DesignVarBinding&) const = default;
};

struct SimSettings {
  double T = 1.0, h = 1e-3, alpha = 0.5;
  double newton_tol = 1e-10;
  int max_newton_iters = 50;
  bool operator==(const SimSettings&) const = default;
  int steps() const { return static_cast<int>(std::lround(T / h)); }
};

struct ObjectiveTerm {
  std::string type;  // point_displacement_sq | tip_deflection
  std::string body, point;
  std::string base;  // tip_deflection: base node (tip node is `point`)
  Vec3 normal = Vec3::UnitZ();
  std::optional<double> time;  // tip_deflection sample time (default T)
  double weight = 1.0;
  bool operator==(const ObjectiveTerm&) const = default;
};

struct ObjectiveSpec {
  std::vector<ObjectiveTerm> terms;
  bool operator==(const ObjectiveSpec&) const = default;
};

struct OptConstraintSpec {
  std::string type;  // min_length | max_stress
  std::string beam;
  double value = 0;  // minimum length, or sigma_max
  double p = 40;
  bool operator==(const OptConstraintSpec&) const = default;
};

struct OptSettings {
  int max_iters = 60;
  double tolerance = 1e-6;
  int patience = 5;
  double initial_step = 1e-2;
  int max_backtracks = 30;
  std::vector<OptConstraintSpec> constraints;
  bool operator==(const OptSettings&) const = default;
};

struct ModelDefinition {
  std::string name;
  std::map<std::string, Vec3> points;
  std::map<std::string, Excitation> excitations;
  Vec3 gravity_vector = Vec3::Zero();
  std::vector<BodySpec> bodies;
  std::vector<JointSpec> joints;
  std::vector<ForceSpec> force_elements;
  std::vector<DesignVarBinding> design_variables;
  SimSettings sim_settings;
  ObjectiveSpec objective_spec;
  std::optional<OptSettings> opt_settings;
  bool operator==(const ModelDefinition&) const = default;

  const BodySpec* find_body(const std::string& n) const {
    for (const auto& b : bodies)
      if (body_name(b) == n) return &b;
    return nullptr;
  }
};

// ---------------------------------------------------------------------------
// JSON mapping

namespace detail {

using nlohmann::json;

inline Vec3 vec3(const json& j, const std::string& what) {
  if (!j.is_array() || j.size() != 3) throw InputError(what + ": expected a 3-vector");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

inline json to_json(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }

inline AttachRef attach(const json& j, const std::string& what) {
  AttachRef r;
  if (j.contains("ground")) {
    r.point = j.at("ground").get<std::string>();
  } else {
    r.body = j.at("body").get<std::string>();
    r.point = j.at("point").get<std::string>();
  }
  if (r.point.empty()) throw InputError(what + ": empty point reference");
  return r;
}

inline json to_json(const AttachRef& r) {
  if (r.ground()) return {{"ground", r.point}};
  return {{"body", r.body}, {"point", r.point}};
}

inline InitialVelocity velocity(const json& j) {
  InitialVelocity v;
  if (j.contains("linear")) v.linear = vec3(j["linear"], "initial_velocity.linear");
  if (j.contains("angular")) v.angular = vec3(j["angular"], "initial_velocity.angular");
  if (j.contains("about")) v.about = j["about"].get<std::string>();
  return v;
}

inline json to_json(const InitialVelocity& v) {
  json j = {{"linear", to_json(v.linear)}, {"angular", to_json(v.angular)}};
  if (!v.about.empty()) j["about"] = v.about;
  return j;
}

inline double positive(const json& j, const char* key, const std::string& what) {
  const double x = j.at(key).get<double>();
  if (!(x > 0)) throw InputError(what + ": '" + key + "' must be positive");
  return x;
}

}  // namespace detail

inline ModelDefinition model_from_json(const nlohmann::json& j) {
  using detail::vec3;
  ModelDefinition m;
  try {
    m.name = j.value("name", std::string{});
    if (j.contains("points"))
      for (auto it = j["points"].begin(); it != j["points"].end(); ++it)
        m.points[it.key()] = vec3(it.value(), "points." + it.key());
    if (j.contains("excitations"))
      for (auto it = j["excitations"].begin(); it != j["excitations"].end(); ++it) {
        Excitation e;
        const auto& x = it.value();
        if (x.contains("axis")) e.axis = vec3(x["axis"], "excitation axis").normalized();
        e.amplitude = x.at("amplitude").get<double>();
        e.angular_frequency = x.at("angular_frequency").get<double>();
        m.excitations[it.key()] = e;
      }
    if (j.contains("gravity_vector")) m.gravity_vector = vec3(j["gravity_vector"], "gravity_vector");

    for (const auto& b : j.at("bodies")) {
      const std::string type = b.at("type").get<std::string>();
      const std::string nm = b.at("name").get<std::string>();
      const std::string what = "body '" + nm + "'";
      if (type == "rigid") {
        RigidBodySpec r;
        r.name = nm;
        r.mass = detail::positive(b, "mass", what);
        r.inertia = vec3(b.at("inertia"), what + " inertia");
        r.cm = vec3(b.at("cm"), what + " cm");
        if (b.contains("frame")) {
          const auto& f = b["frame"];
          if (!f.is_array() || f.size() != 3) throw InputError(what + ": frame must list e1, e2, e3");
          for (int k = 0; k < 3; ++k) r.frame.col(k) = vec3(f[k], what + " frame");
        }
        if (b.contains("initial_velocity")) r.velocity = detail::velocity(b["initial_velocity"]);
        m.bodies.emplace_back(r);
      } else if (type == "beam") {
        BeamSpec s;
        s.name = nm;
        s.nodes = b.at("nodes").get<std::vector<std::string>>();
        s.subdivisions = b.value("subdivisions", 1);
        if (s.subdivisions < 1) throw InputError(what + ": subdivisions must be at least 1");
        s.E = detail::positive(b, "E", what);
        s.rho = detail::positive(b, "rho", what);
        const auto& sec = b.at("section");
        s.section.shape = sec.value("shape", std::string("square"));
        if (s.section.shape == "square") {
          s.section.width = detail::positive(sec, "width", what + " section");
        } else if (s.section.shape == "tube") {
          s.section.outer_radius = detail::positive(sec, "outer_radius", what + " section");
          s.section.inner_radius = sec.value("inner_radius", 0.0);
          if (!(s.section.inner_radius >= 0 && s.section.inner_radius < s.section.outer_radius))
            throw InputError(what + ": tube radii must satisfy 0 <= inner < outer");
        } else if (s.section.shape == "general") {
          s.section.A = detail::positive(sec, "A", what + " section");
          s.section.I = detail::positive(sec, "I", what + " section");
        } else {
          throw InputError(what + ": unknown section shape '" + s.section.shape + "'");
        }
        s.literal_transverse = b.value("literal_transverse", false);
        s.literal_longitudinal = b.value("literal_longitudinal", false);
        if (b.contains("initial_velocity")) s.velocity = detail::velocity(b["initial_velocity"]);
        m.bodies.emplace_back(s);
      } else {
        throw InputError(what + ": unknown body type '" + type + "'");
      }
    }

    if (j.contains("joints"))
      for (const auto& x : j["joints"]) {
        JointSpec s;
        s.name = x.value("name", std::string{});
        s.type = x.at("type").get<std::string>();
        s.a = detail::attach(x.at("a"), "joint '" + s.name + "'");
        s.b = detail::attach(x.at("b"), "joint '" + s.name + "'");
        m.joints.push_back(s);
      }

    if (j.contains("force_elements"))
      for (const auto& x : j["force_elements"]) {
        ForceSpec s;
        s.name = x.at("name").get<std::string>();
        s.type = x.at("type").get<std::string>();
        s.a = detail::attach(x.at("a"), "force element '" + s.name + "'");
        s.b = detail::attach(x.at("b"), "force element '" + s.name + "'");
        if (s.type == "spring") {
          s.k = x.at("k").get<double>();
          if (x.contains("l0") && !x["l0"].is_string()) s.l0 = x["l0"].get<double>();
        } else if (s.type == "damper") {
          s.c = x.at("c").get<double>();
        } else {
          throw InputError("force element '" + s.name + "': unknown type '" + s.type + "'");
        }
        m.force_elements.push_back(s);
      }

    if (j.contains("design_variables"))
      for (const auto& x : j["design_variables"]) {
        DesignVarBinding d;
        d.id = x.at("id").get<std::string>();
        d.kind = x.at("kind").get<std::string>();
        d.target = x.at("target").get<std::string>();
        d.property = x.value("property", std::string{});
        d.value = x.contains("value") ? x["value"].get<double>() : std::nan("");
        if (x.contains("lb")) d.lb = x["lb"].get<double>();
        if (x.contains("ub")) d.ub = x["ub"].get<double>();
        m.design_variables.push_back(d);
      }

    if (j.contains("sim_settings")) {
      const auto& s = j["sim_settings"];
      m.sim_settings.T = s.value("T", 1.0);
      m.sim_settings.h = s.value("h", 1e-3);
      m.sim_settings.alpha = s.value("alpha", 0.5);
      m.sim_settings.newton_tol = s.value("newton_tol", 1e-10);
      m.sim_settings.max_newton_iters = s.value("max_newton_iters", 50);
    }

    if (j.contains("objective_spec"))
      for (const auto& x : j["objective_spec"].at("terms")) {
        ObjectiveTerm t;
        t.type = x.at("type").get<std::string>();
        t.body = x.at("body").get<std::string>();
        t.point = x.at("point").get<std::string>();
        t.base = x.value("base", std::string{});
        if (x.contains("normal")) t.normal = vec3(x["normal"], "objective normal");
        if (x.contains("time")) t.time = x["time"].get<double>();
        t.weight = x.value("weight", 1.0);
        m.objective_spec.terms.push_back(t);
      }

    if (j.contains("opt_settings")) {
      const auto& s = j["opt_settings"];
      OptSettings o;
      o.max_iters = s.value("max_iters", 60);
      o.tolerance = s.value("tolerance", 1e-6);
      o.patience = s.value("patience", 5);
      o.initial_step = s.value("initial_step", 1e-2);
      o.max_backtracks = s.value("max_backtracks", 30);
      if (s.contains("constraints"))
        for (const auto& x : s["constraints"]) {
          OptConstraintSpec c;
          c.type = x.at("type").get<std::string>();
          c.beam = x.at("beam").get<std::string>();
          c.value = x.at("value").get<double>();
          c.p = x.value("p", 40.0);
          o.constraints.push_back(c);
        }
      m.opt_settings = o;
    }
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("model file: ") + e.what());
  }
  return m;
}

inline nlohmann::json model_to_json(const ModelDefinition& m) {
  using detail::to_json;
  using nlohmann::json;
  json j;
  j["name"] = m.name;
  j["points"] = json::object();
  for (const auto& [k, v] : m.points) j["points"][k] = to_json(v);
  if (!m.excitations.empty()) {
    j["excitations"] = json::object();
    for (const auto& [k, e] : m.excitations)
      j["excitations"][k] = {
          {"axis", to_json(e.axis)}, {"amplitude", e.amplitude}, {"angular_frequency", e.angular_frequency}};
  }
  j["gravity_vector"] = to_json(m.gravity_vector);
  j["bodies"] = json::array();
  for (const auto& b : m.bodies) {
    if (const auto* r = std::get_if<RigidBodySpec>(&b)) {
      j["bodies"].push_back({{"name", r->name},
                             {"type", "rigid"},
                             {"mass", r->mass},
                             {"inertia", to_json(r->inertia)},
                             {"cm", to_json(r->cm)},
                             {"frame", json::array({to_json(r->frame.col(0)), to_json(r->frame.col(1)),
                                                    to_json(r->frame.col(2))})},
                             {"initial_velocity", to_json(r->velocity)}});
    } else {
      const auto& s = std::get<BeamSpec>(b);
      json sec = {{"shape", s.section.shape}};
      if (s.section.shape == "square") sec["width"] = s.section.width;
      if (s.section.shape == "tube") {
        sec["outer_radius"] = s.section.outer_radius;
        sec["inner_radius"] = s.section.inner_radius;
      }
      if (s.section.shape == "general") {
        sec["A"] = s.section.A;
        sec["I"] = s.section.I;
      }
      j["bodies"].push_back({{"name", s.name},
                             {"type", "beam"},
                             {"nodes", s.nodes},
                             {"subdivisions", s.subdivisions},
                             {"E", s.E},
                             {"rho", s.rho},
                             {"section", sec},
                             {"literal_transverse", s.literal_transverse},
                             {"literal_longitudinal", s.literal_longitudinal},
                             {"initial_velocity", to_json(s.velocity)}});
    }
  }
  j["joints"] = json::array();
  for (const auto& s : m.joints)
    j["joints"].push_back({{"name", s.name}, {"type", s.type}, {"a", to_json(s.a)}, {"b", to_json(s.b)}});
  j["force_elements"] = json::array();
  for (const auto& s : m.force_elements) {
    json x = {{"name", s.name}, {"type", s.type}, {"a", to_json(s.a)}, {"b", to_json(s.b)}};
    if (s.type == "spring") {
      x["k"] = s.k;
      if (s.l0) x["l0"] = *s.l0;
    } else {
      x["c"] = s.c;
    }
    j["force_elements"].push_back(x);
  }
  j["design_variables"] = json::array();
  for (const auto& d : m.design_variables) {
    json x = {{"id", d.id}, {"kind", d.kind}, {"target", d.target}, {"value", d.value}};
    if (!d.property.empty()) x["property"] = d.property;
    if (std::isfinite(d.lb)) x["lb"] = d.lb;
    if (std::isfinite(d.ub)) x["ub"] = d.ub;
    j["design_variables"].push_back(x);
  }
  const auto& s = m.sim_settings;
  j["sim_settings"] = {{"T", s.T},
                       {"h", s.h},
                       {"alpha", s.alpha},
                       {"newton_tol", s.newton_tol},
                       {"max_newton_iters", s.max_newton_iters}};
  json terms = json::array();
  for (const auto& t : m.objective_spec.terms) {
    json x = {{"type", t.type}, {"body", t.body}, {"point", t.point}, {"weight", t.weight}};
    if (!t.base.empty()) x["base"] = t.base;
    if (t.type == "tip_deflection") x["normal"] = to_json(t.normal);
    if (t.time) x["time"] = *t.time;
    terms.push_back(x);
  }
  j["objective_spec"] = {{"terms", terms}};
  if (m.opt_settings) {
    const auto& o = *m.opt_settings;
    json cs = json::array();
    for (const auto& c : o.constraints)
      cs.push_back({{"type", c.type}, {"beam", c.beam}, {"value", c.value}, {"p", c.p}});
    j["opt_settings"] = {{"max_iters", o.max_iters},         {"tolerance", o.tolerance},
                         {"patience", o.patience},           {"initial_step", o.initial_step},
                         {"max_backtracks", o.max_backtracks}, {"constraints", cs}};
  }
  return j;
}

// Current value of the entity a binding targets.
inline double binding_value(const ModelDefinition& m, const DesignVarBinding& d) {
  if (d.kind.rfind("node_position_", 0) == 0) {
    const int ax = d.kind.back() - 'X';
    return m.points.at(d.target)[ax];
  }
  if (d.kind == "spring_constant" || d.kind == "damping_coefficient") {
    for (const auto& f : m.force_elements)
      if (f.name == d.target) return d.kind == "spring_constant" ? f.k : f.c;
  }
  if (d.kind == "beam_property") {
    for (const auto& b : m.bodies)
      if (const auto* s = std::get_if<BeamSpec>(&b); s && s->name == d.target) {
        const auto& p = d.property;
        if (p == "E") return s->E;
        if (p == "rho") return s->rho;
        if (p == "width") return s->section.width;
        if (p == "outer_radius") return s->section.outer_radius;
        if (p == "inner_radius") return s->section.inner_radius;
        if (p == "A") return s->section.A;
        if (p == "I") return s->section.I;
      }
  }
  throw InputError("design variable '" + d.id + "': unresolved target");
}

inline void set_binding_value(ModelDefinition& m, const DesignVarBinding& d, double v) {
  if (d.kind.rfind("node_position_", 0) == 0) {
    m.points.at(d.target)[d.kind.back() - 'X'] = v;
    return;
  }
  if (d.kind == "spring_constant" || d.kind == "damping_coefficient") {
    for (auto& f : m.force_elements)
      if (f.name == d.target) (d.kind == "spring_constant" ? f.k : f.c) = v;
    return;
  }
  for (auto& b : m.bodies)
    if (auto* s = std::get_if<BeamSpec>(&b); s && s->name == d.target) {
      const auto& p = d.property;
      if (p == "E") s->E = v;
      if (p == "rho") s->rho = v;
      if (p == "width") s->section.width = v;
      if (p == "outer_radius") s->section.outer_radius = v;
      if (p == "inner_radius") s->section.inner_radius = v;
      if (p == "A") s->section.A = v;
      if (p == "I") s->section.I = v;
    }
}

inline VecX initial_design(const ModelDefinition& m) {
  VecX a(m.design_variables.size());
  for (size_t i = 0; i < m.design_variables.size(); ++i) a[i] = m.design_variables[i].value;
  return a;
}

// Copy of the model with design vector a substituted into the bound entities.
inline ModelDefinition apply_design(const ModelDefinition& m, const VecX& a) {
  if (a.size() != static_cast<Eigen::Index>(m.design_variables.size()))
    throw ConfigError("design vector size does not match the number of design variables");
  ModelDefinition out = m;
  for (size_t i = 0; i < m.design_variables.size(); ++i) {
    out.design_variables[i].value = a[i];
    set_binding_value(out, m.design_variables[i], a[i]);
  }
  return out;
}

// Cross-reference and range checks shared by parse_model and the assembler.
inline void validate_model(const ModelDefinition& m) {
  const auto& s = m.sim_settings;
  if (!(s.h > 0)) throw InputError("sim_settings: h must be positive");
  if (!(s.T >= s.h)) throw InputError("sim_settings: T must be at least h");
  if (!(s.alpha >= 0 && s.alpha <= 1)) throw InputError("sim_settings: alpha must lie in [0, 1]");
  if (!(s.newton_tol > 0) || s.max_newton_iters < 0) throw InputError("sim_settings: invalid Newton settings");

  std::set<std::string> names;
  for (const auto& b : m.bodies) {
    if (!names.insert(body_name(b)).second) throw InputError("duplicate body name '" + body_name(b) + "'");
    if (const auto* bs = std::get_if<BeamSpec>(&b)) {
      if (bs->nodes.size() < 2) throw InputError("beam '" + bs->name + "' needs at least two nodes");
      for (const auto& n : bs->nodes)
        if (!m.points.count(n)) throw InputError("beam '" + bs->name + "' references undeclared node '" + n + "'");
    }
    const auto& v = std::visit([](const auto& x) -> const InitialVelocity& { return x.velocity; }, b);
    if (!v.about.empty() && !m.points.count(v.about))
      throw InputError("body '" + body_name(b) + "': initial velocity references undeclared point '" + v.about + "'");
  }
  for (const auto& [k, e] : m.excitations)
    if (!m.points.count(k)) throw InputError("excitation references undeclared point '" + k + "'");

  auto check_ref = [&](const AttachRef& r, const std::string& what) {
    if (!m.points.count(r.point)) throw InputError(what + ": undeclared point '" + r.point + "'");
    if (r.ground()) return;
    const BodySpec* b = m.find_body(r.body);
    if (!b) throw InputError(what + ": undeclared body '" + r.body + "'");
    if (const auto* bs = std::get_if<BeamSpec>(b)) {
      if (std::find(bs->nodes.begin(), bs->nodes.end(), r.point) == bs->nodes.end())
        throw InputError(what + ": point '" + r.point + "' is not a node of beam '" + r.body + "'");
    }
  };
  for (const auto& j : m.joints) {
    const std::string what = "joint '" + j.name + "'";
    if (j.type != "spherical" && j.type != "welded") throw InputError(what + ": unknown type '" + j.type + "'");
    check_ref(j.a, what);
    check_ref(j.b, what);
    if (j.a.ground() && j.b.ground()) throw InputError(what + ": both ends on ground");
    if (j.type == "welded") {
      const BodySpec* ba = j.a.ground() ? nullptr : m.find_body(j.a.body);
      const BodySpec* bb = j.b.ground() ? nullptr : m.find_body(j.b.body);
      if (!ba || !bb || !std::holds_alternative<RigidBodySpec>(*ba) || !std::holds_alternative<BeamSpec>(*bb))
        throw InputError(what + ": welded joints connect a rigid body (a) to a beam node (b)");
    }
  }
  std::set<std::string> fnames;
  for (const auto& f : m.force_elements) {
    const std::string what = "force element '" + f.name + "'";
    if (!fnames.insert(f.name).second) throw InputError("duplicate force element name '" + f.name + "'");
    check_ref(f.a, what);
    check_ref(f.b, what);
    if (f.k < 0 || f.c < 0) throw InputError(what + ": k and c must be non-negative");
    if (f.l0 && !(*f.l0 > 0)) throw InputError(what + ": l0 must be positive");
  }

  std::set<std::pair<std::string, std::string>> seen;
  for (const auto& d : m.design_variables) {
    const std::string what = "design variable '" + d.id + "'";
    if (d.lb > d.ub) throw InputError(what + ": lb > ub");
    static const std::set<std::string> kinds = {"node_position_X", "node_position_Y", "node_position_Z",
                                                "spring_constant", "damping_coefficient", "beam_property"};
    if (!kinds.count(d.kind)) throw InputError(what + ": unknown kind '" + d.kind + "'");
    if (d.kind.rfind("node_position_", 0) == 0 && !m.points.count(d.target))
      throw InputError(what + ": undeclared node '" + d.target + "'");
    if (d.kind == "spring_constant" || d.kind == "damping_coefficient") {
      const std::string want = d.kind == "spring_constant" ? "spring" : "damper";
      bool ok = false;
      for (const auto& f : m.force_elements) ok = ok || (f.name == d.target && f.type == want);
      if (!ok) throw InputError(what + ": no " + want + " named '" + d.target + "'");
    }
    if (d.kind == "beam_property") {
      const BodySpec* b = m.find_body(d.target);
      if (!b || !std::holds_alternative<BeamSpec>(*b)) throw InputError(what + ": no beam named '" + d.target + "'");
      static const std::set<std::string> props = {"E", "rho", "width", "outer_radius", "inner_radius", "A", "I"};
      if (!props.count(d.property)) throw InputError(what + ": unknown beam property '" + d.property + "'");
      const auto& sh = std::get<BeamSpec>(*b).section.shape;
      const bool fits = d.property == "E" || d.property == "rho" ||
                        (sh == "square" && d.property == "width") ||
                        (sh == "tube" && (d.property == "outer_radius" || d.property == "inner_radius")) ||
                        (sh == "general" && (d.property == "A" || d.property == "I"));
      if (!fits) throw InputError(what + ": property '" + d.property + "' does not apply to a " + sh + " section");
    }
    if (!seen.insert({d.kind + ":" + d.property, d.target}).second)
      throw InputError(what + ": entity already bound by another design variable");
  }

  for (const auto& t : m.objective_spec.terms) {
    const std::string what = "objective term '" + t.type + "'";
    if (t.type != "point_displacement_sq" && t.type != "tip_deflection")
      throw InputError(what + ": unknown type");
    check_ref({t.body, t.point}, what);
    if (t.type == "tip_deflection") {
      const BodySpec* b = m.find_body(t.body);
      if (!std::holds_alternative<BeamSpec>(*b)) throw InputError(what + ": body must be a beam");
      check_ref({t.body, t.base}, what);
      if (t.time && !(*t.time > 0 && *t.time <= m.sim_settings.T + 1e-12))
        throw InputError(what + ": sample time outside (0, T]");
    }
  }
  if (m.opt_settings)
    for (const auto& c : m.opt_settings->constraints) {
      const BodySpec* b = m.find_body(c.beam);
      if (!b || !std::holds_alternative<BeamSpec>(*b))
        throw InputError("optimization constraint references unknown beam '" + c.beam + "'");
      if (c.type != "min_length" && c.type != "max_stress")
        throw InputError("unknown optimization constraint type '" + c.type + "'");
      if (c.type == "max_stress" && !(c.value > 0 && c.p >= 1))
        throw InputError("max_stress constraint needs sigma_max > 0 and p >= 1");
    }
}

// Parse a JSON model file. Syntax errors carry the byte position reported by the parser.
inline ModelDefinition parse_model(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw InputError(std::string("model file syntax error at byte ") + std::to_string(e.byte) + ": " + e.what());
  }
  ModelDefinition m = model_from_json(j);
  for (auto& d : m.design_variables)
    if (std::isnan(d.value)) {
      validate_model(m);  // resolves the target before it is read
      d.value = binding_value(m, d);
    }
  m = apply_design(m, initial_design(m));
  validate_model(m);
  return m;
}

inline std::string serialize_model(const ModelDefinition& m) { return model_to_json(m).dump(2); }

}  // namespace flexopt
