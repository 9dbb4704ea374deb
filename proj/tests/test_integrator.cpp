#include "flexopt/integrator.hpp"

#include "test_util.hpp"

#include <gtest/gtest.h>

#include <sstream>

using namespace flexopt;
using testutil::load_model;

namespace {

// One free rigid body; optional spring from its centre of mass to a ground point.
ModelDefinition free_body(double k, const Vec3& v0, double T = 0.2, double h = 1e-3) {
  nlohmann::json j = {
      {"points", {{"C", {1.0, 0.0, 0.0}}, {"G", {0.0, 0.0, 0.0}}}},
      {"bodies",
       {{{"name", "box"},
         {"type", "rigid"},
         {"mass", 2.0},
         {"inertia", {0.3, 0.4, 0.5}},
         {"cm", {1.0, 0.0, 0.0}},
         {"initial_velocity", {{"linear", {v0.x(), v0.y(), v0.z()}}}}}}},
      {"sim_settings", {{"T", T}, {"h", h}}}};
  if (k > 0)
    j["force_elements"] = {{{"name", "s"},
                            {"type", "spring"},
                            {"k", k},
                            {"a", {{"body", "box"}, {"point", "C"}}},
                            {"b", {{"ground", "G"}}}}};
  return parse_model(j.dump());
}

double total_energy(const AssembledSystem& sys, const Trajectory& tr, int n) {
  const VecX v = (tr.q[n + 1] - tr.q[n]) / tr.h;
  return sys.kinetic_energy(v) + sys.potential_energy(0.5 * (tr.q[n] + tr.q[n + 1]), tr.time(n));
}

}  // namespace

TEST(Newton, LinearResidualConvergesInOneIteration) {
  MatX A(2, 2);
  A << 4, 1, 2, 3;
  const VecX b = VecX::Constant(2, 1.0);
  const auto r = newton_solve([&](const VecX& x) { return VecX(A * x - b); }, [&](const VecX&) { return A; },
                              VecX::Zero(2), 1e-12, 50);
  EXPECT_EQ(r.iterations, 1);
  EXPECT_LT((A * r.x - b).norm(), 1e-14);
}

TEST(Newton, ScalarCubic) {
  const auto res = [](const VecX& x) { return VecX::Constant(1, x[0] * x[0] * x[0] - 8.0); };
  const auto jac = [](const VecX& x) { return MatX::Constant(1, 1, 3 * x[0] * x[0]); };
  const auto r = newton_solve(res, jac, VecX::Constant(1, 3.0), 1e-13, 50);
  EXPECT_NEAR(r.x[0], 2.0, 1e-12);
  const auto exact = newton_solve(res, jac, VecX::Constant(1, 2.0), 1e-13, 50);
  EXPECT_EQ(exact.iterations, 0);
}

TEST(Newton, FailuresAreReported) {
  const auto res = [](const VecX& x) { return VecX::Constant(1, x[0] * x[0] + 1.0); };
  const auto jac = [](const VecX& x) { return MatX::Constant(1, 1, 2 * x[0]); };
  EXPECT_THROW(newton_solve(res, jac, VecX::Constant(1, 0.5), 1e-12, 5), NumericalError);
  EXPECT_THROW(newton_solve(res, jac, VecX::Constant(1, 0.0), 1e-12, 5), NumericalError);
}

TEST(Residuals, FreeMassUniformMotion) {
  const AssembledSystem sys = assemble(free_body(0, Vec3(0.3, -0.2, 0.1)));
  const DiscreteDynamics dd(sys, 1e-3, 0.5);
  const VecX v = sys.qdot0;
  const VecX lam = VecX::Zero(sys.constraint_count());
  const VecX q0 = sys.q0, q1 = q0 + 1e-3 * v, q2 = q0 + 2e-3 * v;
  EXPECT_LT(dd.residual_initial(q0, q1, lam, v).cwiseAbs().maxCoeff(), 1e-13);
  EXPECT_LT(dd.residual_step(q0, q1, q2, lam, 1).cwiseAbs().maxCoeff(), 1e-13);
  // Any other q1 leaves a momentum mismatch.
  EXPECT_GT(dd.residual_initial(q0, q0, lam, v).head(sys.m).cwiseAbs().maxCoeff(), 0.1);
}

TEST(Residuals, StaticEquilibriumAtRest) {
  const AssembledSystem sys = assemble(free_body(50, Vec3::Zero()));
  const DiscreteDynamics dd(sys, 1e-3, 0.5);
  const VecX lam = VecX::Zero(sys.constraint_count());
  EXPECT_LT(dd.residual_initial(sys.q0, sys.q0, lam, sys.qdot0).cwiseAbs().maxCoeff(), 1e-13);
}

TEST(Simulate, BodyAtRestStaysPut) {
  const AssembledSystem sys = assemble(free_body(0, Vec3::Zero()));
  const Trajectory tr = simulate(sys);
  ASSERT_EQ(tr.N, 200);
  for (const auto& q : tr.q) EXPECT_LT((q - sys.q0).cwiseAbs().maxCoeff(), 1e-14);
}

// x'' = -w^2 (x - x_eq) under the alpha = 1/2 rule has the closed-form solution
// y_n = y_1 sin(n theta) / sin(theta), cos(theta) = (1 - h^2 w^2 / 4) / (1 + h^2 w^2 / 4).
TEST(Simulate, LinearOscillatorMatchesDiscreteClosedForm) {
  const double k = 200.0, m = 2.0, v0 = 0.4, h = 1e-3;
  const AssembledSystem sys = assemble(free_body(k, Vec3(v0, 0, 0), 2.0, h));
  const Trajectory tr = simulate(sys);
  const double w2 = k / m, r = h * h * w2 / 4;
  const double theta = std::acos((1 - r) / (1 + r));
  const double y1 = v0 * h / (1 + r);
  double worst = 0;
  for (int n = 0; n <= tr.N; ++n) {
    const double y = y1 * std::sin(n * theta) / std::sin(theta);
    worst = std::max(worst, std::abs(tr.q[n][0] - 1.0 - y));
    EXPECT_LT(std::abs(tr.q[n][1]) + std::abs(tr.q[n][2]), 1e-14);
  }
  EXPECT_LT(worst, 1e-11);
  const DiscreteDynamics dd(sys, h, 0.5);
  for (int n = 1; n < tr.N; n += 97)
    EXPECT_LE(dd.residual_step(tr.q[n - 1], tr.q[n], tr.q[n + 1], tr.lambda[n], n).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(Simulate, PendulumFirstStepConverges) {
  ModelDefinition def = load_model("pendulum.json");
  def.sim_settings.T = 10 * def.sim_settings.h;
  const AssembledSystem sys = assemble(def);
  const Trajectory tr = simulate(sys);
  const DiscreteDynamics dd(sys, tr.h, 0.5);
  EXPECT_LE(dd.residual_initial(tr.q[0], tr.q[1], tr.lambda[0], sys.qdot0).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(Simulate, ConstraintsHoldAtEveryStep) {
  for (const char* name : {"rigid_spring_beam.json", "quarter_car.json"}) {
    ModelDefinition def = load_model(name);
    def.sim_settings.T = 0.2;
    const AssembledSystem sys = assemble(def);
    const Trajectory tr = simulate(sys);
    EXPECT_LE(max_constraint_residual(sys, tr), 1e-10) << name;
    EXPECT_EQ(static_cast<int>(tr.q.size()), tr.N + 1);
    EXPECT_EQ(static_cast<int>(tr.lambda.size()), tr.N);
  }
}

TEST(Simulate, ConservativeRigidPendulum) {
  const AssembledSystem sys = assemble(load_model("rigid_pendulum.json"));
  const Trajectory tr = simulate(sys);
  ASSERT_EQ(tr.N, 10000);
  double worst_ortho = 0, worst_g = 0, drift = 0;
  const double E0 = total_energy(sys, tr, 0);
  const double scale = sys.kinetic_energy(sys.qdot0) + std::abs(sys.potential_energy(sys.q0, 0)) +
                       sys.rigid[0].mass * sys.gravity.norm() * 0.5;
  for (int n = 0; n <= tr.N; ++n) {
    worst_ortho = std::max(worst_ortho, sys.constraints.orthonormality_residual(tr.q[n]));
    worst_g = std::max(worst_g, sys.constraints.evaluate(tr.q[n], tr.time(n)).cwiseAbs().maxCoeff());
    if (n < tr.N) drift = std::max(drift, std::abs(total_energy(sys, tr, n) - E0));
  }
  EXPECT_LE(worst_ortho, 1e-8);
  EXPECT_LE(worst_g, 1e-10);
  EXPECT_LE(drift, 0.01 * scale);
  // No secular growth: the last tenth drifts no more than the whole run's envelope.
  double late = 0;
  for (int n = 9 * tr.N / 10; n < tr.N; ++n) late = std::max(late, std::abs(total_energy(sys, tr, n) - E0));
  EXPECT_LE(late, drift + 1e-12);
}

// For an unconstrained conservative system the discrete momenta on both sides of q_n agree.
TEST(Simulate, MomentumMatchingForFreeBeam) {
  nlohmann::json j = {
      {"points", {{"A", {0.0, 0.0, 0.0}}, {"B", {1.0, 0.2, 0.0}}}},
      {"bodies",
       {{{"name", "b"},
         {"type", "beam"},
         {"nodes", {"A", "B"}},
         {"subdivisions", 2},
         {"E", 1e6},
         {"rho", 1000},
         {"section", {{"shape", "square"}, {"width", 0.02}}},
         {"initial_velocity", {{"linear", {0.0, 0.1, 0.0}}, {"angular", {0.0, 0.5, 3.0}}, {"about", "A"}}}}}},
      {"sim_settings", {{"T", 0.1}, {"h", 1e-3}}}};
  const AssembledSystem sys = assemble(parse_model(j.dump()));
  ASSERT_EQ(sys.constraint_count(), 0);
  const Trajectory tr = simulate(sys);
  const double h = tr.h;
  for (int n = 1; n < tr.N; ++n) {
    const VecX mid_prev = 0.5 * (tr.q[n - 1] + tr.q[n]), mid = 0.5 * (tr.q[n] + tr.q[n + 1]);
    const VecX p_plus = sys.M * (tr.q[n] - tr.q[n - 1]) / h - 0.5 * h * sys.potential_gradient(mid_prev, 0);
    const VecX p_minus = sys.M * (tr.q[n + 1] - tr.q[n]) / h + 0.5 * h * sys.potential_gradient(mid, 0);
    EXPECT_LE((p_plus - p_minus).cwiseAbs().maxCoeff(), 1e-10);
  }
}

// Running the step recursion backwards from (q_N, q_{N-1}) retraces the trajectory.
TEST(Simulate, TimeReversibleAtHalfAlpha) {
  const AssembledSystem sys = assemble(load_model("rigid_pendulum.json"));
  SimSettings s = sys.model.sim_settings;
  s.T = 0.5;
  s.newton_tol = 1e-13;
  const Trajectory tr = simulate(sys, s);
  const DiscreteDynamics dd(sys, s.h, 0.5);
  const int m = sys.m, l = sys.constraint_count();
  std::vector<VecX> p = {tr.q[tr.N], tr.q[tr.N - 1]};
  VecX lam = tr.lambda[tr.N - 1];
  for (int k = 1; k < tr.N; ++k) {
    VecX guess(m + l);
    guess << 2 * p[k] - p[k - 1], lam;
    const auto res = [&](const VecX& x) { return dd.residual_step(p[k - 1], p[k], x.head(m), x.tail(l), k); };
    const auto jac = [&](const VecX& x) {
      return dd.newton_matrix(p[k], x.head(m), dd.interval(p[k], x.head(m), k), k);
    };
    const auto r = newton_solve(res, jac, guess, 1e-13, 50);
    p.push_back(r.x.head(m));
    lam = r.x.tail(l);
  }
  EXPECT_LE((p.back() - tr.q[0]).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(Simulate, DeterministicAndStepSizeConsistent) {
  const ModelDefinition def = load_model("rigid_spring_beam.json");
  const AssembledSystem sys = assemble(def);
  const Trajectory a = simulate(sys), b = simulate(sys);
  for (int n = 0; n <= a.N; ++n) ASSERT_EQ((a.q[n] - b.q[n]).cwiseAbs().maxCoeff(), 0.0);

  SimSettings fine = def.sim_settings;
  fine.h = 5e-4;
  const Trajectory c = simulate(sys, fine);
  const Attachment B = sys.attachment({"bar", "B"});
  double worst = 0;
  for (int n = 0; n <= a.N; ++n)
    worst = std::max(worst, (B.position(a.q[n], 0) - B.position(c.q[2 * n], 0)).norm());
  EXPECT_LE(worst, 1e-3);
}

TEST(Simulate, NewtonFailureCarriesStepIndex) {
  ModelDefinition def = load_model("rigid_spring_beam.json");
  def.sim_settings.max_newton_iters = 0;
  try {
    simulate(assemble(def));
    FAIL() << "expected a NumericalError";
  } catch (const NumericalError& e) {
    EXPECT_NE(std::string(e.what()).find("step 0"), std::string::npos);
  }
}

TEST(TrajectoryCsv, HeaderRowsAndPrecision) {
  ModelDefinition def = load_model("rigid_spring_beam.json");
  def.sim_settings.T = 0.01;
  const AssembledSystem sys = assemble(def);
  const Trajectory tr = simulate(sys);
  std::stringstream ss;
  write_trajectory_csv(ss, tr);
  std::string line;
  std::getline(ss, line);
  EXPECT_EQ(line.rfind("t,q_0,q_1,", 0), 0u);
  EXPECT_NE(line.find("lambda_11"), std::string::npos);
  int rows = 0;
  std::string first;
  while (std::getline(ss, line)) {
    if (rows == 1) first = line;
    ++rows;
  }
  EXPECT_EQ(rows, tr.N + 1);
  const double q0 = std::stod(first.substr(first.find(',') + 1));
  EXPECT_EQ(q0, tr.q[1][0]);  // 17 significant digits round-trip exactly
}
