#pragma once

#include "system.hpp"

#include <cstdio>
#include <fstream>
#include <functional>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

namespace flexopt {

struct SolverSettings {
  double newton_tol = 1e-10;
  int max_newton_iters = 50;
  double alpha = 0.5;

  static SolverSettings from(const SimSettings& s) { return {s.newton_tol, s.max_newton_iters, s.alpha}; }
};

struct Trajectory {
  double h = 0;
  int N = 0;
  std::vector<VecX> q;       // q_0 .. q_N
  std::vector<VecX> lambda;  // lambda_0 .. lambda_{N-1}
  VecX qdot0;
  long newton_iterations = 0;

  double time(int n) const { return n * h; }
};

// Row-equilibrated partial-pivot LU. Each row is scaled to unit max norm first, so a pivot
// below 1e-14 signals rank deficiency rather than mixed units (slope vs. position rows).
class Factorization {
 public:
  Factorization(const MatX& A, const std::string& what) {
    row_scale_ = A.cwiseAbs().rowwise().maxCoeff().cwiseMax(1e-300).cwiseInverse();
    lu_.compute(row_scale_.asDiagonal() * A);
    const double pivot = lu_.matrixLU().diagonal().cwiseAbs().minCoeff();
    if (!(pivot >= 1e-14)) {
      std::ostringstream os;
      os << what << ": singular matrix (scaled pivot " << pivot << ")";
      throw NumericalError(os.str());
    }
  }

  template <class Rhs>
  MatX solve(const Eigen::MatrixBase<Rhs>& b) const {
    return lu_.solve(row_scale_.asDiagonal() * b);
  }

 private:
  VecX row_scale_;
  Eigen::PartialPivLU<MatX> lu_;
};

inline Factorization factorize(const MatX& A, const std::string& what) { return Factorization(A, what); }

struct NewtonResult {
  VecX x;
  int iterations = 0;
  double residual = 0;
};

// Newton iteration on R(x) = 0 with an analytic Jacobian; converged when |R|_inf <= tol.
inline NewtonResult newton_solve(const std::function<VecX(const VecX&)>& residual,
                                 const std::function<MatX(const VecX&)>& jacobian, VecX guess, double tol,
                                 int max_iters) {
  NewtonResult r;
  r.x = std::move(guess);
  VecX R = residual(r.x);
  r.residual = R.size() ? R.cwiseAbs().maxCoeff() : 0.0;
  while (r.residual > tol) {
    if (r.iterations >= max_iters) {
      std::ostringstream os;
      os << "Newton did not converge in " << max_iters << " iterations (residual " << r.residual << ")";
      throw NumericalError(os.str());
    }
    const auto lu = factorize(jacobian(r.x), "Newton");
    r.x -= lu.solve(R);
    R = residual(r.x);
    r.residual = R.cwiseAbs().maxCoeff();
    if (!std::isfinite(r.residual)) throw NumericalError("Newton diverged (non-finite residual)");
    ++r.iterations;
  }
  return r;
}

// Force data on one interval [q_a, q_b] evaluated at the alpha point.
struct IntervalData {
  VecX mid, v, Q;
  MatX K;  // stiffness at mid; dQ/dq = -K, dQ/dv = C
  double t = 0;
};

// Discrete residuals of the variational integrator and all their partial derivatives.
class DiscreteDynamics {
 public:
  DiscreteDynamics(const AssembledSystem& sys, double h, double alpha) : sys_(sys), h_(h), alpha_(alpha) {}

  const AssembledSystem& system() const { return sys_; }
  double h() const { return h_; }
  double alpha() const { return alpha_; }
  int m() const { return sys_.m; }
  int l() const { return sys_.constraint_count(); }

  // Interval k spans [q_k, q_{k+1}].
  IntervalData interval(const VecX& qa, const VecX& qb, int k, bool with_stiffness = true) const {
    IntervalData d;
    d.mid = (1.0 - alpha_) * qa + alpha_ * qb;
    d.v = (qb - qa) / h_;
    d.t = (k + alpha_) * h_;
    d.Q = sys_.generalized_force(d.mid, d.v, d.t);
    if (with_stiffness) d.K = sys_.stiffness(d.mid, d.t);
    return d;
  }

  // dQ(I)/dq_b and dQ(I)/dq_a.
  MatX dQ_db(const IntervalData& I) const { return -alpha_ * I.K + sys_.C / h_; }
  MatX dQ_da(const IntervalData& I) const { return -(1.0 - alpha_) * I.K - sys_.C / h_; }

  VecX c_initial(const VecX& q0, const VecX& q1, const VecX& lambda0, const VecX& qdot0,
                 const IntervalData& I0) const {
    VecX c = sys_.M * ((q1 - q0) / h_ - qdot0) - h_ * (1.0 - alpha_) * I0.Q;
    if (l()) c += 0.5 * h_ * sys_.constraints.jacobian(q0).transpose() * lambda0;
    return c;
  }

  VecX c_step(const VecX& qprev, const VecX& qn, const VecX& qnext, const VecX& lambda, const IntervalData& Iprev,
              const IntervalData& In) const {
    VecX c = sys_.M * (2.0 * qn - qnext - qprev) / h_ + h_ * (1.0 - alpha_) * In.Q + h_ * alpha_ * Iprev.Q;
    if (l()) c -= 0.5 * h_ * sys_.constraints.jacobian(qn).transpose() * lambda;
    return c;
  }

  VecX residual_initial(const VecX& q0, const VecX& q1, const VecX& lambda0, const VecX& qdot0) const {
    VecX r(m() + l());
    r.head(m()) = c_initial(q0, q1, lambda0, qdot0, interval(q0, q1, 0, false));
    r.tail(l()) = sys_.constraints.evaluate(q1, h_);
    return r;
  }

  // Residual of step n (n >= 1): unknowns q_{n+1}, lambda_n.
  VecX residual_step(const VecX& qprev, const VecX& qn, const VecX& qnext, const VecX& lambda, int n) const {
    VecX r(m() + l());
    r.head(m()) = c_step(qprev, qn, qnext, lambda, interval(qprev, qn, n - 1, false), interval(qn, qnext, n, false));
    r.tail(l()) = sys_.constraints.evaluate(qnext, (n + 1) * h_);
    return r;
  }

  // Newton matrix of step n over [q_{n+1}; lambda_n]; n = 0 is the initialization solve.
  MatX newton_matrix(const VecX& qn, const VecX& qnext, const IntervalData& In, int n) const {
    const int M = m(), L = l();
    MatX J = MatX::Zero(M + L, M + L);
    if (n == 0) {
      J.topLeftCorner(M, M) = sys_.M / h_ - h_ * (1.0 - alpha_) * dQ_db(In);
    } else {
      J.topLeftCorner(M, M) = -sys_.M / h_ + h_ * (1.0 - alpha_) * dQ_db(In);
    }
    if (L) {
      const MatX Gn = sys_.constraints.jacobian(qn);
      J.topRightCorner(M, L) = (n == 0 ? 0.5 : -0.5) * h_ * Gn.transpose();
      J.bottomLeftCorner(L, M) = sys_.constraints.jacobian(qnext);
    }
    return J;
  }

  // dc_n/dq_n (n >= 1) and dc_0/dq_0.
  MatX dc_dcurrent(const IntervalData* Iprev, const IntervalData& In, const VecX& lambda, int n) const {
    MatX D;
    if (n == 0) {
      D = -sys_.M / h_ - h_ * (1.0 - alpha_) * dQ_da(In);
      if (l()) D += 0.5 * h_ * sys_.constraints.weighted_hessian(lambda);
    } else {
      D = 2.0 * sys_.M / h_ + h_ * (1.0 - alpha_) * dQ_da(In) + h_ * alpha_ * dQ_db(*Iprev);
      if (l()) D -= 0.5 * h_ * sys_.constraints.weighted_hessian(lambda);
    }
    return D;
  }

  // dc_n/dq_{n-1} (n >= 1).
  MatX dc_dprevious(const IntervalData& Iprev) const { return -sys_.M / h_ + h_ * alpha_ * dQ_da(Iprev); }

  // Explicit dc_0/da_i.
  VecX dc0_da(const VecX& q0, const VecX& q1, const VecX& lambda0, const VecX& qdot0, const IntervalData& I0,
              int i) const {
    VecX d = -h_ * (1.0 - alpha_) * sys_.force_design_derivative(I0.mid, I0.v, I0.t, i);
    if (sys_.dM[i].size()) d += sys_.dM[i] * ((q1 - q0) / h_ - qdot0);
    if (l()) d += 0.5 * h_ * sys_.constraints.jacobian_design_transpose(lambda0, i);
    return d;
  }

  // Explicit dc_n/da_i (n >= 1).
  VecX dc_da(const VecX& qprev, const VecX& qn, const VecX& qnext, const VecX& lambda, const IntervalData& Iprev,
             const IntervalData& In, int i) const {
    VecX d = h_ * (1.0 - alpha_) * sys_.force_design_derivative(In.mid, In.v, In.t, i) +
             h_ * alpha_ * sys_.force_design_derivative(Iprev.mid, Iprev.v, Iprev.t, i);
    if (sys_.dM[i].size()) d += sys_.dM[i] * (2.0 * qn - qnext - qprev) / h_;
    if (l()) d -= 0.5 * h_ * sys_.constraints.jacobian_design_transpose(lambda, i);
    return d;
  }

 private:
  const AssembledSystem& sys_;
  double h_, alpha_;
};

// Forward simulation: initialization solve for (q1, lambda0), then one Newton solve per step.
inline Trajectory simulate(const AssembledSystem& sys, const SimSettings& sim) {
  const SolverSettings s = SolverSettings::from(sim);
  const DiscreteDynamics dd(sys, sim.h, s.alpha);
  const int m = sys.m, l = sys.constraint_count();
  Trajectory tr;
  tr.h = sim.h;
  tr.N = sim.steps();
  tr.qdot0 = sys.qdot0;
  tr.q.reserve(tr.N + 1);
  tr.lambda.reserve(tr.N);
  tr.q.push_back(sys.q0);

  auto split = [&](const VecX& x) { return std::pair<VecX, VecX>{x.head(m), x.tail(l)}; };
  for (int n = 0; n < tr.N; ++n) {
    const VecX& qn = tr.q[n];
    VecX guess(m + l);
    if (n == 0) {
      guess.head(m) = qn + sim.h * sys.qdot0;
      guess.tail(l).setZero();
    } else {
      guess.head(m) = 2.0 * qn - tr.q[n - 1];
      guess.tail(l) = tr.lambda[n - 1];
    }
    std::function<VecX(const VecX&)> res;
    std::function<MatX(const VecX&)> jac;
    if (n == 0) {
      res = [&](const VecX& x) {
        auto [q1, lam] = split(x);
        return dd.residual_initial(qn, q1, lam, sys.qdot0);
      };
    } else {
      const IntervalData Iprev = dd.interval(tr.q[n - 1], qn, n - 1, false);
      res = [&, Iprev](const VecX& x) {
        auto [qnext, lam] = split(x);
        VecX r(m + l);
        r.head(m) = dd.c_step(tr.q[n - 1], qn, qnext, lam, Iprev, dd.interval(qn, qnext, n, false));
        r.tail(l) = sys.constraints.evaluate(qnext, (n + 1) * sim.h);
        return r;
      };
    }
    jac = [&](const VecX& x) { return dd.newton_matrix(qn, x.head(m), dd.interval(qn, x.head(m), n), n); };
    NewtonResult nr;
    try {
      nr = newton_solve(res, jac, guess, s.newton_tol, s.max_newton_iters);
    } catch (const NumericalError& e) {
      throw NumericalError("step " + std::to_string(n) + ": " + e.what());
    }
    tr.newton_iterations += nr.iterations;
    tr.q.push_back(nr.x.head(m));
    tr.lambda.push_back(nr.x.tail(l));
  }
  return tr;
}

inline Trajectory simulate(const AssembledSystem& sys) { return simulate(sys, sys.model.sim_settings); }

inline double max_constraint_residual(const AssembledSystem& sys, const Trajectory& tr) {
  double r = 0;
  if (!sys.constraint_count()) return 0;
  for (int n = 0; n <= tr.N; ++n)
    r = std::max(r, sys.constraints.evaluate(tr.q[n], tr.time(n)).cwiseAbs().maxCoeff());
  return r;
}

inline std::string format_double(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

// CSV: t, q_0..q_{m-1}, lambda_0..lambda_{l-1}; the last row has no multipliers.
inline void write_trajectory_csv(std::ostream& os, const Trajectory& tr) {
  const int m = tr.q.empty() ? 0 : static_cast<int>(tr.q[0].size());
  const int l = tr.lambda.empty() ? 0 : static_cast<int>(tr.lambda[0].size());
  os << "t";
  for (int i = 0; i < m; ++i) os << ",q_" << i;
  for (int i = 0; i < l; ++i) os << ",lambda_" << i;
  os << '\n';
  for (int n = 0; n <= tr.N; ++n) {
    os << format_double(tr.time(n));
    for (int i = 0; i < m; ++i) os << ',' << format_double(tr.q[n][i]);
    for (int i = 0; i < l; ++i) {
      os << ',';
      if (n < tr.N) os << format_double(tr.lambda[n][i]);
    }
    os << '\n';
  }
}

}  // namespace flexopt
