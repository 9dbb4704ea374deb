#pragma once

#include "objective.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>
#include <string>
#include <vector>

namespace flexopt {

// Adjoint sequences; column k belongs to functional k.
struct AdjointSolution {
  std::vector<MatX> mu;   // mu_0 .. mu_{N-1}, each m x K
  std::vector<MatX> eta;  // index n = 1..N (eta[0] unused), each l x K
};

struct SensitivityEntry {
  std::string id;
  std::string method;
  double gradient = 0;
  // Adjoint breakdown; NaN for methods that do not produce one.
  double term_explicit = std::numeric_limits<double>::quiet_NaN();
  double term_mu = std::numeric_limits<double>::quiet_NaN();
  double term_eta = std::numeric_limits<double>::quiet_NaN();
  double term_q0 = std::numeric_limits<double>::quiet_NaN();
  double term_qdot0 = std::numeric_limits<double>::quiet_NaN();
  std::string error;
};

struct SensitivityReport {
  std::string method;
  double value = 0;
  std::vector<SensitivityEntry> entries;

  VecX gradient() const {
    VecX g(entries.size());
    for (size_t i = 0; i < entries.size(); ++i) g[i] = entries[i].gradient;
    return g;
  }
};

namespace detail {

inline SensitivityReport make_report(const AssembledSystem& sys, const std::string& method, double value) {
  SensitivityReport r;
  r.method = method;
  r.value = value;
  for (const auto& d : sys.model.design_variables) {
    SensitivityEntry e;
    e.id = d.id;
    e.method = method;
    r.entries.push_back(e);
  }
  return r;
}

inline MatX stack_columns(const std::vector<FunctionalPartials>& P, int n, int m) {
  MatX out(m, P.size());
  for (size_t k = 0; k < P.size(); ++k) out.col(k) = P[k].dq[n];
  return out;
}

}  // namespace detail

// Backward sweep: for n = N..1 solve J_{n-1}^T [mu_{n-1}; eta_n] = [dPhi/dq_n - (dc_n/dq_n)^T mu_n
// - (dc_{n+1}/dq_n)^T mu_{n+1}; dPhi/dlambda_{n-1}].
inline AdjointSolution backward_sweep(const DiscreteDynamics& dd, const Trajectory& tr,
                                      const std::vector<FunctionalPartials>& P) {
  const int m = dd.m(), l = dd.l(), N = tr.N, K = static_cast<int>(P.size());
  AdjointSolution adj;
  adj.mu.assign(N, MatX::Zero(m, K));
  adj.eta.assign(N + 1, MatX::Zero(l, K));
  MatX mu_next = MatX::Zero(m, K);   // mu_n
  MatX mu_next2 = MatX::Zero(m, K);  // mu_{n+1}
  IntervalData In;                   // interval n, reused from the previous iteration
  for (int n = N; n >= 1; --n) {
    const IntervalData Iprev = dd.interval(tr.q[n - 1], tr.q[n], n - 1);
    MatX rhs = MatX::Zero(m + l, K);
    rhs.topRows(m) = detail::stack_columns(P, n, m);
    if (n < N) {
      rhs.topRows(m) -= dd.dc_dcurrent(&Iprev, In, tr.lambda[n], n).transpose() * mu_next;
      if (n + 1 < N) rhs.topRows(m) -= dd.dc_dprevious(In).transpose() * mu_next2;
    }
    for (int k = 0; k < K; ++k)
      if (!P[k].dlambda.empty()) rhs.col(k).tail(l) = P[k].dlambda[n - 1];
    const MatX J = dd.newton_matrix(tr.q[n - 1], tr.q[n], Iprev, n - 1);
    const MatX x = factorize(J.transpose(), "adjoint step " + std::to_string(n)).solve(rhs);
    adj.mu[n - 1] = x.topRows(m);
    adj.eta[n] = x.bottomRows(l);
    mu_next2 = mu_next;
    mu_next = adj.mu[n - 1];
    In = Iprev;
  }
  return adj;
}

// Gradient assembly from the adjoint solution, one report per functional.
inline std::vector<SensitivityReport> assemble_gradient(const DiscreteDynamics& dd, const Trajectory& tr,
                                                        const AdjointSolution& adj,
                                                        const std::vector<FunctionalPartials>& P) {
  const AssembledSystem& sys = dd.system();
  const int m = dd.m(), l = dd.l(), N = tr.N, K = static_cast<int>(P.size()), nd = sys.design_count();
  MatX t_mu = MatX::Zero(nd, K), t_eta = MatX::Zero(nd, K);
  IntervalData Iprev;
  for (int n = 0; n < N; ++n) {
    const IntervalData In = dd.interval(tr.q[n], tr.q[n + 1], n, false);
    for (int i = 0; i < nd; ++i) {
      const VecX dc = n == 0 ? dd.dc0_da(tr.q[0], tr.q[1], tr.lambda[0], sys.qdot0, In, i)
                             : dd.dc_da(tr.q[n - 1], tr.q[n], tr.q[n + 1], tr.lambda[n], Iprev, In, i);
      t_mu.row(i) -= (adj.mu[n].transpose() * dc).transpose();
      if (l) t_eta.row(i) -= (adj.eta[n + 1].transpose() * sys.constraints.design_derivative(tr.q[n + 1], i)).transpose();
    }
    Iprev = In;
  }
  // Initial-condition terms.
  MatX lam_q0 = detail::stack_columns(P, 0, m);
  MatX lam_qd0(m, K);
  for (int k = 0; k < K; ++k) lam_qd0.col(k) = P[k].dqdot0;
  if (N >= 1) {
    const IntervalData I0 = dd.interval(tr.q[0], tr.q[1], 0);
    lam_q0 -= dd.dc_dcurrent(nullptr, I0, tr.lambda[0], 0).transpose() * adj.mu[0];
    if (N >= 2) lam_q0 -= dd.dc_dprevious(I0).transpose() * adj.mu[1];
    lam_qd0 += sys.M * adj.mu[0];
  }
  std::vector<SensitivityReport> out;
  for (int k = 0; k < K; ++k) {
    auto r = detail::make_report(sys, "adjoint", P[k].value);
    for (int i = 0; i < nd; ++i) {
      auto& e = r.entries[i];
      e.term_explicit = P[k].da[i];
      e.term_mu = t_mu(i, k);
      e.term_eta = t_eta(i, k);
      e.term_q0 = lam_q0.col(k).dot(sys.dq0[i]);
      e.term_qdot0 = lam_qd0.col(k).dot(sys.dqdot0[i]);
      e.gradient = e.term_explicit + e.term_mu + e.term_eta + e.term_q0 + e.term_qdot0;
    }
    out.push_back(std::move(r));
  }
  return out;
}

inline std::vector<FunctionalPartials> functional_partials(const AssembledSystem& sys, const Trajectory& tr,
                                                          const std::vector<Functional>& fns) {
  std::vector<FunctionalPartials> P;
  for (const auto& f : fns) P.push_back(evaluate_functional(f, sys, tr, sys.model.sim_settings.alpha));
  return P;
}

// Adjoint gradients of several functionals from one forward and one backward pass.
inline std::vector<SensitivityReport> adjoint_gradients(const AssembledSystem& sys, const Trajectory& tr,
                                                        const std::vector<Functional>& fns,
                                                        AdjointSolution* keep = nullptr) {
  const DiscreteDynamics dd(sys, tr.h, sys.model.sim_settings.alpha);
  const auto P = functional_partials(sys, tr, fns);
  const AdjointSolution adj = backward_sweep(dd, tr, P);
  auto out = assemble_gradient(dd, tr, adj, P);
  if (keep) *keep = adj;
  return out;
}

// State sensitivities s_n = dq_n/da (m x nd) from the forward differentiated system.
struct DirectSolution {
  std::vector<MatX> s;      // n = 0..N
  std::vector<MatX> sigma;  // dlambda_n/da, n = 0..N-1
};

inline DirectSolution direct_sensitivities(const DiscreteDynamics& dd, const Trajectory& tr) {
  const AssembledSystem& sys = dd.system();
  const int m = dd.m(), l = dd.l(), N = tr.N, nd = sys.design_count();
  DirectSolution ds;
  ds.s.assign(N + 1, MatX::Zero(m, nd));
  ds.sigma.assign(N, MatX::Zero(l, nd));
  MatX sdot0(m, nd);
  for (int i = 0; i < nd; ++i) {
    ds.s[0].col(i) = sys.dq0[i];
    sdot0.col(i) = sys.dqdot0[i];
  }
  IntervalData Iprev;
  for (int n = 0; n < N; ++n) {
    const IntervalData In = dd.interval(tr.q[n], tr.q[n + 1], n);
    MatX rhs(m + l, nd);
    if (n == 0) {
      rhs.topRows(m) = dd.dc_dcurrent(nullptr, In, tr.lambda[0], 0) * ds.s[0] - sys.M * sdot0;
      for (int i = 0; i < nd; ++i) rhs.col(i).head(m) += dd.dc0_da(tr.q[0], tr.q[1], tr.lambda[0], sys.qdot0, In, i);
    } else {
      rhs.topRows(m) = dd.dc_dcurrent(&Iprev, In, tr.lambda[n], n) * ds.s[n] + dd.dc_dprevious(Iprev) * ds.s[n - 1];
      for (int i = 0; i < nd; ++i)
        rhs.col(i).head(m) += dd.dc_da(tr.q[n - 1], tr.q[n], tr.q[n + 1], tr.lambda[n], Iprev, In, i);
    }
    for (int i = 0; i < nd; ++i) rhs.col(i).tail(l) = sys.constraints.design_derivative(tr.q[n + 1], i);
    const MatX J = dd.newton_matrix(tr.q[n], tr.q[n + 1], In, n);
    const MatX x = factorize(J, "direct step " + std::to_string(n)).solve(-rhs);
    ds.s[n + 1] = x.topRows(m);
    ds.sigma[n] = x.bottomRows(l);
    Iprev = In;
  }
  return ds;
}

inline std::vector<SensitivityReport> direct_gradients(const AssembledSystem& sys, const Trajectory& tr,
                                                       const std::vector<Functional>& fns) {
  const DiscreteDynamics dd(sys, tr.h, sys.model.sim_settings.alpha);
  const auto P = functional_partials(sys, tr, fns);
  const int nd = sys.design_count();
  const bool any_state = std::any_of(fns.begin(), fns.end(), [](const Functional& f) { return f.depends_on_state(); });
  DirectSolution ds;
  if (any_state) ds = direct_sensitivities(dd, tr);
  std::vector<SensitivityReport> out;
  for (const auto& p : P) {
    auto r = detail::make_report(sys, "direct", p.value);
    VecX g = p.da;
    if (any_state) {
      for (int n = 0; n <= tr.N; ++n) g += ds.s[n].transpose() * p.dq[n];
      if (!p.dlambda.empty())
        for (int n = 0; n < tr.N; ++n) g += ds.sigma[n].transpose() * p.dlambda[n];
      for (int i = 0; i < nd; ++i) g[i] += p.dqdot0.dot(sys.dqdot0[i]);
    }
    for (int i = 0; i < nd; ++i) r.entries[i].gradient = g[i];
    out.push_back(std::move(r));
  }
  return out;
}

// Values of the functionals after re-assembling and re-simulating at design a.
inline std::vector<double> functional_values(const ModelDefinition& def, const VecX& a,
                                             const std::vector<Functional>& fns) {
  const AssembledSystem sys = assemble(def, a);
  const bool any_state = std::any_of(fns.begin(), fns.end(), [](const Functional& f) { return f.depends_on_state(); });
  Trajectory tr;
  if (any_state) {
    tr = simulate(sys);
  } else {
    tr.h = sys.model.sim_settings.h;
    tr.q = {sys.q0};
  }
  std::vector<double> v;
  for (const auto& f : fns) v.push_back(evaluate_functional(f, sys, tr, sys.model.sim_settings.alpha).value);
  return v;
}

// Central differences with step 1e-6 (1 + |a_i|); each evaluation re-assembles and re-simulates.
inline std::vector<SensitivityReport> fd_gradients(const ModelDefinition& def, const VecX& a,
                                                   const std::vector<Functional>& fns) {
  const AssembledSystem sys = assemble(def, a);
  const auto base = functional_values(def, a, fns);
  std::vector<SensitivityReport> out;
  for (size_t k = 0; k < fns.size(); ++k) out.push_back(detail::make_report(sys, "fd", base[k]));
  for (int i = 0; i < a.size(); ++i) {
    const double step = 1e-6 * (1.0 + std::abs(a[i]));
    VecX ap = a, am = a;
    ap[i] += step;
    am[i] -= step;
    try {
      const auto fp = functional_values(def, ap, fns);
      const auto fm = functional_values(def, am, fns);
      for (size_t k = 0; k < fns.size(); ++k) out[k].entries[i].gradient = (fp[k] - fm[k]) / (2.0 * step);
    } catch (const std::exception& e) {
      for (auto& r : out) {
        r.entries[i].gradient = std::numeric_limits<double>::quiet_NaN();
        r.entries[i].error = e.what();
      }
    }
  }
  return out;
}

inline void write_sensitivity_csv(std::ostream& os, const std::vector<SensitivityReport>& reports) {
  os << "variable_id,method,gradient,term_explicit,term_mu,term_eta,term_q0,term_qdot0\n";
  auto num = [](double x) { return std::isnan(x) ? std::string() : format_double(x); };
  for (const auto& r : reports)
    for (const auto& e : r.entries)
      os << e.id << ',' << e.method << ',' << num(e.gradient) << ',' << num(e.term_explicit) << ','
         << num(e.term_mu) << ',' << num(e.term_eta) << ',' << num(e.term_q0) << ',' << num(e.term_qdot0) << '\n';
}

// Relative difference used for oracle agreement: |x - y| / max(1, |y|).
inline double relative_error(double x, double y) { return std::abs(x - y) / std::max(1.0, std::abs(y)); }

inline double max_relative_error(const VecX& x, const VecX& y) {
  double e = 0;
  for (int i = 0; i < x.size(); ++i) e = std::max(e, relative_error(x[i], y[i]));
  return e;
}

}  // namespace flexopt
