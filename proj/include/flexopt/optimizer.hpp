#pragma once

#include "adjoint.hpp"

#include <functional>
#include <limits>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace flexopt {

// Objective and inequality constraints c_j(a) <= 0 with their gradients at one design.
struct ProblemPoint {
  VecX a;
  double phi = 0;
  VecX c;
  VecX grad_phi;
  MatX grad_c;  // nd x nc
  bool has_gradient = false;
};

struct OptHistoryEntry {
  int iter = 0;
  double phi = 0;
  double grad_norm = 0;
  double max_violation = 0;
  double step = 0;
  bool accepted = false;
  VecX a;
  double merit_before = 0;  // augmented objective at the previous iterate, same multipliers
  double merit_after = 0;   // augmented objective at this iterate, same multipliers
};

struct OptimizationResult {
  std::vector<OptHistoryEntry> history;
  VecX a;
  std::string stop_reason;
  std::string error;  // set when a persistent failure aborted the run
};

enum class GradientMethod { adjoint, fd };

// Objective and constraints for the model's objective_spec and opt_settings.
class OptProblem {
 public:
  explicit OptProblem(ModelDefinition def, GradientMethod method = GradientMethod::adjoint)
      : def_(std::move(def)), method_(method) {
    fns_.push_back(Functional::objective(def_.objective_spec));
    if (def_.opt_settings)
      for (const auto& c : def_.opt_settings->constraints) fns_.push_back(Functional::from_constraint(c));
    const int nd = static_cast<int>(def_.design_variables.size());
    lb_.resize(nd);
    ub_.resize(nd);
    for (int i = 0; i < nd; ++i) {
      lb_[i] = def_.design_variables[i].lb;
      ub_[i] = def_.design_variables[i].ub;
    }
  }

  const ModelDefinition& model() const { return def_; }
  int constraint_count() const { return static_cast<int>(fns_.size()) - 1; }
  const VecX& lower() const { return lb_; }
  const VecX& upper() const { return ub_; }

  VecX project(const VecX& a) const { return a.cwiseMax(lb_).cwiseMin(ub_); }

  ProblemPoint evaluate(const VecX& a, bool with_gradient) const {
    ProblemPoint p;
    p.a = a;
    const int nc = constraint_count();
    p.c.resize(nc);
    if (with_gradient && method_ == GradientMethod::fd) {
      const auto reps = fd_gradients(def_, a, fns_);
      fill(p, reps);
      return p;
    }
    const AssembledSystem sys = assemble(def_, a);
    const Trajectory tr = simulate(sys);
    if (!with_gradient) {
      const auto P = functional_partials(sys, tr, fns_);
      p.phi = P[0].value;
      for (int j = 0; j < nc; ++j) p.c[j] = P[j + 1].value;
      return p;
    }
    fill(p, adjoint_gradients(sys, tr, fns_));
    return p;
  }

 private:
  void fill(ProblemPoint& p, const std::vector<SensitivityReport>& reps) const {
    const int nc = constraint_count();
    p.phi = reps[0].value;
    p.grad_phi = reps[0].gradient();
    p.grad_c.resize(p.a.size(), nc);
    for (int j = 0; j < nc; ++j) {
      p.c[j] = reps[j + 1].value;
      p.grad_c.col(j) = reps[j + 1].gradient();
    }
    p.has_gradient = true;
  }

  ModelDefinition def_;
  GradientMethod method_;
  std::vector<Functional> fns_;
  VecX lb_, ub_;
};

// Augmented Lagrangian state for inequalities: (rho/2) max(0, c + lambda/rho)^2 - lambda^2 / (2 rho).
struct AugmentedLagrangian {
  VecX lambda;
  double rho = 10.0;

  double value(const ProblemPoint& p) const {
    double L = p.phi;
    for (int j = 0; j < p.c.size(); ++j) {
      const double s = std::max(0.0, p.c[j] + lambda[j] / rho);
      L += 0.5 * rho * s * s - 0.5 * lambda[j] * lambda[j] / rho;
    }
    return L;
  }

  VecX gradient(const ProblemPoint& p) const {
    VecX g = p.grad_phi;
    for (int j = 0; j < p.c.size(); ++j) g += std::max(0.0, lambda[j] + rho * p.c[j]) * p.grad_c.col(j);
    return g;
  }
};

inline double max_violation(const VecX& c) { return c.size() ? std::max(0.0, c.maxCoeff()) : 0.0; }

// True when the last `patience` improvements are all below tol.
inline bool stopping_rule_met(const std::vector<double>& improvements, double tol, int patience) {
  if (patience <= 0 || static_cast<int>(improvements.size()) < patience) return false;
  for (size_t k = improvements.size() - patience; k < improvements.size(); ++k)
    if (!(improvements[k] < tol)) return false;
  return true;
}

// Projected gradient descent on the augmented Lagrangian with backtracking; multipliers are
// updated whenever the inner progress drops below the tolerance or the line search stalls.
inline OptimizationResult optimize(const OptProblem& prob, const OptSettings& s, const VecX& a0,
                                   const std::function<void(const OptHistoryEntry&)>& log = {}) {
  OptimizationResult res;
  const int nc = prob.constraint_count();
  AugmentedLagrangian al;
  al.lambda = VecX::Zero(nc);
  double last_violation = std::numeric_limits<double>::infinity();

  ProblemPoint cur;
  try {
    cur = prob.evaluate(prob.project(a0), true);
  } catch (const std::exception& e) {
    res.a = prob.project(a0);
    res.error = e.what();
    res.stop_reason = "initial evaluation failed";
    return res;
  }
  auto record = [&](OptHistoryEntry e) {
    res.history.push_back(e);
    if (log) log(res.history.back());
  };
  OptHistoryEntry e0;
  e0.iter = 0;
  e0.phi = cur.phi;
  e0.grad_norm = al.gradient(cur).lpNorm<Eigen::Infinity>();
  e0.max_violation = max_violation(cur.c);
  e0.accepted = true;
  e0.a = cur.a;
  e0.merit_before = e0.merit_after = al.value(cur);
  record(e0);

  auto update_multipliers = [&](bool stalled) {
    if (!nc) return;
    const double viol = max_violation(cur.c);
    for (int j = 0; j < nc; ++j) al.lambda[j] = std::max(0.0, al.lambda[j] + al.rho * cur.c[j]);
    if (stalled || viol > 0.5 * last_violation) al.rho = std::min(5.0 * al.rho, 1e6);
    last_violation = viol;
  };

  std::vector<double> improvements;
  res.stop_reason = "max_iters";
  for (int it = 1; it <= s.max_iters; ++it) {
    const double L0 = al.value(cur);
    const VecX g = al.gradient(cur);
    double eps = s.initial_step;
    bool accepted = false;
    ProblemPoint trial;
    double L1 = L0;
    std::string last_error;
    for (int k = 0; k <= s.max_backtracks; ++k, eps *= 0.5) {
      const VecX a_try = prob.project(cur.a - eps * g);
      if ((a_try - cur.a).lpNorm<Eigen::Infinity>() == 0.0) break;
      try {
        trial = prob.evaluate(a_try, false);
      } catch (const std::exception& ex) {
        last_error = ex.what();
        continue;
      }
      L1 = al.value(trial);
      if (L1 < L0) {
        accepted = true;
        break;
      }
    }
    OptHistoryEntry e;
    e.iter = it;
    e.merit_before = L0;
    if (accepted) {
      try {
        cur = prob.evaluate(trial.a, true);
      } catch (const std::exception& ex) {
        res.error = ex.what();
        res.stop_reason = "gradient evaluation failed";
        break;
      }
      e.step = eps;
      e.merit_after = al.value(cur);
    } else {
      e.merit_after = L0;
    }
    e.accepted = accepted;
    e.phi = cur.phi;
    e.max_violation = max_violation(cur.c);
    e.a = cur.a;
    const double improvement = accepted ? L0 - e.merit_after : 0.0;
    improvements.push_back(improvement);
    if (improvement < s.tolerance) update_multipliers(!accepted);
    e.grad_norm = al.gradient(cur).lpNorm<Eigen::Infinity>();
    record(e);
    if (stopping_rule_met(improvements, s.tolerance, s.patience)) {
      res.stop_reason = "converged";
      break;
    }
  }
  res.a = cur.a;
  return res;
}

inline OptimizationResult optimize(const ModelDefinition& def, GradientMethod method = GradientMethod::adjoint,
                                   const std::function<void(const OptHistoryEntry&)>& log = {}) {
  const OptProblem prob(def, method);
  const OptSettings s = def.opt_settings.value_or(OptSettings{});
  return optimize(prob, s, initial_design(def), log);
}

inline void write_history_csv(std::ostream& os, const std::vector<OptHistoryEntry>& hist) {
  const int nd = hist.empty() ? 0 : static_cast<int>(hist[0].a.size());
  os << "iter,phi,grad_norm,max_violation,step,accepted";
  for (int i = 0; i < nd; ++i) os << ",a_" << i;
  os << '\n';
  for (const auto& e : hist) {
    os << e.iter << ',' << format_double(e.phi) << ',' << format_double(e.grad_norm) << ','
       << format_double(e.max_violation) << ',' << format_double(e.step) << ',' << (e.accepted ? 1 : 0);
    for (int i = 0; i < nd; ++i) os << ',' << format_double(e.a[i]);
    os << '\n';
  }
}

}  // namespace flexopt
