#include "flexopt/optimizer.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

namespace fs = std::filesystem;
using namespace flexopt;

namespace {

struct RunConfig {
  std::string command;
  std::string model;
  std::string out = ".";
  std::string method = "adjoint";
  double h = 0;  // 0: keep the model value
  double T = 0;
};

ModelDefinition load(const RunConfig& cfg) {
  std::ifstream in(cfg.model);
  if (!in) throw InputError("cannot open model file '" + cfg.model + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  ModelDefinition def = parse_model(ss.str());
  if (cfg.h < 0 || cfg.T < 0) throw InputError("--h and --T must be positive");
  if (cfg.h > 0) def.sim_settings.h = cfg.h;
  if (cfg.T > 0) def.sim_settings.T = cfg.T;
  validate_model(def);
  return def;
}

std::ofstream open_out(const RunConfig& cfg, const std::string& name) {
  fs::create_directories(cfg.out);
  const fs::path p = fs::path(cfg.out) / name;
  std::ofstream os(p);
  if (!os) throw InputError("cannot write '" + p.string() + "'");
  return os;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

int run_simulate(const RunConfig& cfg) {
  const auto t0 = std::chrono::steady_clock::now();
  const ModelDefinition def = load(cfg);
  const AssembledSystem sys = assemble(def);
  const auto check = validate_initial_conditions(sys);
  if (!check.pass)
    std::cerr << "warning: initial conditions inconsistent (g " << check.g_residual << ", gdot " << check.gdot_residual
              << ")\n";
  std::cerr << "simulating " << sys.model.sim_settings.steps() << " steps, m = " << sys.m
            << ", l = " << sys.constraint_count() << "\n";
  const Trajectory tr = simulate(sys);
  auto csv = open_out(cfg, "trajectory.csv");
  write_trajectory_csv(csv, tr);
  const double final_res =
      sys.constraint_count() ? sys.constraints.evaluate(tr.q.back(), tr.time(tr.N)).cwiseAbs().maxCoeff() : 0.0;
  nlohmann::json summary = {{"N", tr.N}, {"final_constraint_residual", final_res}, {"wall_time", seconds_since(t0)}};
  open_out(cfg, "summary.json") << summary.dump(2) << '\n';
  return 0;
}

int run_sensitivity(const RunConfig& cfg) {
  const ModelDefinition def = load(cfg);
  if (def.design_variables.empty()) throw ConfigError("model has no design variable bindings");
  const bool all = cfg.method == "all";
  const std::vector<Functional> fns{Functional::objective(def.objective_spec)};
  std::vector<SensitivityReport> reports;
  nlohmann::json timing;
  const AssembledSystem sys = assemble(def);
  Trajectory tr;
  double t_forward = 0;
  if (all || cfg.method == "adjoint" || cfg.method == "direct") {
    const auto t0 = std::chrono::steady_clock::now();
    tr = simulate(sys);
    t_forward = seconds_since(t0);
    std::cerr << "forward pass: " << tr.N << " steps\n";
  }
  if (all || cfg.method == "adjoint") {
    const auto t0 = std::chrono::steady_clock::now();
    reports.push_back(adjoint_gradients(sys, tr, fns)[0]);
    timing["adjoint"] = t_forward + seconds_since(t0);
    std::cerr << "adjoint: 1 forward pass + 1 backward pass\n";
  }
  if (all || cfg.method == "direct") {
    const auto t0 = std::chrono::steady_clock::now();
    reports.push_back(direct_gradients(sys, tr, fns)[0]);
    timing["direct"] = t_forward + seconds_since(t0);
  }
  if (all || cfg.method == "fd") {
    const auto t0 = std::chrono::steady_clock::now();
    reports.push_back(fd_gradients(def, initial_design(def), fns)[0]);
    timing["fd"] = seconds_since(t0);
    std::cerr << "fd: " << 2 * def.design_variables.size() + 1 << " forward passes\n";
  }
  auto csv = open_out(cfg, "sensitivity.csv");
  write_sensitivity_csv(csv, reports);
  nlohmann::json summary = {{"objective", reports.front().value}, {"wall_time", timing}};
  if (all) {
    const VecX ga = reports[0].gradient(), gd = reports[1].gradient(), gf = reports[2].gradient();
    summary["agreement"] = {{"adjoint_vs_direct", max_relative_error(ga, gd)},
                            {"adjoint_vs_fd", max_relative_error(ga, gf)},
                            {"direct_vs_fd", max_relative_error(gd, gf)}};
    std::cerr << "max relative error adjoint/direct " << max_relative_error(ga, gd) << ", adjoint/fd "
              << max_relative_error(ga, gf) << "\n";
  }
  open_out(cfg, "sensitivity_summary.json") << summary.dump(2) << '\n';
  return 0;
}

int run_optimize(const RunConfig& cfg) {
  const ModelDefinition def = load(cfg);
  if (!def.opt_settings) throw ConfigError("model has no opt_settings");
  if (def.design_variables.empty()) throw ConfigError("model has no design variable bindings");
  auto history = open_out(cfg, "history.csv");
  const auto log = [](const OptHistoryEntry& e) {
    std::cerr << "iter " << e.iter << " phi " << format_double(e.phi) << " step " << e.step
              << (e.accepted ? "" : " (stalled)") << "\n";
  };
  const OptimizationResult res = optimize(def, GradientMethod::adjoint, log);
  write_history_csv(history, res.history);
  std::cerr << "stop: " << res.stop_reason << "\n";
  open_out(cfg, "optimized_model.json") << serialize_model(apply_design(def, res.a)) << '\n';
  if (!res.error.empty()) throw NumericalError(res.error);
  return 0;
}

int run_validate(const RunConfig& cfg) {
  const ModelDefinition def = load(cfg);
  const AssembledSystem sys = assemble(def);
  const auto r = validate_initial_conditions(sys);
  std::cout << "constraint residual |g(q0)|        " << format_double(r.g_residual) << "\n"
            << "velocity residual |G q0dot + g_t|  " << format_double(r.gdot_residual) << "\n"
            << "design tangency residual           " << format_double(r.tangent_residual) << "\n"
            << (r.pass ? "PASS" : "FAIL") << "\n";
  nlohmann::json j = {{"g_residual", r.g_residual}, {"gdot_residual", r.gdot_residual}, {"pass", r.pass}};
  open_out(cfg, "validation.json") << j.dump(2) << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Flexible multibody simulation, design sensitivities and optimization"};
  app.require_subcommand(1);
  app.set_help_flag("--help", "print help");
  RunConfig cfg;
  for (const char* name : {"simulate", "sensitivity", "optimize", "validate"}) {
    auto* sub = app.add_subcommand(name);
    sub->set_help_flag("--help", "print help");  // -h would clash with --h
    sub->add_option("--model", cfg.model, "model file (JSON)")->required();
    sub->add_option("--out", cfg.out, "output directory");
    sub->add_option("--h", cfg.h, "time step override [s]");
    sub->add_option("--T", cfg.T, "duration override [s]");
    if (std::string(name) == "sensitivity")
      sub->add_option("--method", cfg.method, "adjoint | direct | fd | all")
          ->check(CLI::IsMember({"adjoint", "direct", "fd", "all"}));
    sub->callback([&cfg, name] { cfg.command = name; });
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (cfg.command == "simulate") return run_simulate(cfg);
    if (cfg.command == "sensitivity") return run_sensitivity(cfg);
    if (cfg.command == "optimize") return run_optimize(cfg);
    return run_validate(cfg);
  } catch (const InputError& e) {
    std::cerr << "input error: " << e.what() << "\n";
    return 2;
  } catch (const ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return 3;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  }
}
