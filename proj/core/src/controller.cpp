#include "attralign/controller.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <stdexcept>

namespace attralign {

double SolverConfig::eta() const { return (1.0 - xi) / rho; }

double SolverConfig::gamma() const { return xi * rho / (1.0 - xi); }

void SolverConfig::validate() const {
  if (!(rho >= 0.0) || !std::isfinite(rho)) throw std::invalid_argument("rho must be a finite value >= 0");
  if (!(xi >= 0.0 && xi < 1.0)) throw std::invalid_argument("xi must lie in [0, 1)");
  if (rho == 0.0)
    throw std::invalid_argument("rho = 0 leaves eta = (1 - xi) / rho undefined (rho + gamma must be positive)");
  if (u_max && !(*u_max > 0.0)) throw std::invalid_argument("u_max must be positive");
  if (batch == 0 || steps == 0) throw std::invalid_argument("batch and steps must be positive");
  if (!(tol >= 0.0)) throw std::invalid_argument("tol must be >= 0");
}

nlohmann::json to_json(const SolverConfig& cfg) {
  nlohmann::json doc{{"rho", cfg.rho},
                     {"xi", cfg.xi},
                     {"eta", cfg.eta()},
                     {"max_iters", cfg.max_iters},
                     {"batch", cfg.batch},
                     {"steps", cfg.steps},
                     {"tol", cfg.tol},
                     {"seed", cfg.seed},
                     {"estimator", to_string(cfg.estimator)}};
  doc["u_max"] = cfg.u_max ? nlohmann::json(*cfg.u_max) : nlohmann::json(nullptr);
  return doc;
}

SolverConfig solver_config_from_json(const nlohmann::json& doc, SolverConfig defaults) {
  SolverConfig c = defaults;
  c.rho = doc.value("rho", c.rho);
  c.xi = doc.value("xi", c.xi);
  c.max_iters = doc.value("max_iters", c.max_iters);
  c.batch = doc.value("batch", c.batch);
  c.steps = doc.value("steps", c.steps);
  c.tol = doc.value("tol", c.tol);
  c.seed = doc.value("seed", c.seed);
  if (doc.contains("estimator")) c.estimator = joint_estimator_from_string(doc.at("estimator").get<std::string>());
  if (doc.contains("u_max")) {
    if (doc.at("u_max").is_null())
      c.u_max.reset();
    else
      c.u_max = doc.at("u_max").get<double>();
  }
  return c;
}

namespace {

double clamp_box(double v, std::optional<double> u_max) {
  return u_max ? std::clamp(v, -*u_max, *u_max) : v;
}

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

}  // namespace

Vector control_update(std::span<const double> u_ref, std::span<const double> nu, const Matrix& g, double rho,
                      double gamma, std::optional<double> u_max) {
  if (!(rho + gamma > 0.0)) throw std::invalid_argument("control_update: rho + gamma must be positive");
  if (g.rows() != nu.size() || g.cols() != u_ref.size()) throw std::invalid_argument("control_update: shape mismatch");
  Vector u(u_ref.size());
  for (std::size_t j = 0; j < u.size(); ++j) {
    double gt_nu = 0.0;
    for (std::size_t i = 0; i < nu.size(); ++i) gt_nu += g(i, j) * nu[i];
    u[j] = clamp_box((gamma * u_ref[j] - gt_nu) / (rho + gamma), u_max);
  }
  return u;
}

Matrix control_update(const Matrix& u_ref, const Matrix& adjoint, double xi, double eta,
                      std::optional<double> u_max) {
  if (u_ref.rows() != adjoint.rows() || u_ref.cols() != adjoint.cols())
    throw std::invalid_argument("control_update: shape mismatch");
  Matrix u(u_ref.rows(), u_ref.cols());
  const auto ref = u_ref.values();
  const auto nu = adjoint.values();
  auto out = u.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = clamp_box(xi * ref[i] - eta * nu[i], u_max);
  return u;
}

double proximal_hamiltonian(std::span<const double> u, std::span<const double> u_ref, std::span<const double> nu,
                            const Matrix& g, double rho, double gamma) {
  double h = 0.0;
  for (std::size_t i = 0; i < nu.size(); ++i) {
    double gu = 0.0;
    for (std::size_t j = 0; j < u.size(); ++j) gu += g(i, j) * u[j];
    h += nu[i] * gu;
  }
  for (std::size_t j = 0; j < u.size(); ++j)
    h += 0.5 * rho * u[j] * u[j] + 0.5 * gamma * (u[j] - u_ref[j]) * (u[j] - u_ref[j]);
  return h;
}

std::vector<Matrix> backward_adjoint(const ControlledDynamics& dyn, const TimeGrid& grid,
                                     const StateTrajectory& trajectory, const Matrix& terminal_adjoint) {
  const std::size_t steps = grid.steps();
  if (trajectory.size() != steps + 1) throw std::invalid_argument("backward_adjoint: trajectory length mismatch");
  if (terminal_adjoint.rows() != trajectory.back().rows() || terminal_adjoint.cols() != trajectory.back().cols())
    throw std::invalid_argument("backward_adjoint: adjoint shape mismatch");
  std::vector<Matrix> n(steps + 1);
  n[steps] = terminal_adjoint;
  for (std::size_t k = steps; k-- > 0;) {
    n[k] = n[k + 1];
    axpy(grid.step(k), dyn.vjp_batch(trajectory[k], grid.nodes[k], n[k + 1]).values(), n[k].values());
    if (!n[k].all_finite()) throw NonFiniteError("non-finite adjoint", 0, k);
  }
  return n;
}

namespace {

struct TerminalAdjoint {
  double cost = 0.0;
  Matrix adjoint;
};

TerminalAdjoint terminal_adjoint(const ControlledDynamics& dyn, const TimeGrid& grid, const AttributeOracle& oracle,
                                 const TargetSpec& target, JointEstimator estimator, const Matrix& final_state) {
  const double scale = dyn.terminal_scale(grid.horizon());
  TerminalCost tc = terminal_cost(oracle, dyn.terminal_sample(final_state, grid.horizon()), target, estimator);
  if (scale != 1.0)
    for (double& v : tc.gradient.values()) v *= scale;
  return {tc.value, std::move(tc.gradient)};
}

void check_control_shape(const TimeGrid& grid, const Matrix& x_init, const ControlTrajectory& u) {
  if (u.steps.size() != grid.steps()) throw std::invalid_argument("control has wrong number of steps");
  for (const auto& uk : u.steps)
    if (uk.rows() != x_init.rows() || uk.cols() != x_init.cols())
      throw std::invalid_argument("control shape does not match the batch");
}

}  // namespace

CostBreakdown total_cost(const ControlledDynamics& dyn, const TimeGrid& grid, const AttributeOracle& oracle,
                         const TargetSpec& target, const SolverConfig& cfg, const Matrix& x_init,
                         const ControlTrajectory& u) {
  check_control_shape(grid, x_init, u);
  const StateTrajectory traj = rollout(dyn, grid, x_init, u);
  CostBreakdown c;
  c.terminal = terminal_cost(oracle, dyn.terminal_sample(traj.back(), grid.horizon()), target, cfg.estimator, false).value;
  c.energy = 0.5 * cfg.rho * u.squared_norm_integral(grid);
  c.total = c.terminal + c.energy;
  return c;
}

ControlTrajectory adjoint_gradient(const ControlledDynamics& dyn, const TimeGrid& grid,
                                   const AttributeOracle& oracle, const TargetSpec& target, const SolverConfig& cfg,
                                   const Matrix& x_init, const ControlTrajectory& u) {
  check_control_shape(grid, x_init, u);
  const StateTrajectory traj = rollout(dyn, grid, x_init, u);
  const TerminalAdjoint ta = terminal_adjoint(dyn, grid, oracle, target, cfg.estimator, traj.back());
  const std::vector<Matrix> n = backward_adjoint(dyn, grid, traj, ta.adjoint);
  ControlTrajectory grad;
  for (std::size_t k = 0; k < grid.steps(); ++k) {
    Matrix g = n[k + 1];
    axpy(cfg.rho, u.steps[k].values(), g.values());
    for (double& v : g.values()) v *= grid.step(k);
    grad.steps.push_back(std::move(g));
  }
  return grad;
}

SolveResult solve_emsa(const ControlledDynamics& dyn, const TimeGrid& grid, const AttributeOracle& oracle,
                       const TargetSpec& target, const SolverConfig& cfg, const Matrix& x_init) {
  cfg.validate();
  target.check_compatible(oracle);
  grid.validate();
  if (x_init.cols() != dyn.state_dim()) throw std::invalid_argument("solve_emsa: state dimension mismatch");
  const auto run_start = std::chrono::steady_clock::now();
  const std::size_t steps = grid.steps();
  const double xi = cfg.xi;
  const double eta = cfg.eta();

  SolveResult result;
  result.control = ControlTrajectory::zeros(steps, x_init.rows(), x_init.cols());
  result.report.config = to_json(cfg);
  ControlTrajectory& u = result.control;

  StateTrajectory traj;
  double previous = 0.0;
  for (std::size_t iter = 1; iter <= cfg.max_iters; ++iter) {
    IterationRecord rec;
    rec.iteration = iter;

    auto t0 = std::chrono::steady_clock::now();
    traj = rollout(dyn, grid, x_init, u);
    TerminalAdjoint ta = terminal_adjoint(dyn, grid, oracle, target, cfg.estimator, traj.back());
    rec.terminal_cost = ta.cost;
    rec.control_energy = 0.5 * cfg.rho * u.squared_norm_integral(grid);
    rec.total_cost = rec.terminal_cost + rec.control_energy;
    if (!std::isfinite(rec.total_cost)) throw NonFiniteError("non-finite total cost", iter, steps);
    if (!ta.adjoint.all_finite()) throw NonFiniteError("non-finite terminal adjoint", iter, steps);
    rec.forward_seconds = seconds_since(t0);

    t0 = std::chrono::steady_clock::now();
    Matrix n = std::move(ta.adjoint);
    for (std::size_t k = steps; k-- > 0;) {
      u.steps[k] = control_update(u.steps[k], n, xi, eta, cfg.u_max);
      if (k == 0) break;
      const Matrix vjp = dyn.vjp_batch(traj[k], grid.nodes[k], n);
      axpy(grid.step(k), vjp.values(), n.values());
      if (!n.all_finite()) throw NonFiniteError("non-finite adjoint", iter, k);
    }
    rec.backward_seconds = seconds_since(t0);
    result.report.iterations.push_back(rec);

    if (iter > 1 && std::abs(rec.total_cost - previous) / std::max(std::abs(previous), 1e-8) < cfg.tol) {
      result.report.converged = true;
      break;
    }
    previous = rec.total_cost;
  }

  const auto t0 = std::chrono::steady_clock::now();
  traj = rollout(dyn, grid, x_init, u);
  result.final_state = traj.back();
  result.samples = dyn.terminal_sample(result.final_state, grid.horizon());
  result.report.final_cost.terminal =
      terminal_cost(oracle, result.samples, target, cfg.estimator, false).value;
  result.report.final_cost.energy = 0.5 * cfg.rho * u.squared_norm_integral(grid);
  result.report.final_cost.total = result.report.final_cost.terminal + result.report.final_cost.energy;
  result.report.final_forward_seconds = seconds_since(t0);
  result.report.total_seconds = seconds_since(run_start);
  return result;
}

Matrix vanilla_sample(const ControlledDynamics& dyn, const TimeGrid& grid, const Matrix& x_init) {
  return rollout(dyn, grid, x_init, ControlTrajectory::zeros(grid.steps(), x_init.rows(), x_init.cols())).back();
}

Matrix particle_guidance_sample(const ControlledDynamics& dyn, const TimeGrid& grid, const AttributeOracle& oracle,
                                const TargetSpec& target, double weight, const Matrix& x_init,
                                JointEstimator estimator) {
  if (!(weight >= 0.0)) throw std::invalid_argument("guidance weight must be >= 0");
  target.check_compatible(oracle);
  Matrix x = x_init;
  for (std::size_t k = 0; k < grid.steps(); ++k) {
    const double t = grid.nodes[k];
    Matrix guidance(x.rows(), x.cols());
    if (weight > 0.0) {
      const Matrix x_hat = dyn.tweedie_batch(x, t);
      const TerminalCost tc = terminal_cost(oracle, x_hat, target, estimator);
      guidance = dyn.tweedie_vjp_batch(x, t, tc.gradient);
      const double scale = -weight * dyn.guidance_weight(t);
      for (double& v : guidance.values()) v *= scale;
      if (!guidance.all_finite()) throw NonFiniteError("non-finite guidance gradient", 0, k);
    }
    Matrix next = x;
    axpy(grid.step(k), dyn.drift_batch(x, guidance, t).values(), next.values());
    if (!next.all_finite()) throw NonFiniteError("non-finite state in guided sampling", 0, k + 1);
    x = std::move(next);
  }
  return x;
}

}  // namespace attralign
