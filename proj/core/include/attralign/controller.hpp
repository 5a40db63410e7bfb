#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "attralign/alignment.hpp"
#include "attralign/dynamics.hpp"
#include "attralign/numerics.hpp"

namespace attralign {

struct SolverConfig {
  double rho = 0.1;             // control-energy weight
  double xi = 0.95;             // proximal mixing, in [0, 1)
  std::size_t max_iters = 10;
  std::size_t batch = 64;
  std::size_t steps = 40;
  std::optional<double> u_max;  // per-coordinate box; unbounded when empty
  double tol = 1e-4;            // relative change of the total cost
  std::uint64_t seed = 0;
  JointEstimator estimator = JointEstimator::sample_product;

  /// Step size (1 - xi) / rho.
  double eta() const;
  /// Proximal weight xi rho / (1 - xi).
  double gamma() const;
  /// Throws std::invalid_argument on rho < 0, xi outside [0, 1), rho = 0
  /// (eta undefined), u_max <= 0, or zero batch/steps.
  void validate() const;
};

nlohmann::json to_json(const SolverConfig& cfg);
/// Fields absent from `doc` keep the values of `defaults`.
SolverConfig solver_config_from_json(const nlohmann::json& doc, SolverConfig defaults = {});

/// Minimizer of nu . (G u) + rho/2 ||u||^2 + gamma/2 ||u - u_ref||^2 over the
/// box (or all of R^m): clamp((gamma u_ref - G^T nu) / (rho + gamma)).
/// G is n x m. Throws std::invalid_argument when rho + gamma <= 0.
Vector control_update(std::span<const double> u_ref, std::span<const double> nu, const Matrix& g, double rho,
                      double gamma, std::optional<double> u_max = std::nullopt);
/// Identity actuation, written with xi and eta: clamp(xi U_ref - eta N).
Matrix control_update(const Matrix& u_ref, const Matrix& adjoint, double xi, double eta,
                      std::optional<double> u_max = std::nullopt);
/// The u-dependent part of the proximal Hamiltonian minimized above.
double proximal_hamiltonian(std::span<const double> u, std::span<const double> u_ref, std::span<const double> nu,
                            const Matrix& g, double rho, double gamma);

/// Discrete adjoint N_k = N_{k+1} + h_k (df/dx)^T N_{k+1} for k = K-1 .. 0.
/// Returns N_0 .. N_K.
std::vector<Matrix> backward_adjoint(const ControlledDynamics& dyn, const TimeGrid& grid,
                                     const StateTrajectory& trajectory, const Matrix& terminal_adjoint);

struct CostBreakdown {
  double total = 0.0;
  double terminal = 0.0;
  double energy = 0.0;  // rho/2 sum_k h_k ||U_k||^2
};

/// Rolls out U from x_init and evaluates the discrete objective.
CostBreakdown total_cost(const ControlledDynamics& dyn, const TimeGrid& grid, const AttributeOracle& oracle,
                         const TargetSpec& target, const SolverConfig& cfg, const Matrix& x_init,
                         const ControlTrajectory& u);
/// Gradient of total_cost with respect to every control entry, assembled from
/// the discrete adjoint: h_k (N_{k+1} + rho U_k).
ControlTrajectory adjoint_gradient(const ControlledDynamics& dyn, const TimeGrid& grid,
                                   const AttributeOracle& oracle, const TargetSpec& target, const SolverConfig& cfg,
                                   const Matrix& x_init, const ControlTrajectory& u);

struct IterationRecord {
  std::size_t iteration = 0;
  double total_cost = 0.0;
  double terminal_cost = 0.0;
  double control_energy = 0.0;
  double forward_seconds = 0.0;
  double backward_seconds = 0.0;
};

struct RunReport {
  std::vector<IterationRecord> iterations;
  bool converged = false;
  CostBreakdown final_cost;
  double final_forward_seconds = 0.0;
  double total_seconds = 0.0;
  nlohmann::json config = nlohmann::json::object();
  std::string rng_identity{Rng::kIdentity};

  std::size_t iterations_run() const { return iterations.size(); }
};

struct SolveResult {
  Matrix final_state;
  /// final_state mapped to data space by the instance's terminal rescale.
  Matrix samples;
  ControlTrajectory control;
  RunReport report;
};

/// Alternates a forward Euler rollout, the terminal adjoint of the alignment
/// cost, and a backward sweep that updates U_k from N_{k+1} before stepping the
/// adjoint. Stops after cfg.max_iters or once the relative change of the total
/// cost drops below cfg.tol, then rolls out the final control.
SolveResult solve_emsa(const ControlledDynamics& dyn, const TimeGrid& grid, const AttributeOracle& oracle,
                       const TargetSpec& target, const SolverConfig& cfg, const Matrix& x_init);

/// Uncontrolled rollout; returns the terminal state.
Matrix vanilla_sample(const ControlledDynamics& dyn, const TimeGrid& grid, const Matrix& x_init);

/// Adds -weight * guidance_weight(t) * grad_x KL(p(x_hat(X)) || target) at
/// every step, where x_hat is the posterior-mean estimate. Returns the
/// terminal state.
Matrix particle_guidance_sample(const ControlledDynamics& dyn, const TimeGrid& grid, const AttributeOracle& oracle,
                                const TargetSpec& target, double weight, const Matrix& x_init,
                                JointEstimator estimator = JointEstimator::sample_product);

}  // namespace attralign
