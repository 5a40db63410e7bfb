#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "attralign/generative.hpp"
#include "attralign/numerics.hpp"

namespace attralign {

/// Raised when a state, cost, or adjoint stops being finite. `iteration` is
/// the solver iteration (0 outside the solver), `step` the time index.
class NonFiniteError : public std::runtime_error {
 public:
  NonFiniteError(const std::string& what, std::size_t iteration, std::size_t step)
      : std::runtime_error(what + " (iteration " + std::to_string(iteration) + ", step " +
                           std::to_string(step) + ")"),
        iteration_(iteration), step_(step) {}
  std::size_t iteration() const { return iteration_; }
  std::size_t step() const { return step_; }

 private:
  std::size_t iteration_;
  std::size_t step_;
};

enum class InstanceKind { edm, ddim, flow };

std::string to_string(InstanceKind kind);
InstanceKind instance_kind_from_string(const std::string& name);

/// Solver time runs forward from the Gaussian prior at t = 0 to data at
/// t = horizon(). Each instance reads its model at level = origin - t:
///   edm   noise level sigma = T - t        (origin T)
///   ddim  noise level sigma = sigma_max - t (origin sigma_max)
///   flow  flow time 1 - t                  (origin 1)
struct TimeGrid {
  InstanceKind kind = InstanceKind::edm;
  double origin = 1.0;
  std::vector<double> nodes;

  std::size_t steps() const { return nodes.size() - 1; }
  double step(std::size_t k) const { return nodes[k + 1] - nodes[k]; }
  double horizon() const { return nodes.back(); }
  double level(std::size_t k) const { return origin - nodes[k]; }
  double max_step() const;
  /// Throws std::invalid_argument unless nodes start at 0, increase strictly,
  /// and stay within [0, origin].
  void validate() const;

  static TimeGrid edm_uniform(double horizon, std::size_t steps);
  /// rho-spaced noise levels from sigma_max down to sigma_min, then 0.
  static TimeGrid edm_karras(double sigma_max, std::size_t steps, double sigma_min = 0.002, double rho = 7.0);
  /// Noise levels taken at evenly spaced indices of a training alpha-bar
  /// schedule, from the noisiest level to the cleanest.
  static TimeGrid ddim_schedule(std::span<const double> alpha_bars, std::size_t steps);
  static TimeGrid flow_uniform(std::size_t steps);
};

/// K per-step control matrices, each M x m.
struct ControlTrajectory {
  std::vector<Matrix> steps;

  static ControlTrajectory zeros(std::size_t steps, std::size_t batch, std::size_t dim);
  /// sum_k h_k ||U_k||^2, the discrete integral of the squared control norm.
  double squared_norm_integral(const TimeGrid& grid) const;
  bool all_finite() const;

  friend bool operator==(const ControlTrajectory&, const ControlTrajectory&) = default;
};

using StateTrajectory = std::vector<Matrix>;

/// A pretrained model perturbed by an additive control, dx/dt = f(x, t) + u,
/// with identity actuation (m = n).
class ControlledDynamics {
 public:
  ControlledDynamics(GenerativeModel model, InstanceKind kind, double origin);
  static ControlledDynamics for_grid(GenerativeModel model, const TimeGrid& grid);

  InstanceKind kind() const { return kind_; }
  double origin() const { return origin_; }
  std::size_t state_dim() const { return model_.state_dim(); }
  const GenerativeModel& model() const { return model_; }
  double level(double t) const { return origin_ - t; }

  /// Maps standard-normal draws to the instance's initial state
  /// (edm: T z, ddim: sqrt(1 + sigma_max^2) z, flow: z).
  Matrix initial_state(const Matrix& standard_normal) const;
  /// Factor taking the final state to the reported sample; ddim rescales
  /// x~ back to x, the others return 1.
  double terminal_scale(double t_final) const;
  Matrix terminal_sample(const Matrix& state, double t_final) const;

  /// Uncontrolled field f(X, t), row-wise.
  Matrix field_batch(const Matrix& x, double t) const;
  /// f(X, t) + U.
  Matrix drift_batch(const Matrix& x, const Matrix& u, double t) const;
  /// (df/dx)^T V per row.
  Matrix vjp_batch(const Matrix& x, double t, const Matrix& v) const;

  Vector drift(std::span<const double> x, std::span<const double> u, double t) const;
  Vector dynamics_vjp(std::span<const double> x, std::span<const double> u, double t,
                      std::span<const double> v) const;

  /// Posterior-mean clean estimate used by guidance: edm x + sigma^2 s(x, sigma),
  /// ddim x~ - sigma eps(x~ / sqrt(1 + sigma^2), sigma), flow x - s v(x, s).
  Matrix tweedie_batch(const Matrix& x, double t) const;
  Matrix tweedie_vjp_batch(const Matrix& x, double t, const Matrix& v) const;
  /// The 1/2 g(t)^2 factor multiplying a guidance gradient in solver time.
  double guidance_weight(double t) const;

 private:
  void check_time(double t) const;

  GenerativeModel model_;
  InstanceKind kind_;
  double origin_;
};

/// Explicit Euler: X_{k+1} = X_k + h_k (f(X_k, t_k) + U_k). Returns all K + 1
/// states. Throws NonFiniteError on a non-finite state.
StateTrajectory rollout(const ControlledDynamics& dyn, const TimeGrid& grid, const Matrix& x0,
                        const ControlTrajectory& u);

}  // namespace attralign
