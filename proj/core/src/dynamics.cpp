#include "attralign/dynamics.hpp"

#include <algorithm>
#include <cmath>

namespace attralign {

std::string to_string(InstanceKind kind) {
  switch (kind) {
    case InstanceKind::edm:
      return "edm";
    case InstanceKind::ddim:
      return "ddim";
    case InstanceKind::flow:
      return "flow";
  }
  return "unknown";
}

InstanceKind instance_kind_from_string(const std::string& name) {
  if (name == "edm") return InstanceKind::edm;
  if (name == "ddim") return InstanceKind::ddim;
  if (name == "flow" || name == "fm") return InstanceKind::flow;
  throw std::invalid_argument("unknown dynamics instance '" + name + "'");
}

double TimeGrid::max_step() const {
  double h = 0.0;
  for (std::size_t k = 0; k < steps(); ++k) h = std::max(h, step(k));
  return h;
}

void TimeGrid::validate() const {
  if (nodes.size() < 2) throw std::invalid_argument("time grid needs at least one step");
  if (nodes.front() != 0.0) throw std::invalid_argument("time grid must start at t = 0");
  for (std::size_t k = 0; k + 1 < nodes.size(); ++k)
    if (!(nodes[k + 1] > nodes[k])) throw std::invalid_argument("time grid must increase strictly");
  if (nodes.back() > origin * (1.0 + 1e-12)) throw std::invalid_argument("time grid runs past its origin level");
}

TimeGrid TimeGrid::edm_uniform(double horizon, std::size_t steps) {
  if (steps == 0 || !(horizon > 0.0)) throw std::invalid_argument("edm_uniform: need steps >= 1, horizon > 0");
  TimeGrid g{InstanceKind::edm, horizon, {}};
  for (std::size_t k = 0; k <= steps; ++k)
    g.nodes.push_back(horizon * static_cast<double>(k) / static_cast<double>(steps));
  g.nodes.back() = horizon;
  return g;
}

TimeGrid TimeGrid::edm_karras(double sigma_max, std::size_t steps, double sigma_min, double rho) {
  if (steps < 2) throw std::invalid_argument("edm_karras: need at least 2 steps");
  TimeGrid g{InstanceKind::edm, sigma_max, {}};
  const double hi = std::pow(sigma_max, 1.0 / rho);
  const double lo = std::pow(sigma_min, 1.0 / rho);
  for (std::size_t i = 0; i < steps; ++i) {
    const double frac = static_cast<double>(i) / static_cast<double>(steps - 1);
    const double sigma = std::pow(hi + frac * (lo - hi), rho);
    g.nodes.push_back(i == 0 ? 0.0 : sigma_max - sigma);
  }
  g.nodes.push_back(sigma_max);
  g.validate();
  return g;
}

TimeGrid TimeGrid::ddim_schedule(std::span<const double> alpha_bars, std::size_t steps) {
  const std::size_t levels = alpha_bars.size();
  if (steps == 0 || steps + 1 > levels)
    throw std::invalid_argument("ddim_schedule: steps must be in [1, levels - 1]");
  std::vector<double> sigmas;
  for (std::size_t k = 0; k <= steps; ++k) {
    const double pos = static_cast<double>(levels - 1) * (1.0 - static_cast<double>(k) / static_cast<double>(steps));
    sigmas.push_back(ddim_sigma(alpha_bars[static_cast<std::size_t>(std::llround(pos))]));
  }
  TimeGrid g{InstanceKind::ddim, sigmas.front(), {}};
  for (double s : sigmas) g.nodes.push_back(sigmas.front() - s);
  g.validate();
  return g;
}

TimeGrid TimeGrid::flow_uniform(std::size_t steps) {
  if (steps == 0) throw std::invalid_argument("flow_uniform: need steps >= 1");
  TimeGrid g{InstanceKind::flow, 1.0, {}};
  for (std::size_t k = 0; k <= steps; ++k)
    g.nodes.push_back(static_cast<double>(k) / static_cast<double>(steps));
  g.nodes.back() = 1.0;
  return g;
}

ControlTrajectory ControlTrajectory::zeros(std::size_t steps, std::size_t batch, std::size_t dim) {
  return {std::vector<Matrix>(steps, Matrix(batch, dim))};
}

double ControlTrajectory::squared_norm_integral(const TimeGrid& grid) const {
  double total = 0.0;
  for (std::size_t k = 0; k < steps.size(); ++k) total += grid.step(k) * squared_norm(steps[k].values());
  return total;
}

bool ControlTrajectory::all_finite() const {
  return std::all_of(steps.begin(), steps.end(), [](const Matrix& m) { return m.all_finite(); });
}

ControlledDynamics::ControlledDynamics(GenerativeModel model, InstanceKind kind, double origin)
    : model_(std::move(model)), kind_(kind), origin_(origin) {
  if (!(origin_ > 0.0)) throw std::invalid_argument("ControlledDynamics: origin must be positive");
  if (kind_ == InstanceKind::flow && origin_ != 1.0)
    throw std::invalid_argument("ControlledDynamics: flow instance runs on [0, 1]");
}

ControlledDynamics ControlledDynamics::for_grid(GenerativeModel model, const TimeGrid& grid) {
  return ControlledDynamics(std::move(model), grid.kind, grid.origin);
}

void ControlledDynamics::check_time(double t) const {
  if (!(t >= 0.0 && t <= origin_))
    throw std::out_of_range("time " + std::to_string(t) + " outside [0, " + std::to_string(origin_) + "]");
}

namespace {

void scale_rows(Matrix& m, double s) {
  for (double& v : m.values()) v *= s;
}

Matrix scaled(const Matrix& m, double s) {
  Matrix out = m;
  scale_rows(out, s);
  return out;
}

}  // namespace

Matrix ControlledDynamics::initial_state(const Matrix& standard_normal) const {
  switch (kind_) {
    case InstanceKind::edm:
      return scaled(standard_normal, origin_);
    case InstanceKind::ddim:
      return scaled(standard_normal, std::sqrt(1.0 + origin_ * origin_));
    case InstanceKind::flow:
      return standard_normal;
  }
  return standard_normal;
}

double ControlledDynamics::terminal_scale(double t_final) const {
  if (kind_ != InstanceKind::ddim) return 1.0;
  const double sigma = level(t_final);
  return 1.0 / std::sqrt(1.0 + sigma * sigma);
}

Matrix ControlledDynamics::terminal_sample(const Matrix& state, double t_final) const {
  const double s = terminal_scale(t_final);
  return s == 1.0 ? state : scaled(state, s);
}

Matrix ControlledDynamics::field_batch(const Matrix& x, double t) const {
  check_time(t);
  const double lv = level(t);
  switch (kind_) {
    case InstanceKind::edm: {
      Matrix s = model_.score_batch(x, lv);
      scale_rows(s, lv);
      return s;
    }
    case InstanceKind::ddim: {
      Matrix eps = model_.noise_batch(scaled(x, 1.0 / std::sqrt(1.0 + lv * lv)), lv);
      scale_rows(eps, -1.0);
      return eps;
    }
    case InstanceKind::flow: {
      Matrix v = model_.velocity_batch(x, lv);
      scale_rows(v, -1.0);
      return v;
    }
  }
  return {};
}

Matrix ControlledDynamics::drift_batch(const Matrix& x, const Matrix& u, double t) const {
  if (u.rows() != x.rows() || u.cols() != x.cols()) throw std::invalid_argument("drift: control shape mismatch");
  Matrix f = field_batch(x, t);
  axpy(1.0, u.values(), f.values());
  return f;
}

Matrix ControlledDynamics::vjp_batch(const Matrix& x, double t, const Matrix& v) const {
  check_time(t);
  if (v.rows() != x.rows() || v.cols() != x.cols()) throw std::invalid_argument("dynamics_vjp: shape mismatch");
  const double lv = level(t);
  switch (kind_) {
    case InstanceKind::edm: {
      Matrix g = model_.score_vjp_batch(x, lv, v);
      scale_rows(g, lv);
      return g;
    }
    case InstanceKind::ddim: {
      const double c = 1.0 / std::sqrt(1.0 + lv * lv);
      Matrix g = model_.noise_vjp_batch(scaled(x, c), lv, v);
      scale_rows(g, -c);
      return g;
    }
    case InstanceKind::flow: {
      Matrix g = model_.velocity_vjp_batch(x, lv, v);
      scale_rows(g, -1.0);
      return g;
    }
  }
  return {};
}

Vector ControlledDynamics::drift(std::span<const double> x, std::span<const double> u, double t) const {
  if (x.size() != state_dim() || u.size() != state_dim()) throw std::invalid_argument("drift: dimension mismatch");
  return drift_batch(Matrix(1, x.size(), Vector(x.begin(), x.end())),
                     Matrix(1, u.size(), Vector(u.begin(), u.end())), t)
      .data();
}

Vector ControlledDynamics::dynamics_vjp(std::span<const double> x, std::span<const double> /*u*/, double t,
                                        std::span<const double> v) const {
  if (x.size() != state_dim() || v.size() != state_dim())
    throw std::invalid_argument("dynamics_vjp: dimension mismatch");
  return vjp_batch(Matrix(1, x.size(), Vector(x.begin(), x.end())), t,
                   Matrix(1, v.size(), Vector(v.begin(), v.end())))
      .data();
}

Matrix ControlledDynamics::tweedie_batch(const Matrix& x, double t) const {
  check_time(t);
  const double lv = level(t);
  switch (kind_) {
    case InstanceKind::edm: {
      Matrix out = x;
      axpy(lv * lv, model_.score_batch(x, lv).values(), out.values());
      return out;
    }
    case InstanceKind::ddim: {
      Matrix out = x;
      axpy(-lv, model_.noise_batch(scaled(x, 1.0 / std::sqrt(1.0 + lv * lv)), lv).values(), out.values());
      return out;
    }
    case InstanceKind::flow: {
      Matrix out = x;
      axpy(-lv, model_.velocity_batch(x, lv).values(), out.values());
      return out;
    }
  }
  return {};
}

Matrix ControlledDynamics::tweedie_vjp_batch(const Matrix& x, double t, const Matrix& v) const {
  check_time(t);
  const double lv = level(t);
  switch (kind_) {
    case InstanceKind::edm: {
      Matrix out = v;
      axpy(lv * lv, model_.score_vjp_batch(x, lv, v).values(), out.values());
      return out;
    }
    case InstanceKind::ddim: {
      const double c = 1.0 / std::sqrt(1.0 + lv * lv);
      Matrix out = v;
      axpy(-lv * c, model_.noise_vjp_batch(scaled(x, c), lv, v).values(), out.values());
      return out;
    }
    case InstanceKind::flow: {
      Matrix out = v;
      axpy(-lv, model_.velocity_vjp_batch(x, lv, v).values(), out.values());
      return out;
    }
  }
  return {};
}

double ControlledDynamics::guidance_weight(double t) const {
  // Flow: the exact score coefficient s / (1 - s) is singular at the prior, so
  // the noise level itself is used, as for edm.
  return level(t);
}

StateTrajectory rollout(const ControlledDynamics& dyn, const TimeGrid& grid, const Matrix& x0,
                        const ControlTrajectory& u) {
  const std::size_t steps = grid.steps();
  if (u.steps.size() != steps) throw std::invalid_argument("rollout: control has wrong number of steps");
  if (x0.cols() != dyn.state_dim()) throw std::invalid_argument("rollout: state dimension mismatch");
  StateTrajectory traj;
  traj.reserve(steps + 1);
  traj.push_back(x0);
  for (std::size_t k = 0; k < steps; ++k) {
    Matrix next = traj.back();
    axpy(grid.step(k), dyn.drift_batch(traj.back(), u.steps[k], grid.nodes[k]).values(), next.values());
    if (!next.all_finite()) throw NonFiniteError("non-finite state in rollout", 0, k + 1);
    traj.push_back(std::move(next));
  }
  return traj;
}

}  // namespace attralign
