#pragma once

#include <cmath>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "attralign/diffnet.hpp"
#include "attralign/numerics.hpp"

namespace attralign {

struct MixtureComponent {
  double weight = 0.0;
  Vector mean;
  double stddev = 1.0;
  /// Class index of this component on each attribute axis.
  std::map<std::string, std::size_t> attrs;
};

/// Isotropic Gaussian mixture in R^n with per-component attribute labels.
struct MixtureSpec {
  std::vector<MixtureComponent> components;

  std::size_t dim() const;
  /// Axis names, sorted. Every component carries every axis.
  std::vector<std::string> axes() const;
  std::size_t class_count(const std::string& axis) const;
  /// Throws std::invalid_argument when weights do not sum to 1, a stddev is
  /// not positive, dimensions disagree, or an axis label is missing.
  void validate() const;

  /// Draws `count` points; optionally reports the component of each draw.
  Matrix sample(Rng& rng, std::size_t count, std::vector<std::size_t>* component_out = nullptr) const;
  /// Component weights rescaled so the class marginal on `axis` equals `target`.
  MixtureSpec reweighted(const std::string& axis, std::span<const double> target) const;
  /// Mean of the component means carrying `cls` on `axis`.
  Vector class_center(const std::string& axis, std::size_t cls) const;
};

/// Components evenly spaced on a circle; axis "class" is the component index.
MixtureSpec circle_mixture(std::span<const double> weights, double radius = 4.0, double stddev = 0.5);
/// Four components at 45/135/225/315 degrees. Axis "x_half" is 0 for
/// mean-x > 0 and 1 otherwise; axis "y_half" likewise for mean-y.
MixtureSpec two_axis_mixture(std::span<const double> weights, double radius = 4.0, double stddev = 0.5);

nlohmann::json to_json(const MixtureSpec& mixture);
MixtureSpec mixture_from_json(const nlohmann::json& doc);
MixtureSpec read_mixture_file(const std::filesystem::path& path);
void write_mixture_file(const std::filesystem::path& path, const MixtureSpec& mixture);

/// Noising of the form x_t = signal * x0 + noise * eps with eps ~ N(0, I).
struct AffineNoising {
  double signal = 1.0;
  double noise = 0.0;
};

/// Posterior quantities of a mixture under affine noising:
///   score    = grad_x log p_t(x)
///   noise    = E[eps | x_t]
///   clean    = E[x0 | x_t]
///   velocity = E[eps - x0 | x_t]
enum class PosteriorHead { score, noise, clean, velocity };

Vector mixture_posterior(const MixtureSpec& mixture, std::span<const double> x, AffineNoising noising,
                         PosteriorHead head);
/// J^T v where J is the Jacobian of mixture_posterior with respect to x.
Vector mixture_posterior_vjp(const MixtureSpec& mixture, std::span<const double> x, AffineNoising noising,
                             PosteriorHead head, std::span<const double> v);
/// log p_t(x), evaluated directly from the mixture density.
double mixture_log_density(const MixtureSpec& mixture, std::span<const double> x, AffineNoising noising);

/// grad_x log sum_j w_j N(x; mu_j, (s_j^2 + sigma^2) I).
Vector analytic_score(const MixtureSpec& mixture, std::span<const double> x, double sigma);

enum class ModelKind { analytic_score, learned_score, learned_noise, learned_velocity };

std::string to_string(ModelKind kind);

/// Learned score and noise heads see log(sigma) / 4 as their time input.
double noise_conditioning(double sigma);

/// The pretrained dynamics the sampler integrates. Each head is expressed in
/// its paradigm's native variable:
///   score(x, sigma)      variance-exploding noise level sigma
///   noise(x_t, sigma)    DDIM input x_t = sqrt(alpha) x0 + sqrt(1 - alpha) eps,
///                        sigma = sqrt((1 - alpha) / alpha)
///   velocity(x, t)       flow time t, data at t = 0 and noise at t = 1;
///                        regresses (x1 - x0) along x_t = (1 - t) x0 + t x1
/// An analytic model answers all three heads exactly; a learned model only
/// the head it was trained for.
class GenerativeModel {
 public:
  static GenerativeModel analytic(MixtureSpec mixture);
  /// Learned score model s(x, sigma) = net(c_in x, log(sigma)/4) / sigma with
  /// c_in = 1 / sqrt(sigma^2 + sigma_data^2).
  static GenerativeModel learned_score(MlpNet net, double sigma_data);
  static GenerativeModel learned_noise(MlpNet net);
  static GenerativeModel learned_velocity(MlpNet net);
  /// Builds the learned model matching the checkpoint's head kind.
  static GenerativeModel from_checkpoint(const Checkpoint& checkpoint);

  ModelKind kind() const { return kind_; }
  std::size_t state_dim() const;
  const std::optional<MlpNet>& net() const { return net_; }
  const std::optional<MixtureSpec>& mixture() const { return mixture_; }
  double sigma_data() const { return sigma_data_; }

  Matrix score_batch(const Matrix& x, double sigma) const;
  Matrix score_vjp_batch(const Matrix& x, double sigma, const Matrix& v) const;
  Matrix noise_batch(const Matrix& x_t, double sigma) const;
  Matrix noise_vjp_batch(const Matrix& x_t, double sigma, const Matrix& v) const;
  Matrix velocity_batch(const Matrix& x, double t) const;
  Matrix velocity_vjp_batch(const Matrix& x, double t, const Matrix& v) const;

  Vector score(std::span<const double> x, double sigma) const;

 private:
  ModelKind kind_ = ModelKind::analytic_score;
  std::optional<MlpNet> net_;
  std::optional<MixtureSpec> mixture_;
  double sigma_data_ = 1.0;
};

class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainConfig {
  std::size_t steps = 4000;
  std::size_t batch = 256;
  AdamConfig adam;
  double sigma_min = 0.02;  // score training: log-uniform noise levels
  double sigma_max = 10.0;
  std::size_t ddim_levels = 100;  // noise training: linear alpha-bar schedule
  double alpha_bar_max = 0.9999;
  double alpha_bar_min = 0.01;
};

struct TrainResult {
  MlpNet net;
  double final_loss = 0.0;  // mean over the last min(100, steps) steps
  std::vector<double> losses;
};

/// Linear alpha-bar schedule from alpha_bar_max down to alpha_bar_min.
std::vector<double> ddim_alpha_bars(std::size_t levels, double alpha_bar_max, double alpha_bar_min);
inline double ddim_sigma(double alpha_bar) { return std::sqrt((1.0 - alpha_bar) / alpha_bar); }

/// Denoising score matching, weight sigma^2, sigma log-uniform on
/// [sigma_min, sigma_max]. With the model's 1/sigma output scaling the loss is
/// || net(c_in (x + sigma eps), log(sigma)/4) + eps ||^2.
TrainResult train_score_dsm(MlpNet net, const MixtureSpec& data, double sigma_data, const TrainConfig& cfg,
                            Rng& rng);
/// || net(x_t, log(sigma)/4) - eps ||^2 over uniformly drawn discrete levels.
TrainResult train_noise_pred(MlpNet net, const MixtureSpec& data, const TrainConfig& cfg, Rng& rng);
/// || net(x_t, t) - (x1 - x0) ||^2 with x_t = (1 - t) x0 + t x1, t ~ U[0, 1].
TrainResult train_velocity_fm(MlpNet net, const MixtureSpec& data, const TrainConfig& cfg, Rng& rng);

}  // namespace attralign
