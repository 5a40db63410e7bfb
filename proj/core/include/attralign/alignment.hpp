#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "attralign/diffnet.hpp"
#include "attralign/generative.hpp"
#include "attralign/numerics.hpp"

namespace attralign {

struct AttributeAxis {
  std::string name;
  std::size_t classes = 0;

  friend bool operator==(const AttributeAxis&, const AttributeAxis&) = default;
};

enum class OracleKind { analytic_rbf, learned_classifier };

std::string to_string(OracleKind kind);

inline constexpr double kDefaultTemperature = 1.0;

/// Differentiable map from a sample to one logit vector per attribute axis.
///   analytic_rbf   logit_j = -||x - mu_j||^2 / (2 tau^2)
///   learned        an MlpNet (no time input) per axis
class AttributeOracle {
 public:
  /// centers[a] holds one row per class of axis a.
  static AttributeOracle analytic_rbf(std::vector<std::string> names, std::vector<Matrix> centers,
                                      double temperature = kDefaultTemperature);
  /// Class centers taken from the mixture's components, one axis per mixture axis.
  static AttributeOracle analytic_from_mixture(const MixtureSpec& mixture, double temperature = kDefaultTemperature);
  static AttributeOracle learned(std::vector<std::string> names, std::vector<MlpNet> nets);

  OracleKind kind() const { return kind_; }
  const std::vector<AttributeAxis>& axes() const { return axes_; }
  std::size_t axis_count() const { return axes_.size(); }
  std::size_t axis_index(const std::string& name) const;
  std::size_t state_dim() const { return state_dim_; }
  double temperature() const { return temperature_; }
  const std::vector<Matrix>& centers() const { return centers_; }
  const std::vector<MlpNet>& nets() const { return nets_; }

  Vector logits(std::size_t axis, std::span<const double> x) const;
  /// M x o_axis.
  Matrix logits_batch(std::size_t axis, const Matrix& x) const;
  /// Row-wise J^T v with J = d logits / d x; v is M x o_axis, result M x n.
  Matrix logits_vjp_batch(std::size_t axis, const Matrix& x, const Matrix& v) const;
  /// Row-wise softmax of the logits.
  Matrix probabilities_batch(std::size_t axis, const Matrix& x) const;
  std::vector<std::size_t> hard_labels(std::size_t axis, const Matrix& x) const;

 private:
  OracleKind kind_ = OracleKind::analytic_rbf;
  std::vector<AttributeAxis> axes_;
  std::size_t state_dim_ = 0;
  double temperature_ = kDefaultTemperature;
  std::vector<Matrix> centers_;
  std::vector<MlpNet> nets_;
};

nlohmann::json to_json(const AttributeOracle& oracle);
AttributeOracle oracle_from_json(const nlohmann::json& doc);
void write_oracle_file(const std::filesystem::path& path, const AttributeOracle& oracle);
AttributeOracle read_oracle_file(const std::filesystem::path& path);

/// Row-wise softmax.
Matrix batch_softmax(const Matrix& logits);

/// Mean over the batch of per-sample softmax probabilities.
Vector empirical_distribution(const AttributeOracle& oracle, std::size_t axis, const Matrix& x);

/// How the joint attribute distribution is estimated from per-axis softmaxes.
///   sample_product    mean over samples of the per-sample product of axes
///   marginal_product  product of the batch-mean marginals
enum class JointEstimator { sample_product, marginal_product };

std::string to_string(JointEstimator estimator);
JointEstimator joint_estimator_from_string(const std::string& name);

/// Joint classes are flattened row-major over the axes (first axis slowest).
std::size_t joint_class_count(std::span<const AttributeAxis> axes);
/// Mean of per-row outer products of the per-axis probability matrices.
Vector sample_product_distribution(std::span<const Matrix> probabilities);
Vector product_distribution(std::span<const Vector> marginals);
/// Per-axis marginals of a flattened joint distribution.
std::vector<Vector> joint_marginals(std::span<const double> joint, std::span<const AttributeAxis> axes);

struct TargetSpec {
  std::vector<AttributeAxis> axes;
  std::vector<Vector> probs;
  bool joint = false;

  /// Throws std::invalid_argument unless every axis carries a valid distribution.
  void validate() const;
  /// Product of the per-axis targets.
  Vector joint_probs() const;
  std::size_t axis_index(const std::string& name) const;
  /// Throws std::invalid_argument when axes or class counts disagree with the oracle.
  void check_compatible(const AttributeOracle& oracle) const;

  static TargetSpec single(std::string name, Vector probs);
};

/// Named presets over o classes: "uniform", "zigzag" (even-indexed classes get
/// twice the mass of odd-indexed ones), "gaussian" (bell curve over the class
/// index, centered, stddev o/4).
Vector preset_distribution(const std::string& name, std::size_t classes);

nlohmann::json to_json(const TargetSpec& target);
TargetSpec target_from_json(const nlohmann::json& doc);
TargetSpec read_target_file(const std::filesystem::path& path);

/// Floor inside every p log p so that 0 log 0 = 0.
inline constexpr double kProbabilityFloor = 1e-12;

/// sum_j p_j log(p_j / q_j). Throws std::invalid_argument (advising target
/// smoothing) when q_j = 0 where p_j > 0.
double kl_divergence(std::span<const double> p, std::span<const double> q);
double entropy(std::span<const double> p);
/// sum_i KL(p_i || q_i) + sum_i H(p_i) - H(p_joint).
double joint_kl_decomposition(std::span<const Vector> marginals, std::span<const double> joint,
                              std::span<const Vector> targets);

struct TerminalCost {
  double value = 0.0;
  /// d value / d X, M x n. Empty when not requested.
  Matrix gradient;
  std::vector<Vector> marginals;
  /// Joint estimate; filled in joint mode only.
  Vector joint;
};

/// Reverse KL of the batch attribute estimate against the target. Separate
/// axes contribute sum_i KL(p_i || q_i); joint mode compares the joint
/// estimate with the product target.
TerminalCost terminal_cost(const AttributeOracle& oracle, const Matrix& x, const TargetSpec& target,
                           JointEstimator estimator = JointEstimator::sample_product, bool with_gradient = true);

struct DistributionMetrics {
  double tv = 0.0;
  double js = 0.0;
  double chi2 = 0.0;
  double kl = 0.0;
};

/// TV = 1/2 sum |P - Q|; JS with natural logs; chi2 = 1/2 sum (P - Q)^2 / (P + Q);
/// KL(P || Q) with the probability floor on both sides, so it stays finite.
DistributionMetrics compare_distributions(std::span<const double> p, std::span<const double> q);
nlohmann::json to_json(const DistributionMetrics& m);
/// Conventions behind compare_distributions, for run reports.
nlohmann::json metric_conventions();

/// ||target - mean_probs||_2.
double fairness_discrepancy(std::span<const double> mean_probs, std::span<const double> target);
/// Soft discrepancy of a batch: joint vectors in joint mode, otherwise the
/// per-axis differences stacked into one vector.
double fairness_discrepancy(const AttributeOracle& oracle, const Matrix& x, const TargetSpec& target,
                            JointEstimator estimator = JointEstimator::sample_product);

/// Squared 2-Wasserstein distance between Gaussians fitted to the two sample
/// sets. Negative eigenvalues of intermediate matrices are clamped to 0 with a
/// warning on stderr; `clamped` reports whether that happened.
double frechet_proxy(const Matrix& samples, const Matrix& reference, bool* clamped = nullptr);

/// Argmax-label histograms of a batch, used for evaluation.
struct AttributeEvaluation {
  std::vector<Vector> histograms;
  std::vector<DistributionMetrics> axis_metrics;
  Vector joint_histogram;
  std::optional<DistributionMetrics> joint_metrics;
  double fairness_discrepancy = 0.0;
};

Vector joint_hard_histogram(const AttributeOracle& oracle, const Matrix& x);
AttributeEvaluation evaluate_attributes(const AttributeOracle& oracle, const Matrix& x, const TargetSpec& target,
                                        JointEstimator estimator = JointEstimator::sample_product);
nlohmann::json to_json(const AttributeEvaluation& eval, const TargetSpec& target);

struct ClassifierConfig {
  std::vector<std::size_t> hidden{32, 32};
  std::size_t steps = 2000;
  std::size_t batch = 256;
  AdamConfig adam;
  /// Mass spread uniformly over all classes in the training targets. Keeps
  /// logit gaps bounded so the oracle's input gradients do not vanish.
  double label_smoothing = 0.1;
};

struct ClassifierResult {
  AttributeOracle oracle;
  std::vector<double> final_losses;  // per axis, mean cross-entropy over the last min(100, steps) steps
};

/// Cross-entropy training of one classifier per mixture axis on fresh draws.
ClassifierResult train_classifier(const MixtureSpec& mixture, const ClassifierConfig& cfg, Rng& rng);
/// Fraction of rows whose argmax label equals `labels`.
double oracle_accuracy(const AttributeOracle& oracle, std::size_t axis, const Matrix& x,
                       std::span<const std::size_t> labels);
/// Per-draw labels on `axis` for components drawn from `mixture`.
std::vector<std::size_t> component_labels(const MixtureSpec& mixture, const std::string& axis,
                                          std::span<const std::size_t> components);

}  // namespace attralign
