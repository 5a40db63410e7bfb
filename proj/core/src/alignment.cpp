#include "attralign/alignment.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <numeric>
#include <stdexcept>

#include <Eigen/Dense>

namespace attralign {

std::string to_string(OracleKind kind) {
  return kind == OracleKind::analytic_rbf ? "analytic_rbf" : "learned_classifier";
}

AttributeOracle AttributeOracle::analytic_rbf(std::vector<std::string> names, std::vector<Matrix> centers,
                                              double temperature) {
  if (names.empty() || names.size() != centers.size())
    throw std::invalid_argument("analytic_rbf: need one center matrix per axis name");
  if (!(temperature > 0.0)) throw std::invalid_argument("analytic_rbf: temperature must be positive");
  AttributeOracle o;
  o.kind_ = OracleKind::analytic_rbf;
  o.temperature_ = temperature;
  o.state_dim_ = centers.front().cols();
  for (std::size_t a = 0; a < names.size(); ++a) {
    if (centers[a].rows() < 2) throw std::invalid_argument("analytic_rbf: axis needs at least 2 classes");
    if (centers[a].cols() != o.state_dim_) throw std::invalid_argument("analytic_rbf: center dimension mismatch");
    o.axes_.push_back({names[a], centers[a].rows()});
  }
  o.centers_ = std::move(centers);
  return o;
}

AttributeOracle AttributeOracle::analytic_from_mixture(const MixtureSpec& mixture, double temperature) {
  mixture.validate();
  std::vector<std::string> names = mixture.axes();
  std::vector<Matrix> centers;
  for (const auto& axis : names) {
    std::vector<Vector> rows;
    for (std::size_t c = 0; c < mixture.class_count(axis); ++c) rows.push_back(mixture.class_center(axis, c));
    centers.push_back(Matrix::from_rows(rows));
  }
  return analytic_rbf(std::move(names), std::move(centers), temperature);
}

AttributeOracle AttributeOracle::learned(std::vector<std::string> names, std::vector<MlpNet> nets) {
  if (names.empty() || names.size() != nets.size())
    throw std::invalid_argument("learned oracle: need one network per axis name");
  AttributeOracle o;
  o.kind_ = OracleKind::learned_classifier;
  o.state_dim_ = nets.front().state_dim();
  for (std::size_t a = 0; a < names.size(); ++a) {
    if (nets[a].embedding().mode != TimeEmbeddingMode::none)
      throw std::invalid_argument("learned oracle: classifier nets take no time input");
    if (nets[a].state_dim() != o.state_dim_) throw std::invalid_argument("learned oracle: input dimension mismatch");
    o.axes_.push_back({names[a], nets[a].output_dim()});
  }
  o.nets_ = std::move(nets);
  return o;
}

std::size_t AttributeOracle::axis_index(const std::string& name) const {
  for (std::size_t a = 0; a < axes_.size(); ++a)
    if (axes_[a].name == name) return a;
  throw std::invalid_argument("oracle has no axis '" + name + "'");
}

Matrix AttributeOracle::logits_batch(std::size_t axis, const Matrix& x) const {
  if (x.cols() != state_dim_) throw std::invalid_argument("oracle logits: state dimension mismatch");
  if (kind_ == OracleKind::learned_classifier) return nets_.at(axis).forward_batch(x, 0.0);
  const Matrix& mu = centers_.at(axis);
  const double scale = 1.0 / (2.0 * temperature_ * temperature_);
  Matrix out(x.rows(), mu.rows());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const auto xi = x.row(i);
    for (std::size_t j = 0; j < mu.rows(); ++j) {
      const auto mj = mu.row(j);
      double d2 = 0.0;
      for (std::size_t d = 0; d < xi.size(); ++d) d2 += (xi[d] - mj[d]) * (xi[d] - mj[d]);
      out(i, j) = -d2 * scale;
    }
  }
  return out;
}

Vector AttributeOracle::logits(std::size_t axis, std::span<const double> x) const {
  return logits_batch(axis, Matrix(1, x.size(), Vector(x.begin(), x.end()))).data();
}

Matrix AttributeOracle::logits_vjp_batch(std::size_t axis, const Matrix& x, const Matrix& v) const {
  if (x.cols() != state_dim_ || v.rows() != x.rows() || v.cols() != axes_.at(axis).classes)
    throw std::invalid_argument("oracle logits_vjp: shape mismatch");
  if (kind_ == OracleKind::learned_classifier) return nets_[axis].input_vjp_batch(x, 0.0, v);
  // d logit_j / dx = -(x - mu_j) / tau^2
  const Matrix& mu = centers_[axis];
  const double inv = 1.0 / (temperature_ * temperature_);
  Matrix out(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    auto oi = out.row(i);
    const auto xi = x.row(i);
    for (std::size_t j = 0; j < mu.rows(); ++j) {
      const double w = v(i, j) * inv;
      const auto mj = mu.row(j);
      for (std::size_t d = 0; d < oi.size(); ++d) oi[d] -= w * (xi[d] - mj[d]);
    }
  }
  return out;
}

Matrix AttributeOracle::probabilities_batch(std::size_t axis, const Matrix& x) const {
  return batch_softmax(logits_batch(axis, x));
}

std::vector<std::size_t> AttributeOracle::hard_labels(std::size_t axis, const Matrix& x) const {
  const Matrix logits = logits_batch(axis, x);
  std::vector<std::size_t> labels(x.rows());
  for (std::size_t i = 0; i < x.rows(); ++i) labels[i] = argmax(logits.row(i));
  return labels;
}

nlohmann::json to_json(const AttributeOracle& oracle) {
  nlohmann::json doc;
  doc["kind"] = to_string(oracle.kind());
  doc["axes"] = nlohmann::json::array();
  for (std::size_t a = 0; a < oracle.axis_count(); ++a) {
    nlohmann::json axis{{"name", oracle.axes()[a].name}, {"classes", oracle.axes()[a].classes}};
    if (oracle.kind() == OracleKind::analytic_rbf) {
      nlohmann::json rows = nlohmann::json::array();
      const Matrix& c = oracle.centers()[a];
      for (std::size_t j = 0; j < c.rows(); ++j) rows.push_back(Vector(c.row(j).begin(), c.row(j).end()));
      axis["centers"] = rows;
    } else {
      axis["checkpoint"] = checkpoint_to_json({oracle.nets()[a], nlohmann::json::object()});
    }
    doc["axes"].push_back(axis);
  }
  if (oracle.kind() == OracleKind::analytic_rbf) doc["temperature"] = oracle.temperature();
  return doc;
}

AttributeOracle oracle_from_json(const nlohmann::json& doc) {
  const std::string kind = doc.at("kind").get<std::string>();
  std::vector<std::string> names;
  if (kind == "analytic_rbf") {
    std::vector<Matrix> centers;
    for (const auto& axis : doc.at("axes")) {
      names.push_back(axis.at("name").get<std::string>());
      centers.push_back(Matrix::from_rows(axis.at("centers").get<std::vector<Vector>>()));
    }
    return AttributeOracle::analytic_rbf(std::move(names), std::move(centers),
                                         doc.value("temperature", kDefaultTemperature));
  }
  if (kind == "learned_classifier") {
    std::vector<MlpNet> nets;
    for (const auto& axis : doc.at("axes")) {
      names.push_back(axis.at("name").get<std::string>());
      nets.push_back(checkpoint_from_json(axis.at("checkpoint")).net);
    }
    return AttributeOracle::learned(std::move(names), std::move(nets));
  }
  throw std::runtime_error("unknown oracle kind '" + kind + "'");
}

void write_oracle_file(const std::filesystem::path& path, const AttributeOracle& oracle) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << to_json(oracle).dump(1) << '\n';
}

AttributeOracle read_oracle_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open oracle file " + path.string());
  return oracle_from_json(nlohmann::json::parse(in));
}

Matrix batch_softmax(const Matrix& logits) {
  Matrix out(logits.rows(), logits.cols());
  for (std::size_t i = 0; i < logits.rows(); ++i) softmax_into(logits.row(i), out.row(i));
  return out;
}

namespace {

Vector column_mean(const Matrix& m) {
  Vector mean(m.cols(), 0.0);
  for (std::size_t i = 0; i < m.rows(); ++i) axpy(1.0, m.row(i), mean);
  for (double& v : mean) v /= static_cast<double>(m.rows());
  return mean;
}

std::vector<std::size_t> class_counts(std::span<const AttributeAxis> axes) {
  std::vector<std::size_t> counts;
  for (const auto& a : axes) counts.push_back(a.classes);
  return counts;
}

// Row-major strides of the flattened joint index.
std::vector<std::size_t> joint_strides(std::span<const std::size_t> counts) {
  std::vector<std::size_t> strides(counts.size(), 1);
  for (std::size_t a = counts.size(); a-- > 1;) strides[a - 1] = strides[a] * counts[a];
  return strides;
}

std::size_t digit(std::size_t c, std::size_t a, std::span<const std::size_t> counts,
                  std::span<const std::size_t> strides) {
  return (c / strides[a]) % counts[a];
}

void check_distribution(std::span<const double> p, const std::string& what) {
  double total = 0.0;
  for (double v : p) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw std::invalid_argument(what + ": negative or non-finite entry");
    total += v;
  }
  if (std::abs(total - 1.0) > 1e-9) throw std::invalid_argument(what + ": probabilities must sum to 1");
}

double floored_log(double p) { return std::log(std::max(p, kProbabilityFloor)); }

}  // namespace

Vector empirical_distribution(const AttributeOracle& oracle, std::size_t axis, const Matrix& x) {
  if (x.rows() == 0) throw std::invalid_argument("empirical_distribution: empty batch");
  return column_mean(oracle.probabilities_batch(axis, x));
}

std::string to_string(JointEstimator estimator) {
  return estimator == JointEstimator::sample_product ? "sample_product" : "marginal_product";
}

JointEstimator joint_estimator_from_string(const std::string& name) {
  if (name == "sample_product") return JointEstimator::sample_product;
  if (name == "marginal_product") return JointEstimator::marginal_product;
  throw std::invalid_argument("unknown joint estimator '" + name + "'");
}

std::size_t joint_class_count(std::span<const AttributeAxis> axes) {
  std::size_t total = 1;
  for (const auto& a : axes) total *= a.classes;
  return total;
}

Vector sample_product_distribution(std::span<const Matrix> probabilities) {
  if (probabilities.empty()) throw std::invalid_argument("sample_product_distribution: no axes");
  std::vector<std::size_t> counts;
  for (const auto& p : probabilities) counts.push_back(p.cols());
  const auto strides = joint_strides(counts);
  const std::size_t total = strides[0] * counts[0];
  const std::size_t rows = probabilities[0].rows();
  Vector joint(total, 0.0);
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t c = 0; c < total; ++c) {
      double prod = 1.0;
      for (std::size_t a = 0; a < counts.size(); ++a) prod *= probabilities[a](i, digit(c, a, counts, strides));
      joint[c] += prod;
    }
  }
  for (double& v : joint) v /= static_cast<double>(rows);
  return joint;
}

Vector product_distribution(std::span<const Vector> marginals) {
  std::vector<std::size_t> counts;
  for (const auto& m : marginals) counts.push_back(m.size());
  const auto strides = joint_strides(counts);
  Vector joint(strides[0] * counts[0], 1.0);
  for (std::size_t c = 0; c < joint.size(); ++c)
    for (std::size_t a = 0; a < counts.size(); ++a) joint[c] *= marginals[a][digit(c, a, counts, strides)];
  return joint;
}

std::vector<Vector> joint_marginals(std::span<const double> joint, std::span<const AttributeAxis> axes) {
  const auto counts = class_counts(axes);
  const auto strides = joint_strides(counts);
  if (joint.size() != joint_class_count(axes)) throw std::invalid_argument("joint_marginals: size mismatch");
  std::vector<Vector> out;
  for (std::size_t n : counts) out.emplace_back(n, 0.0);
  for (std::size_t c = 0; c < joint.size(); ++c)
    for (std::size_t a = 0; a < counts.size(); ++a) out[a][digit(c, a, counts, strides)] += joint[c];
  return out;
}

void TargetSpec::validate() const {
  if (axes.empty() || axes.size() != probs.size()) throw std::invalid_argument("target: need one distribution per axis");
  for (std::size_t a = 0; a < axes.size(); ++a) {
    if (probs[a].size() != axes[a].classes || axes[a].classes < 2)
      throw std::invalid_argument("target axis '" + axes[a].name + "': class count mismatch");
    check_distribution(probs[a], "target axis '" + axes[a].name + "'");
  }
}

Vector TargetSpec::joint_probs() const { return product_distribution(probs); }

std::size_t TargetSpec::axis_index(const std::string& name) const {
  for (std::size_t a = 0; a < axes.size(); ++a)
    if (axes[a].name == name) return a;
  throw std::invalid_argument("target has no axis '" + name + "'");
}

void TargetSpec::check_compatible(const AttributeOracle& oracle) const {
  validate();
  if (axes != oracle.axes()) {
    std::string have;
    for (const auto& a : oracle.axes()) have += " " + a.name + "(" + std::to_string(a.classes) + ")";
    throw std::invalid_argument("target axes do not match the oracle axes:" + have);
  }
}

TargetSpec TargetSpec::single(std::string name, Vector probs) {
  TargetSpec t;
  t.axes.push_back({std::move(name), probs.size()});
  t.probs.push_back(std::move(probs));
  t.validate();
  return t;
}

Vector preset_distribution(const std::string& name, std::size_t classes) {
  if (classes < 2) throw std::invalid_argument("preset needs at least 2 classes");
  Vector w(classes, 1.0);
  if (name == "zigzag") {
    for (std::size_t j = 0; j < classes; ++j) w[j] = (j % 2 == 0) ? 2.0 : 1.0;
  } else if (name == "gaussian") {
    const double center = 0.5 * static_cast<double>(classes - 1);
    const double sd = static_cast<double>(classes) / 4.0;
    for (std::size_t j = 0; j < classes; ++j) {
      const double z = (static_cast<double>(j) - center) / sd;
      w[j] = std::exp(-0.5 * z * z);
    }
  } else if (name != "uniform") {
    throw std::invalid_argument("unknown target preset '" + name + "'");
  }
  const double total = std::accumulate(w.begin(), w.end(), 0.0);
  for (double& v : w) v /= total;
  return w;
}

nlohmann::json to_json(const TargetSpec& target) {
  nlohmann::json doc{{"joint", target.joint}, {"axes", nlohmann::json::array()}};
  for (std::size_t a = 0; a < target.axes.size(); ++a)
    doc["axes"].push_back({{"name", target.axes[a].name}, {"classes", target.axes[a].classes}, {"probs", target.probs[a]}});
  return doc;
}

TargetSpec target_from_json(const nlohmann::json& doc) {
  TargetSpec t;
  t.joint = doc.value("joint", false);
  for (const auto& axis : doc.at("axes")) {
    const std::string name = axis.at("name").get<std::string>();
    Vector probs;
    if (axis.contains("probs")) {
      probs = axis.at("probs").get<Vector>();
    } else if (axis.contains("preset")) {
      probs = preset_distribution(axis.at("preset").get<std::string>(), axis.at("classes").get<std::size_t>());
    } else {
      throw std::invalid_argument("target axis '" + name + "' needs probs or preset");
    }
    const std::size_t classes = axis.value("classes", probs.size());
    t.axes.push_back({name, classes});
    t.probs.push_back(std::move(probs));
  }
  t.validate();
  return t;
}

TargetSpec read_target_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open target file " + path.string());
  return target_from_json(nlohmann::json::parse(in));
}

double kl_divergence(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw std::invalid_argument("kl_divergence: support mismatch");
  double total = 0.0;
  for (std::size_t j = 0; j < p.size(); ++j) {
    if (p[j] <= 0.0) continue;
    if (q[j] <= 0.0)
      throw std::invalid_argument("target assigns zero mass to class " + std::to_string(j) +
                                  " where the estimate is positive; the KL cost is infinite. Smooth the target "
                                  "(mix in a small uniform component) so every entry is positive.");
    total += p[j] * (floored_log(p[j]) - std::log(q[j]));
  }
  return total;
}

double entropy(std::span<const double> p) {
  double h = 0.0;
  for (double v : p) h -= v * floored_log(v);
  return h;
}

double joint_kl_decomposition(std::span<const Vector> marginals, std::span<const double> joint,
                              std::span<const Vector> targets) {
  if (marginals.size() != targets.size()) throw std::invalid_argument("joint_kl_decomposition: axis count mismatch");
  double total = -entropy(joint);
  for (std::size_t a = 0; a < marginals.size(); ++a)
    total += kl_divergence(marginals[a], targets[a]) + entropy(marginals[a]);
  return total;
}

TerminalCost terminal_cost(const AttributeOracle& oracle, const Matrix& x, const TargetSpec& target,
                           JointEstimator estimator, bool with_gradient) {
  target.check_compatible(oracle);
  const std::size_t rows = x.rows();
  if (rows == 0) throw std::invalid_argument("terminal_cost: empty batch");
  const std::size_t naxes = oracle.axis_count();
  const double inv_m = 1.0 / static_cast<double>(rows);

  TerminalCost out;
  std::vector<Matrix> probs;
  for (std::size_t a = 0; a < naxes; ++a) {
    probs.push_back(oracle.probabilities_batch(a, x));
    out.marginals.push_back(column_mean(probs.back()));
  }

  // Cotangent of the cost with respect to each sample's per-axis probabilities.
  std::vector<Matrix> cot;
  for (std::size_t a = 0; a < naxes; ++a) cot.emplace_back(rows, oracle.axes()[a].classes);

  if (!target.joint) {
    for (std::size_t a = 0; a < naxes; ++a) {
      out.value += kl_divergence(out.marginals[a], target.probs[a]);
      if (!with_gradient) continue;
      for (std::size_t j = 0; j < cot[a].cols(); ++j) {
        const double g = (floored_log(out.marginals[a][j]) - std::log(target.probs[a][j]) + 1.0) * inv_m;
        for (std::size_t i = 0; i < rows; ++i) cot[a](i, j) = g;
      }
    }
  } else {
    const auto counts = class_counts(oracle.axes());
    const auto strides = joint_strides(counts);
    const Vector q = target.joint_probs();
    out.joint = estimator == JointEstimator::sample_product ? sample_product_distribution(probs)
                                                            : product_distribution(out.marginals);
    out.value = kl_divergence(out.joint, q);
    if (with_gradient) {
      Vector g(q.size());
      for (std::size_t c = 0; c < q.size(); ++c) g[c] = floored_log(out.joint[c]) - std::log(q[c]) + 1.0;
      for (std::size_t a = 0; a < naxes; ++a) {
        for (std::size_t i = 0; i < rows; ++i) {
          // Same factor for every row under the marginal product; computed once below.
          if (estimator == JointEstimator::marginal_product && i > 0) {
            for (std::size_t j = 0; j < counts[a]; ++j) cot[a](i, j) = cot[a](0, j);
            continue;
          }
          for (std::size_t c = 0; c < q.size(); ++c) {
            double others = 1.0;
            for (std::size_t b = 0; b < naxes; ++b) {
              if (b == a) continue;
              const std::size_t cb = digit(c, b, counts, strides);
              others *= estimator == JointEstimator::sample_product ? probs[b](i, cb) : out.marginals[b][cb];
            }
            cot[a](i, digit(c, a, counts, strides)) += g[c] * others * inv_m;
          }
        }
      }
    }
  }
  if (!std::isfinite(out.value)) throw std::runtime_error("terminal cost is not finite");
  if (!with_gradient) return out;

  out.gradient = Matrix(rows, x.cols());
  for (std::size_t a = 0; a < naxes; ++a) {
    // Softmax Jacobian: dlogit = pi * (c - pi . c).
    Matrix w(rows, cot[a].cols());
    for (std::size_t i = 0; i < rows; ++i) {
      const auto pi = probs[a].row(i);
      const auto ci = cot[a].row(i);
      const double mean = dot(pi, ci);
      for (std::size_t j = 0; j < pi.size(); ++j) w(i, j) = pi[j] * (ci[j] - mean);
    }
    const Matrix gx = oracle.logits_vjp_batch(a, x, w);
    axpy(1.0, gx.values(), out.gradient.values());
  }
  return out;
}

DistributionMetrics compare_distributions(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw std::invalid_argument("compare_distributions: support mismatch");
  DistributionMetrics m;
  for (std::size_t j = 0; j < p.size(); ++j) {
    const double diff = p[j] - q[j];
    const double sum = p[j] + q[j];
    m.tv += 0.5 * std::abs(diff);
    if (sum > 0.0) m.chi2 += 0.5 * diff * diff / sum;
    const double mid = 0.5 * sum;
    if (p[j] > 0.0) m.js += 0.5 * p[j] * std::log(p[j] / mid);
    if (q[j] > 0.0) m.js += 0.5 * q[j] * std::log(q[j] / mid);
    if (p[j] > 0.0) m.kl += p[j] * (floored_log(p[j]) - floored_log(q[j]));
  }
  return m;
}

nlohmann::json to_json(const DistributionMetrics& m) {
  return {{"tv", m.tv}, {"js", m.js}, {"chi2", m.chi2}, {"kl", m.kl}};
}

nlohmann::json metric_conventions() {
  return {{"tv", "0.5 * sum |P - Q|"},
          {"js", "natural log"},
          {"chi2", "symmetric, 0.5 * sum (P - Q)^2 / (P + Q)"},
          {"kl", "KL(P || Q), probabilities floored at 1e-12"},
          {"histograms", "argmax labels"},
          {"fd", "||target - mean softmax||_2"}};
}

double fairness_discrepancy(std::span<const double> mean_probs, std::span<const double> target) {
  if (mean_probs.size() != target.size()) throw std::invalid_argument("fairness_discrepancy: support mismatch");
  double s = 0.0;
  for (std::size_t j = 0; j < target.size(); ++j) s += (target[j] - mean_probs[j]) * (target[j] - mean_probs[j]);
  return std::sqrt(s);
}

double fairness_discrepancy(const AttributeOracle& oracle, const Matrix& x, const TargetSpec& target,
                            JointEstimator estimator) {
  target.check_compatible(oracle);
  std::vector<Matrix> probs;
  std::vector<Vector> marginals;
  for (std::size_t a = 0; a < oracle.axis_count(); ++a) {
    probs.push_back(oracle.probabilities_batch(a, x));
    marginals.push_back(column_mean(probs.back()));
  }
  if (target.joint) {
    const Vector joint = estimator == JointEstimator::sample_product ? sample_product_distribution(probs)
                                                                      : product_distribution(marginals);
    return fairness_discrepancy(joint, target.joint_probs());
  }
  double s = 0.0;
  for (std::size_t a = 0; a < marginals.size(); ++a) {
    const double d = fairness_discrepancy(marginals[a], target.probs[a]);
    s += d * d;
  }
  return std::sqrt(s);
}

namespace {

// Symmetric square root with negative eigenvalues clamped to zero.
Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m, bool& clamped) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
  Eigen::VectorXd ev = es.eigenvalues();
  const double scale = std::max(1.0, ev.cwiseAbs().maxCoeff());
  for (Eigen::Index i = 0; i < ev.size(); ++i) {
    if (ev[i] < -1e-10 * scale) clamped = true;
    ev[i] = std::sqrt(std::max(ev[i], 0.0));
  }
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

Eigen::MatrixXd to_eigen(const Matrix& m) {
  Eigen::MatrixXd e(m.rows(), m.cols());
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) e(i, j) = m(i, j);
  return e;
}

}  // namespace

double frechet_proxy(const Matrix& samples, const Matrix& reference, bool* clamped) {
  if (samples.cols() != reference.cols()) throw std::invalid_argument("frechet_proxy: dimension mismatch");
  const GaussianFit a = fit_gaussian(samples);
  const GaussianFit b = fit_gaussian(reference);
  const Eigen::MatrixXd s1 = to_eigen(a.covariance);
  const Eigen::MatrixXd s2 = to_eigen(b.covariance);
  bool neg = false;
  const Eigen::MatrixXd r2 = psd_sqrt(s2, neg);
  const Eigen::MatrixXd inner = r2 * s1 * r2;
  const Eigen::MatrixXd cross = psd_sqrt(0.5 * (inner + inner.transpose()), neg);
  double mean_term = 0.0;
  for (std::size_t d = 0; d < a.mean.size(); ++d) mean_term += (a.mean[d] - b.mean[d]) * (a.mean[d] - b.mean[d]);
  const double value = mean_term + s1.trace() + s2.trace() - 2.0 * cross.trace();
  if (neg) std::cerr << "warning: frechet_proxy clamped negative eigenvalues of a covariance term\n";
  if (clamped) *clamped = neg;
  return std::max(value, 0.0);
}

Vector joint_hard_histogram(const AttributeOracle& oracle, const Matrix& x) {
  const auto counts = class_counts(oracle.axes());
  const auto strides = joint_strides(counts);
  std::vector<std::size_t> flat(x.rows(), 0);
  for (std::size_t a = 0; a < oracle.axis_count(); ++a) {
    const auto labels = oracle.hard_labels(a, x);
    for (std::size_t i = 0; i < labels.size(); ++i) flat[i] += labels[i] * strides[a];
  }
  return normalized_histogram(flat, joint_class_count(oracle.axes()));
}

AttributeEvaluation evaluate_attributes(const AttributeOracle& oracle, const Matrix& x, const TargetSpec& target,
                                        JointEstimator estimator) {
  target.check_compatible(oracle);
  AttributeEvaluation e;
  for (std::size_t a = 0; a < oracle.axis_count(); ++a) {
    e.histograms.push_back(normalized_histogram(oracle.hard_labels(a, x), oracle.axes()[a].classes));
    e.axis_metrics.push_back(compare_distributions(e.histograms.back(), target.probs[a]));
  }
  if (target.joint) {
    e.joint_histogram = joint_hard_histogram(oracle, x);
    e.joint_metrics = compare_distributions(e.joint_histogram, target.joint_probs());
  }
  e.fairness_discrepancy = fairness_discrepancy(oracle, x, target, estimator);
  return e;
}

nlohmann::json to_json(const AttributeEvaluation& eval, const TargetSpec& target) {
  nlohmann::json doc{{"axes", nlohmann::json::array()}, {"fd", eval.fairness_discrepancy}};
  for (std::size_t a = 0; a < eval.histograms.size(); ++a)
    doc["axes"].push_back({{"name", target.axes[a].name},
                           {"histogram", eval.histograms[a]},
                           {"target", target.probs[a]},
                           {"metrics", to_json(eval.axis_metrics[a])}});
  if (eval.joint_metrics) {
    doc["joint"] = {{"histogram", eval.joint_histogram},
                    {"target", target.joint_probs()},
                    {"metrics", to_json(*eval.joint_metrics)}};
  }
  return doc;
}

std::vector<std::size_t> component_labels(const MixtureSpec& mixture, const std::string& axis,
                                          std::span<const std::size_t> components) {
  std::vector<std::size_t> labels;
  labels.reserve(components.size());
  for (std::size_t c : components) labels.push_back(mixture.components.at(c).attrs.at(axis));
  return labels;
}

double oracle_accuracy(const AttributeOracle& oracle, std::size_t axis, const Matrix& x,
                       std::span<const std::size_t> labels) {
  if (labels.size() != x.rows() || labels.empty()) throw std::invalid_argument("oracle_accuracy: label count mismatch");
  const auto predicted = oracle.hard_labels(axis, x);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hits += predicted[i] == labels[i] ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

ClassifierResult train_classifier(const MixtureSpec& mixture, const ClassifierConfig& cfg, Rng& rng) {
  mixture.validate();
  const std::vector<std::string> names = mixture.axes();
  std::vector<MlpNet> nets;
  std::vector<double> final_losses;
  const std::size_t window = std::min<std::size_t>(100, cfg.steps);
  for (const auto& axis : names) {
    const std::size_t classes = mixture.class_count(axis);
    MlpNet net = MlpNet::make(mixture.dim(), cfg.hidden, classes, TimeEmbedding::none(), HeadKind::oracle,
                              rng.next_u64());
    AdamOptimizer opt(net, cfg.adam);
    const std::vector<double> times(cfg.batch, 0.0);
    double tail = 0.0;
    for (std::size_t step = 0; step < cfg.steps; ++step) {
      std::vector<std::size_t> comps;
      const Matrix x = mixture.sample(rng, cfg.batch, &comps);
      const auto labels = component_labels(mixture, axis, comps);
      const Matrix probs = batch_softmax(net.forward_rows(x, times));
      Matrix cot = probs;
      double loss = 0.0;
      const double off = cfg.label_smoothing / static_cast<double>(classes);
      const double on = 1.0 - cfg.label_smoothing + off;
      for (std::size_t i = 0; i < cfg.batch; ++i) {
        for (std::size_t j = 0; j < classes; ++j) {
          const double y = j == labels[i] ? on : off;
          loss -= y * floored_log(probs(i, j));
          cot(i, j) -= y;
        }
      }
      loss /= static_cast<double>(cfg.batch);
      if (!std::isfinite(loss)) throw TrainingDiverged("classifier training diverged at step " + std::to_string(step));
      for (double& v : cot.values()) v /= static_cast<double>(cfg.batch);
      opt.step(net, net.param_grad(x, times, cot));
      if (step + window >= cfg.steps) tail += loss;
    }
    final_losses.push_back(window > 0 ? tail / static_cast<double>(window) : 0.0);
    nets.push_back(std::move(net));
  }
  return {AttributeOracle::learned(names, std::move(nets)), std::move(final_losses)};
}

}  // namespace attralign
