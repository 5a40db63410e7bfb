#include "attralign/generative.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <set>

namespace attralign {

std::size_t MixtureSpec::dim() const {
  return components.empty() ? 0 : components.front().mean.size();
}

std::vector<std::string> MixtureSpec::axes() const {
  std::set<std::string> names;
  for (const auto& c : components)
    for (const auto& [axis, cls] : c.attrs) names.insert(axis);
  return {names.begin(), names.end()};
}

std::size_t MixtureSpec::class_count(const std::string& axis) const {
  std::size_t count = 0;
  for (const auto& c : components) {
    auto it = c.attrs.find(axis);
    if (it == c.attrs.end()) throw std::invalid_argument("mixture component lacks axis '" + axis + "'");
    count = std::max(count, it->second + 1);
  }
  return count;
}

void MixtureSpec::validate() const {
  if (components.empty()) throw std::invalid_argument("mixture has no components");
  const std::size_t n = dim();
  if (n == 0) throw std::invalid_argument("mixture components have empty means");
  double total = 0.0;
  const auto names = axes();
  for (std::size_t j = 0; j < components.size(); ++j) {
    const auto& c = components[j];
    if (c.mean.size() != n) throw std::invalid_argument("mixture component dimensions disagree");
    if (!(c.weight >= 0.0)) throw std::invalid_argument("mixture weight must be nonnegative");
    if (!(c.stddev > 0.0)) throw std::invalid_argument("mixture stddev must be positive");
    for (const auto& axis : names)
      if (!c.attrs.contains(axis))
        throw std::invalid_argument("mixture component " + std::to_string(j) + " lacks axis '" + axis + "'");
    total += c.weight;
  }
  if (std::abs(total - 1.0) > 1e-9) throw std::invalid_argument("mixture weights do not sum to 1");
}

Matrix MixtureSpec::sample(Rng& rng, std::size_t count, std::vector<std::size_t>* component_out) const {
  Vector weights;
  for (const auto& c : components) weights.push_back(c.weight);
  Matrix out(count, dim());
  if (component_out) component_out->assign(count, 0);
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t j = rng.categorical(weights);
    const auto& c = components[j];
    auto row = out.row(i);
    for (std::size_t d = 0; d < row.size(); ++d) row[d] = c.mean[d] + c.stddev * rng.normal();
    if (component_out) (*component_out)[i] = j;
  }
  return out;
}

MixtureSpec MixtureSpec::reweighted(const std::string& axis, std::span<const double> target) const {
  const std::size_t classes = class_count(axis);
  if (target.size() != classes) throw std::invalid_argument("reweighted: target size mismatch");
  Vector class_mass(classes, 0.0);
  for (const auto& c : components) class_mass[c.attrs.at(axis)] += c.weight;
  MixtureSpec out = *this;
  double total = 0.0;
  for (auto& c : out.components) {
    const std::size_t cls = c.attrs.at(axis);
    c.weight = class_mass[cls] > 0.0 ? c.weight / class_mass[cls] * target[cls] : 0.0;
    total += c.weight;
  }
  for (auto& c : out.components) c.weight /= total;
  return out;
}

Vector MixtureSpec::class_center(const std::string& axis, std::size_t cls) const {
  Vector center(dim(), 0.0);
  std::size_t members = 0;
  for (const auto& c : components) {
    if (c.attrs.at(axis) != cls) continue;
    axpy(1.0, c.mean, center);
    ++members;
  }
  if (members == 0) throw std::invalid_argument("class_center: no component in class");
  for (double& v : center) v /= static_cast<double>(members);
  return center;
}

MixtureSpec circle_mixture(std::span<const double> weights, double radius, double stddev) {
  MixtureSpec m;
  const std::size_t count = weights.size();
  for (std::size_t j = 0; j < count; ++j) {
    const double angle = 2.0 * std::numbers::pi * static_cast<double>(j) / static_cast<double>(count);
    m.components.push_back(
        {weights[j], {radius * std::cos(angle), radius * std::sin(angle)}, stddev, {{"class", j}}});
  }
  m.validate();
  return m;
}

MixtureSpec two_axis_mixture(std::span<const double> weights, double radius, double stddev) {
  if (weights.size() != 4) throw std::invalid_argument("two_axis_mixture: need 4 weights");
  MixtureSpec m;
  for (std::size_t j = 0; j < 4; ++j) {
    const double angle = std::numbers::pi / 4.0 + std::numbers::pi / 2.0 * static_cast<double>(j);
    const Vector mean{radius * std::cos(angle), radius * std::sin(angle)};
    m.components.push_back({weights[j],
                            mean,
                            stddev,
                            {{"x_half", mean[0] > 0.0 ? 0u : 1u}, {"y_half", mean[1] > 0.0 ? 0u : 1u}}});
  }
  m.validate();
  return m;
}

nlohmann::json to_json(const MixtureSpec& mixture) {
  nlohmann::json comps = nlohmann::json::array();
  for (const auto& c : mixture.components) {
    nlohmann::json attrs = nlohmann::json::object();
    for (const auto& [axis, cls] : c.attrs) attrs[axis] = cls;
    comps.push_back({{"weight", c.weight}, {"mean", c.mean}, {"stddev", c.stddev}, {"attrs", attrs}});
  }
  return {{"components", comps}};
}

MixtureSpec mixture_from_json(const nlohmann::json& doc) {
  MixtureSpec m;
  try {
    for (const auto& c : doc.at("components")) {
      MixtureComponent comp;
      comp.weight = c.at("weight").get<double>();
      comp.mean = c.at("mean").get<Vector>();
      comp.stddev = c.at("stddev").get<double>();
      if (c.contains("attrs"))
        for (const auto& [axis, cls] : c.at("attrs").items()) comp.attrs[axis] = cls.get<std::size_t>();
      m.components.push_back(std::move(comp));
    }
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("malformed mixture specification: ") + e.what());
  }
  // A mixture without labels gets one axis whose class is the component index.
  if (m.axes().empty())
    for (std::size_t j = 0; j < m.components.size(); ++j) m.components[j].attrs["class"] = j;
  m.validate();
  return m;
}

MixtureSpec read_mixture_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open mixture file " + path.string());
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("mixture file " + path.string() + " is not valid JSON: " + e.what());
  }
  return mixture_from_json(doc);
}

void write_mixture_file(const std::filesystem::path& path, const MixtureSpec& mixture) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write mixture file " + path.string());
  out << to_json(mixture).dump(1) << '\n';
}

namespace {

struct ComponentTerms {
  Vector log_resp;  // unnormalized
  Vector resp;      // normalized responsibilities
  double log_norm = 0.0;
};

ComponentTerms component_terms(const MixtureSpec& mixture, std::span<const double> x, AffineNoising nz) {
  const std::size_t count = mixture.components.size();
  const double n = static_cast<double>(x.size());
  ComponentTerms t{Vector(count), Vector(count), 0.0};
  for (std::size_t j = 0; j < count; ++j) {
    const auto& c = mixture.components[j];
    const double var = nz.signal * nz.signal * c.stddev * c.stddev + nz.noise * nz.noise;
    double dist2 = 0.0;
    for (std::size_t d = 0; d < x.size(); ++d) {
      const double diff = x[d] - nz.signal * c.mean[d];
      dist2 += diff * diff;
    }
    t.log_resp[j] = (c.weight > 0.0 ? std::log(c.weight) : -INFINITY) -
                    0.5 * n * std::log(2.0 * std::numbers::pi * var) - 0.5 * dist2 / var;
  }
  const double top = *std::max_element(t.log_resp.begin(), t.log_resp.end());
  double total = 0.0;
  for (std::size_t j = 0; j < count; ++j) {
    t.resp[j] = std::exp(t.log_resp[j] - top);
    total += t.resp[j];
  }
  for (double& r : t.resp) r /= total;
  t.log_norm = top + std::log(total);
  return t;
}

// Per-component head value h_j = alpha_j (x - a mu_j) + beta mu_j.
struct HeadCoefficients {
  double alpha;
  double beta;
};

HeadCoefficients head_coefficients(const MixtureComponent& c, AffineNoising nz, PosteriorHead head) {
  const double s2 = c.stddev * c.stddev;
  const double var = nz.signal * nz.signal * s2 + nz.noise * nz.noise;
  switch (head) {
    case PosteriorHead::score:
      return {-1.0 / var, 0.0};
    case PosteriorHead::noise:
      return {nz.noise / var, 0.0};
    case PosteriorHead::clean:
      return {nz.signal * s2 / var, 1.0};
    case PosteriorHead::velocity:
      return {(nz.noise - nz.signal * s2) / var, -1.0};
  }
  return {0.0, 0.0};
}

}  // namespace

Vector mixture_posterior(const MixtureSpec& mixture, std::span<const double> x, AffineNoising noising,
                         PosteriorHead head) {
  const auto terms = component_terms(mixture, x, noising);
  Vector out(x.size(), 0.0);
  for (std::size_t j = 0; j < mixture.components.size(); ++j) {
    const auto& c = mixture.components[j];
    const auto [alpha, beta] = head_coefficients(c, noising, head);
    const double r = terms.resp[j];
    for (std::size_t d = 0; d < x.size(); ++d)
      out[d] += r * (alpha * (x[d] - noising.signal * c.mean[d]) + beta * c.mean[d]);
  }
  return out;
}

Vector mixture_posterior_vjp(const MixtureSpec& mixture, std::span<const double> x, AffineNoising noising,
                             PosteriorHead head, std::span<const double> v) {
  // J = sum_j r_j alpha_j I + sum_j h_j grad(r_j)^T, grad(r_j) = r_j (g_j - g_bar),
  // g_j = -(x - a mu_j) / V_j the component score.
  const std::size_t n = x.size();
  const std::size_t count = mixture.components.size();
  const auto terms = component_terms(mixture, x, noising);

  std::vector<Vector> g(count, Vector(n));
  Vector g_bar(n, 0.0);
  Vector h_dot_v(count, 0.0);
  double alpha_sum = 0.0;
  for (std::size_t j = 0; j < count; ++j) {
    const auto& c = mixture.components[j];
    const double var = noising.signal * noising.signal * c.stddev * c.stddev + noising.noise * noising.noise;
    const auto [alpha, beta] = head_coefficients(c, noising, head);
    for (std::size_t d = 0; d < n; ++d) {
      const double diff = x[d] - noising.signal * c.mean[d];
      g[j][d] = -diff / var;
      h_dot_v[j] += (alpha * diff + beta * c.mean[d]) * v[d];
    }
    axpy(terms.resp[j], g[j], g_bar);
    alpha_sum += terms.resp[j] * alpha;
  }
  Vector out(n);
  for (std::size_t d = 0; d < n; ++d) out[d] = alpha_sum * v[d];
  for (std::size_t j = 0; j < count; ++j) {
    const double coef = terms.resp[j] * h_dot_v[j];
    for (std::size_t d = 0; d < n; ++d) out[d] += coef * (g[j][d] - g_bar[d]);
  }
  return out;
}

double mixture_log_density(const MixtureSpec& mixture, std::span<const double> x, AffineNoising noising) {
  // Direct evaluation, kept independent of component_terms.
  const double n = static_cast<double>(x.size());
  double total = 0.0;
  for (const auto& c : mixture.components) {
    const double var = noising.signal * noising.signal * c.stddev * c.stddev + noising.noise * noising.noise;
    double dist2 = 0.0;
    for (std::size_t d = 0; d < x.size(); ++d) {
      const double diff = x[d] - noising.signal * c.mean[d];
      dist2 += diff * diff;
    }
    total += c.weight * std::exp(-0.5 * dist2 / var) / std::pow(2.0 * std::numbers::pi * var, 0.5 * n);
  }
  return std::log(total);
}

Vector analytic_score(const MixtureSpec& mixture, std::span<const double> x, double sigma) {
  if (sigma < 0.0) throw std::invalid_argument("analytic_score: negative noise level");
  return mixture_posterior(mixture, x, {1.0, sigma}, PosteriorHead::score);
}

std::string to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::analytic_score:
      return "analytic-score";
    case ModelKind::learned_score:
      return "learned-score";
    case ModelKind::learned_noise:
      return "learned-noise";
    case ModelKind::learned_velocity:
      return "learned-velocity";
  }
  return "unknown";
}

double noise_conditioning(double sigma) { return std::log(sigma) / 4.0; }

GenerativeModel GenerativeModel::analytic(MixtureSpec mixture) {
  mixture.validate();
  GenerativeModel m;
  m.kind_ = ModelKind::analytic_score;
  m.mixture_ = std::move(mixture);
  return m;
}

GenerativeModel GenerativeModel::learned_score(MlpNet net, double sigma_data) {
  if (net.output_dim() != net.state_dim()) throw std::invalid_argument("score net output dim must equal state dim");
  GenerativeModel m;
  m.kind_ = ModelKind::learned_score;
  m.net_ = std::move(net);
  m.sigma_data_ = sigma_data;
  return m;
}

GenerativeModel GenerativeModel::learned_noise(MlpNet net) {
  if (net.output_dim() != net.state_dim()) throw std::invalid_argument("noise net output dim must equal state dim");
  GenerativeModel m;
  m.kind_ = ModelKind::learned_noise;
  m.net_ = std::move(net);
  return m;
}

GenerativeModel GenerativeModel::learned_velocity(MlpNet net) {
  if (net.output_dim() != net.state_dim())
    throw std::invalid_argument("velocity net output dim must equal state dim");
  GenerativeModel m;
  m.kind_ = ModelKind::learned_velocity;
  m.net_ = std::move(net);
  return m;
}

GenerativeModel GenerativeModel::from_checkpoint(const Checkpoint& checkpoint) {
  switch (checkpoint.net.head()) {
    case HeadKind::score:
      return learned_score(checkpoint.net, checkpoint.metadata.value("sigma_data", 1.0));
    case HeadKind::noise:
      return learned_noise(checkpoint.net);
    case HeadKind::velocity:
      return learned_velocity(checkpoint.net);
    case HeadKind::oracle:
      break;
  }
  throw std::invalid_argument("checkpoint holds an oracle head, not a generative model");
}

std::size_t GenerativeModel::state_dim() const {
  return mixture_ ? mixture_->dim() : net_->state_dim();
}

namespace {

Matrix posterior_rows(const MixtureSpec& mixture, const Matrix& x, AffineNoising nz, PosteriorHead head) {
  Matrix out(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const Vector r = mixture_posterior(mixture, x.row(i), nz, head);
    std::copy(r.begin(), r.end(), out.row(i).begin());
  }
  return out;
}

Matrix posterior_vjp_rows(const MixtureSpec& mixture, const Matrix& x, AffineNoising nz, PosteriorHead head,
                          const Matrix& v) {
  Matrix out(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const Vector r = mixture_posterior_vjp(mixture, x.row(i), nz, head, v.row(i));
    std::copy(r.begin(), r.end(), out.row(i).begin());
  }
  return out;
}

AffineNoising ddim_noising(double sigma) {
  const double scale = 1.0 / std::sqrt(1.0 + sigma * sigma);
  return {scale, sigma * scale};
}

AffineNoising flow_noising(double t) { return {1.0 - t, t}; }

void scale_in_place(Matrix& m, double s) {
  for (double& v : m.values()) v *= s;
}

}  // namespace

Matrix GenerativeModel::score_batch(const Matrix& x, double sigma) const {
  switch (kind_) {
    case ModelKind::analytic_score:
      return posterior_rows(*mixture_, x, {1.0, sigma}, PosteriorHead::score);
    case ModelKind::learned_score: {
      if (!(sigma > 0.0)) throw std::invalid_argument("learned score needs sigma > 0");
      const double c_in = 1.0 / std::sqrt(sigma * sigma + sigma_data_ * sigma_data_);
      Matrix scaled = x;
      scale_in_place(scaled, c_in);
      Matrix out = net_->forward_batch(scaled, noise_conditioning(sigma));
      scale_in_place(out, 1.0 / sigma);
      return out;
    }
    default:
      throw std::logic_error("model " + to_string(kind_) + " has no score head");
  }
}

Matrix GenerativeModel::score_vjp_batch(const Matrix& x, double sigma, const Matrix& v) const {
  switch (kind_) {
    case ModelKind::analytic_score:
      return posterior_vjp_rows(*mixture_, x, {1.0, sigma}, PosteriorHead::score, v);
    case ModelKind::learned_score: {
      if (!(sigma > 0.0)) throw std::invalid_argument("learned score needs sigma > 0");
      const double c_in = 1.0 / std::sqrt(sigma * sigma + sigma_data_ * sigma_data_);
      Matrix scaled = x;
      scale_in_place(scaled, c_in);
      Matrix out = net_->input_vjp_batch(scaled, noise_conditioning(sigma), v);
      scale_in_place(out, c_in / sigma);
      return out;
    }
    default:
      throw std::logic_error("model " + to_string(kind_) + " has no score head");
  }
}

Matrix GenerativeModel::noise_batch(const Matrix& x_t, double sigma) const {
  switch (kind_) {
    case ModelKind::analytic_score:
      return posterior_rows(*mixture_, x_t, ddim_noising(sigma), PosteriorHead::noise);
    case ModelKind::learned_noise:
      return net_->forward_batch(x_t, noise_conditioning(sigma));
    default:
      throw std::logic_error("model " + to_string(kind_) + " has no noise head");
  }
}

Matrix GenerativeModel::noise_vjp_batch(const Matrix& x_t, double sigma, const Matrix& v) const {
  switch (kind_) {
    case ModelKind::analytic_score:
      return posterior_vjp_rows(*mixture_, x_t, ddim_noising(sigma), PosteriorHead::noise, v);
    case ModelKind::learned_noise:
      return net_->input_vjp_batch(x_t, noise_conditioning(sigma), v);
    default:
      throw std::logic_error("model " + to_string(kind_) + " has no noise head");
  }
}

Matrix GenerativeModel::velocity_batch(const Matrix& x, double t) const {
  switch (kind_) {
    case ModelKind::analytic_score:
      return posterior_rows(*mixture_, x, flow_noising(t), PosteriorHead::velocity);
    case ModelKind::learned_velocity:
      return net_->forward_batch(x, t);
    default:
      throw std::logic_error("model " + to_string(kind_) + " has no velocity head");
  }
}

Matrix GenerativeModel::velocity_vjp_batch(const Matrix& x, double t, const Matrix& v) const {
  switch (kind_) {
    case ModelKind::analytic_score:
      return posterior_vjp_rows(*mixture_, x, flow_noising(t), PosteriorHead::velocity, v);
    case ModelKind::learned_velocity:
      return net_->input_vjp_batch(x, t, v);
    default:
      throw std::logic_error("model " + to_string(kind_) + " has no velocity head");
  }
}

Vector GenerativeModel::score(std::span<const double> x, double sigma) const {
  Matrix row(1, x.size(), Vector(x.begin(), x.end()));
  return score_batch(row, sigma).data();
}

std::vector<double> ddim_alpha_bars(std::size_t levels, double alpha_bar_max, double alpha_bar_min) {
  if (levels < 2) throw std::invalid_argument("ddim_alpha_bars: need at least 2 levels");
  std::vector<double> out(levels);
  for (std::size_t i = 0; i < levels; ++i)
    out[i] = alpha_bar_max +
             (alpha_bar_min - alpha_bar_max) * static_cast<double>(i) / static_cast<double>(levels - 1);
  return out;
}

namespace {

// Shared minibatch loop: `draw` fills inputs, per-row times and regression
// targets; the loss is the mean over the batch of ||net - target||^2.
template <typename Draw>
TrainResult run_regression(MlpNet net, const TrainConfig& cfg, Rng& rng, Draw draw, const char* what) {
  TrainResult result;
  if (cfg.steps == 0) {
    result.net = std::move(net);
    return result;
  }
  AdamOptimizer adam(net, cfg.adam);
  const std::size_t n = net.state_dim();
  Matrix inputs(cfg.batch, n);
  Vector times(cfg.batch);
  Matrix targets(cfg.batch, net.output_dim());
  result.losses.reserve(cfg.steps);

  for (std::size_t step = 0; step < cfg.steps; ++step) {
    draw(rng, inputs, times, targets);
    Matrix residual(cfg.batch, net.output_dim());
    double loss = 0.0;
    const Matrix pred = net.forward_rows(inputs, times);
    for (std::size_t i = 0; i < cfg.batch; ++i) {
      auto r = residual.row(i);
      for (std::size_t d = 0; d < r.size(); ++d) {
        r[d] = pred(i, d) - targets(i, d);
        loss += r[d] * r[d];
      }
    }
    loss /= static_cast<double>(cfg.batch);
    if (!std::isfinite(loss))
      throw TrainingDiverged(std::string(what) + ": non-finite loss at step " + std::to_string(step));
    result.losses.push_back(loss);

    for (double& r : residual.values()) r *= 2.0 / static_cast<double>(cfg.batch);
    adam.step(net, net.param_grad(inputs, times, residual));
  }
  const std::size_t tail = std::min<std::size_t>(100, result.losses.size());
  double acc = 0.0;
  for (std::size_t i = result.losses.size() - tail; i < result.losses.size(); ++i) acc += result.losses[i];
  result.final_loss = acc / static_cast<double>(tail);
  if (!net.all_finite()) throw TrainingDiverged(std::string(what) + ": parameters became non-finite");
  result.net = std::move(net);
  return result;
}

}  // namespace

TrainResult train_score_dsm(MlpNet net, const MixtureSpec& data, double sigma_data, const TrainConfig& cfg,
                            Rng& rng) {
  if (net.output_dim() != data.dim() || net.state_dim() != data.dim())
    throw std::invalid_argument("train_score_dsm: net dims do not match data");
  const double log_lo = std::log(cfg.sigma_min);
  const double log_hi = std::log(cfg.sigma_max);
  auto draw = [&](Rng& r, Matrix& inputs, Vector& times, Matrix& targets) {
    const Matrix x0 = data.sample(r, inputs.rows());
    for (std::size_t i = 0; i < inputs.rows(); ++i) {
      const double sigma = std::exp(log_lo + (log_hi - log_lo) * r.uniform());
      const double c_in = 1.0 / std::sqrt(sigma * sigma + sigma_data * sigma_data);
      for (std::size_t d = 0; d < inputs.cols(); ++d) {
        const double eps = r.normal();
        inputs(i, d) = c_in * (x0(i, d) + sigma * eps);
        targets(i, d) = -eps;
      }
      times[i] = noise_conditioning(sigma);
    }
  };
  return run_regression(std::move(net), cfg, rng, draw, "train_score_dsm");
}

TrainResult train_noise_pred(MlpNet net, const MixtureSpec& data, const TrainConfig& cfg, Rng& rng) {
  if (net.output_dim() != data.dim() || net.state_dim() != data.dim())
    throw std::invalid_argument("train_noise_pred: net dims do not match data");
  const auto alpha_bars = ddim_alpha_bars(cfg.ddim_levels, cfg.alpha_bar_max, cfg.alpha_bar_min);
  auto draw = [&](Rng& r, Matrix& inputs, Vector& times, Matrix& targets) {
    const Matrix x0 = data.sample(r, inputs.rows());
    for (std::size_t i = 0; i < inputs.rows(); ++i) {
      const double a = alpha_bars[r.below(alpha_bars.size())];
      const double sa = std::sqrt(a);
      const double sb = std::sqrt(1.0 - a);
      for (std::size_t d = 0; d < inputs.cols(); ++d) {
        const double eps = r.normal();
        inputs(i, d) = sa * x0(i, d) + sb * eps;
        targets(i, d) = eps;
      }
      times[i] = noise_conditioning(ddim_sigma(a));
    }
  };
  return run_regression(std::move(net), cfg, rng, draw, "train_noise_pred");
}

TrainResult train_velocity_fm(MlpNet net, const MixtureSpec& data, const TrainConfig& cfg, Rng& rng) {
  if (net.output_dim() != data.dim() || net.state_dim() != data.dim())
    throw std::invalid_argument("train_velocity_fm: net dims do not match data");
  auto draw = [&](Rng& r, Matrix& inputs, Vector& times, Matrix& targets) {
    const Matrix x0 = data.sample(r, inputs.rows());
    for (std::size_t i = 0; i < inputs.rows(); ++i) {
      const double t = r.uniform();
      for (std::size_t d = 0; d < inputs.cols(); ++d) {
        const double x1 = r.normal();
        inputs(i, d) = (1.0 - t) * x0(i, d) + t * x1;
        targets(i, d) = x1 - x0(i, d);
      }
      times[i] = t;
    }
  };
  return run_regression(std::move(net), cfg, rng, draw, "train_velocity_fm");
}

}  // namespace attralign
