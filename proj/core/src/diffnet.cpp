#include "attralign/diffnet.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace attralign {

TimeEmbedding TimeEmbedding::sinusoidal(std::size_t k) {
  TimeEmbedding e{TimeEmbeddingMode::sinusoidal, {}};
  double f = 1.0;
  for (std::size_t i = 0; i < k; ++i, f *= 2.0) e.frequencies.push_back(f);
  return e;
}

std::size_t TimeEmbedding::dim() const {
  switch (mode) {
    case TimeEmbeddingMode::none:
      return 0;
    case TimeEmbeddingMode::raw_scalar:
      return 1;
    case TimeEmbeddingMode::sinusoidal:
      return 2 * frequencies.size();
  }
  return 0;
}

void TimeEmbedding::embed(double t, std::span<double> out) const {
  switch (mode) {
    case TimeEmbeddingMode::none:
      return;
    case TimeEmbeddingMode::raw_scalar:
      out[0] = t;
      return;
    case TimeEmbeddingMode::sinusoidal:
      for (std::size_t i = 0; i < frequencies.size(); ++i) {
        out[2 * i] = std::sin(frequencies[i] * t);
        out[2 * i + 1] = std::cos(frequencies[i] * t);
      }
      return;
  }
}

std::string to_string(HeadKind kind) {
  switch (kind) {
    case HeadKind::score:
      return "score";
    case HeadKind::noise:
      return "noise";
    case HeadKind::velocity:
      return "velocity";
    case HeadKind::oracle:
      return "oracle";
  }
  return "unknown";
}

HeadKind head_kind_from_string(const std::string& name) {
  if (name == "score") return HeadKind::score;
  if (name == "noise") return HeadKind::noise;
  if (name == "velocity") return HeadKind::velocity;
  if (name == "oracle") return HeadKind::oracle;
  throw std::runtime_error("unknown head kind '" + name + "'");
}

std::string to_string(TimeEmbeddingMode mode) {
  switch (mode) {
    case TimeEmbeddingMode::none:
      return "none";
    case TimeEmbeddingMode::raw_scalar:
      return "raw_scalar";
    case TimeEmbeddingMode::sinusoidal:
      return "sinusoidal";
  }
  return "unknown";
}

TimeEmbeddingMode time_embedding_mode_from_string(const std::string& name) {
  if (name == "none") return TimeEmbeddingMode::none;
  if (name == "raw_scalar") return TimeEmbeddingMode::raw_scalar;
  if (name == "sinusoidal") return TimeEmbeddingMode::sinusoidal;
  throw std::runtime_error("unknown time embedding mode '" + name + "'");
}

MlpNet::MlpNet(std::vector<std::size_t> layer_sizes, TimeEmbedding embedding, HeadKind head,
               std::uint64_t seed)
    : layer_sizes_(std::move(layer_sizes)), embedding_(std::move(embedding)), head_(head),
      seed_(seed) {
  if (layer_sizes_.size() < 2) throw std::invalid_argument("MlpNet: need at least 2 layer sizes");
  if (layer_sizes_.front() <= embedding_.dim())
    throw std::invalid_argument("MlpNet: input width leaves no room for the state");
  for (std::size_t s : layer_sizes_)
    if (s == 0) throw std::invalid_argument("MlpNet: zero-width layer");

  Rng rng(seed_);
  for (std::size_t l = 0; l + 1 < layer_sizes_.size(); ++l) {
    const std::size_t fan_in = layer_sizes_[l];
    const std::size_t fan_out = layer_sizes_[l + 1];
    DenseLayer layer{Matrix(fan_out, fan_in), Vector(fan_out, 0.0)};
    const double scale = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (double& w : layer.weight.values()) w = scale * rng.normal();
    layers_.push_back(std::move(layer));
  }
}

MlpNet MlpNet::make(std::size_t state_dim, std::vector<std::size_t> hidden, std::size_t output_dim,
                    TimeEmbedding embedding, HeadKind head, std::uint64_t seed) {
  std::vector<std::size_t> sizes;
  sizes.push_back(state_dim + embedding.dim());
  sizes.insert(sizes.end(), hidden.begin(), hidden.end());
  sizes.push_back(output_dim);
  return MlpNet(std::move(sizes), std::move(embedding), head, seed);
}

MlpNet MlpNet::zeros_like(const MlpNet& net) {
  MlpNet z = net;
  for (auto& layer : z.layers_) {
    layer.weight.fill(0.0);
    std::fill(layer.bias.begin(), layer.bias.end(), 0.0);
  }
  return z;
}

struct MlpNet::Activations {
  // values[0] is the state batch; values[l + 1] is the output of layer l.
  std::vector<Matrix> values;
};

void MlpNet::check_state_batch(const Matrix& x) const {
  if (x.cols() != state_dim()) {
    throw std::invalid_argument("MlpNet: state has " + std::to_string(x.cols()) +
                                " columns, network expects " + std::to_string(state_dim()));
  }
}

void MlpNet::forward_shared_time(const Matrix& x, double t, Activations& acts) const {
  check_state_batch(x);
  const std::size_t batch = x.rows();
  const std::size_t n = state_dim();
  const std::size_t last = layers_.size() - 1;

  acts.values.resize(layers_.size() + 1);
  acts.values[0] = x;

  Vector features(embedding_.dim());
  embedding_.embed(t, features);

  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const DenseLayer& layer = layers_[l];
    const Matrix& in = acts.values[l];
    const std::size_t out_dim = layer.weight.rows();
    const std::size_t in_dim = (l == 0) ? n : layer.weight.cols();

    // Shared per-batch offset: bias plus the time-feature block of layer 0.
    Vector offset = layer.bias;
    if (l == 0) {
      for (std::size_t o = 0; o < out_dim; ++o) {
        const auto w = layer.weight.row(o);
        for (std::size_t k = 0; k < features.size(); ++k) offset[o] += w[n + k] * features[k];
      }
    }

    Matrix out(batch, out_dim);
    for (std::size_t i = 0; i < batch; ++i) {
      const auto a = in.row(i);
      auto z = out.row(i);
      for (std::size_t o = 0; o < out_dim; ++o) {
        const auto w = layer.weight.row(o);
        double s = 0.0;
        for (std::size_t k = 0; k < in_dim; ++k) s += w[k] * a[k];
        z[o] = offset[o] + s;
      }
      if (l != last)
        for (double& v : z) v = std::tanh(v);
    }
    acts.values[l + 1] = std::move(out);
  }
}

Matrix MlpNet::forward_batch(const Matrix& x, double t) const {
  Activations acts;
  forward_shared_time(x, t, acts);
  return std::move(acts.values.back());
}

Vector MlpNet::forward(std::span<const double> x, double t) const {
  Matrix row(1, x.size(), Vector(x.begin(), x.end()));
  return forward_batch(row, t).data();
}

Matrix MlpNet::input_vjp_batch(const Matrix& x, double t, const Matrix& v) const {
  if (v.rows() != x.rows() || v.cols() != output_dim())
    throw std::invalid_argument("MlpNet::input_vjp: cotangent shape mismatch");
  Activations acts;
  forward_shared_time(x, t, acts);

  const std::size_t batch = x.rows();
  const std::size_t n = state_dim();
  const std::size_t last = layers_.size() - 1;

  Matrix grad = v;
  for (std::size_t l = layers_.size(); l-- > 0;) {
    if (l != last) {
      const Matrix& a = acts.values[l + 1];
      for (std::size_t i = 0; i < grad.size(); ++i) {
        const double ai = a.values()[i];
        grad.values()[i] *= 1.0 - ai * ai;
      }
    }
    const DenseLayer& layer = layers_[l];
    const std::size_t in_dim = (l == 0) ? n : layer.weight.cols();
    Matrix next(batch, in_dim);
    for (std::size_t i = 0; i < batch; ++i) {
      const auto g = grad.row(i);
      auto out = next.row(i);
      for (std::size_t o = 0; o < layer.weight.rows(); ++o) {
        const auto w = layer.weight.row(o);
        const double go = g[o];
        for (std::size_t k = 0; k < in_dim; ++k) out[k] += go * w[k];
      }
    }
    grad = std::move(next);
  }
  return grad;
}

Vector MlpNet::input_vjp(std::span<const double> x, double t, std::span<const double> v) const {
  if (x.size() != state_dim()) throw std::invalid_argument("MlpNet::input_vjp: state size mismatch");
  Matrix xr(1, x.size(), Vector(x.begin(), x.end()));
  Matrix vr(1, v.size(), Vector(v.begin(), v.end()));
  return input_vjp_batch(xr, t, vr).data();
}

std::vector<Matrix> MlpNet::forward_rows_cached(const Matrix& x, std::span<const double> times) const {
  check_state_batch(x);
  if (times.size() != x.rows()) throw std::invalid_argument("MlpNet: one time value per row required");
  const std::size_t rows = x.rows();
  const std::size_t n = state_dim();
  const std::size_t last = layers_.size() - 1;

  // Explicit [state | features] inputs so every row can carry its own time.
  std::vector<Matrix> acts(layers_.size() + 1);
  acts[0] = Matrix(rows, n + embedding_.dim());
  for (std::size_t i = 0; i < rows; ++i) {
    auto r = acts[0].row(i);
    std::copy(x.row(i).begin(), x.row(i).end(), r.begin());
    embedding_.embed(times[i], r.subspan(n));
  }
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const DenseLayer& layer = layers_[l];
    Matrix out(rows, layer.weight.rows());
    for (std::size_t i = 0; i < rows; ++i) {
      const auto a = acts[l].row(i);
      auto z = out.row(i);
      for (std::size_t o = 0; o < layer.weight.rows(); ++o) z[o] = layer.bias[o] + dot(layer.weight.row(o), a);
      if (l != last)
        for (double& v : z) v = std::tanh(v);
    }
    acts[l + 1] = std::move(out);
  }
  return acts;
}

Matrix MlpNet::forward_rows(const Matrix& x, std::span<const double> times) const {
  return std::move(forward_rows_cached(x, times).back());
}

MlpNet MlpNet::param_grad(const Matrix& batch, std::span<const double> times,
                          const Matrix& cotangents) const {
  check_state_batch(batch);
  if (times.size() != batch.rows() || cotangents.rows() != batch.rows() ||
      cotangents.cols() != output_dim())
    throw std::invalid_argument("MlpNet::param_grad: inconsistent batch shapes");

  const std::size_t rows = batch.rows();
  const std::size_t last = layers_.size() - 1;

  const std::vector<Matrix> acts = forward_rows_cached(batch, times);

  MlpNet grad = zeros_like(*this);
  Matrix g = cotangents;
  for (std::size_t l = layers_.size(); l-- > 0;) {
    if (l != last) {
      const Matrix& a = acts[l + 1];
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double ai = a.values()[i];
        g.values()[i] *= 1.0 - ai * ai;
      }
    }
    DenseLayer& gl = grad.layers_[l];
    const DenseLayer& layer = layers_[l];
    const Matrix& in = acts[l];
    for (std::size_t i = 0; i < rows; ++i) {
      const auto gi = g.row(i);
      const auto ai = in.row(i);
      for (std::size_t o = 0; o < gl.weight.rows(); ++o) {
        gl.bias[o] += gi[o];
        axpy(gi[o], ai, gl.weight.row(o));
      }
    }
    if (l == 0) break;
    Matrix next(rows, layer.weight.cols());
    for (std::size_t i = 0; i < rows; ++i) {
      const auto gi = g.row(i);
      for (std::size_t o = 0; o < layer.weight.rows(); ++o) axpy(gi[o], layer.weight.row(o), next.row(i));
    }
    g = std::move(next);
  }
  return grad;
}

std::size_t MlpNet::parameter_count() const {
  std::size_t count = 0;
  for (const auto& layer : layers_) count += layer.weight.size() + layer.bias.size();
  return count;
}

Vector MlpNet::flat_parameters() const {
  Vector flat;
  flat.reserve(parameter_count());
  for (const auto& layer : layers_) {
    flat.insert(flat.end(), layer.weight.data().begin(), layer.weight.data().end());
    flat.insert(flat.end(), layer.bias.begin(), layer.bias.end());
  }
  return flat;
}

void MlpNet::set_flat_parameters(std::span<const double> flat) {
  if (flat.size() != parameter_count())
    throw std::invalid_argument("MlpNet::set_flat_parameters: wrong parameter count");
  std::size_t pos = 0;
  for (auto& layer : layers_) {
    for (double& w : layer.weight.values()) w = flat[pos++];
    for (double& b : layer.bias) b = flat[pos++];
  }
}

bool MlpNet::all_finite() const {
  for (const auto& layer : layers_) {
    if (!layer.weight.all_finite()) return false;
    for (double b : layer.bias)
      if (!std::isfinite(b)) return false;
  }
  return true;
}

nlohmann::json to_json(const AdamConfig& cfg) {
  return {{"kind", "adam"},
          {"learning_rate", cfg.learning_rate},
          {"beta1", cfg.beta1},
          {"beta2", cfg.beta2},
          {"epsilon", cfg.epsilon}};
}

AdamOptimizer::AdamOptimizer(const MlpNet& net, AdamConfig cfg)
    : cfg_(cfg), m_(net.parameter_count(), 0.0), v_(net.parameter_count(), 0.0) {}

void AdamOptimizer::step(MlpNet& net, const MlpNet& grad) {
  Vector params = net.flat_parameters();
  const Vector g = grad.flat_parameters();
  if (g.size() != params.size()) throw std::invalid_argument("AdamOptimizer: gradient shape mismatch");
  ++t_;
  const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * g[i];
    v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
    params[i] -= cfg_.learning_rate * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + cfg_.epsilon);
  }
  net.set_flat_parameters(params);
}

nlohmann::json checkpoint_to_json(const Checkpoint& checkpoint) {
  const MlpNet& net = checkpoint.net;
  nlohmann::json params = nlohmann::json::array();
  for (const auto& layer : net.layers()) {
    nlohmann::json values = nlohmann::json::array();
    for (double w : layer.weight.data()) values.push_back(w);
    for (double b : layer.bias) values.push_back(b);
    params.push_back(std::move(values));
  }
  return {{"schema_version", kCheckpointSchemaVersion},
          {"head_kind", to_string(net.head())},
          {"layer_sizes", net.layer_sizes()},
          {"time_embedding",
           {{"mode", to_string(net.embedding().mode)}, {"frequencies", net.embedding().frequencies}}},
          {"activation", "tanh"},
          {"seed", net.seed()},
          {"parameters", std::move(params)},
          {"metadata", checkpoint.metadata}};
}

Checkpoint checkpoint_from_json(const nlohmann::json& doc) {
  try {
    const int version = doc.at("schema_version").get<int>();
    if (version != kCheckpointSchemaVersion)
      throw std::runtime_error("unsupported checkpoint schema_version " + std::to_string(version));
    if (doc.at("activation").get<std::string>() != "tanh")
      throw std::runtime_error("unsupported activation '" + doc.at("activation").get<std::string>() + "'");

    TimeEmbedding embedding;
    embedding.mode = time_embedding_mode_from_string(doc.at("time_embedding").at("mode").get<std::string>());
    embedding.frequencies = doc.at("time_embedding").value("frequencies", Vector{});

    Checkpoint cp;
    cp.net = MlpNet(doc.at("layer_sizes").get<std::vector<std::size_t>>(), embedding,
                    head_kind_from_string(doc.at("head_kind").get<std::string>()),
                    doc.at("seed").get<std::uint64_t>());
    const auto& params = doc.at("parameters");
    if (params.size() != cp.net.layers().size())
      throw std::runtime_error("checkpoint parameter layer count does not match layer_sizes");
    Vector flat;
    for (std::size_t l = 0; l < params.size(); ++l) {
      const auto& layer = cp.net.layers()[l];
      if (params[l].size() != layer.weight.size() + layer.bias.size())
        throw std::runtime_error("checkpoint layer " + std::to_string(l) + " has wrong parameter count");
      for (const auto& v : params[l]) flat.push_back(v.get<double>());
    }
    cp.net.set_flat_parameters(flat);
    if (!cp.net.all_finite()) throw std::runtime_error("checkpoint contains non-finite parameters");
    if (doc.contains("metadata")) cp.metadata = doc.at("metadata");
    return cp;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(std::string("malformed checkpoint: ") + e.what());
  }
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
  out << checkpoint_to_json(checkpoint).dump(1) << '\n';
  if (!out) throw std::runtime_error("failed writing checkpoint " + path.string());
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("checkpoint " + path.string() + " is not valid JSON: " + e.what());
  }
  return checkpoint_from_json(doc);
}

}  // namespace attralign
