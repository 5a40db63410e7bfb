#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "attralign/numerics.hpp"

namespace attralign {

enum class TimeEmbeddingMode { none, raw_scalar, sinusoidal };

/// Features appended to the state before the first layer. Oracle heads use
/// `none`; the dynamics heads use a raw scalar or sinusoidal features.
struct TimeEmbedding {
  TimeEmbeddingMode mode = TimeEmbeddingMode::raw_scalar;
  Vector frequencies;

  static TimeEmbedding none() { return {TimeEmbeddingMode::none, {}}; }
  static TimeEmbedding raw_scalar() { return {TimeEmbeddingMode::raw_scalar, {}}; }
  /// Frequencies 1, 2, 4, ... (k of them); features are sin(f t), cos(f t).
  static TimeEmbedding sinusoidal(std::size_t k);

  std::size_t dim() const;
  void embed(double t, std::span<double> out) const;

  friend bool operator==(const TimeEmbedding&, const TimeEmbedding&) = default;
};

enum class HeadKind { score, noise, velocity, oracle };

std::string to_string(HeadKind kind);
HeadKind head_kind_from_string(const std::string& name);
std::string to_string(TimeEmbeddingMode mode);
TimeEmbeddingMode time_embedding_mode_from_string(const std::string& name);

struct DenseLayer {
  Matrix weight;  // out x in
  Vector bias;    // out

  friend bool operator==(const DenseLayer&, const DenseLayer&) = default;
};

/// Feed-forward network: tanh hidden layers, identity output. The input is
/// the state followed by the time features, so layer_sizes.front() equals
/// state_dim() + embedding().dim().
class MlpNet {
 public:
  MlpNet() = default;
  /// Weights ~ N(0, 1/fan_in), biases 0.
  MlpNet(std::vector<std::size_t> layer_sizes, TimeEmbedding embedding, HeadKind head,
         std::uint64_t seed);

  /// Convenience: sizes are {state_dim + embedding.dim(), hidden..., output_dim}.
  static MlpNet make(std::size_t state_dim, std::vector<std::size_t> hidden, std::size_t output_dim,
                     TimeEmbedding embedding, HeadKind head, std::uint64_t seed);
  /// Same architecture, all parameters zero. Used as a gradient container.
  static MlpNet zeros_like(const MlpNet& net);

  const std::vector<std::size_t>& layer_sizes() const { return layer_sizes_; }
  const TimeEmbedding& embedding() const { return embedding_; }
  HeadKind head() const { return head_; }
  std::uint64_t seed() const { return seed_; }
  std::size_t state_dim() const { return layer_sizes_.front() - embedding_.dim(); }
  std::size_t output_dim() const { return layer_sizes_.back(); }

  std::vector<DenseLayer>& layers() { return layers_; }
  const std::vector<DenseLayer>& layers() const { return layers_; }

  Vector forward(std::span<const double> x, double t) const;
  /// J^T v with J = d forward / d x; time is held constant.
  Vector input_vjp(std::span<const double> x, double t, std::span<const double> v) const;

  /// Row-wise forward of a batch sharing one time value. Each row's result
  /// is bitwise independent of the other rows.
  Matrix forward_batch(const Matrix& x, double t) const;
  Matrix input_vjp_batch(const Matrix& x, double t, const Matrix& v) const;
  /// Row-wise forward with one time value per row.
  Matrix forward_rows(const Matrix& x, std::span<const double> times) const;

  /// Gradient of sum_i cotangents_i . forward(x_i, t_i) with respect to every
  /// parameter, returned in the shape of this network.
  MlpNet param_grad(const Matrix& batch, std::span<const double> times,
                    const Matrix& cotangents) const;

  std::size_t parameter_count() const;
  /// Layer order; per layer weights row-major then bias.
  Vector flat_parameters() const;
  void set_flat_parameters(std::span<const double> flat);

  bool all_finite() const;

  friend bool operator==(const MlpNet&, const MlpNet&) = default;

 private:
  struct Activations;
  void forward_shared_time(const Matrix& x, double t, Activations& acts) const;
  void check_state_batch(const Matrix& x) const;
  std::vector<Matrix> forward_rows_cached(const Matrix& x, std::span<const double> times) const;

  std::vector<std::size_t> layer_sizes_;
  TimeEmbedding embedding_;
  HeadKind head_ = HeadKind::score;
  std::uint64_t seed_ = 0;
  std::vector<DenseLayer> layers_;
};

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

nlohmann::json to_json(const AdamConfig& cfg);

class AdamOptimizer {
 public:
  AdamOptimizer(const MlpNet& net, AdamConfig cfg);
  void step(MlpNet& net, const MlpNet& grad);
  std::size_t steps_taken() const { return t_; }

 private:
  AdamConfig cfg_;
  Vector m_;
  Vector v_;
  std::size_t t_ = 0;
};

// Checkpoints: one JSON document per network.
inline constexpr int kCheckpointSchemaVersion = 1;

struct Checkpoint {
  MlpNet net;
  nlohmann::json metadata = nlohmann::json::object();
};

nlohmann::json checkpoint_to_json(const Checkpoint& checkpoint);
/// Throws std::runtime_error on an unknown schema_version or malformed fields.
Checkpoint checkpoint_from_json(const nlohmann::json& doc);
void write_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint read_checkpoint(const std::filesystem::path& path);

}  // namespace attralign
