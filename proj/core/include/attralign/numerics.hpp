#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string_view>
#include <vector>

namespace attralign {

using Vector = std::vector<double>;

/// Dense row-major matrix of doubles. Rows are the batch axis everywhere in
/// this library: a batch of M states in R^n is an M x n matrix.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

  static Matrix from_rows(const std::vector<Vector>& rows);
  static Matrix identity(std::size_t n);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }
  const std::vector<double>& data() const { return data_; }

  void fill(double v);
  bool all_finite() const;

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

Matrix matmul(const Matrix& a, const Matrix& b);
Matrix transpose(const Matrix& a);

double dot(std::span<const double> a, std::span<const double> b);
double squared_norm(std::span<const double> a);
double norm(std::span<const double> a);
/// y += alpha * x
void axpy(double alpha, std::span<const double> x, std::span<double> y);

/// Seeded generator. Output is the standard-specified mt19937_64 stream;
/// uniforms take the top 53 bits, normals use the Box-Muller transform with
/// the second variate cached. Both are fully determined by the seed, so
/// streams agree across compilers and platforms.
class Rng {
 public:
  static constexpr std::string_view kIdentity = "mt19937_64+box-muller(53-bit)";

  explicit Rng(std::uint64_t seed) : seed_(seed), engine_(seed) {}

  std::uint64_t seed() const { return seed_; }
  std::uint64_t next_u64() { return engine_(); }
  /// Uniform on [0, 1).
  double uniform();
  /// Uniform on (0, 1]; safe as a log argument.
  double uniform_open_low();
  double normal();
  std::size_t below(std::size_t n);
  /// Draw an index from unnormalized nonnegative weights.
  std::size_t categorical(std::span<const double> weights);

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

Matrix sample_standard_normal(Rng& rng, std::size_t rows, std::size_t cols);

/// Max-subtracted softmax.
Vector softmax(std::span<const double> logits);
void softmax_into(std::span<const double> logits, std::span<double> out);

std::size_t argmax(std::span<const double> values);

struct GaussianFit {
  Vector mean;
  Matrix covariance;
};

inline constexpr double kCovarianceRegularizer = 1e-9;

/// Sample mean and unbiased covariance (plus kCovarianceRegularizer * I) of
/// the rows of `samples`. Throws std::invalid_argument for fewer than 2 rows.
GaussianFit fit_gaussian(const Matrix& samples);

/// Class counts of `labels` over [0, classes).
std::vector<std::size_t> histogram(std::span<const std::size_t> labels, std::size_t classes);
/// Histogram normalized to a probability vector.
Vector normalized_histogram(std::span<const std::size_t> labels, std::size_t classes);

}  // namespace attralign
