#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "attralign/alignment.hpp"
#include "attralign/controller.hpp"
#include "attralign/dynamics.hpp"
#include "attralign/generative.hpp"

namespace attralign::cli {

/// Bad or missing inputs; the command exits with status 2.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainSection {
  TrainConfig net;
  std::vector<std::size_t> hidden{64, 64};
  TimeEmbedding embedding = TimeEmbedding::raw_scalar();
  ClassifierConfig classifier;
};

struct ExperimentConfig {
  std::filesystem::path base_dir;
  nlohmann::json raw;

  std::optional<std::filesystem::path> mixture_path;
  std::optional<std::filesystem::path> checkpoint_path;  // empty: analytic model from the mixture
  InstanceKind instance = InstanceKind::edm;
  std::string grid = "uniform";  // edm only: uniform | karras
  double horizon = 80.0;         // edm prior scale
  std::string oracle = "analytic";
  double temperature = 2.0;
  std::optional<std::filesystem::path> oracle_path;
  std::optional<TargetSpec> target;
  SolverConfig solver;
  std::size_t samples = 4096;
  std::filesystem::path output_dir = "out";
  TrainSection train;
  std::string baseline_method = "vanilla";
  double baseline_weight = 0.0;
  std::string sweep_axis;
  std::vector<double> sweep_values;
  std::optional<std::filesystem::path> eval_samples;
  bool quiet = false;

  /// Resolves `p` against the directory holding the config file.
  std::filesystem::path resolve(const std::filesystem::path& p) const;
};

/// Throws ConfigError for unreadable files, malformed fields, or a
/// referenced file that does not exist.
ExperimentConfig load_experiment_config(const std::filesystem::path& path);
ExperimentConfig experiment_config_from_json(const nlohmann::json& doc, const std::filesystem::path& base_dir);

MixtureSpec load_mixture(const ExperimentConfig& cfg);
GenerativeModel load_model(const ExperimentConfig& cfg);
TimeGrid make_grid(const ExperimentConfig& cfg, std::size_t steps);
AttributeOracle load_oracle(const ExperimentConfig& cfg);

/// Evaluation batch run by align/baseline/sweep.
struct BatchRun {
  Matrix samples;
  std::vector<RunReport> reports;
  double seconds = 0.0;
  std::optional<std::size_t> peak_heap_bytes;
  std::optional<std::size_t> peak_resident_bytes;
};

/// method: "align", "vanilla" or "pg".
BatchRun run_batches(const ExperimentConfig& cfg, const std::string& method, double weight = 0.0);

int cmd_train(const ExperimentConfig& cfg);
int cmd_align(const ExperimentConfig& cfg);
int cmd_baseline(const ExperimentConfig& cfg);
int cmd_eval(const ExperimentConfig& cfg);
int cmd_sweep(const ExperimentConfig& cfg);

/// Full command line: attralign <train|align|baseline|eval|sweep> --config PATH
/// [--seed N] [--out DIR] [--quiet]. Returns the process exit status.
int run(int argc, const char* const* argv);

}  // namespace attralign::cli
