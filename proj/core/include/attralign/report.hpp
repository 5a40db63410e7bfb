#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "attralign/alignment.hpp"
#include "attralign/controller.hpp"
#include "attralign/numerics.hpp"

namespace attralign {

/// Library version plus `git describe` output captured at configure time.
std::string version_string();

nlohmann::json to_json(const RunReport& report);
RunReport run_report_from_json(const nlohmann::json& doc);

/// UTF-8 JSON, two-space indent. Throws std::runtime_error on I/O failure.
void write_json_file(const std::filesystem::path& path, const nlohmann::json& doc);
nlohmann::json read_json_file(const std::filesystem::path& path);

/// Comma-separated, header row, LF endings, '.' decimals.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<Vector> rows;

  /// Throws std::out_of_range for an unknown column.
  std::size_t column(const std::string& name) const;
};

/// Shortest decimal text that parses back to the same double.
std::string format_double(double v);

void write_csv(const std::filesystem::path& path, const CsvTable& table);
/// Numeric CSV reader for the files written here.
CsvTable read_csv(const std::filesystem::path& path);

/// iteration, total_cost, terminal_cost, control_energy, forward_seconds, backward_seconds.
CsvTable cost_curve_table(const RunReport& report);
/// One row per (axis, class): axis index, class, observed, target. A joint
/// histogram, when present, is written with axis index = number of axes.
CsvTable histogram_table(const AttributeEvaluation& eval, const TargetSpec& target);
/// One row per sample: coordinates x0.., then per axis the argmax label
/// ("label_<axis>") and softmax probabilities ("p_<axis>_<class>").
CsvTable samples_table(const Matrix& samples, const AttributeOracle& oracle);
/// Coordinates x0..x{n-1} of a samples table.
Matrix samples_from_table(const CsvTable& table);

}  // namespace attralign
