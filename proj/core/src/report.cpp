#include "attralign/report.hpp"

#include <charconv>
#include <fstream>
#include <sstream>
#include <stdexcept>

#ifndef ATTRALIGN_VERSION
#define ATTRALIGN_VERSION "unknown"
#endif

namespace attralign {

std::string version_string() { return ATTRALIGN_VERSION; }

nlohmann::json to_json(const RunReport& report) {
  nlohmann::json iters = nlohmann::json::array();
  for (const auto& r : report.iterations)
    iters.push_back({{"iteration", r.iteration},
                     {"total_cost", r.total_cost},
                     {"terminal_cost", r.terminal_cost},
                     {"control_energy", r.control_energy},
                     {"forward_seconds", r.forward_seconds},
                     {"backward_seconds", r.backward_seconds}});
  return {{"iterations", iters},
          {"iterations_run", report.iterations_run()},
          {"converged", report.converged},
          {"final_cost",
           {{"total", report.final_cost.total},
            {"terminal", report.final_cost.terminal},
            {"control_energy", report.final_cost.energy}}},
          {"final_forward_seconds", report.final_forward_seconds},
          {"total_seconds", report.total_seconds},
          {"config", report.config},
          {"rng", report.rng_identity}};
}

RunReport run_report_from_json(const nlohmann::json& doc) {
  RunReport r;
  for (const auto& it : doc.at("iterations"))
    r.iterations.push_back({it.at("iteration").get<std::size_t>(), it.at("total_cost").get<double>(),
                            it.at("terminal_cost").get<double>(), it.at("control_energy").get<double>(),
                            it.at("forward_seconds").get<double>(), it.at("backward_seconds").get<double>()});
  if (doc.at("iterations_run").get<std::size_t>() != r.iterations.size())
    throw std::runtime_error("run report: iterations_run disagrees with the iteration list");
  r.converged = doc.at("converged").get<bool>();
  const auto& fc = doc.at("final_cost");
  r.final_cost = {fc.at("total").get<double>(), fc.at("terminal").get<double>(), fc.at("control_energy").get<double>()};
  r.final_forward_seconds = doc.at("final_forward_seconds").get<double>();
  r.total_seconds = doc.at("total_seconds").get<double>();
  r.config = doc.at("config");
  r.rng_identity = doc.at("rng").get<std::string>();
  return r;
}

void write_json_file(const std::filesystem::path& path, const nlohmann::json& doc) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << doc.dump(2) << '\n';
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

nlohmann::json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return nlohmann::json::parse(in);
}

std::size_t CsvTable::column(const std::string& name) const {
  for (std::size_t c = 0; c < header.size(); ++c)
    if (header[c] == name) return c;
  throw std::out_of_range("csv has no column '" + name + "'");
}

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

void write_csv(const std::filesystem::path& path, const CsvTable& table) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (std::size_t c = 0; c < table.header.size(); ++c) out << (c ? "," : "") << table.header[c];
  out << '\n';
  for (const auto& row : table.rows) {
    if (row.size() != table.header.size()) throw std::invalid_argument("csv row width differs from header");
    for (std::size_t c = 0; c < row.size(); ++c) out << (c ? "," : "") << format_double(row[c]);
    out << '\n';
  }
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

CsvTable read_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  CsvTable t;
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error(path.string() + ": empty csv");
  std::stringstream hs(line);
  for (std::string cell; std::getline(hs, cell, ',');) t.header.push_back(cell);
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    Vector row;
    std::stringstream ls(line);
    for (std::string cell; std::getline(ls, cell, ',');) {
      double v = 0.0;
      const auto res = std::from_chars(cell.data(), cell.data() + cell.size(), v);
      if (res.ec != std::errc() || res.ptr != cell.data() + cell.size())
        throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": bad number '" + cell + "'");
      row.push_back(v);
    }
    if (row.size() != t.header.size())
      throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": wrong column count");
    t.rows.push_back(std::move(row));
  }
  return t;
}

CsvTable cost_curve_table(const RunReport& report) {
  CsvTable t{{"iteration", "total_cost", "terminal_cost", "control_energy", "forward_seconds", "backward_seconds"}, {}};
  for (const auto& r : report.iterations)
    t.rows.push_back({static_cast<double>(r.iteration), r.total_cost, r.terminal_cost, r.control_energy,
                      r.forward_seconds, r.backward_seconds});
  return t;
}

CsvTable histogram_table(const AttributeEvaluation& eval, const TargetSpec& target) {
  CsvTable t{{"axis", "class", "observed", "target"}, {}};
  for (std::size_t a = 0; a < eval.histograms.size(); ++a)
    for (std::size_t j = 0; j < eval.histograms[a].size(); ++j)
      t.rows.push_back({static_cast<double>(a), static_cast<double>(j), eval.histograms[a][j], target.probs[a][j]});
  if (eval.joint_metrics) {
    const Vector q = target.joint_probs();
    for (std::size_t c = 0; c < q.size(); ++c)
      t.rows.push_back({static_cast<double>(eval.histograms.size()), static_cast<double>(c), eval.joint_histogram[c], q[c]});
  }
  return t;
}

CsvTable samples_table(const Matrix& samples, const AttributeOracle& oracle) {
  CsvTable t;
  for (std::size_t d = 0; d < samples.cols(); ++d) t.header.push_back("x" + std::to_string(d));
  std::vector<Matrix> probs;
  for (std::size_t a = 0; a < oracle.axis_count(); ++a) {
    const auto& axis = oracle.axes()[a];
    t.header.push_back("label_" + axis.name);
    for (std::size_t j = 0; j < axis.classes; ++j) t.header.push_back("p_" + axis.name + "_" + std::to_string(j));
    probs.push_back(oracle.probabilities_batch(a, samples));
  }
  std::vector<std::vector<std::size_t>> labels;
  for (std::size_t a = 0; a < oracle.axis_count(); ++a) labels.push_back(oracle.hard_labels(a, samples));
  for (std::size_t i = 0; i < samples.rows(); ++i) {
    Vector row(samples.row(i).begin(), samples.row(i).end());
    for (std::size_t a = 0; a < probs.size(); ++a) {
      row.push_back(static_cast<double>(labels[a][i]));
      for (double p : probs[a].row(i)) row.push_back(p);
    }
    t.rows.push_back(std::move(row));
  }
  return t;
}

Matrix samples_from_table(const CsvTable& table) {
  std::size_t dim = 0;
  while (dim < table.header.size() && table.header[dim] == "x" + std::to_string(dim)) ++dim;
  if (dim == 0) throw std::runtime_error("samples csv has no coordinate columns");
  Matrix m(table.rows.size(), dim);
  for (std::size_t i = 0; i < table.rows.size(); ++i)
    for (std::size_t d = 0; d < dim; ++d) m(i, d) = table.rows[i][d];
  return m;
}

}  // namespace attralign
