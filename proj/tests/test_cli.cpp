#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "attralign/report.hpp"
#include "cli.hpp"
#include "test_support.hpp"

namespace attralign {
namespace {

namespace fs = std::filesystem;

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    dir_ = fs::temp_directory_path() / (std::string("attralign_cli_") + info->name());
    fs::remove_all(dir_);
    fs::create_directories(dir_);
    write_mixture_file(dir_ / "mixture.json", circle_mixture(Vector{0.8, 0.2}));
    write_mixture_file(dir_ / "balanced.json", circle_mixture(Vector{0.5, 0.5}));
  }
  void TearDown() override { fs::remove_all(dir_); }

  static nlohmann::json base_config(const std::string& mixture, const std::string& out) {
    return {{"instance", "edm"},
            {"grid", {{"kind", "uniform"}, {"horizon", 80.0}}},
            {"oracle", {{"kind", "analytic"}, {"temperature", 2.0}}},
            {"mixture", mixture},
            {"samples", 4096},
            {"target", {{"axes", {{{"name", "class"}, {"classes", 2}, {"preset", "uniform"}}}}, {"joint", false}}},
            {"solver",
             {{"rho", 5e-6}, {"xi", 0.95}, {"max_iters", 10}, {"batch", 64}, {"steps", 40}, {"u_max", 1.0},
              {"tol", 1e-4}, {"seed", 1}}},
            {"output_dir", out}};
  }

  fs::path write_config(const std::string& name, const nlohmann::json& doc) {
    const fs::path p = dir_ / name;
    std::ofstream(p) << doc.dump(2);
    return p;
  }

  // Runs the installed binary; stderr lands in `stderr_text_`.
  int run(const std::string& args) {
    const fs::path err = dir_ / "stderr.txt";
    const std::string cmd = std::string(ATTRALIGN_CLI_PATH) + " " + args + " --quiet 2> " + err.string();
    const int status = std::system(cmd.c_str());
    stderr_text_ = slurp(err);
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  }

  double reported_tv(const fs::path& out) {
    return read_json_file(out / "report.json").at("evaluation").at("axes").at(0).at("metrics").at("tv").get<double>();
  }

  fs::path dir_;
  std::string stderr_text_;
};

nlohmann::json train_config() {
  return {{"mixture", "mixture.json"},
          {"solver", {{"seed", 5}}},
          {"train",
           {{"steps", 60}, {"batch", 64}, {"hidden", {16, 16}}, {"classifier", {{"steps", 40}, {"batch", 64}}}}},
          {"output_dir", "models"}};
}

TEST_F(Cli, TrainWritesReloadableCheckpoints) {
  const fs::path cfg = write_config("train.json", train_config());
  ASSERT_EQ(run("train --config " + cfg.string()), 0) << stderr_text_;
  const fs::path out = dir_ / "models";
  for (const char* f : {"score.ckpt.json", "noise.ckpt.json", "velocity.ckpt.json", "oracle.json", "train_log.csv",
                        "train_summary.json"})
    EXPECT_TRUE(fs::exists(out / f)) << f;
  const Checkpoint velocity = read_checkpoint(out / "velocity.ckpt.json");
  EXPECT_EQ(velocity.net.head(), HeadKind::velocity);
  EXPECT_TRUE(velocity.metadata.contains("time_direction"));
  EXPECT_TRUE(read_checkpoint(out / "score.ckpt.json").metadata.contains("sigma_data"));
  const CsvTable log = read_csv(out / "train_log.csv");
  EXPECT_EQ(log.rows.size(), 60u);
  const auto summary = read_json_file(out / "train_summary.json");
  EXPECT_TRUE(summary.at("classifier_accuracy").contains("class"));
  const AttributeOracle oracle = read_oracle_file(out / "oracle.json");
  EXPECT_EQ(oracle.kind(), OracleKind::learned_classifier);
}

TEST_F(Cli, FixedSeedGivesIdenticalCheckpointBytes) {
  nlohmann::json doc = train_config();
  const fs::path a = write_config("a.json", doc);
  doc["output_dir"] = "models_b";
  const fs::path b = write_config("b.json", doc);
  ASSERT_EQ(run("train --config " + a.string()), 0) << stderr_text_;
  ASSERT_EQ(run("train --config " + b.string()), 0) << stderr_text_;
  for (const char* f : {"score.ckpt.json", "noise.ckpt.json", "velocity.ckpt.json", "oracle.json"})
    EXPECT_EQ(slurp(dir_ / "models" / f), slurp(dir_ / "models_b" / f)) << f;
  // A different seed changes them.
  ASSERT_EQ(run("train --config " + b.string() + " --seed 6"), 0);
  EXPECT_NE(slurp(dir_ / "models" / "score.ckpt.json"), slurp(dir_ / "models_b" / "score.ckpt.json"));
}

TEST_F(Cli, CheckpointReloadMatchesInMemoryNet) {
  Rng rng(3);
  TrainConfig tc;
  tc.steps = 50;
  tc.batch = 64;
  const MlpNet trained = train_noise_pred(MlpNet::make(2, {16, 16}, 2, TimeEmbedding::sinusoidal(4), HeadKind::noise, 3),
                                          circle_mixture(Vector{0.8, 0.2}), tc, rng)
                             .net;
  write_checkpoint(dir_ / "n.ckpt.json", {trained, {}});
  const MlpNet back = read_checkpoint(dir_ / "n.ckpt.json").net;
  const Matrix x = testing::random_matrix(rng, 32, 2, 3.0);
  const Matrix a = trained.forward_batch(x, 0.37), b = back.forward_batch(x, 0.37);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a.values()[i], b.values()[i], 1e-15);
}

TEST_F(Cli, MissingMixtureExitsWithTwo) {
  const fs::path cfg = write_config("bad.json", base_config("no_such_mixture.json", "out"));
  EXPECT_EQ(run("align --config " + cfg.string()), 2);
  EXPECT_NE(stderr_text_.find((dir_ / "no_such_mixture.json").string()), std::string::npos) << stderr_text_;
}

TEST_F(Cli, BadArgumentsExitWithTwo) {
  EXPECT_EQ(run("align"), 2);
  EXPECT_EQ(run("frobnicate --config x.json"), 2);
  EXPECT_EQ(run("align --config " + (dir_ / "absent.json").string()), 2);
  nlohmann::json doc = base_config("mixture.json", "out");
  doc["solver"]["rho"] = 0.0;
  EXPECT_NE(run("align --config " + write_config("rho0.json", doc).string()), 0);
}

// A balanced model still shows O(1/sqrt(M)) per-batch imbalance, which the
// solver corrects; its control energy is compared against the 0.8/0.2 model.
TEST_F(Cli, AlignedStartStaysAligned) {
  nlohmann::json doc = base_config("balanced.json", "balanced");
  doc["samples"] = 1024;
  ASSERT_EQ(run("align --config " + write_config("align.json", doc).string()), 0) << stderr_text_;
  doc = base_config("mixture.json", "skewed");
  doc["samples"] = 1024;
  ASSERT_EQ(run("align --config " + write_config("skewed.json", doc).string()), 0) << stderr_text_;
  EXPECT_LT(reported_tv(dir_ / "balanced"), 0.05);
  auto mean_energy = [&](const fs::path& out) {
    const auto report = read_json_file(out / "report.json");
    EXPECT_LE(report.at("max_iterations_run").get<std::size_t>(), 10u);
    double total = 0.0;
    for (const auto& b : report.at("batches")) total += run_report_from_json(b).final_cost.energy;
    return total / static_cast<double>(report.at("batches").size());
  };
  EXPECT_LT(mean_energy(dir_ / "balanced"), 0.5 * mean_energy(dir_ / "skewed"));
}

TEST_F(Cli, AlignImprovesOnVanillaAndFilesRoundTrip) {
  const fs::path cfg = write_config("align.json", base_config("mixture.json", "aligned"));
  ASSERT_EQ(run("align --config " + cfg.string()), 0) << stderr_text_;
  nlohmann::json van = base_config("mixture.json", "vanilla");
  van["baseline"] = {{"method", "vanilla"}};
  ASSERT_EQ(run("baseline --config " + write_config("vanilla.json", van).string()), 0) << stderr_text_;

  const double aligned = reported_tv(dir_ / "aligned"), vanilla = reported_tv(dir_ / "vanilla");
  EXPECT_GE(vanilla, 0.25);
  EXPECT_LE(vanilla, 0.35);
  EXPECT_LE(aligned, 0.05);

  const fs::path out = dir_ / "aligned";
  const auto report = read_json_file(out / "report.json");
  for (const char* key : {"version", "config", "solver", "metric_conventions", "memory", "rng", "grid"})
    EXPECT_TRUE(report.contains(key)) << key;
  for (const auto& b : report.at("batches")) EXPECT_NO_THROW(run_report_from_json(b));
  const CsvTable curve = read_csv(out / "cost_curve.csv");
  EXPECT_GT(curve.rows.size(), 0u);
  EXPECT_NO_THROW(curve.column("total_cost"));
  const CsvTable hist = read_csv(out / "histogram.csv");
  EXPECT_EQ(hist.rows.size(), 2u);
  const CsvTable samples = read_csv(out / "samples.csv");
  EXPECT_EQ(samples.rows.size(), 4096u);
  EXPECT_EQ(samples_from_table(samples).cols(), 2u);

  // Offline recomputation from the samples file.
  const std::size_t label = samples.column("label_class");
  Vector counts(2, 0.0);
  for (const auto& row : samples.rows) counts[static_cast<std::size_t>(row[label])] += 1.0 / 4096.0;
  const double tv = compare_distributions(counts, Vector{0.5, 0.5}).tv;
  EXPECT_NEAR(tv, aligned, 1e-12);
  const std::size_t p0 = samples.column("p_class_0");
  for (const auto& row : samples.rows) EXPECT_NEAR(row[p0] + row[p0 + 1], 1.0, 1e-12);

  // The eval subcommand reproduces the report's evaluation.
  nlohmann::json ev = base_config("mixture.json", "aligned");
  ev["eval"] = {{"samples", "aligned/samples.csv"}};
  ASSERT_EQ(run("eval --config " + write_config("eval.json", ev).string()), 0) << stderr_text_;
  const auto eval = read_json_file(out / "eval.json");
  EXPECT_EQ(eval.at("evaluation"), report.at("evaluation"));
}

TEST_F(Cli, GuidanceBaselines) {
  nlohmann::json van = base_config("mixture.json", "vanilla");
  van["samples"] = 1024;
  van["baseline"] = {{"method", "vanilla"}};
  ASSERT_EQ(run("baseline --config " + write_config("vanilla.json", van).string()), 0) << stderr_text_;
  nlohmann::json pg0 = van;
  pg0["output_dir"] = "pg0";
  pg0["baseline"] = {{"method", "pg"}, {"weight", 0.0}};
  ASSERT_EQ(run("baseline --config " + write_config("pg0.json", pg0).string()), 0) << stderr_text_;
  EXPECT_EQ(slurp(dir_ / "pg0" / "samples.csv"), slurp(dir_ / "vanilla" / "samples.csv"));
  nlohmann::json pg = van;
  pg["output_dir"] = "pg";
  pg["baseline"] = {{"method", "pg"}, {"weight", 0.5}};
  ASSERT_EQ(run("baseline --config " + write_config("pg.json", pg).string()), 0) << stderr_text_;
  EXPECT_LT(reported_tv(dir_ / "pg"), reported_tv(dir_ / "vanilla"));
  const auto report = read_json_file(dir_ / "pg" / "report.json");
  EXPECT_EQ(report.at("method"), "pg");
}

TEST_F(Cli, SweepWritesOneRowPerValue) {
  nlohmann::json doc = base_config("mixture.json", "sweep");
  doc["samples"] = 64;
  doc["solver"]["batch"] = 32;
  doc["solver"]["tol"] = 0.0;
  doc["sweep"] = {{"axis", "steps"}, {"values", {5, 10, 0}}};
  ASSERT_EQ(run("sweep --config " + write_config("sweep.json", doc).string()), 0) << stderr_text_;
  const CsvTable t = read_csv(dir_ / "sweep" / "sweep.csv");
  ASSERT_EQ(t.rows.size(), 3u);
  const std::size_t ok = t.column("ok");
  EXPECT_EQ(t.rows[0][ok], 1.0);
  EXPECT_EQ(t.rows[1][ok], 1.0);
  // K = 0 is invalid: recorded, and the sweep still finished.
  EXPECT_EQ(t.rows[2][ok], 0.0);
  EXPECT_GT(t.rows[1][t.column("seconds")], 0.0);
  const auto rep = read_json_file(dir_ / "sweep" / "sweep_report.json");
  EXPECT_EQ(rep.at("errors").size(), 1u);
}

TEST_F(Cli, OutFlagAndSeedOverride) {
  nlohmann::json doc = base_config("mixture.json", "ignored");
  doc["samples"] = 128;
  const fs::path cfg = write_config("c.json", doc);
  ASSERT_EQ(run("align --config " + cfg.string() + " --out " + (dir_ / "o1").string()), 0) << stderr_text_;
  ASSERT_EQ(run("align --config " + cfg.string() + " --out " + (dir_ / "o2").string()), 0);
  ASSERT_EQ(run("align --config " + cfg.string() + " --out " + (dir_ / "o3").string() + " --seed 2"), 0);
  EXPECT_FALSE(fs::exists(dir_ / "ignored"));
  EXPECT_EQ(slurp(dir_ / "o1" / "samples.csv"), slurp(dir_ / "o2" / "samples.csv"));
  EXPECT_NE(slurp(dir_ / "o1" / "samples.csv"), slurp(dir_ / "o3" / "samples.csv"));
}

TEST_F(Cli, ShippedConfigsParse) {
  for (const auto& entry : fs::directory_iterator(ATTRALIGN_CONFIG_DIR)) {
    const auto doc = read_json_file(entry.path());
    if (doc.contains("components")) {
      EXPECT_NO_THROW(mixture_from_json(doc).validate()) << entry.path();
      continue;
    }
    if (doc.contains("model")) continue;  // needs trained checkpoints
    EXPECT_NO_THROW(cli::load_experiment_config(entry.path())) << entry.path();
  }
}

TEST(Csv, RoundTripIsExact) {
  const auto path = fs::temp_directory_path() / "attralign_csv_roundtrip.csv";
  const CsvTable t{{"a", "b"}, {{0.1, 1e-300}, {-3.0, 123456.789012345678}}};
  write_csv(path, t);
  const CsvTable back = read_csv(path);
  fs::remove(path);
  EXPECT_EQ(back.header, t.header);
  EXPECT_EQ(back.rows, t.rows);
  EXPECT_EQ(format_double(0.1), "0.1");
}

}  // namespace
}  // namespace attralign
