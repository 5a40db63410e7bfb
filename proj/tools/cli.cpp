#include "cli.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "attralign/memory.hpp"
#include "attralign/report.hpp"

namespace attralign::cli {

namespace fs = std::filesystem;

fs::path ExperimentConfig::resolve(const fs::path& p) const { return p.is_absolute() ? p : base_dir / p; }

namespace {

void log(const ExperimentConfig& cfg, const std::string& msg) {
  if (!cfg.quiet) std::cerr << msg << '\n';
}

fs::path existing_file(const ExperimentConfig& cfg, const nlohmann::json& value, const std::string& what) {
  const fs::path p = cfg.resolve(value.get<std::string>());
  if (!fs::exists(p)) throw ConfigError(what + " not found: " + p.string());
  return p;
}

TimeEmbedding embedding_from_json(const nlohmann::json& t) {
  const std::string mode = t.value("embedding", "raw_scalar");
  if (mode == "raw_scalar") return TimeEmbedding::raw_scalar();
  if (mode == "sinusoidal") return TimeEmbedding::sinusoidal(t.value("frequencies", std::size_t{4}));
  throw ConfigError("train.embedding must be raw_scalar or sinusoidal");
}

// Metrics used for one-line summaries and sweep rows: the joint comparison in
// joint mode, otherwise the average over axes.
DistributionMetrics headline(const AttributeEvaluation& e) {
  if (e.joint_metrics) return *e.joint_metrics;
  DistributionMetrics m;
  for (const auto& a : e.axis_metrics) {
    m.tv += a.tv;
    m.js += a.js;
    m.chi2 += a.chi2;
    m.kl += a.kl;
  }
  const double n = static_cast<double>(e.axis_metrics.size());
  m.tv /= n;
  m.js /= n;
  m.chi2 /= n;
  m.kl /= n;
  return m;
}

double sigma_data_of(const MixtureSpec& mixture) {
  const std::size_t n = mixture.dim();
  Vector mean(n, 0.0);
  double second = 0.0;
  for (const auto& c : mixture.components) {
    axpy(c.weight, c.mean, mean);
    second += c.weight * (squared_norm(c.mean) / static_cast<double>(n) + c.stddev * c.stddev);
  }
  return std::sqrt(second - squared_norm(mean) / static_cast<double>(n));
}

nlohmann::json grid_json(const TimeGrid& grid) {
  return {{"kind", to_string(grid.kind)}, {"origin", grid.origin}, {"steps", grid.steps()}, {"max_step", grid.max_step()}};
}

nlohmann::json memory_json(const BatchRun& run) {
  nlohmann::json m{{"note", "approximate: heap bytes from a counting allocator, resident peak from VmHWM"}};
  m["peak_heap_bytes"] = run.peak_heap_bytes ? nlohmann::json(*run.peak_heap_bytes) : nlohmann::json(nullptr);
  m["peak_resident_bytes"] = run.peak_resident_bytes ? nlohmann::json(*run.peak_resident_bytes) : nlohmann::json(nullptr);
  return m;
}

nlohmann::json report_header(const ExperimentConfig& cfg, const std::string& command) {
  return {{"command", command},
          {"version", version_string()},
          {"config", cfg.raw},
          {"solver", to_json(cfg.solver)},
          {"instance", to_string(cfg.instance)},
          {"grid", grid_json(make_grid(cfg, cfg.solver.steps))},
          {"rng", std::string(Rng::kIdentity)},
          {"metric_conventions", metric_conventions()}};
}

void write_outputs(const ExperimentConfig& cfg, const AttributeOracle& oracle, const BatchRun& run,
                   nlohmann::json report) {
  fs::create_directories(cfg.output_dir);
  const TargetSpec& target = *cfg.target;
  const AttributeEvaluation eval = evaluate_attributes(oracle, run.samples, target, cfg.solver.estimator);
  report["samples"] = run.samples.rows();
  report["evaluation"] = to_json(eval, target);
  report["seconds"] = run.seconds;
  report["memory"] = memory_json(run);
  if (!run.reports.empty()) {
    nlohmann::json batches = nlohmann::json::array();
    std::size_t most = 0;
    CsvTable curve{{"batch", "iteration", "total_cost", "terminal_cost", "control_energy", "forward_seconds",
                    "backward_seconds"},
                   {}};
    for (std::size_t b = 0; b < run.reports.size(); ++b) {
      batches.push_back(to_json(run.reports[b]));
      most = std::max(most, run.reports[b].iterations_run());
      for (auto row : cost_curve_table(run.reports[b]).rows) {
        row.insert(row.begin(), static_cast<double>(b));
        curve.rows.push_back(std::move(row));
      }
    }
    report["batches"] = batches;
    report["max_iterations_run"] = most;
    write_csv(cfg.output_dir / "cost_curve.csv", curve);
  }
  write_json_file(cfg.output_dir / "report.json", report);
  write_csv(cfg.output_dir / "histogram.csv", histogram_table(eval, target));
  write_csv(cfg.output_dir / "samples.csv", samples_table(run.samples, oracle));
  const DistributionMetrics m = headline(eval);
  log(cfg, "TV " + format_double(m.tv) + "  JS " + format_double(m.js) + "  chi2 " + format_double(m.chi2) +
               "  FD " + format_double(eval.fairness_discrepancy) + "  -> " + cfg.output_dir.string());
}

}  // namespace

ExperimentConfig experiment_config_from_json(const nlohmann::json& doc, const fs::path& base_dir) {
  ExperimentConfig cfg;
  cfg.base_dir = base_dir;
  cfg.raw = doc;
  try {
    if (doc.contains("mixture")) cfg.mixture_path = existing_file(cfg, doc.at("mixture"), "mixture file");
    if (doc.contains("model")) {
      const auto& model = doc.at("model");
      if (model.contains("checkpoint")) cfg.checkpoint_path = existing_file(cfg, model.at("checkpoint"), "checkpoint");
    }
    if (doc.contains("instance")) cfg.instance = instance_kind_from_string(doc.at("instance").get<std::string>());
    if (doc.contains("grid")) {
      const auto& g = doc.at("grid");
      cfg.grid = g.value("kind", cfg.grid);
      cfg.horizon = g.value("horizon", cfg.horizon);
      if (cfg.grid != "uniform" && cfg.grid != "karras") throw ConfigError("grid.kind must be uniform or karras");
    }
    if (doc.contains("oracle")) {
      const auto& o = doc.at("oracle");
      cfg.oracle = o.value("kind", cfg.oracle);
      cfg.temperature = o.value("temperature", cfg.temperature);
      if (cfg.oracle == "file") {
        cfg.oracle_path = existing_file(cfg, o.at("path"), "oracle file");
      } else if (cfg.oracle != "analytic") {
        throw ConfigError("oracle.kind must be analytic or file");
      }
    }
    if (doc.contains("target")) {
      const auto& t = doc.at("target");
      cfg.target = t.is_string() ? read_target_file(existing_file(cfg, t, "target file")) : target_from_json(t);
    }
    if (doc.contains("solver")) cfg.solver = solver_config_from_json(doc.at("solver"), cfg.solver);
    cfg.samples = doc.value("samples", cfg.samples);
    if (doc.contains("output_dir"))
      cfg.output_dir = cfg.resolve(doc.at("output_dir").get<std::string>()).lexically_normal();
    else
      cfg.output_dir = cfg.resolve(cfg.output_dir).lexically_normal();
    if (doc.contains("train")) {
      const auto& t = doc.at("train");
      TrainConfig& n = cfg.train.net;
      n.steps = t.value("steps", n.steps);
      n.batch = t.value("batch", n.batch);
      n.adam.learning_rate = t.value("learning_rate", n.adam.learning_rate);
      n.sigma_min = t.value("sigma_min", n.sigma_min);
      n.sigma_max = t.value("sigma_max", n.sigma_max);
      n.ddim_levels = t.value("ddim_levels", n.ddim_levels);
      n.alpha_bar_max = t.value("alpha_bar_max", n.alpha_bar_max);
      n.alpha_bar_min = t.value("alpha_bar_min", n.alpha_bar_min);
      cfg.train.hidden = t.value("hidden", cfg.train.hidden);
      cfg.train.embedding = embedding_from_json(t);
      if (t.contains("classifier")) {
        const auto& c = t.at("classifier");
        cfg.train.classifier.steps = c.value("steps", cfg.train.classifier.steps);
        cfg.train.classifier.batch = c.value("batch", cfg.train.classifier.batch);
        cfg.train.classifier.hidden = c.value("hidden", cfg.train.classifier.hidden);
        cfg.train.classifier.label_smoothing = c.value("label_smoothing", cfg.train.classifier.label_smoothing);
      }
    }
    if (doc.contains("baseline")) {
      cfg.baseline_method = doc.at("baseline").value("method", cfg.baseline_method);
      cfg.baseline_weight = doc.at("baseline").value("weight", cfg.baseline_weight);
    }
    if (doc.contains("sweep")) {
      cfg.sweep_axis = doc.at("sweep").at("axis").get<std::string>();
      cfg.sweep_values = doc.at("sweep").at("values").get<std::vector<double>>();
    }
    if (doc.contains("eval") && doc.at("eval").contains("samples"))
      cfg.eval_samples = cfg.resolve(doc.at("eval").at("samples").get<std::string>());
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(std::string("invalid config: ") + e.what());
  }
  if (!cfg.mixture_path && !cfg.checkpoint_path) throw ConfigError("config needs a mixture or a model checkpoint");
  try {
    cfg.solver.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("invalid solver settings: ") + e.what());
  }
  if (cfg.samples < cfg.solver.batch) throw ConfigError("samples must be at least the batch size");
  return cfg;
}

ExperimentConfig load_experiment_config(const fs::path& path) {
  if (!fs::exists(path)) throw ConfigError("config file not found: " + path.string());
  nlohmann::json doc;
  try {
    doc = read_json_file(path);
  } catch (const std::exception& e) {
    throw ConfigError("cannot parse " + path.string() + ": " + e.what());
  }
  return experiment_config_from_json(doc, fs::absolute(path).parent_path());
}

MixtureSpec load_mixture(const ExperimentConfig& cfg) {
  if (!cfg.mixture_path) throw ConfigError("config has no mixture file");
  try {
    return read_mixture_file(*cfg.mixture_path);
  } catch (const std::exception& e) {
    throw ConfigError("bad mixture file " + cfg.mixture_path->string() + ": " + e.what());
  }
}

GenerativeModel load_model(const ExperimentConfig& cfg) {
  if (cfg.checkpoint_path) return GenerativeModel::from_checkpoint(read_checkpoint(*cfg.checkpoint_path));
  return GenerativeModel::analytic(load_mixture(cfg));
}

TimeGrid make_grid(const ExperimentConfig& cfg, std::size_t steps) {
  switch (cfg.instance) {
    case InstanceKind::edm:
      return cfg.grid == "karras" ? TimeGrid::edm_karras(cfg.horizon, steps) : TimeGrid::edm_uniform(cfg.horizon, steps);
    case InstanceKind::ddim: {
      const TrainConfig& t = cfg.train.net;
      const auto bars = ddim_alpha_bars(t.ddim_levels, t.alpha_bar_max, t.alpha_bar_min);
      return TimeGrid::ddim_schedule(bars, steps);
    }
    case InstanceKind::flow:
      return TimeGrid::flow_uniform(steps);
  }
  throw ConfigError("unknown instance");
}

AttributeOracle load_oracle(const ExperimentConfig& cfg) {
  if (cfg.oracle_path) return read_oracle_file(*cfg.oracle_path);
  return AttributeOracle::analytic_from_mixture(load_mixture(cfg), cfg.temperature);
}

BatchRun run_batches(const ExperimentConfig& cfg, const std::string& method, double weight) {
  if (!cfg.target) throw ConfigError("config has no target");
  const GenerativeModel model = load_model(cfg);
  const AttributeOracle oracle = load_oracle(cfg);
  cfg.target->check_compatible(oracle);
  const SolverConfig& sc = cfg.solver;
  const TimeGrid grid = make_grid(cfg, sc.steps);
  const ControlledDynamics dyn = ControlledDynamics::for_grid(model, grid);
  const std::size_t n = dyn.state_dim();
  const std::size_t batches = (cfg.samples + sc.batch - 1) / sc.batch;

  BatchRun run;
  run.samples = Matrix(batches * sc.batch, n);
  memory::reset_heap_peak();
  memory::reset_resident_peak();
  Rng rng(sc.seed);
  const auto start = std::chrono::steady_clock::now();
  for (std::size_t b = 0; b < batches; ++b) {
    const Matrix x0 = dyn.initial_state(sample_standard_normal(rng, sc.batch, n));
    Matrix out;
    if (method == "align") {
      SolveResult r = solve_emsa(dyn, grid, oracle, *cfg.target, sc, x0);
      out = std::move(r.samples);
      run.reports.push_back(std::move(r.report));
    } else if (method == "vanilla") {
      out = dyn.terminal_sample(vanilla_sample(dyn, grid, x0), grid.horizon());
    } else if (method == "pg") {
      out = dyn.terminal_sample(particle_guidance_sample(dyn, grid, oracle, *cfg.target, weight, x0, sc.estimator),
                                grid.horizon());
    } else {
      throw ConfigError("unknown method '" + method + "' (expected vanilla or pg)");
    }
    for (std::size_t i = 0; i < sc.batch; ++i)
      std::copy(out.row(i).begin(), out.row(i).end(), run.samples.row(b * sc.batch + i).begin());
  }
  run.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (memory::heap_tracking_enabled()) run.peak_heap_bytes = memory::heap_peak_bytes();
  run.peak_resident_bytes = memory::resident_peak_bytes();
  return run;
}

int cmd_train(const ExperimentConfig& cfg) {
  const MixtureSpec mixture = load_mixture(cfg);
  fs::create_directories(cfg.output_dir);
  const std::size_t n = mixture.dim();
  const TrainSection& t = cfg.train;
  Rng rng(cfg.solver.seed);
  const double sigma_data = sigma_data_of(mixture);
  nlohmann::json summary{{"command", "train"}, {"version", version_string()}, {"config", cfg.raw},
                         {"sigma_data", sigma_data}, {"rng", std::string(Rng::kIdentity)}};

  const auto make_net = [&](HeadKind head) { return MlpNet::make(n, t.hidden, n, t.embedding, head, rng.next_u64()); };
  nlohmann::json train_meta{{"steps", t.net.steps},         {"batch", t.net.batch},
                            {"adam", to_json(t.net.adam)}, {"sigma_min", t.net.sigma_min},
                            {"sigma_max", t.net.sigma_max}, {"ddim_levels", t.net.ddim_levels},
                            {"alpha_bar_max", t.net.alpha_bar_max}, {"alpha_bar_min", t.net.alpha_bar_min}};

  log(cfg, "training score model");
  TrainResult score = train_score_dsm(make_net(HeadKind::score), mixture, sigma_data, t.net, rng);
  log(cfg, "training noise model");
  TrainResult noise = train_noise_pred(make_net(HeadKind::noise), mixture, t.net, rng);
  log(cfg, "training velocity model");
  TrainResult velocity = train_velocity_fm(make_net(HeadKind::velocity), mixture, t.net, rng);
  log(cfg, "training attribute classifier");
  ClassifierResult classifier = train_classifier(mixture, t.classifier, rng);

  nlohmann::json meta = train_meta;
  meta["sigma_data"] = sigma_data;
  write_checkpoint(cfg.output_dir / "score.ckpt.json", {score.net, meta});
  write_checkpoint(cfg.output_dir / "noise.ckpt.json", {noise.net, train_meta});
  nlohmann::json velocity_meta = train_meta;
  velocity_meta["time_direction"] = "data at t = 0, noise at t = 1";
  write_checkpoint(cfg.output_dir / "velocity.ckpt.json", {velocity.net, velocity_meta});
  write_oracle_file(cfg.output_dir / "oracle.json", classifier.oracle);

  CsvTable curve{{"step", "score_loss", "noise_loss", "velocity_loss"}, {}};
  for (std::size_t s = 0; s < score.losses.size(); ++s)
    curve.rows.push_back({static_cast<double>(s), score.losses[s], noise.losses[s], velocity.losses[s]});
  write_csv(cfg.output_dir / "train_log.csv", curve);

  summary["final_loss"] = {{"score", score.final_loss}, {"noise", noise.final_loss}, {"velocity", velocity.final_loss},
                           {"classifier", classifier.final_losses}};
  Rng held_out(cfg.solver.seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<std::size_t> comps;
  const Matrix test = mixture.sample(held_out, 4096, &comps);
  nlohmann::json acc = nlohmann::json::object();
  for (std::size_t a = 0; a < classifier.oracle.axis_count(); ++a) {
    const auto& name = classifier.oracle.axes()[a].name;
    acc[name] = oracle_accuracy(classifier.oracle, a, test, component_labels(mixture, name, comps));
  }
  summary["classifier_accuracy"] = acc;
  write_json_file(cfg.output_dir / "train_summary.json", summary);
  log(cfg, "checkpoints written to " + cfg.output_dir.string());
  return 0;
}

int cmd_align(const ExperimentConfig& cfg) {
  const BatchRun run = run_batches(cfg, "align");
  write_outputs(cfg, load_oracle(cfg), run, report_header(cfg, "align"));
  return 0;
}

int cmd_baseline(const ExperimentConfig& cfg) {
  const BatchRun run = run_batches(cfg, cfg.baseline_method, cfg.baseline_weight);
  nlohmann::json header = report_header(cfg, "baseline");
  header["method"] = cfg.baseline_method;
  header["weight"] = cfg.baseline_weight;
  write_outputs(cfg, load_oracle(cfg), run, header);
  return 0;
}

int cmd_eval(const ExperimentConfig& cfg) {
  if (!cfg.target) throw ConfigError("config has no target");
  const fs::path path = cfg.eval_samples ? *cfg.eval_samples : cfg.output_dir / "samples.csv";
  if (!fs::exists(path)) throw ConfigError("samples file not found: " + path.string());
  const Matrix samples = samples_from_table(read_csv(path));
  const AttributeOracle oracle = load_oracle(cfg);
  const AttributeEvaluation eval = evaluate_attributes(oracle, samples, *cfg.target, cfg.solver.estimator);
  nlohmann::json doc{{"command", "eval"},
                     {"version", version_string()},
                     {"samples_file", path.string()},
                     {"samples", samples.rows()},
                     {"evaluation", to_json(eval, *cfg.target)},
                     {"metric_conventions", metric_conventions()}};
  fs::create_directories(cfg.output_dir);
  write_json_file(cfg.output_dir / "eval.json", doc);
  const DistributionMetrics m = headline(eval);
  log(cfg, "TV " + format_double(m.tv) + "  JS " + format_double(m.js) + "  chi2 " + format_double(m.chi2) +
               "  FD " + format_double(eval.fairness_discrepancy));
  return 0;
}

int cmd_sweep(const ExperimentConfig& cfg) {
  if (cfg.sweep_values.empty()) throw ConfigError("sweep.values must be nonempty");
  const std::string& axis = cfg.sweep_axis;
  if (axis != "batch" && axis != "iters" && axis != "steps") throw ConfigError("sweep.axis must be batch, iters or steps");
  const AttributeOracle oracle = load_oracle(cfg);
  fs::create_directories(cfg.output_dir);
  CsvTable table{{"value", "ok", "tv", "js", "chi2", "fd", "seconds", "seconds_per_sample", "peak_heap_bytes",
                  "peak_resident_bytes"},
                 {}};
  nlohmann::json errors = nlohmann::json::array();
  for (double value : cfg.sweep_values) {
    ExperimentConfig row_cfg = cfg;
    const auto v = static_cast<std::size_t>(std::llround(value));
    if (axis == "batch") row_cfg.solver.batch = v;
    if (axis == "iters") row_cfg.solver.max_iters = v;
    if (axis == "steps") row_cfg.solver.steps = v;
    row_cfg.samples = std::max(cfg.samples, row_cfg.solver.batch);
    try {
      row_cfg.solver.validate();
      const BatchRun run = run_batches(row_cfg, "align");
      const AttributeEvaluation eval = evaluate_attributes(oracle, run.samples, *cfg.target, cfg.solver.estimator);
      const DistributionMetrics m = headline(eval);
      table.rows.push_back({value, 1.0, m.tv, m.js, m.chi2, eval.fairness_discrepancy, run.seconds,
                            run.seconds / static_cast<double>(run.samples.rows()),
                            static_cast<double>(run.peak_heap_bytes.value_or(0)),
                            static_cast<double>(run.peak_resident_bytes.value_or(0))});
      log(cfg, axis + "=" + format_double(value) + "  TV " + format_double(m.tv) + "  " + format_double(run.seconds) + " s");
    } catch (const std::exception& e) {
      table.rows.push_back({value, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0});
      errors.push_back({{"value", value}, {"error", e.what()}});
      log(cfg, axis + "=" + format_double(value) + " failed: " + e.what());
    }
  }
  write_csv(cfg.output_dir / "sweep.csv", table);
  write_json_file(cfg.output_dir / "sweep_report.json",
                  {{"command", "sweep"}, {"version", version_string()}, {"axis", axis}, {"config", cfg.raw},
                   {"errors", errors}, {"memory_note", "peak memory columns are approximate"}});
  return 0;
}

int run(int argc, const char* const* argv) {
  CLI::App app{"Attribute-distribution alignment for probability-flow samplers"};
  app.require_subcommand(1);
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
  bool quiet = false;
  app.add_option("--config", config_path, "Experiment config (JSON)")->required();
  app.add_option("--seed", seed, "Override the config seed");
  app.add_option("--out", out_dir, "Override the output directory");
  app.add_flag("--quiet", quiet, "Suppress progress output");
  app.fallthrough();
  app.add_subcommand("train", "Fit score, noise and velocity nets and the attribute classifier");
  app.add_subcommand("align", "Run the controlled sampler against the target");
  app.add_subcommand("baseline", "Vanilla or particle-guidance sampling");
  app.add_subcommand("eval", "Score a samples CSV against the target");
  app.add_subcommand("sweep", "Repeat align over one solver setting");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    ExperimentConfig cfg = load_experiment_config(config_path);
    if (seed) cfg.solver.seed = *seed;
    if (!out_dir.empty()) cfg.output_dir = out_dir;
    cfg.quiet = quiet;
    const std::string cmd = app.get_subcommands().front()->get_name();
    if (cmd == "train") return cmd_train(cfg);
    if (cmd == "align") return cmd_align(cfg);
    if (cmd == "baseline") return cmd_baseline(cfg);
    if (cmd == "eval") return cmd_eval(cfg);
    return cmd_sweep(cfg);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const TrainingDiverged& e) {
    std::cerr << "training diverged: " << e.what() << '\n';
    return 3;
  } catch (const NonFiniteError& e) {
    std::cerr << "solver aborted: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}

}  // namespace attralign::cli
