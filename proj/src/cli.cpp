#include "changer/cli.hpp"

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <Eigen/Core>

#include "changer/checkpoint.hpp"
#include "changer/config.hpp"
#include "changer/gradcheck_suite.hpp"

namespace changer {

namespace fs = std::filesystem;

namespace {

struct RunOptions {
  std::string config_path;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::string out;
};

void add_run_options(CLI::App* cmd, RunOptions& o) {
  cmd->add_option("--config", o.config_path, "Config file of key = value lines");
  cmd->add_option("--set", o.overrides, "Override one key (key=value), repeatable")->take_all();
  cmd->add_option("--seed", o.seed, "Random seed");
  cmd->add_option("--out", o.out, "Output directory");
}

RunConfig resolve(const RunOptions& o) {
  RunConfig cfg = o.config_path.empty() ? RunConfig{} : load_config_file(o.config_path);
  for (const std::string& s : o.overrides) apply_override(cfg, s);
  if (o.seed) cfg.seed = *o.seed;
  if (!o.out.empty()) cfg.out = o.out;
  try {
    cfg.model.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return cfg;
}

std::size_t params_with_prefix(const Parameters& params, std::initializer_list<std::string_view> prefixes) {
  std::size_t n = 0;
  for (const ParamEntry& e : params) {
    for (std::string_view p : prefixes) {
      if (std::string_view(e.name).substr(0, p.size()) == p) {
        n += e.value.numel();
        break;
      }
    }
  }
  return n;
}

struct TrainOutcome {
  std::unique_ptr<ChangerModel> model;
  TrainResult result;
};

TrainOutcome train_run(const RunConfig& cfg, std::ostream* csv) {
  const Datasets data = make_datasets(cfg);
  TrainOutcome outcome;
  outcome.model = std::make_unique<ChangerModel>(cfg.model, cfg.seed);
  outcome.result = train_loop(*outcome.model, cfg.train, cfg.seed, data.train, data.eval, csv);
  return outcome;
}

int cmd_train(const RunOptions& o, std::ostream& out) {
  const RunConfig cfg = resolve(o);
  fs::create_directories(cfg.out);
  const fs::path dir(cfg.out);
  std::ofstream csv(dir / "metrics.csv", std::ios::binary);
  if (!csv) throw std::runtime_error("cannot write " + (dir / "metrics.csv").string());
  const TrainOutcome run = train_run(cfg, &csv);
  csv.close();

  const std::string text = serialize(cfg);
  save_checkpoint((dir / "model.ckpt").string(), text, run.model->params());
  std::ofstream(dir / "config.cfg", std::ios::binary) << text;

  const Parameters& p = run.model->params();
  const TrainLogRow& last = run.result.log.back();
  char loss[32];
  std::snprintf(loss, sizeof loss, "%.6f", last.loss);
  out << "variant=" << to_string(cfg.model.variant) << " params=" << param_count(p)
      << " encoder_params=" << params_with_prefix(p, {"encoder.", "interact."})
      << " macs=" << run.model->mac_count(1, cfg.data.size, cfg.data.size) << " iters=" << cfg.train.max_iters
      << " loss=" << loss << ' ' << format_report(run.result.final_report) << '\n';
  return 0;
}

int cmd_eval(const std::string& checkpoint, const std::string& data_dir, std::ostream& out) {
  const Checkpoint ckpt = load_checkpoint(checkpoint);
  RunConfig cfg = parse_config(ckpt.header);
  if (!data_dir.empty()) {
    cfg.data.source = DataSource::Directory;
    cfg.data.dir = data_dir;
    cfg.data.eval_dir = data_dir;
  }
  ChangerModel model(cfg.model, cfg.seed);
  restore_parameters(ckpt, model.params());
  const Datasets data = make_datasets(cfg, false);
  out << format_report(evaluate(model, data.eval)) << '\n';
  return 0;
}

int cmd_gradcheck(const std::string& scope, std::uint64_t seed, std::optional<double> tol, const std::string& fault,
                  std::ostream& out) {
  const auto cases = select_gradcheck_cases(scope);
  if (fault == "sigmoid") {
    inject_fault(Fault::NegateSigmoidBackward);
  } else if (!fault.empty()) {
    throw std::invalid_argument("unknown fault '" + fault + "' (expected sigmoid)");
  }
  struct Reset {
    ~Reset() { inject_fault(Fault::None); }
  } reset;

  bool all_passed = true;
  char line[160];
  std::snprintf(line, sizeof line, "%-18s %-9s %-8s %-12s %-6s %s\n", "case", "module", "tol", "worst", "status",
                "worst_leaf");
  out << line;
  for (const GradCheckCase* c : cases) {
    GradCheckOptions options;
    options.seed = seed;
    options.tol = tol.value_or(c->tol);
    options.probes_per_leaf = c->probes_per_leaf;
    options.eps = c->eps;
    const GradCheckReport r = c->run(options);
    all_passed = all_passed && r.passed;
    std::snprintf(line, sizeof line, "%-18s %-9s %-8.0e %-12.3e %-6s %s\n", c->name.c_str(), c->module.c_str(),
                  options.tol, r.worst, r.passed ? "PASS" : "FAIL", r.worst_leaf.c_str());
    out << line;
  }
  return all_passed ? 0 : 2;
}

struct AblationPoint {
  std::string label;
  RunConfig config;
};

std::vector<AblationPoint> ablation_grid(const RunConfig& base, const std::string& axis, InteractKind exchange_kind) {
  std::vector<AblationPoint> grid;
  if (axis == "stage") {
    for (int first : {4, 3, 2, 1}) {
      RunConfig c = base;
      std::string label = "stages=";
      for (int i = 0; i < 4; ++i) {
        auto& spec = c.model.stages[static_cast<std::size_t>(i)].interact;
        spec = InteractSpec{};
        if (i + 1 >= first) {
          spec.kind = exchange_kind;
          label += (i + 1 > first ? "+" : "") + std::to_string(i + 1);
        }
      }
      grid.push_back({label, c});
    }
  } else if (axis == "ratio") {
    for (int p : {2, 4, 8, 16, 32}) {
      RunConfig c = base;
      for (auto& s : c.model.stages) {
        if (s.interact.kind == exchange_kind) s.interact.period = p;
      }
      grid.push_back({"1/" + std::to_string(p), c});
    }
  } else if (axis == "window") {
    for (int w : {1, 2, 4, 8}) {
      RunConfig c = base;
      for (auto& s : c.model.stages) {
        if (s.interact.kind == InteractKind::SpatialExchange) s.interact.window = w;
      }
      grid.push_back({std::to_string(w) + "x" + std::to_string(w), c});
    }
  } else {
    throw std::invalid_argument("unknown ablation axis '" + axis + "' (expected stage, ratio, window)");
  }
  return grid;
}

int cmd_ablate(const RunOptions& o, const std::string& axis, const std::string& exchange, std::ostream& out) {
  const RunConfig base = resolve(o);
  InteractKind kind = InteractKind::ChannelExchange;
  if (exchange == "spatial") {
    kind = InteractKind::SpatialExchange;
  } else if (exchange != "channel") {
    throw std::invalid_argument("unknown exchange kind '" + exchange + "' (expected channel, spatial)");
  }
  const auto grid = ablation_grid(base, axis, axis == "window" ? InteractKind::SpatialExchange : kind);
  fs::create_directories(base.out);
  const fs::path path = fs::path(base.out) / ("ablate_" + axis + ".csv");
  const bool fresh = !fs::exists(path) || fs::file_size(path) == 0;
  std::ofstream csv(path, std::ios::binary | std::ios::app);
  if (!csv) throw std::runtime_error("cannot write " + path.string());
  if (fresh) csv << "setting,P,R,F1\n";
  for (const AblationPoint& point : grid) {
    const TrainOutcome run = train_run(point.config, nullptr);
    const EvalReport& r = run.result.final_report;
    char row[128];
    std::snprintf(row, sizeof row, "%s,%.6f,%.6f,%.6f\n", point.label.c_str(), r.precision, r.recall, r.f1);
    csv << row << std::flush;
    out << row << std::flush;
  }
  out << "wrote " << path.string() << '\n';
  return 0;
}

void apply_thread_cap() {
  if (const char* env = std::getenv("CHANGER_THREADS")) {
    const int n = std::atoi(env);
    if (n > 0) Eigen::setNbThreads(n);
  }
}

} // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Bi-temporal change detection: train, evaluate, gradient-check and ablate", "changer"};
  app.require_subcommand(1);

  RunOptions train_opts;
  auto* train = app.add_subcommand("train", "Train a model and write metrics.csv, model.ckpt and config.cfg");
  add_run_options(train, train_opts);

  std::string checkpoint;
  std::string data_dir;
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint and print P/R/F1");
  eval->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
  eval->add_option("--data", data_dir, "Dataset directory with A/, B/, label/ (default: the run's eval split)");

  std::string scope = "all";
  std::uint64_t gc_seed = 0;
  std::optional<double> gc_tol;
  std::string fault;
  auto* gradcheck = app.add_subcommand("gradcheck", "Compare analytic and finite-difference gradients");
  gradcheck->add_option("scope", scope, "all, a module (tensor, interact, fusion, model, train) or a case name");
  gradcheck->add_option("--seed", gc_seed, "Random seed");
  gradcheck->add_option("--tol", gc_tol, "Override every case's tolerance");
  gradcheck->add_option("--inject-fault", fault, "Deliberately break a backward rule (sigmoid)");

  RunOptions ablate_opts;
  std::string axis;
  std::string exchange = "channel";
  auto* ablate = app.add_subcommand("ablate", "Train one model per grid point of an ablation axis");
  add_run_options(ablate, ablate_opts);
  ablate->add_option("--axis", axis, "stage, ratio or window")->required();
  ablate->add_option("--exchange", exchange, "Exchange kind swept on the stage and ratio axes (channel, spatial)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? 0 : 1;
  }
  apply_thread_cap();

  try {
    if (*train) return cmd_train(train_opts, out);
    if (*eval) return cmd_eval(checkpoint, data_dir, out);
    if (*gradcheck) return cmd_gradcheck(scope, gc_seed, gc_tol, fault, out);
    if (*ablate) return cmd_ablate(ablate_opts, axis, exchange, out);
  } catch (const NumericError& e) {
    err << "numeric failure: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}

} // namespace changer
