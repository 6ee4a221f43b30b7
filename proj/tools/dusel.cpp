// dusel: domain-adaptive data-utility selection toolkit.
//
// Subcommands wrap the pipeline stages with file-based I/O so a whole
// experiment can run end to end (`dusel run`) or stage by stage.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include "dusel/pipeline.hpp"

namespace fs = std::filesystem;
using namespace dusel;

namespace {

struct CommonArgs {
  std::string config_path;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<int> workers;
  bool no_resume = false;
};

void add_common(CLI::App* cmd, CommonArgs& args, bool config_required = true) {
  auto* copt = cmd->add_option("--config", args.config_path, "experiment config (json)");
  if (config_required) copt->required();
  cmd->add_option("--out", args.out, "output directory (overrides the config)");
  cmd->add_option("--seed", args.seed, "master seed override");
  cmd->add_option("--workers", args.workers, "worker threads");
  cmd->add_flag("--no-resume", args.no_resume, "recompute stages even when artifacts match");
}

ExperimentConfig resolve_config(const CommonArgs& args) {
  ExperimentConfig cfg =
      args.config_path.empty() ? ExperimentConfig{} : load_config(args.config_path);
  if (args.seed) cfg.seed = *args.seed;
  if (args.workers) cfg.workers = *args.workers;
  validate(cfg);
  return cfg;
}

PipelineOptions resolve_options(const CommonArgs& args) {
  PipelineOptions opts;
  opts.resume = !args.no_resume;
  if (!args.out.empty()) opts.out_override = args.out;
  if (args.workers) opts.workers_override = *args.workers;
  return opts;
}

int run_stage(StageStatus (*stage)(const ExperimentConfig&, const PipelineOptions&),
              const CommonArgs& args) {
  try {
    ExperimentConfig cfg = resolve_config(args);
    StageStatus status = stage(cfg, resolve_options(args));
    std::cout << "[" << (status.ok ? (status.skipped ? "skip" : " ok ") : "FAIL") << "] "
              << status.name << (status.message.empty() ? "" : ": " + status.message) << "\n";
    return status.ok ? 0 : 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

Matrix read_matrix_csv(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  std::vector<double> values;
  int cols = 0, rows = 0;
  for (std::string line; std::getline(is, line);) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string field;
    int c = 0;
    while (std::getline(ss, field, ',')) {
      values.push_back(std::stod(field));
      ++c;
    }
    if (cols == 0) cols = c;
    if (c != cols) throw std::runtime_error("ragged csv row in " + path.string());
    ++rows;
  }
  return Matrix(rows, cols, std::move(values));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"domain-adaptive data-utility selection toolkit"};
  app.require_subcommand(1);

  CommonArgs args;

  auto* cmd_run = app.add_subcommand("run", "execute the full pipeline");
  add_common(cmd_run, args);

  auto* cmd_gen = app.add_subcommand("gen-data", "generate or ingest the domain pair");
  add_common(cmd_gen, args);
  auto* cmd_usample = app.add_subcommand("sample-utility", "build the utility dataset");
  add_common(cmd_usample, args);
  auto* cmd_train = app.add_subcommand("train", "joint feature/utility training");
  add_common(cmd_train, args);
  auto* cmd_eval = app.add_subcommand("evaluate", "score the selections");
  add_common(cmd_eval, args);

  auto* cmd_select = app.add_subcommand("select", "run data selection");
  add_common(cmd_select, args);
  std::string sel_strategy;
  int sel_budget = 0;
  std::optional<std::uint64_t> sel_seed;
  cmd_select->add_option("--strategy", sel_strategy,
                         "single strategy (omit to run the configured grid)");
  cmd_select->add_option("--budget", sel_budget, "budget for single-strategy mode");
  cmd_select->add_option("--selection-seed", sel_seed, "selection seed for single-strategy mode");

  auto* cmd_report = app.add_subcommand("report", "merge eval results into summary tables");
  add_common(cmd_report, args);
  std::vector<std::string> report_inputs;
  bool report_force = false;
  cmd_report->add_option("--inputs", report_inputs, "extra eval csv files to merge");
  cmd_report->add_flag("--force", report_force, "merge results from mismatched configs");

  auto* cmd_config = app.add_subcommand("config", "inspect configuration");
  bool print_defaults = false;
  cmd_config->add_flag("--defaults", print_defaults, "print the default config");
  std::string config_in;
  cmd_config->add_option("--config", config_in, "validate and echo this config");

  auto* cmd_predict = app.add_subcommand("predict-set", "score one embedded set");
  std::string phi_path, rho_path, emb_path;
  cmd_predict->add_option("--phi", phi_path, "phi checkpoint")->required();
  cmd_predict->add_option("--rho", rho_path, "rho checkpoint")->required();
  cmd_predict->add_option("--embeddings", emb_path, "csv matrix, one embedding per row")
      ->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (cmd_run->parsed()) {
      ExperimentConfig cfg = resolve_config(args);
      PipelineResult result = run_pipeline(cfg, resolve_options(args), &std::cout);
      return result.ok ? 0 : 1;
    }
    if (cmd_gen->parsed()) return run_stage(stage_gen_data, args);
    if (cmd_usample->parsed()) return run_stage(stage_sample_utility, args);
    if (cmd_train->parsed()) return run_stage(stage_train, args);
    if (cmd_eval->parsed()) return run_stage(stage_evaluate, args);

    if (cmd_select->parsed()) {
      if (sel_strategy.empty()) return run_stage(stage_select, args);
      ExperimentConfig cfg = resolve_config(args);
      PipelineOptions opts = resolve_options(args);
      fs::path out = pipeline_detail::out_dir(cfg, opts);
      auto data = pipeline_detail::load_data_artifacts(out);

      SelectionConfig scfg;
      scfg.budget = sel_budget;
      scfg.epsilon = cfg.select.epsilon;
      scfg.strategy = strategy_from_name(sel_strategy);
      scfg.seed = sel_seed.value_or(cfg.seed);

      SelectionResult result;
      if (scfg.strategy == Strategy::Random) {
        result = select_random(data.pair.target_pool, scfg);
      } else {
        fs::path model_dir =
            scfg.strategy == Strategy::OptimalOracle ? out / "train_optimal" : out / "train";
        auto model = pipeline_detail::load_train_artifacts(model_dir, cfg.train.lambda);
        switch (scfg.strategy) {
          case Strategy::D2ulo:
          case Strategy::OptimalOracle:
            result = stochastic_greedy(data.pair.target_pool, model.adapt, model.deepsets, scfg);
            break;
          case Strategy::Badge:
            result = select_badge(data.pair.target_pool, model.adapt, scfg);
            break;
          case Strategy::Aada:
            result = select_aada(data.pair.target_pool, model.adapt, scfg);
            break;
          case Strategy::Fass:
            result = select_fass(data.pair.target_pool, model.adapt, scfg);
            break;
          default:
            break;
        }
      }
      nlohmann::json j = selection_to_json(result);
      j["config_hash"] = config_hash(cfg);
      fs::create_directories(out / "select");
      fs::path sel_path = out / "select" /
                          (sel_strategy + "_b" + std::to_string(sel_budget) + "_s" +
                           std::to_string(scfg.seed) + ".json");
      std::ofstream os(sel_path);
      os << j.dump() << "\n";
      std::cout << j.dump() << "\n";
      return 0;
    }

    if (cmd_report->parsed()) {
      ExperimentConfig cfg = resolve_config(args);
      PipelineOptions opts = resolve_options(args);
      fs::path out = pipeline_detail::out_dir(cfg, opts);
      std::vector<fs::path> inputs;
      fs::path own = out / "eval" / "results.csv";
      if (fs::exists(own)) inputs.push_back(own);
      for (const auto& extra : report_inputs) inputs.emplace_back(extra);
      if (inputs.empty()) {
        std::cerr << "error: no eval results found; run the evaluate stage first\n";
        return 1;
      }
      fs::create_directories(out / "report");
      write_report(inputs, out / "report" / "summary.csv", report_force);
      std::cout << "[ ok ] report: " << (out / "report" / "summary.csv").string() << "\n";
      return 0;
    }

    if (cmd_config->parsed()) {
      if (print_defaults) {
        std::cout << to_json(ExperimentConfig{}).dump(2) << "\n";
        return 0;
      }
      if (!config_in.empty()) {
        ExperimentConfig cfg = load_config(config_in);
        validate(cfg);
        nlohmann::json j = to_json(cfg);
        std::cout << j.dump(2) << "\n";
        std::ostringstream hash_hex;
        hash_hex << std::hex << config_hash(cfg);
        std::cout << "config_hash: " << hash_hex.str() << "\n";
        return 0;
      }
      std::cerr << "config: pass --defaults or --config FILE\n";
      return 1;
    }

    if (cmd_predict->parsed()) {
      DeepSetsModel model;
      model.phi = load_net(phi_path);
      model.rho = load_net(rho_path);
      model.input_dim = model.phi.layers.front().w.rows;
      Matrix emb = read_matrix_csv(emb_path);
      std::cout.precision(17);
      std::cout << ds_predict(model, emb) << "\n";
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
