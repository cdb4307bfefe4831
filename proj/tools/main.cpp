#include <iostream>
#include <optional>

#include <CLI11.hpp>

#include "fairdistill/experiment.hpp"

namespace fd = fairdistill;

namespace {

enum Exit { kOk = 0, kRuntime = 1, kConfig = 2 };

struct Globals {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  bool deterministic = false;
  std::string label_column;
  std::string sensitive_column;
  bool utility_on_pseudo = false;
};

fd::ExperimentConfig resolve(const Globals& g) {
  fd::ExperimentConfig cfg = g.config.empty() ? fd::default_config() : fd::load_config(g.config);
  if (!g.out.empty()) cfg.out_dir = g.out;
  if (g.seed) cfg.seeds = {*g.seed};
  if (!g.label_column.empty()) cfg.load.label_column = g.label_column;
  if (!g.sensitive_column.empty()) cfg.load.sensitive_column = g.sensitive_column;
  if (g.utility_on_pseudo) cfg.distill.utility_on_pseudo = true;
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Fair knowledge distillation for graph neural networks."};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config, "INI config file, or a manifest.json from an earlier run");
  app.add_option("--out", g.out, "Output directory (overrides [run] out)");
  app.add_option("--seed", g.seed, "Run a single seed (overrides [run] seeds)");
  app.add_flag("--deterministic", g.deterministic, "Omit timestamps from plots");
  app.add_option("--label-column", g.label_column, "Label column of the attribute CSV");
  app.add_option("--sensitive-column", g.sensitive_column, "Sensitive-attribute column of the attribute CSV");
  app.add_flag("--utility-on-pseudo", g.utility_on_pseudo, "Add a utility term on the pseudo-proxy inputs");

  std::string report_dir;
  auto* train = app.add_subcommand("train-teacher", "Train one teacher per seed and save checkpoints");
  auto* distill = app.add_subcommand("distill", "Distill the teacher with the configured method");
  auto* sweep = app.add_subcommand("sweep", "Run the configured lambda or proxy_dim sweep");
  auto* ablate = app.add_subcommand("ablate", "Compare vanilla, proxy-only and full training");
  auto* synth = app.add_subcommand("synth", "Write the configured synthetic graph as CSV");
  auto* report = app.add_subcommand("report", "Re-render plots from CSVs in a run directory");
  report->add_option("dir", report_dir, "Run directory (defaults to --out)");
  auto* reference = app.add_subcommand("config-reference", "Print the config key reference as markdown");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kConfig;
  }

  fd::CommandOptions opt;
  opt.deterministic = g.deterministic;
  opt.log = &std::cout;
  try {
    if (reference->parsed()) {
      std::cout << fd::config_reference_markdown();
      return kOk;
    }
    if (report->parsed()) {
      std::string dir = !report_dir.empty() ? report_dir : !g.out.empty() ? g.out : "";
      if (dir.empty()) dir = resolve(g).out_dir.string();
      fd::cmd_report(dir, opt);
      return kOk;
    }
    const fd::ExperimentConfig cfg = resolve(g);
    if (train->parsed()) fd::cmd_train_teacher(cfg, opt);
    if (distill->parsed()) fd::cmd_distill(cfg, opt);
    if (sweep->parsed()) fd::cmd_sweep(cfg, opt);
    if (ablate->parsed()) fd::cmd_ablate(cfg, opt);
    if (synth->parsed()) fd::cmd_synth(cfg, opt);
  } catch (const fd::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const fd::DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kConfig;
  } catch (const fd::TrainingDiverged& e) {
    std::cerr << "training failed: " << e.what() << '\n';
    return kRuntime;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRuntime;
  }
  return kOk;
}
