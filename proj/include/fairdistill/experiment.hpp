#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "fairdistill/distill.hpp"
#include "fairdistill/graph_data.hpp"
#include "fairdistill/metrics.hpp"
#include "fairdistill/models.hpp"

namespace fairdistill {

/// Invalid or unreadable configuration; the CLI exits with status 2.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Method { kVanilla, kOneHot, kReliant };
std::string to_string(Method m);
Method parse_method(const std::string& name);

enum class SweepAxis { kNone, kLambda, kProxyDim };

struct ExperimentConfig {
  bool synthetic = true;
  SynthSpec synth;
  std::filesystem::path edges;
  std::filesystem::path attributes;
  LoadOptions load;

  SplitFractions split;
  std::uint64_t split_seed = 0;

  /// input_dim and classes are filled in from the data.
  ModelSpec teacher;
  TrainConfig teacher_train;
  /// Where teacher checkpoints live; empty means the output directory.
  std::filesystem::path teacher_dir;

  ModelSpec student = ModelSpec::sgc_student(0, 2);
  DistillConfig distill;
  Method method = Method::kReliant;

  SweepAxis sweep_axis = SweepAxis::kNone;
  std::vector<double> sweep_values;

  std::vector<std::uint64_t> seeds = {0, 10, 100};
  /// 0 means one worker per hardware thread.
  unsigned threads = 0;
  std::filesystem::path out_dir = "out";

  /// The configuration text this was parsed from.
  std::string source_text;
  /// Keys that were set explicitly, as "section.key".
  std::vector<std::string> explicit_keys;

  bool has_key(const std::string& dotted) const;
  /// Problems that do not stop a run, such as keys the method ignores.
  std::vector<std::string> warnings() const;
};

ExperimentConfig default_config();

/// INI text with [sections] and key = value lines. Relative data paths are
/// resolved against `base_dir`.
ExperimentConfig parse_config(const std::string& text, const std::filesystem::path& base_dir = {});
/// Reads an INI config, or a run manifest (JSON) that embeds one.
ExperimentConfig load_config(const std::filesystem::path& path);

/// Every key with its effective value, as INI text that parse_config reads
/// back to the same configuration. Data paths are made absolute.
std::string render_config(const ExperimentConfig& cfg);

/// Markdown page documenting every key with its default.
std::string config_reference_markdown();

struct Dataset {
  AttributedGraph graph;
  Split split;
  GraphOperators ops;
};

Dataset prepare_dataset(const ExperimentConfig& cfg);

ModelSpec teacher_spec(const ExperimentConfig& cfg, const Dataset& ds);
/// Student spec with the proxy columns of `method` included.
ModelSpec student_spec(const ExperimentConfig& cfg, const Dataset& ds, Method method, std::size_t proxy_dim);

struct TeacherRun {
  ModelParams params;
  TrainHistory history;
  FairnessReport report;
  bool loaded = false;
};

std::filesystem::path teacher_checkpoint_path(const ExperimentConfig& cfg, std::uint64_t seed);
TeacherRun train_teacher(const ExperimentConfig& cfg, const Dataset& ds, std::uint64_t seed);
/// Loads the checkpoint when it exists and matches the config, else trains
/// and saves one.
TeacherRun obtain_teacher(const ExperimentConfig& cfg, const Dataset& ds, std::uint64_t seed);

/// Runs one distillation variant. `proxy_only` keeps the learned proxy but
/// drops the attribution term.
DistillResult run_method(const ExperimentConfig& cfg, const Dataset& ds, const ModelParams& teacher, Method method,
                         const DistillConfig& distill, bool proxy_only = false);

/// Calls job(i) for i in [0, count) on up to `threads` workers. The first
/// exception is rethrown after all workers stop.
void parallel_for(std::size_t count, unsigned threads, const std::function<void(std::size_t)>& job);

/// Worker count: config value or hardware threads, capped by
/// FAIRDISTILL_THREADS.
unsigned worker_count(unsigned configured);

struct Summary {
  double mean = 0.0;
  double std = 0.0;
};
/// Sample standard deviation; 0 for a single value.
Summary summarize(const std::vector<double>& values);

/// Report rows followed by one "<model>" row of mean±std cells per model.
void write_report_with_summary(std::ostream& out, const std::vector<FairnessReport>& rows);
/// Per-seed rows of a report written by write_report_with_summary.
std::vector<FairnessReport> read_report_rows(std::istream& in);

struct SweepRow {
  double value = 0.0;
  FairnessReport report;
};
void write_sweep_csv(std::ostream& out, const std::string& axis, const std::vector<SweepRow>& rows);
std::vector<SweepRow> read_sweep_csv(std::istream& in, std::string* axis = nullptr);

struct PlotOptions {
  bool deterministic = false;
};

/// Metric against the swept value with a one-std band; log x for lambda.
std::string sweep_plot_svg(const std::string& axis, const std::vector<SweepRow>& rows, const std::string& metric,
                           const PlotOptions& opt);
/// Accuracy and bias side by side for each variant.
std::string ablation_plot_svg(const std::vector<FairnessReport>& rows, const PlotOptions& opt);

/// Metric value by column name ("accuracy", "delta_sp", ...).
double report_metric(const FairnessReport& r, const std::string& metric);

struct CommandOptions {
  bool deterministic = false;
  /// Progress lines; null means std::cerr.
  std::ostream* log = nullptr;
  /// Warnings; null means std::cerr.
  std::ostream* warn = nullptr;
};

/// Subcommands. Each writes its files under cfg.out_dir and a manifest.json
/// that can be passed back as --config.
void cmd_train_teacher(const ExperimentConfig& cfg, const CommandOptions& opt);
void cmd_distill(const ExperimentConfig& cfg, const CommandOptions& opt);
void cmd_sweep(const ExperimentConfig& cfg, const CommandOptions& opt);
void cmd_ablate(const ExperimentConfig& cfg, const CommandOptions& opt);
void cmd_synth(const ExperimentConfig& cfg, const CommandOptions& opt);
/// Re-renders plots from sweep.csv or ablation.csv in `dir`.
void cmd_report(const std::filesystem::path& dir, const CommandOptions& opt);

}  // namespace fairdistill
