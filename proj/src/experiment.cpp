#include "fairdistill/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <iostream>
#include <limits>
#include <mutex>
#include <sstream>
#include <thread>

#include <json.hpp>

namespace fairdistill {

Dataset prepare_dataset(const ExperimentConfig& cfg) {
  Dataset ds;
  if (cfg.synthetic) {
    ds.graph = generate_biased_graph(cfg.synth);
  } else {
    ds.graph = load_graph(cfg.edges, cfg.attributes, cfg.load);
  }
  ds.split = split_nodes(ds.graph.num_nodes(), cfg.split, cfg.split_seed);
  check_split(ds.graph, ds.split);
  ds.ops = GraphOperators::build(ds.graph, ds.split);
  return ds;
}

ModelSpec teacher_spec(const ExperimentConfig& cfg, const Dataset& ds) {
  ModelSpec s = cfg.teacher;
  s.input_dim = ds.graph.attributes.cols();
  s.classes = static_cast<std::size_t>(ds.graph.num_classes());
  return s;
}

ModelSpec student_spec(const ExperimentConfig& cfg, const Dataset& ds, Method method, std::size_t proxy_dim) {
  ModelSpec s = cfg.student;
  s.classes = static_cast<std::size_t>(ds.graph.num_classes());
  s.input_dim = ds.graph.attributes.cols();
  if (method == Method::kOneHot) s.input_dim += 2;
  if (method == Method::kReliant) s.input_dim += proxy_dim;
  return s;
}

std::filesystem::path teacher_checkpoint_path(const ExperimentConfig& cfg, std::uint64_t seed) {
  const auto dir = cfg.teacher_dir.empty() ? cfg.out_dir : cfg.teacher_dir;
  return dir / ("teacher_seed" + std::to_string(seed) + ".json");
}

namespace {

FairnessReport score(const std::string& name, const ModelParams& params, const Dataset& ds, std::uint64_t seed) {
  const Prediction p = predict(params, ds.ops, *ds.ops.features);
  return evaluate_fairness(name, p.labels, p.probabilities, ds.graph.labels, ds.graph.sensitive, ds.split.test, seed);
}

}  // namespace

TeacherRun train_teacher(const ExperimentConfig& cfg, const Dataset& ds, std::uint64_t seed) {
  TrainConfig tc = cfg.teacher_train;
  tc.seed = seed;
  TrainResult r = train_supervised(teacher_spec(cfg, ds), ds.graph, ds.ops, ds.split, tc);
  TeacherRun out;
  out.params = std::move(r.params);
  out.history = std::move(r.history);
  out.report = score("teacher", out.params, ds, seed);
  return out;
}

TeacherRun obtain_teacher(const ExperimentConfig& cfg, const Dataset& ds, std::uint64_t seed) {
  const auto path = teacher_checkpoint_path(cfg, seed);
  if (std::filesystem::exists(path)) {
    ModelParams p = load_checkpoint(path);
    if (p.spec == teacher_spec(cfg, ds) && p.seed == seed) {
      TeacherRun out;
      out.params = std::move(p);
      out.report = score("teacher", out.params, ds, seed);
      out.loaded = true;
      return out;
    }
  }
  TeacherRun out = train_teacher(cfg, ds, seed);
  std::filesystem::create_directories(path.parent_path().empty() ? "." : path.parent_path());
  save_checkpoint(out.params, path);
  return out;
}

DistillResult run_method(const ExperimentConfig& cfg, const Dataset& ds, const ModelParams& teacher, Method method,
                         const DistillConfig& distill, bool proxy_only) {
  switch (method) {
    case Method::kVanilla:
      return vanilla_distill(teacher, student_spec(cfg, ds, method, 0), ds.graph, ds.ops, ds.split, distill);
    case Method::kOneHot:
      return one_hot_distill(teacher, student_spec(cfg, ds, method, 2), ds.graph, ds.ops, ds.split, distill);
    case Method::kReliant: {
      DistillConfig d = distill;
      if (proxy_only) d.lambda = 0.0;
      DistillResult r =
          reliant_train(teacher, student_spec(cfg, ds, method, d.proxy_dim), ds.graph, ds.ops, ds.split, d);
      if (proxy_only) r.report.model = "proxy-only";
      return r;
    }
  }
  throw std::invalid_argument("run_method: bad method");
}

unsigned worker_count(unsigned configured) {
  unsigned n = configured ? configured : std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("FAIRDISTILL_THREADS")) {
    char* end = nullptr;
    const long cap = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && cap >= 1) n = std::min(n, static_cast<unsigned>(cap));
  }
  return n;
}

void parallel_for(std::size_t count, unsigned threads, const std::function<void(std::size_t)>& job) {
  const unsigned workers = static_cast<unsigned>(std::min<std::size_t>(std::max(1u, threads), count));
  if (workers <= 1) {
    for (std::size_t i = 0; i < count; ++i) job(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  std::exception_ptr error;
  std::mutex mu;
  std::vector<std::thread> pool;
  for (unsigned w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < count && !failed; i = next++) {
        try {
          job(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(mu);
          if (!error) error = std::current_exception();
          failed = true;
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

Summary summarize(const std::vector<double>& values) {
  Summary s;
  if (values.empty()) return s;
  for (double v : values) s.mean += v;
  s.mean /= static_cast<double>(values.size());
  if (values.size() > 1) {
    double sq = 0.0;
    for (double v : values) sq += (v - s.mean) * (v - s.mean);
    s.std = std::sqrt(sq / static_cast<double>(values.size() - 1));
  }
  return s;
}

double report_metric(const FairnessReport& r, const std::string& metric) {
  if (metric == "accuracy") return r.accuracy;
  if (metric == "delta_sp") return r.delta_sp;
  if (metric == "delta_eo") return r.delta_eo;
  if (metric == "soft_sp") return r.soft_sp;
  if (metric == "soft_eo") return r.soft_eo;
  throw std::invalid_argument("unknown metric '" + metric + "'");
}

namespace {

const std::vector<std::string> kMetrics = {"accuracy", "delta_sp", "delta_eo", "soft_sp", "soft_eo"};
constexpr const char* kSummarySeed = "mean±std";

std::string fixed6(double v) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

std::vector<std::string> models_in_order(const std::vector<FairnessReport>& rows) {
  std::vector<std::string> names;
  for (const auto& r : rows)
    if (std::find(names.begin(), names.end(), r.model) == names.end()) names.push_back(r.model);
  return names;
}

}  // namespace

void write_report_with_summary(std::ostream& out, const std::vector<FairnessReport>& rows) {
  write_reports_csv(out, rows);
  for (const auto& name : models_in_order(rows)) {
    out << name;
    for (const auto& metric : kMetrics) {
      std::vector<double> v;
      for (const auto& r : rows)
        if (r.model == name) v.push_back(report_metric(r, metric));
      const Summary s = summarize(v);
      out << ',' << fixed6(s.mean) << "±" << fixed6(s.std);
    }
    out << ',' << kSummarySeed << '\n';
  }
}

std::vector<FairnessReport> read_report_rows(std::istream& in) {
  std::stringstream filtered;
  std::string line;
  while (std::getline(in, line)) {
    const auto comma = line.rfind(',');
    if (comma != std::string::npos && line.substr(comma + 1) == kSummarySeed) continue;
    filtered << line << '\n';
  }
  return read_reports_csv(filtered);
}

void write_sweep_csv(std::ostream& out, const std::string& axis, const std::vector<SweepRow>& rows) {
  out << "axis,value,model,accuracy,delta_sp,delta_eo,soft_sp,soft_eo,seed\n";
  for (const auto& row : rows) {
    char value[64];
    std::snprintf(value, sizeof value, "%.10g", row.value);
    const auto& r = row.report;
    out << axis << ',' << value << ',' << r.model << ',' << fixed6(r.accuracy) << ',' << fixed6(r.delta_sp) << ','
        << fixed6(r.delta_eo) << ',' << fixed6(r.soft_sp) << ',' << fixed6(r.soft_eo) << ',' << r.seed << '\n';
  }
}

std::vector<SweepRow> read_sweep_csv(std::istream& in, std::string* axis) {
  std::string line;
  if (!std::getline(in, line) || line != "axis,value,model,accuracy,delta_sp,delta_eo,soft_sp,soft_eo,seed") {
    throw std::invalid_argument("sweep CSV: unexpected header");
  }
  std::vector<SweepRow> rows;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (f.size() != 9) throw std::invalid_argument("sweep CSV line " + std::to_string(lineno) + ": expected 9 fields");
    const auto parse = [](const std::string& s) {
      return s == "nan" ? std::numeric_limits<double>::quiet_NaN() : std::stod(s);
    };
    if (axis) *axis = f[0];
    SweepRow r;
    r.value = std::stod(f[1]);
    r.report.model = f[2];
    r.report.accuracy = parse(f[3]);
    r.report.delta_sp = parse(f[4]);
    r.report.delta_eo = parse(f[5]);
    r.report.soft_sp = parse(f[6]);
    r.report.soft_eo = parse(f[7]);
    r.report.seed = std::stoull(f[8]);
    rows.push_back(std::move(r));
  }
  return rows;
}

namespace {

std::ostream& log_of(const CommandOptions& opt) { return opt.log ? *opt.log : std::cerr; }

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

void write_matrix_csv(const std::filesystem::path& path, const DenseMat& m) {
  std::ostringstream out;
  for (std::size_t j = 0; j < m.cols(); ++j) out << (j ? "," : "") << 'p' << j;
  out << '\n';
  char buf[64];
  for (std::size_t i = 0; i < m.rows(); ++i) {
    for (std::size_t j = 0; j < m.cols(); ++j) {
      std::snprintf(buf, sizeof buf, "%.17g", m(i, j));
      out << (j ? "," : "") << buf;
    }
    out << '\n';
  }
  write_file(path, out.str());
}

std::string csv_text(const std::function<void(std::ostream&)>& f) {
  std::ostringstream out;
  f(out);
  return out.str();
}

struct RunRecord {
  std::string label;
  std::uint64_t seed = 0;
  int epochs_run = 0;
  int best_epoch = -1;
  double wall_seconds = 0.0;
};

void write_manifest(const ExperimentConfig& cfg, const std::string& command, const std::vector<RunRecord>& runs,
                    const std::vector<std::string>& outputs) {
  nlohmann::ordered_json m;
  m["tool"] = "fairdistill";
  m["command"] = command;
  m["config"] = render_config(cfg);
  m["seeds"] = cfg.seeds;
  auto& jr = m["runs"] = nlohmann::ordered_json::array();
  for (const auto& r : runs) {
    jr.push_back({{"label", r.label},
                  {"seed", r.seed},
                  {"epochs_run", r.epochs_run},
                  {"best_epoch", r.best_epoch},
                  {"wall_seconds", r.wall_seconds}});
  }
  m["outputs"] = outputs;
  write_file(cfg.out_dir / "manifest.json", m.dump(2) + "\n");
}

void prepare_out(const ExperimentConfig& cfg, const CommandOptions& opt) {
  std::filesystem::create_directories(cfg.out_dir);
  std::ostream& warn = opt.warn ? *opt.warn : std::cerr;
  for (const auto& w : cfg.warnings()) warn << "warning: " << w << '\n';
}

std::vector<TeacherRun> obtain_teachers(const ExperimentConfig& cfg, const Dataset& ds, const CommandOptions& opt) {
  std::vector<TeacherRun> teachers(cfg.seeds.size());
  parallel_for(cfg.seeds.size(), worker_count(cfg.threads),
               [&](std::size_t i) { teachers[i] = obtain_teacher(cfg, ds, cfg.seeds[i]); });
  for (std::size_t i = 0; i < teachers.size(); ++i) {
    log_of(opt) << "teacher seed " << cfg.seeds[i] << (teachers[i].loaded ? " loaded" : " trained")
                << ": test accuracy " << fixed6(teachers[i].report.accuracy) << '\n';
  }
  return teachers;
}

DistillConfig distill_for_seed(const ExperimentConfig& cfg, std::uint64_t seed) {
  DistillConfig d = cfg.distill;
  d.seed = seed;
  return d;
}

}  // namespace

void cmd_train_teacher(const ExperimentConfig& cfg, const CommandOptions& opt) {
  prepare_out(cfg, opt);
  const Dataset ds = prepare_dataset(cfg);
  std::vector<TeacherRun> runs(cfg.seeds.size());
  std::vector<double> wall(cfg.seeds.size());
  parallel_for(cfg.seeds.size(), worker_count(cfg.threads), [&](std::size_t i) {
    const auto start = std::chrono::steady_clock::now();
    runs[i] = train_teacher(cfg, ds, cfg.seeds[i]);
    wall[i] = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  });

  std::vector<FairnessReport> reports;
  std::vector<RunRecord> records;
  std::vector<std::string> outputs = {"teacher_report.csv"};
  for (std::size_t i = 0; i < runs.size(); ++i) {
    const std::uint64_t seed = cfg.seeds[i];
    const auto ckpt = teacher_checkpoint_path(cfg, seed);
    std::filesystem::create_directories(ckpt.parent_path());
    save_checkpoint(runs[i].params, ckpt);
    const std::string hist_name = "teacher_history_seed" + std::to_string(seed) + ".csv";
    write_file(cfg.out_dir / hist_name, csv_text([&](std::ostream& out) {
                 out << "epoch,train_loss,val_accuracy\n";
                 const auto& h = runs[i].history;
                 char buf[96];
                 for (std::size_t e = 0; e < h.train_loss.size(); ++e) {
                   std::snprintf(buf, sizeof buf, "%zu,%.10g,%.6f\n", e, h.train_loss[e], h.val_accuracy[e]);
                   out << buf;
                 }
               }));
    outputs.push_back(ckpt.filename().string());
    outputs.push_back(hist_name);
    reports.push_back(runs[i].report);
    records.push_back({"teacher", seed, static_cast<int>(runs[i].history.train_loss.size()),
                       runs[i].history.best_epoch, wall[i]});
    const auto& r = runs[i].report;
    log_of(opt) << "teacher seed " << seed << ": test accuracy " << fixed6(r.accuracy) << ", delta_sp "
                << fixed6(r.delta_sp) << ", delta_eo " << fixed6(r.delta_eo) << '\n';
  }
  write_file(cfg.out_dir / "teacher_report.csv", csv_text([&](std::ostream& o) { write_report_with_summary(o, reports); }));
  write_manifest(cfg, "train-teacher", records, outputs);
}

void cmd_distill(const ExperimentConfig& cfg, const CommandOptions& opt) {
  prepare_out(cfg, opt);
  const Dataset ds = prepare_dataset(cfg);
  const auto teachers = obtain_teachers(cfg, ds, opt);
  std::vector<DistillResult> results(cfg.seeds.size());
  parallel_for(cfg.seeds.size(), worker_count(cfg.threads), [&](std::size_t i) {
    results[i] = run_method(cfg, ds, teachers[i].params, cfg.method, distill_for_seed(cfg, cfg.seeds[i]));
  });

  const std::string method = to_string(cfg.method);
  std::vector<FairnessReport> reports, train_time;
  std::vector<RunRecord> records;
  std::vector<std::string> outputs = {"report.csv"};
  for (std::size_t i = 0; i < results.size(); ++i) {
    const auto& r = results[i];
    const std::string suffix = method + "_seed" + std::to_string(cfg.seeds[i]);
    save_checkpoint(r.student, cfg.out_dir / ("student_" + suffix + ".json"));
    outputs.push_back("student_" + suffix + ".json");
    if (r.proxy.cols() > 0) {
      write_matrix_csv(cfg.out_dir / ("proxy_" + suffix + ".csv"), r.proxy);
      outputs.push_back("proxy_" + suffix + ".csv");
    }
    reports.push_back(r.report);
    if (r.train_time_report) train_time.push_back(*r.train_time_report);
    records.push_back({method, cfg.seeds[i], r.epochs_run, r.epochs_run - 1, r.wall_seconds});
    log_of(opt) << method << " seed " << cfg.seeds[i] << ": test accuracy " << fixed6(r.report.accuracy)
                << ", delta_sp " << fixed6(r.report.delta_sp) << ", delta_eo " << fixed6(r.report.delta_eo) << '\n';
  }
  write_file(cfg.out_dir / "report.csv", csv_text([&](std::ostream& o) { write_report_with_summary(o, reports); }));
  if (!train_time.empty()) {
    write_file(cfg.out_dir / "report_train_proxy.csv",
               csv_text([&](std::ostream& o) { write_report_with_summary(o, train_time); }));
    outputs.push_back("report_train_proxy.csv");
  }
  write_manifest(cfg, "distill", records, outputs);
}

namespace {

std::string axis_label(SweepAxis a) { return a == SweepAxis::kLambda ? "lambda" : "proxy_dim"; }

void write_sweep_plots(const std::filesystem::path& dir, const std::string& axis, const std::vector<SweepRow>& rows,
                       const PlotOptions& popt, std::vector<std::string>* outputs) {
  for (const std::string metric : {"accuracy", "delta_sp"}) {
    const std::string name = "sweep_" + metric + ".svg";
    write_file(dir / name, sweep_plot_svg(axis, rows, metric, popt));
    if (outputs) outputs->push_back(name);
  }
}

}  // namespace

void cmd_sweep(const ExperimentConfig& cfg, const CommandOptions& opt) {
  if (cfg.sweep_axis == SweepAxis::kNone || cfg.sweep_values.empty()) {
    throw ConfigError("sweep needs [sweep] axis and a nonempty values list");
  }
  if (cfg.method != Method::kReliant) throw ConfigError("sweep varies reliant settings; set [distill] method = reliant");
  prepare_out(cfg, opt);
  const Dataset ds = prepare_dataset(cfg);
  const auto teachers = obtain_teachers(cfg, ds, opt);
  const std::size_t nv = cfg.sweep_values.size(), ns = cfg.seeds.size();
  std::vector<DistillResult> results(nv * ns);
  parallel_for(nv * ns, worker_count(cfg.threads), [&](std::size_t cell) {
    const std::size_t v = cell / ns, s = cell % ns;
    DistillConfig d = distill_for_seed(cfg, cfg.seeds[s]);
    if (cfg.sweep_axis == SweepAxis::kLambda) d.lambda = cfg.sweep_values[v];
    else d.proxy_dim = static_cast<std::size_t>(cfg.sweep_values[v]);
    results[cell] = run_method(cfg, ds, teachers[s].params, Method::kReliant, d);
  });

  std::vector<SweepRow> rows;
  std::vector<RunRecord> records;
  for (std::size_t cell = 0; cell < results.size(); ++cell) {
    const double value = cfg.sweep_values[cell / ns];
    rows.push_back({value, results[cell].report});
    char label[64];
    std::snprintf(label, sizeof label, "%s=%g", axis_label(cfg.sweep_axis).c_str(), value);
    records.push_back({label, cfg.seeds[cell % ns], results[cell].epochs_run, results[cell].epochs_run - 1,
                       results[cell].wall_seconds});
  }
  const std::string axis = axis_label(cfg.sweep_axis);
  write_file(cfg.out_dir / "sweep.csv", csv_text([&](std::ostream& o) { write_sweep_csv(o, axis, rows); }));
  std::vector<std::string> outputs = {"sweep.csv"};
  write_sweep_plots(cfg.out_dir, axis, rows, {opt.deterministic}, &outputs);
  for (double v : cfg.sweep_values) {
    std::vector<double> acc, sp;
    for (const auto& r : rows)
      if (r.value == v) {
        acc.push_back(r.report.accuracy);
        sp.push_back(r.report.delta_sp);
      }
    const Summary a = summarize(acc), s = summarize(sp);
    log_of(opt) << axis << ' ' << v << ": accuracy " << fixed6(a.mean) << "±" << fixed6(a.std) << ", delta_sp "
                << fixed6(s.mean) << "±" << fixed6(s.std) << '\n';
  }
  write_manifest(cfg, "sweep", records, outputs);
}

void cmd_ablate(const ExperimentConfig& cfg, const CommandOptions& opt) {
  if (cfg.method != Method::kReliant) throw ConfigError("ablate needs [distill] method = reliant");
  prepare_out(cfg, opt);
  const Dataset ds = prepare_dataset(cfg);
  const auto teachers = obtain_teachers(cfg, ds, opt);
  const std::size_t ns = cfg.seeds.size();
  std::vector<DistillResult> results(3 * ns);
  parallel_for(3 * ns, worker_count(cfg.threads), [&](std::size_t cell) {
    const std::size_t variant = cell / ns, s = cell % ns;
    const DistillConfig d = distill_for_seed(cfg, cfg.seeds[s]);
    const Method m = variant == 0 ? Method::kVanilla : Method::kReliant;
    results[cell] = run_method(cfg, ds, teachers[s].params, m, d, variant == 1);
  });
  std::vector<FairnessReport> rows;
  std::vector<RunRecord> records;
  for (std::size_t cell = 0; cell < results.size(); ++cell) {
    rows.push_back(results[cell].report);
    records.push_back({results[cell].report.model, cfg.seeds[cell % ns], results[cell].epochs_run,
                       results[cell].epochs_run - 1, results[cell].wall_seconds});
  }
  write_file(cfg.out_dir / "ablation.csv", csv_text([&](std::ostream& o) { write_report_with_summary(o, rows); }));
  write_file(cfg.out_dir / "ablation.svg", ablation_plot_svg(rows, {opt.deterministic}));
  for (const auto& name : models_in_order(rows)) {
    std::vector<double> acc, sp;
    for (const auto& r : rows)
      if (r.model == name) {
        acc.push_back(r.accuracy);
        sp.push_back(r.delta_sp);
      }
    log_of(opt) << name << ": accuracy " << fixed6(summarize(acc).mean) << ", delta_sp " << fixed6(summarize(sp).mean)
                << '\n';
  }
  write_manifest(cfg, "ablate", records, {"ablation.csv", "ablation.svg"});
}

void cmd_synth(const ExperimentConfig& cfg, const CommandOptions& opt) {
  prepare_out(cfg, opt);
  const AttributedGraph g = generate_biased_graph(cfg.synth);
  save_graph(g, cfg.out_dir / "edges.csv", cfg.out_dir / "attributes.csv");
  log_of(opt) << "wrote " << g.num_nodes() << " nodes and " << g.num_edges() << " edges to " << cfg.out_dir.string()
              << '\n';
  write_manifest(cfg, "synth", {}, {"edges.csv", "attributes.csv"});
}

void cmd_report(const std::filesystem::path& dir, const CommandOptions& opt) {
  bool any = false;
  if (std::ifstream in(dir / "sweep.csv"); in) {
    std::string axis;
    const auto rows = read_sweep_csv(in, &axis);
    write_sweep_plots(dir, axis, rows, {opt.deterministic}, nullptr);
    log_of(opt) << "re-rendered sweep plots in " << dir.string() << '\n';
    any = true;
  }
  if (std::ifstream in(dir / "ablation.csv"); in) {
    write_file(dir / "ablation.svg", ablation_plot_svg(read_report_rows(in), {opt.deterministic}));
    log_of(opt) << "re-rendered ablation plot in " << dir.string() << '\n';
    any = true;
  }
  if (!any) throw ConfigError("no sweep.csv or ablation.csv in " + dir.string());
}

}  // namespace fairdistill
