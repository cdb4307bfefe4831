#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <json.hpp>

#include "fairdistill/experiment.hpp"

namespace fairdistill {

std::string to_string(Method m) {
  switch (m) {
    case Method::kVanilla:
      return "vanilla";
    case Method::kOneHot:
      return "onehot";
    case Method::kReliant:
      return "reliant";
  }
  return "?";
}

Method parse_method(const std::string& name) {
  std::string s(name);
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char ch) { return std::tolower(ch); });
  if (s == "vanilla") return Method::kVanilla;
  if (s == "onehot" || s == "one-hot") return Method::kOneHot;
  if (s == "reliant") return Method::kReliant;
  throw std::invalid_argument("unknown method '" + name + "' (expected vanilla, onehot or reliant)");
}

bool ExperimentConfig::has_key(const std::string& dotted) const {
  return std::find(explicit_keys.begin(), explicit_keys.end(), dotted) != explicit_keys.end();
}

std::vector<std::string> ExperimentConfig::warnings() const {
  std::vector<std::string> w;
  if (method != Method::kReliant) {
    for (const char* key : {"distill.lambda", "distill.proxy_dim", "distill.utility_on_pseudo"}) {
      if (has_key(key)) w.push_back(std::string(key) + " is ignored by method " + to_string(method));
    }
  }
  return w;
}

ExperimentConfig default_config() {
  ExperimentConfig c;
  c.teacher = ModelSpec::teacher(Architecture::kGCN, 0, 2);
  c.teacher_train = TrainConfig::teacher(Architecture::kGCN);
  return c;
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char ch) { return std::tolower(ch); });
  return s;
}

double to_double(const std::string& s) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    throw std::invalid_argument("expected a number, got '" + s + "'");
  }
  if (used != s.size() || !std::isfinite(v)) throw std::invalid_argument("expected a number, got '" + s + "'");
  return v;
}

std::uint64_t to_uint(const std::string& s) {
  if (s.empty() || !std::all_of(s.begin(), s.end(), [](unsigned char ch) { return std::isdigit(ch); })) {
    throw std::invalid_argument("expected a non-negative integer, got '" + s + "'");
  }
  return std::stoull(s);
}

int to_int(const std::string& s) {
  const std::uint64_t v = to_uint(s);
  if (v > 1'000'000'000) throw std::invalid_argument("integer out of range: " + s);
  return static_cast<int>(v);
}

bool to_bool(const std::string& s) {
  const std::string l = lower(s);
  if (l == "true" || l == "yes" || l == "on" || l == "1") return true;
  if (l == "false" || l == "no" || l == "off" || l == "0") return false;
  throw std::invalid_argument("expected true or false, got '" + s + "'");
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::string num(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  // Prefer the shortest text that reads back exactly.
  for (int p = 1; p <= 17; ++p) {
    char shorter[64];
    std::snprintf(shorter, sizeof shorter, "%.*g", p, v);
    if (std::stod(shorter) == v) return shorter;
  }
  return buf;
}

std::string boolean(bool b) { return b ? "true" : "false"; }

template <class T>
std::string join(const std::vector<T>& v, const std::function<std::string(const T&)>& f) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? ", " : "") + f(v[i]);
  return out;
}

std::string axis_name(SweepAxis a) {
  switch (a) {
    case SweepAxis::kNone:
      return "none";
    case SweepAxis::kLambda:
      return "lambda";
    case SweepAxis::kProxyDim:
      return "proxy_dim";
  }
  return "?";
}

struct Key {
  std::string section;
  std::string name;
  std::string help;
  std::function<std::string(const ExperimentConfig&)> get;
  std::function<void(ExperimentConfig&, const std::string&)> set;
};

const std::vector<Key>& keys() {
  using C = ExperimentConfig;
  using S = const std::string&;
  static const std::vector<Key> k = {
      {"data", "source", "`synthetic` generates a graph from [synth]; `files` loads `edges` and `attributes`.",
       [](const C& c) { return std::string(c.synthetic ? "synthetic" : "files"); },
       [](C& c, S v) {
         const std::string l = lower(v);
         if (l != "synthetic" && l != "files") throw std::invalid_argument("expected synthetic or files");
         c.synthetic = l == "synthetic";
       }},
      {"data", "edges", "Edge CSV with header `src,dst`.", [](const C& c) { return c.edges.string(); },
       [](C& c, S v) { c.edges = v; }},
      {"data", "attributes", "Node CSV: id, attribute columns, label and sensitive columns.",
       [](const C& c) { return c.attributes.string(); }, [](C& c, S v) { c.attributes = v; }},
      {"data", "id_column", "Node id column; row numbers are used when absent.",
       [](const C& c) { return c.load.id_column; }, [](C& c, S v) { c.load.id_column = v; }},
      {"data", "label_column", "Class label column.", [](const C& c) { return c.load.label_column; },
       [](C& c, S v) { c.load.label_column = v; }},
      {"data", "sensitive_column", "Binary sensitive attribute column.",
       [](const C& c) { return c.load.sensitive_column; }, [](C& c, S v) { c.load.sensitive_column = v; }},
      {"data", "keep_sensitive", "Keep the sensitive column among the model inputs.",
       [](const C& c) { return boolean(c.load.keep_sensitive); },
       [](C& c, S v) { c.load.keep_sensitive = to_bool(v); }},

      {"synth", "n", "Node count.", [](const C& c) { return std::to_string(c.synth.n); },
       [](C& c, S v) { c.synth.n = to_uint(v); }},
      {"synth", "d", "Attribute count.", [](const C& c) { return std::to_string(c.synth.d); },
       [](C& c, S v) { c.synth.d = to_uint(v); }},
      {"synth", "classes", "Class count.", [](const C& c) { return std::to_string(c.synth.c); },
       [](C& c, S v) { c.synth.c = to_int(v); }},
      {"synth", "group_fraction", "Share of nodes in sensitive group 1.",
       [](const C& c) { return num(c.synth.group_fraction); }, [](C& c, S v) { c.synth.group_fraction = to_double(v); }},
      {"synth", "homophily", "Probability that an edge joins two nodes of the same class.",
       [](const C& c) { return num(c.synth.homophily); }, [](C& c, S v) { c.synth.homophily = to_double(v); }},
      {"synth", "bias_strength",
       "Scales every group effect: attribute shift, label skew and group-homophilous edges. 0 makes the group "
       "independent of everything else.",
       [](const C& c) { return num(c.synth.bias_strength); }, [](C& c, S v) { c.synth.bias_strength = to_double(v); }},
      {"synth", "avg_degree", "Mean node degree.", [](const C& c) { return num(c.synth.avg_degree); },
       [](C& c, S v) { c.synth.avg_degree = to_double(v); }},
      {"synth", "seed", "Generator seed.", [](const C& c) { return std::to_string(c.synth.seed); },
       [](C& c, S v) { c.synth.seed = to_uint(v); }},
      {"synth", "class_separation", "Distance between class means in attribute space.",
       [](const C& c) { return num(c.synth.class_separation); },
       [](C& c, S v) { c.synth.class_separation = to_double(v); }},
      {"synth", "label_skew", "Group-dependent label logit skew at full bias strength.",
       [](const C& c) { return num(c.synth.label_skew); }, [](C& c, S v) { c.synth.label_skew = to_double(v); }},
      {"synth", "group_shift", "Length of the group attribute shift at full bias strength.",
       [](const C& c) { return num(c.synth.group_shift); }, [](C& c, S v) { c.synth.group_shift = to_double(v); }},
      {"synth", "shift_alignment", "Cosine between the group shift and the class direction.",
       [](const C& c) { return num(c.synth.shift_alignment); },
       [](C& c, S v) { c.synth.shift_alignment = to_double(v); }},
      {"synth", "group_homophily", "At full bias strength, probability that an edge stays inside one group.",
       [](const C& c) { return num(c.synth.group_homophily); },
       [](C& c, S v) { c.synth.group_homophily = to_double(v); }},

      {"split", "train", "Training fraction.", [](const C& c) { return num(c.split.train); },
       [](C& c, S v) { c.split.train = to_double(v); }},
      {"split", "val", "Validation fraction.", [](const C& c) { return num(c.split.val); },
       [](C& c, S v) { c.split.val = to_double(v); }},
      {"split", "test", "Test fraction.", [](const C& c) { return num(c.split.test); },
       [](C& c, S v) { c.split.test = to_double(v); }},
      {"split", "seed", "Split seed; defaults to the synth seed.", [](const C& c) { return std::to_string(c.split_seed); },
       [](C& c, S v) { c.split_seed = to_uint(v); }},

      {"teacher", "arch", "`gcn` or `sage`; sets the defaults of hidden, dropout and weight_decay.",
       [](const C& c) { return to_string(c.teacher.arch); }, [](C& c, S v) { c.teacher.arch = parse_architecture(v); }},
      {"teacher", "layers", "Layer count.", [](const C& c) { return std::to_string(c.teacher.layers); },
       [](C& c, S v) { c.teacher.layers = to_int(v); }},
      {"teacher", "hidden", "Hidden width (64 for gcn, 128 for sage).",
       [](const C& c) { return std::to_string(c.teacher.hidden); }, [](C& c, S v) { c.teacher.hidden = to_uint(v); }},
      {"teacher", "dropout", "Dropout rate (0.8 for gcn, 0.5 for sage).",
       [](const C& c) { return num(c.teacher.dropout); }, [](C& c, S v) { c.teacher.dropout = to_double(v); }},
      {"teacher", "epochs", "Maximum training epochs.",
       [](const C& c) { return std::to_string(c.teacher_train.max_epochs); },
       [](C& c, S v) { c.teacher_train.max_epochs = to_int(v); }},
      {"teacher", "patience", "Stop after this many epochs without a better validation accuracy.",
       [](const C& c) { return std::to_string(c.teacher_train.patience); },
       [](C& c, S v) { c.teacher_train.patience = to_int(v); }},
      {"teacher", "learning_rate", "Adam learning rate.", [](const C& c) { return num(c.teacher_train.learning_rate); },
       [](C& c, S v) { c.teacher_train.learning_rate = to_double(v); }},
      {"teacher", "weight_decay", "L2 penalty (1e-3 for gcn, 5e-4 for sage).",
       [](const C& c) { return num(c.teacher_train.weight_decay); },
       [](C& c, S v) { c.teacher_train.weight_decay = to_double(v); }},
      {"teacher", "checkpoint_dir", "Directory of teacher checkpoints; empty means the output directory.",
       [](const C& c) { return c.teacher_dir.string(); }, [](C& c, S v) { c.teacher_dir = v; }},

      {"student", "arch", "Student architecture.", [](const C& c) { return to_string(c.student.arch); },
       [](C& c, S v) { c.student.arch = parse_architecture(v); }},
      {"student", "layers", "Layer count (ignored by sgc).", [](const C& c) { return std::to_string(c.student.layers); },
       [](C& c, S v) { c.student.layers = to_int(v); }},
      {"student", "hidden", "Hidden width (ignored by sgc).", [](const C& c) { return std::to_string(c.student.hidden); },
       [](C& c, S v) { c.student.hidden = to_uint(v); }},
      {"student", "dropout", "Dropout rate.", [](const C& c) { return num(c.student.dropout); },
       [](C& c, S v) { c.student.dropout = to_double(v); }},
      {"student", "sgc_power", "Propagation steps of the sgc student.",
       [](const C& c) { return std::to_string(c.student.sgc_power); },
       [](C& c, S v) { c.student.sgc_power = to_int(v); }},

      {"distill", "method", "`vanilla`, `onehot` or `reliant`.", [](const C& c) { return to_string(c.method); },
       [](C& c, S v) { c.method = parse_method(v); }},
      {"distill", "distance", "Logit distance of the utility loss: `sq`, `cosine` or `kl`.",
       [](const C& c) { return to_string(c.distill.distance); },
       [](C& c, S v) { c.distill.distance = parse_distance(v); }},
      {"distill", "lambda", "Weight of the attribution loss (reliant only).",
       [](const C& c) { return num(c.distill.lambda); }, [](C& c, S v) { c.distill.lambda = to_double(v); }},
      {"distill", "proxy_dim", "Learned proxy columns (reliant only).",
       [](const C& c) { return std::to_string(c.distill.proxy_dim); },
       [](C& c, S v) { c.distill.proxy_dim = to_uint(v); }},
      {"distill", "proxy_learning_rate", "Adam learning rate of the proxy.",
       [](const C& c) { return num(c.distill.proxy_learning_rate); },
       [](C& c, S v) { c.distill.proxy_learning_rate = to_double(v); }},
      {"distill", "proxy_weight_decay", "L2 penalty of the proxy.",
       [](const C& c) { return num(c.distill.proxy_weight_decay); },
       [](C& c, S v) { c.distill.proxy_weight_decay = to_double(v); }},
      {"distill", "proxy_init_std", "Standard deviation of the Gaussian proxy initialization.",
       [](const C& c) { return num(c.distill.proxy_init_std); },
       [](C& c, S v) { c.distill.proxy_init_std = to_double(v); }},
      {"distill", "learning_rate", "Student Adam learning rate.",
       [](const C& c) { return num(c.distill.student_optimizer.learning_rate); },
       [](C& c, S v) { c.distill.student_optimizer.learning_rate = to_double(v); }},
      {"distill", "weight_decay", "Student L2 penalty.",
       [](const C& c) { return num(c.distill.student_optimizer.weight_decay); },
       [](C& c, S v) { c.distill.student_optimizer.weight_decay = to_double(v); }},
      {"distill", "epochs", "Distillation epochs; the final student is kept.",
       [](const C& c) { return std::to_string(c.distill.epochs); }, [](C& c, S v) { c.distill.epochs = to_int(v); }},
      {"distill", "notion", "Bias notion minimized by the attribution loss: `sp` or `eo`.",
       [](const C& c) { return to_string(c.distill.notion); }, [](C& c, S v) { c.distill.notion = parse_notion(v); }},
      {"distill", "utility_on_pseudo", "Add a utility term on the pseudo-proxy inputs (reliant only).",
       [](const C& c) { return boolean(c.distill.utility_on_pseudo); },
       [](C& c, S v) { c.distill.utility_on_pseudo = to_bool(v); }},

      {"sweep", "axis", "`none`, `lambda` or `proxy_dim`.", [](const C& c) { return axis_name(c.sweep_axis); },
       [](C& c, S v) {
         const std::string l = lower(v);
         if (l == "none") c.sweep_axis = SweepAxis::kNone;
         else if (l == "lambda") c.sweep_axis = SweepAxis::kLambda;
         else if (l == "proxy_dim") c.sweep_axis = SweepAxis::kProxyDim;
         else throw std::invalid_argument("expected none, lambda or proxy_dim");
       }},
      {"sweep", "values", "Comma-separated positive values of the swept key.",
       [](const C& c) { return join<double>(c.sweep_values, [](const double& x) { return num(x); }); },
       [](C& c, S v) {
         c.sweep_values.clear();
         for (const auto& item : split_list(v)) c.sweep_values.push_back(to_double(item));
       }},

      {"run", "seeds", "Comma-separated seeds; each seed trains its own teacher and student.",
       [](const C& c) {
         return join<std::uint64_t>(c.seeds, [](const std::uint64_t& x) { return std::to_string(x); });
       },
       [](C& c, S v) {
         c.seeds.clear();
         for (const auto& item : split_list(v)) c.seeds.push_back(to_uint(item));
       }},
      {"run", "threads", "Worker threads; 0 uses every hardware thread. FAIRDISTILL_THREADS caps it.",
       [](const C& c) { return std::to_string(c.threads); },
       [](C& c, S v) { c.threads = static_cast<unsigned>(to_uint(v)); }},
      {"run", "out", "Output directory.", [](const C& c) { return c.out_dir.string(); },
       [](C& c, S v) { c.out_dir = v; }},
  };
  return k;
}

const Key* find_key(const std::string& section, const std::string& name) {
  for (const Key& k : keys())
    if (k.section == section && k.name == name) return &k;
  return nullptr;
}

void check(bool ok, const std::string& what) {
  if (!ok) throw ConfigError(what);
}

void validate(const ExperimentConfig& c) {
  check(!c.seeds.empty(), "[run] seeds must not be empty");
  if (c.sweep_axis != SweepAxis::kNone) {
    check(!c.sweep_values.empty(), "[sweep] values must not be empty when an axis is set");
    for (double v : c.sweep_values) check(v > 0.0, "[sweep] values must be positive, got " + num(v));
    if (c.sweep_axis == SweepAxis::kProxyDim) {
      for (double v : c.sweep_values) check(v == std::floor(v), "[sweep] proxy_dim values must be integers");
    }
  }
  if (!c.synthetic) {
    check(!c.edges.empty() && !c.attributes.empty(), "[data] files source needs edges and attributes");
    for (const auto& p : {c.attributes, c.edges}) {
      check(std::filesystem::exists(p), "data file not found: " + p.string());
    }
  }
  try {
    if (c.synthetic) c.synth.validate();
    c.teacher_train.validate();
    c.distill.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  check(c.teacher.arch == Architecture::kGCN || c.teacher.arch == Architecture::kSAGE ||
            c.teacher.arch == Architecture::kMLP || c.teacher.arch == Architecture::kSGC,
        "[teacher] arch is invalid");
  check(c.method != Method::kReliant || c.distill.proxy_dim >= 1, "[distill] proxy_dim must be at least 1");
}

}  // namespace

ExperimentConfig parse_config(const std::string& text, const std::filesystem::path& base_dir) {
  boost::property_tree::ptree tree;
  std::istringstream in(text);
  try {
    boost::property_tree::ini_parser::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError("config parse error at line " + std::to_string(e.line()) + ": " + e.message());
  }

  std::vector<std::tuple<const Key*, std::string>> assignments;
  for (const auto& [section, body] : tree) {
    if (body.empty() && !body.data().empty()) {
      throw ConfigError("config key '" + section + "' must sit inside a [section]");
    }
    for (const auto& [name, value] : body) {
      const Key* k = find_key(section, name);
      if (k == nullptr) throw ConfigError("unknown config key [" + section + "] " + name);
      assignments.emplace_back(k, trim(value.data()));
    }
  }

  ExperimentConfig c = default_config();
  c.source_text = text;
  const auto apply = [&](const Key* k, const std::string& v) {
    try {
      k->set(c, v);
    } catch (const std::exception& e) {
      throw ConfigError("config key [" + k->section + "] " + k->name + ": " + e.what());
    }
  };
  // Architecture first, since it chooses the defaults of the other keys.
  for (const auto& [k, v] : assignments) {
    if (k->section == "teacher" && k->name == "arch") apply(k, v);
  }
  c.teacher = ModelSpec::teacher(c.teacher.arch, 0, 2);
  c.teacher_train = TrainConfig::teacher(c.teacher.arch);
  bool split_seed_set = false;
  for (const auto& [k, v] : assignments) {
    apply(k, v);
    c.explicit_keys.push_back(k->section + "." + k->name);
    if (k->section == "split" && k->name == "seed") split_seed_set = true;
  }
  if (!split_seed_set) c.split_seed = c.synth.seed;
  if (!c.has_key("teacher.patience")) c.teacher_train.patience = std::min(c.teacher_train.patience, c.teacher_train.max_epochs);
  if (c.student.arch == Architecture::kSGC) c.student.layers = 1;

  for (auto* p : {&c.edges, &c.attributes}) {
    if (!p->empty() && p->is_relative() && !base_dir.empty()) *p = base_dir / *p;
  }
  validate(c);
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file: " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  std::string text = ss.str();
  const auto first = text.find_first_not_of(" \t\r\n");
  const bool is_manifest = first != std::string::npos && text[first] == '{';
  if (is_manifest) {
    nlohmann::json manifest;
    try {
      manifest = nlohmann::json::parse(text);
      text = manifest.at("config").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("manifest " + path.string() + " is not usable: " + e.what());
    }
  }
  ExperimentConfig c = parse_config(text, path.parent_path());
  // A rendered config lists every key; only the original file says which
  // ones the user chose.
  if (is_manifest) c.explicit_keys.clear();
  return c;
}

std::string render_config(const ExperimentConfig& c) {
  std::string out;
  std::string section;
  for (const Key& k : keys()) {
    if (k.section != section) {
      section = k.section;
      out += (out.empty() ? "[" : "\n[") + section + "]\n";
    }
    std::string value = k.get(c);
    if ((k.name == "edges" || k.name == "attributes") && !value.empty()) {
      value = std::filesystem::absolute(value).lexically_normal().string();
    }
    out += k.name + " = " + value + "\n";
  }
  return out;
}

std::string config_reference_markdown() {
  const ExperimentConfig d = default_config();
  std::string out =
      "# Configuration reference\n\n"
      "Generated by `fairdistill config-reference`; do not edit by hand.\n\n"
      "Configs are INI files: `[section]` headers followed by `key = value` lines. Lines starting with `;` or `#` "
      "are comments. Unknown keys are errors. A run manifest (`manifest.json`) written by any command can be passed "
      "to `--config` in place of an INI file.\n";
  std::string section;
  for (const Key& k : keys()) {
    if (k.section != section) {
      section = k.section;
      out += "\n## [" + section + "]\n\n| key | default | meaning |\n|---|---|---|\n";
    }
    const std::string def = k.get(d);
    out += "| `" + k.name + "` | " + (def.empty() ? "" : "`" + def + "`") + " | " + k.help + " |\n";
  }
  return out;
}

}  // namespace fairdistill
