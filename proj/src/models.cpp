#include "fairdistill/models.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>

#include "fairdistill/optim.hpp"
#include "fairdistill/rng.hpp"
#include "json.hpp"

namespace fairdistill {

std::string to_string(Architecture arch) {
  switch (arch) {
    case Architecture::kGCN: return "gcn";
    case Architecture::kSAGE: return "sage";
    case Architecture::kSGC: return "sgc";
    case Architecture::kMLP: return "mlp";
  }
  return "unknown";
}

Architecture parse_architecture(const std::string& name) {
  std::string s(name);
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char ch) { return std::tolower(ch); });
  if (s == "gcn") return Architecture::kGCN;
  if (s == "sage" || s == "sage-mean" || s == "graphsage") return Architecture::kSAGE;
  if (s == "sgc") return Architecture::kSGC;
  if (s == "mlp") return Architecture::kMLP;
  throw std::invalid_argument("unknown architecture '" + name + "' (expected gcn, sage, sgc or mlp)");
}

void ModelSpec::validate() const {
  if (layers < 1) throw std::invalid_argument("model: layers must be at least 1");
  if (input_dim == 0 || classes == 0) throw std::invalid_argument("model: input_dim and classes must be positive");
  if (layers > 1 && arch != Architecture::kSGC && hidden == 0) throw std::invalid_argument("model: hidden must be positive");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw std::invalid_argument("model: dropout must lie in [0, 1)");
  if (arch == Architecture::kSGC && sgc_power < 0) throw std::invalid_argument("model: sgc_power must be non-negative");
}

std::vector<std::pair<std::size_t, std::size_t>> ModelSpec::weight_shapes() const {
  if (arch == Architecture::kSGC) return {{input_dim, classes}};
  std::vector<std::pair<std::size_t, std::size_t>> shapes;
  std::size_t in = input_dim;
  for (int l = 0; l < layers; ++l) {
    const std::size_t out = l + 1 == layers ? classes : hidden;
    shapes.emplace_back(arch == Architecture::kSAGE ? 2 * in : in, out);
    in = out;
  }
  return shapes;
}

ModelSpec ModelSpec::teacher(Architecture arch, std::size_t input_dim, std::size_t classes) {
  ModelSpec s;
  s.arch = arch;
  s.input_dim = input_dim;
  s.classes = classes;
  s.layers = 3;
  if (arch == Architecture::kSAGE) {
    s.hidden = 128;
    s.dropout = 0.5;
  } else {
    s.hidden = 64;
    s.dropout = 0.8;
  }
  return s;
}

ModelSpec ModelSpec::sgc_student(std::size_t input_dim, std::size_t classes, int power) {
  ModelSpec s;
  s.arch = Architecture::kSGC;
  s.layers = 1;
  s.hidden = 0;
  s.input_dim = input_dim;
  s.classes = classes;
  s.sgc_power = power;
  return s;
}

std::vector<DenseMat*> ModelParams::tensors() {
  std::vector<DenseMat*> out;
  for (std::size_t k = 0; k < weights.size(); ++k) {
    out.push_back(&weights[k]);
    out.push_back(&biases[k]);
  }
  return out;
}

std::vector<const DenseMat*> ModelParams::tensors() const {
  std::vector<const DenseMat*> out;
  for (std::size_t k = 0; k < weights.size(); ++k) {
    out.push_back(&weights[k]);
    out.push_back(&biases[k]);
  }
  return out;
}

ModelParams init_params(const ModelSpec& spec, std::uint64_t seed) {
  spec.validate();
  ModelParams p;
  p.spec = spec;
  p.seed = seed;
  auto rng = make_rng(seed, Stream::kInit);
  for (auto [in, out] : spec.weight_shapes()) {
    const double bound = std::sqrt(6.0 / static_cast<double>(in + out));
    std::uniform_real_distribution<double> dist(-bound, bound);
    DenseMat w(in, out);
    for (double& v : w.data()) v = dist(rng);
    p.weights.push_back(std::move(w));
    p.biases.emplace_back(1, out);
  }
  return p;
}

std::vector<std::string> ModelGraph::param_names() const {
  std::vector<std::string> names;
  for (std::size_t k = 0; k < weights.size(); ++k) {
    names.push_back(prefix + "W" + std::to_string(k));
    names.push_back(prefix + "b" + std::to_string(k));
  }
  return names;
}

ModelGraph build_model(ad::ExprGraph& g, const ModelSpec& spec, ad::Var features, bool training,
                       const std::string& prefix) {
  spec.validate();
  ModelGraph mg;
  mg.spec = spec;
  mg.prefix = prefix;
  const bool drop = training && spec.dropout > 0.0;
  const auto shapes = spec.weight_shapes();
  for (std::size_t k = 0; k < shapes.size(); ++k) {
    mg.weights.push_back(g.input(prefix + "W" + std::to_string(k)));
    mg.biases.push_back(g.input(prefix + "b" + std::to_string(k)));
  }
  const auto dropout = [&](ad::Var h, std::size_t width) {
    if (!drop) return h;
    const std::string name = prefix + "drop" + std::to_string(mg.dropout_masks.size());
    mg.dropout_masks.push_back(name);
    mg.dropout_widths.push_back(width);
    return g.mul(h, g.input(name));
  };

  ad::Var h = features;
  if (spec.arch == Architecture::kSGC) {
    if (spec.sgc_power > 0) {
      const ad::Var a = g.sparse_input(kSymAdjacency);
      for (int k = 0; k < spec.sgc_power; ++k) h = g.spmm(a, h);
    }
    h = dropout(h, spec.input_dim);
    mg.logits = g.add_row(g.matmul(h, mg.weights[0]), mg.biases[0]);
    return mg;
  }

  ad::Var adj;
  if (spec.arch == Architecture::kGCN) adj = g.sparse_input(kSymAdjacency);
  if (spec.arch == Architecture::kSAGE) adj = g.sparse_input(kMeanAdjacency);
  std::size_t width = spec.input_dim;
  for (int l = 0; l < spec.layers; ++l) {
    h = dropout(h, width);
    const ad::Var w = mg.weights[static_cast<std::size_t>(l)];
    ad::Var z;
    switch (spec.arch) {
      case Architecture::kGCN: z = g.spmm(adj, g.matmul(h, w)); break;
      case Architecture::kSAGE: z = g.matmul(g.concat_cols(h, g.spmm(adj, h)), w); break;
      default: z = g.matmul(h, w); break;
    }
    z = g.add_row(z, mg.biases[static_cast<std::size_t>(l)]);
    h = l + 1 == spec.layers ? z : g.relu(z);
    width = shapes[static_cast<std::size_t>(l)].second;
  }
  mg.logits = h;
  return mg;
}

void bind_params(ad::Bindings& b, const ModelGraph& mg, const ModelParams& params) {
  if (params.weights.size() != mg.weights.size()) throw ShapeError("bind_params: layer count differs from model graph");
  for (std::size_t k = 0; k < params.weights.size(); ++k) {
    b.set(mg.prefix + "W" + std::to_string(k), params.weights[k]);
    b.set(mg.prefix + "b" + std::to_string(k), params.biases[k]);
  }
}

void bind_operators(ad::Bindings& b, const GraphOperators& ops) {
  b.set(kSymAdjacency, ops.sym);
  b.set(kMeanAdjacency, ops.mean);
}

void bind_dropout(ad::Bindings& b, const ModelGraph& mg, std::size_t n, std::mt19937_64& rng) {
  const double keep = 1.0 - mg.spec.dropout;
  std::bernoulli_distribution coin(keep);
  for (std::size_t k = 0; k < mg.dropout_masks.size(); ++k) {
    DenseMat m(n, mg.dropout_widths[k]);
    for (double& v : m.data()) v = coin(rng) ? 1.0 / keep : 0.0;
    b.set(mg.dropout_masks[k], std::move(m));
  }
}

DenseMat model_forward(const ModelParams& params, const GraphOperators& ops, const DenseMat& x, bool training,
                       std::mt19937_64* rng) {
  if (x.cols() != params.spec.input_dim) {
    throw ShapeError("model_forward: features have " + std::to_string(x.cols()) + " columns, model expects " +
                     std::to_string(params.spec.input_dim));
  }
  ad::ExprGraph g;
  const ModelGraph mg = build_model(g, params.spec, g.input("X"), training);
  ad::Bindings b;
  bind_operators(b, ops);
  bind_params(b, mg, params);
  b.set("X", x);
  if (!mg.dropout_masks.empty()) {
    if (rng == nullptr) throw std::invalid_argument("model_forward: training with dropout needs an rng");
    bind_dropout(b, mg, x.rows(), *rng);
  }
  return g.forward(mg.logits, b);
}

Prediction predict_from_logits(const DenseMat& logits) {
  Prediction p;
  p.labels.resize(logits.rows());
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    auto row = logits.row(i);
    std::size_t best = 0;
    for (std::size_t k = 1; k < row.size(); ++k)
      if (row[k] > row[best]) best = k;
    p.labels[i] = static_cast<int>(best);
  }
  p.probabilities = row_softmax(logits);
  return p;
}

Prediction predict(const ModelParams& params, const GraphOperators& ops, const DenseMat& x) {
  return predict_from_logits(model_forward(params, ops, x, false));
}

double accuracy(const std::vector<int>& predicted, const std::vector<int>& truth,
                const std::vector<std::size_t>& nodes) {
  if (nodes.empty()) return 0.0;
  std::size_t hit = 0;
  for (std::size_t i : nodes) hit += predicted.at(i) == truth.at(i);
  return static_cast<double>(hit) / static_cast<double>(nodes.size());
}

void TrainConfig::validate() const {
  if (max_epochs < 1) throw std::invalid_argument("train: max_epochs must be at least 1");
  if (patience < 1 || patience > max_epochs) throw std::invalid_argument("train: patience must lie in [1, max_epochs]");
  // lr = 0 is allowed so that a run can be checked against its initialization.
  if (!(learning_rate >= 0.0)) throw std::invalid_argument("train: learning_rate must be non-negative");
  if (!(weight_decay >= 0.0)) throw std::invalid_argument("train: weight_decay must be non-negative");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0 && epsilon > 0.0)) {
    throw std::invalid_argument("train: invalid Adam constants");
  }
}

TrainConfig TrainConfig::teacher(Architecture arch) {
  TrainConfig c;
  c.weight_decay = arch == Architecture::kSAGE ? 5e-4 : 1e-3;
  return c;
}

ad::Var cross_entropy(ad::ExprGraph& g, ad::Var logits, const std::vector<int>& labels,
                      const std::vector<std::size_t>& nodes, std::size_t classes) {
  if (nodes.empty()) throw std::invalid_argument("cross_entropy: empty node set");
  DenseMat onehot(nodes.size(), classes);
  for (std::size_t r = 0; r < nodes.size(); ++r) {
    const int y = labels.at(nodes[r]);
    if (y < 0 || static_cast<std::size_t>(y) >= classes) throw std::out_of_range("cross_entropy: label out of range");
    onehot(r, static_cast<std::size_t>(y)) = 1.0;
  }
  const ad::Var picked = g.mul(g.gather_rows(g.log_softmax(logits), nodes), g.constant(std::move(onehot)));
  return g.scale(g.sum(picked), -1.0 / static_cast<double>(nodes.size()));
}

TrainResult train_supervised(const ModelSpec& spec, const AttributedGraph& graph, const GraphOperators& ops,
                             const Split& split, const TrainConfig& config) {
  spec.validate();
  config.validate();
  check_split(graph, split);
  const DenseMat& x = *ops.features;
  if (x.cols() != spec.input_dim) throw ShapeError("train_supervised: feature width differs from spec.input_dim");

  TrainResult result;
  ModelParams params = init_params(spec, config.seed);
  result.params = params;

  ad::ExprGraph g;
  const ModelGraph train_mg = build_model(g, spec, g.input("X"), true);
  const ad::Var loss = cross_entropy(g, train_mg.logits, graph.labels, split.train, spec.classes);
  ad::ExprGraph ge;
  const ModelGraph eval_mg = build_model(ge, spec, ge.input("X"), false);

  ad::Bindings b;
  bind_operators(b, ops);
  b.set("X", ops.features);
  ad::Bindings be;
  bind_operators(be, ops);
  be.set("X", ops.features);

  auto rng = make_rng(config.seed, Stream::kDropout);
  Adam adam({config.learning_rate, config.weight_decay, config.beta1, config.beta2, config.epsilon});
  const auto names = train_mg.param_names();
  auto& hist = result.history;
  hist.best_val_accuracy = -1.0;

  for (int epoch = 0; epoch < config.max_epochs; ++epoch) {
    bind_params(b, train_mg, params);
    bind_dropout(b, train_mg, x.rows(), rng);
    ad::BackwardResult r;
    try {
      r = g.backward(loss, b);
    } catch (const ad::NonFiniteError& e) {
      throw TrainingDiverged("training diverged at epoch " + std::to_string(epoch) + ": " + e.what(), epoch);
    }
    if (!std::isfinite(r.value)) {
      throw TrainingDiverged("training diverged at epoch " + std::to_string(epoch) + ": non-finite loss", epoch);
    }
    std::vector<const DenseMat*> grads;
    for (const auto& nm : names) grads.push_back(&r.gradients.at(nm));
    adam.step(params.tensors(), grads);

    bind_params(be, eval_mg, params);
    DenseMat logits;
    try {
      logits = ge.forward(eval_mg.logits, be);
    } catch (const ad::NonFiniteError& e) {
      throw TrainingDiverged("training diverged at epoch " + std::to_string(epoch) + ": " + e.what(), epoch);
    }
    const Prediction pred = predict_from_logits(logits);
    const double val = split.val.empty() ? accuracy(pred.labels, graph.labels, split.train)
                                         : accuracy(pred.labels, graph.labels, split.val);
    hist.train_loss.push_back(r.value);
    hist.val_accuracy.push_back(val);
    if (val > hist.best_val_accuracy) {
      hist.best_val_accuracy = val;
      hist.best_epoch = epoch;
      result.params = params;
    } else if (epoch - hist.best_epoch >= config.patience) {
      break;
    }
  }
  return result;
}

namespace {

using nlohmann::json;

json matrix_json(const DenseMat& m) {
  return json{{"rows", m.rows()}, {"cols", m.cols()}, {"data", m.data()}};
}

DenseMat matrix_from_json(const json& j) {
  return DenseMat(j.at("rows").get<std::size_t>(), j.at("cols").get<std::size_t>(),
                  j.at("data").get<std::vector<double>>());
}

}  // namespace

void save_checkpoint(const ModelParams& params, const std::filesystem::path& path) {
  json j;
  j["format"] = "fairdistill-model";
  j["version"] = 1;
  const ModelSpec& s = params.spec;
  j["spec"] = {{"architecture", to_string(s.arch)}, {"layers", s.layers},     {"hidden", s.hidden},
               {"input_dim", s.input_dim},          {"classes", s.classes},   {"dropout", s.dropout},
               {"sgc_power", s.sgc_power}};
  j["seed"] = params.seed;
  j["weights"] = json::array();
  j["biases"] = json::array();
  for (const auto& w : params.weights) j["weights"].push_back(matrix_json(w));
  for (const auto& b : params.biases) j["biases"].push_back(matrix_json(b));
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
  out << j.dump() << '\n';
}

ModelParams load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
  json j;
  try {
    j = json::parse(in);
    if (j.at("format") != "fairdistill-model" || j.at("version") != 1) {
      throw std::runtime_error("unsupported checkpoint format");
    }
    ModelParams p;
    const json& s = j.at("spec");
    p.spec.arch = parse_architecture(s.at("architecture").get<std::string>());
    p.spec.layers = s.at("layers").get<int>();
    p.spec.hidden = s.at("hidden").get<std::size_t>();
    p.spec.input_dim = s.at("input_dim").get<std::size_t>();
    p.spec.classes = s.at("classes").get<std::size_t>();
    p.spec.dropout = s.at("dropout").get<double>();
    p.spec.sgc_power = s.at("sgc_power").get<int>();
    p.spec.validate();
    p.seed = j.at("seed").get<std::uint64_t>();
    for (const auto& w : j.at("weights")) p.weights.push_back(matrix_from_json(w));
    for (const auto& b : j.at("biases")) p.biases.push_back(matrix_from_json(b));
    const auto shapes = p.spec.weight_shapes();
    if (p.weights.size() != shapes.size() || p.biases.size() != shapes.size()) {
      throw std::runtime_error("layer count does not match spec");
    }
    for (std::size_t k = 0; k < shapes.size(); ++k) {
      if (p.weights[k].rows() != shapes[k].first || p.weights[k].cols() != shapes[k].second ||
          p.biases[k].rows() != 1 || p.biases[k].cols() != shapes[k].second) {
        throw std::runtime_error("weight shape does not match spec at layer " + std::to_string(k));
      }
    }
    return p;
  } catch (const json::exception& e) {
    throw std::runtime_error("malformed checkpoint " + path.string() + ": " + e.what());
  }
}

}  // namespace fairdistill
