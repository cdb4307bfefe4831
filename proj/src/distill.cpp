#include "fairdistill/distill.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cmath>
#include <random>
#include <stdexcept>

#include "fairdistill/rng.hpp"

namespace fairdistill {

std::string to_string(Distance d) {
  switch (d) {
    case Distance::kSquaredEuclidean:
      return "sq";
    case Distance::kCosine:
      return "cosine";
    case Distance::kKL:
      return "kl";
  }
  return "?";
}

Distance parse_distance(const std::string& name) {
  std::string s(name);
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char ch) { return std::tolower(ch); });
  if (s == "sq" || s == "squared-euclidean" || s == "euclidean") return Distance::kSquaredEuclidean;
  if (s == "cos" || s == "cosine") return Distance::kCosine;
  if (s == "kl") return Distance::kKL;
  throw std::invalid_argument("unknown distance '" + name + "' (expected sq, cosine or kl)");
}

void DistillConfig::validate() const {
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw std::invalid_argument("distill: lambda must be finite and >= 0");
  if (epochs < 1) throw std::invalid_argument("distill: epochs must be at least 1");
  if (!(proxy_learning_rate >= 0.0) || !(proxy_weight_decay >= 0.0)) {
    throw std::invalid_argument("distill: proxy learning rate and weight decay must be >= 0");
  }
  if (!(proxy_init_std >= 0.0)) throw std::invalid_argument("distill: proxy_init_std must be >= 0");
  if (!(student_optimizer.learning_rate >= 0.0) || !(student_optimizer.weight_decay >= 0.0)) {
    throw std::invalid_argument("distill: student learning rate and weight decay must be >= 0");
  }
}

ad::Var utility_loss(ad::ExprGraph& g, ad::Var student_logits, ad::Var teacher_logits, Distance distance) {
  switch (distance) {
    case Distance::kSquaredEuclidean:
      return g.sum(g.row_sq_dist(student_logits, teacher_logits));
    case Distance::kCosine:
      return g.sum(g.row_cos_dist(student_logits, teacher_logits));
    case Distance::kKL:
      return g.sum(g.row_kl(teacher_logits, student_logits));
  }
  throw std::invalid_argument("utility_loss: bad distance");
}

double utility_loss(const DenseMat& student_logits, const DenseMat& teacher_logits, Distance distance) {
  if (!student_logits.same_shape(teacher_logits)) {
    throw ShapeError("utility_loss: student " + student_logits.shape_string() + " vs teacher " +
                     teacher_logits.shape_string());
  }
  ad::ExprGraph g;
  const ad::Var u = utility_loss(g, g.input("S"), g.input("T"), distance);
  ad::Bindings b;
  b.set("S", student_logits).set("T", teacher_logits);
  return g.forward(u, b)(0, 0);
}

DenseMat concat_proxy(const DenseMat& x, const DenseMat& proxy) {
  if (proxy.cols() == 0) return x;
  return hconcat(x, proxy);
}

DenseMat pseudo_proxy(const DenseMat& proxy) {
  DenseMat row(1, proxy.cols());
  if (proxy.rows() == 0) return row;
  for (std::size_t i = 0; i < proxy.rows(); ++i)
    for (std::size_t j = 0; j < proxy.cols(); ++j) row(0, j) += proxy(i, j);
  for (double& v : row.data()) v /= static_cast<double>(proxy.rows());
  return row;
}

DenseMat broadcast_row(const DenseMat& row, std::size_t n) {
  if (row.rows() != 1) throw ShapeError("broadcast_row: expected one row, got " + row.shape_string());
  DenseMat out(n, row.cols());
  for (std::size_t i = 0; i < n; ++i) std::copy(row.row(0).begin(), row.row(0).end(), out.row(i).begin());
  return out;
}

DenseMat group_one_hot(const std::vector<int>& sensitive) {
  DenseMat out(sensitive.size(), 2);
  for (std::size_t i = 0; i < sensitive.size(); ++i) out(i, sensitive[i] == 0 ? 0 : 1) = 1.0;
  return out;
}

DistillGraph build_distill_graph(ad::ExprGraph& g, const DistillGraphInputs& in, const DistillConfig& cfg) {
  const std::size_t dp = cfg.proxy_dim;
  if (in.student.input_dim != in.features->cols() + dp) {
    throw ShapeError("distill: student input_dim " + std::to_string(in.student.input_dim) + " != attributes " +
                     std::to_string(in.features->cols()) + " + proxy " + std::to_string(dp));
  }
  if (in.teacher_train_logits.rows() != in.train.size() || in.teacher_train_logits.cols() != in.student.classes) {
    throw ShapeError("distill: teacher logits " + in.teacher_train_logits.shape_string() + " do not match " +
                     std::to_string(in.train.size()) + " training nodes and " + std::to_string(in.student.classes) +
                     " classes");
  }
  const bool training = in.student.dropout > 0.0;
  const ad::Var x = g.constant(*in.features);
  const ad::Var feat_proxy = dp ? g.concat_cols(x, g.input("proxy")) : x;
  const ad::Var feat_pseudo = dp ? g.concat_cols(x, g.input("pseudo")) : x;

  DistillGraph d;
  d.on_proxy = build_model(g, in.student, feat_proxy, training, "s_");
  d.on_pseudo = build_model(g, in.student, feat_pseudo, training, "s_");
  const ad::Var teacher = g.constant(in.teacher_train_logits);
  d.utility = utility_loss(g, g.gather_rows(d.on_proxy.logits, in.train), teacher, cfg.distance);
  d.attribution = soft_bias(g, g.softmax(d.on_pseudo.logits), in.groups, cfg.notion, in.labels);
  d.proxy_loss = g.scale(soft_bias(g, g.softmax(d.on_proxy.logits), in.groups, cfg.notion, in.labels), -1.0);

  ad::Var phi = in.utility_weight == 1.0 ? d.utility : g.scale(d.utility, in.utility_weight);
  if (cfg.lambda > 0.0) phi = g.add(phi, g.scale(d.attribution, cfg.lambda));
  if (cfg.utility_on_pseudo) {
    phi = g.add(phi, g.scale(utility_loss(g, g.gather_rows(d.on_pseudo.logits, in.train), teacher, cfg.distance),
                             in.utility_weight));
  }
  d.phi_loss = phi;
  return d;
}

namespace {

double soft_bias_of(const ModelParams& student, const GraphOperators& ops, const DenseMat& inputs,
                    const GroupIndex& groups, Notion notion, const std::vector<int>* labels) {
  const DenseMat logits = model_forward(student, ops, inputs, false);
  return soft_bias_value(row_softmax(logits), groups, notion, labels);
}

}  // namespace

double proxy_loss(const ModelParams& student, const GraphOperators& ops, const DenseMat& proxy,
                  const GroupIndex& groups, Notion notion, const std::vector<int>* labels) {
  return -soft_bias_of(student, ops, concat_proxy(*ops.features, proxy), groups, notion, labels);
}

double attribution_loss(const ModelParams& student, const GraphOperators& ops, const DenseMat& pseudo,
                        const GroupIndex& groups, Notion notion, const std::vector<int>* labels) {
  const DenseMat rows = pseudo.rows() == 1 ? broadcast_row(pseudo, ops.features->rows()) : pseudo;
  return soft_bias_of(student, ops, concat_proxy(*ops.features, rows), groups, notion, labels);
}

Prediction infer_fair(const ModelParams& student, const GraphOperators& ops, const DenseMat& proxy) {
  const std::size_t n = ops.features->rows();
  if (proxy.cols() > 0 && proxy.rows() != n) {
    throw ShapeError("infer_fair: proxy has " + std::to_string(proxy.rows()) + " rows, graph has " +
                     std::to_string(n));
  }
  return predict(student, ops, concat_proxy(*ops.features, broadcast_row(pseudo_proxy(proxy), n)));
}

DenseMat teacher_logits(const ModelParams& teacher, const GraphOperators& ops) {
  return model_forward(teacher, ops, *ops.features, false);
}

namespace {

[[noreturn]] void diverged(const std::string& which, int epoch, const std::string& detail) {
  throw TrainingDiverged("distillation diverged at epoch " + std::to_string(epoch) + " in the " + which + " loss" +
                             (detail.empty() ? "" : ": " + detail),
                         epoch);
}

}  // namespace

AlternatingTrainer::AlternatingTrainer(const ModelParams& teacher, const ModelSpec& student_spec,
                                       const AttributedGraph& graph, const GraphOperators& ops, const Split& split,
                                       DistillConfig cfg, ProxyMode mode)
    : graph_(graph), ops_(ops), split_(split), mode_(mode) {
  cfg.validate();
  student_spec.validate();
  check_split(graph, split);
  if (teacher.spec.classes != student_spec.classes) {
    throw ShapeError("distill: teacher has " + std::to_string(teacher.spec.classes) + " classes, student " +
                     std::to_string(student_spec.classes));
  }
  const std::size_t n = graph.num_nodes();
  if (mode == ProxyMode::kNone) {
    cfg.proxy_dim = 0;
    proxy_ = DenseMat(n, 0);
  } else if (mode == ProxyMode::kFixed) {
    cfg.proxy_dim = 2;
    proxy_ = group_one_hot(graph.sensitive);
  } else {
    if (cfg.proxy_dim == 0) throw std::invalid_argument("distill: a learned proxy needs proxy_dim >= 1");
    proxy_ = DenseMat(n, cfg.proxy_dim);
    auto rng = make_rng(cfg.seed, Stream::kProxy);
    std::normal_distribution<double> normal(0.0, cfg.proxy_init_std);
    for (double& v : proxy_.data()) v = normal(rng);
  }
  cfg_ = cfg;

  DistillGraphInputs in;
  in.student = student_spec;
  in.features = ops.features;
  in.teacher_train_logits = gather_rows(teacher_logits(teacher, ops), split.train);
  in.train = split.train;
  in.groups = GroupIndex::from(graph.sensitive, split.train);
  in.labels = &graph.labels;
  graph_ops_ = build_distill_graph(expr_, in, cfg_);
  names_ = graph_ops_.on_proxy.param_names();

  params_ = init_params(student_spec, cfg_.seed);
  params_.seed = cfg_.seed;
  student_opt_ = Adam(cfg_.student_optimizer);
  proxy_opt_ = Adam({cfg_.proxy_learning_rate, cfg_.proxy_weight_decay, 0.9, 0.999, 1e-8});
  dropout_rng_ = make_rng(cfg_.seed, Stream::kDropout);
  bind_operators(bindings_, ops);
}

void AlternatingTrainer::bind_state() {
  bind_params(bindings_, graph_ops_.on_proxy, params_);
  if (cfg_.proxy_dim > 0) {
    bindings_.set("proxy", proxy_);
    bindings_.set("pseudo", broadcast_row(pseudo_proxy(proxy_), proxy_.rows()));
  }
}

double AlternatingTrainer::step_student() {
  bind_state();
  if (!graph_ops_.on_proxy.dropout_masks.empty()) {
    bind_dropout(bindings_, graph_ops_.on_proxy, proxy_.rows(), dropout_rng_);
  }
  ad::BackwardResult r;
  try {
    r = expr_.backward(graph_ops_.phi_loss, bindings_);
  } catch (const ad::NonFiniteError& e) {
    diverged("student", epoch_, e.what());
  }
  if (!std::isfinite(r.value)) {
    double u = NAN;
    try {
      u = expr_.forward(graph_ops_.utility, bindings_)(0, 0);
    } catch (const ad::NonFiniteError&) {
    }
    diverged(std::isfinite(u) ? "attribution" : "utility", epoch_, "");
  }
  std::vector<const DenseMat*> grads;
  for (const auto& nm : names_) grads.push_back(&r.gradients.at(nm));
  student_opt_.step(params_.tensors(), grads);
  history_.phi_loss.push_back(r.value);
  return r.value;
}

double AlternatingTrainer::step_proxy() {
  if (mode_ != ProxyMode::kLearned) return 0.0;
  bind_state();
  ad::BackwardResult r;
  try {
    r = expr_.backward(graph_ops_.proxy_loss, bindings_);
  } catch (const ad::NonFiniteError& e) {
    diverged("proxy", epoch_, e.what());
  }
  if (!std::isfinite(r.value)) diverged("proxy", epoch_, "");
  proxy_opt_.step({&proxy_}, {&r.gradients.at("proxy")});
  history_.proxy_bias.push_back(-r.value);
  return r.value;
}

void AlternatingTrainer::run_epoch() {
  step_student();
  step_proxy();
  ++epoch_;
}

DistillResult AlternatingTrainer::finish(const std::string& model_name) const {
  DistillResult result;
  const Prediction pred = infer_fair(params_, ops_, proxy_);
  result.report = evaluate_fairness(model_name, pred.labels, pred.probabilities, graph_.labels, graph_.sensitive,
                                    split_.test, cfg_.seed);
  if (mode_ == ProxyMode::kFixed) {
    const Prediction raw = predict(params_, ops_, concat_proxy(*ops_.features, proxy_));
    result.train_time_report = evaluate_fairness(model_name + "-train-proxy", raw.labels, raw.probabilities,
                                                 graph_.labels, graph_.sensitive, split_.test, cfg_.seed);
  }
  result.student = params_;
  result.proxy = proxy_;
  result.history = history_;
  result.epochs_run = epoch_;
  return result;
}

namespace {

DistillResult run(const ModelParams& teacher, const ModelSpec& student_spec, const AttributedGraph& graph,
                  const GraphOperators& ops, const Split& split, DistillConfig cfg, ProxyMode mode,
                  bool attribution, const std::string& model_name) {
  const auto start = std::chrono::steady_clock::now();
  if (!attribution) {
    cfg.lambda = 0.0;
    cfg.utility_on_pseudo = false;
  }
  AlternatingTrainer trainer(teacher, student_spec, graph, ops, split, cfg, mode);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) trainer.run_epoch();
  DistillResult result = trainer.finish(model_name);
  result.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

}  // namespace

DistillResult reliant_train(const ModelParams& teacher, const ModelSpec& student_spec, const AttributedGraph& graph,
                            const GraphOperators& ops, const Split& split, const DistillConfig& cfg) {
  return run(teacher, student_spec, graph, ops, split, cfg, cfg.proxy_dim > 0 ? ProxyMode::kLearned : ProxyMode::kNone,
             true, "reliant");
}

DistillResult vanilla_distill(const ModelParams& teacher, const ModelSpec& student_spec,
                              const AttributedGraph& graph, const GraphOperators& ops, const Split& split,
                              const DistillConfig& cfg) {
  return run(teacher, student_spec, graph, ops, split, cfg, ProxyMode::kNone, false, "vanilla");
}

DistillResult one_hot_distill(const ModelParams& teacher, const ModelSpec& student_spec,
                              const AttributedGraph& graph, const GraphOperators& ops, const Split& split,
                              const DistillConfig& cfg) {
  return run(teacher, student_spec, graph, ops, split, cfg, ProxyMode::kFixed, false, "onehot");
}

}  // namespace fairdistill
