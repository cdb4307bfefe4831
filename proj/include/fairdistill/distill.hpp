#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "fairdistill/autodiff.hpp"
#include "fairdistill/graph_data.hpp"
#include "fairdistill/metrics.hpp"
#include "fairdistill/models.hpp"
#include "fairdistill/optim.hpp"

namespace fairdistill {

enum class Distance { kSquaredEuclidean, kCosine, kKL };

std::string to_string(Distance d);
/// Accepts "sq", "squared-euclidean", "euclidean", "cos", "cosine", "kl".
Distance parse_distance(const std::string& name);

struct DistillConfig {
  Distance distance = Distance::kSquaredEuclidean;
  /// Weight of the attribution term.
  double lambda = 100.0;
  /// Proxy columns appended to the attributes; 0 disables the proxy.
  std::size_t proxy_dim = 8;
  double proxy_learning_rate = 1e-2;
  double proxy_weight_decay = 1e-2;
  double proxy_init_std = 0.01;
  AdamOptions student_optimizer{1e-2, 5e-4};
  int epochs = 600;
  std::uint64_t seed = 0;
  Notion notion = Notion::kSP;
  /// Adds a second utility term on the pseudo-proxy inputs.
  bool utility_on_pseudo = false;

  void validate() const;
};

/// Summed per-row distance between student and teacher logits.
ad::Var utility_loss(ad::ExprGraph& g, ad::Var student_logits, ad::Var teacher_logits, Distance distance);
double utility_loss(const DenseMat& student_logits, const DenseMat& teacher_logits, Distance distance);

/// [X, proxy]; a proxy with no columns returns X.
DenseMat concat_proxy(const DenseMat& x, const DenseMat& proxy);
/// 1 x d_p column mean of the proxy.
DenseMat pseudo_proxy(const DenseMat& proxy);
/// `row` repeated n times.
DenseMat broadcast_row(const DenseMat& row, std::size_t n);

/// The two student passes of one distillation epoch inside one graph: one on
/// [X, proxy] and one on [X, pseudo]. Both share the parameter names, so a
/// gradient with respect to a parameter sums over the two passes.
///
/// Dense inputs: "proxy" (n x d_p), "pseudo" (n x d_p, constant rows) and the
/// student parameters under prefix "s_".
struct DistillGraph {
  ModelGraph on_proxy;
  ModelGraph on_pseudo;
  ad::Var utility;
  /// soft bias of the pseudo-proxy pass; the attribution loss.
  ad::Var attribution;
  /// utility_weight * utility + lambda * attribution (+ pseudo utility).
  ad::Var phi_loss;
  /// minus the soft bias of the real-proxy pass.
  ad::Var proxy_loss;
};

struct DistillGraphInputs {
  ModelSpec student;
  std::shared_ptr<const DenseMat> features;
  /// Teacher logits for the training nodes, in the order of `train`.
  DenseMat teacher_train_logits;
  std::vector<std::size_t> train;
  GroupIndex groups;
  /// Needed for EO.
  const std::vector<int>* labels = nullptr;
  double utility_weight = 1.0;
};

DistillGraph build_distill_graph(ad::ExprGraph& g, const DistillGraphInputs& in, const DistillConfig& cfg);

/// Minus the soft bias of the student fed [X, proxy].
double proxy_loss(const ModelParams& student, const GraphOperators& ops, const DenseMat& proxy,
                  const GroupIndex& groups, Notion notion, const std::vector<int>* labels = nullptr);
/// Soft bias of the student fed [X, broadcast(pseudo)].
double attribution_loss(const ModelParams& student, const GraphOperators& ops, const DenseMat& pseudo,
                        const GroupIndex& groups, Notion notion, const std::vector<int>* labels = nullptr);

/// Prediction on [X, pseudo_proxy(proxy)].
Prediction infer_fair(const ModelParams& student, const GraphOperators& ops, const DenseMat& proxy);

struct DistillHistory {
  /// Student objective before each student step.
  std::vector<double> phi_loss;
  /// Soft bias with the learned proxy before each proxy step; empty when the
  /// proxy is fixed.
  std::vector<double> proxy_bias;
};

struct DistillResult {
  ModelParams student;
  /// n x d_p; empty for vanilla.
  DenseMat proxy;
  /// Test-node report on inference inputs.
  FairnessReport report;
  /// One-hot baseline only: test-node report with the group indicators fed.
  std::optional<FairnessReport> train_time_report;
  DistillHistory history;
  int epochs_run = 0;
  double wall_seconds = 0.0;
};

/// Teacher logits for every node.
DenseMat teacher_logits(const ModelParams& teacher, const GraphOperators& ops);

enum class ProxyMode {
  /// Student sees X only.
  kNone,
  /// Proxy initialized from a small Gaussian and updated every epoch.
  kLearned,
  /// Group one-hot, never updated.
  kFixed,
};

/// One distillation run, advanced a step at a time.
class AlternatingTrainer {
 public:
  AlternatingTrainer(const ModelParams& teacher, const ModelSpec& student_spec, const AttributedGraph& graph,
                     const GraphOperators& ops, const Split& split, DistillConfig cfg, ProxyMode mode);
  AlternatingTrainer(const AlternatingTrainer&) = delete;
  AlternatingTrainer& operator=(const AlternatingTrainer&) = delete;

  /// Adam step on the student parameters; the proxy is read only. Returns the
  /// objective before the step.
  double step_student();
  /// Adam step on the proxy; the student is read only. Returns the proxy loss
  /// before the step, or 0 when the proxy is not learned.
  double step_proxy();
  void run_epoch();

  const ModelParams& student() const noexcept { return params_; }
  const DenseMat& proxy() const noexcept { return proxy_; }
  const DistillConfig& config() const noexcept { return cfg_; }
  const DistillGraph& graph_ops() const noexcept { return graph_ops_; }
  const ad::ExprGraph& expr() const noexcept { return expr_; }
  DistillResult finish(const std::string& model_name) const;

 private:
  void bind_state();

  const AttributedGraph& graph_;
  const GraphOperators& ops_;
  const Split& split_;
  ProxyMode mode_;
  DistillConfig cfg_;
  ad::ExprGraph expr_;
  DistillGraph graph_ops_;
  std::vector<std::string> names_;
  ModelParams params_;
  DenseMat proxy_;
  Adam student_opt_{AdamOptions{}};
  Adam proxy_opt_{AdamOptions{}};
  std::mt19937_64 dropout_rng_;
  ad::Bindings bindings_;
  DistillHistory history_;
  int epoch_ = 0;
};

/// Alternating optimization: one student step on utility + lambda *
/// attribution, then one proxy step on the proxy loss, per epoch. Losses use
/// training nodes; the returned report uses test nodes through infer_fair.
/// The final parameters are returned.
DistillResult reliant_train(const ModelParams& teacher, const ModelSpec& student_spec, const AttributedGraph& graph,
                            const GraphOperators& ops, const Split& split, const DistillConfig& cfg);

/// Utility loss only; the student sees X alone.
DistillResult vanilla_distill(const ModelParams& teacher, const ModelSpec& student_spec,
                              const AttributedGraph& graph, const GraphOperators& ops, const Split& split,
                              const DistillConfig& cfg);

/// Utility loss only, with the group one-hot as a fixed two-column proxy;
/// inference replaces it by its mean.
DistillResult one_hot_distill(const ModelParams& teacher, const ModelSpec& student_spec,
                              const AttributedGraph& graph, const GraphOperators& ops, const Split& split,
                              const DistillConfig& cfg);

/// n x 2 indicator of the sensitive group.
DenseMat group_one_hot(const std::vector<int>& sensitive);

}  // namespace fairdistill
