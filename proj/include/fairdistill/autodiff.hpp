#pragma once

#include <cstddef>
#include <map>
#include <memory>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "fairdistill/matrix.hpp"

/// Reverse-mode automatic differentiation over dense matrices and
/// sparse-dense products.
///
/// An ExprGraph is built once from named inputs and operations, then
/// evaluated any number of times against different Bindings. Evaluation state
/// lives entirely inside each forward/backward call, so a graph can be
/// evaluated concurrently from several threads.
namespace fairdistill::ad {

class NonFiniteError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

class NonScalarRootError : public ShapeError {
 public:
  using ShapeError::ShapeError;
};

enum class OpKind {
  kInput,
  kSparseInput,
  kConstant,
  kMatMul,
  kSpMM,
  kAdd,
  kSub,
  kMul,
  kScale,
  kAddRow,
  kRelu,
  kSoftmax,
  kLogSoftmax,
  kLog,
  kAbs,
  kGatherRows,
  kSubsetMean,
  kSum,
  kMean,
  kConcatCols,
  kRowSqDist,
  kRowCosDist,
  kRowKL,
};

std::string_view op_name(OpKind kind);

class ExprGraph;

/// Handle to a node of an ExprGraph.
class Var {
 public:
  Var() = default;

  std::size_t id() const noexcept { return id_; }
  ExprGraph* graph() const noexcept { return graph_; }
  bool valid() const noexcept { return graph_ != nullptr; }

 private:
  friend class ExprGraph;
  Var(ExprGraph* graph, std::size_t id) : graph_(graph), id_(id) {}

  ExprGraph* graph_ = nullptr;
  std::size_t id_ = 0;
};

/// Named values for the free inputs of a graph.
class Bindings {
 public:
  Bindings& set(const std::string& name, DenseMat value);
  Bindings& set(const std::string& name, std::shared_ptr<const DenseMat> value);
  Bindings& set(const std::string& name, std::shared_ptr<const SparseMat> value);

  const DenseMat* dense(const std::string& name) const;
  const SparseMat* sparse(const std::string& name) const;
  bool contains(const std::string& name) const;

 private:
  std::map<std::string, std::shared_ptr<const DenseMat>, std::less<>> dense_;
  std::map<std::string, std::shared_ptr<const SparseMat>, std::less<>> sparse_;
};

struct BackwardResult {
  double value = 0.0;
  /// One entry per dense input of the graph that is bound; inputs the root
  /// does not depend on receive zeros.
  std::map<std::string, DenseMat> gradients;
};

class ExprGraph {
 public:
  ExprGraph() = default;
  ExprGraph(const ExprGraph&) = delete;
  ExprGraph& operator=(const ExprGraph&) = delete;

  /// Dense input; its shape comes from the binding.
  Var input(const std::string& name);
  Var sparse_input(const std::string& name);
  Var constant(DenseMat value);

  Var matmul(Var a, Var b);
  /// sparse * dense; `sparse` must be a sparse input.
  Var spmm(Var sparse, Var dense);
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var scale(Var a, double factor);
  /// Adds a 1 x cols row to every row of `a`.
  Var add_row(Var a, Var row);
  Var relu(Var a);
  Var softmax(Var a);
  Var log_softmax(Var a);
  Var log(Var a);
  Var abs(Var a);
  Var gather_rows(Var a, std::vector<std::size_t> rows);
  /// Column means over the selected rows; result is 1 x cols.
  Var subset_mean(Var a, std::vector<std::size_t> rows);
  Var sum(Var a);
  Var mean(Var a);
  Var concat_cols(Var a, Var b);
  /// Per-row squared Euclidean distance; result is rows x 1.
  Var row_sq_dist(Var a, Var b);
  /// Per-row 1 - cos(a_i, b_i); rows with a zero vector give 1.
  Var row_cos_dist(Var a, Var b);
  /// Per-row KL(softmax(p) || softmax(q)).
  Var row_kl(Var p_logits, Var q_logits);

  DenseMat forward(Var root, const Bindings& bindings) const;
  /// Root must evaluate to a 1x1 matrix.
  BackwardResult backward(Var root, const Bindings& bindings) const;

  std::size_t size() const noexcept { return nodes_.size(); }
  std::vector<std::string> input_names() const;
  /// Human-readable node label, e.g. "#7 matmul".
  std::string describe(Var v) const;

 private:
  struct Node {
    OpKind kind;
    std::size_t a = 0;
    std::size_t b = 0;
    double scalar = 0.0;
    std::string name;
    std::vector<std::size_t> rows;
    std::shared_ptr<const DenseMat> constant;
  };
  struct Evaluation;

  Var push(Node node);
  std::size_t check(Var v) const;
  std::vector<bool> reachable_from(std::size_t root) const;
  void evaluate(std::size_t root, const Bindings& bindings, Evaluation& ev) const;
  std::string describe(std::size_t id) const;

  std::vector<Node> nodes_;
};

Var operator+(Var a, Var b);
Var operator-(Var a, Var b);
/// Elementwise product.
Var operator*(Var a, Var b);
Var operator*(double factor, Var a);

struct GradCheckOptions {
  double epsilon = 1e-5;
  double tolerance = 1e-4;
};

struct GradCheckReport {
  /// max over entries of |analytic - numeric| / max(1, |numeric|)
  std::map<std::string, double> max_relative_error;
  bool passed = true;
  double worst() const;
};

/// Compares backward() against central finite differences for every bound
/// dense input of the graph.
GradCheckReport gradient_check(const ExprGraph& graph, Var root, const Bindings& bindings,
                               const GradCheckOptions& options = {});

}  // namespace fairdistill::ad
