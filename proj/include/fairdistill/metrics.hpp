#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "fairdistill/autodiff.hpp"
#include "fairdistill/matrix.hpp"

namespace fairdistill {

/// Node indices split by sensitive group.
struct GroupIndex {
  std::vector<std::size_t> group0;
  std::vector<std::size_t> group1;

  /// Restricts to `nodes` and splits by `sensitive`.
  static GroupIndex from(const std::vector<int>& sensitive, const std::vector<std::size_t>& nodes);
};

enum class Notion { kSP, kEO };

std::string to_string(Notion notion);
Notion parse_notion(const std::string& name);

struct BiasValue {
  Notion notion = Notion::kSP;
  /// One gap per class; NaN for skipped classes.
  std::vector<double> per_class;
  /// Classes whose conditional rate is undefined for some group (EO only).
  std::vector<int> skipped_classes;
  /// Max over computable classes.
  double aggregate = 0.0;
  /// Mean over computable classes.
  double mean = 0.0;
};

/// Per-class |P(y_hat = k | s = 0) - P(y_hat = k | s = 1)|, max-aggregated.
BiasValue delta_sp(const std::vector<int>& predicted, const GroupIndex& groups, std::size_t classes);

/// Per-class true-positive-rate gap, max-aggregated over classes present in
/// both groups.
BiasValue delta_eo(const std::vector<int>& predicted, const std::vector<int>& truth, const GroupIndex& groups,
                   std::size_t classes);

/// Differentiable bias level of an n x c probability node: the summed
/// per-class gap of group-mean probabilities. For EO each class mean is taken
/// over the nodes whose true label is that class; `truth` is required then.
ad::Var soft_bias(ad::ExprGraph& g, ad::Var probabilities, const GroupIndex& groups, Notion notion,
                  const std::vector<int>* truth = nullptr);

/// soft_bias evaluated on a concrete matrix.
double soft_bias_value(const DenseMat& probabilities, const GroupIndex& groups, Notion notion,
                       const std::vector<int>* truth = nullptr);

struct FairnessReport {
  std::string model;
  double accuracy = 0.0;
  double delta_sp = 0.0;
  double delta_eo = 0.0;
  double soft_sp = 0.0;
  double soft_eo = 0.0;
  std::uint64_t seed = 0;
};

/// Scores predictions on `nodes`.
FairnessReport evaluate_fairness(const std::string& model, const std::vector<int>& predicted,
                                 const DenseMat& probabilities, const std::vector<int>& truth,
                                 const std::vector<int>& sensitive, const std::vector<std::size_t>& nodes,
                                 std::uint64_t seed);

/// Header "model,accuracy,delta_sp,delta_eo,soft_sp,soft_eo,seed"; numbers are
/// printed with fixed precision so reruns produce identical bytes.
void write_reports_csv(std::ostream& out, const std::vector<FairnessReport>& reports);
std::vector<FairnessReport> read_reports_csv(std::istream& in);

}  // namespace fairdistill
