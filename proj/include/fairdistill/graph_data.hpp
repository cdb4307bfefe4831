#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "fairdistill/matrix.hpp"

namespace fairdistill {

/// Malformed or inconsistent input data.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct AttributedGraph {
  /// Binary, symmetric, zero diagonal.
  SparseMat adjacency;
  DenseMat attributes;
  std::vector<int> labels;
  /// 0 or 1 per node.
  std::vector<int> sensitive;
  std::vector<std::string> node_ids;
  std::vector<std::string> attribute_names;

  std::size_t num_nodes() const noexcept { return labels.size(); }
  int num_classes() const;
  std::size_t num_edges() const noexcept { return adjacency.nnz() / 2; }
  /// Throws DataError when an invariant does not hold.
  void validate() const;
};

struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
  std::vector<std::size_t> test;

  friend bool operator==(const Split&, const Split&) = default;
};

struct SplitFractions {
  double train = 0.6;
  double val = 0.2;
  double test = 0.2;
};

Split split_nodes(std::size_t n, const SplitFractions& fractions, std::uint64_t seed);

/// Throws DataError when some class has no training node.
void check_split(const AttributedGraph& graph, const Split& split);

struct SynthSpec {
  std::size_t n = 2000;
  std::size_t d = 16;
  int c = 2;
  double group_fraction = 0.5;
  double homophily = 0.8;
  double bias_strength = 0.8;
  double avg_degree = 5.0;
  std::uint64_t seed = 0;

  // Shape of the injected bias. bias_strength scales all of them, so with
  // bias_strength = 0 the group is independent of everything else.
  double class_separation = 1.2;
  /// Group-conditional label logit skew.
  double label_skew = 0.0;
  /// Length of the group mean shift at full strength.
  double group_shift = 2.5;
  /// Cosine between the group shift and the class direction.
  double shift_alignment = 0.3;
  /// Probability that an edge endpoint is drawn from the same group.
  double group_homophily = 0.6;

  void validate() const;
};

AttributedGraph generate_biased_graph(const SynthSpec& spec);

struct LoadOptions {
  std::string id_column = "id";
  std::string label_column = "label";
  std::string sensitive_column = "sensitive";
  /// Keep the sensitive column among the model inputs.
  bool keep_sensitive = false;
};

/// Edge file: header "src,dst" then one undirected edge per row. Attribute
/// file: header row, one row per node. Node identifiers come from the id
/// column when present and from 0-based row numbers otherwise.
AttributedGraph load_graph(const std::filesystem::path& edges, const std::filesystem::path& attributes,
                           const LoadOptions& options = {});

/// Writes files that load_graph reads back to an identical graph.
void save_graph(const AttributedGraph& graph, const std::filesystem::path& edges,
                const std::filesystem::path& attributes);

/// D^-1/2 (A + I) D^-1/2
SparseMat normalize_adjacency(const SparseMat& adjacency);
/// D^-1 A without self-loops; isolated nodes get an all-zero row.
SparseMat mean_adjacency(const SparseMat& adjacency);

/// Column-wise zero mean and unit variance estimated on `reference` rows.
/// Constant columns are only centred.
DenseMat standardize(const DenseMat& x, const std::vector<std::size_t>& reference);

/// Everything a model needs from a graph, computed once.
struct GraphOperators {
  std::shared_ptr<const SparseMat> sym;
  std::shared_ptr<const SparseMat> mean;
  std::shared_ptr<const DenseMat> features;

  static GraphOperators build(const AttributedGraph& graph, const Split& split, bool standardize_features = true);
};

}  // namespace fairdistill
