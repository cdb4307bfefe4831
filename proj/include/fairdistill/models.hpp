#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "fairdistill/autodiff.hpp"
#include "fairdistill/graph_data.hpp"
#include "fairdistill/matrix.hpp"

namespace fairdistill {

enum class Architecture { kGCN, kSAGE, kSGC, kMLP };

std::string to_string(Architecture arch);
/// Accepts "gcn", "sage", "sage-mean", "sgc", "mlp" (case-insensitive).
Architecture parse_architecture(const std::string& name);

struct ModelSpec {
  Architecture arch = Architecture::kGCN;
  int layers = 3;
  std::size_t hidden = 64;
  std::size_t input_dim = 0;
  std::size_t classes = 2;
  double dropout = 0.0;
  /// Propagation steps, SGC only.
  int sgc_power = 3;

  void validate() const;
  /// Shapes of the weight matrices, in layer order.
  std::vector<std::pair<std::size_t, std::size_t>> weight_shapes() const;

  /// Teacher settings used throughout: GCN hidden 64 with dropout 0.8, SAGE
  /// hidden 128 with dropout 0.5, three layers each.
  static ModelSpec teacher(Architecture arch, std::size_t input_dim, std::size_t classes);
  static ModelSpec sgc_student(std::size_t input_dim, std::size_t classes, int power = 3);

  friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

struct ModelParams {
  ModelSpec spec;
  std::vector<DenseMat> weights;
  /// 1 x out rows, one per weight matrix.
  std::vector<DenseMat> biases;
  std::uint64_t seed = 0;

  std::vector<DenseMat*> tensors();
  std::vector<const DenseMat*> tensors() const;
  friend bool operator==(const ModelParams&, const ModelParams&) = default;
};

/// Glorot-uniform weights, zero biases.
ModelParams init_params(const ModelSpec& spec, std::uint64_t seed);

/// Handles to one model's forward pass inside an ExprGraph. Parameter inputs
/// are named `<prefix>W<k>` / `<prefix>b<k>`; dropout masks `<prefix>drop<k>`.
struct ModelGraph {
  ModelSpec spec;
  std::string prefix;
  std::vector<ad::Var> weights;
  std::vector<ad::Var> biases;
  std::vector<std::string> dropout_masks;
  std::vector<std::size_t> dropout_widths;
  ad::Var logits;

  std::vector<std::string> param_names() const;
};

/// Names of the adjacency inputs every model graph reads.
inline constexpr const char* kSymAdjacency = "A_sym";
inline constexpr const char* kMeanAdjacency = "A_mean";

/// Appends the forward pass of `spec` applied to `features` to `g`.
/// Dropout masks are only created when `training` is set and the rate is
/// positive.
ModelGraph build_model(ad::ExprGraph& g, const ModelSpec& spec, ad::Var features, bool training,
                       const std::string& prefix = "");

void bind_params(ad::Bindings& b, const ModelGraph& mg, const ModelParams& params);
void bind_operators(ad::Bindings& b, const GraphOperators& ops);
/// Fresh inverted-dropout masks (entries 0 or 1/(1-p)) for n rows.
void bind_dropout(ad::Bindings& b, const ModelGraph& mg, std::size_t n, std::mt19937_64& rng);

/// Logits for all nodes. `rng` is only used when training with dropout.
DenseMat model_forward(const ModelParams& params, const GraphOperators& ops, const DenseMat& x, bool training,
                       std::mt19937_64* rng = nullptr);

struct Prediction {
  std::vector<int> labels;
  DenseMat probabilities;
};

/// Row argmax (ties go to the lowest class) and row softmax.
Prediction predict_from_logits(const DenseMat& logits);
Prediction predict(const ModelParams& params, const GraphOperators& ops, const DenseMat& x);

double accuracy(const std::vector<int>& predicted, const std::vector<int>& truth,
                const std::vector<std::size_t>& nodes);

struct TrainConfig {
  int max_epochs = 1000;
  int patience = 500;
  double learning_rate = 1e-2;
  double weight_decay = 1e-3;
  std::uint64_t seed = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  void validate() const;
  static TrainConfig teacher(Architecture arch);
};

class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(const std::string& what, int epoch) : std::runtime_error(what), epoch_(epoch) {}
  int epoch() const noexcept { return epoch_; }

 private:
  int epoch_;
};

struct TrainHistory {
  std::vector<double> train_loss;
  std::vector<double> val_accuracy;
  int best_epoch = -1;
  double best_val_accuracy = 0.0;
};

struct TrainResult {
  ModelParams params;
  TrainHistory history;
};

/// Full-batch cross-entropy training with Adam. Keeps the parameters of the
/// epoch with the best validation accuracy.
TrainResult train_supervised(const ModelSpec& spec, const AttributedGraph& graph, const GraphOperators& ops,
                             const Split& split, const TrainConfig& config);

/// Mean cross-entropy over `nodes` as a scalar node of `g`.
ad::Var cross_entropy(ad::ExprGraph& g, ad::Var logits, const std::vector<int>& labels,
                      const std::vector<std::size_t>& nodes, std::size_t classes);

void save_checkpoint(const ModelParams& params, const std::filesystem::path& path);
ModelParams load_checkpoint(const std::filesystem::path& path);

}  // namespace fairdistill
