#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "fairdistill/models.hpp"
#include "fairdistill/optim.hpp"
#include "test_support.hpp"

namespace fairdistill {
namespace {

using fairdistill::testing::random_dense;

AttributedGraph small_graph(std::size_t n, std::uint64_t seed) {
  SynthSpec s;
  s.n = n;
  s.d = 5;
  s.avg_degree = 3;
  s.seed = seed;
  return generate_biased_graph(s);
}

TEST(InitParams, DeterministicAndShaped) {
  ModelSpec s = ModelSpec::teacher(Architecture::kGCN, 13, 2);
  const ModelParams a = init_params(s, 5);
  EXPECT_EQ(a, init_params(s, 5));
  EXPECT_NE(a, init_params(s, 6));
  ASSERT_EQ(a.weights.size(), 3u);
  EXPECT_EQ(a.weights[0].shape_string(), "13x64");
  EXPECT_EQ(a.weights[1].shape_string(), "64x64");
  EXPECT_EQ(a.weights[2].shape_string(), "64x2");
  for (const auto& b : a.biases)
    for (double v : b.data()) EXPECT_EQ(v, 0.0);
}

TEST(InitParams, GlorotBound) {
  ModelSpec s;
  s.arch = Architecture::kMLP;
  s.layers = 1;
  s.input_dim = 1000;
  s.classes = 1000;
  const ModelParams p = init_params(s, 1);
  const double bound = std::sqrt(6.0 / 2000.0);
  for (double v : p.weights[0].data()) ASSERT_LE(std::abs(v), bound);
}

TEST(InitParams, SageDoublesInputWidth) {
  const ModelParams p = init_params(ModelSpec::teacher(Architecture::kSAGE, 7, 3), 0);
  EXPECT_EQ(p.weights[0].shape_string(), "14x128");
  EXPECT_EQ(p.weights[1].shape_string(), "256x128");
  EXPECT_EQ(p.weights[2].shape_string(), "256x3");
}

TEST(ModelForward, ZeroWeightsGiveZeroLogits) {
  const AttributedGraph g = small_graph(20, 0);
  const GraphOperators ops = GraphOperators::build(g, split_nodes(20, {}, 0));
  for (auto arch : {Architecture::kGCN, Architecture::kSAGE, Architecture::kSGC, Architecture::kMLP}) {
    ModelParams p = init_params(ModelSpec::teacher(arch, 5, 2), 0);
    for (auto* t : p.tensors()) std::fill(t->data().begin(), t->data().end(), 0.0);
    const DenseMat logits = model_forward(p, ops, *ops.features, false);
    for (double v : logits.data()) EXPECT_EQ(v, 0.0) << to_string(arch);
  }
}

TEST(ModelForward, SgcWithZeroPowerIsLinear) {
  const AttributedGraph g = small_graph(20, 1);
  const GraphOperators ops = GraphOperators::build(g, split_nodes(20, {}, 0));
  ModelParams p = init_params(ModelSpec::sgc_student(5, 2, 0), 3);
  p.biases[0] = DenseMat::from_rows({{0.5, -0.25}});
  const DenseMat logits = model_forward(p, ops, *ops.features, false);
  DenseMat expect = matmul(*ops.features, p.weights[0]);
  for (std::size_t i = 0; i < expect.rows(); ++i) {
    expect(i, 0) += 0.5;
    expect(i, 1) -= 0.25;
  }
  EXPECT_EQ(logits, expect);
}

TEST(ModelForward, SingleNodeIdentityGcn) {
  GraphOperators ops;
  const SparseMat empty = SparseMat::from_triplets(1, 1, {});
  ops.sym = std::make_shared<const SparseMat>(normalize_adjacency(empty));
  ops.mean = std::make_shared<const SparseMat>(mean_adjacency(empty));
  ModelSpec s;
  s.layers = 1;
  s.input_dim = 3;
  s.classes = 3;
  ModelParams p = init_params(s, 0);
  p.weights[0] = DenseMat::identity(3);
  const DenseMat x = DenseMat::from_rows({{-1.0, 2.0, 0.5}});
  EXPECT_EQ(model_forward(p, ops, x, false), x);
}

TEST(ModelForward, RejectsWrongFeatureWidth) {
  const AttributedGraph g = small_graph(20, 0);
  const GraphOperators ops = GraphOperators::build(g, split_nodes(20, {}, 0));
  const ModelParams p = init_params(ModelSpec::teacher(Architecture::kGCN, 4, 2), 0);
  EXPECT_THROW(model_forward(p, ops, *ops.features, false), ShapeError);
}

TEST(ModelForward, SgcEqualsCollapsedLinearGcn) {
  std::mt19937_64 rng(4);
  const AttributedGraph g = small_graph(5, 2);
  const GraphOperators ops = GraphOperators::build(g, split_nodes(5, {0.4, 0.2, 0.2}, 0));
  const DenseMat x = random_dense(5, 4, rng);
  const int k = 3;
  const std::vector<DenseMat> ws = {random_dense(4, 6, rng), random_dense(6, 6, rng), random_dense(6, 2, rng)};

  // Linear GCN: every layer A (H W) with identity activations.
  DenseMat h = x;
  for (const auto& w : ws) h = ops.sym->multiply(matmul(h, w));

  ModelParams p = init_params(ModelSpec::sgc_student(4, 2, k), 0);
  p.weights[0] = matmul(matmul(ws[0], ws[1]), ws[2]);
  const DenseMat sgc = model_forward(p, ops, x, false);
  for (std::size_t i = 0; i < sgc.size(); ++i) EXPECT_NEAR(sgc.data()[i], h.data()[i], 1e-12);
}

TEST(Predict, ArgmaxWithLowTieBreak) {
  const Prediction p = predict_from_logits(DenseMat::from_rows({{0.2, 0.9}, {0.5, 0.5}, {3, -1}}));
  EXPECT_EQ(p.labels, (std::vector<int>{1, 0, 0}));
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(p.probabilities(i, 0) + p.probabilities(i, 1), 1.0, 1e-12);
}

TEST(Predict, InvariantToRowShift) {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> shift(-50, 50);
  for (int t = 0; t < 50; ++t) {
    DenseMat logits = random_dense(30, 4, rng, -3, 3);
    DenseMat shifted = logits;
    for (std::size_t i = 0; i < shifted.rows(); ++i) {
      const double s = shift(rng);
      for (double& v : shifted.row(i)) v += s;
    }
    const Prediction a = predict_from_logits(logits), b = predict_from_logits(shifted);
    EXPECT_EQ(a.labels, b.labels);
    for (std::size_t i = 0; i < a.probabilities.size(); ++i) {
      EXPECT_NEAR(a.probabilities.data()[i], b.probabilities.data()[i], 1e-12);
    }
  }
}

class ArchitectureGradient : public ::testing::TestWithParam<Architecture> {};

TEST_P(ArchitectureGradient, TrainingLossMatchesFiniteDifferences) {
  const AttributedGraph g = small_graph(20, 3);
  const Split split = split_nodes(20, {}, 1);
  const GraphOperators ops = GraphOperators::build(g, split);
  ModelSpec spec = ModelSpec::teacher(GetParam(), 5, 2);
  spec.hidden = 6;
  spec.dropout = 0.3;
  if (spec.arch == Architecture::kSGC) spec = ModelSpec::sgc_student(5, 2, 2);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    ModelParams p = init_params(spec, seed);
    // Nonzero biases keep pre-activations off the ReLU kink at exactly 0.
    std::mt19937_64 brng(seed + 100);
    for (auto& b : p.biases) b = random_dense(1, b.cols(), brng, 0.05, 0.3);
    ad::ExprGraph eg;
    const ModelGraph mg = build_model(eg, spec, eg.input("X"), true);
    const ad::Var loss = cross_entropy(eg, mg.logits, g.labels, split.train, 2);
    ad::Bindings b;
    bind_operators(b, ops);
    bind_params(b, mg, p);
    b.set("X", ops.features);
    auto rng = std::mt19937_64(seed);
    bind_dropout(b, mg, 20, rng);
    const auto report = ad::gradient_check(eg, loss, b);
    EXPECT_TRUE(report.passed) << to_string(spec.arch) << " worst " << report.worst();
  }
}

INSTANTIATE_TEST_SUITE_P(All, ArchitectureGradient,
                         ::testing::Values(Architecture::kGCN, Architecture::kSAGE, Architecture::kSGC,
                                           Architecture::kMLP),
                         [](const auto& info) { return to_string(info.param); });

TEST(Adam, ZeroLearningRateLeavesParameters) {
  std::mt19937_64 rng(1);
  DenseMat p = random_dense(3, 3, rng);
  const DenseMat before = p;
  const DenseMat g = random_dense(3, 3, rng);
  Adam adam({.learning_rate = 0.0, .weight_decay = 0.1});
  for (int i = 0; i < 5; ++i) adam.step({&p}, {&g});
  EXPECT_EQ(p, before);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  DenseMat p = DenseMat::from_rows({{1.0, -2.0}});
  const DenseMat g = DenseMat::from_rows({{0.3, -5.0}});
  Adam adam({.learning_rate = 0.1});
  adam.step({&p}, {&g});
  EXPECT_NEAR(p(0, 0), 0.9, 1e-7);
  EXPECT_NEAR(p(0, 1), -1.9, 1e-7);
}

struct Separable {
  AttributedGraph graph;
  Split split;
  GraphOperators ops;
};

Separable separable_graph(std::size_t n) {
  SynthSpec s;
  s.n = n;
  s.bias_strength = 0.0;
  s.homophily = 0.9;
  Separable out{generate_biased_graph(s), split_nodes(n, {}, 0), {}};
  out.ops = GraphOperators::build(out.graph, out.split);
  return out;
}

TEST(TrainSupervised, ZeroLearningRateReturnsInitialization) {
  const Separable d = separable_graph(200);
  const ModelSpec spec = ModelSpec::teacher(Architecture::kGCN, 16, 2);
  TrainConfig cfg;
  cfg.learning_rate = 0.0;
  cfg.max_epochs = 5;
  cfg.patience = 5;
  cfg.seed = 9;
  const TrainResult r = train_supervised(spec, d.graph, d.ops, d.split, cfg);
  EXPECT_EQ(r.params, init_params(spec, 9));
}

TEST(TrainSupervised, DeterministicAndDecreasing) {
  const Separable d = separable_graph(300);
  const ModelSpec spec = ModelSpec::teacher(Architecture::kGCN, 16, 2);
  TrainConfig cfg;
  cfg.max_epochs = 60;
  cfg.patience = 60;
  const TrainResult a = train_supervised(spec, d.graph, d.ops, d.split, cfg);
  const TrainResult b = train_supervised(spec, d.graph, d.ops, d.split, cfg);
  EXPECT_EQ(a.history.train_loss, b.history.train_loss);
  EXPECT_EQ(a.history.val_accuracy, b.history.val_accuracy);
  EXPECT_EQ(a.params, b.params);
  EXPECT_LE(a.history.train_loss.back(), a.history.train_loss.front());
}

TEST(TrainSupervised, EarlyStoppingHonoursPatience) {
  const Separable d = separable_graph(200);
  const ModelSpec spec = ModelSpec::teacher(Architecture::kMLP, 16, 2);
  TrainConfig cfg;
  cfg.max_epochs = 400;
  cfg.patience = 10;
  const TrainResult r = train_supervised(spec, d.graph, d.ops, d.split, cfg);
  const int ran = static_cast<int>(r.history.train_loss.size());
  EXPECT_LT(ran, 400);
  EXPECT_EQ(ran - 1 - r.history.best_epoch, 10);
}

TEST(TrainSupervised, DivergenceReportsEpoch) {
  const Separable d = separable_graph(100);
  ModelSpec spec = ModelSpec::teacher(Architecture::kMLP, 16, 2);
  spec.dropout = 0.0;
  TrainConfig cfg;
  cfg.learning_rate = 1e300;
  cfg.max_epochs = 50;
  cfg.patience = 50;
  try {
    train_supervised(spec, d.graph, d.ops, d.split, cfg);
    FAIL() << "expected divergence";
  } catch (const TrainingDiverged& e) {
    EXPECT_GE(e.epoch(), 0);
    EXPECT_NE(std::string(e.what()).find("epoch"), std::string::npos);
  }
}

TEST(TrainSupervised, TeachersLearnSeparableGraph) {
  const Separable d = separable_graph(1000);
  for (auto arch : {Architecture::kGCN, Architecture::kSAGE}) {
    TrainConfig cfg = TrainConfig::teacher(arch);
    cfg.max_epochs = 150;
    cfg.patience = 150;
    const TrainResult r = train_supervised(ModelSpec::teacher(arch, 16, 2), d.graph, d.ops, d.split, cfg);
    const Prediction p = predict(r.params, d.ops, *d.ops.features);
    EXPECT_GE(accuracy(p.labels, d.graph.labels, d.split.test), 0.9) << to_string(arch);
  }
}

TEST(Checkpoint, RoundTripIsBitExact) {
  const auto dir = std::filesystem::temp_directory_path();
  const auto path = dir / ("fd_ckpt_" + std::to_string(std::random_device{}()) + ".json");
  for (auto arch : {Architecture::kGCN, Architecture::kSAGE, Architecture::kSGC}) {
    ModelParams p = init_params(ModelSpec::teacher(arch, 9, 3), 77);
    p.biases[0](0, 0) = 1.0 / 3.0;
    p.biases[0](0, 1) = -5e-320;
    save_checkpoint(p, path);
    EXPECT_EQ(load_checkpoint(path), p);
  }
  std::ofstream(path) << "{\"format\": \"other\"}";
  EXPECT_THROW(load_checkpoint(path), std::runtime_error);
  std::filesystem::remove(path);
}

}  // namespace
}  // namespace fairdistill
