#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <random>

#include "fairdistill/graph_data.hpp"

namespace fairdistill {
namespace {

namespace fs = std::filesystem;

class TempDir {
 public:
  TempDir() {
    std::random_device rd;
    path_ = fs::temp_directory_path() / ("fd_graph_" + std::to_string(rd()) + std::to_string(rd()));
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  fs::path file(const std::string& name, const std::string& contents = {}) const {
    const fs::path p = path_ / name;
    if (!contents.empty()) std::ofstream(p) << contents;
    return p;
  }

 private:
  fs::path path_;
};

SparseMat undirected(std::size_t n, std::vector<std::pair<std::size_t, std::size_t>> edges) {
  std::vector<SparseMat::Triplet> t;
  for (auto [a, b] : edges) {
    t.push_back({a, b, 1.0});
    t.push_back({b, a, 1.0});
  }
  return SparseMat::from_triplets(n, n, std::move(t));
}

TEST(NormalizeAdjacency, SingleEdgeGivesOneHalfEverywhere) {
  const DenseMat a = normalize_adjacency(undirected(2, {{0, 1}})).to_dense();
  for (double v : a.data()) EXPECT_DOUBLE_EQ(v, 0.5);
}

TEST(NormalizeAdjacency, IsolatedNodeKeepsSelfLoop) {
  const SparseMat a = normalize_adjacency(SparseMat::from_triplets(1, 1, {}));
  EXPECT_EQ(a.to_dense(), DenseMat::from_rows({{1.0}}));
}

TEST(NormalizeAdjacency, PathGraphEntry) {
  const SparseMat a = normalize_adjacency(undirected(3, {{0, 1}, {1, 2}}));
  EXPECT_NEAR(a.at(0, 1), 1.0 / std::sqrt(6.0), 1e-15);
  EXPECT_NEAR(a.at(0, 1), 0.40825, 1e-5);
}

double power_iteration_radius(const SparseMat& a, std::mt19937_64& rng, int steps) {
  std::normal_distribution<double> nd;
  DenseMat v(a.rows(), 1);
  for (double& x : v.data()) x = nd(rng);
  double lambda = 0.0;
  for (int s = 0; s < steps; ++s) {
    double norm = 0.0;
    for (double x : v.data()) norm += x * x;
    norm = std::sqrt(norm);
    for (double& x : v.data()) x /= norm;
    DenseMat w = a.multiply(v);
    double wn = 0.0;
    for (double x : w.data()) wn += x * x;
    lambda = std::sqrt(wn);
    v = std::move(w);
  }
  return lambda;
}

TEST(NormalizeAdjacency, SymmetricWithSpectralRadiusAtMostOne) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 2 + rng() % 199;
    std::bernoulli_distribution edge(std::min(1.0, 4.0 / static_cast<double>(n)));
    std::vector<std::pair<std::size_t, std::size_t>> e;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j)
        if (edge(rng)) e.push_back({i, j});
    const SparseMat a = normalize_adjacency(undirected(n, e));
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) ASSERT_NEAR(a.at(i, j), a.at(j, i), 1e-12);
    EXPECT_LE(power_iteration_radius(a, rng, 50), 1.0 + 1e-9) << "n=" << n;
  }
}

TEST(MeanAdjacency, RowsSumToOneExceptIsolated) {
  const SparseMat m = mean_adjacency(undirected(4, {{0, 1}, {0, 2}}));
  EXPECT_DOUBLE_EQ(m.at(0, 1), 0.5);
  EXPECT_DOUBLE_EQ(m.at(1, 0), 1.0);
  EXPECT_DOUBLE_EQ(m.at(0, 0), 0.0);
  EXPECT_EQ(m.offsets()[4] - m.offsets()[3], 0u);
}

TEST(SplitNodes, FloorSizes) {
  const Split s = split_nodes(10, {0.6, 0.2, 0.2}, 0);
  EXPECT_EQ(s.train.size(), 6u);
  EXPECT_EQ(s.val.size(), 2u);
  EXPECT_EQ(s.test.size(), 2u);
  const Split t = split_nodes(7, {0.5, 0.25, 0.25}, 0);
  EXPECT_EQ(t.train.size(), 3u);
  EXPECT_EQ(t.val.size(), 1u);
}

TEST(SplitNodes, DeterministicAndSeedSensitive) {
  EXPECT_EQ(split_nodes(1000, {}, 3), split_nodes(1000, {}, 3));
  EXPECT_NE(split_nodes(1000, {}, 1).train, split_nodes(1000, {}, 2).train);
}

TEST(SplitNodes, DisjointParts) {
  const Split s = split_nodes(500, {0.5, 0.3, 0.2}, 9);
  std::vector<int> hits(500, 0);
  for (const auto* part : {&s.train, &s.val, &s.test})
    for (auto i : *part) ++hits[i];
  for (int h : hits) EXPECT_EQ(h, 1);
}

TEST(SplitNodes, RejectsBadFractions) {
  EXPECT_THROW(split_nodes(10, {0.6, 0.3, 0.2}, 0), std::invalid_argument);
  EXPECT_THROW(split_nodes(10, {0.0, 0.3, 0.2}, 0), std::invalid_argument);
  EXPECT_THROW(split_nodes(10, {1.0, 0.3, 0.2}, 0), std::invalid_argument);
}

TEST(LoadGraph, SymmetrizesAndDeduplicates) {
  TempDir dir;
  const auto attrs = dir.file("a.csv", "id,f1,label,sensitive\na,0.5,0,1\nb,1.5,1,0\nc,2,1,1\n");
  const auto edges = dir.file("e.csv", "src,dst\na,b\nb,a\n");
  const AttributedGraph g = load_graph(edges, attrs);
  EXPECT_EQ(g.num_nodes(), 3u);
  EXPECT_EQ(g.num_edges(), 1u);
  EXPECT_EQ(g.adjacency.at(0, 1), 1.0);
  EXPECT_EQ(g.adjacency.at(1, 0), 1.0);
  EXPECT_EQ(g.attributes.cols(), 1u);
  EXPECT_EQ(g.attributes(1, 0), 1.5);
}

TEST(LoadGraph, SensitiveValuesSortAscending) {
  TempDir dir;
  const auto attrs = dir.file("a.csv", "id,f1,label,age\na,0,0,40\nb,1,1,25\nc,2,1,40\n");
  const auto edges = dir.file("e.csv", "src,dst\na,c\n");
  LoadOptions opt;
  opt.sensitive_column = "age";
  const AttributedGraph g = load_graph(edges, attrs, opt);
  EXPECT_EQ(g.sensitive, (std::vector<int>{1, 0, 1}));
  EXPECT_EQ(g.attribute_names, std::vector<std::string>{"f1"});
  opt.keep_sensitive = true;
  EXPECT_EQ(load_graph(edges, attrs, opt).attributes.cols(), 2u);
}

TEST(LoadGraph, RowNumbersServeAsIdsWithoutIdColumn) {
  TempDir dir;
  const auto attrs = dir.file("a.csv", "f1,label,sensitive\n0,0,0\n1,1,1\n");
  const auto edges = dir.file("e.csv", "src,dst\n0,1\n");
  EXPECT_EQ(load_graph(edges, attrs).num_edges(), 1u);
}

std::string load_error(const fs::path& e, const fs::path& a) {
  try {
    load_graph(e, a);
  } catch (const DataError& err) {
    return err.what();
  }
  return "";
}

TEST(LoadGraph, Errors) {
  TempDir dir;
  const auto good = dir.file("a.csv", "id,f1,label,sensitive\na,0,0,0\nb,1,1,1\n");
  const auto unknown = dir.file("e1.csv", "src,dst\na,z\n");
  EXPECT_NE(load_error(unknown, good).find("'z'"), std::string::npos);

  const auto edges = dir.file("e.csv", "src,dst\na,b\n");
  const auto missing = dir.file("a2.csv", "id,f1,label\na,0,0\nb,1,1\n");
  EXPECT_NE(load_error(edges, missing).find("sensitive"), std::string::npos);

  const auto three = dir.file("a3.csv", "id,f1,label,sensitive\na,0,0,0\nb,1,1,1\nc,1,1,2\n");
  EXPECT_NE(load_error(edges, three).find("3 distinct"), std::string::npos);

  const auto text = dir.file("a4.csv", "id,f1,label,sensitive\na,0,0,0\nb,abc,1,1\n");
  EXPECT_NE(load_error(edges, text).find("non-numeric"), std::string::npos);

  EXPECT_THROW(load_graph(edges, dir.file("none.csv")), DataError);
}

void expect_same_graph(const AttributedGraph& a, const AttributedGraph& b) {
  EXPECT_EQ(a.adjacency, b.adjacency);
  EXPECT_EQ(a.attributes, b.attributes);
  EXPECT_EQ(a.labels, b.labels);
  EXPECT_EQ(a.sensitive, b.sensitive);
  EXPECT_EQ(a.node_ids, b.node_ids);
  EXPECT_EQ(a.attribute_names, b.attribute_names);
}

TEST(LoadGraph, RoundTripIsIdentical) {
  TempDir dir;
  const auto attrs = dir.file("a.csv",
                              "id,\"x,1\",x2,label,sensitive\n"
                              "n1,0.1,1e-300,cat,m\n"
                              "n2,-3.25,7,dog,f\n"
                              "n3,0.30000000000000004,2,cat,f\n");
  const auto edges = dir.file("e.csv", "src,dst\nn1,n2\nn3,n2\n");
  const AttributedGraph g = load_graph(edges, attrs);
  save_graph(g, dir.file("e2.csv"), dir.file("a2.csv"));
  const AttributedGraph h = load_graph(dir.file("e2.csv"), dir.file("a2.csv"));
  expect_same_graph(g, h);
  EXPECT_EQ(h.labels, (std::vector<int>{0, 1, 0}));
}

TEST(LoadGraph, SyntheticRoundTrip) {
  TempDir dir;
  SynthSpec spec;
  spec.n = 300;
  spec.c = 3;
  const AttributedGraph g = generate_biased_graph(spec);
  save_graph(g, dir.file("e.csv"), dir.file("a.csv"));
  expect_same_graph(g, load_graph(dir.file("e.csv"), dir.file("a.csv")));
}

double mutual_information(const std::vector<int>& x, const std::vector<int>& y) {
  std::map<std::pair<int, int>, double> joint;
  std::map<int, double> px, py;
  const double n = static_cast<double>(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    joint[{x[i], y[i]}] += 1.0 / n;
    px[x[i]] += 1.0 / n;
    py[y[i]] += 1.0 / n;
  }
  double mi = 0.0;
  for (auto [k, p] : joint) mi += p * std::log(p / (px[k.first] * py[k.second]));
  return mi;
}

TEST(GenerateBiasedGraph, NoBiasMeansIndependentLabels) {
  SynthSpec spec;
  spec.n = 5000;
  spec.bias_strength = 0.0;
  spec.c = 3;
  const AttributedGraph g = generate_biased_graph(spec);
  EXPECT_LT(mutual_information(g.labels, g.sensitive), 0.01);
}

TEST(GenerateBiasedGraph, GroupSizeIsRounded) {
  SynthSpec spec;
  spec.n = 1000;
  spec.group_fraction = 0.3;
  const AttributedGraph g = generate_biased_graph(spec);
  EXPECT_EQ(std::count(g.sensitive.begin(), g.sensitive.end(), 1), 300);
}

TEST(GenerateBiasedGraph, HomophilyAndDegree) {
  for (double b : {0.0, 0.8}) {
    SynthSpec spec;
    spec.n = 2000;
    spec.homophily = 0.9;
    spec.bias_strength = b;
    const AttributedGraph g = generate_biased_graph(spec);
    std::size_t same = 0, total = 0;
    for (std::size_t i = 0; i < g.num_nodes(); ++i) {
      for (std::size_t k = g.adjacency.offsets()[i]; k < g.adjacency.offsets()[i + 1]; ++k) {
        ++total;
        same += g.labels[i] == g.labels[g.adjacency.indices()[k]];
      }
    }
    const double frac = static_cast<double>(same) / static_cast<double>(total);
    EXPECT_GE(frac, 0.85);
    EXPECT_LE(frac, 0.95);
    EXPECT_NEAR(2.0 * static_cast<double>(g.num_edges()) / 2000.0, spec.avg_degree, 1e-3);
  }
}

TEST(GenerateBiasedGraph, DeterministicBySeed) {
  SynthSpec spec;
  spec.n = 400;
  const AttributedGraph a = generate_biased_graph(spec);
  expect_same_graph(a, generate_biased_graph(spec));
  spec.seed = 1;
  EXPECT_NE(a.attributes, generate_biased_graph(spec).attributes);
}

TEST(GenerateBiasedGraph, RejectsInfeasibleDegree) {
  SynthSpec spec;
  spec.n = 10;
  spec.avg_degree = 10;
  EXPECT_THROW(generate_biased_graph(spec), std::invalid_argument);
}

/// Plain batch gradient-descent logistic regression, trained and scored on
/// alternating halves of the nodes.
double logistic_group_accuracy(const AttributedGraph& g) {
  const DenseMat x = standardize(g.attributes, [&] {
    std::vector<std::size_t> all(g.num_nodes());
    std::iota(all.begin(), all.end(), 0);
    return all;
  }());
  const std::size_t d = x.cols();
  std::vector<double> w(d + 1, 0.0);
  for (int it = 0; it < 300; ++it) {
    std::vector<double> grad(d + 1, 0.0);
    for (std::size_t i = 0; i < g.num_nodes(); i += 2) {
      double z = w[d];
      for (std::size_t j = 0; j < d; ++j) z += w[j] * x(i, j);
      const double err = 1.0 / (1.0 + std::exp(-z)) - g.sensitive[i];
      for (std::size_t j = 0; j < d; ++j) grad[j] += err * x(i, j);
      grad[d] += err;
    }
    for (std::size_t j = 0; j <= d; ++j) w[j] -= 0.5 * grad[j] / (static_cast<double>(g.num_nodes()) / 2);
  }
  std::size_t hit = 0, total = 0;
  for (std::size_t i = 1; i < g.num_nodes(); i += 2) {
    double z = w[d];
    for (std::size_t j = 0; j < d; ++j) z += w[j] * x(i, j);
    hit += (z > 0) == (g.sensitive[i] == 1);
    ++total;
  }
  return static_cast<double>(hit) / static_cast<double>(total);
}

TEST(GenerateBiasedGraph, StrongBiasMakesGroupPredictable) {
  for (double b : {0.6, 0.8, 1.0}) {
    SynthSpec spec;
    spec.bias_strength = b;
    EXPECT_GT(logistic_group_accuracy(generate_biased_graph(spec)), 0.7) << "bias " << b;
  }
}

TEST(GenerateBiasedGraph, NoBiasGroupNotPredictable) {
  SynthSpec spec;
  spec.bias_strength = 0.0;
  EXPECT_LT(logistic_group_accuracy(generate_biased_graph(spec)), 0.56);
}

TEST(Standardize, UsesReferenceRowsOnly) {
  const DenseMat x = DenseMat::from_rows({{1, 5}, {3, 5}, {100, 7}});
  const DenseMat z = standardize(x, {0, 1});
  EXPECT_DOUBLE_EQ(z(0, 0), -1.0);
  EXPECT_DOUBLE_EQ(z(1, 0), 1.0);
  EXPECT_DOUBLE_EQ(z(2, 0), 98.0);
  EXPECT_DOUBLE_EQ(z(0, 1), 0.0);
  EXPECT_DOUBLE_EQ(z(2, 1), 2.0);
}

TEST(CheckSplit, MissingTrainingClassIsRejected) {
  AttributedGraph g;
  g.labels = {0, 1, 1, 0};
  g.sensitive = {0, 1, 0, 1};
  g.attributes = DenseMat(4, 1);
  g.adjacency = SparseMat::from_triplets(4, 4, {});
  Split s{{1, 2}, {0}, {3}};
  EXPECT_THROW(check_split(g, s), DataError);
  s.train = {0, 1};
  s.val = {2};
  EXPECT_NO_THROW(check_split(g, s));
}

TEST(AttributedGraphValidate, RejectsAsymmetricAdjacency) {
  AttributedGraph g;
  g.labels = {0, 1};
  g.sensitive = {0, 1};
  g.attributes = DenseMat(2, 1);
  g.adjacency = SparseMat::from_triplets(2, 2, {{0, 1, 1.0}});
  EXPECT_THROW(g.validate(), DataError);
}

}  // namespace
}  // namespace fairdistill
