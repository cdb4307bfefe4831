#include "fairdistill/graph_data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <unordered_map>
#include <unordered_set>

#include <boost/tokenizer.hpp>

#include "fairdistill/rng.hpp"

namespace fairdistill {

namespace {

std::string at_node(std::size_t i) { return " (node " + std::to_string(i) + ")"; }

}  // namespace

int AttributedGraph::num_classes() const {
  return labels.empty() ? 0 : *std::max_element(labels.begin(), labels.end()) + 1;
}

void AttributedGraph::validate() const {
  const std::size_t n = labels.size();
  if (sensitive.size() != n) throw DataError("graph: sensitive array length differs from labels");
  if (attributes.rows() != n) throw DataError("graph: attribute rows differ from node count");
  if (adjacency.rows() != n || adjacency.cols() != n) throw DataError("graph: adjacency is not n x n");
  if (!node_ids.empty() && node_ids.size() != n) throw DataError("graph: node id count differs from n");
  if (!attribute_names.empty() && attribute_names.size() != attributes.cols()) {
    throw DataError("graph: attribute name count differs from attribute columns");
  }
  if (!attributes.all_finite()) throw DataError("graph: non-finite attribute");
  bool group[2] = {false, false};
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] < 0) throw DataError("graph: negative label" + at_node(i));
    if (sensitive[i] != 0 && sensitive[i] != 1) throw DataError("graph: sensitive value not 0/1" + at_node(i));
    group[sensitive[i]] = true;
  }
  if (n > 0 && !(group[0] && group[1])) throw DataError("graph: a sensitive group is empty");
  const auto& off = adjacency.offsets();
  const auto& idx = adjacency.indices();
  const auto& val = adjacency.values();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = off[i]; k < off[i + 1]; ++k) {
      if (idx[k] == i) throw DataError("graph: self-loop" + at_node(i));
      if (val[k] != 1.0) throw DataError("graph: adjacency is not binary" + at_node(i));
      if (adjacency.at(idx[k], i) != 1.0) throw DataError("graph: adjacency is not symmetric" + at_node(i));
    }
  }
}

Split split_nodes(std::size_t n, const SplitFractions& f, std::uint64_t seed) {
  for (double v : {f.train, f.val, f.test}) {
    if (!(v > 0.0 && v < 1.0)) throw std::invalid_argument("split fractions must lie in (0, 1)");
  }
  if (f.train + f.val + f.test > 1.0 + 1e-12) throw std::invalid_argument("split fractions sum to more than 1");
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  auto rng = make_rng(seed, Stream::kSplit);
  std::shuffle(perm.begin(), perm.end(), rng);
  const auto size = [n](double frac) { return static_cast<std::size_t>(std::floor(frac * static_cast<double>(n))); };
  const std::size_t a = size(f.train), b = size(f.val), c = size(f.test);
  Split s;
  s.train.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(a));
  s.val.assign(perm.begin() + static_cast<std::ptrdiff_t>(a), perm.begin() + static_cast<std::ptrdiff_t>(a + b));
  s.test.assign(perm.begin() + static_cast<std::ptrdiff_t>(a + b),
                perm.begin() + static_cast<std::ptrdiff_t>(a + b + c));
  return s;
}

void check_split(const AttributedGraph& graph, const Split& split) {
  const std::size_t n = graph.num_nodes();
  std::vector<char> seen(n, 0);
  for (const auto* part : {&split.train, &split.val, &split.test}) {
    for (std::size_t i : *part) {
      if (i >= n) throw DataError("split: node index " + std::to_string(i) + " out of range");
      if (seen[i]) throw DataError("split: node " + std::to_string(i) + " appears twice");
      seen[i] = 1;
    }
  }
  std::vector<char> present(static_cast<std::size_t>(graph.num_classes()), 0);
  for (std::size_t i : split.train) present[static_cast<std::size_t>(graph.labels[i])] = 1;
  for (std::size_t k = 0; k < present.size(); ++k) {
    if (!present[k]) throw DataError("split: class " + std::to_string(k) + " has no training node");
  }
}

void SynthSpec::validate() const {
  if (n < 4) throw std::invalid_argument("synth: n must be at least 4");
  if (d < 2) throw std::invalid_argument("synth: d must be at least 2");
  if (c < 2) throw std::invalid_argument("synth: c must be at least 2");
  if (!(group_fraction > 0.0 && group_fraction < 1.0)) throw std::invalid_argument("synth: group_fraction must lie in (0, 1)");
  if (!(homophily >= 0.0 && homophily <= 1.0)) throw std::invalid_argument("synth: homophily must lie in [0, 1]");
  if (!(bias_strength >= 0.0 && bias_strength <= 1.0)) throw std::invalid_argument("synth: bias_strength must lie in [0, 1]");
  if (!(avg_degree > 0.0)) throw std::invalid_argument("synth: avg_degree must be positive");
  if (avg_degree >= static_cast<double>(n)) throw std::invalid_argument("synth: avg_degree must be below n");
  if (!(shift_alignment >= 0.0 && shift_alignment <= 1.0)) throw std::invalid_argument("synth: shift_alignment must lie in [0, 1]");
  if (!(group_homophily >= 0.0 && group_homophily <= 1.0)) throw std::invalid_argument("synth: group_homophily must lie in [0, 1]");
  if (!(class_separation >= 0.0) || !(group_shift >= 0.0) || !std::isfinite(label_skew)) {
    throw std::invalid_argument("synth: invalid bias shape parameters");
  }
}

AttributedGraph generate_biased_graph(const SynthSpec& spec) {
  spec.validate();
  const std::size_t n = spec.n, d = spec.d;
  const auto c = static_cast<std::size_t>(spec.c);
  const double b = spec.bias_strength;
  auto rng = make_rng(spec.seed, Stream::kGraph);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);

  AttributedGraph g;
  g.sensitive.assign(n, 0);
  {
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    const auto ones = static_cast<std::size_t>(std::llround(spec.group_fraction * static_cast<double>(n)));
    for (std::size_t k = 0; k < ones; ++k) g.sensitive[perm[k]] = 1;
  }

  g.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double sg = 2.0 * g.sensitive[i] - 1.0;
    std::vector<double> p(c);
    double z = 0.0;
    for (std::size_t k = 0; k < c; ++k) {
      p[k] = std::exp(b * spec.label_skew * sg * (static_cast<double>(k) - 0.5 * static_cast<double>(c - 1)));
      z += p[k];
    }
    double u = unif(rng) * z;
    std::size_t k = 0;
    while (k + 1 < c && u >= p[k]) u -= p[k++];
    g.labels[i] = static_cast<int>(k);
  }

  // Class means: centred Gaussian rows scaled to RMS norm separation / 2, so
  // with two classes the means are exactly `class_separation` apart.
  DenseMat means(c, d);
  for (double& v : means.data()) v = normal(rng);
  for (std::size_t j = 0; j < d; ++j) {
    double mu = 0.0;
    for (std::size_t k = 0; k < c; ++k) mu += means(k, j);
    mu /= static_cast<double>(c);
    for (std::size_t k = 0; k < c; ++k) means(k, j) -= mu;
  }
  {
    double sq = 0.0;
    for (double v : means.data()) sq += v * v;
    const double rms = std::sqrt(sq / static_cast<double>(c));
    for (double& v : means.data()) v *= 0.5 * spec.class_separation / rms;
  }
  std::vector<double> dir(d), orth(d);
  for (std::size_t j = 0; j < d; ++j) dir[j] = means(c - 1, j) - means(0, j);
  const auto normalize = [](std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    s = std::sqrt(s);
    for (double& x : v) x /= s;
  };
  normalize(dir);
  for (double& v : orth) v = normal(rng);
  {
    const double proj = std::inner_product(orth.begin(), orth.end(), dir.begin(), 0.0);
    for (std::size_t j = 0; j < d; ++j) orth[j] -= proj * dir[j];
    normalize(orth);
  }
  const double a = spec.shift_alignment;
  std::vector<double> shift(d);
  for (std::size_t j = 0; j < d; ++j) {
    shift[j] = spec.group_shift * (a * dir[j] + std::sqrt(1.0 - a * a) * orth[j]);
  }

  g.attributes = DenseMat(n, d);
  for (std::size_t i = 0; i < n; ++i) {
    const double sg = 2.0 * g.sensitive[i] - 1.0;
    const auto y = static_cast<std::size_t>(g.labels[i]);
    for (std::size_t j = 0; j < d; ++j) {
      g.attributes(i, j) = means(y, j) + 0.5 * b * sg * shift[j] + normal(rng);
    }
  }

  // pools[class][group]
  std::vector<std::vector<std::size_t>> pools(2 * c);
  for (std::size_t i = 0; i < n; ++i) {
    pools[2 * static_cast<std::size_t>(g.labels[i]) + static_cast<std::size_t>(g.sensitive[i])].push_back(i);
  }
  const auto m = static_cast<std::size_t>(std::llround(static_cast<double>(n) * spec.avg_degree / 2.0));
  std::unordered_set<std::uint64_t> seen;
  std::vector<SparseMat::Triplet> trips;
  trips.reserve(2 * m);
  std::uniform_int_distribution<std::size_t> pick_node(0, n - 1);
  const std::size_t max_attempts = 100 * m + 10000;
  std::size_t attempts = 0;
  std::vector<const std::vector<std::size_t>*> cand;
  while (seen.size() < m) {
    if (++attempts > max_attempts) {
      throw DataError("synth: could not place " + std::to_string(m) + " distinct edges; lower avg_degree");
    }
    const std::size_t i = pick_node(rng);
    const auto yi = static_cast<std::size_t>(g.labels[i]);
    const auto si = static_cast<std::size_t>(g.sensitive[i]);
    const bool same_class = unif(rng) < spec.homophily;
    const bool same_group = unif(rng) < b * spec.group_homophily;
    cand.clear();
    std::size_t total = 0;
    for (std::size_t k = 0; k < c; ++k) {
      if ((k == yi) != same_class) continue;
      for (std::size_t s = 0; s < 2; ++s) {
        if (same_group && s != si) continue;
        cand.push_back(&pools[2 * k + s]);
        total += pools[2 * k + s].size();
      }
    }
    if (total == 0) continue;
    std::size_t r = std::uniform_int_distribution<std::size_t>(0, total - 1)(rng);
    std::size_t j = 0;
    for (const auto* pool : cand) {
      if (r < pool->size()) {
        j = (*pool)[r];
        break;
      }
      r -= pool->size();
    }
    if (j == i) continue;
    const std::uint64_t key = static_cast<std::uint64_t>(std::min(i, j)) * n + std::max(i, j);
    if (!seen.insert(key).second) continue;
    trips.push_back({i, j, 1.0});
    trips.push_back({j, i, 1.0});
  }
  g.adjacency = SparseMat::from_triplets(n, n, std::move(trips));

  g.node_ids.resize(n);
  for (std::size_t i = 0; i < n; ++i) g.node_ids[i] = std::to_string(i);
  g.attribute_names.resize(d);
  for (std::size_t j = 0; j < d; ++j) g.attribute_names[j] = "x" + std::to_string(j);
  g.validate();
  return g;
}

namespace {

using Row = std::vector<std::string>;

std::vector<Row> read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::vector<Row> rows;
  std::string line;
  boost::escaped_list_separator<char> sep('\\', ',', '"');
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    try {
      boost::tokenizer<boost::escaped_list_separator<char>> tok(line, sep);
      Row row;
      for (const auto& t : tok) {
        const auto first = t.find_first_not_of(" \t");
        const auto last = t.find_last_not_of(" \t");
        row.push_back(first == std::string::npos ? std::string() : t.substr(first, last - first + 1));
      }
      rows.push_back(std::move(row));
    } catch (const boost::escaped_list_error& e) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return rows;
}

bool parse_double(const std::string& s, double& out) {
  const char* first = s.data();
  const char* last = s.data() + s.size();
  if (first != last && *first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, out);
  return ec == std::errc() && ptr == last && std::isfinite(out);
}

/// Maps distinct values to 0..k-1, ordered numerically when every value is
/// a number and lexicographically otherwise.
std::vector<int> encode_categories(const std::vector<std::string>& values, std::size_t& count) {
  std::vector<double> nums(values.size());
  bool numeric = true;
  for (std::size_t i = 0; i < values.size() && numeric; ++i) numeric = parse_double(values[i], nums[i]);
  std::vector<int> codes(values.size());
  if (numeric) {
    std::vector<double> distinct(nums);
    std::sort(distinct.begin(), distinct.end());
    distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
    count = distinct.size();
    for (std::size_t i = 0; i < values.size(); ++i) {
      codes[i] = static_cast<int>(std::lower_bound(distinct.begin(), distinct.end(), nums[i]) - distinct.begin());
    }
  } else {
    std::vector<std::string> distinct(values);
    std::sort(distinct.begin(), distinct.end());
    distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
    count = distinct.size();
    for (std::size_t i = 0; i < values.size(); ++i) {
      codes[i] = static_cast<int>(std::lower_bound(distinct.begin(), distinct.end(), values[i]) - distinct.begin());
    }
  }
  return codes;
}

}  // namespace

AttributedGraph load_graph(const std::filesystem::path& edges_path, const std::filesystem::path& attr_path,
                           const LoadOptions& opt) {
  const auto rows = read_csv(attr_path);
  if (rows.empty()) throw DataError(attr_path.string() + ": missing header");
  const Row& header = rows.front();
  std::map<std::string, std::size_t> col;
  for (std::size_t j = 0; j < header.size(); ++j) {
    if (!col.emplace(header[j], j).second) throw DataError(attr_path.string() + ": duplicate column '" + header[j] + "'");
  }
  for (const auto* name : {&opt.label_column, &opt.sensitive_column}) {
    if (!col.count(*name)) throw DataError(attr_path.string() + ": missing column '" + *name + "'");
  }
  const bool has_id = col.count(opt.id_column) > 0;
  const std::size_t label_col = col.at(opt.label_column);
  const std::size_t sens_col = col.at(opt.sensitive_column);
  const std::size_t id_col = has_id ? col.at(opt.id_column) : header.size();

  std::vector<std::size_t> feature_cols;
  AttributedGraph g;
  for (std::size_t j = 0; j < header.size(); ++j) {
    if (j == label_col || j == id_col) continue;
    if (j == sens_col && !opt.keep_sensitive) continue;
    feature_cols.push_back(j);
    g.attribute_names.push_back(header[j]);
  }

  const std::size_t n = rows.size() - 1;
  std::vector<std::string> label_raw(n), sens_raw(n);
  g.node_ids.resize(n);
  std::unordered_map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < n; ++i) {
    const Row& r = rows[i + 1];
    if (r.size() != header.size()) {
      throw DataError(attr_path.string() + ": row " + std::to_string(i + 1) + " has " + std::to_string(r.size()) +
                      " fields, header has " + std::to_string(header.size()));
    }
    g.node_ids[i] = has_id ? r[id_col] : std::to_string(i);
    if (!index.emplace(g.node_ids[i], i).second) throw DataError(attr_path.string() + ": duplicate node id '" + g.node_ids[i] + "'");
    label_raw[i] = r[label_col];
    sens_raw[i] = r[sens_col];
  }

  std::size_t classes = 0, groups = 0;
  g.labels = encode_categories(label_raw, classes);
  g.sensitive = encode_categories(sens_raw, groups);
  if (groups > 2) {
    throw DataError(attr_path.string() + ": sensitive column '" + opt.sensitive_column + "' has " +
                    std::to_string(groups) + " distinct values, expected 2");
  }
  if (n > 0 && groups < 2) throw DataError(attr_path.string() + ": sensitive column has a single value");

  g.attributes = DenseMat(n, feature_cols.size());
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t f = 0; f < feature_cols.size(); ++f) {
      const std::size_t j = feature_cols[f];
      if (j == sens_col) {
        g.attributes(i, f) = g.sensitive[i];
        continue;
      }
      double v = 0.0;
      if (!parse_double(rows[i + 1][j], v)) {
        throw DataError(attr_path.string() + ": row " + std::to_string(i + 1) + ", column '" + header[j] +
                        "': non-numeric value '" + rows[i + 1][j] + "'");
      }
      g.attributes(i, f) = v;
    }
  }

  const auto erows = read_csv(edges_path);
  if (erows.empty()) throw DataError(edges_path.string() + ": missing header");
  std::vector<SparseMat::Triplet> trips;
  std::set<std::pair<std::size_t, std::size_t>> seen;
  for (std::size_t e = 1; e < erows.size(); ++e) {
    const Row& r = erows[e];
    if (r.size() != 2) throw DataError(edges_path.string() + ": row " + std::to_string(e) + " must have two fields");
    std::size_t ends[2];
    for (int k = 0; k < 2; ++k) {
      auto it = index.find(r[static_cast<std::size_t>(k)]);
      if (it == index.end()) {
        throw DataError(edges_path.string() + ": row " + std::to_string(e) + ": unknown node id '" +
                        r[static_cast<std::size_t>(k)] + "'");
      }
      ends[k] = it->second;
    }
    if (ends[0] == ends[1]) throw DataError(edges_path.string() + ": row " + std::to_string(e) + ": self-loop");
    const auto key = std::minmax(ends[0], ends[1]);
    if (!seen.insert(key).second) continue;
    trips.push_back({ends[0], ends[1], 1.0});
    trips.push_back({ends[1], ends[0], 1.0});
  }
  g.adjacency = SparseMat::from_triplets(n, n, std::move(trips));
  g.validate();
  return g;
}

namespace {

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\\\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char ch : s) {
    if (ch == '"' || ch == '\\') out += '\\';
    out += ch;
  }
  return out + "\"";
}

}  // namespace

void save_graph(const AttributedGraph& g, const std::filesystem::path& edges_path,
                const std::filesystem::path& attr_path) {
  g.validate();
  const std::size_t n = g.num_nodes();
  const auto id = [&](std::size_t i) { return g.node_ids.empty() ? std::to_string(i) : g.node_ids[i]; };
  std::vector<std::string> names = g.attribute_names;
  if (names.empty()) {
    for (std::size_t j = 0; j < g.attributes.cols(); ++j) names.push_back("x" + std::to_string(j));
  }
  for (const auto& nm : names) {
    if (nm == "id" || nm == "label" || nm == "sensitive") {
      throw DataError("save_graph: attribute name '" + nm + "' clashes with a reserved column");
    }
  }
  {
    std::ofstream out(attr_path);
    if (!out) throw DataError("cannot write " + attr_path.string());
    out << "id";
    for (const auto& nm : names) out << ',' << csv_field(nm);
    out << ",label,sensitive\n";
    char buf[32];
    for (std::size_t i = 0; i < n; ++i) {
      out << csv_field(id(i));
      for (double v : g.attributes.row(i)) {
        std::snprintf(buf, sizeof buf, "%.17g", v);
        out << ',' << buf;
      }
      out << ',' << g.labels[i] << ',' << g.sensitive[i] << '\n';
    }
  }
  std::ofstream out(edges_path);
  if (!out) throw DataError("cannot write " + edges_path.string());
  out << "src,dst\n";
  const auto& off = g.adjacency.offsets();
  const auto& idx = g.adjacency.indices();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = off[i]; k < off[i + 1]; ++k) {
      if (idx[k] > i) out << csv_field(id(i)) << ',' << csv_field(id(idx[k])) << '\n';
    }
  }
}

SparseMat normalize_adjacency(const SparseMat& a) {
  const std::size_t n = a.rows();
  if (a.cols() != n) throw ShapeError("normalize_adjacency: matrix is not square");
  std::vector<double> deg(n, 1.0);
  const auto& off = a.offsets();
  const auto& idx = a.indices();
  const auto& val = a.values();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = off[i]; k < off[i + 1]; ++k) deg[i] += val[k];
  std::vector<SparseMat::Triplet> trips;
  trips.reserve(a.nnz() + n);
  for (std::size_t i = 0; i < n; ++i) {
    trips.push_back({i, i, 1.0 / deg[i]});
    for (std::size_t k = off[i]; k < off[i + 1]; ++k) {
      trips.push_back({i, idx[k], val[k] / std::sqrt(deg[i] * deg[idx[k]])});
    }
  }
  return SparseMat::from_triplets(n, n, std::move(trips));
}

SparseMat mean_adjacency(const SparseMat& a) {
  const std::size_t n = a.rows();
  std::vector<std::size_t> offsets(a.offsets());
  std::vector<std::size_t> indices(a.indices());
  std::vector<double> values(a.values());
  for (std::size_t i = 0; i < n; ++i) {
    double deg = 0.0;
    for (std::size_t k = offsets[i]; k < offsets[i + 1]; ++k) deg += values[k];
    for (std::size_t k = offsets[i]; k < offsets[i + 1]; ++k) values[k] /= deg;
  }
  return SparseMat(n, a.cols(), std::move(offsets), std::move(indices), std::move(values));
}

DenseMat standardize(const DenseMat& x, const std::vector<std::size_t>& reference) {
  if (reference.empty()) throw std::invalid_argument("standardize: empty reference set");
  const std::size_t d = x.cols();
  std::vector<double> mean(d, 0.0), var(d, 0.0);
  for (std::size_t i : reference)
    for (std::size_t j = 0; j < d; ++j) mean[j] += x(i, j);
  for (double& m : mean) m /= static_cast<double>(reference.size());
  for (std::size_t i : reference)
    for (std::size_t j = 0; j < d; ++j) var[j] += (x(i, j) - mean[j]) * (x(i, j) - mean[j]);
  DenseMat out(x.rows(), d);
  for (std::size_t j = 0; j < d; ++j) {
    const double sd = std::sqrt(var[j] / static_cast<double>(reference.size()));
    const double scale = sd > 1e-12 ? 1.0 / sd : 1.0;
    for (std::size_t i = 0; i < x.rows(); ++i) out(i, j) = (x(i, j) - mean[j]) * scale;
  }
  return out;
}

GraphOperators GraphOperators::build(const AttributedGraph& graph, const Split& split, bool standardize_features) {
  GraphOperators ops;
  ops.sym = std::make_shared<const SparseMat>(normalize_adjacency(graph.adjacency));
  ops.mean = std::make_shared<const SparseMat>(mean_adjacency(graph.adjacency));
  ops.features = std::make_shared<const DenseMat>(standardize_features ? standardize(graph.attributes, split.train)
                                                                        : graph.attributes);
  return ops;
}

}  // namespace fairdistill
