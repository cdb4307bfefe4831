#include "fairdistill/metrics.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace fairdistill {

GroupIndex GroupIndex::from(const std::vector<int>& sensitive, const std::vector<std::size_t>& nodes) {
  GroupIndex g;
  for (std::size_t i : nodes) (sensitive.at(i) == 0 ? g.group0 : g.group1).push_back(i);
  return g;
}

std::string to_string(Notion notion) { return notion == Notion::kSP ? "sp" : "eo"; }

Notion parse_notion(const std::string& name) {
  std::string s(name);
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char ch) { return std::tolower(ch); });
  if (s == "sp") return Notion::kSP;
  if (s == "eo") return Notion::kEO;
  throw std::invalid_argument("unknown fairness notion '" + name + "' (expected sp or eo)");
}

namespace {

void require_groups(const GroupIndex& g, const char* what) {
  if (g.group0.empty() || g.group1.empty()) {
    throw std::invalid_argument(std::string(what) + ": both sensitive groups must be nonempty");
  }
}

void finish(BiasValue& b) {
  double mx = 0.0, sum = 0.0;
  std::size_t count = 0;
  for (double v : b.per_class) {
    if (std::isnan(v)) continue;
    mx = std::max(mx, v);
    sum += v;
    ++count;
  }
  b.aggregate = mx;
  b.mean = count ? sum / static_cast<double>(count) : 0.0;
}

}  // namespace

BiasValue delta_sp(const std::vector<int>& predicted, const GroupIndex& groups, std::size_t classes) {
  require_groups(groups, "delta_sp");
  BiasValue b;
  b.notion = Notion::kSP;
  std::vector<double> c0(classes, 0.0), c1(classes, 0.0);
  for (std::size_t i : groups.group0) c0.at(static_cast<std::size_t>(predicted.at(i))) += 1.0;
  for (std::size_t i : groups.group1) c1.at(static_cast<std::size_t>(predicted.at(i))) += 1.0;
  const auto n0 = static_cast<double>(groups.group0.size());
  const auto n1 = static_cast<double>(groups.group1.size());
  for (std::size_t k = 0; k < classes; ++k) b.per_class.push_back(std::abs(c0[k] / n0 - c1[k] / n1));
  finish(b);
  return b;
}

BiasValue delta_eo(const std::vector<int>& predicted, const std::vector<int>& truth, const GroupIndex& groups,
                   std::size_t classes) {
  require_groups(groups, "delta_eo");
  BiasValue b;
  b.notion = Notion::kEO;
  std::vector<double> pos0(classes, 0.0), pos1(classes, 0.0), hit0(classes, 0.0), hit1(classes, 0.0);
  for (std::size_t i : groups.group0) {
    const auto y = static_cast<std::size_t>(truth.at(i));
    pos0.at(y) += 1.0;
    hit0[y] += predicted.at(i) == truth[i];
  }
  for (std::size_t i : groups.group1) {
    const auto y = static_cast<std::size_t>(truth.at(i));
    pos1.at(y) += 1.0;
    hit1[y] += predicted.at(i) == truth[i];
  }
  for (std::size_t k = 0; k < classes; ++k) {
    if (pos0[k] == 0.0 || pos1[k] == 0.0) {
      b.per_class.push_back(std::numeric_limits<double>::quiet_NaN());
      b.skipped_classes.push_back(static_cast<int>(k));
    } else {
      b.per_class.push_back(std::abs(hit0[k] / pos0[k] - hit1[k] / pos1[k]));
    }
  }
  if (b.skipped_classes.size() == classes) {
    throw std::invalid_argument("delta_eo: no class has true members in both groups");
  }
  finish(b);
  return b;
}

ad::Var soft_bias(ad::ExprGraph& g, ad::Var probabilities, const GroupIndex& groups, Notion notion,
                  const std::vector<int>* truth) {
  require_groups(groups, "soft_bias");
  if (notion == Notion::kSP) {
    return g.sum(g.abs(g.sub(g.subset_mean(probabilities, groups.group0), g.subset_mean(probabilities, groups.group1))));
  }
  if (truth == nullptr) throw std::invalid_argument("soft_bias: EO needs true labels");
  // Mask width must match the probability columns; the label range of the
  // whole graph gives the class count.
  const auto classes = static_cast<std::size_t>(*std::max_element(truth->begin(), truth->end()) + 1);
  ad::Var total;
  for (std::size_t k = 0; k < classes; ++k) {
    std::vector<std::size_t> r0, r1;
    for (std::size_t i : groups.group0)
      if (static_cast<std::size_t>(truth->at(i)) == k) r0.push_back(i);
    for (std::size_t i : groups.group1)
      if (static_cast<std::size_t>(truth->at(i)) == k) r1.push_back(i);
    if (r0.empty() || r1.empty()) {
      throw std::invalid_argument("soft_bias: class " + std::to_string(k) + " has no true member in some group");
    }
    DenseMat mask(1, classes);
    mask(0, k) = 1.0;
    const ad::Var gap = g.sub(g.subset_mean(probabilities, std::move(r0)), g.subset_mean(probabilities, std::move(r1)));
    const ad::Var term = g.sum(g.abs(g.mul(gap, g.constant(std::move(mask)))));
    total = total.valid() ? g.add(total, term) : term;
  }
  return total;
}

double soft_bias_value(const DenseMat& probabilities, const GroupIndex& groups, Notion notion,
                       const std::vector<int>* truth) {
  ad::ExprGraph g;
  const ad::Var j = soft_bias(g, g.input("P"), groups, notion, truth);
  ad::Bindings b;
  b.set("P", probabilities);
  return g.forward(j, b)(0, 0);
}

FairnessReport evaluate_fairness(const std::string& model, const std::vector<int>& predicted,
                                 const DenseMat& probabilities, const std::vector<int>& truth,
                                 const std::vector<int>& sensitive, const std::vector<std::size_t>& nodes,
                                 std::uint64_t seed) {
  const GroupIndex groups = GroupIndex::from(sensitive, nodes);
  const std::size_t classes = probabilities.cols();
  constexpr double nan = std::numeric_limits<double>::quiet_NaN();
  FairnessReport r;
  r.model = model;
  r.seed = seed;
  std::size_t hit = 0;
  for (std::size_t i : nodes) hit += predicted.at(i) == truth.at(i);
  r.accuracy = nodes.empty() ? 0.0 : static_cast<double>(hit) / static_cast<double>(nodes.size());
  r.delta_sp = delta_sp(predicted, groups, classes).aggregate;
  r.soft_sp = soft_bias_value(probabilities, groups, Notion::kSP);
  try {
    r.delta_eo = delta_eo(predicted, truth, groups, classes).aggregate;
  } catch (const std::invalid_argument&) {
    r.delta_eo = nan;
  }
  try {
    r.soft_eo = soft_bias_value(probabilities, groups, Notion::kEO, &truth);
  } catch (const std::invalid_argument&) {
    r.soft_eo = nan;
  }
  return r;
}

namespace {

constexpr const char* kReportHeader = "model,accuracy,delta_sp,delta_eo,soft_sp,soft_eo,seed";

std::string fixed(double v) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

double parse_field(const std::string& s) {
  if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
  std::size_t used = 0;
  const double v = std::stod(s, &used);
  if (used != s.size()) throw std::invalid_argument("bad number '" + s + "'");
  return v;
}

}  // namespace

void write_reports_csv(std::ostream& out, const std::vector<FairnessReport>& reports) {
  out << kReportHeader << '\n';
  for (const auto& r : reports) {
    if (r.model.find_first_of(",\"\n") != std::string::npos) {
      throw std::invalid_argument("report model name must not contain commas, quotes or newlines");
    }
    out << r.model << ',' << fixed(r.accuracy) << ',' << fixed(r.delta_sp) << ',' << fixed(r.delta_eo) << ','
        << fixed(r.soft_sp) << ',' << fixed(r.soft_eo) << ',' << r.seed << '\n';
  }
}

std::vector<FairnessReport> read_reports_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != kReportHeader) {
    throw std::invalid_argument("report CSV: expected header '" + std::string(kReportHeader) + "'");
  }
  std::vector<FairnessReport> out;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (f.size() != 7) throw std::invalid_argument("report CSV line " + std::to_string(lineno) + ": expected 7 fields");
    try {
      FairnessReport r;
      r.model = f[0];
      r.accuracy = parse_field(f[1]);
      r.delta_sp = parse_field(f[2]);
      r.delta_eo = parse_field(f[3]);
      r.soft_sp = parse_field(f[4]);
      r.soft_eo = parse_field(f[5]);
      r.seed = std::stoull(f[6]);
      out.push_back(std::move(r));
    } catch (const std::exception& e) {
      throw std::invalid_argument("report CSV line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace fairdistill
