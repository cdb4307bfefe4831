#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <map>
#include <sstream>

#include "fairdistill/experiment.hpp"

namespace fairdistill {

namespace {

constexpr double kWidth = 480, kHeight = 320, kLeft = 60, kRight = 20, kTop = 30, kBottom = 50;

std::string fmt(double v, const char* spec = "%.4g") {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

std::string header(double width, double height, const PlotOptions& opt) {
  std::ostringstream out;
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
      << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  if (!opt.deterministic) {
    const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    char stamp[32];
    std::strftime(stamp, sizeof stamp, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
    out << "<!-- rendered " << stamp << " -->\n";
  }
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  return out.str();
}

struct Range {
  double lo = 0.0, hi = 1.0;
  void pad() {
    if (!(hi > lo)) {
      lo -= 0.5;
      hi += 0.5;
    }
    const double m = 0.05 * (hi - lo);
    lo -= m;
    hi += m;
  }
};

Range range_of(const std::vector<double>& lo, const std::vector<double>& hi) {
  Range r{std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity()};
  for (double v : lo)
    if (std::isfinite(v)) r.lo = std::min(r.lo, v);
  for (double v : hi)
    if (std::isfinite(v)) r.hi = std::max(r.hi, v);
  if (!std::isfinite(r.lo) || !std::isfinite(r.hi)) r = {0.0, 1.0};
  r.pad();
  return r;
}

void y_axis(std::ostringstream& out, const Range& y, double x0, double top, double bottom, const std::string& label) {
  out << "<line x1=\"" << x0 << "\" y1=\"" << top << "\" x2=\"" << x0 << "\" y2=\"" << bottom
      << "\" stroke=\"black\"/>\n";
  for (int k = 0; k <= 4; ++k) {
    const double v = y.lo + (y.hi - y.lo) * k / 4.0;
    const double py = bottom - (bottom - top) * k / 4.0;
    out << "<line x1=\"" << x0 - 4 << "\" y1=\"" << fmt(py) << "\" x2=\"" << x0 << "\" y2=\"" << fmt(py)
        << "\" stroke=\"black\"/>\n<text x=\"" << x0 - 6 << "\" y=\"" << fmt(py + 4)
        << "\" text-anchor=\"end\">" << fmt(v, "%.3f") << "</text>\n";
  }
  out << "<text x=\"" << fmt(x0 - 48) << "\" y=\"" << fmt((top + bottom) / 2) << "\" transform=\"rotate(-90 "
      << fmt(x0 - 48) << ' ' << fmt((top + bottom) / 2) << ")\" text-anchor=\"middle\">" << label << "</text>\n";
}

}  // namespace

std::string sweep_plot_svg(const std::string& axis, const std::vector<SweepRow>& rows, const std::string& metric,
                           const PlotOptions& opt) {
  std::map<double, std::vector<double>> by_value;
  for (const auto& r : rows) by_value[r.value].push_back(report_metric(r.report, metric));
  const bool log_x = axis == "lambda" && std::all_of(by_value.begin(), by_value.end(),
                                                     [](const auto& kv) { return kv.first > 0.0; });
  std::vector<double> xs, mean, lo, hi;
  for (const auto& [v, values] : by_value) {
    const Summary s = summarize(values);
    xs.push_back(log_x ? std::log10(v) : v);
    mean.push_back(s.mean);
    lo.push_back(s.mean - s.std);
    hi.push_back(s.mean + s.std);
  }
  const Range y = range_of(lo, hi);
  Range x = xs.empty() ? Range{} : Range{xs.front(), xs.back()};
  x.pad();
  const double right = kWidth - kRight, bottom = kHeight - kBottom;
  const auto px = [&](double v) { return kLeft + (v - x.lo) / (x.hi - x.lo) * (right - kLeft); };
  const auto py = [&](double v) { return bottom - (v - y.lo) / (y.hi - y.lo) * (bottom - kTop); };

  std::ostringstream out;
  out << header(kWidth, kHeight, opt);
  out << "<text x=\"" << kWidth / 2 << "\" y=\"18\" text-anchor=\"middle\">" << metric << " vs " << axis
      << "</text>\n";
  y_axis(out, y, kLeft, kTop, bottom, metric);
  out << "<line x1=\"" << kLeft << "\" y1=\"" << bottom << "\" x2=\"" << right << "\" y2=\"" << bottom
      << "\" stroke=\"black\"/>\n";
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double v = log_x ? std::pow(10.0, xs[i]) : xs[i];
    out << "<text x=\"" << fmt(px(xs[i])) << "\" y=\"" << bottom + 16 << "\" text-anchor=\"middle\">" << fmt(v)
        << "</text>\n";
  }
  out << "<text x=\"" << (kLeft + right) / 2 << "\" y=\"" << kHeight - 12 << "\" text-anchor=\"middle\">" << axis
      << (log_x ? " (log scale)" : "") << "</text>\n";
  if (!xs.empty()) {
    out << "<polygon fill=\"steelblue\" fill-opacity=\"0.2\" stroke=\"none\" points=\"";
    for (std::size_t i = 0; i < xs.size(); ++i) out << fmt(px(xs[i])) << ',' << fmt(py(hi[i])) << ' ';
    for (std::size_t i = xs.size(); i-- > 0;) out << fmt(px(xs[i])) << ',' << fmt(py(lo[i])) << ' ';
    out << "\"/>\n<polyline fill=\"none\" stroke=\"steelblue\" stroke-width=\"2\" points=\"";
    for (std::size_t i = 0; i < xs.size(); ++i) out << fmt(px(xs[i])) << ',' << fmt(py(mean[i])) << ' ';
    out << "\"/>\n";
    for (std::size_t i = 0; i < xs.size(); ++i) {
      out << "<circle cx=\"" << fmt(px(xs[i])) << "\" cy=\"" << fmt(py(mean[i]))
          << "\" r=\"3\" fill=\"steelblue\"/>\n";
    }
  }
  out << "</svg>\n";
  return out.str();
}

std::string ablation_plot_svg(const std::vector<FairnessReport>& rows, const PlotOptions& opt) {
  std::vector<std::string> names;
  for (const auto& r : rows)
    if (std::find(names.begin(), names.end(), r.model) == names.end()) names.push_back(r.model);
  const double panel = kWidth;
  std::ostringstream out;
  out << header(2 * panel, kHeight, opt);
  const char* colors[] = {"#888888", "#e08a2c", "steelblue", "#5a9e5a", "#a05aa0"};
  int p = 0;
  for (const std::string metric : {"accuracy", "delta_sp"}) {
    const double x0 = p * panel;
    std::vector<Summary> stats;
    std::vector<double> lo{0.0}, hi;
    for (const auto& name : names) {
      std::vector<double> v;
      for (const auto& r : rows)
        if (r.model == name) v.push_back(report_metric(r, metric));
      stats.push_back(summarize(v));
      hi.push_back(stats.back().mean + stats.back().std);
    }
    Range y = range_of(lo, hi);
    y.lo = 0.0;
    const double left = x0 + kLeft, right = x0 + panel - kRight, bottom = kHeight - kBottom;
    const auto py = [&](double v) { return bottom - (v - y.lo) / (y.hi - y.lo) * (bottom - kTop); };
    out << "<text x=\"" << x0 + panel / 2 << "\" y=\"18\" text-anchor=\"middle\">" << metric << "</text>\n";
    y_axis(out, y, left, kTop, bottom, metric);
    out << "<line x1=\"" << left << "\" y1=\"" << bottom << "\" x2=\"" << right << "\" y2=\"" << bottom
        << "\" stroke=\"black\"/>\n";
    const double slot = (right - left) / std::max<std::size_t>(1, names.size());
    for (std::size_t i = 0; i < names.size(); ++i) {
      const double cx = left + slot * (i + 0.5), w = slot * 0.6;
      const double m = std::isfinite(stats[i].mean) ? stats[i].mean : 0.0;
      out << "<rect x=\"" << fmt(cx - w / 2) << "\" y=\"" << fmt(py(m)) << "\" width=\"" << fmt(w)
          << "\" height=\"" << fmt(bottom - py(m)) << "\" fill=\"" << colors[i % 5] << "\"/>\n";
      out << "<line x1=\"" << fmt(cx) << "\" y1=\"" << fmt(py(m - stats[i].std)) << "\" x2=\"" << fmt(cx)
          << "\" y2=\"" << fmt(py(m + stats[i].std)) << "\" stroke=\"black\"/>\n";
      out << "<text x=\"" << fmt(cx) << "\" y=\"" << bottom + 16 << "\" text-anchor=\"middle\">" << names[i]
          << "</text>\n";
    }
    ++p;
  }
  out << "</svg>\n";
  return out.str();
}

}  // namespace fairdistill
