// Copyright 2026 The xmodlab Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <ostream>
#include <set>
#include <sstream>
#include <tuple>

#include "xmodlab/error.hpp"
#include "xmodlab/experiment.hpp"

namespace xmodlab {

namespace {

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string px(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string short_num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char ch : s) {
    switch (ch) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += ch;
    }
  }
  return out;
}

std::string file_safe(const std::string& s) {
  std::string out;
  for (char ch : s) out += std::isalnum(static_cast<unsigned char>(ch)) || ch == '_' ? ch : '-';
  return out;
}

void write_file(const std::filesystem::path& path, const std::string& text,
                std::vector<std::filesystem::path>& written) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write " + path.string());
  f << text;
  if (!f) throw IoError("write failed for " + path.string());
  written.push_back(path);
}

std::string colour_of(const std::string& variant) {
  if (variant == "xmod") return "#1f77b4";
  if (variant == "shared") return "#d62728";
  if (variant == kAdapterBaseline) return "#2ca02c";
  if (variant == "shared_nm") return "#9467bd";
  return "#555555";
}

// metric "name@123" is an intermediate snapshot of "name".
std::pair<std::string, std::string> split_metric(const std::string& m) {
  const auto at = m.find('@');
  if (at == std::string::npos) return {m, ""};
  return {m.substr(0, at), m.substr(at + 1)};
}

struct Axes {
  double x_lo, x_hi, y_lo, y_hi;
  double x(double v) const {
    return kPlotLeft + (v - x_lo) / (x_hi - x_lo) * (kPlotRight - kPlotLeft);
  }
  double y(double v) const {
    return kPlotBottom - (v - y_lo) / (y_hi - y_lo) * (kPlotBottom - kPlotTop);
  }
};

Axes axes_for(const std::vector<const CurvePoint*>& pts) {
  Axes a{1e300, -1e300, 1e300, -1e300};
  for (const auto* p : pts) {
    a.x_lo = std::min(a.x_lo, double(p->n_langs));
    a.x_hi = std::max(a.x_hi, double(p->n_langs));
    a.y_lo = std::min(a.y_lo, p->mean - p->stddev);
    a.y_hi = std::max(a.y_hi, p->mean + p->stddev);
  }
  if (a.x_hi - a.x_lo <= 0) {
    a.x_lo -= 1;
    a.x_hi += 1;
  }
  if (a.y_hi - a.y_lo <= 1e-12) {
    a.y_lo -= 0.5;
    a.y_hi += 0.5;
  }
  return a;
}

std::string svg_open(const std::string& title) {
  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kSvgWidth << "\" height=\""
    << kSvgHeight << "\" viewBox=\"0 0 " << kSvgWidth << ' ' << kSvgHeight
    << "\" font-family=\"sans-serif\" font-size=\"11\">\n"
    << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    << "<text x=\"" << kPlotLeft << "\" y=\"22\" font-size=\"14\">" << xml_escape(title)
    << "</text>\n";
  return s.str();
}

std::string y_axis(const Axes& a, const std::string& label) {
  std::ostringstream s;
  s << "<line class=\"axis\" x1=\"" << kPlotLeft << "\" y1=\"" << kPlotBottom << "\" x2=\""
    << kPlotRight << "\" y2=\"" << kPlotBottom << "\" stroke=\"black\"/>\n"
    << "<line class=\"axis\" x1=\"" << kPlotLeft << "\" y1=\"" << kPlotTop << "\" x2=\""
    << kPlotLeft << "\" y2=\"" << kPlotBottom << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double v = a.y_lo + (a.y_hi - a.y_lo) * i / 4.0;
    const double py = a.y(v);
    s << "<line x1=\"" << px(kPlotLeft - 4) << "\" y1=\"" << px(py) << "\" x2=\"" << px(kPlotLeft)
      << "\" y2=\"" << px(py) << "\" stroke=\"black\"/>\n"
      << "<text x=\"" << px(kPlotLeft - 6) << "\" y=\"" << px(py + 4)
      << "\" text-anchor=\"end\">" << short_num(v) << "</text>\n";
  }
  s << "<text transform=\"translate(16 " << px((kPlotTop + kPlotBottom) / 2)
    << ") rotate(-90)\" text-anchor=\"middle\">" << xml_escape(label) << "</text>\n";
  return s.str();
}

// One figure per (metric, group): a line per variant and budget mode over the
// set sizes, error bars of one sample standard deviation. Snapshot metrics
// are drawn as thin extra lines in the figure of their base metric.
std::string curve_svg(const std::string& metric, const std::string& group,
                      const std::vector<const CurvePoint*>& pts) {
  const Axes a = axes_for(pts);
  using SeriesKey = std::tuple<std::string, std::string, std::string>;  // variant, budget, snapshot
  std::map<SeriesKey, std::vector<const CurvePoint*>> series;
  bool any_partial = false;
  for (const auto* p : pts) {
    series[{p->variant, p->budget_mode, split_metric(p->metric).second}].push_back(p);
    any_partial = any_partial || !p->complete;
  }
  std::ostringstream s;
  s << svg_open(metric + ", group " + group + (any_partial ? " (partial grid)" : ""));
  s << y_axis(a, metric);
  std::set<std::size_t> xs;
  for (const auto* p : pts) xs.insert(p->n_langs);
  for (auto n : xs) {
    const double x = a.x(double(n));
    s << "<line x1=\"" << px(x) << "\" y1=\"" << kPlotBottom << "\" x2=\"" << px(x) << "\" y2=\""
      << kPlotBottom + 4 << "\" stroke=\"black\"/>\n"
      << "<text x=\"" << px(x) << "\" y=\"" << kPlotBottom + 16 << "\" text-anchor=\"middle\">"
      << n << "</text>\n";
  }
  s << "<text x=\"" << px((kPlotLeft + kPlotRight) / 2) << "\" y=\"" << kPlotBottom + 36
    << "\" text-anchor=\"middle\">pre-training languages</text>\n";
  double legend_y = kPlotTop + 6;
  for (auto& [key, list] : series) {
    const auto& [variant, budget, snapshot] = key;
    std::sort(list.begin(), list.end(),
              [](const CurvePoint* l, const CurvePoint* r) { return l->n_langs < r->n_langs; });
    const std::string colour = colour_of(variant);
    const std::string dash =
        budget == to_string(BudgetMode::kEqualPerLanguageExamples) ? " stroke-dasharray=\"6 3\"" : "";
    const std::string width = snapshot.empty() ? "2" : "1";
    const std::string opacity = snapshot.empty() ? "" : " stroke-opacity=\"0.5\"";
    std::string name = variant + " / " + budget + (snapshot.empty() ? "" : " @" + snapshot);
    bool partial = false;
    for (const auto* p : list) partial = partial || !p->complete;
    s << "<polyline class=\"series\" data-series=\"" << xml_escape(name) << "\" fill=\"none\" stroke=\""
      << colour << "\" stroke-width=\"" << width << "\"" << dash << opacity << " points=\"";
    for (std::size_t i = 0; i < list.size(); ++i)
      s << (i ? " " : "") << px(a.x(double(list[i]->n_langs))) << ',' << px(a.y(list[i]->mean));
    s << "\"/>\n";
    for (const auto* p : list) {
      const double x = a.x(double(p->n_langs));
      s << "<line class=\"errorbar\" x1=\"" << px(x) << "\" y1=\"" << px(a.y(p->mean - p->stddev))
        << "\" x2=\"" << px(x) << "\" y2=\"" << px(a.y(p->mean + p->stddev)) << "\" stroke=\""
        << colour << "\"" << opacity << "/>\n"
        << "<circle cx=\"" << px(x) << "\" cy=\"" << px(a.y(p->mean)) << "\" r=\"3.5\" stroke=\""
        << colour << "\" fill=\"" << (p->complete ? colour : "white") << "\"><title>"
        << xml_escape(name) << " n=" << p->n_langs << ": " << short_num(p->mean) << " +/- "
        << short_num(p->stddev) << " over " << p->n_seeds << " seeds"
        << (p->complete ? "" : " (partial)") << "</title></circle>\n";
    }
    s << "<line x1=\"" << kPlotRight + 16 << "\" y1=\"" << px(legend_y) << "\" x2=\""
      << kPlotRight + 40 << "\" y2=\"" << px(legend_y) << "\" stroke=\"" << colour
      << "\" stroke-width=\"" << width << "\"" << dash << "/>\n"
      << "<text x=\"" << kPlotRight + 44 << "\" y=\"" << px(legend_y + 4) << "\" font-size=\"9\">"
      << xml_escape(name) << (partial ? " (partial)" : "") << "</text>\n";
    legend_y += 14;
  }
  s << "</svg>\n";
  return s.str();
}

// Grouped bars at the largest set size: pre-trained vs added languages.
std::string bars_svg(const std::string& metric, std::size_t n,
                     const std::vector<std::pair<const CurvePoint*, const CurvePoint*>>& pairs) {
  double hi = 0;
  bool any_partial = false;
  for (const auto& [p, a] : pairs) {
    hi = std::max({hi, p->mean + p->stddev, a->mean + a->stddev});
    any_partial = any_partial || !p->complete || !a->complete;
  }
  if (hi <= 0) hi = 1;
  const Axes ax{0, 1, 0, hi};
  std::ostringstream s;
  s << svg_open(metric + ": pre-trained vs added languages, n=" + std::to_string(n) +
                (any_partial ? " (partial grid)" : ""));
  s << y_axis(ax, metric);
  const double slot = (kPlotRight - kPlotLeft) / double(std::max<std::size_t>(1, pairs.size()));
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const auto& [p, a] = pairs[i];
    const double left = kPlotLeft + slot * double(i) + slot * 0.15;
    const double w = slot * 0.35;
    int k = 0;
    for (const auto* pt : {p, a}) {
      const double x = left + w * k;
      const double top = ax.y(pt->mean);
      s << "<rect class=\"bar\" data-group=\"" << pt->group << "\" x=\"" << px(x) << "\" y=\""
        << px(top) << "\" width=\"" << px(w) << "\" height=\"" << px(kPlotBottom - top)
        << "\" fill=\"" << colour_of(pt->variant) << "\" fill-opacity=\"" << (k ? "0.45" : "0.9")
        << "\"><title>" << xml_escape(pt->variant + " " + pt->group) << ": "
        << short_num(pt->mean) << (pt->complete ? "" : " (partial)") << "</title></rect>\n";
      const double cx = x + w / 2;
      s << "<line class=\"errorbar\" x1=\"" << px(cx) << "\" y1=\"" << px(ax.y(pt->mean - pt->stddev))
        << "\" x2=\"" << px(cx) << "\" y2=\"" << px(ax.y(pt->mean + pt->stddev))
        << "\" stroke=\"black\"/>\n";
      ++k;
    }
    s << "<text x=\"" << px(left + w) << "\" y=\"" << kPlotBottom + 16
      << "\" text-anchor=\"middle\" font-size=\"9\">" << xml_escape(p->variant) << "</text>\n"
      << "<text x=\"" << px(left + w) << "\" y=\"" << kPlotBottom + 28
      << "\" text-anchor=\"middle\" font-size=\"8\">" << xml_escape(p->budget_mode) << "</text>\n";
  }
  s << "<text x=\"" << kPlotRight + 16 << "\" y=\"" << kPlotTop + 10
    << "\" font-size=\"9\">solid: pre-trained, light: added</text>\n</svg>\n";
  return s.str();
}

}  // namespace

ReportResult write_report(const std::filesystem::path& out, const ReportOptions& options,
                          std::ostream& log) {
  ReportResult res;
  std::vector<EvalRow> rows;
  for (auto& r : collect_rows(out))
    if (r.lang != kGroupMeanLang) rows.push_back(std::move(r));
  if (rows.empty()) throw IoError("no result rows under " + out.string());
  rows = with_group_means(rows);

  using Coord = std::tuple<std::string, std::size_t, std::string, std::uint64_t>;
  std::set<Coord> present;
  for (const auto& r : rows) present.insert({r.variant, r.n_langs, r.budget_mode, r.seed});

  std::vector<std::uint64_t> seeds;
  std::vector<Coord> expected;
  const auto cfg_path = out / "config.json";
  if (std::filesystem::exists(cfg_path)) {
    const auto cfg = load_experiment(cfg_path);
    seeds = cfg.seeds;
    for (const auto& cell : experiment_grid(cfg))
      expected.push_back({cell.variant, cell.n_langs, to_string(cell.budget), cell.seed});
  } else {
    std::set<std::uint64_t> s;
    std::set<std::tuple<std::string, std::size_t, std::string>> coords;
    for (const auto& [v, n, b, seed] : present) {
      s.insert(seed);
      coords.insert({v, n, b});
    }
    seeds.assign(s.begin(), s.end());
    for (const auto& [v, n, b] : coords)
      for (auto seed : seeds) expected.push_back({v, n, b, seed});
  }
  for (const auto& c : expected) {
    if (present.count(c)) continue;
    const auto& [v, n, b, seed] = c;
    res.missing.push_back("variant=" + v + " n_langs=" + std::to_string(n) + " budget=" + b +
                          " seed=" + std::to_string(seed));
  }
  for (const auto& m : res.missing) log << "missing cell: " << m << "\n";
  if (!res.missing.empty() && !options.allow_partial) {
    log << "incomplete grid: " << res.missing.size() << " of " << expected.size()
        << " cells missing; finish the sweep or pass --allow-partial\n";
    res.exit_code = 2;
    return res;
  }

  const auto curve = curse_curve(rows, seeds);
  std::ostringstream summary;
  summary << "variant,n_langs,budget_mode,group,metric_name,mean,std,n_seeds,status\n";
  for (const auto& p : curve)
    summary << p.variant << ',' << p.n_langs << ',' << p.budget_mode << ',' << p.group << ','
            << p.metric << ',' << num(p.mean) << ',' << num(p.stddev) << ',' << p.n_seeds << ','
            << (p.complete ? "complete" : "partial") << "\n";
  write_file(out / "summary.csv", summary.str(), res.written);

  using LangKey = std::tuple<std::string, std::size_t, std::string, std::string, std::string,
                             std::string>;
  std::map<LangKey, std::vector<double>> per_lang;
  for (const auto& r : rows)
    if (r.lang != kGroupMeanLang)
      per_lang[{r.variant, r.n_langs, r.budget_mode, r.group, r.lang, r.metric}].push_back(r.value);
  std::ostringstream pl;
  pl << "variant,n_langs,budget_mode,group,lang,metric_name,mean,std,n_seeds\n";
  for (const auto& [k, v] : per_lang) {
    const auto& [variant, n, budget, group, lang, metric] = k;
    pl << variant << ',' << n << ',' << budget << ',' << group << ',' << lang << ',' << metric
       << ',' << num(mean_of(v)) << ',' << num(sample_stddev(v)) << ',' << v.size() << "\n";
  }
  write_file(out / "per_language.csv", pl.str(), res.written);

  std::map<std::pair<std::string, std::string>, std::vector<const CurvePoint*>> figures;
  for (const auto& p : curve) figures[{split_metric(p.metric).first, p.group}].push_back(&p);
  for (const auto& [key, pts] : figures) {
    const auto& [metric, group] = key;
    write_file(out / ("curse_" + file_safe(metric) + "_" + file_safe(group) + ".svg"),
               curve_svg(metric, group, pts), res.written);
  }

  // Added vs pre-trained languages at the largest set size that has both.
  std::map<std::string, std::map<std::size_t, std::vector<std::pair<const CurvePoint*, const CurvePoint*>>>> bars;
  for (const auto& p : curve) {
    if (p.group != "pretrained" || !split_metric(p.metric).second.empty()) continue;
    for (const auto& q : curve)
      if (q.group == "added" && q.metric == p.metric && q.variant == p.variant &&
          q.n_langs == p.n_langs && q.budget_mode == p.budget_mode)
        bars[p.metric][p.n_langs].push_back({&p, &q});
  }
  for (const auto& [metric, by_n] : bars) {
    const auto& [n, pairs] = *by_n.rbegin();
    write_file(out / ("added_vs_pretrained_" + file_safe(metric) + ".svg"),
               bars_svg(metric, n, pairs), res.written);
  }
  for (const auto& w : res.written) log << "wrote " << w.string() << "\n";
  return res;
}

}  // namespace xmodlab
