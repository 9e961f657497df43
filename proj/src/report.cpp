#include "kplab/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "kplab/checkpoint.hpp"

namespace kplab {

nlohmann::json metrics_to_json(const EvalResult& r) {
  return {{"ap", r.ap},
          {"ap50", r.ap50},
          {"ap75", r.ap75},
          {"ar", r.ar},
          {"pck", r.pck},
          {"mean_oks", r.mean_oks},
          {"per_joint_err", r.per_joint_err},
          {"occluded_err", r.occluded_err},
          {"visible_err", r.visible_err},
          {"occluded_count", r.occluded_count},
          {"visible_count", r.visible_count}};
}

EvalResult metrics_from_json(const nlohmann::json& j) {
  EvalResult r;
  try {
    r.ap = j.at("ap").get<double>();
    r.ap50 = j.at("ap50").get<double>();
    r.ap75 = j.at("ap75").get<double>();
    r.ar = j.at("ar").get<double>();
    r.pck = j.at("pck").get<double>();
    r.per_joint_err = j.at("per_joint_err").get<std::vector<double>>();
    r.occluded_err = j.at("occluded_err").get<double>();
    r.visible_err = j.at("visible_err").get<double>();
    r.mean_oks = j.value("mean_oks", 0.0);
    r.occluded_count = j.value("occluded_count", std::size_t{0});
    r.visible_count = j.value("visible_count", std::size_t{0});
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::ParseError, std::string("metrics JSON: ") + e.what());
  }
  return r;
}

void write_metrics_json(const EvalResult& r, const std::filesystem::path& path) {
  write_file_atomic(path, metrics_to_json(r).dump(2) + "\n");
}

EvalResult read_metrics_json(const std::filesystem::path& path) {
  const auto text = read_file(path);
  try {
    return metrics_from_json(nlohmann::json::parse(text));
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorKind::ParseError, path.string() + ": " + e.what());
  }
}

std::string metrics_to_csv(const EvalResult& r) {
  std::ostringstream os;
  os.precision(17);
  os << "metric,value\n";
  os << "ap," << r.ap << "\nap50," << r.ap50 << "\nap75," << r.ap75 << "\nar," << r.ar << "\npck," << r.pck
     << "\nmean_oks," << r.mean_oks << "\noccluded_err," << r.occluded_err << "\nvisible_err," << r.visible_err << '\n';
  for (std::size_t j = 0; j < r.per_joint_err.size(); ++j) os << "joint_" << j << ',' << r.per_joint_err[j] << '\n';
  return os.str();
}

std::vector<double> CsvTable::column(const std::string& name) const {
  const auto it = std::find(header.begin(), header.end(), name);
  if (it == header.end()) throw Error(ErrorKind::InvalidArgument, "no CSV column named " + name);
  const auto c = static_cast<std::size_t>(it - header.begin());
  std::vector<double> out;
  for (const auto& row : rows) out.push_back(row[c]);
  return out;
}

namespace {

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream is(line);
  while (std::getline(is, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

}  // namespace

CsvTable parse_csv(const std::string& text) {
  CsvTable t;
  std::istringstream is(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto cells = split(line);
    if (t.header.empty()) {
      t.header = std::move(cells);
      continue;
    }
    if (cells.size() != t.header.size())
      throw Error(ErrorKind::ParseError, "CSV line " + std::to_string(lineno) + ": expected " +
                                             std::to_string(t.header.size()) + " cells");
    std::vector<double> row;
    for (const auto& c : cells) {
      try {
        std::size_t used = 0;
        row.push_back(std::stod(c, &used));
        if (used != c.size()) throw std::invalid_argument(c);
      } catch (const std::exception&) {
        throw Error(ErrorKind::ParseError, "CSV line " + std::to_string(lineno) + ": '" + c + "' is not a number");
      }
    }
    t.rows.push_back(std::move(row));
  }
  if (t.header.empty()) throw Error(ErrorKind::ParseError, "CSV has no header");
  return t;
}

std::vector<Curve> curves_from_csv(const CsvTable& table, const std::string& x_column) {
  const auto x = table.column(x_column);
  std::vector<Curve> out;
  for (const auto& name : table.header)
    if (name != x_column) out.push_back({name, x, table.column(name)});
  return out;
}

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string tick(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
                                    "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};

}  // namespace

std::string render_svg(const std::vector<Curve>& curves, const std::string& title, const std::string& x_label,
                       const std::string& y_label) {
  constexpr double W = 640, H = 400, L = 70, R = 170, T = 40, B = 50;
  const double pw = W - L - R, ph = H - T - B;
  double x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  bool any = false;
  for (const auto& c : curves)
    for (std::size_t i = 0; i < std::min(c.x.size(), c.y.size()); ++i) {
      if (!std::isfinite(c.x[i]) || !std::isfinite(c.y[i])) continue;
      if (!any) {
        x0 = x1 = c.x[i];
        y0 = y1 = c.y[i];
        any = true;
      }
      x0 = std::min(x0, c.x[i]);
      x1 = std::max(x1, c.x[i]);
      y0 = std::min(y0, c.y[i]);
      y1 = std::max(y1, c.y[i]);
    }
  if (x1 - x0 < 1e-12) x1 = x0 + 1;
  if (y1 - y0 < 1e-12) y1 = y0 + 1;
  auto sx = [&](double x) { return L + (x - x0) / (x1 - x0) * pw; };
  auto sy = [&](double y) { return T + ph - (y - y0) / (y1 - y0) * ph; };

  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" viewBox=\"0 0 " << W
     << ' ' << H << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << fmt(W / 2) << "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">" << escape(title)
     << "</text>\n";
  os << "<line x1=\"" << fmt(L) << "\" y1=\"" << fmt(T + ph) << "\" x2=\"" << fmt(L + pw) << "\" y2=\"" << fmt(T + ph)
     << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << fmt(L) << "\" y1=\"" << fmt(T) << "\" x2=\"" << fmt(L) << "\" y2=\"" << fmt(T + ph)
     << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double xv = x0 + (x1 - x0) * i / 4.0, yv = y0 + (y1 - y0) * i / 4.0;
    os << "<text x=\"" << fmt(sx(xv)) << "\" y=\"" << fmt(T + ph + 15) << "\" text-anchor=\"middle\">" << tick(xv)
       << "</text>\n";
    os << "<text x=\"" << fmt(L - 5) << "\" y=\"" << fmt(sy(yv) + 4) << "\" text-anchor=\"end\">" << tick(yv)
       << "</text>\n";
  }
  os << "<text x=\"" << fmt(L + pw / 2) << "\" y=\"" << fmt(H - 10) << "\" text-anchor=\"middle\">" << escape(x_label)
     << "</text>\n";
  os << "<text x=\"15\" y=\"" << fmt(T + ph / 2) << "\" text-anchor=\"middle\" transform=\"rotate(-90 15 "
     << fmt(T + ph / 2) << ")\">" << escape(y_label) << "</text>\n";
  for (std::size_t ci = 0; ci < curves.size(); ++ci) {
    const auto& c = curves[ci];
    const char* color = kPalette[ci % std::size(kPalette)];
    os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
    bool first = true;
    for (std::size_t i = 0; i < std::min(c.x.size(), c.y.size()); ++i) {
      if (!std::isfinite(c.x[i]) || !std::isfinite(c.y[i])) continue;
      os << (first ? "" : " ") << fmt(sx(c.x[i])) << ',' << fmt(sy(c.y[i]));
      first = false;
    }
    os << "\"/>\n";
    const double ly = T + 10 + 16.0 * static_cast<double>(ci);
    os << "<line x1=\"" << fmt(L + pw + 10) << "\" y1=\"" << fmt(ly) << "\" x2=\"" << fmt(L + pw + 30) << "\" y2=\""
       << fmt(ly) << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    os << "<text x=\"" << fmt(L + pw + 35) << "\" y=\"" << fmt(ly + 4) << "\">" << escape(c.label) << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

void write_report(const EvalResult& result, const std::vector<Curve>& curves, const std::string& title,
                  const ReportPaths& paths) {
  write_metrics_json(result, paths.json);
  write_file_atomic(paths.csv, metrics_to_csv(result));
  write_file_atomic(paths.svg, render_svg(curves, title));
}

}  // namespace kplab
