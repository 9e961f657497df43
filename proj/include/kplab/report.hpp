#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "kplab/metrics.hpp"

namespace kplab {

// {"ap","ap50","ap75","ar","pck","per_joint_err","occluded_err","visible_err"}
// plus "mean_oks" and the joint counts.
nlohmann::json metrics_to_json(const EvalResult& r);
EvalResult metrics_from_json(const nlohmann::json& j);
void write_metrics_json(const EvalResult& r, const std::filesystem::path& path);
EvalResult read_metrics_json(const std::filesystem::path& path);
// metric,value rows; per-joint errors as joint_<i>.
std::string metrics_to_csv(const EvalResult& r);

struct Curve {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
};

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;

  // Throws InvalidArgument for an unknown column.
  std::vector<double> column(const std::string& name) const;
};

// Numeric CSV with a header line. Throws ParseError.
CsvTable parse_csv(const std::string& text);
// One curve per column other than `x_column`.
std::vector<Curve> curves_from_csv(const CsvTable& table, const std::string& x_column = "epoch");

// Line chart with axes, ticks and a legend. Fixed-precision coordinates make
// the output a pure function of the input.
std::string render_svg(const std::vector<Curve>& curves, const std::string& title, const std::string& x_label = "epoch",
                       const std::string& y_label = "value");

struct ReportPaths {
  std::filesystem::path json;
  std::filesystem::path csv;
  std::filesystem::path svg;
};

// Writes the metrics JSON and CSV and the SVG chart of `curves`. Throws IoError.
void write_report(const EvalResult& result, const std::vector<Curve>& curves, const std::string& title,
                  const ReportPaths& paths);

}  // namespace kplab
