#pragma once

#include "forcelab/mathcore.hpp"

#include <json.hpp>

#include <filesystem>
#include <string>
#include <variant>
#include <vector>

namespace forcelab::report {

using Json = nlohmann::json;

/// Deterministic shortest round-trip formatting, so identical runs produce
/// byte-identical files.
std::string format_double(double value);

using Cell = std::variant<std::string, double, long, int, bool>;

class CsvTable {
 public:
  explicit CsvTable(std::vector<std::string> header);
  void add_row(std::vector<Cell> cells);
  const std::vector<std::string>& header() const { return header_; }
  std::size_t row_count() const { return rows_.size(); }
  std::string to_string() const;
  void write(const std::filesystem::path& path) const;

 private:
  std::vector<std::string> header_;
  std::vector<std::vector<std::string>> rows_;
};

void write_json(const std::filesystem::path& path, const Json& value);
void write_text(const std::filesystem::path& path, const std::string& text);

/// Every run drops a manifest next to its results: subcommand, parameters,
/// seed, and the code version.
Json make_manifest(const std::string& subcommand, const Json& params, std::uint64_t seed);
void write_manifest(const std::filesystem::path& out_dir, const std::string& subcommand,
                    const Json& params, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Static SVG plots.

enum class PlotKind { kPathTriangle, kLine, kBar, kScatter };

struct PlotSpec {
  PlotKind kind = PlotKind::kLine;
  std::string title;
  std::string x_label;
  std::string y_label;
  std::string data_ref;  // name of the result file the plot was drawn from
};

struct Series {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
};

/// Self-contained SVG. Triangle plots draw the reference triangle with
/// corner labels and color the path by time index; line plots emit one
/// polyline per series.
void emit_svg(const PlotSpec& spec, const std::vector<Series>& data,
              const std::filesystem::path& path);

}  // namespace forcelab::report
