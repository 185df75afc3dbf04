#include "forcelab/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace forcelab::report {

std::string format_double(double value) {
  if (std::isnan(value)) return "nan";
  if (std::isinf(value)) return value > 0 ? "inf" : "-inf";
  char buf[64];
  // Shortest representation that round-trips a double.
  for (int precision = 1; precision <= 17; ++precision) {
    std::snprintf(buf, sizeof(buf), "%.*g", precision, value);
    if (std::strtod(buf, nullptr) == value) break;
  }
  return buf;
}

namespace {

std::string cell_to_string(const Cell& cell) {
  struct Visitor {
    std::string operator()(const std::string& s) const {
      if (s.find_first_of(",\"\n") == std::string::npos) return s;
      std::string quoted = "\"";
      for (char c : s) {
        if (c == '"') quoted += '"';
        quoted += c;
      }
      return quoted + "\"";
    }
    std::string operator()(double v) const { return format_double(v); }
    std::string operator()(long v) const { return std::to_string(v); }
    std::string operator()(int v) const { return std::to_string(v); }
    std::string operator()(bool v) const { return v ? "true" : "false"; }
  };
  return std::visit(Visitor{}, cell);
}

void ensure_parent(const std::filesystem::path& path) {
  const auto parent = path.parent_path();
  if (!parent.empty()) std::filesystem::create_directories(parent);
}

}  // namespace

CsvTable::CsvTable(std::vector<std::string> header) : header_(std::move(header)) {
  require(!header_.empty(), "CsvTable: empty header");
}

void CsvTable::add_row(std::vector<Cell> cells) {
  require(cells.size() == header_.size(), "CsvTable: row width does not match header");
  std::vector<std::string> row;
  row.reserve(cells.size());
  for (const auto& c : cells) row.push_back(cell_to_string(c));
  rows_.push_back(std::move(row));
}

std::string CsvTable::to_string() const {
  std::ostringstream out;
  for (std::size_t i = 0; i < header_.size(); ++i) {
    if (i) out << ',';
    out << header_[i];
  }
  out << '\n';
  for (const auto& row : rows_) {
    for (std::size_t i = 0; i < row.size(); ++i) {
      if (i) out << ',';
      out << row[i];
    }
    out << '\n';
  }
  return out.str();
}

void CsvTable::write(const std::filesystem::path& path) const {
  write_text(path, to_string());
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  ensure_parent(path);
  std::ofstream file(path, std::ios::binary | std::ios::trunc);
  if (!file) throw std::runtime_error("cannot open for writing: " + path.string());
  file << text;
}

void write_json(const std::filesystem::path& path, const Json& value) {
  write_text(path, value.dump(2) + "\n");
}

Json make_manifest(const std::string& subcommand, const Json& params, std::uint64_t seed) {
  Json manifest;
  manifest["subcommand"] = subcommand;
  manifest["params"] = params;
  manifest["seed"] = seed;
  manifest["code_version"] = FORCELAB_VERSION;
  return manifest;
}

void write_manifest(const std::filesystem::path& out_dir, const std::string& subcommand,
                    const Json& params, std::uint64_t seed) {
  write_json(out_dir / "manifest.json", make_manifest(subcommand, params, seed));
}

namespace {

constexpr double kWidth = 640.0;
constexpr double kHeight = 480.0;
constexpr double kMargin = 56.0;

struct Range {
  double lo = 0.0;
  double hi = 1.0;
  double map(double v, double out_lo, double out_hi) const {
    const double span = hi > lo ? hi - lo : 1.0;
    return out_lo + (v - lo) / span * (out_hi - out_lo);
  }
};

Range span_of(const std::vector<Series>& data, bool use_x) {
  Range r{std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity()};
  for (const auto& s : data) {
    for (double v : use_x ? s.x : s.y) {
      r.lo = std::min(r.lo, v);
      r.hi = std::max(r.hi, v);
    }
  }
  if (!(r.lo < r.hi)) {
    r.lo -= 0.5;
    r.hi += 0.5;
  }
  return r;
}

const char* series_color(std::size_t index) {
  static const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                                  "#9467bd", "#8c564b", "#17becf", "#7f7f7f"};
  return palette[index % (sizeof(palette) / sizeof(palette[0]))];
}

void svg_header(std::ostringstream& out, const PlotSpec& spec) {
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\""
      << kHeight << "\" viewBox=\"0 0 " << kWidth << " " << kHeight << "\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  if (!spec.title.empty()) {
    out << "<text x=\"" << kWidth / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">"
        << spec.title << "</text>\n";
  }
  if (!spec.data_ref.empty()) {
    out << "<!-- data: " << spec.data_ref << " -->\n";
  }
}

void axis_labels(std::ostringstream& out, const PlotSpec& spec) {
  if (!spec.x_label.empty()) {
    out << "<text x=\"" << kWidth / 2 << "\" y=\"" << kHeight - 12
        << "\" text-anchor=\"middle\" font-size=\"12\">" << spec.x_label << "</text>\n";
  }
  if (!spec.y_label.empty()) {
    out << "<text x=\"16\" y=\"" << kHeight / 2
        << "\" text-anchor=\"middle\" font-size=\"12\" transform=\"rotate(-90 16 "
        << kHeight / 2 << ")\">" << spec.y_label << "</text>\n";
  }
}

void emit_triangle(std::ostringstream& out, const std::vector<Series>& data) {
  // Unit triangle (0,0)-(1,0)-(0.5, sqrt(3)/2) mapped into the canvas.
  const double side = kHeight - 2.0 * kMargin;
  const double x0 = (kWidth - side) / 2.0, y0 = kHeight - kMargin;
  const double h = side * std::sqrt(3.0) / 2.0;
  auto px = [&](double u) { return x0 + u * side; };
  auto py = [&](double v) { return y0 - v / (std::sqrt(3.0) / 2.0) * h; };
  out << "<polygon points=\"" << px(0) << ',' << py(0) << ' ' << px(1) << ',' << py(0) << ' '
      << px(0.5) << ',' << py(std::sqrt(3.0) / 2.0)
      << "\" fill=\"none\" stroke=\"black\"/>\n";
  out << "<text x=\"" << px(0) - 10 << "\" y=\"" << py(0) + 16
      << "\" font-size=\"12\" text-anchor=\"middle\">correct</text>\n";
  out << "<text x=\"" << px(1) + 10 << "\" y=\"" << py(0) + 16
      << "\" font-size=\"12\" text-anchor=\"middle\">runner-up</text>\n";
  out << "<text x=\"" << px(0.5) << "\" y=\"" << py(std::sqrt(3.0) / 2.0) - 8
      << "\" font-size=\"12\" text-anchor=\"middle\">rest</text>\n";
  for (const auto& s : data) {
    const std::size_t n = s.x.size();
    for (std::size_t i = 0; i + 1 < n; ++i) {
      // Color by time: transparent early, saturated late.
      const double alpha = 0.15 + 0.85 * static_cast<double>(i) / std::max<std::size_t>(n - 1, 1);
      out << "<line x1=\"" << px(s.x[i]) << "\" y1=\"" << py(s.y[i]) << "\" x2=\""
          << px(s.x[i + 1]) << "\" y2=\"" << py(s.y[i + 1])
          << "\" stroke=\"#1f4e9c\" stroke-opacity=\"" << format_double(alpha) << "\"/>\n";
    }
    if (n == 1) {
      out << "<circle cx=\"" << px(s.x[0]) << "\" cy=\"" << py(s.y[0])
          << "\" r=\"3\" fill=\"#1f4e9c\"/>\n";
    }
  }
}

void emit_xy(std::ostringstream& out, const PlotSpec& spec, const std::vector<Series>& data) {
  const Range rx = span_of(data, true);
  const Range ry = span_of(data, false);
  auto px = [&](double v) { return rx.map(v, kMargin, kWidth - kMargin); };
  auto py = [&](double v) { return ry.map(v, kHeight - kMargin, kMargin); };
  out << "<rect x=\"" << kMargin << "\" y=\"" << kMargin << "\" width=\"" << kWidth - 2 * kMargin
      << "\" height=\"" << kHeight - 2 * kMargin << "\" fill=\"none\" stroke=\"#888\"/>\n";
  out << "<text x=\"" << kMargin << "\" y=\"" << kHeight - kMargin + 16 << "\" font-size=\"10\">"
      << format_double(rx.lo) << "</text>\n";
  out << "<text x=\"" << kWidth - kMargin << "\" y=\"" << kHeight - kMargin + 16
      << "\" font-size=\"10\" text-anchor=\"end\">" << format_double(rx.hi) << "</text>\n";
  out << "<text x=\"" << kMargin - 4 << "\" y=\"" << kHeight - kMargin
      << "\" font-size=\"10\" text-anchor=\"end\">" << format_double(ry.lo) << "</text>\n";
  out << "<text x=\"" << kMargin - 4 << "\" y=\"" << kMargin + 4
      << "\" font-size=\"10\" text-anchor=\"end\">" << format_double(ry.hi) << "</text>\n";

  for (std::size_t si = 0; si < data.size(); ++si) {
    const auto& s = data[si];
    const char* color = series_color(si);
    if (spec.kind == PlotKind::kLine) {
      out << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1\" points=\"";
      for (std::size_t i = 0; i < s.x.size(); ++i) {
        if (i) out << ' ';
        out << px(s.x[i]) << ',' << py(s.y[i]);
      }
      out << "\"/>\n";
    } else if (spec.kind == PlotKind::kScatter) {
      for (std::size_t i = 0; i < s.x.size(); ++i) {
        out << "<circle cx=\"" << px(s.x[i]) << "\" cy=\"" << py(s.y[i]) << "\" r=\"2.5\" fill=\""
            << color << "\"/>\n";
      }
    } else {  // bars
      const double base = py(std::max(0.0, ry.lo));
      const double width = (kWidth - 2 * kMargin) /
                           std::max<double>(1.0, static_cast<double>(s.x.size()) * 1.5);
      for (std::size_t i = 0; i < s.x.size(); ++i) {
        const double top = py(s.y[i]);
        out << "<rect x=\"" << px(s.x[i]) - width / 2 << "\" y=\"" << std::min(top, base)
            << "\" width=\"" << width << "\" height=\"" << std::abs(base - top) << "\" fill=\""
            << color << "\" fill-opacity=\"0.8\"/>\n";
      }
    }
  }
}

}  // namespace

void emit_svg(const PlotSpec& spec, const std::vector<Series>& data,
              const std::filesystem::path& path) {
  bool empty = data.empty();
  if (!empty) {
    empty = true;
    for (const auto& s : data) {
      require(s.x.size() == s.y.size(), "emit_svg: series x/y length mismatch");
      if (!s.x.empty()) empty = false;
    }
  }
  if (empty) throw std::invalid_argument("emit_svg: no data");

  std::ostringstream out;
  svg_header(out, spec);
  if (spec.kind == PlotKind::kPathTriangle) {
    emit_triangle(out, data);
  } else {
    emit_xy(out, spec, data);
  }
  axis_labels(out, spec);
  out << "</svg>\n";
  write_text(path, out.str());
}

}  // namespace forcelab::report
