#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "forcelab/cli.hpp"
#include "forcelab/report.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace forcelab;
namespace fs = std::filesystem;

namespace {

int run(std::initializer_list<const char*> args) {
  std::vector<const char*> argv{"forcelab"};
  argv.insert(argv.end(), args);
  return cli::dispatch(static_cast<int>(argv.size()), argv.data());
}

std::string slurp(const fs::path& path) {
  std::ifstream file(path, std::ios::binary);
  std::ostringstream out;
  out << file.rdbuf();
  return out.str();
}

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "forcelab_cli_tests" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

int count_lines(const std::string& text) {
  int lines = 0;
  for (char c : text) lines += c == '\n';
  return lines;
}

}  // namespace

TEST_CASE("missing subcommands and unknown flags are usage errors") {
  CHECK(run({}) == 1);
  CHECK(run({"squeeze", "--no-such-flag"}) == 1);
  CHECK(run({"definitely-not-a-subcommand"}) == 1);
}

TEST_CASE("the squeeze run writes a manifest and one row per trial") {
  const auto dir = fresh_dir("squeeze");
  CHECK(run({"squeeze", "--trials", "64", "--seed", "3", "--out-dir", dir.c_str()}) == 0);

  const std::string csv = slurp(dir / "squeeze_trials.csv");
  CHECK(count_lines(csv) == 65);  // header plus one line per trial
  CHECK(csv.rfind("trial,eta,y_neg,argmax_excluded,", 0) == 0);
  CHECK(csv.find("false") == std::string::npos);  // both guarantee columns stay true

  const auto manifest = report::Json::parse(slurp(dir / "manifest.json"));
  CHECK(manifest["subcommand"] == "squeeze");
  CHECK(manifest["seed"] == 3);
  CHECK(manifest["params"]["trials"] == 64);
}

TEST_CASE("identical invocations produce byte-identical results") {
  const auto dir_a = fresh_dir("repro_a");
  const auto dir_b = fresh_dir("repro_b");
  CHECK(run({"squeeze", "--trials", "40", "--seed", "11", "--out-dir", dir_a.c_str()}) == 0);
  CHECK(run({"squeeze", "--trials", "40", "--seed", "11", "--out-dir", dir_b.c_str()}) == 0);
  CHECK(slurp(dir_a / "squeeze_trials.csv") == slurp(dir_b / "squeeze_trials.csv"));
  CHECK(slurp(dir_a / "manifest.json") == slurp(dir_b / "manifest.json"));
}

TEST_CASE("the environment variable overrides the output directory") {
  const auto flag_dir = fresh_dir("env_flag");
  const auto env_dir = fresh_dir("env_override");
  setenv("FORCE_LAB_OUT", env_dir.c_str(), 1);
  CHECK(run({"squeeze", "--trials", "16", "--out-dir", flag_dir.c_str()}) == 0);
  unsetenv("FORCE_LAB_OUT");
  CHECK(fs::exists(env_dir / "squeeze_trials.csv"));
  CHECK(!fs::exists(flag_dir / "squeeze_trials.csv"));
}

TEST_CASE("config files feed defaults and flags win") {
  const auto dir = fresh_dir("config");
  const fs::path config = dir / "run.ini";
  {
    std::ofstream out(config);
    out << "[squeeze]\n";
    out << "trials = 32\n";
    out << "v = 5\n";
  }
  CHECK(run({"squeeze", "--config", config.c_str(), "--out-dir", dir.c_str()}) == 0);
  CHECK(count_lines(slurp(dir / "squeeze_trials.csv")) == 33);

  const auto dir_override = fresh_dir("config_override");
  CHECK(run({"squeeze", "--config", config.c_str(), "--trials", "8", "--out-dir",
             dir_override.c_str()}) == 0);
  CHECK(count_lines(slurp(dir_override / "squeeze_trials.csv")) == 9);
}

TEST_CASE("json output format swaps the table serialization") {
  const auto dir = fresh_dir("json_format");
  CHECK(run({"squeeze", "--trials", "12", "--format", "json", "--out-dir", dir.c_str()}) == 0);
  CHECK(!fs::exists(dir / "squeeze_trials.csv"));
  const auto rows = report::Json::parse(slurp(dir / "squeeze_trials.json"));
  CHECK(rows.is_array());
  CHECK(rows.size() == 12);
  CHECK(rows[0].contains("eta"));
}

TEST_CASE("csv tables quote awkward cells and keep the header schema") {
  report::CsvTable table({"name", "value"});
  table.add_row({std::string("plain"), 1.5});
  table.add_row({std::string("with,comma"), 2.0});
  table.add_row({std::string("with \"quote\""), 3.0});
  const std::string text = table.to_string();
  CHECK(text.rfind("name,value\n", 0) == 0);
  CHECK(text.find("\"with,comma\"") != std::string::npos);
  CHECK(text.find("\"with \"\"quote\"\"\"") != std::string::npos);
  CHECK_THROWS_AS(table.add_row({std::string("too few")}), std::invalid_argument);
}

TEST_CASE("triangle plots carry the frame and a centered point") {
  const auto dir = fresh_dir("svg_triangle");
  report::PlotSpec spec;
  spec.kind = report::PlotKind::kPathTriangle;
  spec.title = "single path";
  report::Series series;
  series.name = "center";
  series.x = {0.5};
  series.y = {std::sqrt(3.0) / 6.0};
  const fs::path file = dir / "triangle.svg";
  report::emit_svg(spec, {series}, file);
  const std::string svg = slurp(file);
  CHECK(svg.find("<polygon") != std::string::npos);
  CHECK(svg.find("correct") != std::string::npos);
  CHECK(svg.find("<circle") != std::string::npos);
}

TEST_CASE("empty plot data is rejected before any file appears") {
  const auto dir = fresh_dir("svg_empty");
  const fs::path file = dir / "empty.svg";
  CHECK_THROWS_AS(report::emit_svg({}, {}, file), std::invalid_argument);
  report::Series hollow;
  hollow.name = "none";
  CHECK_THROWS_AS(report::emit_svg({}, {hollow}, file), std::invalid_argument);
  CHECK(!fs::exists(file));
}

TEST_CASE("line plots emit one polyline per series") {
  const auto dir = fresh_dir("svg_lines");
  report::PlotSpec spec;
  spec.kind = report::PlotKind::kLine;
  std::vector<report::Series> data;
  for (int s = 0; s < 256; ++s) {
    report::Series series;
    series.name = "s" + std::to_string(s);
    for (int t = 0; t < 5; ++t) {
      series.x.push_back(t);
      series.y.push_back(std::exp(-0.1 * t * (s + 1)));
    }
    data.push_back(std::move(series));
  }
  const fs::path file = dir / "curves.svg";
  report::emit_svg(spec, data, file);
  const std::string svg = slurp(file);
  int polylines = 0;
  for (std::size_t at = svg.find("<polyline"); at != std::string::npos;
       at = svg.find("<polyline", at + 1)) {
    ++polylines;
  }
  CHECK(polylines == 256);
}

TEST_CASE("number formatting round-trips doubles exactly") {
  for (double v : {0.1, 1.0 / 3.0, 1e-17, 123456.789, -0.0, 2.5e300}) {
    CHECK(std::strtod(report::format_double(v).c_str(), nullptr) == v);
  }
}
