#include "urgent/model/grid.hpp"

#include "urgent/error.hpp"
#include "urgent/util.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <array>
#include <bit>
#include <cctype>
#include <charconv>
#include <cstring>
#include <fstream>
#include <sstream>

static_assert(std::endian::native == std::endian::little, "binary series assumes little endian");

namespace urgent::model {

ScalarGrid::ScalarGrid(int cols, int rows, double fill) : ncols(cols), nrows(rows) {
  require(cols > 0 && rows > 0, "grid dimensions must be positive");
  values.assign(static_cast<std::size_t>(cols) * static_cast<std::size_t>(rows), fill);
}

bool ScalarGrid::same_geometry(const ScalarGrid& o) const {
  return ncols == o.ncols && nrows == o.nrows && x_origin == o.x_origin &&
         y_origin == o.y_origin && cell_size_m == o.cell_size_m;
}

void ScalarGrid::validate() const {
  if (ncols <= 0 || nrows <= 0) fail(ErrorCode::Validation, "grid dimensions must be positive");
  if (!(cell_size_m > 0.0)) fail(ErrorCode::Validation, "cell size must be positive");
  if (values.size() != static_cast<std::size_t>(ncols) * static_cast<std::size_t>(nrows))
    fail(ErrorCode::Validation, "grid has " + std::to_string(values.size()) +
                                    " values, expected " + std::to_string(ncols * nrows));
}

std::string format_value(double v) {
  std::array<char, 32> buf{};
  auto res = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), res.ptr);
}

std::string to_ascii_grid(const ScalarGrid& g) {
  g.validate();
  std::string out;
  out.reserve(g.size() * 8 + 128);
  out += "ncols " + std::to_string(g.ncols) + "\n";
  out += "nrows " + std::to_string(g.nrows) + "\n";
  out += "xllcorner " + format_value(g.x_origin) + "\n";
  out += "yllcorner " + format_value(g.y_origin) + "\n";
  out += "cellsize " + format_value(g.cell_size_m) + "\n";
  out += "NODATA_value " + format_value(g.nodata) + "\n";
  for (int r = 0; r < g.nrows; ++r) {
    for (int c = 0; c < g.ncols; ++c) {
      if (c) out += ' ';
      out += format_value(g.at(c, r));
    }
    out += '\n';
  }
  return out;
}

namespace {

class Tokenizer {
 public:
  explicit Tokenizer(std::string_view text) : text_(text) {}

  bool at_end() {
    skip_space();
    return pos_ >= text_.size();
  }

  std::string_view next() {
    skip_space();
    if (pos_ >= text_.size()) fail(ErrorCode::Validation, "unexpected end of grid data");
    const std::size_t start = pos_;
    while (pos_ < text_.size() && !is_space(text_[pos_])) ++pos_;
    return text_.substr(start, pos_ - start);
  }

  double number() {
    const auto tok = next();
    double v = 0.0;
    const char* first = tok.data();
    if (!tok.empty() && tok.front() == '+') ++first;
    auto res = std::from_chars(first, tok.data() + tok.size(), v);
    if (res.ec != std::errc() || res.ptr != tok.data() + tok.size())
      fail(ErrorCode::Validation, "bad number '" + std::string(tok) + "' in grid data");
    return v;
  }

  void expect_key(std::string_view key) {
    const auto tok = next();
    if (tok.size() != key.size() ||
        !std::equal(tok.begin(), tok.end(), key.begin(),
                    [](char a, char b) { return std::tolower(a) == std::tolower(b); }))
      fail(ErrorCode::Validation,
           "expected '" + std::string(key) + "' but found '" + std::string(tok) + "'");
  }

 private:
  static bool is_space(char c) { return c == ' ' || c == '\n' || c == '\r' || c == '\t'; }
  void skip_space() {
    while (pos_ < text_.size() && is_space(text_[pos_])) ++pos_;
  }

  std::string_view text_;
  std::size_t pos_ = 0;
};

ScalarGrid parse_one(Tokenizer& tok) {
  ScalarGrid g;
  tok.expect_key("ncols");
  const double ncols = tok.number();
  tok.expect_key("nrows");
  const double nrows = tok.number();
  if (ncols < 1 || nrows < 1 || ncols != static_cast<int>(ncols) || nrows != static_cast<int>(nrows))
    fail(ErrorCode::Validation, "grid dimensions must be positive integers");
  g.ncols = static_cast<int>(ncols);
  g.nrows = static_cast<int>(nrows);
  tok.expect_key("xllcorner");
  g.x_origin = tok.number();
  tok.expect_key("yllcorner");
  g.y_origin = tok.number();
  tok.expect_key("cellsize");
  g.cell_size_m = tok.number();
  tok.expect_key("NODATA_value");
  g.nodata = tok.number();
  g.values.resize(static_cast<std::size_t>(g.ncols) * static_cast<std::size_t>(g.nrows));
  for (auto& v : g.values) v = tok.number();
  g.validate();
  return g;
}

}  // namespace

ScalarGrid parse_ascii_grid(std::string_view text) {
  Tokenizer tok(text);
  ScalarGrid g = parse_one(tok);
  if (!tok.at_end()) fail(ErrorCode::Validation, "trailing data after grid");
  return g;
}

std::string to_ascii_series(std::span<const ScalarGrid> grids) {
  std::string out;
  for (const auto& g : grids) out += to_ascii_grid(g);
  return out;
}

std::vector<ScalarGrid> parse_ascii_series(std::string_view text) {
  Tokenizer tok(text);
  std::vector<ScalarGrid> out;
  while (!tok.at_end()) out.push_back(parse_one(tok));
  if (out.empty()) fail(ErrorCode::Validation, "empty grid series");
  return out;
}

void write_ascii_grid(const std::filesystem::path& path, const ScalarGrid& grid) {
  write_file(path, to_ascii_grid(grid));
}

ScalarGrid read_ascii_grid(const std::filesystem::path& path) {
  return parse_ascii_grid(read_file(path));
}

void write_ascii_series(const std::filesystem::path& path, std::span<const ScalarGrid> grids) {
  write_file(path, to_ascii_series(grids));
}

std::vector<ScalarGrid> read_ascii_series(const std::filesystem::path& path) {
  return parse_ascii_series(read_file(path));
}

void write_binary_series(const std::filesystem::path& path, std::span<const ScalarGrid> grids) {
  require(!grids.empty(), "binary series needs at least one grid");
  const auto& g0 = grids.front();
  for (const auto& g : grids)
    if (!g.same_geometry(g0)) fail(ErrorCode::Validation, "series grids differ in geometry");
  nlohmann::json header{{"ncols", g0.ncols},     {"nrows", g0.nrows},
                        {"xllcorner", g0.x_origin}, {"yllcorner", g0.y_origin},
                        {"cellsize", g0.cell_size_m}, {"nodata", g0.nodata},
                        {"n_grids", grids.size()}};
  std::string bytes = header.dump() + "\n";
  for (const auto& g : grids)
    bytes.append(reinterpret_cast<const char*>(g.values.data()), g.values.size() * sizeof(double));
  write_file(path, bytes);
}

std::vector<ScalarGrid> read_binary_series(const std::filesystem::path& path) {
  const std::string bytes = read_file(path);
  const auto nl = bytes.find('\n');
  if (nl == std::string::npos) fail(ErrorCode::Validation, "binary series lacks header");
  const auto header = nlohmann::json::parse(bytes.substr(0, nl));
  ScalarGrid proto;
  proto.ncols = header.at("ncols");
  proto.nrows = header.at("nrows");
  proto.x_origin = header.at("xllcorner");
  proto.y_origin = header.at("yllcorner");
  proto.cell_size_m = header.at("cellsize");
  proto.nodata = header.at("nodata");
  const std::size_t n = header.at("n_grids");
  const std::size_t cells = static_cast<std::size_t>(proto.ncols) * proto.nrows;
  if (bytes.size() - nl - 1 != n * cells * sizeof(double))
    fail(ErrorCode::Integrity, "binary series " + path.string() + " is truncated");
  std::vector<ScalarGrid> out(n, proto);
  const char* p = bytes.data() + nl + 1;
  for (auto& g : out) {
    g.values.resize(cells);
    std::memcpy(g.values.data(), p, cells * sizeof(double));
    p += cells * sizeof(double);
  }
  return out;
}

}  // namespace urgent::model
