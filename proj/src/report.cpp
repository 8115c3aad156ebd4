#include "panini/report.hpp"

#include <cctype>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>

namespace panini::report {

std::string format_g9(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

Csv::Csv(std::vector<std::string> columns) : columns_(std::move(columns)) {
  require(!columns_.empty(), "csv: empty header");
}

void Csv::row(const std::vector<std::string>& cells) {
  require(cells.size() == columns_.size(),
          "csv: row width " + std::to_string(cells.size()) + " vs header width " +
              std::to_string(columns_.size()));
  rows_.push_back(cells);
}

std::string Csv::text() const {
  std::string out;
  for (size_t i = 0; i < columns_.size(); ++i) {
    if (i) out += ',';
    out += columns_[i];
  }
  out += '\n';
  for (const auto& r : rows_) {
    for (size_t i = 0; i < r.size(); ++i) {
      if (i) out += ',';
      out += r[i];
    }
    out += '\n';
  }
  return out;
}

void Csv::save(const std::string& path) const { write_text_file(path, text()); }

Summary::Summary(const std::string& title) {
  lines_.push_back(title);
  lines_.push_back(std::string(title.size(), '='));
  lines_.emplace_back();
}

void Summary::section(const std::string& name) {
  if (!lines_.empty() && !lines_.back().empty()) lines_.emplace_back();
  lines_.push_back("[" + name + "]");
}

void Summary::line(const std::string& s) { lines_.push_back(s); }
void Summary::kv(const std::string& key, const std::string& value) {
  lines_.push_back(key + " = " + value);
}
void Summary::kv(const std::string& key, double value) { kv(key, format_g9(value)); }
void Summary::blank() { lines_.emplace_back(); }

std::string Summary::text() const {
  std::string out;
  for (const auto& l : lines_) {
    out += l;
    out += '\n';
  }
  return out;
}

void Summary::save(const std::string& path) const { write_text_file(path, text()); }

namespace {

// 3x5 glyphs, one uint16 per glyph: 15 bits row-major, MSB = top-left.
const std::map<char, uint16_t>& font() {
  static const std::map<char, uint16_t> f = {
      {'0', 0b111101101101111}, {'1', 0b010110010010111}, {'2', 0b111001111100111},
      {'3', 0b111001111001111}, {'4', 0b101101111001001}, {'5', 0b111100111001111},
      {'6', 0b111100111101111}, {'7', 0b111001001010010}, {'8', 0b111101111101111},
      {'9', 0b111101111001111}, {'B', 0b110101110101110}, {'E', 0b111100110100111},
      {'F', 0b111100110100100}, {'G', 0b111100101101111}, {'I', 0b111010010010111},
      {'P', 0b111101111100100}, {'R', 0b111101110101101}, {'Y', 0b101101010010010},
      {'L', 0b100100100100111}, {'V', 0b101101101101010}, {'=', 0b000111000111000},
      {'+', 0b000010111010000}, {'-', 0b000000111000000}, {'.', 0b000000000000010},
      {'_', 0b000000000000111}, {' ', 0b000000000000000},
  };
  return f;
}

}  // namespace

void draw_text(FeatureMap& canvas, int x, int y, const std::string& text, float value) {
  require(canvas.rank() == 3 && canvas.dim(0) == 3, "draw_text: want {3,H,W} canvas");
  const int h = canvas.dim(1), w = canvas.dim(2);
  int cx = x;
  for (char raw : text) {
    char ch = static_cast<char>(std::toupper(static_cast<unsigned char>(raw)));
    auto it = font().find(ch);
    uint16_t bits = it == font().end() ? 0 : it->second;
    for (int r = 0; r < 5; ++r)
      for (int c = 0; c < 3; ++c)
        if (bits & (1u << (14 - (r * 3 + c)))) {
          const int py = y + r, px = cx + c;
          if (py >= 0 && py < h && px >= 0 && px < w)
            for (int ch3 = 0; ch3 < 3; ++ch3) canvas.at3(ch3, py, px) = value;
        }
    cx += 4;
  }
}

int text_width(const std::string& text) { return static_cast<int>(text.size()) * 4; }

FeatureMap assemble_grid(const std::vector<std::vector<FeatureMap>>& tiles, int pad,
                         const std::vector<std::string>& row_labels,
                         const std::vector<std::string>& col_labels) {
  require(!tiles.empty() && !tiles[0].empty(), "assemble_grid: no tiles");
  const int n_rows = static_cast<int>(tiles.size());
  const int n_cols = static_cast<int>(tiles[0].size());
  const int th = tiles[0][0].dim(1), tw = tiles[0][0].dim(2);
  for (const auto& row : tiles) {
    require(static_cast<int>(row.size()) == n_cols, "assemble_grid: ragged rows");
    for (const auto& t : row)
      require(t.rank() == 3 && t.dim(0) == 3 && t.dim(1) == th && t.dim(2) == tw,
              "assemble_grid: tile shape mismatch, got " + t.shape_str());
  }
  require(row_labels.empty() || static_cast<int>(row_labels.size()) == n_rows,
          "assemble_grid: row label count mismatch");
  require(col_labels.empty() || static_cast<int>(col_labels.size()) == n_cols,
          "assemble_grid: col label count mismatch");

  int left = 0;
  for (const auto& l : row_labels) left = std::max(left, text_width(l) + 2);
  const int top = col_labels.empty() ? 0 : 7;
  const int H = top + n_rows * th + (n_rows + 1) * pad;
  const int W = left + n_cols * tw + (n_cols + 1) * pad;
  FeatureMap canvas({3, H, W});

  for (int r = 0; r < n_rows; ++r)
    for (int c = 0; c < n_cols; ++c) {
      const int oy = top + pad + r * (th + pad);
      const int ox = left + pad + c * (tw + pad);
      const auto& t = tiles[static_cast<size_t>(r)][static_cast<size_t>(c)];
      for (int ch = 0; ch < 3; ++ch)
        for (int y = 0; y < th; ++y)
          for (int x = 0; x < tw; ++x) canvas.at3(ch, oy + y, ox + x) = t.at3(ch, y, x);
    }
  for (int c = 0; c < n_cols && !col_labels.empty(); ++c)
    draw_text(canvas, left + pad + c * (tw + pad), 1, col_labels[static_cast<size_t>(c)]);
  for (int r = 0; r < n_rows && !row_labels.empty(); ++r)
    draw_text(canvas, 1, top + pad + r * (th + pad) + (th - 5) / 2,
              row_labels[static_cast<size_t>(r)]);
  return canvas;
}

void write_text_file(const std::string& path, const std::string& text) {
  std::filesystem::path p(path);
  if (p.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(p.parent_path(), ec);
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write " + path);
  f.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!f) throw IoError("short write to " + path);
}

}  // namespace panini::report
