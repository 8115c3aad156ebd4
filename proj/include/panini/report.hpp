#pragma once

#include <string>
#include <vector>

#include "panini/common.hpp"
#include "panini/tensor.hpp"

// Deterministic report plumbing: CSV and summary text built through a single
// float formatter, and PNG grid assembly with a tiny built-in pixel font so
// labeled figures are byte-stable across runs.

namespace panini::report {

// Uniform float formatting for every emitted artifact ("%.9g").
std::string format_g9(double v);

class Csv {
 public:
  explicit Csv(std::vector<std::string> columns);

  void row(const std::vector<std::string>& cells);  // size must match header
  std::string text() const;
  void save(const std::string& path) const;

 private:
  std::vector<std::string> columns_;
  std::vector<std::vector<std::string>> rows_;
};

// Line-oriented summary builder. Sections are purely cosmetic; the whole text
// is the artifact.
class Summary {
 public:
  explicit Summary(const std::string& title);

  void section(const std::string& name);
  void line(const std::string& s);
  void kv(const std::string& key, const std::string& value);
  void kv(const std::string& key, double value);
  void blank();

  std::string text() const;
  void save(const std::string& path) const;

 private:
  std::vector<std::string> lines_;
};

// Draws `text` (uppercased) at pixel (x, y) onto a [0,255] canvas {3,H,W}
// using a 3x5 font; glyph coverage is digits plus the letters and symbols the
// experiment runners need. Unknown characters render as blanks.
void draw_text(FeatureMap& canvas, int x, int y, const std::string& text, float value = 255.0f);
int text_width(const std::string& text);  // pixels, incl. trailing gap

// Lays out tiles[r][c] ({3,th,tw} each, [0,255]) on a black canvas with `pad`
// pixel gutters, an optional top strip of column labels and left strip of row
// labels. All tiles must share one shape.
FeatureMap assemble_grid(const std::vector<std::vector<FeatureMap>>& tiles, int pad,
                         const std::vector<std::string>& row_labels,
                         const std::vector<std::string>& col_labels);

void write_text_file(const std::string& path, const std::string& text);

}  // namespace panini::report
