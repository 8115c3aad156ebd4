#include "panini/dataset.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "panini/common.hpp"
#include "panini/image_io.hpp"

namespace fs = std::filesystem;

namespace panini {

namespace {

struct Color {
  double r, g, b;
};

// Soft-edged ellipse coverage in [0,1]; rot rotates the principal axes.
double ellipse_alpha(double x, double y, double cx, double cy, double ax, double ay, double rot,
                     double edge = 0.06) {
  const double dx = x - cx, dy = y - cy;
  const double c = std::cos(rot), s = std::sin(rot);
  const double u = (c * dx + s * dy) / ax;
  const double v = (-s * dx + c * dy) / ay;
  const double d = std::sqrt(u * u + v * v);
  if (d <= 1.0 - edge) return 1.0;
  if (d >= 1.0 + edge) return 0.0;
  return (1.0 + edge - d) / (2.0 * edge);
}

void blend(FeatureMap& img, int y, int x, const Color& col, double alpha) {
  if (alpha <= 0.0) return;
  img.at3(0, y, x) = static_cast<float>((1.0 - alpha) * img.at3(0, y, x) + alpha * col.r);
  img.at3(1, y, x) = static_cast<float>((1.0 - alpha) * img.at3(1, y, x) + alpha * col.g);
  img.at3(2, y, x) = static_cast<float>((1.0 - alpha) * img.at3(2, y, x) + alpha * col.b);
}

}  // namespace

FeatureMap generate_face(uint64_t seed, int res, FaceParams* params_out) {
  require(res >= 16, "generate_face: resolution too small");
  Rng rng(seed);
  const double R = res;

  // Sampling order is part of the determinism contract; do not reorder.
  FaceParams p;
  p.seed = seed;
  p.res = res;
  const Color bg_top{rng.uniform(20, 120), rng.uniform(20, 120), rng.uniform(60, 180)};
  const Color bg_bot{rng.uniform(20, 140), rng.uniform(40, 160), rng.uniform(40, 160)};
  const Color hair{rng.uniform(10, 90), rng.uniform(10, 70), rng.uniform(5, 60)};
  p.face_cx = R * rng.uniform(0.42, 0.58);
  p.face_cy = R * rng.uniform(0.44, 0.58);
  p.face_ax = R * rng.uniform(0.24, 0.34);
  p.face_ay = R * rng.uniform(0.30, 0.42);
  const double face_rot = rng.uniform(-0.12, 0.12);
  p.skin_r = rng.uniform(150, 245);
  p.skin_g = p.skin_r * rng.uniform(0.72, 0.92);
  p.skin_b = p.skin_g * rng.uniform(0.68, 0.95);
  p.eye_dx = p.face_ax * rng.uniform(0.38, 0.52);
  p.eye_y = p.face_cy - p.face_ay * rng.uniform(0.12, 0.30);
  p.eye_r = R * rng.uniform(0.035, 0.06);
  const Color iris{rng.uniform(30, 140), rng.uniform(50, 140), rng.uniform(60, 190)};
  const double brow_dy = p.eye_r * rng.uniform(1.6, 2.6);
  const double brow_tilt = rng.uniform(-0.25, 0.25);
  p.mouth_y = p.face_cy + p.face_ay * rng.uniform(0.40, 0.60);
  p.mouth_w = p.face_ax * rng.uniform(0.45, 0.75);
  p.mouth_curve = rng.uniform(-0.5, 0.9);  // >0 smiles
  const Color lip{rng.uniform(120, 210), rng.uniform(30, 90), rng.uniform(40, 100)};
  p.tex_freq_x = rng.uniform(0.15, 0.9);
  p.tex_freq_y = rng.uniform(0.15, 0.9);
  p.tex_amp = rng.uniform(4.0, 14.0);
  p.tex_phase = rng.uniform(0.0, 6.28318);
  const double cheek_amp = rng.uniform(6.0, 18.0);
  const double nose_len = p.face_ay * rng.uniform(0.18, 0.30);
  const int n_freckles = rng.uniform_int(0, 6);
  std::vector<std::array<double, 3>> freckles;
  for (int i = 0; i < n_freckles; ++i) {
    const double fx = p.face_cx + p.face_ax * rng.uniform(-0.6, 0.6);
    const double fy = p.face_cy + p.face_ay * rng.uniform(-0.1, 0.6);
    freckles.push_back({fx, fy, rng.uniform(0.6, 1.6)});
  }

  FeatureMap img({3, res, res});
  for (int y = 0; y < res; ++y) {
    const double ty = y / (R - 1.0);
    for (int x = 0; x < res; ++x) {
      const double tx = x / (R - 1.0);
      const double t = 0.7 * ty + 0.3 * tx;
      img.at3(0, y, x) = static_cast<float>(bg_top.r + t * (bg_bot.r - bg_top.r));
      img.at3(1, y, x) = static_cast<float>(bg_top.g + t * (bg_bot.g - bg_top.g));
      img.at3(2, y, x) = static_cast<float>(bg_top.b + t * (bg_bot.b - bg_top.b));
    }
  }

  for (int y = 0; y < res; ++y) {
    for (int x = 0; x < res; ++x) {
      // hair halo behind the head
      blend(img, y, x, hair,
            ellipse_alpha(x, y, p.face_cx, p.face_cy - 0.15 * p.face_ay, p.face_ax * 1.25,
                          p.face_ay * 1.2, face_rot));
      // skin with shading plus the sinusoidal texture field the restoration
      // task has to recover
      const double a = ellipse_alpha(x, y, p.face_cx, p.face_cy, p.face_ax, p.face_ay, face_rot);
      if (a > 0.0) {
        const double shade = 1.0 - 0.25 * ((y - (p.face_cy - p.face_ay)) / (2.0 * p.face_ay));
        const double tex =
            p.tex_amp * std::sin(p.tex_freq_x * x + p.tex_phase) * std::sin(p.tex_freq_y * y);
        const double cheek =
            cheek_amp * std::exp(-0.02 * ((x - p.face_cx) * (x - p.face_cx))) *
            std::exp(-0.05 * ((y - (p.face_cy + 0.25 * p.face_ay)) *
                              (y - (p.face_cy + 0.25 * p.face_ay))));
        Color skin{p.skin_r * shade + tex + cheek, p.skin_g * shade + tex,
                   p.skin_b * shade + tex};
        blend(img, y, x, skin, a);
      }
    }
  }

  for (int side = -1; side <= 1; side += 2) {
    const double ex = p.face_cx + side * p.eye_dx;
    for (int y = 0; y < res; ++y) {
      for (int x = 0; x < res; ++x) {
        blend(img, y, x, Color{235, 235, 235},
              ellipse_alpha(x, y, ex, p.eye_y, p.eye_r * 1.5, p.eye_r, 0.0));
        blend(img, y, x, iris, ellipse_alpha(x, y, ex, p.eye_y, p.eye_r * 0.7, p.eye_r * 0.7, 0.0));
        blend(img, y, x, Color{15, 15, 20},
              ellipse_alpha(x, y, ex, p.eye_y, p.eye_r * 0.3, p.eye_r * 0.3, 0.0));
        blend(img, y, x, hair,
              ellipse_alpha(x, y, ex, p.eye_y - brow_dy, p.eye_r * 1.8, p.eye_r * 0.45,
                            side * brow_tilt));
      }
    }
  }

  for (int y = 0; y < res; ++y) {
    for (int x = 0; x < res; ++x) {
      // nose: narrow vertical ellipse, slightly darker than skin
      blend(img, y, x, Color{p.skin_r * 0.8, p.skin_g * 0.78, p.skin_b * 0.75},
            ellipse_alpha(x, y, p.face_cx, p.face_cy + 0.1 * p.face_ay, 0.05 * R, nose_len, 0.0) *
                0.8);
      // mouth: two offset ellipses make a curved lip shape
      const double curve_off = p.mouth_curve * 0.03 * R;
      const double am = ellipse_alpha(x, y, p.face_cx, p.mouth_y, p.mouth_w, 0.045 * R, 0.0);
      const double acut =
          ellipse_alpha(x, y, p.face_cx, p.mouth_y - curve_off - 0.05 * R, p.mouth_w * 1.1,
                        0.05 * R, 0.0);
      blend(img, y, x, lip, std::max(0.0, am - 0.6 * acut));
    }
  }

  for (const auto& f : freckles) {
    for (int y = 0; y < res; ++y)
      for (int x = 0; x < res; ++x)
        blend(img, y, x, Color{p.skin_r * 0.55, p.skin_g * 0.5, p.skin_b * 0.5},
              ellipse_alpha(x, y, f[0], f[1], f[2], f[2], 0.0) * 0.7);
  }

  for (int64_t i = 0; i < img.numel(); ++i)
    img[i] = std::min(255.0f, std::max(0.0f, img[i]));
  if (params_out) *params_out = p;
  return img;
}

void synth_dataset(const std::string& dir, int n, uint64_t seed, int res) {
  require(n >= 1, "synth_dataset: n must be >= 1");
  fs::create_directories(dir);
  std::ostringstream manifest;
  manifest << "index,seed,res,file,face_cx,face_cy,face_ax,face_ay,skin_r,skin_g,skin_b,"
              "tex_freq_x,tex_freq_y,tex_amp\n";
  for (int i = 0; i < n; ++i) {
    const uint64_t img_seed = derive_seed(seed, static_cast<uint64_t>(i));
    FaceParams p;
    const FeatureMap img = generate_face(img_seed, res, &p);
    char name[32];
    std::snprintf(name, sizeof(name), "face_%05d.png", i);
    write_png((fs::path(dir) / name).string(), img);
    char row[512];
    std::snprintf(row, sizeof(row),
                  "%d,%llu,%d,%s,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f\n", i,
                  static_cast<unsigned long long>(img_seed), res, name, p.face_cx, p.face_cy,
                  p.face_ax, p.face_ay, p.skin_r, p.skin_g, p.skin_b, p.tex_freq_x, p.tex_freq_y,
                  p.tex_amp);
    manifest << row;
  }
  std::ofstream mf(fs::path(dir) / "manifest.csv", std::ios::binary | std::ios::trunc);
  if (!mf) throw IoError("synth_dataset: cannot write manifest in " + dir);
  mf << manifest.str();
}

std::vector<ManifestEntry> read_manifest(const std::string& dir) {
  const fs::path path = fs::path(dir) / "manifest.csv";
  std::ifstream in(path);
  if (!in) throw IoError("read_manifest: cannot open " + path.string());
  std::vector<ManifestEntry> out;
  std::string line;
  std::getline(in, line);  // header
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string cell;
    ManifestEntry e;
    std::getline(ss, cell, ',');
    e.index = std::stoi(cell);
    std::getline(ss, cell, ',');
    e.seed = std::stoull(cell);
    std::getline(ss, cell, ',');
    e.res = std::stoi(cell);
    std::getline(ss, e.file, ',');
    out.push_back(e);
  }
  return out;
}

std::vector<std::string> list_images(const std::string& dir) {
  if (!fs::is_directory(dir)) throw IoError("list_images: not a directory: " + dir);
  std::vector<std::string> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    std::string ext = e.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), ::tolower);
    if (ext == ".png" || ext == ".jpg" || ext == ".jpeg") out.push_back(e.path().string());
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace panini
